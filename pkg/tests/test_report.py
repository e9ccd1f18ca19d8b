import calendar
import io
from decimal import Decimal

import pytest
from hypothesis import given, strategies as st

from frontscan.report import (
    distribution_rows,
    fmt_decimal,
    report_yearly_and_hourly,
    score_against_manifest,
    summarize,
    write_hourly_csv,
    write_yearly_csv,
)
from frontscan.synthetic import GroundTruthManifest, PlantedAttack

D = Decimal


def test_summary_of_one_value():
    s = summarize([5])
    assert s.values() == (5, 0, 5, 5, 5, 5, 5)


def test_summary_examples():
    s = summarize([1, 2, 3, 4])
    assert (s.mean, s.min, s.q25, s.q50, s.q75, s.max) == (D("2.5"), 1, D("1.75"), D("2.5"), D("3.25"), 4)
    assert fmt_decimal(s.std) == "1.12"
    s = summarize([0, 0, 0, 100])
    assert (s.mean, s.q25, s.q50, s.q75) == (25, 0, 0, 25)
    assert fmt_decimal(s.std) == "43.30"


def test_summary_rejects_empty_input():
    with pytest.raises(ValueError):
        summarize([])


def test_formatting_rounds_half_up_with_separators():
    assert fmt_decimal(D("1234567.005")) == "1,234,567.01"
    assert fmt_decimal(D("-0.004")) == "-0.00"


values = st.lists(st.integers(-10**21, 10**21), min_size=1, max_size=60)


@given(values, st.randoms(use_true_random=False))
def test_summary_ignores_order(xs, rng):
    ys = list(xs)
    rng.shuffle(ys)
    assert summarize(xs) == summarize(ys)


@given(values)
def test_summary_is_ordered(xs):
    s = summarize(xs)
    assert s.min <= s.q25 <= s.q50 <= s.q75 <= s.max
    assert s.min <= s.mean <= s.max
    assert s.std >= 0


def _rec(ts, kind="insertion", aid=None, profit=0):
    return {
        "kind": kind, "id": aid or str(ts), "block_number": 1, "timestamp": ts,
        "gain_wei": str(profit), "cost_wei": "0", "profit_wei": str(profit), "cost_usd": "0.00", "profit_usd": "0.00",
    }


def test_hourly_matrix_places_wednesday_one_pm():
    ts = calendar.timegm((2020, 1, 1, 13, 30, 0))  # a Wednesday
    matrix, _ = report_yearly_and_hourly([_rec(ts)])
    assert matrix[2][13] == 1
    assert sum(map(sum, matrix)) == 1


def test_yearly_percentages():
    ts = [calendar.timegm((2019, 6, 1, 0, 0, 0))] * 3 + [calendar.timegm((2020, 6, 1, 0, 0, 0))]
    _, yearly = report_yearly_and_hourly([_rec(t, aid=str(i)) for i, t in enumerate(ts)])
    assert yearly == [(2019, 3, D("75.00")), (2020, 1, D("25.00"))]
    buf = io.StringIO()
    write_yearly_csv(buf, yearly)
    assert buf.getvalue() == "year,count,percent\n2019,3,75.00\n2020,1,25.00\n"


def test_empty_input_gives_a_zero_matrix():
    matrix, yearly = report_yearly_and_hourly([])
    assert matrix == [[0] * 24 for _ in range(7)] and yearly == []
    buf = io.StringIO()
    write_hourly_csv(buf, matrix)
    lines = buf.getvalue().splitlines()
    assert len(lines) == 8 and lines[1].startswith("Mon,0,")


def test_distribution_rows_cover_each_kind():
    recs = [_rec(1, profit=10**18), _rec(2, profit=3 * 10**18)]
    for r in recs:
        r.update(gas_price_delta1_wei=str(2 * 10**9), gas_price_delta2_wei="0")
    rows = distribution_rows(recs)
    assert [r[1] for r in rows] == ["gas_price_delta1_gwei", "gas_price_delta2_gwei", "cost_eth", "profit_eth", "cost_usd", "profit_usd"]
    profit = next(r for r in rows if r[0] == "insertion" and r[1] == "profit_eth")
    assert profit[2:5] == ["2", "2.00", "1.00"]


def _manifest(n=10):
    return GroundTruthManifest(
        planted=[PlantedAttack("insertion", f"k{i}", [], expected_profit=100) for i in range(n)]
        + [PlantedAttack("insertion", "neg", [], expected_detected=False)]
    )


def test_perfect_score():
    rep = score_against_manifest([_rec(i, aid=f"k{i}", profit=100) for i in range(10)], _manifest())
    assert (rep.precision, rep.recall, rep.profit_error) == (1.0, 1.0, 0)


def test_one_miss_and_one_false_positive():
    found = [_rec(i, aid=f"k{i}", profit=100) for i in range(9)] + [_rec(99, aid="neg")]
    rep = score_against_manifest(found, _manifest())
    k = rep.kinds["insertion"]
    assert rep.recall == pytest.approx(0.9)
    assert rep.precision == pytest.approx(0.9)
    assert k.missed == ["k9"] and k.negatives_detected == ["neg"]


def test_profit_error_beyond_tolerance():
    found = [_rec(i, aid=f"k{i}", profit=100 + (10**10 if i == 0 else 5)) for i in range(10)]
    rep = score_against_manifest(found, _manifest())
    assert rep.kinds["insertion"].max_profit_error_wei == 10**10
    assert rep.profit_error == D(10**10) / 100


def test_scope_restricts_kinds():
    rep = score_against_manifest([_rec(1, kind="displacement", aid="x")], _manifest(), kinds=["displacement"])
    assert list(rep.kinds) == ["displacement"]
    assert rep.unmatched_kinds == ["displacement"]
    assert rep.kinds["displacement"].precision == 0.0
