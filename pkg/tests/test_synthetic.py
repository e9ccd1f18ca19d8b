import io
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from frontscan.ingest import FixtureSource, load_fixture
from frontscan.synthetic import (
    ChainBuilder,
    CpmmPool,
    GroundTruthManifest,
    cpmm_swap_x_for_y,
    cpmm_swap_y_for_x,
    generate_fixture,
    parse_plant,
    plant_insertion_scenario,
    sandwich_outcome,
    write_fixture,
)

ETH = 10**18
reserves = st.integers(10**6, 10**30)


def test_swap_example():
    dy, pool = cpmm_swap_x_for_y(CpmmPool(1_000 * ETH, 1_000 * ETH), 10 * ETH)
    assert dy == 9_900_990_099_009_900_990
    assert pool.reserve_x == 1_010 * ETH


def test_swap_refuses_empty_input():
    with pytest.raises(ValueError):
        cpmm_swap_x_for_y(CpmmPool(10, 10), 0)
    with pytest.raises(ValueError):
        cpmm_swap_y_for_x(CpmmPool(10, 10), -1)


def test_sandwich_example():
    out = sandwich_outcome(CpmmPool(1_000 * ETH, 1_000 * ETH), 10 * ETH, 50 * ETH)
    assert out.victim_tokens == 46_702_783_485_895_759_387
    assert out.profit_before_fees(10 * ETH) == 1_009_210_268_469_527_728


@given(reserves, reserves, st.integers(1, 10**28))
def test_swap_output_is_floored_closed_form(x, y, dx):
    dy, pool = cpmm_swap_x_for_y(CpmmPool(x, y), dx)
    exact = Fraction(y * dx, x + dx)
    assert 0 <= exact - dy < 1
    # flooring keeps the product from shrinking, by less than one unit of the new reserve
    assert 0 <= pool.k - x * y < pool.reserve_x


@given(reserves, reserves, st.integers(1, 10**26), st.integers(1, 10**26))
def test_larger_trades_get_worse_prices(x, y, a, b):
    small, large = sorted((a, b))
    dy_s, _ = cpmm_swap_x_for_y(CpmmPool(x, y), small)
    dy_l, _ = cpmm_swap_x_for_y(CpmmPool(x, y), large)
    assert dy_s <= dy_l
    assert Fraction(dy_l, large) <= Fraction(dy_s, small) + Fraction(1, small)


@settings(max_examples=200)
@given(st.integers(10**20, 10**24), st.integers(10**20, 10**24), st.integers(10**16, 10**21), st.integers(10**16, 10**21))
def test_sandwich_profits_when_victim_trades(x, y, adx, vdx):
    out = sandwich_outcome(CpmmPool(x, y), adx, vdx)
    assert out.profit_before_fees(adx) > 0
    flat = sandwich_outcome(CpmmPool(x, y), adx, 0)
    assert flat.profit_before_fees(adx) <= 0


def test_planter_refuses_bad_gas_ordering():
    chain = ChainBuilder(1, 3)
    market = chain.new_market()
    with pytest.raises(ValueError, match="gas prices"):
        plant_insertion_scenario(chain, chain.start_block, market, ETH, ETH, (10, 10, 9))
    with pytest.raises(ValueError, match="attacker_dx"):
        plant_insertion_scenario(chain, chain.start_block, market, ETH, 0, (11, 10, 9))


def test_block_gas_is_never_exceeded():
    chain = ChainBuilder(1, 1, block_gas_limit=100_000)
    chain.add_tx(chain.start_block, chain.address(), chain.address(), gas_limit=90_000, gas_used=90_000)
    with pytest.raises(ValueError):
        chain.add_tx(chain.start_block, chain.address(), chain.address(), gas_limit=20_000, gas_used=20_000)


def test_plant_spec_parsing():
    assert parse_plant("insertion=5, displacement=0") == {"insertion": 5, "displacement": 0}
    for bad in ("insertion", "sandwich=2", "insertion=-1"):
        with pytest.raises(ValueError):
            parse_plant(bad)


def _bytes(src: FixtureSource, manifest: GroundTruthManifest) -> tuple[str, str]:
    buf = io.StringIO()
    src.write(buf)
    return buf.getvalue(), manifest.dumps()


def test_same_seed_same_bytes():
    plan = {"insertion": 4, "displacement": 2, "suppression": 1, "competition": 1}
    assert _bytes(*generate_fixture(3, 300, plan)) == _bytes(*generate_fixture(3, 300, plan))
    assert _bytes(*generate_fixture(3, 300, plan)) != _bytes(*generate_fixture(4, 300, plan))


def test_planted_transactions_exist(small_corpus):
    _, manifest, snap = small_corpus
    assert manifest.positives() and manifest.negatives()
    for p in manifest.planted:
        for h in p.tx_hashes:
            assert snap.has_tx(h), (p.label, h)


def test_counts_follow_the_plan(small_corpus):
    _, manifest, _ = small_corpus
    assert len(manifest.positives("displacement")) == 5
    assert len(manifest.positives("suppression")) == 3
    # eight sandwiches plus three from the competition scenario
    assert len(manifest.positives("insertion")) == 11


def test_manifest_and_fixture_round_trip(tmp_path, small_corpus):
    src, manifest, snap = small_corpus
    fixture_path, manifest_path = write_fixture(tmp_path, src, manifest)
    again = GroundTruthManifest.load(manifest_path)
    assert again.dumps() == manifest.dumps()
    reloaded = load_fixture(fixture_path)
    assert [t.hash for t in reloaded.transactions()] == [t.hash for t in snap.transactions()]


def test_too_small_range_is_refused():
    with pytest.raises(ValueError):
        generate_fixture(1, 20, {"suppression": 10})
