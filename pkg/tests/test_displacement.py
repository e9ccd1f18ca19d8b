from decimal import Decimal

import pytest

from frontscan.chain import InternalTransfer
from frontscan.displacement import (
    DisplacementDetector,
    check_displacement_heuristics,
    compute_displacement_result,
    validate_by_simulation,
    window_starts,
)
from frontscan.exceptions import OracleError
from frontscan.ingest import load_snapshot
from frontscan.oracle import BlockContext, ReplayOracle, encode_claim, prize_code
from frontscan.synthetic import ChainBuilder, plant_displacement_scenario

from conftest import addr, make_block, make_tx, snapshot_of


def test_size_ratio_examples():
    v = make_tx(sender=1, receiver=2, gas_price=10, data=b"v" * 40)
    assert not check_displacement_heuristics(make_tx(sender=3, receiver=4, gas_price=11, data=b"a" * 200), v)
    v2 = make_tx(sender=1, receiver=2, gas_price=10, data=b"v" * 100)
    assert check_displacement_heuristics(make_tx(sender=3, receiver=4, gas_price=11, data=b"a" * 200), v2)


@pytest.mark.parametrize(
    "attacker,reason",
    [
        (dict(sender=1, receiver=4, gas_price=11), "same sender"),
        (dict(sender=3, receiver=2, gas_price=11), "same receiver"),
        (dict(sender=3, receiver=4, gas_price=10), "equal gas price"),
        (dict(sender=3, receiver=4, gas_price=11, data=b""), "empty input"),
    ],
)
def test_heuristic_rejections(attacker, reason):
    v = make_tx(sender=1, receiver=2, gas_price=10, data=b"v" * 64)
    attacker.setdefault("data", b"a" * 64)
    assert not check_displacement_heuristics(make_tx(**attacker), v), reason


def _prize_block(miner=99):
    secret = b"s" * 32
    prize = addr(50)
    claim = encode_claim(prize, secret)
    t_a = make_tx(1, 0, sender=3, receiver=4, gas_price=20, data=b"h" * 36 + claim)
    t_v = make_tx(1, 1, sender=1, receiver=prize, gas_price=10, data=claim)
    snap = snapshot_of(
        [make_block(1, [t_a, t_v], miner=miner)],
        code={prize: prize_code(secret), addr(4): b"\x60\x80"},
        internal_transfers={t_a.hash: [InternalTransfer(t_a.hash, prize, addr(4), 2 * 10**18),
                                       InternalTransfer(t_a.hash, addr(4), addr(3), 2 * 10**18)]},
    )
    return snap, t_a, t_v


def test_simulation_detects_order_dependence():
    snap, t_a, t_v = _prize_block()
    ctx = BlockContext(1, addr(99))
    assert validate_by_simulation(t_a, t_v, ReplayOracle(snap), ctx)


def test_simulation_ignores_independent_transactions():
    snap, t_a, _ = _prize_block()
    other = make_tx(1, 1, sender=7, receiver=4, data=b"z" * 68)
    ctx = BlockContext(1, addr(99))
    assert not validate_by_simulation(t_a, other, ReplayOracle(snap), ctx)


def test_simulation_refuses_zero_miner():
    snap, t_a, t_v = _prize_block()
    with pytest.raises(OracleError, match="zero miner"):
        validate_by_simulation(t_a, t_v, ReplayOracle(snap), BlockContext(1, addr(0)))


def test_result_two_eth_gain_minus_fee():
    snap, mined, t_v = _prize_block()
    # same hash as the mined tx, but 100k gas at 100 gwei
    t_a = make_tx(1, 0, sender=3, receiver=4, gas_used=100_000, gas_limit=100_000, gas_price=100 * 10**9, hash=mined.hash)
    res = compute_displacement_result(t_a, t_v, snap)
    assert res.gain == 2 * 10**18
    assert res.cost == 10**16
    assert res.profit == 199 * 10**16
    assert res.block_delta == 0
    # block timestamp falls in September 2020, priced at 400
    assert res.profit_usd == Decimal("796.00")


def test_window_starts_cover_the_range():
    assert window_starts(1, 300, 100, 20) == [1, 21, 41, 61, 81, 101, 121, 141, 161, 181, 201]
    assert window_starts(5, 50, 100, 20) == [5]


def test_detector_finds_planted_pair_and_skips_controls():
    chain = ChainBuilder(3, 60)
    b = chain.start_block
    planted = plant_displacement_scenario(chain, b + 10, 10**18)
    late = plant_displacement_scenario(chain, b + 20, 10**18, victim_block=b + 22)
    for i, mode in enumerate(["victim_only", "low_ratio", "low_gas", "same_sender", "benign_copy"]):
        plant_displacement_scenario(chain, b + 30 + i, 10**18, mode=mode)
    src = chain.build()
    snap = load_snapshot(src, chain.start_block, chain.end_block)
    det = DisplacementDetector(window=20, stride=5).fit(snap)
    found = {a.attack_id for a in det.attacks_}
    assert found == {planted[0].key, late[0].key}
    delayed = next(a for a in det.attacks_ if a.attack_id == late[0].key)
    assert delayed.block_delta == 2
    assert det.diagnostics_["validated"] == 2


def test_detector_rejects_bad_parameters():
    snap, _, _ = _prize_block()
    with pytest.raises(ValueError):
        DisplacementDetector(window=10, stride=20).fit(snap)
    with pytest.raises(ValueError):
        DisplacementDetector(threshold=1.5).fit(snap)


def test_zero_miner_candidates_are_skipped_not_fatal():
    snap, _, _ = _prize_block(miner=0)
    det = DisplacementDetector().fit(snap)
    assert det.attacks_ == []
    assert det.diagnostics_["oracle_failures"] == 1
