import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from frontscan.chain import TransferEvent
from frontscan.ingest import load_snapshot
from frontscan.insertion import (
    GasTokenKind,
    GasTokenUse,
    InsertionDetector,
    amounts_match,
    check_insertion_heuristics,
    detect_competition,
    scan_block_events,
)
from frontscan.synthetic import ChainBuilder, CpmmPool, Market, plant_competition_scenario, plant_insertion_scenario

from conftest import addr, tx_hash

ETH = 10**18
GWEI = 10**9


def test_amount_tolerance_boundary():
    assert amounts_match(10_000, 9_900)
    assert not amounts_match(10_000, 9_899)
    assert not amounts_match(0, 0)


def _ev(s, r, a, i, g, c=7, log_index=0):
    return TransferEvent(addr(s), addr(r), a, addr(c), tx_hash(1000 + i), i, g, 1, log_index)


def test_heuristics_example():
    e1, ev, e2 = _ev(1, 2, 100, 0, 30), _ev(1, 3, 50, 1, 20), _ev(2, 1, 100, 2, 20)
    assert check_insertion_heuristics(e1, ev, e2)
    assert not check_insertion_heuristics(e1, ev, _ev(2, 1, 100, 2, 21))
    assert not check_insertion_heuristics(e1, ev, _ev(2, 1, 100, 2, 20, c=8))


def _random_block(rng: random.Random, n_events: int):
    """Events over a handful of parties so triples are common."""
    n_tx = rng.randint(3, max(3, n_events))
    prices = sorted((rng.randint(1, 6) for _ in range(n_tx)), reverse=rng.random() < 0.7)
    events, per_tx = [], {}
    for _ in range(n_events):
        i = rng.randrange(n_tx)
        per_tx[i] = per_tx.get(i, -1) + 1
        amount = rng.choice([100, 100, 99, 101, 50, 200])
        events.append(_ev(rng.randint(1, 4), rng.randint(1, 4), amount, i, prices[i], c=rng.choice([7, 8]), log_index=per_tx[i]))
    return events


def _brute_force(events, tolerance=0.01):
    return {
        (a, b, c)
        for a, b, c in itertools.permutations(events, 3)
        if check_insertion_heuristics(a, b, c, tolerance)
    }


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32), st.integers(0, 25))
def test_block_scan_equals_brute_force(seed, n):
    events = _random_block(random.Random(seed), n)
    assert set(scan_block_events(events)) == _brute_force(events)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32), st.randoms(use_true_random=False))
def test_block_scan_ignores_input_order(seed, shuffler):
    events = _random_block(random.Random(seed), 20)
    expected = scan_block_events(events)
    shuffled = list(events)
    shuffler.shuffle(shuffled)
    assert scan_block_events(shuffled) == expected


def test_earliest_pairing_uses_each_backrun_once():
    e1 = _ev(1, 2, 100, 0, 30)
    v1, v2 = _ev(1, 3, 10, 1, 20), _ev(1, 4, 10, 2, 20)
    s1, s2 = _ev(2, 1, 100, 3, 10), _ev(2, 1, 100, 4, 10)
    events = [e1, v1, v2, s1, s2]
    assert len(scan_block_events(events, pairing="all")) == 4
    earliest = scan_block_events(events, pairing="earliest")
    assert [(t[1].i, t[2].i) for t in earliest] == [(1, 3), (2, 4)]


def _sandwich_chain(**kw):
    chain = ChainBuilder(21, 5)
    market = Market(chain.contract(), chain.contract(), CpmmPool(1_000 * ETH, 1_000 * ETH))
    block = chain.start_block + 2
    planted = plant_insertion_scenario(
        chain, block, market, 50 * ETH, 10 * ETH, (11 * GWEI, 10 * GWEI, 9 * GWEI),
        gas_used=(100_000, 100_000, 100_000), **kw,
    )
    snap = load_snapshot(chain.build(), chain.start_block, chain.end_block)
    return planted, snap


def test_sandwich_profit_matches_pool_arithmetic():
    planted, snap = _sandwich_chain()
    (attack,) = InsertionDetector().fit_predict(snap)
    # buy 10 ETH into a 1000/1000 pool, victim buys with 50, sell back; fees 0.0011 + 0.0009 ETH
    assert attack.gain == 11_009_210_268_469_527_728
    assert attack.profit == 1_007_210_268_469_527_728
    assert attack.profit == planted.expected_profit
    assert attack.e_a1.a == 9_900_990_099_009_900_990
    assert attack.e_v.a == 46_702_783_485_895_759_387


def test_gas_token_tagging():
    _, snap = _sandwich_chain(gas_token=("Chi", None))
    (a,) = InsertionDetector().fit_predict(snap)
    assert (a.gas_token_usage.usage, a.gas_token_usage.kind) == (GasTokenUse.FIRST_ONLY, GasTokenKind.CHI)

    _, snap = _sandwich_chain(gas_token=("GST2", "GST2"))
    (a,) = InsertionDetector().fit_predict(snap)
    assert (a.gas_token_usage.usage, a.gas_token_usage.kind) == (GasTokenUse.BOTH, GasTokenKind.GST2)

    _, snap = _sandwich_chain(gas_token=(None, "Custom"))
    (a,) = InsertionDetector().fit_predict(snap)
    assert (a.gas_token_usage.usage, a.gas_token_usage.kind) == (GasTokenUse.SECOND_ONLY, GasTokenKind.CUSTOM)

    _, snap = _sandwich_chain(gas_token=(None, "Custom"))
    (a,) = InsertionDetector(gas_tokens={"selfdestruct_min": 0}).fit_predict(snap)
    assert a.gas_token_usage.usage is GasTokenUse.NONE


def test_direct_attack_has_no_bot():
    planted, snap = _sandwich_chain(direct=True)
    (a,) = InsertionDetector().fit_predict(snap)
    assert a.is_direct and a.bot_contract is None
    assert a.profit == planted.expected_profit


def _competition(same_owner: bool):
    chain = ChainBuilder(5, 4)
    market = chain.new_market()
    first = chain.new_entity()
    second = first if same_owner else chain.new_entity()
    planted = plant_competition_scenario(chain, chain.start_block + 1, market, first, second, 5 * ETH)
    snap = load_snapshot(chain.build(), chain.start_block, chain.end_block)
    return planted, first, second, InsertionDetector().fit_predict(snap)


def test_competition_between_distinct_clusters():
    planted, first, second, attacks = _competition(False)
    assert {a.attack_id for a in attacks} == {p.key for p in planted}
    clusters = {first.bots[0]: 0, first.accounts[0]: 0, second.bots[0]: 1, second.accounts[0]: 1}
    groups = detect_competition(attacks, clusters)
    assert len(groups) == 1
    assert sorted(groups[0].clusters) == [0, 1]
    assert not groups[0].self_interference


def test_competition_within_one_cluster_is_flagged():
    _, first, _, attacks = _competition(True)
    clusters = {first.bots[0]: 0, first.accounts[0]: 0}
    (group,) = detect_competition(attacks, clusters)
    assert group.self_interference


def test_parameter_validation():
    _, snap = _sandwich_chain()
    with pytest.raises(ValueError):
        InsertionDetector(pairing="latest").fit(snap)
    with pytest.raises(ValueError):
        InsertionDetector(amount_tolerance=-0.1).fit(snap)
