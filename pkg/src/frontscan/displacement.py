"""Displacement detection: a bot copies a pending input and outbids it.

Blocks are scanned in overlapping windows, each with its own Bloom filter of
4-byte input grams. A transaction whose grams are mostly already in the
filter triggers an exact search over earlier transactions of the window;
matching pairs go through three heuristics and finally an execution oracle.
"""

from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from decimal import Decimal
from typing import Optional

from sklearn.base import BaseEstimator

from .bloom import BloomFilter, containment, count_words, gram_set, hash_pairs
from .chain import ZERO_ADDRESS, Address, ChainSnapshot, Transaction, fee, wei_to_gwei
from .exceptions import OracleError
from .oracle import BlockContext, ExecutionOracle, ReplayOracle
from .records import common_fields
from .validation import check_fraction, check_positive_int, check_snapshot

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DisplacementAttack:
    attacker_tx: Transaction
    victim_tx: Transaction
    attacker_account: Address
    bot_contract: Address
    gain: int
    cost: int
    cost_usd: Decimal
    profit_usd: Decimal
    timestamp: int

    kind = "displacement"

    @property
    def profit(self) -> int:
        return self.gain - self.cost

    @property
    def gas_price_delta(self) -> int:
        return self.attacker_tx.gas_price - self.victim_tx.gas_price

    @property
    def block_delta(self) -> int:
        return self.victim_tx.block_number - self.attacker_tx.block_number

    @property
    def block_number(self) -> int:
        return self.attacker_tx.block_number

    @property
    def attack_id(self) -> str:
        return f"{self.attacker_tx.hash}:{self.victim_tx.hash}"

    @property
    def attacker_accounts(self) -> set[Address]:
        return {self.attacker_account}

    @property
    def bot_contracts(self) -> set[Address]:
        return {self.bot_contract}

    @property
    def account_bot_pairs(self) -> set[tuple[Address, Address]]:
        return {(self.attacker_account, self.bot_contract)}

    def to_dict(self) -> dict:
        rec = common_fields(self)
        rec.update(
            attacker_tx=self.attacker_tx.hash,
            victim_tx=self.victim_tx.hash,
            tx_hashes=[self.attacker_tx.hash, self.victim_tx.hash],
            gas_price_delta_wei=str(self.gas_price_delta),
            gas_price_delta_gwei=str(wei_to_gwei(self.gas_price_delta)),
            block_delta=self.block_delta,
        )
        return rec


def check_displacement_heuristics(t_a: Transaction, t_v: Transaction, size_ratio: float = 0.25) -> bool:
    """Distinct senders and receivers, strictly higher attacker gas price, comparable input sizes."""
    if t_a.sender == t_v.sender or t_a.receiver == t_v.receiver:
        return False
    if t_a.gas_price <= t_v.gas_price:
        return False
    words_a = count_words(t_a.input)
    if words_a == 0:
        return False
    return count_words(t_v.input) / words_a >= size_ratio


def validate_by_simulation(
    t_a: Transaction,
    t_v: Transaction,
    oracle: ExecutionOracle,
    context: Optional[BlockContext] = None,
) -> bool:
    """True when swapping the two transactions changes either one's instruction count."""
    if t_a.hash == t_v.hash:
        raise ValueError("cannot validate a transaction against itself")
    if context is not None and context.miner == ZERO_ADDRESS:
        raise OracleError(f"block {context.block_number} has a zero miner address; simulation refused")
    first = oracle.run([t_a, t_v], context)
    second = oracle.run([t_v, t_a], context)
    if len(first) != 2 or len(second) != 2:
        raise OracleError("oracle returned a malformed count vector")
    return first[0] != second[1] or first[1] != second[0]


def compute_displacement_result(t_a: Transaction, t_v: Transaction, snapshot: ChainSnapshot) -> DisplacementAttack:
    gain = sum(t.value for t in snapshot.internal_transfers(t_a.hash) if t.to == t_a.sender)
    cost = fee(t_a)
    ts = snapshot.timestamp_of(t_a)
    return DisplacementAttack(
        attacker_tx=t_a,
        victim_tx=t_v,
        attacker_account=t_a.sender,
        bot_contract=t_a.receiver,
        gain=gain,
        cost=cost,
        cost_usd=snapshot.to_usd(cost, ts),
        profit_usd=snapshot.to_usd(gain - cost, ts),
        timestamp=ts,
    )


def window_starts(from_block: int, to_block: int, window: int, stride: int) -> list[int]:
    """Start blocks of the sliding windows; the last one reaches ``to_block``."""
    starts = []
    start = from_block
    while True:
        starts.append(start)
        if start + window - 1 >= to_block:
            return starts
        start += stride


class DisplacementDetector(BaseEstimator):
    """Find displacement attacks in a :class:`ChainSnapshot`.

    Parameters
    ----------
    window, stride : int
        Window length and offset in blocks.
    threshold : float
        Fraction of a transaction's distinct 4-byte grams that must be
        matched, first in the window filter and then in one earlier input.
    size_ratio : float
        Minimum ratio of 4-byte word counts, victim over attacker.
    bloom_capacity, bloom_fp_rate : int, float
        Sizing of the per-window Bloom filter.
    oracle : ExecutionOracle, optional
        Simulation backend; defaults to :class:`ReplayOracle` over the snapshot.
    n_jobs : int
        Worker threads used for window scanning.

    Attributes
    ----------
    attacks_ : list of DisplacementAttack
        Sorted by attacker position.
    diagnostics_ : collections.Counter
        ``candidates``, ``validated``, ``rejected_by_simulation`` and
        ``oracle_failures`` tallies.
    """

    def __init__(
        self,
        window=100,
        stride=20,
        threshold=0.95,
        size_ratio=0.25,
        bloom_capacity=1_000_000,
        bloom_fp_rate=0.01,
        oracle=None,
        n_jobs=1,
    ):
        self.window = window
        self.stride = stride
        self.threshold = threshold
        self.size_ratio = size_ratio
        self.bloom_capacity = bloom_capacity
        self.bloom_fp_rate = bloom_fp_rate
        self.oracle = oracle
        self.n_jobs = n_jobs

    def _check_params(self):
        check_positive_int("window", self.window)
        check_positive_int("stride", self.stride)
        check_positive_int("n_jobs", self.n_jobs)
        check_fraction("threshold", self.threshold, closed_low=False)
        check_fraction("size_ratio", self.size_ratio)
        if self.stride > self.window:
            raise ValueError("stride larger than window leaves blocks unscanned")

    def _scan_window(self, snapshot, start, end, features):
        bf = BloomFilter(self.bloom_capacity, self.bloom_fp_rate)
        seen: list[tuple[Transaction, frozenset]] = []
        found = []
        for tx in snapshot.transactions(start, end):
            feat = features.get(tx.hash)
            if feat is None:
                continue
            grams, pairs = feat
            if seen and bf.contained_fraction(pairs) >= self.threshold:
                for prev, prev_grams in seen:
                    if (
                        prev.position < tx.position
                        and containment(grams, prev_grams) >= self.threshold
                        and check_displacement_heuristics(prev, tx, self.size_ratio)
                    ):
                        found.append((prev, tx))
            bf.add_hashes(pairs)
            seen.append((tx, grams))
        return found

    def fit(self, X, y=None):
        snapshot = check_snapshot(X, allow_empty=True)
        self._check_params()
        self.diagnostics_ = Counter()
        self.attacks_ = []
        if len(snapshot) == 0:
            return self
        oracle = self.oracle if self.oracle is not None else ReplayOracle(snapshot)

        features = {}
        for tx in snapshot.transactions():
            if len(tx.input) >= 4:
                grams = gram_set(tx.input)
                features[tx.hash] = (grams, hash_pairs(sorted(grams)))

        starts = window_starts(snapshot.from_block, snapshot.to_block, self.window, self.stride)
        jobs = [(s, min(s + self.window - 1, snapshot.to_block)) for s in starts]
        if self.n_jobs > 1:
            with ThreadPoolExecutor(self.n_jobs) as pool:
                per_window = list(pool.map(lambda j: self._scan_window(snapshot, j[0], j[1], features), jobs))
        else:
            per_window = [self._scan_window(snapshot, s, e, features) for s, e in jobs]

        decided: dict[frozenset, bool] = {}
        attacks = []
        for candidates in per_window:
            for t_a, t_v in candidates:
                key = frozenset((t_a.hash, t_v.hash))
                if key in decided:
                    continue
                self.diagnostics_["candidates"] += 1
                block = snapshot.block(t_a.block_number)
                ctx = BlockContext(block.number, block.miner, block.timestamp)
                try:
                    ok = validate_by_simulation(t_a, t_v, oracle, ctx)
                except OracleError as exc:
                    log.info("skipping candidate %s -> %s: %s", t_a.hash, t_v.hash, exc)
                    self.diagnostics_["oracle_failures"] += 1
                    decided[key] = False
                    continue
                decided[key] = ok
                if ok:
                    self.diagnostics_["validated"] += 1
                    attacks.append(compute_displacement_result(t_a, t_v, snapshot))
                else:
                    self.diagnostics_["rejected_by_simulation"] += 1
        attacks.sort(key=lambda a: (a.attacker_tx.position, a.victim_tx.position))
        self.attacks_ = attacks
        return self

    def fit_predict(self, X, y=None) -> list[DisplacementAttack]:
        return self.fit(X).attacks_


def scan_displacement(snapshot: ChainSnapshot, window=100, stride=20, match_threshold=0.95, oracle=None, **kwargs):
    return DisplacementDetector(window=window, stride=stride, threshold=match_threshold, oracle=oracle, **kwargs).fit(snapshot).attacks_
