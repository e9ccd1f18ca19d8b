"""Suppression (block stuffing) detection.

Per block, transactions are grouped by receiver; a group qualifies when it
holds several code-executing transactions that each burnt almost their whole
gas limit. Qualifying groups backed by a qualifying neighbour block are
chained into attacks, the victim contract is inferred from the attackers'
investments, and the money flow around the victim is cut into rounds.
"""

from __future__ import annotations

import enum
import logging
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Optional, Sequence

from sklearn.base import BaseEstimator

from .chain import BASE_TX_GAS, Address, Block, ChainSnapshot, ExecutionTrace, Terminal, Transaction, fee
from .records import common_fields
from .validation import check_fraction, check_positive_int, check_snapshot

log = logging.getLogger(__name__)

CONTROLLED_LOOP = ("GAS", "GT", "ISZERO", "JUMPI")
UNCONTROLLED_LOOP = ("SLOAD", "TIMESTAMP", "ADD", "SSTORE")


class Strategy(str, enum.Enum):
    CONTROLLED_GAS_LOOP = "ControlledGasLoop"
    UNCONTROLLED_GAS_LOOP = "UncontrolledGasLoop"
    ASSERT = "Assert"


class RoundStatus(str, enum.Enum):
    SUCCESS = "Success"
    FAILURE = "Failure"


class UnclassifiedStrategy(ValueError):
    pass


@dataclass(frozen=True)
class StuffingCluster:
    block_number: int
    receiver: Address
    txs: tuple[Transaction, ...]


@dataclass
class SuppressionRound:
    investment_tx: Transaction
    stuffing_txs: list[Transaction] = field(default_factory=list)
    status: Optional[RoundStatus] = None
    prize_claimed: int = 0
    closed_by: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "investment_tx": self.investment_tx.hash,
            "investment_wei": str(self.investment_tx.value),
            "stuffing_txs": [t.hash for t in self.stuffing_txs],
            "status": self.status.value if self.status else None,
            "prize_claimed_wei": str(self.prize_claimed),
            "closed_by": self.closed_by,
        }


@dataclass(frozen=True)
class SuppressionAttack:
    victim_contract: Address
    bot_contracts: frozenset
    attacker_accounts: frozenset
    rounds: tuple[SuppressionRound, ...]
    strategy: Optional[Strategy]
    blocks_stuffed: int
    first_block: int
    last_block: int
    gain: int
    cost: int
    investments: int
    cost_usd: Decimal
    profit_usd: Decimal
    timestamp: int
    account_bot_pairs: frozenset = frozenset()

    kind = "suppression"

    @property
    def profit(self) -> int:
        return self.gain - self.cost

    @property
    def status(self) -> RoundStatus:
        return self.rounds[-1].status

    @property
    def tx_count(self) -> int:
        return sum(len(r.stuffing_txs) + 1 for r in self.rounds)

    @property
    def block_number(self) -> int:
        return self.first_block

    @property
    def attack_id(self) -> str:
        return f"{self.victim_contract}:{self.rounds[0].investment_tx.hash}"

    def to_dict(self) -> dict:
        rec = common_fields(self)
        rec.update(
            victim_contract=self.victim_contract,
            first_investment_tx=self.rounds[0].investment_tx.hash,
            strategy=self.strategy.value if self.strategy else None,
            status=self.status.value,
            rounds=[r.to_dict() for r in self.rounds],
            round_count=len(self.rounds),
            blocks_stuffed=self.blocks_stuffed,
            tx_count=self.tx_count,
            first_block=self.first_block,
            last_block=self.last_block,
            investments_wei=str(self.investments),
        )
        return rec


def _qualifies(tx: Transaction, min_gas: int, gas_ratio: float) -> bool:
    return tx.gas_used > min_gas and tx.gas_limit > 0 and Decimal(tx.gas_used) > Decimal(str(gas_ratio)) * tx.gas_limit


def find_stuffing_clusters(block: Block, min_gas: int = BASE_TX_GAS, gas_ratio: float = 0.99) -> list[StuffingCluster]:
    groups: dict[Address, list[Transaction]] = defaultdict(list)
    for tx in block.transactions:
        if tx.receiver is not None:
            groups[tx.receiver].append(tx)
    return [
        StuffingCluster(block.number, receiver, tuple(txs))
        for receiver, txs in sorted(groups.items())
        if len(txs) > 1 and all(_qualifies(t, min_gas, gas_ratio) for t in txs)
    ]


def confirm_neighbors(snapshot: ChainSnapshot, cluster: StuffingCluster, min_gas: int = BASE_TX_GAS, gas_ratio: float = 0.99) -> bool:
    for n in (cluster.block_number - 1, cluster.block_number + 1):
        block = snapshot.get_block(n)
        if block is None:
            continue
        if any(c.receiver == cluster.receiver for c in find_stuffing_clusters(block, min_gas, gas_ratio)):
            return True
    return False


def count_pattern(opcodes: Sequence[str], pattern: Sequence[str]) -> int:
    """Occurrences of ``pattern`` as a contiguous run in ``opcodes``."""
    n = len(pattern)
    first = pattern[0]
    return sum(1 for i in range(len(opcodes) - n + 1) if opcodes[i] == first and tuple(opcodes[i : i + n]) == tuple(pattern))


def classify_strategy(trace: ExecutionTrace, loop_count: int = 10) -> Strategy:
    if trace.terminal is Terminal.ASSERT:
        return Strategy.ASSERT
    if trace.terminal is Terminal.NORMAL and count_pattern(trace.opcodes, CONTROLLED_LOOP) > loop_count:
        return Strategy.CONTROLLED_GAS_LOOP
    if trace.terminal is Terminal.REVERT and count_pattern(trace.opcodes, UNCONTROLLED_LOOP) > loop_count:
        return Strategy.UNCONTROLLED_GAS_LOOP
    raise UnclassifiedStrategy(f"unclassified strategy for {trace.tx_hash}")


def compute_suppression_result(
    rounds: Sequence[SuppressionRound],
    snapshot: ChainSnapshot,
    *,
    victim_contract: Address,
    bots: set,
    accounts: set,
    strategy: Optional[Strategy],
    stuffed_blocks: set,
    pairs: set,
) -> SuppressionAttack:
    if not rounds:
        raise ValueError("a suppression attack needs at least one round")
    investments = sum(r.investment_tx.value for r in rounds)
    fees = sum(fee(r.investment_tx) + sum(fee(t) for t in r.stuffing_txs) for r in rounds)
    cost = investments + fees
    gain = rounds[-1].prize_claimed if rounds[-1].status is RoundStatus.SUCCESS else 0
    first = rounds[0].investment_tx
    ts = snapshot.timestamp_of(first)
    return SuppressionAttack(
        victim_contract=victim_contract,
        bot_contracts=frozenset(bots),
        attacker_accounts=frozenset(accounts),
        rounds=tuple(rounds),
        strategy=strategy,
        blocks_stuffed=len(stuffed_blocks),
        first_block=min(first.block_number, min(stuffed_blocks)),
        last_block=max(stuffed_blocks),
        gain=gain,
        cost=cost,
        investments=investments,
        cost_usd=snapshot.to_usd(cost, ts),
        profit_usd=snapshot.to_usd(gain - cost, ts),
        timestamp=ts,
        account_bot_pairs=frozenset(pairs),
    )


class SuppressionDetector(BaseEstimator):
    """Find block-stuffing campaigns against investment-driven contracts.

    Parameters
    ----------
    min_gas : int
        Every clustered transaction must use strictly more gas than this.
    gas_ratio : float
        Every clustered transaction must have ``gas_used / gas_limit`` above this.
    loop_count : int
        Loop patterns must appear strictly more often than this.
    max_gap : int
        Non-qualifying blocks tolerated inside one attack.
    investment_lookback : int
        Blocks before the first stuffed block searched for the opening investment.
    claim_horizon : int
        Blocks after the last stuffed block searched for the prize claim.
    n_jobs : int
        Worker threads for per-block cluster discovery.

    Attributes
    ----------
    attacks_ : list of SuppressionAttack
    diagnostics_ : collections.Counter
    """

    def __init__(
        self,
        min_gas=BASE_TX_GAS,
        gas_ratio=0.99,
        loop_count=10,
        max_gap=1,
        investment_lookback=5,
        claim_horizon=10,
        n_jobs=1,
    ):
        self.min_gas = min_gas
        self.gas_ratio = gas_ratio
        self.loop_count = loop_count
        self.max_gap = max_gap
        self.investment_lookback = investment_lookback
        self.claim_horizon = claim_horizon
        self.n_jobs = n_jobs

    def _check_params(self):
        check_positive_int("min_gas", self.min_gas, minimum=0)
        check_fraction("gas_ratio", self.gas_ratio)
        check_positive_int("loop_count", self.loop_count, minimum=0)
        check_positive_int("max_gap", self.max_gap, minimum=0)
        check_positive_int("investment_lookback", self.investment_lookback, minimum=0)
        check_positive_int("claim_horizon", self.claim_horizon, minimum=0)
        check_positive_int("n_jobs", self.n_jobs)

    def fit(self, X, y=None):
        snapshot = check_snapshot(X, allow_empty=True)
        self._check_params()
        self.diagnostics_ = Counter()
        self.clusters_ = []

        def clusters_in(block):
            return find_stuffing_clusters(block, self.min_gas, self.gas_ratio)

        blocks = list(snapshot.blocks())
        if self.n_jobs > 1:
            with ThreadPoolExecutor(self.n_jobs) as pool:
                per_block = list(pool.map(clusters_in, blocks))
        else:
            per_block = [clusters_in(b) for b in blocks]
        by_receiver: dict[Address, dict[int, StuffingCluster]] = defaultdict(dict)
        for found in per_block:
            for c in found:
                by_receiver[c.receiver][c.block_number] = c

        confirmed: list[StuffingCluster] = []
        for receiver, per in by_receiver.items():
            for n, c in per.items():
                if n - 1 in per or n + 1 in per:
                    confirmed.append(c)
                else:
                    self.diagnostics_["isolated_clusters"] += 1
        confirmed.sort(key=lambda c: (c.receiver, c.block_number))
        self.clusters_ = sorted(confirmed, key=lambda c: (c.block_number, c.receiver))

        sequences: list[list[StuffingCluster]] = []
        for c in confirmed:
            prev = sequences[-1] if sequences else None
            if prev and prev[-1].receiver == c.receiver and c.block_number - prev[-1].block_number <= self.max_gap + 1:
                prev.append(c)
            else:
                sequences.append([c])

        attacks = []
        for seq in sequences:
            attack = self._assemble(snapshot, seq)
            if attack is not None:
                attacks.append(attack)
        attacks.sort(key=lambda a: (a.first_block, a.attack_id))
        self.attacks_ = attacks
        return self

    def _assemble(self, snapshot: ChainSnapshot, seq: list[StuffingCluster]) -> Optional[SuppressionAttack]:
        stuffing = [t for c in seq for t in c.txs]
        accounts = {t.sender for t in stuffing}
        bot = seq[0].receiver
        first_block, last_block = seq[0].block_number, seq[-1].block_number

        votes: Counter = Counter()
        for tx in snapshot.transactions(first_block - self.investment_lookback, last_block):
            if (
                tx.sender in accounts
                and tx.value > 0
                and tx.receiver is not None
                and tx.receiver != bot
                and snapshot.is_contract(tx.receiver)
            ):
                votes[tx.receiver] += 1
        if not votes:
            self.diagnostics_["no_investment"] += 1
            return None
        victim = min(votes, key=lambda a: (-votes[a], a))

        rounds = self._rounds(snapshot, victim, stuffing, accounts, first_block, last_block)
        if not rounds:
            self.diagnostics_["no_investment"] += 1
            return None

        strategy = None
        trace = snapshot.trace(seq[0].txs[0].hash)
        if trace is None:
            self.diagnostics_["missing_trace"] += 1
        else:
            try:
                strategy = classify_strategy(trace, self.loop_count)
            except UnclassifiedStrategy as exc:
                log.info("%s", exc)
                self.diagnostics_["unclassified_strategy"] += 1

        in_rounds = {t.hash for r in rounds for t in r.stuffing_txs}
        return compute_suppression_result(
            rounds,
            snapshot,
            victim_contract=victim,
            bots={bot},
            accounts=accounts,
            strategy=strategy,
            stuffed_blocks={c.block_number for c in seq},
            pairs={(t.sender, t.receiver) for t in stuffing if t.hash in in_rounds},
        )

    def _rounds(self, snapshot, victim, stuffing, accounts, first_block, last_block):
        until = min(last_block + self.claim_horizon, snapshot.to_block)
        start = max(first_block - self.investment_lookback, snapshot.from_block)
        return segment_rounds(snapshot, victim, stuffing, accounts, start, until, last_block)

    def fit_predict(self, X, y=None) -> list[SuppressionAttack]:
        return self.fit(X).attacks_


def segment_rounds(
    snapshot: ChainSnapshot,
    victim: Address,
    stuffing: Sequence[Transaction],
    accounts: Optional[set] = None,
    start_block: Optional[int] = None,
    until_block: Optional[int] = None,
    last_stuffed_block: Optional[int] = None,
) -> list[SuppressionRound]:
    """Split a stuffing campaign into investment-initiated rounds.

    Walks ``[start_block, until_block]`` in chain order. An investment into
    ``victim`` by an attacker account opens a round, stuffing transactions
    join the open round, an outsider investment closes it as a failure and a
    payout from the victim to an attacker account closes it as a success.
    Rounds still open at the end fail. Scanning stops at the first moment
    past ``last_stuffed_block`` with no open round, so later campaigns on
    the same victim are left alone.
    """
    if not stuffing:
        return []
    if accounts is None:
        accounts = {t.sender for t in stuffing}
    if last_stuffed_block is None:
        last_stuffed_block = max(t.block_number for t in stuffing)
    stuffing_hashes = {t.hash for t in stuffing}
    rounds: list[SuppressionRound] = []
    current: Optional[SuppressionRound] = None
    for tx in snapshot.transactions(start_block, until_block):
        past_end = tx.block_number > last_stuffed_block
        if past_end and current is None:
            break
        if tx.hash in stuffing_hashes:
            if current is not None:
                current.stuffing_txs.append(tx)
            continue
        if tx.receiver == victim and tx.value > 0:
            if tx.sender in accounts:
                if past_end:
                    break
                if current is not None:
                    current.status, current.closed_by = RoundStatus.FAILURE, "reinvestment"
                current = SuppressionRound(investment_tx=tx)
                rounds.append(current)
            elif current is not None:
                current.status, current.closed_by = RoundStatus.FAILURE, tx.hash
                current = None
            continue
        if current is not None:
            payout = sum(t.value for t in snapshot.internal_transfers(tx.hash) if t.sender == victim and t.to in accounts)
            if payout > 0:
                current.status, current.prize_claimed, current.closed_by = RoundStatus.SUCCESS, payout, tx.hash
                current = None
    if current is not None:
        current.status, current.closed_by = RoundStatus.FAILURE, "unclaimed"
    return rounds


def scan_suppression(snapshot: ChainSnapshot, **params) -> list[SuppressionAttack]:
    return SuppressionDetector(**params).fit(snapshot).attacks_
