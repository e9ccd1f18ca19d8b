"""Insertion (sandwich) detection over per-block ERC-20 Transfer events.

A triple ``(E_A1, E_V, E_A2)`` is reported when the exchange sends tokens to
the attacker and then to the victim, the attacker sends back (nearly) the
same amount afterwards, all on one token contract, in three different
transactions ordered by index and by decreasing gas price.
"""

from __future__ import annotations

import enum
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Iterable, Mapping, Optional, Sequence

from sklearn.base import BaseEstimator

from .chain import Address, ChainSnapshot, Transaction, TransferEvent, fee, wei_to_gwei
from .config import GasTokenConfig
from .records import AttackRecord, common_fields
from .validation import check_fraction, check_positive_int, check_snapshot


class GasTokenKind(str, enum.Enum):
    GST2 = "GST2"
    CHI = "Chi"
    CUSTOM = "Custom"


class GasTokenUse(str, enum.Enum):
    NONE = "None"
    FIRST_ONLY = "FirstOnly"
    SECOND_ONLY = "SecondOnly"
    BOTH = "Both"


@dataclass(frozen=True)
class GasTokenUsage:
    usage: GasTokenUse = GasTokenUse.NONE
    kind: Optional[GasTokenKind] = None
    first: Optional[GasTokenKind] = None
    second: Optional[GasTokenKind] = None


@dataclass(frozen=True)
class InsertionAttack:
    e_a1: TransferEvent
    e_v: TransferEvent
    e_a2: TransferEvent
    attacker_buy_tx: Transaction
    victim_tx: Transaction
    attacker_sell_tx: Transaction
    bot_contract: Optional[Address]
    gain: int
    cost: int
    value_spent: int
    cost_usd: Decimal
    profit_usd: Decimal
    timestamp: int
    gas_token_usage: GasTokenUsage = field(default_factory=GasTokenUsage)
    sell_bot: Optional[Address] = None

    kind = "insertion"

    @property
    def exchange(self) -> Address:
        return self.e_a1.s

    @property
    def token(self) -> Address:
        return self.e_a1.c

    @property
    def profit(self) -> int:
        return self.gain - self.cost

    @property
    def gas_price_delta1(self) -> int:
        return self.attacker_buy_tx.gas_price - self.victim_tx.gas_price

    @property
    def gas_price_delta2(self) -> int:
        return self.victim_tx.gas_price - self.attacker_sell_tx.gas_price

    @property
    def block_number(self) -> int:
        return self.e_a1.block_number

    @property
    def attack_id(self) -> str:
        return f"{self.attacker_buy_tx.hash}:{self.victim_tx.hash}:{self.attacker_sell_tx.hash}"

    @property
    def attacker_accounts(self) -> set[Address]:
        return {self.attacker_buy_tx.sender, self.attacker_sell_tx.sender}

    @property
    def bot_contracts(self) -> set[Address]:
        return {b for b in (self.bot_contract, self.sell_bot) if b is not None}

    @property
    def account_bot_pairs(self) -> set[tuple[Address, Address]]:
        pairs = set()
        if self.bot_contract is not None:
            pairs.add((self.attacker_buy_tx.sender, self.bot_contract))
        if self.sell_bot is not None:
            pairs.add((self.attacker_sell_tx.sender, self.sell_bot))
        return pairs

    @property
    def is_direct(self) -> bool:
        return self.bot_contract is None

    def to_dict(self) -> dict:
        rec = common_fields(self)
        g = self.gas_token_usage
        rec.update(
            attacker_buy_tx=self.attacker_buy_tx.hash,
            victim_tx=self.victim_tx.hash,
            attacker_sell_tx=self.attacker_sell_tx.hash,
            tx_hashes=[self.attacker_buy_tx.hash, self.victim_tx.hash, self.attacker_sell_tx.hash],
            buy_sender=self.attacker_buy_tx.sender,
            exchange=self.exchange,
            token=self.token,
            bot_contract=self.bot_contract,
            direct=self.is_direct,
            amount_bought=str(self.e_a1.a),
            amount_sold=str(self.e_a2.a),
            value_spent_wei=str(self.value_spent),
            gas_price_delta1_wei=str(self.gas_price_delta1),
            gas_price_delta2_wei=str(self.gas_price_delta2),
            gas_price_delta1_gwei=str(wei_to_gwei(self.gas_price_delta1)),
            gas_price_delta2_gwei=str(wei_to_gwei(self.gas_price_delta2)),
            gas_token_usage=g.usage.value,
            gas_token_kind=g.kind.value if g.kind else None,
        )
        return rec


def amounts_match(a1: int, a2: int, tolerance: float = 0.01) -> bool:
    """``|a1 - a2| / max(a1, a2) <= tolerance`` in exact arithmetic."""
    top = max(a1, a2)
    if top == 0:
        return False
    return Decimal(abs(a1 - a2)) <= Decimal(str(tolerance)) * Decimal(top)


def check_insertion_heuristics(e_a1: TransferEvent, e_v: TransferEvent, e_a2: TransferEvent, amount_tolerance: float = 0.01) -> bool:
    return (
        e_a1.s == e_v.s == e_a2.r
        and e_a1.r == e_a2.s
        and amounts_match(e_a1.a, e_a2.a, amount_tolerance)
        and e_a1.c == e_v.c == e_a2.c
        and len({e_a1.h, e_v.h, e_a2.h}) == 3
        and e_a1.i < e_v.i < e_a2.i
        and e_a1.g > e_v.g >= e_a2.g
    )


def _event_key(e: TransferEvent) -> tuple[int, int]:
    return (e.i, e.log_index)


def scan_block_events(
    events: Sequence[TransferEvent], amount_tolerance: float = 0.01, pairing: str = "all"
) -> list[tuple[TransferEvent, TransferEvent, TransferEvent]]:
    """All heuristic-satisfying triples among one block's events.

    ``pairing="earliest"`` keeps, for each ``(E_A1, E_V)``, only the unused
    ``E_A2`` with the smallest index and marks it used.
    """
    ordered = sorted(events, key=_event_key)
    by_sender: dict[tuple[Address, Address], list[TransferEvent]] = defaultdict(list)
    for e in ordered:
        by_sender[(e.c, e.s)].append(e)

    triples = []
    used: set[tuple[int, int]] = set()
    for e1 in ordered:
        sells = [
            e2
            for e2 in by_sender.get((e1.c, e1.r), ())
            if e2.r == e1.s and e2.i > e1.i + 1 and e2.g < e1.g and amounts_match(e1.a, e2.a, amount_tolerance)
        ]
        if not sells:
            continue
        for ev in by_sender[(e1.c, e1.s)]:
            if not (e1.i < ev.i and e1.g > ev.g):
                continue
            matches = [
                e2 for e2 in sells if ev.i < e2.i and ev.g >= e2.g and len({e1.h, ev.h, e2.h}) == 3
            ]
            if pairing == "earliest":
                matches = [e2 for e2 in matches if _event_key(e2) not in used][:1]
                used.update(_event_key(e2) for e2 in matches)
            triples.extend((e1, ev, e2) for e2 in matches)
    triples.sort(key=lambda t: (_event_key(t[0]), _event_key(t[1]), _event_key(t[2])))
    return triples


def _bot_of(tx: Transaction, exchange: Address, snapshot: ChainSnapshot) -> Optional[Address]:
    if tx.receiver is not None and tx.receiver != exchange and snapshot.is_contract(tx.receiver):
        return tx.receiver
    return None


def compute_insertion_result(
    triple: tuple[TransferEvent, TransferEvent, TransferEvent],
    snapshot: ChainSnapshot,
    gas_tokens: Optional[GasTokenConfig] = None,
) -> InsertionAttack:
    """Cost, gain and identities of one sandwich.

    The attacker side is both senders plus the token recipient of ``E_A1``.
    Ether spent in ``T_A1`` is what leaves that side (tx value paid to an
    outside receiver plus internal transfers out); gain is the ether entering
    it through internal transfers in ``T_A2``.
    """
    e1, ev, e2 = triple
    t1, tv, t2 = snapshot.tx(e1.h), snapshot.tx(ev.h), snapshot.tx(e2.h)
    side = {t1.sender, t2.sender, e1.r}
    spent = t1.value if t1.receiver not in side else 0
    spent += sum(x.value for x in snapshot.internal_transfers(t1.hash) if x.sender in side and x.to not in side)
    gain = sum(x.value for x in snapshot.internal_transfers(t2.hash) if x.to in side and x.sender not in side)
    cost = spent + fee(t1) + fee(t2)
    ts = snapshot.timestamp_of(t1)
    return InsertionAttack(
        e_a1=e1,
        e_v=ev,
        e_a2=e2,
        attacker_buy_tx=t1,
        victim_tx=tv,
        attacker_sell_tx=t2,
        bot_contract=_bot_of(t1, e1.s, snapshot),
        sell_bot=_bot_of(t2, e1.s, snapshot),
        gain=gain,
        cost=cost,
        value_spent=spent,
        cost_usd=snapshot.to_usd(cost, ts),
        profit_usd=snapshot.to_usd(gain - cost, ts),
        timestamp=ts,
        gas_token_usage=tag_gas_token_usage(t1, t2, gas_tokens or GasTokenConfig(), snapshot),
    )


def _gas_token_kind(tx: Transaction, known: GasTokenConfig, snapshot: ChainSnapshot) -> Optional[GasTokenKind]:
    trace = snapshot.trace(tx.hash)
    if trace is None:
        return None
    gst2, chi = set(known.gst2), set(known.chi)
    for callee in trace.calls:
        if callee in gst2:
            return GasTokenKind.GST2
        if callee in chi:
            return GasTokenKind.CHI
    if known.selfdestruct_min > 0 and trace.opcodes.count("SELFDESTRUCT") >= known.selfdestruct_min:
        return GasTokenKind.CUSTOM
    return None


def tag_gas_token_usage(t_a1: Transaction, t_a2: Transaction, known_tokens: GasTokenConfig, snapshot: ChainSnapshot) -> GasTokenUsage:
    """Which attacker transactions freed gas tokens, and of which kind."""
    first = _gas_token_kind(t_a1, known_tokens, snapshot)
    second = _gas_token_kind(t_a2, known_tokens, snapshot)
    if first and second:
        usage = GasTokenUse.BOTH
    elif first:
        usage = GasTokenUse.FIRST_ONLY
    elif second:
        usage = GasTokenUse.SECOND_ONLY
    else:
        usage = GasTokenUse.NONE
    return GasTokenUsage(usage=usage, kind=first or second, first=first, second=second)


class InsertionDetector(BaseEstimator):
    """Find sandwich attacks block by block.

    Parameters
    ----------
    amount_tolerance : float
        Maximum relative difference between tokens bought and sold.
    pairing : {"all", "earliest"}
        Report every satisfying triple, or pair each front-run with its
        earliest unused back-run only.
    gas_tokens : GasTokenConfig or dict, optional
        Known gas-token addresses and the self-destruct pattern threshold.
    n_jobs : int
        Worker threads for per-block scanning.
    """

    def __init__(self, amount_tolerance=0.01, pairing="all", gas_tokens=None, n_jobs=1):
        self.amount_tolerance = amount_tolerance
        self.pairing = pairing
        self.gas_tokens = gas_tokens
        self.n_jobs = n_jobs

    def _gas_token_config(self) -> GasTokenConfig:
        if self.gas_tokens is None:
            return GasTokenConfig()
        if isinstance(self.gas_tokens, dict):
            return GasTokenConfig(**self.gas_tokens)
        return self.gas_tokens

    def fit(self, X, y=None):
        snapshot = check_snapshot(X, allow_empty=True)
        check_fraction("amount_tolerance", self.amount_tolerance)
        check_positive_int("n_jobs", self.n_jobs)
        if self.pairing not in ("all", "earliest"):
            raise ValueError(f"pairing must be 'all' or 'earliest', got {self.pairing!r}")
        known = self._gas_token_config()

        def one_block(n):
            triples = scan_block_events(snapshot.transfer_events(n), self.amount_tolerance, self.pairing)
            return [compute_insertion_result(t, snapshot, known) for t in triples]

        numbers = snapshot.block_numbers
        if self.n_jobs > 1:
            with ThreadPoolExecutor(self.n_jobs) as pool:
                per_block = list(pool.map(one_block, numbers))
        else:
            per_block = [one_block(n) for n in numbers]
        self.attacks_ = [a for block_attacks in per_block for a in block_attacks]
        return self

    def fit_predict(self, X, y=None) -> list[InsertionAttack]:
        return self.fit(X).attacks_


def scan_insertion(snapshot: ChainSnapshot, **params) -> list[InsertionAttack]:
    return InsertionDetector(**params).fit(snapshot).attacks_


@dataclass(frozen=True)
class CompetitionGroup:
    block_number: int
    victim_tx: str
    token: Address
    attack_ids: tuple[str, ...]
    clusters: tuple[Optional[int], ...]
    self_interference: bool

    def to_dict(self) -> dict:
        return {
            "kind": "competition",
            "block_number": self.block_number,
            "victim_tx": self.victim_tx,
            "token": self.token,
            "attack_ids": list(self.attack_ids),
            "clusters": list(self.clusters),
            "self_interference": self.self_interference,
        }


def detect_competition(attacks: Iterable, clusters: Mapping[Address, int]) -> list[CompetitionGroup]:
    """Group insertion attacks sharing block, victim and token.

    ``clusters`` maps attacker addresses to cluster ids. A group is flagged
    when two of its attacks resolve to the same cluster.
    """
    groups: dict[tuple, list[AttackRecord]] = defaultdict(list)
    for a in attacks:
        rec = AttackRecord.of(a)
        if rec.kind != "insertion":
            continue
        groups[(rec.block_number, rec["victim_tx"], rec["token"])].append(rec)
    out = []
    for (block, victim, token), members in sorted(groups.items()):
        if len(members) < 2:
            continue
        members.sort(key=lambda r: r.attack_id)
        ids = []
        for r in members:
            anchor = r.get("bot_contract") or r.get("buy_sender")
            ids.append(clusters.get(Address(anchor)) if anchor else None)
        known = [c for c in ids if c is not None]
        out.append(
            CompetitionGroup(
                block_number=block,
                victim_tx=victim,
                token=Address(token),
                attack_ids=tuple(r.attack_id for r in members),
                clusters=tuple(ids),
                self_interference=len(known) != len(set(known)),
            )
        )
    return out
