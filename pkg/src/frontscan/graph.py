"""Attacker identity graph and its connected components.

Nodes are attacker accounts and bot contracts. An account and a bot are
linked when the account sent an attack transaction to the bot; two bots are
linked when their bytecode is byte-identical. Each connected component is
one attacker cluster.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Iterable, Mapping, Optional

from sklearn.base import BaseEstimator

from .chain import Address
from .records import AttackRecord

log = logging.getLogger(__name__)


class NodeKind(str, enum.Enum):
    ACCOUNT = "AttackerAccount"
    BOT = "BotContract"


class EdgeLabel(str, enum.Enum):
    SHARED_ATTACK_TX = "SharedAttackTx"
    SAME_BYTECODE = "SameBytecode"


Node = tuple[NodeKind, Address]


class UnionFind:
    """Disjoint sets with path compression and union by size."""

    def __init__(self, items: Iterable = ()):
        self._parent: dict = {}
        self._size: dict = {}
        for x in items:
            self.add(x)

    def add(self, x) -> None:
        if x not in self._parent:
            self._parent[x] = x
            self._size[x] = 1

    def find(self, x):
        root = x
        while self._parent[root] != root:
            root = self._parent[root]
        while self._parent[x] != root:
            self._parent[x], x = root, self._parent[x]
        return root

    def union(self, a, b) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self._size[ra] < self._size[rb]:
            ra, rb = rb, ra
        self._parent[rb] = ra
        self._size[ra] += self._size[rb]

    def groups(self) -> list[list]:
        out: dict = {}
        for x in self._parent:
            out.setdefault(self.find(x), []).append(x)
        return list(out.values())


@dataclass
class AttackerGraph:
    nodes: set = field(default_factory=set)
    edges: set = field(default_factory=set)
    missing_code: set = field(default_factory=set)

    def add_edge(self, a: Node, b: Node, label: EdgeLabel) -> None:
        if label is EdgeLabel.SHARED_ATTACK_TX and {a[0], b[0]} != {NodeKind.ACCOUNT, NodeKind.BOT}:
            raise ValueError("SharedAttackTx edges join an account and a bot")
        if label is EdgeLabel.SAME_BYTECODE and not (a[0] is b[0] is NodeKind.BOT):
            raise ValueError("SameBytecode edges join two bots")
        self.nodes.update((a, b))
        lo, hi = sorted((a, b))
        self.edges.add((lo, hi, label))


@dataclass
class AttackerCluster:
    id: int
    accounts: frozenset
    bots: frozenset
    attacks: tuple = ()
    cost: int = 0
    profit: int = 0
    cost_usd: Decimal = Decimal(0)
    profit_usd: Decimal = Decimal(0)

    @property
    def members(self) -> frozenset:
        return self.accounts | self.bots

    def to_dict(self) -> dict:
        return {
            "kind": "cluster",
            "id": self.id,
            "accounts": sorted(self.accounts),
            "bots": sorted(self.bots),
            "attacks": list(self.attacks),
            "attack_count": len(self.attacks),
            "cost_wei": str(self.cost),
            "profit_wei": str(self.profit),
            "cost_usd": str(self.cost_usd),
            "profit_usd": str(self.profit_usd),
        }


def build_graph(attacks: Iterable, code: Mapping[Address, bytes]) -> AttackerGraph:
    graph = AttackerGraph()
    bots: set[Address] = set()
    for a in attacks:
        rec = AttackRecord.of(a)
        for acct in rec.attacker_accounts:
            graph.nodes.add((NodeKind.ACCOUNT, acct))
        for bot in rec.bot_contracts:
            graph.nodes.add((NodeKind.BOT, bot))
            bots.add(bot)
        for acct, bot in rec.account_bot_pairs:
            graph.add_edge((NodeKind.ACCOUNT, acct), (NodeKind.BOT, bot), EdgeLabel.SHARED_ATTACK_TX)
            bots.add(bot)

    by_code: dict[bytes, list[Address]] = {}
    for bot in sorted(bots):
        bytecode = code.get(bot)
        if not bytecode:
            log.warning("no bytecode for bot contract %s; no bytecode edges added", bot)
            graph.missing_code.add(bot)
            continue
        by_code.setdefault(bytes(bytecode), []).append(bot)
    for same in by_code.values():
        for i, a in enumerate(same):
            for b in same[i + 1 :]:
                graph.add_edge((NodeKind.BOT, a), (NodeKind.BOT, b), EdgeLabel.SAME_BYTECODE)
    return graph


def attack_anchor(rec: AttackRecord) -> Optional[Node]:
    """Node an attack's accounting is credited to: its first bot, else its first account."""
    if rec.bot_contracts:
        return (NodeKind.BOT, sorted(rec.bot_contracts)[0])
    if rec.get("buy_sender"):
        return (NodeKind.ACCOUNT, Address(rec["buy_sender"]))
    if rec.attacker_accounts:
        return (NodeKind.ACCOUNT, sorted(rec.attacker_accounts)[0])
    return None


def connected_components(graph: AttackerGraph, attacks: Iterable = ()) -> list[AttackerCluster]:
    """Components ordered by their smallest member address; ids follow that order."""
    uf = UnionFind(sorted(graph.nodes))
    for a, b, _ in sorted(graph.edges):
        uf.union(a, b)
    groups = sorted(uf.groups(), key=lambda g: min((addr, kind.value) for kind, addr in g))
    clusters = []
    where: dict[Node, AttackerCluster] = {}
    for cid, members in enumerate(groups):
        c = AttackerCluster(
            id=cid,
            accounts=frozenset(addr for kind, addr in members if kind is NodeKind.ACCOUNT),
            bots=frozenset(addr for kind, addr in members if kind is NodeKind.BOT),
        )
        clusters.append(c)
        for node in members:
            where[node] = c

    credited: dict[int, list[AttackRecord]] = {}
    for a in attacks:
        rec = AttackRecord.of(a)
        anchor = attack_anchor(rec)
        if anchor in where:
            credited.setdefault(where[anchor].id, []).append(rec)
    for c in clusters:
        recs = sorted(credited.get(c.id, []), key=lambda r: r.attack_id)
        c.attacks = tuple(r.attack_id for r in recs)
        c.cost = sum(r.cost for r in recs)
        c.profit = sum(r.profit for r in recs)
        c.cost_usd = sum((r.cost_usd for r in recs), Decimal(0))
        c.profit_usd = sum((r.profit_usd for r in recs), Decimal(0))
    return clusters


class AttackerClusterer(BaseEstimator):
    """Cluster attacker accounts and bot contracts, DBSCAN-style API.

    ``fit(attacks, code=...)`` takes attack objects, dicts or
    :class:`AttackRecord` and a bot-address to bytecode mapping.

    Attributes
    ----------
    graph_ : AttackerGraph
    clusters_ : list of AttackerCluster
    labels_ : dict
        Address to cluster id.
    """

    def __init__(self, use_bytecode=True):
        self.use_bytecode = use_bytecode

    def fit(self, X, y=None, code: Optional[Mapping[Address, bytes]] = None):
        records = [AttackRecord.of(a) for a in X]
        code = dict(code or {}) if self.use_bytecode else {}
        self.graph_ = build_graph(records, code)
        if not self.use_bytecode:
            self.graph_.missing_code.clear()
        self.clusters_ = connected_components(self.graph_, records)
        self.labels_ = {addr: c.id for c in self.clusters_ for addr in c.members}
        return self

    def fit_predict(self, X, y=None, code=None) -> dict:
        return self.fit(X, code=code).labels_
