"""NDJSON attack records: the interchange format between pipeline stages.

Every detector result serializes to a flat dict with a common header
(``kind``, ``id``, ``block_number``, ``timestamp``, attacker identities and
wei/USD accounting) plus kind-specific fields. Wei amounts are decimal
strings so 256-bit values survive JSON.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import IO, Iterable, Iterator, Optional

from .chain import Address, round_usd
from .exceptions import DataError

ATTACK_KINDS = ("displacement", "insertion", "suppression")


def usd_str(value: Decimal) -> str:
    return str(round_usd(value))


def common_fields(attack) -> dict:
    return {
        "kind": attack.kind,
        "id": attack.attack_id,
        "block_number": attack.block_number,
        "timestamp": attack.timestamp,
        "attacker_accounts": sorted(attack.attacker_accounts),
        "bot_contracts": sorted(attack.bot_contracts),
        "account_bot_pairs": sorted([a, b] for a, b in attack.account_bot_pairs),
        "gain_wei": str(attack.gain),
        "cost_wei": str(attack.cost),
        "profit_wei": str(attack.profit),
        "cost_usd": usd_str(attack.cost_usd),
        "profit_usd": usd_str(attack.profit_usd),
    }


@dataclass(frozen=True)
class AttackRecord:
    """Read-only view over one serialized attack."""

    data: dict

    @classmethod
    def of(cls, obj) -> "AttackRecord":
        if isinstance(obj, AttackRecord):
            return obj
        if isinstance(obj, dict):
            return cls(obj)
        if hasattr(obj, "to_dict"):
            return cls(obj.to_dict())
        raise TypeError(f"cannot interpret {type(obj).__name__} as an attack record")

    def __getitem__(self, key):
        return self.data[key]

    def get(self, key, default=None):
        return self.data.get(key, default)

    @property
    def kind(self) -> str:
        return self.data["kind"]

    @property
    def attack_id(self) -> str:
        return self.data["id"]

    @property
    def block_number(self) -> int:
        return int(self.data["block_number"])

    @property
    def timestamp(self) -> int:
        return int(self.data["timestamp"])

    @property
    def attacker_accounts(self) -> list[Address]:
        return [Address(a) for a in self.data.get("attacker_accounts", ())]

    @property
    def bot_contracts(self) -> list[Address]:
        return [Address(a) for a in self.data.get("bot_contracts", ())]

    @property
    def account_bot_pairs(self) -> list[tuple[Address, Address]]:
        return [(Address(a), Address(b)) for a, b in self.data.get("account_bot_pairs", ())]

    @property
    def gain(self) -> int:
        return int(self.data["gain_wei"])

    @property
    def cost(self) -> int:
        return int(self.data["cost_wei"])

    @property
    def profit(self) -> int:
        return int(self.data["profit_wei"])

    @property
    def cost_usd(self) -> Decimal:
        return Decimal(self.data["cost_usd"])

    @property
    def profit_usd(self) -> Decimal:
        return Decimal(self.data["profit_usd"])


def dumps(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def write_ndjson(items: Iterable, fh: IO[str]) -> int:
    n = 0
    for item in items:
        rec = item.to_dict() if hasattr(item, "to_dict") else (item.data if isinstance(item, AttackRecord) else item)
        fh.write(dumps(rec) + "\n")
        n += 1
    return n


def read_ndjson(path: "str | Path") -> Iterator[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc


def read_attacks(path: "str | Path", kind: Optional[str] = None) -> list[AttackRecord]:
    out = []
    for rec in read_ndjson(path):
        if rec.get("kind") not in ATTACK_KINDS:
            raise DataError(f"{path}: record is not an attack: {rec.get('kind')!r}")
        if kind is None or rec["kind"] == kind:
            out.append(AttackRecord(rec))
    return out
