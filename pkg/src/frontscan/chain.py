"""Immutable chain records shared by the detectors and the accounting layer.

Monetary amounts are plain ``int`` values in wei. USD only shows up at the
reporting boundary through :func:`wei_to_usd`.
"""

from __future__ import annotations

import bisect
import datetime as dt
import enum
import re
import threading
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal, localcontext
from typing import Callable, Iterator, Mapping, Optional, Sequence

from .exceptions import DataError

BASE_TX_GAS = 21_000
WEI_PER_ETH = 10**18
WEI_PER_GWEI = 10**9

_ADDRESS_RE = re.compile(r"^0x[0-9a-f]{40}$")
_HASH_RE = re.compile(r"^0x[0-9a-f]{64}$")


class Address(str):
    """20-byte account identifier, rendered as lowercase ``0x`` hex."""

    __slots__ = ()

    def __new__(cls, value: "str | bytes") -> "Address":
        if isinstance(value, Address):
            return value
        if isinstance(value, (bytes, bytearray)):
            if len(value) != 20:
                raise ValueError(f"address must be 20 bytes, got {len(value)}")
            return super().__new__(cls, "0x" + bytes(value).hex())
        text = str(value).lower()
        if not _ADDRESS_RE.match(text):
            raise ValueError(f"invalid address: {value!r}")
        return super().__new__(cls, text)

    def to_bytes(self) -> bytes:
        return bytes.fromhex(self[2:])


ZERO_ADDRESS = Address(b"\x00" * 20)


def check_hash(value: "str | bytes") -> str:
    """Normalize a 32-byte hash to lowercase ``0x`` hex."""
    if isinstance(value, (bytes, bytearray)):
        if len(value) != 32:
            raise ValueError(f"hash must be 32 bytes, got {len(value)}")
        return "0x" + bytes(value).hex()
    text = str(value).lower()
    if not _HASH_RE.match(text):
        raise ValueError(f"invalid hash: {value!r}")
    return text


class TxStatus(enum.Enum):
    SUCCESS = "success"
    REVERTED = "reverted"
    ASSERT_FAILED = "assert_failed"
    OUT_OF_GAS = "out_of_gas"


class Terminal(enum.Enum):
    NORMAL = "normal"
    REVERT = "revert"
    ASSERT = "assert"
    OUT_OF_GAS = "out_of_gas"


@dataclass(frozen=True)
class Transaction:
    hash: str
    block_number: int
    tx_index: int
    sender: Address
    receiver: Optional[Address]
    value: int
    gas_limit: int
    gas_used: int
    gas_price: int
    input: bytes = b""
    status: TxStatus = TxStatus.SUCCESS

    def __post_init__(self):
        if self.block_number < 0 or self.tx_index < 0:
            raise ValueError("block_number and tx_index must be non-negative")
        if self.value < 0 or self.gas_price < 0:
            raise ValueError("value and gas_price must be non-negative")
        if not 0 <= self.gas_used <= self.gas_limit:
            raise ValueError(f"gas_used {self.gas_used} exceeds gas_limit {self.gas_limit}")

    @property
    def position(self) -> tuple[int, int]:
        """Sort key giving the global (block, index) order."""
        return (self.block_number, self.tx_index)


def fee(tx: Transaction) -> int:
    """Transaction fee in wei: gas used times gas price."""
    return tx.gas_used * tx.gas_price


@dataclass(frozen=True)
class Block:
    number: int
    timestamp: int
    miner: Address
    gas_limit: int
    gas_used: int
    transactions: tuple[Transaction, ...] = ()

    def __post_init__(self):
        total = 0
        for expected, tx in enumerate(self.transactions):
            if tx.tx_index != expected:
                raise ValueError(
                    f"block {self.number}: transactions must be contiguous from 0, "
                    f"found index {tx.tx_index} at position {expected}"
                )
            if tx.block_number != self.number:
                raise ValueError(f"block {self.number}: tx {tx.hash} claims block {tx.block_number}")
            total += tx.gas_used
        if total > self.gas_limit:
            raise ValueError(f"block {self.number}: gas used {total} exceeds limit {self.gas_limit}")


@dataclass(frozen=True)
class TransferEvent:
    """Decoded ERC-20 Transfer joined with its transaction's position and gas price."""

    s: Address
    r: Address
    a: int
    c: Address
    h: str
    i: int
    g: int
    block_number: int
    log_index: int

    @property
    def sender(self) -> Address:
        return self.s

    @property
    def receiver(self) -> Address:
        return self.r

    @property
    def amount(self) -> int:
        return self.a

    @property
    def token(self) -> Address:
        return self.c


@dataclass(frozen=True)
class InternalTransfer:
    parent_tx: str
    sender: Address
    to: Address
    value: int

    def __post_init__(self):
        if self.value <= 0:
            raise ValueError("internal transfer value must be positive")


@dataclass(frozen=True)
class ExecutionTrace:
    """Executed opcode mnemonics plus how execution ended.

    ``calls`` lists the addresses targeted by message calls, in execution
    order. It is optional and only used for gas-token tagging.
    """

    tx_hash: str
    opcodes: tuple[str, ...]
    terminal: Terminal = Terminal.NORMAL
    calls: tuple[Address, ...] = ()


@dataclass(frozen=True)
class PriceTable:
    """Daily ETH/USD rates, looked up with latest-at-or-before semantics."""

    entries: tuple[tuple[dt.date, Decimal], ...]

    def __post_init__(self):
        for (d0, _), (d1, _) in zip(self.entries, self.entries[1:]):
            if d1 <= d0:
                raise ValueError(f"price dates must be strictly increasing ({d0} >= {d1})")
        for d, rate in self.entries:
            if rate <= 0:
                raise ValueError(f"non-positive ETH/USD rate on {d}")

    @classmethod
    def from_pairs(cls, pairs) -> "PriceTable":
        rows = []
        for d, rate in pairs:
            if isinstance(d, str):
                d = dt.date.fromisoformat(d)
            rows.append((d, Decimal(str(rate))))
        return cls(tuple(sorted(rows)))

    def rate_at(self, timestamp: int) -> Decimal:
        if not self.entries:
            raise DataError("no price available: empty price table")
        day = dt.datetime.fromtimestamp(timestamp, tz=dt.timezone.utc).date()
        dates = [d for d, _ in self.entries]
        pos = bisect.bisect_right(dates, day)
        if pos == 0:
            raise DataError(f"no price available for {day.isoformat()}")
        return self.entries[pos - 1][1]


def wei_to_usd(amount: int, timestamp: int, prices: PriceTable) -> Decimal:
    """Convert wei to USD at full precision using the day's rate."""
    rate = prices.rate_at(timestamp)
    with localcontext() as ctx:
        ctx.prec = 80
        return Decimal(amount) * rate / WEI_PER_ETH


def round_usd(value: Decimal) -> Decimal:
    return value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)


def wei_to_gwei(amount: int) -> Decimal:
    with localcontext() as ctx:
        ctx.prec = 80
        return Decimal(amount) / WEI_PER_GWEI


def wei_to_eth(amount: int) -> Decimal:
    with localcontext() as ctx:
        ctx.prec = 80
        return Decimal(amount) / WEI_PER_ETH


class ChainSnapshot:
    """Indexed, read-only view over a contiguous block range.

    Traces, internal transfers and code may be backed by a loader callable
    so they are fetched on first access; callers see a fully populated
    snapshot either way.
    """

    def __init__(
        self,
        blocks: Mapping[int, Block],
        *,
        code: Optional[Mapping[Address, bytes]] = None,
        internal_transfers: Optional[Mapping[str, Sequence[InternalTransfer]]] = None,
        traces: Optional[Mapping[str, ExecutionTrace]] = None,
        transfer_events: Optional[Mapping[int, Sequence[TransferEvent]]] = None,
        prices: Optional[PriceTable] = None,
        code_loader: Optional[Callable[[Address], bytes]] = None,
        trace_loader: Optional[Callable[[str], Optional[ExecutionTrace]]] = None,
        internal_loader: Optional[Callable[[str], Sequence[InternalTransfer]]] = None,
    ):
        self._blocks = dict(sorted(blocks.items()))
        self._code = dict(code or {})
        self._internal = {h: tuple(v) for h, v in (internal_transfers or {}).items()}
        self._traces = dict(traces or {})
        self._events = {
            n: tuple(sorted(ev, key=lambda e: (e.i, e.log_index)))
            for n, ev in (transfer_events or {}).items()
        }
        self.prices = prices if prices is not None else PriceTable(())
        self._code_loader = code_loader
        self._trace_loader = trace_loader
        self._internal_loader = internal_loader
        self._lock = threading.Lock()
        self._tx_by_hash: dict[str, Transaction] = {}
        for block in self._blocks.values():
            for tx in block.transactions:
                if tx.hash in self._tx_by_hash:
                    raise DataError(f"duplicate transaction hash {tx.hash}")
                self._tx_by_hash[tx.hash] = tx
        self._validate()

    def _validate(self):
        numbers = list(self._blocks)
        if numbers and numbers != list(range(numbers[0], numbers[-1] + 1)):
            missing = sorted(set(range(numbers[0], numbers[-1] + 1)) - set(numbers))
            raise DataError(f"missing block {missing[0]}")
        for n, events in self._events.items():
            seen = set()
            for ev in events:
                tx = self._tx_by_hash.get(ev.h)
                if tx is None:
                    raise DataError(f"transfer event in block {n} references unknown tx {ev.h}")
                if (tx.block_number, tx.tx_index, tx.gas_price) != (ev.block_number, ev.i, ev.g):
                    raise DataError(f"transfer event {ev.h}:{ev.log_index} disagrees with its transaction")
                key = (ev.i, ev.log_index)
                if key in seen:
                    raise DataError(f"duplicate log position {key} in block {n}")
                seen.add(key)
        for h, trace in self._traces.items():
            tx = self._tx_by_hash.get(h)
            if tx is not None and tx.gas_used > BASE_TX_GAS and not trace.opcodes:
                raise DataError(f"empty trace for tx {h} which executed code")

    @property
    def from_block(self) -> Optional[int]:
        return next(iter(self._blocks), None)

    @property
    def to_block(self) -> Optional[int]:
        return next(reversed(self._blocks), None) if self._blocks else None

    @property
    def block_numbers(self) -> list[int]:
        return list(self._blocks)

    def __len__(self) -> int:
        return len(self._blocks)

    def __contains__(self, number: int) -> bool:
        return number in self._blocks

    def block(self, number: int) -> Block:
        try:
            return self._blocks[number]
        except KeyError:
            raise DataError(f"block {number} not in snapshot") from None

    def get_block(self, number: int) -> Optional[Block]:
        return self._blocks.get(number)

    def blocks(self) -> Iterator[Block]:
        return iter(self._blocks.values())

    def transactions(self, from_block: Optional[int] = None, to_block: Optional[int] = None) -> Iterator[Transaction]:
        """All transactions in (block, index) order, optionally restricted to a range."""
        for number, block in self._blocks.items():
            if from_block is not None and number < from_block:
                continue
            if to_block is not None and number > to_block:
                break
            yield from block.transactions

    def tx(self, tx_hash: str) -> Transaction:
        try:
            return self._tx_by_hash[tx_hash]
        except KeyError:
            raise DataError(f"unknown transaction {tx_hash}") from None

    def has_tx(self, tx_hash: str) -> bool:
        return tx_hash in self._tx_by_hash

    def transfer_events(self, number: int) -> tuple[TransferEvent, ...]:
        return self._events.get(number, ())

    def code_at(self, address: Address) -> Optional[bytes]:
        if address in self._code:
            return self._code[address]
        if self._code_loader is None:
            return None
        with self._lock:
            if address not in self._code:
                self._code[address] = self._code_loader(address) or None
            return self._code[address]

    def is_contract(self, address: Optional[Address]) -> bool:
        return address is not None and bool(self.code_at(address))

    @property
    def code(self) -> Mapping[Address, bytes]:
        """Code loaded so far (everything, for preloaded snapshots)."""
        return {a: c for a, c in self._code.items() if c}

    def trace(self, tx_hash: str) -> Optional[ExecutionTrace]:
        if tx_hash in self._traces:
            return self._traces[tx_hash]
        if self._trace_loader is None:
            return None
        with self._lock:
            if tx_hash not in self._traces:
                self._traces[tx_hash] = self._trace_loader(tx_hash)
            return self._traces[tx_hash]

    def internal_transfers(self, tx_hash: str) -> tuple[InternalTransfer, ...]:
        if tx_hash in self._internal:
            return self._internal[tx_hash]
        if self._internal_loader is None:
            return ()
        with self._lock:
            if tx_hash not in self._internal:
                self._internal[tx_hash] = tuple(self._internal_loader(tx_hash))
            return self._internal[tx_hash]

    def timestamp_of(self, tx: Transaction) -> int:
        return self.block(tx.block_number).timestamp

    def to_usd(self, amount: int, timestamp: int) -> Decimal:
        return wei_to_usd(amount, timestamp, self.prices)
