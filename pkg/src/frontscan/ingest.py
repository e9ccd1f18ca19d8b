"""Loading chain snapshots from NDJSON fixtures or a JSON-RPC node.

Fixture records are one JSON object per line, tagged by ``kind``:

``block``     number, timestamp, miner, gas_limit, gas_used, transactions[]
``log``       block_number, tx_hash, tx_index, log_index, address, topics[], data
``code``      address, code
``trace``     tx_hash, opcodes[], terminal, calls[]
``internal``  parent_tx, from, to, value
``price``     date (ISO), eth_usd (decimal string)

Integers are ``0x`` hex strings, byte strings are ``0x`` hex. See
``docs/fixture-schema.md`` for every field.
"""

from __future__ import annotations

import json
import logging
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import IO, Iterable, Iterator, Optional, Protocol, Sequence, runtime_checkable

from Crypto.Hash import keccak

from .chain import (
    Address,
    Block,
    ChainSnapshot,
    ExecutionTrace,
    InternalTransfer,
    PriceTable,
    Terminal,
    Transaction,
    TransferEvent,
    TxStatus,
    check_hash,
)
from .exceptions import DataError

log = logging.getLogger(__name__)


def keccak256(data: bytes) -> bytes:
    h = keccak.new(digest_bits=256)
    h.update(data)
    return h.digest()


TRANSFER_TOPIC = "0x" + keccak256(b"Transfer(address,address,uint256)").hex()


@dataclass(frozen=True)
class RawLog:
    tx_hash: str
    log_index: int
    address: Address
    topics: tuple[str, ...]
    data: bytes
    block_number: int = 0
    tx_index: int = 0

    def __post_init__(self):
        if len(self.topics) > 4:
            raise ValueError("a log carries at most 4 topics")


def _word_to_address(word: str) -> Address:
    raw = bytes.fromhex(word[2:])
    if len(raw) != 32:
        raise DataError("malformed Transfer log: topic is not a 32-byte word")
    return Address(raw[12:])


def decode_transfer_event(raw: RawLog, gas_price: int = 0) -> Optional[TransferEvent]:
    """Decode a canonical ERC-20 ``Transfer`` log; ``None`` for any other event.

    Only the layout with sender and receiver as indexed topics and the amount
    as the single data word is accepted.
    """
    if not raw.topics or raw.topics[0].lower() != TRANSFER_TOPIC:
        return None
    if len(raw.topics) != 3 or len(raw.data) != 32:
        raise DataError(
            f"malformed Transfer log {raw.tx_hash}:{raw.log_index} "
            f"({len(raw.topics)} topics, {len(raw.data)} data bytes)"
        )
    return TransferEvent(
        s=_word_to_address(raw.topics[1]),
        r=_word_to_address(raw.topics[2]),
        a=int.from_bytes(raw.data, "big"),
        c=raw.address,
        h=raw.tx_hash,
        i=raw.tx_index,
        g=gas_price,
        block_number=raw.block_number,
        log_index=raw.log_index,
    )


def encode_transfer_event(
    sender: Address,
    receiver: Address,
    amount: int,
    token: Address,
    tx_hash: str,
    log_index: int,
    block_number: int = 0,
    tx_index: int = 0,
) -> RawLog:
    def word(addr: Address) -> str:
        return "0x" + (b"\x00" * 12 + addr.to_bytes()).hex()

    return RawLog(
        tx_hash=tx_hash,
        log_index=log_index,
        address=token,
        topics=(TRANSFER_TOPIC, word(sender), word(receiver)),
        data=amount.to_bytes(32, "big"),
        block_number=block_number,
        tx_index=tx_index,
    )


@runtime_checkable
class DataSource(Protocol):
    """What :func:`load_snapshot` needs from a chain backend.

    Repeated calls with equal arguments must return equal results.
    """

    def get_block(self, number: int) -> Optional[Block]: ...

    def get_logs(self, from_block: int, to_block: int) -> Sequence[RawLog]: ...

    def get_code(self, address: Address) -> bytes: ...

    def get_trace(self, tx_hash: str) -> Optional[ExecutionTrace]: ...

    def get_internal_transfers(self, tx_hash: str) -> Sequence[InternalTransfer]: ...


# -- hex helpers -------------------------------------------------------------


def to_hex(value: int) -> str:
    return hex(value)


def from_hex(value) -> int:
    if isinstance(value, int):
        return value
    if not isinstance(value, str) or not value.startswith("0x"):
        raise ValueError(f"expected 0x-prefixed hex, got {value!r}")
    return int(value, 16)


def bytes_to_hex(data: bytes) -> str:
    return "0x" + data.hex()


def hex_to_bytes(value: str) -> bytes:
    if not isinstance(value, str) or not value.startswith("0x"):
        raise ValueError(f"expected 0x-prefixed hex, got {value!r}")
    return bytes.fromhex(value[2:])


# -- fixture (de)serialization ----------------------------------------------


def tx_to_record(tx: Transaction) -> dict:
    return {
        "hash": tx.hash,
        "tx_index": to_hex(tx.tx_index),
        "from": tx.sender,
        "to": tx.receiver,
        "value": to_hex(tx.value),
        "gas_limit": to_hex(tx.gas_limit),
        "gas_used": to_hex(tx.gas_used),
        "gas_price": to_hex(tx.gas_price),
        "input": bytes_to_hex(tx.input),
        "status": tx.status.value,
    }


def tx_from_record(rec: dict, block_number: int) -> Transaction:
    return Transaction(
        hash=check_hash(rec["hash"]),
        block_number=block_number,
        tx_index=from_hex(rec["tx_index"]),
        sender=Address(rec["from"]),
        receiver=Address(rec["to"]) if rec.get("to") else None,
        value=from_hex(rec["value"]),
        gas_limit=from_hex(rec["gas_limit"]),
        gas_used=from_hex(rec["gas_used"]),
        gas_price=from_hex(rec["gas_price"]),
        input=hex_to_bytes(rec.get("input", "0x")),
        status=TxStatus(rec.get("status", "success")),
    )


def block_to_record(block: Block) -> dict:
    return {
        "kind": "block",
        "number": to_hex(block.number),
        "timestamp": to_hex(block.timestamp),
        "miner": block.miner,
        "gas_limit": to_hex(block.gas_limit),
        "gas_used": to_hex(block.gas_used),
        "transactions": [tx_to_record(tx) for tx in block.transactions],
    }


def block_from_record(rec: dict) -> Block:
    number = from_hex(rec["number"])
    return Block(
        number=number,
        timestamp=from_hex(rec["timestamp"]),
        miner=Address(rec["miner"]),
        gas_limit=from_hex(rec["gas_limit"]),
        gas_used=from_hex(rec["gas_used"]),
        transactions=tuple(tx_from_record(t, number) for t in rec.get("transactions", ())),
    )


def log_to_record(raw: RawLog) -> dict:
    return {
        "kind": "log",
        "block_number": to_hex(raw.block_number),
        "tx_hash": raw.tx_hash,
        "tx_index": to_hex(raw.tx_index),
        "log_index": to_hex(raw.log_index),
        "address": raw.address,
        "topics": list(raw.topics),
        "data": bytes_to_hex(raw.data),
    }


def log_from_record(rec: dict) -> RawLog:
    return RawLog(
        tx_hash=check_hash(rec["tx_hash"]),
        log_index=from_hex(rec["log_index"]),
        address=Address(rec["address"]),
        topics=tuple(str(t).lower() for t in rec.get("topics", ())),
        data=hex_to_bytes(rec.get("data", "0x")),
        block_number=from_hex(rec["block_number"]),
        tx_index=from_hex(rec["tx_index"]),
    )


def trace_to_record(trace: ExecutionTrace) -> dict:
    rec = {
        "kind": "trace",
        "tx_hash": trace.tx_hash,
        "opcodes": list(trace.opcodes),
        "terminal": trace.terminal.value,
    }
    if trace.calls:
        rec["calls"] = list(trace.calls)
    return rec


def trace_from_record(rec: dict) -> ExecutionTrace:
    return ExecutionTrace(
        tx_hash=check_hash(rec["tx_hash"]),
        opcodes=tuple(rec.get("opcodes", ())),
        terminal=Terminal(rec.get("terminal", "normal")),
        calls=tuple(Address(a) for a in rec.get("calls", ())),
    )


def internal_to_record(t: InternalTransfer) -> dict:
    return {"kind": "internal", "parent_tx": t.parent_tx, "from": t.sender, "to": t.to, "value": to_hex(t.value)}


def internal_from_record(rec: dict) -> InternalTransfer:
    return InternalTransfer(
        parent_tx=check_hash(rec["parent_tx"]),
        sender=Address(rec["from"]),
        to=Address(rec["to"]),
        value=from_hex(rec["value"]),
    )


def dump_record(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


class FixtureSource:
    """In-memory :class:`DataSource` backed by an NDJSON fixture."""

    def __init__(self):
        self.blocks: dict[int, Block] = {}
        self.logs: list[RawLog] = []
        self.code: dict[Address, bytes] = {}
        self.traces: dict[str, ExecutionTrace] = {}
        self.internal: dict[str, list[InternalTransfer]] = defaultdict(list)
        self.prices: list[tuple[str, Decimal]] = []

    @classmethod
    def from_path(cls, path: "str | Path") -> "FixtureSource":
        path = Path(path)
        with path.open("r", encoding="utf-8") as fh:
            return cls.from_lines(fh, name=str(path))

    @classmethod
    def from_lines(cls, lines: Iterable[str], name: str = "<fixture>") -> "FixtureSource":
        src = cls()
        for lineno, line in enumerate(lines, 1):
            line = line.strip()
            if not line:
                continue
            try:
                src.add_record(json.loads(line))
            except DataError as exc:
                raise DataError(f"{name}:{lineno}: {exc}") from exc
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{name}:{lineno}: malformed record: {exc}") from exc
        return src

    def add_record(self, rec: dict) -> None:
        kind = rec.get("kind")
        if kind == "block":
            block = block_from_record(rec)
            if block.number in self.blocks:
                raise DataError(f"duplicate block {block.number}")
            self.blocks[block.number] = block
        elif kind == "log":
            self.logs.append(log_from_record(rec))
        elif kind == "code":
            self.code[Address(rec["address"])] = hex_to_bytes(rec["code"])
        elif kind == "trace":
            trace = trace_from_record(rec)
            self.traces[trace.tx_hash] = trace
        elif kind == "internal":
            t = internal_from_record(rec)
            self.internal[t.parent_tx].append(t)
        elif kind == "price":
            self.prices.append((rec["date"], Decimal(rec["eth_usd"])))
        else:
            raise DataError(f"unknown record kind {kind!r}")

    def get_block(self, number: int) -> Optional[Block]:
        return self.blocks.get(number)

    def get_logs(self, from_block: int, to_block: int) -> list[RawLog]:
        return [lg for lg in self.logs if from_block <= lg.block_number <= to_block]

    def get_code(self, address: Address) -> bytes:
        return self.code.get(address, b"")

    def get_trace(self, tx_hash: str) -> Optional[ExecutionTrace]:
        return self.traces.get(tx_hash)

    def get_internal_transfers(self, tx_hash: str) -> list[InternalTransfer]:
        return list(self.internal.get(tx_hash, ()))

    def get_prices(self) -> Optional[PriceTable]:
        return PriceTable.from_pairs(self.prices) if self.prices else None

    def records(self) -> Iterator[dict]:
        """Every record in canonical order (prices, blocks, logs, code, internals, traces)."""
        for d, rate in sorted(self.prices):
            yield {"kind": "price", "date": d, "eth_usd": str(rate)}
        for n in sorted(self.blocks):
            yield block_to_record(self.blocks[n])
        for lg in sorted(self.logs, key=lambda x: (x.block_number, x.tx_index, x.log_index)):
            yield log_to_record(lg)
        for addr in sorted(self.code):
            yield {"kind": "code", "address": addr, "code": bytes_to_hex(self.code[addr])}
        for h in sorted(self.internal):
            for t in self.internal[h]:
                yield internal_to_record(t)
        for h in sorted(self.traces):
            yield trace_to_record(self.traces[h])

    def write(self, fh: IO[str]) -> None:
        for rec in self.records():
            fh.write(dump_record(rec) + "\n")


def read_code_map(path: "str | Path") -> dict[Address, bytes]:
    """Code records from any NDJSON file; other record kinds are skipped."""
    code: dict[Address, bytes] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if rec.get("kind") == "code":
                    code[Address(rec["address"])] = hex_to_bytes(rec["code"])
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed record: {exc}") from exc
    return code


def load_prices_csv(path: "str | Path") -> PriceTable:
    """Read ``date,eth_usd`` rows (header optional)."""
    import csv

    pairs = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().lower() == "date":
                continue
            pairs.append((row[0].strip(), row[1].strip()))
    try:
        return PriceTable.from_pairs(pairs)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


# -- JSON-RPC ----------------------------------------------------------------


class JsonRpcSource:
    """:class:`DataSource` over an Ethereum node's JSON-RPC interface.

    Uses ``eth_getBlockByNumber`` and receipts for blocks, ``eth_getLogs`` for
    Transfer logs, ``eth_getCode`` and ``debug_traceTransaction`` (struct logs
    for opcodes, ``callTracer`` for internal value transfers). Requests are
    sent as JSON-RPC batches of at most ``batch_size`` calls.
    """

    concurrent_safe = True

    def __init__(self, url: str, batch_size: int = 50, retries: int = 3, timeout: float = 30.0, session=None):
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        self.url = url
        self.batch_size = batch_size
        self.retries = retries
        self.timeout = timeout
        if session is None:
            import requests

            session = requests.Session()
        self.session = session

    def _post(self, payload):
        last_exc = None
        for attempt in range(self.retries + 1):
            try:
                resp = self.session.post(self.url, json=payload, timeout=self.timeout)
                resp.raise_for_status()
                return resp.json()
            except Exception as exc:  # transport errors of any client library
                last_exc = exc
                log.warning("rpc request failed (attempt %d/%d): %s", attempt + 1, self.retries + 1, exc)
                if attempt < self.retries:
                    time.sleep(min(2.0, 0.1 * 2**attempt))
        raise DataError(f"rpc request to {self.url} failed: {last_exc}")

    def batch(self, calls: Sequence[tuple[str, list]]) -> list:
        results: list = []
        for start in range(0, len(calls), self.batch_size):
            chunk = calls[start : start + self.batch_size]
            payload = [{"jsonrpc": "2.0", "id": i, "method": m, "params": p} for i, (m, p) in enumerate(chunk)]
            reply = self._post(payload)
            if not isinstance(reply, list):
                reply = [reply]
            by_id = {r.get("id"): r for r in reply}
            for i, (method, _) in enumerate(chunk):
                r = by_id.get(i)
                if r is None:
                    raise DataError(f"rpc: no response for {method}")
                if r.get("error"):
                    raise DataError(f"rpc {method} error: {r['error']}")
                results.append(r.get("result"))
        return results

    def call(self, method: str, params: list):
        return self.batch([(method, params)])[0]

    def get_block(self, number: int) -> Optional[Block]:
        raw = self.call("eth_getBlockByNumber", [to_hex(number), True])
        if raw is None:
            return None
        txs = raw.get("transactions", [])
        receipts = self.batch([("eth_getTransactionReceipt", [t["hash"]]) for t in txs])
        out = []
        for t, rc in zip(txs, receipts):
            if rc is None:
                raise DataError(f"rpc: missing receipt for {t['hash']}")
            ok = from_hex(rc.get("status", "0x1")) == 1
            out.append(
                Transaction(
                    hash=check_hash(t["hash"]),
                    block_number=number,
                    tx_index=from_hex(t["transactionIndex"]),
                    sender=Address(t["from"]),
                    receiver=Address(t["to"]) if t.get("to") else None,
                    value=from_hex(t["value"]),
                    gas_limit=from_hex(t["gas"]),
                    gas_used=from_hex(rc["gasUsed"]),
                    gas_price=from_hex(t.get("gasPrice") or rc.get("effectiveGasPrice", "0x0")),
                    input=hex_to_bytes(t.get("input", "0x")),
                    status=TxStatus.SUCCESS if ok else TxStatus.REVERTED,
                )
            )
        return Block(
            number=number,
            timestamp=from_hex(raw["timestamp"]),
            miner=Address(raw["miner"]),
            gas_limit=from_hex(raw["gasLimit"]),
            gas_used=from_hex(raw["gasUsed"]),
            transactions=tuple(sorted(out, key=lambda x: x.tx_index)),
        )

    def get_logs(self, from_block: int, to_block: int) -> list[RawLog]:
        raw = self.call(
            "eth_getLogs",
            [{"fromBlock": to_hex(from_block), "toBlock": to_hex(to_block), "topics": [TRANSFER_TOPIC]}],
        )
        return [
            RawLog(
                tx_hash=check_hash(r["transactionHash"]),
                log_index=from_hex(r["logIndex"]),
                address=Address(r["address"]),
                topics=tuple(t.lower() for t in r["topics"]),
                data=hex_to_bytes(r["data"]),
                block_number=from_hex(r["blockNumber"]),
                tx_index=from_hex(r["transactionIndex"]),
            )
            for r in raw or ()
        ]

    def get_code(self, address: Address) -> bytes:
        return hex_to_bytes(self.call("eth_getCode", [address, "latest"]) or "0x")

    def get_trace(self, tx_hash: str) -> Optional[ExecutionTrace]:
        res, frames = self.batch(
            [
                ("debug_traceTransaction", [tx_hash, {"disableStorage": True, "disableMemory": True, "disableStack": True}]),
                ("debug_traceTransaction", [tx_hash, {"tracer": "callTracer"}]),
            ]
        )
        if res is None:
            return None
        calls: list[Address] = []

        def walk(frame):
            for sub in frame.get("calls", ()) or ():
                if sub.get("to"):
                    calls.append(Address(sub["to"]))
                walk(sub)

        if frames:
            walk(frames)
        ops = tuple(s["op"] for s in res.get("structLogs", ()))
        terminal = Terminal.NORMAL
        if res.get("failed"):
            last = ops[-1] if ops else ""
            error = (res.get("structLogs") or [{}])[-1].get("error", "") or ""
            if last == "REVERT":
                terminal = Terminal.REVERT
            elif last in ("INVALID", "opcode 0xfe not defined") or "invalid opcode" in str(error).lower():
                terminal = Terminal.ASSERT
            else:
                terminal = Terminal.OUT_OF_GAS
        return ExecutionTrace(tx_hash=check_hash(tx_hash), opcodes=ops, terminal=terminal, calls=tuple(calls))

    def get_internal_transfers(self, tx_hash: str) -> list[InternalTransfer]:
        res = self.call("debug_traceTransaction", [tx_hash, {"tracer": "callTracer"}])
        out: list[InternalTransfer] = []

        def walk(frame):
            for sub in frame.get("calls", ()) or ():
                value = from_hex(sub.get("value", "0x0") or "0x0")
                if value > 0 and sub.get("to"):
                    out.append(InternalTransfer(check_hash(tx_hash), Address(sub["from"]), Address(sub["to"]), value))
                walk(sub)

        if res:
            walk(res)
        return out

    def get_prices(self) -> Optional[PriceTable]:
        return None


def load_snapshot(
    source: DataSource,
    from_block: int,
    to_block: int,
    prices: Optional[PriceTable] = None,
    n_workers: int = 1,
    preload: Optional[bool] = None,
) -> ChainSnapshot:
    """Fetch ``[from_block, to_block]`` into an indexed :class:`ChainSnapshot`.

    Code, traces and internal transfers are preloaded for in-memory sources
    and fetched lazily otherwise.
    """
    if from_block > to_block:
        raise ValueError(f"from_block {from_block} > to_block {to_block}")
    numbers = range(from_block, to_block + 1)
    if n_workers > 1 and getattr(source, "concurrent_safe", False):
        with ThreadPoolExecutor(n_workers) as pool:
            fetched = list(pool.map(source.get_block, numbers))
    else:
        fetched = [source.get_block(n) for n in numbers]
    blocks = {}
    for n, block in zip(numbers, fetched):
        if block is None:
            raise DataError(f"missing block {n}")
        blocks[n] = block

    gas_price = {tx.hash: tx.gas_price for b in blocks.values() for tx in b.transactions}
    events: dict[int, list[TransferEvent]] = defaultdict(list)
    for raw in source.get_logs(from_block, to_block):
        if raw.tx_hash not in gas_price:
            raise DataError(f"log {raw.tx_hash}:{raw.log_index} references a transaction outside the snapshot")
        ev = decode_transfer_event(raw, gas_price[raw.tx_hash])
        if ev is not None:
            events[ev.block_number].append(ev)

    if prices is None and hasattr(source, "get_prices"):
        prices = source.get_prices()

    if preload is None:
        preload = isinstance(source, FixtureSource)
    if preload:
        hashes = list(gas_price)
        code = dict(getattr(source, "code", {})) if isinstance(source, FixtureSource) else {}
        traces = {h: t for h in hashes if (t := source.get_trace(h)) is not None}
        internal = {h: tuple(v) for h in hashes if (v := source.get_internal_transfers(h))}
        return ChainSnapshot(
            blocks,
            code=code,
            internal_transfers=internal,
            traces=traces,
            transfer_events=events,
            prices=prices,
            code_loader=None if isinstance(source, FixtureSource) else source.get_code,
        )
    return ChainSnapshot(
        blocks,
        transfer_events=events,
        prices=prices,
        code_loader=source.get_code,
        trace_loader=source.get_trace,
        internal_loader=source.get_internal_transfers,
    )


def load_fixture(path: "str | Path", from_block: Optional[int] = None, to_block: Optional[int] = None, prices=None) -> ChainSnapshot:
    """Convenience wrapper: read a fixture file and snapshot its full (or given) range."""
    src = FixtureSource.from_path(path)
    if not src.blocks:
        raise DataError(f"{path}: fixture contains no blocks")
    lo = min(src.blocks) if from_block is None else from_block
    hi = max(src.blocks) if to_block is None else to_block
    return load_snapshot(src, lo, hi, prices=prices)
