"""Seeded synthetic chains with planted attacks and a ground-truth manifest.

The generator lays out scenarios over a block range, fills the remaining
space with benign traffic, and emits a :class:`FixtureSource` together with a
:class:`GroundTruthManifest`. A seed fully determines the fixture bytes.

Three markets are modelled:

* constant-product ETH/token exchanges, where sandwiches are planted;
* prize contracts paying the first caller that presents a preimage, where
  copy attacks are planted (see :mod:`frontscan.oracle`);
* lotteries paying the last investor once no one else invests for a while,
  where block-stuffing campaigns are planted.
"""

from __future__ import annotations

import datetime as dt
import json
import random
from dataclasses import dataclass, field, replace
from decimal import Decimal
from pathlib import Path
from typing import Optional, Sequence

from .chain import (
    BASE_TX_GAS,
    WEI_PER_ETH,
    WEI_PER_GWEI,
    Address,
    Block,
    ExecutionTrace,
    InternalTransfer,
    Terminal,
    Transaction,
    TxStatus,
)
from .config import CHI_ADDRESS, GST2_ADDRESS
from .ingest import FixtureSource, encode_transfer_event
from .oracle import encode_claim, prize_code
from .suppression import CONTROLLED_LOOP, UNCONTROLLED_LOOP, Strategy

START_BLOCK = 10_000_000
START_TIME = 1_577_836_800  # 2020-01-01T00:00:00Z
BLOCK_TIME = 13
BLOCK_GAS_LIMIT = 12_500_000

SWAP_SELECTOR = bytes.fromhex("f39b5b9b")
SELL_SELECTOR = bytes.fromhex("95e3c50b")


# -- constant product market maker ---------------------------------------------


@dataclass(frozen=True)
class CpmmPool:
    """ETH/token reserves; ``fee_bps`` is charged on the input side."""

    reserve_x: int
    reserve_y: int
    fee_bps: int = 0

    def __post_init__(self):
        if self.reserve_x <= 0 or self.reserve_y <= 0:
            raise ValueError("pool reserves must be positive")
        if not 0 <= self.fee_bps < 10_000:
            raise ValueError("fee_bps must be in [0, 10000)")

    @property
    def k(self) -> int:
        return self.reserve_x * self.reserve_y


def _after_fee(amount: int, fee_bps: int) -> int:
    return amount * (10_000 - fee_bps) // 10_000


def cpmm_swap_x_for_y(pool: CpmmPool, dx: int) -> tuple[int, CpmmPool]:
    """Buy tokens with ``dx`` wei; the token output is floored."""
    if dx <= 0:
        raise ValueError(f"swap input must be positive, got {dx}")
    eff = _after_fee(dx, pool.fee_bps)
    dy = pool.reserve_y * eff // (pool.reserve_x + eff)
    return dy, replace(pool, reserve_x=pool.reserve_x + dx, reserve_y=pool.reserve_y - dy)


def cpmm_swap_y_for_x(pool: CpmmPool, dy: int) -> tuple[int, CpmmPool]:
    """Sell ``dy`` tokens for wei; the wei output is floored."""
    if dy <= 0:
        raise ValueError(f"swap input must be positive, got {dy}")
    eff = _after_fee(dy, pool.fee_bps)
    dx = pool.reserve_x * eff // (pool.reserve_y + eff)
    return dx, replace(pool, reserve_x=pool.reserve_x - dx, reserve_y=pool.reserve_y + dy)


@dataclass(frozen=True)
class SandwichOutcome:
    tokens_bought: int
    victim_tokens: int
    eth_out: int
    pool_after: CpmmPool

    def profit_before_fees(self, attacker_dx: int) -> int:
        return self.eth_out - attacker_dx


def sandwich_outcome(pool: CpmmPool, attacker_dx: int, victim_dx: int) -> SandwichOutcome:
    """Buy, let the victim buy, sell everything bought."""
    if attacker_dx <= 0:
        raise ValueError("attacker_dx must be positive")
    if victim_dx < 0:
        raise ValueError("victim_dx must be non-negative")
    bought, pool = cpmm_swap_x_for_y(pool, attacker_dx)
    victim_tokens = 0
    if victim_dx:
        victim_tokens, pool = cpmm_swap_x_for_y(pool, victim_dx)
    if bought == 0:
        return SandwichOutcome(0, victim_tokens, 0, pool)
    eth_out, pool = cpmm_swap_y_for_x(pool, bought)
    return SandwichOutcome(bought, victim_tokens, eth_out, pool)


# -- manifest ----------------------------------------------------------------


@dataclass
class PlantedAttack:
    """One planted scenario.

    ``key`` is the identifier a detector would give the attack (the
    ``id`` field of its record). Negative controls carry
    ``expected_detected=False``.
    """

    kind: str
    key: str
    tx_hashes: list[str]
    expected_profit: Optional[int] = None
    expected_detected: bool = True
    label: str = ""
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "key": self.key,
            "tx_hashes": list(self.tx_hashes),
            "expected_profit_wei": None if self.expected_profit is None else str(self.expected_profit),
            "expected_detected": self.expected_detected,
            "label": self.label,
            "details": self.details,
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "PlantedAttack":
        profit = rec.get("expected_profit_wei")
        return cls(
            kind=rec["kind"],
            key=rec["key"],
            tx_hashes=list(rec.get("tx_hashes", ())),
            expected_profit=None if profit is None else int(profit),
            expected_detected=bool(rec.get("expected_detected", True)),
            label=rec.get("label", ""),
            details=dict(rec.get("details", {})),
        )


@dataclass
class GroundTruthManifest:
    seed: Optional[int] = None
    from_block: Optional[int] = None
    to_block: Optional[int] = None
    planted: list[PlantedAttack] = field(default_factory=list)
    entities: list[dict] = field(default_factory=list)

    def positives(self, kind: Optional[str] = None) -> list[PlantedAttack]:
        return [p for p in self.planted if p.expected_detected and (kind is None or p.kind == kind)]

    def negatives(self, kind: Optional[str] = None) -> list[PlantedAttack]:
        return [p for p in self.planted if not p.expected_detected and (kind is None or p.kind == kind)]

    def kinds(self) -> set[str]:
        return {p.kind for p in self.planted}

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "from_block": self.from_block,
            "to_block": self.to_block,
            "planted": [p.to_dict() for p in self.planted],
            "entities": self.entities,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def write(self, path: "str | Path") -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def from_dict(cls, raw: dict) -> "GroundTruthManifest":
        return cls(
            seed=raw.get("seed"),
            from_block=raw.get("from_block"),
            to_block=raw.get("to_block"),
            planted=[PlantedAttack.from_dict(p) for p in raw.get("planted", ())],
            entities=list(raw.get("entities", ())),
        )

    @classmethod
    def load(cls, path: "str | Path") -> "GroundTruthManifest":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# -- chain builder -------------------------------------------------------------


@dataclass
class PendingTx:
    hash: str
    sender: Address
    receiver: Optional[Address]
    value: int = 0
    gas_limit: int = BASE_TX_GAS
    gas_used: int = BASE_TX_GAS
    gas_price: int = 0
    input: bytes = b""
    status: TxStatus = TxStatus.SUCCESS
    events: list = field(default_factory=list)  # (sender, receiver, amount, token)
    internals: list = field(default_factory=list)  # (sender, to, value)
    trace: Optional[ExecutionTrace] = None

    @property
    def fee(self) -> int:
        return self.gas_used * self.gas_price


@dataclass
class Market:
    exchange: Address
    token: Address
    pool: CpmmPool


@dataclass
class Entity:
    """An attacker identity: its accounts and the bots they drive."""

    accounts: list[Address]
    bots: list[Address]

    def to_dict(self) -> dict:
        return {"accounts": sorted(self.accounts), "bots": sorted(self.bots)}


class ChainBuilder:
    """Mutable staging area for a synthetic block range."""

    def __init__(
        self,
        seed: int = 0,
        n_blocks: int = 100,
        *,
        start_block: int = START_BLOCK,
        start_time: int = START_TIME,
        block_time: int = BLOCK_TIME,
        block_gas_limit: int = BLOCK_GAS_LIMIT,
    ):
        if n_blocks <= 0:
            raise ValueError("n_blocks must be positive")
        self.rng = random.Random(seed)
        self.seed = seed
        self.start_block = start_block
        self.start_time = start_time
        self.block_time = block_time
        self.block_gas_limit = block_gas_limit
        self.blocks: dict[int, list[PendingTx]] = {n: [] for n in range(start_block, start_block + n_blocks)}
        self.code: dict[Address, bytes] = {}
        self.miners = [self.address() for _ in range(4)]

    @property
    def end_block(self) -> int:
        return self.start_block + len(self.blocks) - 1

    def address(self) -> Address:
        return Address(self.rng.randbytes(20))

    def contract(self, code: Optional[bytes] = None) -> Address:
        addr = self.address()
        self.code[addr] = code if code is not None else b"\x60\x80\x60\x40" + self.rng.randbytes(self.rng.randint(40, 120))
        return addr

    def gwei(self, lo: int, hi: int) -> int:
        return self.rng.randint(lo, hi) * WEI_PER_GWEI

    def gas_used(self, block: int) -> int:
        return sum(t.gas_used for t in self.blocks[block])

    def add_tx(self, block: int, sender: Address, receiver: Optional[Address], **kw) -> PendingTx:
        if block not in self.blocks:
            raise ValueError(f"block {block} outside the builder's range")
        tx = PendingTx(hash="0x" + self.rng.randbytes(32).hex(), sender=sender, receiver=receiver, **kw)
        if self.gas_used(block) + tx.gas_used > self.block_gas_limit:
            raise ValueError(f"block {block} is out of gas")
        self.blocks[block].append(tx)
        return tx

    def timestamp(self, block: int) -> int:
        return self.start_time + (block - self.start_block) * self.block_time

    def price_records(self) -> list[tuple[str, Decimal]]:
        first = dt.datetime.fromtimestamp(self.timestamp(self.start_block), tz=dt.timezone.utc).date()
        last = dt.datetime.fromtimestamp(self.timestamp(self.end_block), tz=dt.timezone.utc).date()
        rate = Decimal(self.rng.randint(12_000, 40_000)) / 100
        out = []
        day = first
        while day <= last:
            out.append((day.isoformat(), rate))
            rate = max(Decimal("1.00"), rate + Decimal(self.rng.randint(-1_500, 1_500)) / 100)
            day += dt.timedelta(days=1)
        return out

    def build(self) -> FixtureSource:
        src = FixtureSource()
        src.prices = self.price_records()
        src.code = dict(self.code)
        for number, pending in self.blocks.items():
            txs = []
            log_index = 0
            for index, p in enumerate(pending):
                txs.append(
                    Transaction(
                        hash=p.hash,
                        block_number=number,
                        tx_index=index,
                        sender=p.sender,
                        receiver=p.receiver,
                        value=p.value,
                        gas_limit=p.gas_limit,
                        gas_used=p.gas_used,
                        gas_price=p.gas_price,
                        input=p.input,
                        status=p.status,
                    )
                )
                for s, r, a, c in p.events:
                    src.logs.append(encode_transfer_event(s, r, a, c, p.hash, log_index, number, index))
                    log_index += 1
                for s, r, v in p.internals:
                    src.internal[p.hash].append(InternalTransfer(p.hash, s, r, v))
                if p.trace is not None:
                    src.traces[p.hash] = p.trace
            src.blocks[number] = Block(
                number=number,
                timestamp=self.timestamp(number),
                miner=self.miners[(number - self.start_block) % len(self.miners)],
                gas_limit=self.block_gas_limit,
                gas_used=sum(t.gas_used for t in txs),
                transactions=tuple(txs),
            )
        return src

    # shared helpers

    def new_market(self, eth: Optional[int] = None, tokens: Optional[int] = None, fee_bps: int = 0) -> Market:
        eth = eth if eth is not None else self.rng.randint(500, 5_000) * WEI_PER_ETH
        tokens = tokens if tokens is not None else self.rng.randint(10_000, 1_000_000) * 10**18
        return Market(self.contract(), self.contract(), CpmmPool(eth, tokens, fee_bps))

    def new_entity(self, n_accounts: int = 1, n_bots: int = 1, shared_code: bool = False) -> Entity:
        accounts = [self.address() for _ in range(n_accounts)]
        code = None
        bots = []
        for _ in range(n_bots):
            if shared_code and code is not None:
                bots.append(self.contract(code))
            else:
                bots.append(self.contract())
                code = self.code[bots[-1]]
        return Entity(accounts, bots)


def _call_trace(tx: PendingTx, callee: Address, gas_token: Optional[str], tokens: tuple[Address, Address]) -> ExecutionTrace:
    ops = ["PUSH1", "MSTORE", "CALLDATALOAD", "CALL", "RETURNDATASIZE", "STOP"]
    calls = [callee]
    if gas_token == "GST2":
        calls.append(tokens[0])
    elif gas_token == "Chi":
        calls.append(tokens[1])
    elif gas_token == "Custom":
        ops[-1:-1] = ["CREATE2", "CALL", "SELFDESTRUCT", "CALL", "SELFDESTRUCT"]
    return ExecutionTrace(tx.hash, tuple(ops), Terminal.NORMAL, tuple(calls))


# -- insertion -----------------------------------------------------------------


def _swap_input(rng: random.Random, selector: bytes, amount: int) -> bytes:
    deadline = rng.randint(1_600_000_000, 1_700_000_000)
    return selector + amount.to_bytes(32, "big") + deadline.to_bytes(32, "big")


def plant_insertion_scenario(
    chain: ChainBuilder,
    block: int,
    market: Market,
    victim_dx: int,
    attacker_dx: int,
    gas_prices: tuple[int, int, int],
    *,
    entity: Optional[Entity] = None,
    direct: bool = False,
    gas_token: tuple[Optional[str], Optional[str]] = (None, None),
    sell_fraction: Optional[tuple[int, int]] = None,
    sell_before_victim: bool = False,
    gas_used: tuple[int, int, int] = (120_000, 110_000, 100_000),
    label: str = "sandwich",
    expect_detected: bool = True,
) -> PlantedAttack:
    """Append a buy, a victim buy and a sell-back to ``block``.

    The market's pool advances through the three swaps. ``sell_fraction``
    sells only part of the bought amount and ``sell_before_victim`` moves the
    back-run ahead of the victim; both exist to build near misses.
    """
    g1, gv, g2 = gas_prices
    if expect_detected and not g1 > gv >= g2:
        raise ValueError("gas prices must satisfy attacker buy > victim >= attacker sell")
    if attacker_dx <= 0:
        raise ValueError("attacker_dx must be positive")
    rng = chain.rng
    if entity is None:
        entity = chain.new_entity(1, 0 if direct else 1)
    account = entity.accounts[0]
    bot = None if direct else entity.bots[0]
    victim = chain.address()
    ex, token = market.exchange, market.token

    bought, pool = cpmm_swap_x_for_y(market.pool, attacker_dx)
    if bought == 0:
        raise ValueError("attacker_dx too small to buy any token")
    sold = bought if sell_fraction is None else bought * sell_fraction[0] // sell_fraction[1]

    def victim_leg(pool):
        tokens = 0
        if victim_dx:
            tokens, pool = cpmm_swap_x_for_y(pool, victim_dx)
        return tokens, pool

    def sell_leg(pool):
        return cpmm_swap_y_for_x(pool, sold)

    if sell_before_victim:
        eth_out, pool = sell_leg(pool)
        victim_tokens, pool = victim_leg(pool)
    else:
        victim_tokens, pool = victim_leg(pool)
        eth_out, pool = sell_leg(pool)
    market.pool = pool

    u1, uv, u2 = gas_used
    if direct:
        t1 = PendingTx("", account, ex, value=attacker_dx, gas_limit=u1 + 40_000, gas_used=u1, gas_price=g1,
                       input=_swap_input(rng, SWAP_SELECTOR, bought))
        t1.events.append((ex, account, bought, token))
        t2 = PendingTx("", account, ex, gas_limit=u2 + 40_000, gas_used=u2, gas_price=g2,
                       input=_swap_input(rng, SELL_SELECTOR, sold))
        t2.events.append((account, ex, sold, token))
        t2.internals.append((ex, account, eth_out))
    else:
        t1 = PendingTx("", account, bot, gas_limit=u1 + 60_000, gas_used=u1, gas_price=g1,
                       input=rng.randbytes(4) + rng.randbytes(64))
        t1.events.append((ex, bot, bought, token))
        t1.internals.append((bot, ex, attacker_dx))
        t2 = PendingTx("", account, bot, gas_limit=u2 + 60_000, gas_used=u2, gas_price=g2,
                       input=rng.randbytes(4) + rng.randbytes(64))
        t2.events.append((bot, ex, sold, token))
        t2.internals.append((ex, bot, eth_out))
    tv = PendingTx("", victim, ex, value=victim_dx, gas_limit=uv + 30_000, gas_used=uv, gas_price=gv,
                   input=_swap_input(rng, SWAP_SELECTOR, victim_tokens))
    tv.events.append((ex, victim, victim_tokens, token))

    order = [t1, t2, tv] if sell_before_victim else [t1, tv, t2]
    staged = []
    for p in order:
        staged.append(chain.add_tx(block, p.sender, p.receiver, value=p.value, gas_limit=p.gas_limit,
                                   gas_used=p.gas_used, gas_price=p.gas_price, input=p.input))
        staged[-1].events, staged[-1].internals = p.events, p.internals
    by_role = dict(zip(("a1", "a2", "v") if sell_before_victim else ("a1", "v", "a2"), staged))
    a1, v, a2 = by_role["a1"], by_role["v"], by_role["a2"]
    tokens = (GST2_ADDRESS, CHI_ADDRESS)
    for p, kind in ((a1, gas_token[0]), (a2, gas_token[1])):
        p.trace = _call_trace(p, ex if direct else bot, kind, tokens)

    gain = eth_out
    cost = attacker_dx + a1.fee + a2.fee
    first, second = gas_token
    usage = {(False, False): "None", (True, False): "FirstOnly", (False, True): "SecondOnly", (True, True): "Both"}[
        (first is not None, second is not None)
    ]
    return PlantedAttack(
        kind="insertion",
        key=f"{a1.hash}:{v.hash}:{a2.hash}",
        tx_hashes=[a1.hash, v.hash, a2.hash],
        expected_profit=gain - cost,
        expected_detected=expect_detected,
        label=label,
        details={
            "block_number": block,
            "exchange": ex,
            "token": token,
            "direct": direct,
            "attacker_dx_wei": str(attacker_dx),
            "victim_dx_wei": str(victim_dx),
            "tokens_bought": str(bought),
            "eth_out_wei": str(eth_out),
            "profit_before_fees_wei": str(eth_out - attacker_dx),
            "gain_wei": str(gain),
            "cost_wei": str(cost),
            "gas_token_usage": usage,
            "gas_token_kind": first or second,
        },
    )


def plant_competition_scenario(
    chain: ChainBuilder,
    block: int,
    market: Market,
    first: Entity,
    second: Entity,
    victim_dx: int,
) -> list[PlantedAttack]:
    """Two nested sandwiches around one victim: A1, B1, V, B2, A2.

    Besides the two intended attacks, B1 is itself sandwiched by A1/A2, so
    three triples are planted.
    """
    rng = chain.rng
    ex, token = market.exchange, market.token
    gv = chain.gwei(20, 60)
    ga1, gb1 = gv + 3 * WEI_PER_GWEI, gv + 2 * WEI_PER_GWEI
    gb2, ga2 = gv, gv - WEI_PER_GWEI
    a_dx, b_dx = rng.randint(2, 10) * WEI_PER_ETH, rng.randint(2, 10) * WEI_PER_ETH

    pool = market.pool
    a_bought, pool = cpmm_swap_x_for_y(pool, a_dx)
    b_bought, pool = cpmm_swap_x_for_y(pool, b_dx)
    v_tokens, pool = cpmm_swap_x_for_y(pool, victim_dx)
    b_out, pool = cpmm_swap_y_for_x(pool, b_bought)
    a_out, pool = cpmm_swap_y_for_x(pool, a_bought)
    market.pool = pool

    def leg(ent, price, bought, spent=0, earned=0, sell=False):
        bot, acct = ent.bots[0], ent.accounts[0]
        tx = chain.add_tx(block, acct, bot, gas_limit=180_000, gas_used=120_000, gas_price=price,
                          input=rng.randbytes(68))
        if sell:
            tx.events.append((bot, ex, bought, token))
            tx.internals.append((ex, bot, earned))
        else:
            tx.events.append((ex, bot, bought, token))
            tx.internals.append((bot, ex, spent))
        return tx

    a1 = leg(first, ga1, a_bought, spent=a_dx)
    b1 = leg(second, gb1, b_bought, spent=b_dx)
    v = chain.add_tx(block, chain.address(), ex, value=victim_dx, gas_limit=150_000, gas_used=110_000,
                     gas_price=gv, input=_swap_input(rng, SWAP_SELECTOR, v_tokens))
    v.events.append((ex, v.sender, v_tokens, token))
    b2 = leg(second, gb2, b_bought, earned=b_out, sell=True)
    a2 = leg(first, ga2, a_bought, earned=a_out, sell=True)

    def planted(t1, tv, t2, dx, out, label):
        cost = dx + t1.fee + t2.fee
        return PlantedAttack(
            kind="insertion",
            key=f"{t1.hash}:{tv.hash}:{t2.hash}",
            tx_hashes=[t1.hash, tv.hash, t2.hash],
            expected_profit=out - cost,
            label=label,
            details={"block_number": block, "exchange": ex, "token": token, "direct": False,
                     "gain_wei": str(out), "cost_wei": str(cost)},
        )

    return [
        planted(a1, v, a2, a_dx, a_out, "competition"),
        planted(b1, v, b2, b_dx, b_out, "competition"),
        planted(a1, b1, a2, a_dx, a_out, "competition_nested"),
    ]


# -- displacement ----------------------------------------------------------------


def plant_displacement_scenario(
    chain: ChainBuilder,
    block: int,
    reward: int,
    *,
    secret: Optional[bytes] = None,
    entity: Optional[Entity] = None,
    victim_block: Optional[int] = None,
    attacker_gas: tuple[int, int] = (90_000, 0),
    victim_gas_price: Optional[int] = None,
    header_size: int = 36,
    mode: str = "attack",
) -> list[PlantedAttack]:
    """A claim on a prize contract and, unless ``mode`` says otherwise, a copy of it.

    ``attacker_gas`` is ``(gas_used, gas_price)``; a zero price picks one
    above the victim's. Modes:

    ``attack``         copy wrapped in a bot call, outbidding the victim
    ``victim_only``    the claim alone; nothing is planted
    ``low_ratio``      bot payload so large the victim input is under a quarter of it
    ``low_gas``        the copy does not outbid the victim
    ``same_sender``    the victim account copies its own claim
    ``benign_copy``    a copied input that does not touch a prize contract
    """
    rng = chain.rng
    victim_block = block if victim_block is None else victim_block
    secret = secret if secret is not None else rng.randbytes(32)
    prize = chain.contract(prize_code(secret))
    victim = chain.address()
    gv = victim_gas_price if victim_gas_price is not None else chain.gwei(10, 80)
    claim = encode_claim(prize, secret)

    if mode == "victim_only":
        tx = chain.add_tx(victim_block, victim, prize, gas_limit=80_000, gas_used=52_000, gas_price=gv, input=claim)
        tx.internals.append((prize, victim, reward))
        return []

    if entity is None:
        entity = chain.new_entity(1, 1)
    account, bot = entity.accounts[0], entity.bots[0]
    if mode == "same_sender":
        account = victim
    used, ga = attacker_gas
    if ga == 0:
        ga = gv + chain.gwei(1, 40) if mode != "low_gas" else gv
    if mode == "low_ratio":
        header_size = 4 * 80
    header = rng.randbytes(header_size)

    if mode == "benign_copy":
        # a contract call copied verbatim into a bot call, no prize involved
        target = chain.contract()
        payload = rng.randbytes(4) + rng.randbytes(96)
        t_a = chain.add_tx(block, account, bot, gas_limit=used + 50_000, gas_used=used, gas_price=ga, input=header + payload)
        t_v = chain.add_tx(victim_block, victim, target, gas_limit=90_000, gas_used=60_000, gas_price=gv, input=payload)
        return [PlantedAttack("displacement", f"{t_a.hash}:{t_v.hash}", [t_a.hash, t_v.hash], None, False, "benign_copy")]

    t_a = chain.add_tx(block, account, bot, gas_limit=used + 50_000, gas_used=used, gas_price=ga, input=header + claim)
    t_a.internals.extend([(prize, bot, reward), (bot, account, reward)])
    t_v = chain.add_tx(victim_block, victim, prize, gas_limit=80_000, gas_used=30_000, gas_price=gv, input=claim,
                       status=TxStatus.REVERTED)
    detected = mode == "attack"
    return [
        PlantedAttack(
            kind="displacement",
            key=f"{t_a.hash}:{t_v.hash}",
            tx_hashes=[t_a.hash, t_v.hash],
            expected_profit=reward - t_a.fee,
            expected_detected=detected,
            label="copy" if detected else mode,
            details={
                "block_number": block,
                "prize_contract": prize,
                "gain_wei": str(reward),
                "cost_wei": str(t_a.fee),
                "gas_price_delta_wei": str(ga - gv),
                "block_delta": victim_block - block,
            },
        )
    ]


# -- suppression -----------------------------------------------------------------


def stuffing_trace(tx_hash: str, strategy: Strategy, rng: random.Random) -> ExecutionTrace:
    loops = rng.randint(11, 40)
    if strategy is Strategy.CONTROLLED_GAS_LOOP:
        ops = ("PUSH1", "MSTORE") + CONTROLLED_LOOP * loops + ("POP", "STOP")
        return ExecutionTrace(tx_hash, ops, Terminal.NORMAL)
    if strategy is Strategy.UNCONTROLLED_GAS_LOOP:
        ops = ("PUSH1", "MSTORE") + UNCONTROLLED_LOOP * loops + ("REVERT",)
        return ExecutionTrace(tx_hash, ops, Terminal.REVERT)
    return ExecutionTrace(tx_hash, ("PUSH1", "CALLDATALOAD", "ISZERO", "INVALID"), Terminal.ASSERT)


def suppression_span(outcomes: Sequence[str], blocks_per_round: Sequence[int]) -> int:
    """Blocks used by a campaign: stuffed blocks plus one closing block per round that needs it."""
    closing = sum(1 for i, r in enumerate(outcomes) if r != "unclaimed")
    return sum(blocks_per_round) + closing


def plant_suppression_scenario(
    chain: ChainBuilder,
    block: int,
    prize: int,
    outcomes: Sequence[str],
    strategy: Strategy,
    *,
    blocks_per_round: Optional[Sequence[int]] = None,
    txs_per_block: Optional[Sequence[Sequence[int]]] = None,
    n_accounts: int = 2,
    investment: Optional[int] = None,
) -> PlantedAttack:
    """Lottery campaign: per round, invest then stuff consecutive blocks.

    ``outcomes`` items are ``"success"`` (claim the prize in the block
    after the stuffing; last round only), ``"interrupted"`` (an outsider
    invests in the block after the stuffing) or ``"unclaimed"`` (nothing
    happens afterwards; last round only).
    """
    if not outcomes:
        raise ValueError("outcomes must name at least one round")
    for i, r in enumerate(outcomes):
        if r not in ("success", "interrupted", "unclaimed"):
            raise ValueError(f"unknown round outcome {r!r}")
        if r != "interrupted" and i != len(outcomes) - 1:
            raise ValueError(f"{r!r} can only end the campaign")
    rng = chain.rng
    strategy = Strategy(strategy)
    if blocks_per_round is None:
        blocks_per_round = [rng.randint(2, 4) for _ in outcomes]
    if any(n < 2 for n in blocks_per_round):
        raise ValueError("each round must stuff at least 2 consecutive blocks")
    if txs_per_block is None:
        txs_per_block = [[rng.randint(2, 5) for _ in range(n)] for n in blocks_per_round]

    lottery = chain.contract()
    bot = chain.contract()
    accounts = [chain.address() for _ in range(max(1, n_accounts))]
    investor = accounts[0]
    selector = rng.randbytes(4)
    stuff_price = chain.gwei(30, 120)
    cost = 0
    rounds = []
    all_hashes = []
    n = block
    gain = 0
    for r, outcome in enumerate(outcomes):
        amount = investment if investment is not None else rng.randint(1, 20) * WEI_PER_ETH // 10
        inv = chain.add_tx(n, investor, lottery, value=amount, gas_limit=120_000, gas_used=70_000,
                           gas_price=stuff_price + WEI_PER_GWEI, input=rng.randbytes(4))
        cost += amount + inv.fee
        stuffing = []
        for counts in txs_per_block[r]:
            if counts < 1:
                raise ValueError("stuffed blocks need at least one transaction")
            room = chain.block_gas_limit - chain.gas_used(n)
            per = room // counts
            for j in range(counts):
                used = per if strategy is Strategy.ASSERT else per - per // 200
                sender = accounts[(j + len(stuffing)) % len(accounts)]
                tx = chain.add_tx(n, sender, bot, gas_limit=per, gas_used=used, gas_price=stuff_price,
                                  input=selector + rng.randbytes(32),
                                  status=TxStatus.ASSERT_FAILED if strategy is Strategy.ASSERT else
                                  (TxStatus.REVERTED if strategy is Strategy.UNCONTROLLED_GAS_LOOP else TxStatus.SUCCESS))
                tx.trace = stuffing_trace(tx.hash, strategy, rng)
                stuffing.append(tx)
                cost += tx.fee
            n += 1
        closed_by = "unclaimed"
        if outcome == "interrupted":
            out = chain.add_tx(n, chain.address(), lottery, value=amount, gas_limit=120_000, gas_used=70_000,
                               gas_price=chain.gwei(10, 40), input=rng.randbytes(4))
            closed_by = out.hash
            n += 1
        elif outcome == "success":
            claim = chain.add_tx(n, investor, lottery, gas_limit=80_000, gas_used=45_000,
                                 gas_price=chain.gwei(10, 40), input=rng.randbytes(4))
            claim.internals.append((lottery, investor, prize))
            closed_by = claim.hash
            gain = prize
            n += 1
        rounds.append(
            {
                "investment_tx": inv.hash,
                "stuffing_txs": [t.hash for t in stuffing],
                "status": "Success" if outcome == "success" else "Failure",
                "closed_by": closed_by,
            }
        )
        all_hashes += [inv.hash] + [t.hash for t in stuffing]

    return PlantedAttack(
        kind="suppression",
        key=f"{lottery}:{rounds[0]['investment_tx']}",
        tx_hashes=all_hashes,
        expected_profit=gain - cost,
        label=f"lottery_{len(rounds)}_rounds",
        details={
            "victim_contract": lottery,
            "bot_contract": bot,
            "attacker_accounts": sorted(accounts),
            "strategy": strategy.value,
            "status": rounds[-1]["status"],
            "rounds": rounds,
            "blocks_stuffed": sum(blocks_per_round),
            "tx_count": sum(len(r["stuffing_txs"]) + 1 for r in rounds),
            "gain_wei": str(gain),
            "cost_wei": str(cost),
        },
    )


def plant_stuffing_control(chain: ChainBuilder, block: int, mode: str) -> PlantedAttack:
    """Stuffing-like traffic that must not be reported.

    ``isolated``: one stuffed block. ``plain_member``: two blocks whose
    groups each contain a 21000-gas transfer. ``low_ratio``: two blocks at
    98% gas usage. ``no_investment``: two stuffed blocks with no investment.
    """
    rng = chain.rng
    lottery, bot = chain.contract(), chain.contract()
    accounts = [chain.address(), chain.address()]
    price = chain.gwei(30, 90)
    n_blocks = 1 if mode == "isolated" else 2
    inv = None
    if mode != "no_investment":
        inv = chain.add_tx(block, accounts[0], lottery, value=WEI_PER_ETH // 10, gas_limit=120_000, gas_used=70_000,
                           gas_price=price, input=rng.randbytes(4))
    hashes = [inv.hash] if inv else []
    for n in range(block, block + n_blocks):
        if mode == "plain_member":
            plain = chain.add_tx(n, accounts[1], bot, value=1, gas_limit=BASE_TX_GAS, gas_used=BASE_TX_GAS, gas_price=price)
            hashes.append(plain.hash)
        room = chain.block_gas_limit - chain.gas_used(n)
        per = room // 3
        for j in range(3):
            used = per * 98 // 100 if mode == "low_ratio" else per - per // 200
            tx = chain.add_tx(n, accounts[j % 2], bot, gas_limit=per, gas_used=used, gas_price=price,
                              input=rng.randbytes(36))
            tx.trace = stuffing_trace(tx.hash, Strategy.CONTROLLED_GAS_LOOP, rng)
            hashes.append(tx.hash)
    key = f"{lottery}:{inv.hash}" if inv else f"{lottery}:none"
    return PlantedAttack("suppression", key, hashes, None, False, f"control_{mode}", {"bot_contract": bot})


# -- background --------------------------------------------------------------------


class Background:
    """Benign traffic: plain transfers, contract calls and token trades by one-off users."""

    def __init__(self, chain: ChainBuilder, n_dapps: int = 40, n_markets: int = 6):
        self.chain = chain
        self.dapps = [chain.contract() for _ in range(n_dapps)]
        self.markets = [chain.new_market() for _ in range(n_markets)]

    def fill(self, block: int, count: int, trades: bool = True) -> None:
        chain, rng = self.chain, self.chain.rng
        for _ in range(count):
            roll = rng.random()
            room = chain.block_gas_limit - chain.gas_used(block)
            price = chain.gwei(1, 100)
            if roll < 0.4 or room < 400_000:
                if room < BASE_TX_GAS:
                    return
                chain.add_tx(block, chain.address(), chain.address(), value=rng.randint(1, 10**19),
                             gas_price=price)
            elif roll < 0.75 or not trades:
                limit = rng.randint(50_000, 300_000)
                used = limit * rng.randint(30, 90) // 100
                chain.add_tx(block, chain.address(), rng.choice(self.dapps), value=0, gas_limit=limit,
                             gas_used=used, gas_price=price, input=rng.randbytes(rng.randint(4, 200)))
            else:
                m = rng.choice(self.markets)
                user = chain.address()
                if rng.random() < 0.5:
                    dx = rng.randint(1, 5_000) * WEI_PER_ETH // 100
                    dy, m.pool = cpmm_swap_x_for_y(m.pool, dx)
                    tx = chain.add_tx(block, user, m.exchange, value=dx, gas_limit=150_000, gas_used=95_000,
                                      gas_price=price, input=_swap_input(rng, SWAP_SELECTOR, dy))
                    tx.events.append((m.exchange, user, dy, m.token))
                else:
                    dy = m.pool.reserve_y * rng.randint(1, 50) // 10_000
                    dx, m.pool = cpmm_swap_y_for_x(m.pool, dy)
                    tx = chain.add_tx(block, user, m.exchange, gas_limit=150_000, gas_used=90_000,
                                      gas_price=price, input=_swap_input(rng, SELL_SELECTOR, dy))
                    tx.events.append((user, m.exchange, dy, m.token))
                    tx.internals.append((m.exchange, user, dx))


# -- full fixture ------------------------------------------------------------------


PLANT_KINDS = ("insertion", "displacement", "suppression", "competition")


@dataclass
class _Job:
    span: int
    run: object  # callable(first_block) -> list[PlantedAttack]
    exclusive: bool = True  # no background token trades in its blocks


def generate_fixture(
    seed: int,
    n_blocks: int,
    plant: Optional[dict] = None,
    *,
    negatives: bool = True,
    background: tuple[int, int] = (2, 8),
    start_block: int = START_BLOCK,
) -> tuple[FixtureSource, GroundTruthManifest]:
    """Lay out planted scenarios and benign traffic over ``n_blocks`` blocks."""
    plant = dict(plant or {})
    unknown = set(plant) - set(PLANT_KINDS)
    if unknown:
        raise ValueError(f"unknown plant kinds: {sorted(unknown)}")
    chain = ChainBuilder(seed, n_blocks, start_block=start_block)
    rng = chain.rng
    bg = Background(chain)
    markets = [chain.new_market() for _ in range(8)]

    # attacker identities: some bots share bytecode, some accounts share bots
    entities = [
        chain.new_entity(rng.randint(1, 2), rng.randint(1, 3), shared_code=rng.random() < 0.5) for _ in range(10)
    ]
    direct_traders = [chain.new_entity(1, 0) for _ in range(2)]

    jobs: list[_Job] = []

    def insertion_job(**kw):
        def run(b, kw=dict(kw)):
            ent = kw.pop("entity", None)
            direct = kw.pop("direct", False)
            if ent is None:
                ent = rng.choice(direct_traders if direct else entities)
            gv = chain.gwei(20, 100)
            g1 = gv + chain.gwei(1, 50)
            g2 = gv - chain.gwei(0, 10)
            gas = kw.pop("gas_prices", None) or (g1, gv, g2)
            gt = kw.pop("gas_token", None)
            if gt is None:
                gt = rng.choice([(None, None)] * 3 + [("GST2", None), (None, "Chi"), ("Chi", "Chi"), ("Custom", None)])
            return [
                plant_insertion_scenario(
                    chain, b, rng.choice(markets),
                    victim_dx=rng.randint(1, 500) * WEI_PER_ETH // 10,
                    attacker_dx=rng.randint(5, 200) * WEI_PER_ETH // 10,
                    gas_prices=gas, entity=ent, direct=direct, gas_token=gt, **kw,
                )
            ]
        return _Job(1, run)

    for i in range(plant.get("insertion", 0)):
        jobs.append(insertion_job(direct=(i % 10 == 9)))
    for _ in range(plant.get("competition", 0)):
        def run(b):
            a, c = rng.sample(entities, 2)
            return plant_competition_scenario(chain, b, rng.choice(markets), a, c, rng.randint(5, 50) * WEI_PER_ETH)
        jobs.append(_Job(1, run))

    for _ in range(plant.get("displacement", 0)):
        delta = rng.choice([0, 0, 0, 1])

        def run(b, delta=delta):
            return plant_displacement_scenario(
                chain, b, rng.randint(1, 50) * WEI_PER_ETH // 10, entity=rng.choice(entities), victim_block=b + delta
            )
        jobs.append(_Job(1 + delta, run, exclusive=False))

    strategies = list(Strategy)
    for i in range(plant.get("suppression", 0)):
        k = rng.randint(1, 3)
        plan = ["interrupted"] * (k - 1) + [rng.choice(["success", "success", "interrupted", "unclaimed"])]
        per_round = [rng.randint(2, 4) for _ in plan]
        strategy = strategies[i % len(strategies)]

        def run(b, plan=plan, per_round=per_round, strategy=strategy):
            return [plant_suppression_scenario(chain, b, rng.randint(10, 100) * WEI_PER_ETH, plan, strategy,
                                               blocks_per_round=per_round)]
        jobs.append(_Job(suppression_span(plan, per_round), run))

    if negatives:
        for mode in ("amount", "gas", "order"):
            def run(b, mode=mode):
                gv = chain.gwei(20, 100)
                kw = {"label": f"near_miss_{mode}", "expect_detected": False}
                gas = (gv + chain.gwei(1, 20), gv, gv - WEI_PER_GWEI)
                if mode == "amount":
                    kw["sell_fraction"] = (97, 100)
                elif mode == "gas":
                    gas = (gv + chain.gwei(1, 20), gv, gv + WEI_PER_GWEI)
                else:
                    kw["sell_before_victim"] = True
                return [plant_insertion_scenario(chain, b, rng.choice(markets), victim_dx=10 * WEI_PER_ETH,
                                                 attacker_dx=5 * WEI_PER_ETH, gas_prices=gas, **kw)]
            jobs.append(_Job(1, run))
        for mode in ("victim_only", "low_ratio", "low_gas", "same_sender", "benign_copy"):
            jobs.append(_Job(1, lambda b, mode=mode: plant_displacement_scenario(chain, b, WEI_PER_ETH, mode=mode),
                             exclusive=False))
        for mode in ("isolated", "plain_member", "low_ratio", "no_investment"):
            jobs.append(_Job(1 if mode == "isolated" else 2, lambda b, mode=mode: [plant_stuffing_control(chain, b, mode)]))

    rng.shuffle(jobs)
    used = sum(j.span for j in jobs) + len(jobs) + 1
    if used > n_blocks:
        raise ValueError(f"{n_blocks} blocks cannot hold the requested scenarios (need at least {used})")
    gaps = [1] * (len(jobs) + 1)
    for _ in range(n_blocks - used):
        gaps[rng.randrange(len(gaps))] += 1

    planted: list[PlantedAttack] = []
    owner: dict[int, _Job] = {}
    cursor = start_block
    layout = []
    for gap, job in zip(gaps, jobs):
        cursor += gap
        layout.append((cursor, job))
        for b in range(cursor, cursor + job.span):
            owner[b] = job
        cursor += job.span
    starts = dict(layout)

    lo, hi = background
    for b in range(start_block, start_block + n_blocks):
        job = owner.get(b)
        if b in starts:
            planted.extend(starts[b].run(b))
        if job is None:
            bg.fill(b, rng.randint(lo, hi))
        elif chain.gas_used(b) < chain.block_gas_limit // 2:
            # scenario blocks carry a little unrelated traffic too
            bg.fill(b, rng.randint(0, 2), trades=not job.exclusive)

    manifest = GroundTruthManifest(
        seed=seed,
        from_block=start_block,
        to_block=start_block + n_blocks - 1,
        planted=planted,
        entities=[e.to_dict() for e in entities],
    )
    return chain.build(), manifest


def parse_plant(text: str) -> dict[str, int]:
    """``"insertion=5,displacement=3"`` to a dict; raises ValueError on bad input."""
    out: dict[str, int] = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        name, sep, count = part.partition("=")
        if not sep or name not in PLANT_KINDS:
            raise ValueError(f"bad plant entry {part!r}; expected kind=count with kind in {', '.join(PLANT_KINDS)}")
        n = int(count)
        if n < 0:
            raise ValueError(f"negative count in {part!r}")
        out[name] = n
    return out


def write_fixture(out_dir: "str | Path", source: FixtureSource, manifest: GroundTruthManifest) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fixture_path, manifest_path = out / "fixture.ndjson", out / "manifest.json"
    with fixture_path.open("w", encoding="utf-8", newline="\n") as fh:
        source.write(fh)
    manifest.write(manifest_path)
    return fixture_path, manifest_path
