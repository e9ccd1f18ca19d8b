"""Execution oracles used to confirm that two transactions interfere.

Real deployments re-execute transactions on an archive node. The
:class:`ReplayOracle` here models the one contract family the synthetic
chain plants: a prize contract paying the first caller that presents the
preimage of a stored hash.

Prize contract code is ``PRIZE_MAGIC || keccak256(secret)``. A claim is the
call ``CLAIM_SELECTOR || pad32(prize) || secret32`` and may sit anywhere in a
transaction's input, so a bot wrapping a copied claim is recognised too.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol, Sequence, runtime_checkable

from .chain import Address, ChainSnapshot, Transaction
from .exceptions import OracleError
from .ingest import keccak256

PRIZE_MAGIC = b"\xfePRIZE\x00"
CLAIM_SELECTOR = bytes.fromhex("b8b1b3c3")
CLAIM_LENGTH = 4 + 32 + 32

BASE_STEPS = 21
WIN_STEPS = 140
LOSE_STEPS = 38


@dataclass(frozen=True)
class BlockContext:
    """Pre-state handle for a simulation: the block the first transaction was mined in."""

    block_number: int
    miner: Address
    timestamp: int = 0


@runtime_checkable
class ExecutionOracle(Protocol):
    def run(self, ordering: Sequence[Transaction], context: BlockContext) -> list[int]:
        """Execute ``ordering`` from ``context`` and return per-transaction instruction counts."""
        ...


def encode_claim(prize: Address, secret: bytes) -> bytes:
    if len(secret) != 32:
        raise ValueError("secret must be 32 bytes")
    return CLAIM_SELECTOR + b"\x00" * 12 + prize.to_bytes() + secret


def prize_code(secret: bytes) -> bytes:
    return PRIZE_MAGIC + keccak256(secret)


def find_claims(data: bytes) -> list[tuple[Address, bytes]]:
    out = []
    pos = data.find(CLAIM_SELECTOR)
    while pos != -1:
        chunk = data[pos : pos + CLAIM_LENGTH]
        if len(chunk) == CLAIM_LENGTH and chunk[4:16] == b"\x00" * 12:
            out.append((Address(chunk[16:36]), chunk[36:68]))
        pos = data.find(CLAIM_SELECTOR, pos + 1)
    return out


class ReplayOracle:
    """Deterministic instruction counter over the snapshot's code map.

    A transaction to an account without code executes nothing. Any call into
    code costs a base amount proportional to the input size; a valid claim on
    a prize contract adds ``WIN_STEPS`` if it is the first claim in the
    ordering and ``LOSE_STEPS`` otherwise.
    """

    def __init__(self, snapshot: ChainSnapshot):
        self.snapshot = snapshot

    def _valid_claim(self, prize: Address, secret: bytes) -> bool:
        code = self.snapshot.code_at(prize)
        return bool(code) and code.startswith(PRIZE_MAGIC) and code[len(PRIZE_MAGIC) :] == keccak256(secret)

    def run(self, ordering: Sequence[Transaction], context: Optional[BlockContext]) -> list[int]:
        if context is None:
            raise OracleError("replay oracle needs a block context")
        claimed: set[Address] = set()
        counts = []
        for tx in ordering:
            if tx.receiver is None or not self.snapshot.is_contract(tx.receiver):
                counts.append(0)
                continue
            steps = BASE_STEPS + len(tx.input) // 32
            for prize, secret in find_claims(tx.input):
                if self._valid_claim(prize, secret):
                    steps += LOSE_STEPS if prize in claimed else WIN_STEPS
                    claimed.add(prize)
            counts.append(steps)
        return counts
