"""Trace records, access scopes and the conflict relation between transactions.

Everything here is immutable. Addresses are plain lowercase ``0x`` strings so
they hash and compare cheaply; :func:`address` is the validating constructor.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Iterator, NamedTuple, NewType, Optional, Union

Address = NewType("Address", str)


class TraceError(ValueError):
    """A trace record violates a structural invariant."""


def address(value: str | bytes) -> Address:
    """Normalise ``value`` to the canonical lowercase hex form, validating length."""
    if isinstance(value, (bytes, bytearray)):
        if len(value) != 20:
            raise TraceError(f"address must be 20 bytes, got {len(value)}")
        return Address("0x" + bytes(value).hex())
    if not isinstance(value, str) or not value[:2] in ("0x", "0X"):
        raise TraceError(f"address must be a 0x-prefixed hex string: {value!r}")
    body = value[2:].lower()
    if len(body) != 40:
        raise TraceError(f"address must have 40 hex digits: {value!r}")
    try:
        bytes.fromhex(body)
    except ValueError:
        raise TraceError(f"address is not hex: {value!r}") from None
    return Address("0x" + body)


class CallKind(enum.Enum):
    CALL = "call"
    DELEGATECALL = "delegatecall"
    STATICCALL = "staticcall"
    CALLCODE = "callcode"
    TRANSFER = "transfer"


class Mode(enum.IntEnum):
    """Access mode; WRITE > READ so ``max`` gives the dominating mode."""

    READ = 0
    WRITE = 1


class ConflictMode(enum.Enum):
    WRITE_AWARE = "write-aware"
    ANY_TOUCH = "any-touch"


@dataclass(frozen=True, order=True)
class VirtualCell:
    """One balance or allowance slot of a token, used as a stand-in scope target.

    ``spender`` is ``None`` for balance cells.
    """

    token: Address
    owner: Address
    spender: Optional[Address] = None

    @property
    def kind(self) -> str:
        return "balance" if self.spender is None else "allowance"

    def __str__(self) -> str:
        if self.spender is None:
            return f"{self.token}[balance:{self.owner}]"
        return f"{self.token}[allowance:{self.owner}:{self.spender}]"


Target = Union[Address, VirtualCell]


def target_key(target: Target) -> tuple:
    """Total order over mixed address / cell targets (addresses first)."""
    if isinstance(target, VirtualCell):
        return (1, target.token, target.owner, target.spender or "")
    return (0, target, "", "")


class AccessScope(NamedTuple):
    target: Target
    mode: Mode


@dataclass(frozen=True)
class CallFrame:
    kind: CallKind
    from_: Address
    to: Address
    gas_used: int
    input: bytes = b""
    children: tuple[CallFrame, ...] = ()

    def __post_init__(self) -> None:
        if self.gas_used < 0:
            raise TraceError(f"negative gasUsed in call {self.from_}->{self.to}")

    @property
    def selector(self) -> bytes:
        return self.input[:4]

    def walk(self) -> Iterator[CallFrame]:
        """Pre-order traversal of this frame and all descendants."""
        stack = [self]
        while stack:
            frame = stack.pop()
            yield frame
            stack.extend(reversed(frame.children))


@dataclass(frozen=True)
class Transaction:
    hash: str
    sender: Address
    recipient: Optional[Address]
    gas_used: int
    root_call: CallFrame

    def __post_init__(self) -> None:
        if self.gas_used <= 0:
            raise TraceError(f"transaction {self.hash}: gasUsed must be positive")
        if self.root_call.from_ != self.sender:
            raise TraceError(f"transaction {self.hash}: root call does not start at sender")


@dataclass(frozen=True)
class BlockTrace:
    number: int
    timestamp: int
    gas_used: int
    transactions: tuple[Transaction, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.number < 0:
            raise TraceError(f"block {self.number}: negative number")
        total = sum(tx.gas_used for tx in self.transactions)
        if total != self.gas_used:
            raise TraceError(
                f"block {self.number}: gasUsed {self.gas_used} != sum of transaction gasUsed {total}"
            )


def derive_scopes(frame: CallFrame, tx_sender: Optional[Address] = None) -> frozenset[AccessScope]:
    """Scopes opened by this frame alone, ignoring its children.

    ``tx_sender`` is accepted for symmetry with the rewriting hooks; the
    sender's own write scope is added per transaction, not per frame.
    """
    kind = frame.kind
    if kind is CallKind.CALL:
        return frozenset({AccessScope(frame.to, Mode.WRITE)})
    if kind is CallKind.STATICCALL:
        return frozenset({AccessScope(frame.to, Mode.READ)})
    if kind is CallKind.TRANSFER:
        return frozenset({AccessScope(frame.from_, Mode.WRITE), AccessScope(frame.to, Mode.WRITE)})
    # delegatecall / callcode run the callee's code against the caller's storage
    return frozenset({AccessScope(frame.from_, Mode.WRITE)})


class Access(NamedTuple):
    """One address-graph edge together with the scopes it opens."""

    src: Target
    dst: Target
    gas: int
    mode: Mode
    scopes: frozenset[AccessScope]


# A rewrite hook maps a frame to replacement scopes, or None to leave it alone.
Rewrite = Callable[[CallFrame], Optional[frozenset[AccessScope]]]


def accesses(tx: Transaction, rewrite: Optional[Rewrite] = None) -> Iterator[Access]:
    """Edges and scopes of every frame in ``tx``.

    When ``rewrite`` replaces a frame's scopes, one edge per replacement target
    hangs off the caller and the frame's subtree is not visited.
    """
    stack = [tx.root_call]
    while stack:
        frame = stack.pop()
        replaced = rewrite(frame) if rewrite is not None else None
        if replaced is not None:
            for scope in sorted(replaced, key=lambda s: target_key(s.target)):
                yield Access(frame.from_, scope.target, frame.gas_used, scope.mode, frozenset({scope}))
            continue
        scopes = derive_scopes(frame, tx.sender)
        mode = Mode.READ if frame.kind is CallKind.STATICCALL else Mode.WRITE
        yield Access(frame.from_, frame.to, frame.gas_used, mode, scopes)
        stack.extend(reversed(frame.children))


@dataclass(frozen=True)
class Footprint:
    """Flattened view of what a transaction touches.

    ``scopes`` maps each target to its dominating access mode; ``touched`` is
    every endpoint of every call, which is what any-touch conflicts compare.
    """

    scopes: dict
    touched: frozenset

    @property
    def writes(self) -> frozenset:
        return frozenset(t for t, m in self.scopes.items() if m is Mode.WRITE)


def footprint(tx: Transaction, rewrite: Optional[Rewrite] = None) -> Footprint:
    scopes: dict[Target, Mode] = {tx.sender: Mode.WRITE}
    touched: set[Target] = {tx.sender}
    for acc in accesses(tx, rewrite):
        touched.add(acc.src)
        touched.add(acc.dst)
        for target, mode in acc.scopes:
            prev = scopes.get(target)
            if prev is None or mode > prev:
                scopes[target] = mode
    return Footprint(scopes, frozenset(touched))


def tx_scope_set(tx: Transaction, rewrite: Optional[Rewrite] = None) -> frozenset[AccessScope]:
    """All scopes of ``tx``: sender write plus every frame, with writes dominating reads."""
    return frozenset(AccessScope(t, m) for t, m in footprint(tx, rewrite).scopes.items())


def footprints_conflict(a: Footprint, b: Footprint, mode: ConflictMode) -> bool:
    if mode is ConflictMode.ANY_TOUCH:
        return not a.touched.isdisjoint(b.touched)
    small, large = (a, b) if len(a.scopes) <= len(b.scopes) else (b, a)
    for target, m in small.scopes.items():
        other = large.scopes.get(target)
        if other is not None and (m is Mode.WRITE or other is Mode.WRITE):
            return True
    return False


def conflicting(
    a: Transaction,
    b: Transaction,
    mode: ConflictMode = ConflictMode.WRITE_AWARE,
    rewrite: Optional[Rewrite] = None,
) -> bool:
    """Whether ``a`` and ``b`` cannot run concurrently under ``mode``."""
    return footprints_conflict(footprint(a, rewrite), footprint(b, rewrite), mode)


