"""Address-based and transaction-based graphs over one block or a batch of blocks.

Transaction graphs store adjacency as integer bitsets (bit ``j`` of
``adj[i]`` is set when transactions ``i`` and ``j`` conflict); the clique
search and component code work on that representation directly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .disentangle import DisentangleConfig, remove_routers_tx, token_rewriter
from .model import (
    BlockTrace,
    ConflictMode,
    Footprint,
    Mode,
    Target,
    Transaction,
    footprint,
    accesses,
    target_key,
)


class BatchError(ValueError):
    pass


class TxRef(NamedTuple):
    block: int
    position: int
    hash: str


class AGEdge(NamedTuple):
    src: Target
    dst: Target
    gas: int
    tx_index: int
    mode: Mode


@dataclass(frozen=True)
class AddressGraph:
    vertices: frozenset
    edges: tuple[AGEdge, ...]
    block_range: tuple[int, int]
    tx_count: int = 0


@dataclass(frozen=True, eq=False)
class TxGraph:
    weights: tuple[int, ...]
    adj: tuple[int, ...]
    block_range: tuple[int, int] = (0, 0)
    mode: ConflictMode = ConflictMode.WRITE_AWARE
    refs: tuple[TxRef, ...] = field(default=(), repr=False)

    def __post_init__(self) -> None:
        if len(self.adj) != len(self.weights):
            raise ValueError("adjacency and weights differ in length")
        for i, row in enumerate(self.adj):
            if row >> i & 1:
                raise ValueError(f"self-loop on vertex {i}")

    @classmethod
    def from_edges(
        cls, weights: Sequence[int], edges: Iterable[tuple[int, int]], **kwargs
    ) -> TxGraph:
        adj = [0] * len(weights)
        for u, v in edges:
            if u == v:
                raise ValueError(f"self-loop on vertex {u}")
            adj[u] |= 1 << v
            adj[v] |= 1 << u
        return cls(tuple(weights), tuple(adj), **kwargs)

    def __len__(self) -> int:
        return len(self.weights)

    @cached_property
    def edges(self) -> frozenset[tuple[int, int]]:
        out = set()
        for i, row in enumerate(self.adj):
            row >>= i + 1
            j = i + 1
            while row:
                if row & 1:
                    out.add((i, j))
                row >>= 1
                j += 1
        return frozenset(out)

    def neighbors(self, i: int) -> list[int]:
        return bits(self.adj[i])

    @property
    def total_weight(self) -> int:
        return sum(self.weights)


def bits(mask: int) -> list[int]:
    """Indices of set bits, ascending."""
    if mask.bit_count() > 24:
        raw = np.frombuffer(mask.to_bytes((mask.bit_length() + 7) // 8, "little"), np.uint8)
        return np.flatnonzero(np.unpackbits(raw, bitorder="little")).tolist()
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return out


def adjacency_matrix(adj: Sequence[int]) -> np.ndarray:
    """Dense boolean matrix of a bitset adjacency list."""
    n = len(adj)
    width = (n + 7) // 8
    raw = np.frombuffer(b"".join(row.to_bytes(width, "little") for row in adj), np.uint8).reshape(n, width)
    return np.unpackbits(raw, axis=1, bitorder="little", count=n).astype(bool)


def matrix_rows(m: np.ndarray) -> list[int]:
    packed = np.packbits(m, axis=1, bitorder="little")
    return [int.from_bytes(row.tobytes(), "little") for row in packed]


def check_consecutive(blocks: Sequence[BlockTrace]) -> None:
    for prev, cur in zip(blocks, blocks[1:]):
        if cur.number != prev.number + 1:
            raise BatchError(f"blocks are not consecutive: {prev.number} followed by {cur.number}")


def _batch_txs(blocks: Sequence[BlockTrace]) -> tuple[list[Transaction], list[TxRef], tuple[int, int]]:
    if not blocks:
        raise BatchError("no blocks given")
    check_consecutive(blocks)
    txs, refs = [], []
    for b in blocks:
        for pos, tx in enumerate(b.transactions):
            txs.append(tx)
            refs.append(TxRef(b.number, pos, tx.hash))
    return txs, refs, (blocks[0].number, blocks[-1].number)


def _prepare(tx: Transaction, rewrites: Optional[DisentangleConfig]) -> Transaction:
    return remove_routers_tx(tx, rewrites) if rewrites is not None else tx


def build_address_graph(
    blocks: Sequence[BlockTrace], rewrites: Optional[DisentangleConfig] = None
) -> AddressGraph:
    txs, _, span = _batch_txs(blocks)
    hook = token_rewriter(rewrites) if rewrites is not None else None
    vertices: set = set()
    edges: list[AGEdge] = []
    for idx, tx in enumerate(txs):
        for acc in accesses(_prepare(tx, rewrites), hook):
            vertices.add(acc.src)
            vertices.add(acc.dst)
            edges.append(AGEdge(acc.src, acc.dst, acc.gas, idx, acc.mode))
    return AddressGraph(frozenset(vertices), tuple(edges), span, len(txs))


def tx_footprints(
    blocks: Sequence[BlockTrace], rewrites: Optional[DisentangleConfig] = None
) -> tuple[list[Footprint], list[Transaction], list[TxRef], tuple[int, int]]:
    txs, refs, span = _batch_txs(blocks)
    hook = token_rewriter(rewrites) if rewrites is not None else None
    return [footprint(_prepare(tx, rewrites), hook) for tx in txs], txs, refs, span


def conflict_adjacency(fps: Sequence[Footprint], mode: ConflictMode) -> list[int]:
    """Bitset adjacency of the conflict relation over ``fps``."""
    touch: dict[Target, int] = {}
    write: dict[Target, int] = {}
    for i, fp in enumerate(fps):
        bit = 1 << i
        if mode is ConflictMode.ANY_TOUCH:
            for t in fp.touched:
                touch[t] = touch.get(t, 0) | bit
        else:
            for t, m in fp.scopes.items():
                touch[t] = touch.get(t, 0) | bit
                if m is Mode.WRITE:
                    write[t] = write.get(t, 0) | bit
    adj = [0] * len(fps)
    for i, fp in enumerate(fps):
        row = 0
        if mode is ConflictMode.ANY_TOUCH:
            for t in fp.touched:
                row |= touch[t]
        else:
            for t, m in fp.scopes.items():
                row |= touch[t] if m is Mode.WRITE else write.get(t, 0)
        adj[i] = row & ~(1 << i)
    return adj


def build_tx_graph(
    blocks: Sequence[BlockTrace],
    mode: ConflictMode = ConflictMode.WRITE_AWARE,
    rewrites: Optional[DisentangleConfig] = None,
) -> TxGraph:
    fps, txs, refs, span = tx_footprints(blocks, rewrites)
    adj = conflict_adjacency(fps, mode)
    return TxGraph(tuple(tx.gas_used for tx in txs), tuple(adj), span, mode, tuple(refs))


def dependency_count(g: TxGraph) -> int:
    """Number of conflicting transaction pairs (each unordered pair once)."""
    return sum(row.bit_count() for row in g.adj) // 2


def merge_blocks(blocks: Sequence[BlockTrace], k: int) -> list[list[BlockTrace]]:
    """Split consecutive blocks into batches of ``k``; a trailing partial batch is dropped."""
    if k < 1:
        raise ValueError("batch size must be at least 1")
    check_consecutive(blocks)
    return [list(blocks[i:i + k]) for i in range(0, len(blocks) - k + 1, k)]


class UnionFind:
    def __init__(self, n: int = 0):
        self.parent = list(range(n))
        self.size = [1] * n

    def add(self) -> int:
        self.parent.append(len(self.parent))
        self.size.append(1)
        return len(self.parent) - 1

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return ra


def address_tx_partition(ag: AddressGraph) -> list[frozenset[int]]:
    """Group transactions by the address-graph component their calls fall in."""
    index: dict = {}
    uf = UnionFind()

    def vid(t) -> int:
        if t not in index:
            index[t] = uf.add()
        return index[t]

    for e in ag.edges:
        uf.union(vid(e.src), vid(e.dst))
    groups: dict[int, set[int]] = {}
    for e in ag.edges:
        groups.setdefault(uf.find(index[e.src]), set()).add(e.tx_index)
    return sorted((frozenset(g) for g in groups.values()), key=min)


def dump_graphs(ag: AddressGraph, tg: TxGraph) -> str:
    """Canonical JSON of both graphs with sorted vertex and edge lists."""
    doc = {
        "block_range": list(ag.block_range),
        "address_graph": {
            "vertices": [str(v) for v in sorted(ag.vertices, key=target_key)],
            "edges": sorted(
                [str(e.src), str(e.dst), e.gas, e.tx_index, e.mode.name.lower()]
                for e in ag.edges
            ),
        },
        "tx_graph": {
            "mode": tg.mode.value,
            "vertices": [
                {"block": r.block, "position": r.position, "hash": r.hash, "gas": w}
                for r, w in zip(tg.refs, tg.weights)
            ],
            "edges": sorted([u, v] for u, v in tg.edges),
        },
    }
    return json.dumps(doc, separators=(",", ":"))
