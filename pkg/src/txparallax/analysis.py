"""Parallelism bounds on a transaction conflict graph.

For a graph with total gas ``T``:

* the heaviest connected component ``H_cc`` gives the lower speedup bound ``T / H_cc``;
* the heaviest clique ``H_q`` must run serially, so ``T / H_q`` is an upper bound;
* the heaviest single transaction gives the loose bound ``T / max w``.

A greedy list schedule gives an achievable makespan between ``H_q`` and ``H_cc``.
"""

from __future__ import annotations

import enum
import heapq
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .graphs import TxGraph, UnionFind, adjacency_matrix, bits, matrix_rows

DEFAULT_CLIQUE_BUDGET = 10.0  # seconds per graph


class ScheduleMode(enum.Enum):
    EARLIEST_START = "earliest-start"
    BARRIER_ROUNDS = "barrier-rounds"


@dataclass(frozen=True)
class Schedule:
    starts: tuple[int, ...]
    ends: tuple[int, ...]
    makespan: int
    mode: ScheduleMode

    def is_valid(self, g: TxGraph) -> bool:
        for i, w in enumerate(g.weights):
            if self.ends[i] - self.starts[i] != w:
                return False
        return all(self.ends[u] <= self.starts[v] or self.ends[v] <= self.starts[u] for u, v in g.edges)


@dataclass(frozen=True)
class CliqueResult:
    members: frozenset[int]
    weight: int
    exact: bool


@dataclass(frozen=True)
class BlockMetrics:
    tx_count: int
    dependency_count: int
    total_gas: int
    heaviest_cc_gas: int
    heaviest_clique_gas: Optional[int]
    clique_exact: Optional[bool]
    schedule_sequential_gas: int
    heaviest_tx_gas: int
    speedup_lower: float
    speedup_upper: float
    speedup_loose: float
    relative_error: Optional[float]


@dataclass(frozen=True)
class AnalysisOptions:
    clique: bool = True
    clique_budget: Optional[float] = DEFAULT_CLIQUE_BUDGET
    schedule_mode: ScheduleMode = ScheduleMode.EARLIEST_START


def heaviest_component(g: TxGraph) -> tuple[frozenset[int], int]:
    n = len(g)
    if n == 0:
        return frozenset(), 0
    uf = UnionFind(n)
    for i, row in enumerate(g.adj):
        for j in bits(row >> (i + 1) << (i + 1)):
            uf.union(i, j)
    weight: dict[int, int] = {}
    members: dict[int, list[int]] = {}
    for i, w in enumerate(g.weights):
        r = uf.find(i)
        weight[r] = weight.get(r, 0) + w
        members.setdefault(r, []).append(i)
    best = max(weight, key=lambda r: (weight[r], -min(members[r])))
    return frozenset(members[best]), weight[best]


def _weighted_degeneracy_order(g: TxGraph, m: Optional[np.ndarray] = None) -> list[int]:
    """Vertices ordered densest-core first.

    Repeatedly peels the vertex with the smallest weighted degree (own weight
    plus the weight of its remaining neighbours; ties go to the heavier, then
    lower-indexed vertex); the reverse peel order puts heavy, well-connected
    vertices at the front.
    """
    n = len(g)
    if m is None:
        m = adjacency_matrix(g.adj)
    w = np.array(g.weights, dtype=np.int64)
    score = w + m.astype(np.int64) @ w
    alive = np.ones(n, dtype=bool)
    peel = []
    for _ in range(n):
        live = np.flatnonzero(alive)
        s = score[live]
        tied = live[s == s.min()]
        v = int(tied[np.argmax(w[tied])]) if len(tied) > 1 else int(tied[0])
        alive[v] = False
        peel.append(v)
        score -= w[v] * m[v]
    peel.reverse()
    return peel


def _color_bounds(P: int, adj: list[int], w: list[int]) -> tuple[list[int], list[int]]:
    """Greedy colouring of ``P``; each vertex's bound is the summed class maxima up to its class."""
    order: list[int] = []
    bounds: list[int] = []
    cum = 0
    U = P
    while U:
        Q = U
        top = 0
        start = len(order)
        while Q:
            low = Q & -Q
            v = low.bit_length() - 1
            Q &= ~adj[v]
            Q ^= low
            U ^= low
            order.append(v)
            if w[v] > top:
                top = w[v]
        cum += top
        bounds.extend([cum] * (len(order) - start))
    return order, bounds


def _co_components(mask: int, adj: list[int]) -> list[int]:
    """Connected components of the complement graph induced on ``mask``.

    Every vertex of one component is adjacent to every vertex of the others,
    so a maximum clique is the union of per-component maximum cliques.
    """
    comps = []
    rest = mask
    while rest:
        comp = frontier = rest & -rest
        while frontier:
            grow = 0
            for v in bits(frontier):
                grow |= rest & ~adj[v]
            frontier = grow & ~comp
            comp |= frontier
        rest &= ~comp
        comps.append(comp)
    return comps


def _branch_and_bound(
    root: int, adj: list[int], w: list[int], floor: int, deadline: Optional[float]
) -> tuple[int, Optional[list[int]], bool]:
    """Heaviest clique inside ``root`` that beats ``floor``; ``None`` members when none does."""
    best, best_set = floor, None
    order, bounds = _color_bounds(root, adj, w)
    stack = [[0, root, order, bounds, len(order) - 1]]
    path: list[int] = []
    steps = 0
    while stack:
        fr = stack[-1]
        cw, P, order, bounds, i = fr
        if i < 0 or cw + bounds[i] <= best:
            stack.pop()
            if path:
                path.pop()
            continue
        steps += 1
        if deadline is not None and steps & 255 == 0 and time.monotonic() > deadline:
            return best, best_set, False
        v = order[i]
        fr[4] = i - 1
        fr[1] = P & ~(1 << v)
        ncw = cw + w[v]
        newP = P & adj[v]
        if not newP:
            if ncw > best:
                best, best_set = ncw, path + [v]
            continue
        norder, nbounds = _color_bounds(newP, adj, w)
        stack.append([ncw, newP, norder, nbounds, len(norder) - 1])
        path.append(v)
    return best, best_set, True


def max_weight_clique(g: TxGraph, budget: Optional[float] = DEFAULT_CLIQUE_BUDGET) -> CliqueResult:
    """Exact maximum-weight clique by branch and bound with colouring bounds.

    Before branching, vertices whose closed neighbourhood is no heavier than
    a greedy clique are dropped and the rest is split into complement
    components, which are solved independently. ``budget`` is a wall-clock
    limit in seconds; when it runs out the best clique found so far is
    returned with ``exact=False``.
    """
    n = len(g)
    if n == 0:
        return CliqueResult(frozenset(), 0, True)
    deadline = None if budget is None else time.monotonic() + budget
    m = adjacency_matrix(g.adj)
    label = _weighted_degeneracy_order(g, m)
    m = m[np.ix_(label, label)]
    adj = matrix_rows(m)
    w = [g.weights[v] for v in label]
    wv = np.array(w, dtype=np.int64)

    # greedy incumbent: extend from each of the heaviest few vertices
    best, best_set = 0, []
    for seed in sorted(range(n), key=lambda p: -w[p])[:32]:
        cand, members, total = m[seed].copy(), [seed], w[seed]
        while cand.any():
            v = int(np.argmax(np.where(cand, wv, -1)))
            members.append(v)
            total += w[v]
            cand &= m[v]
        if total > best:
            best, best_set = total, members

    # a vertex whose remaining closed neighbourhood cannot beat the incumbent is never needed
    keep = np.ones(n, dtype=bool)
    while True:
        reach = wv + m.astype(np.int64) @ np.where(keep, wv, 0)
        shrunk = keep & (reach > best)
        if (shrunk == keep).all():
            break
        keep = shrunk
    root = matrix_rows(keep[None, :])[0]

    comps = sorted(_co_components(root, adj), key=lambda c: (c.bit_count(), c))
    exact = True
    found, members = 0, []
    for k, comp in enumerate(comps):
        # only the last (largest) component needs to lift the total past the incumbent
        floor = best - found if k == len(comps) - 1 else 0
        weight, part, done = _branch_and_bound(comp, adj, w, floor, deadline)
        if part is not None:
            found += weight
            members += part
        if not done:
            exact = False
            break
    if found > best:
        best, best_set = found, members
    return CliqueResult(frozenset(label[p] for p in best_set), best, exact)


def _priority(g: TxGraph) -> list[int]:
    # heaviest first, then block position
    return sorted(range(len(g)), key=lambda i: (-g.weights[i], i))


def list_schedule(g: TxGraph, mode: ScheduleMode = ScheduleMode.EARLIEST_START) -> Schedule:
    """Greedy conflict-free schedule; priority is descending gas, then block position.

    ``EARLIEST_START`` is event driven: at time 0 and whenever a transaction
    finishes, every waiting transaction that conflicts with nothing running is
    started, in priority order. ``BARRIER_ROUNDS`` runs one greedy maximal
    independent set per round and waits for the round's heaviest member.
    """
    n = len(g)
    w = g.weights
    starts = [0] * n
    ends = [0] * n
    prio = _priority(g)
    if mode is ScheduleMode.EARLIEST_START:
        # relabel so that bit order is priority order
        rank = [0] * n
        for r, v in enumerate(prio):
            rank[v] = r
        radj = []
        for v in prio:
            row = 0
            for u in bits(g.adj[v]):
                row |= 1 << rank[u]
            radj.append(row)
        waiting = (1 << n) - 1
        running = 0
        events: list[tuple[int, int]] = []
        clock, candidates = 0, waiting
        while waiting:
            for r in bits(candidates):
                if not radj[r] & running:
                    bit = 1 << r
                    running |= bit
                    waiting ^= bit
                    v = prio[r]
                    starts[v], ends[v] = clock, clock + w[v]
                    heapq.heappush(events, (ends[v], r))
            if not waiting:
                break
            clock = events[0][0]
            freed = 0
            while events and events[0][0] == clock:
                _, r = heapq.heappop(events)
                running ^= 1 << r
                freed |= radj[r]
            # only neighbours of finished transactions can have become startable
            candidates = waiting & freed
    else:
        remaining = prio
        clock = 0
        while remaining:
            chosen, blocked, rest = [], 0, []
            for v in remaining:
                if blocked >> v & 1:
                    rest.append(v)
                    continue
                chosen.append(v)
                blocked |= g.adj[v]
            length = max(w[v] for v in chosen)
            for v in chosen:
                starts[v], ends[v] = clock, clock + w[v]
            clock += length
            remaining = rest
    return Schedule(tuple(starts), tuple(ends), max(ends, default=0), mode)


def relative_error(schedule_gas: int, clique_gas: int) -> Optional[float]:
    """How far the schedule's sequential gas exceeds the clique weight; ``None`` for an empty clique."""
    if clique_gas <= 0:
        return None
    return (schedule_gas - clique_gas) / clique_gas


def _ratio(total: int, part: int) -> float:
    return total / part if part > 0 else 1.0


def analyze_block(g: TxGraph, opts: AnalysisOptions = AnalysisOptions()) -> BlockMetrics:
    total = g.total_weight
    heaviest_tx = max(g.weights, default=0)
    _, cc = heaviest_component(g)
    sched = list_schedule(g, opts.schedule_mode)
    clique_gas: Optional[int] = None
    exact: Optional[bool] = None
    if opts.clique:
        res = max_weight_clique(g, opts.clique_budget)
        clique_gas, exact = res.weight, res.exact
    # an unfinished search only gives a lower bound; fall back to the schedule
    upper_denominator = clique_gas if exact else sched.makespan
    return BlockMetrics(
        tx_count=len(g),
        dependency_count=sum(row.bit_count() for row in g.adj) // 2,
        total_gas=total,
        heaviest_cc_gas=cc,
        heaviest_clique_gas=clique_gas,
        clique_exact=exact,
        schedule_sequential_gas=sched.makespan,
        heaviest_tx_gas=heaviest_tx,
        speedup_lower=_ratio(total, cc),
        speedup_upper=_ratio(total, upper_denominator),
        speedup_loose=_ratio(total, heaviest_tx),
        relative_error=relative_error(sched.makespan, clique_gas) if exact else None,
    )
