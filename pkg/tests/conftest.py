from __future__ import annotations

import random
from pathlib import Path

import numpy as np
import pytest

from txparallax.graphs import TxGraph

FIXTURES = Path(__file__).resolve().parent / "fixtures"


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


def random_graph(rng: random.Random, n: int, density: float, wmax: int = 1000) -> TxGraph:
    weights = [rng.randint(1, wmax) for _ in range(n)]
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < density]
    return TxGraph.from_edges(weights, edges)


def random_suite(count: int, seed: int, max_n: int = 15):
    """Seeded graphs with n <= max_n, density in [0.1, 0.9], weights 1..1000."""
    rng = random.Random(seed)
    for _ in range(count):
        yield random_graph(rng, rng.randint(1, max_n), rng.uniform(0.1, 0.9))


def brute_force_clique(g: TxGraph) -> int:
    """Heaviest clique by enumerating every vertex subset."""
    n = len(g)
    if n == 0:
        return 0
    masks = np.arange(1 << n, dtype=np.int64)
    ok = np.ones(1 << n, dtype=bool)
    total = np.zeros(1 << n, dtype=np.int64)
    full = (1 << n) - 1
    for v in range(n):
        inside = (masks >> v) & 1 == 1
        outside_nbrs = full & ~g.adj[v] & ~(1 << v)
        ok &= ~(inside & (masks & outside_nbrs != 0))
        total += np.where(inside, g.weights[v], 0)
    return int(total[ok].max())


def bfs_components(g: TxGraph) -> list[frozenset[int]]:
    seen: set[int] = set()
    comps = []
    for s in range(len(g)):
        if s in seen:
            continue
        comp, queue = {s}, [s]
        while queue:
            v = queue.pop()
            for u in range(len(g)):
                if g.adj[v] >> u & 1 and u not in comp:
                    comp.add(u)
                    queue.append(u)
        seen |= comp
        comps.append(frozenset(comp))
    return comps
