"""Independent reference computations used to check the package.

Nothing here imports package internals beyond plain data types; each oracle
recomputes a quantity from its definition by brute force or exact arithmetic.
"""
from __future__ import annotations

import heapq
import itertools
import math
from fractions import Fraction

import numpy as np


def dijkstra_steps(occupied: np.ndarray, a, b) -> int | None:
    """Unit-weight 4-connected Dijkstra on an occupancy array indexed [y, x]."""
    h, w = occupied.shape
    dist = {tuple(a): 0}
    heap = [(0, tuple(a))]
    while heap:
        d, (x, y) = heapq.heappop(heap)
        if (x, y) == tuple(b):
            return d
        if d > dist[(x, y)]:
            continue
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nx, ny = x + dx, y + dy
            if 0 <= nx < w and 0 <= ny < h and not occupied[ny, nx]:
                if d + 1 < dist.get((nx, ny), math.inf):
                    dist[(nx, ny)] = d + 1
                    heapq.heappush(heap, (d + 1, (nx, ny)))
    return None


def brute_assignment_cost(costs: np.ndarray) -> float:
    """Minimum total cost over all matchings of size min(K, L)."""
    k, l = costs.shape
    if k <= l:
        return min(sum(costs[i, p[i]] for i in range(k)) for p in itertools.permutations(range(l), k))
    return min(sum(costs[p[j], j] for j in range(l)) for p in itertools.permutations(range(k), l))


def brute_open_tsp(start_dist, dist, util) -> tuple[float, tuple[int, ...]]:
    best = (math.inf, ())
    for perm in itertools.permutations(range(len(util))):
        c, prev = 0.0, None
        for j in perm:
            c += (start_dist[j] if prev is None else dist[prev][j]) / util[j]
            prev = j
        if c < best[0]:
            best = (c, perm)
    return best


def p_learning_row(row, observed: int, sim, beta, n, floor=Fraction(1, 10**6)):
    """Exact-rational update of one row: raise the observed entry, lower the rest, clamp, normalize."""
    row = [Fraction(x) for x in row]
    rate = Fraction(beta) / Fraction(math.sqrt(n)) if n != 1 else Fraction(beta)
    new = []
    for j, p in enumerate(row):
        if j == observed:
            new.append(p + rate * (1 - p))
        else:
            new.append(p - rate * sim[j] * (1 - p))
    new = [max(v, min(floor, p)) for v, p in zip(new, row)]
    z = sum(new)
    return [v / z for v in new]


def wilson_halfwidth_mp(p, n, z=1.96, dps=40):
    import mpmath
    mpmath.mp.dps = dps
    p, n, z = mpmath.mpf(p), mpmath.mpf(n), mpmath.mpf(z)
    return (z * n / (z * z + n)) * mpmath.sqrt(p * (1 - p) / n + z * z / (4 * n * n))


def ltos_brute(dists, probs, alpha) -> tuple[int, ...]:
    best = None
    for perm in itertools.permutations(range(len(dists))):
        c = sum(dists[j] / ((1 + alpha * probs[j]) * 2 ** i) for i, j in enumerate(perm))
        if best is None or c < best[0] - 1e-12:
            best = (c, perm)
    return best[1]
