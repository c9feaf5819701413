"""Object-search planners: adaptive lookahead inference plus the PKS, LTOS and HSKOS baselines."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .envmodel import Cell, Environment, LocationTuple, NoPathError, WorldState, observe_at
from .ontology import BeliefMatrix

PLANNERS = ("adaptive", "pks", "ltos", "hskos")

DEFAULT_ALPHA = 0.5
LTOS_ALPHA = 10.0  # 1 + alpha exceeds the longest/shortest tuple-distance ratio of the reference house
LTOS_TOP_K = 6
EXACT_TSP_LIMIT = 12
GREEDY_THRESHOLD = 0.5
CDF_THRESHOLD = 0.5
_EPS = 1e-12
# Probabilities are ranked on this grid so that entries resting at the learning floor,
# which differ only by renormalization residue, tie and fall through to distance.
RANK_RESOLUTION = 1e-5


class SearchExhausted(RuntimeError):
    """The target has no probability mass left on any unvisited tuple."""


class BeliefInconsistency(ValueError):
    """An object believed certainly present was not observed."""


@dataclass(frozen=True)
class SearchTask:
    targets: tuple[str, ...]
    start: Cell | None = None

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        if not self.targets:
            raise ValueError("a search task needs at least one target")


@dataclass(frozen=True)
class PlannerState:
    belief: BeliefMatrix
    agent: Cell
    visited: frozenset = frozenset()
    alpha: float = DEFAULT_ALPHA


@dataclass
class SearchResult:
    planner: str
    targets: tuple[str, ...]
    start: Cell
    distances: list[float] = field(default_factory=list)
    visits: list[int] = field(default_factory=list)
    found: list[bool] = field(default_factory=list)
    sequence: list[tuple[str, LocationTuple]] = field(default_factory=list)
    waypoints: list[Cell] = field(default_factory=list)
    belief: BeliefMatrix | None = None

    @property
    def cumulative_distance(self) -> float:
        return float(sum(self.distances))

    @property
    def first_distance(self) -> float:
        return self.distances[0] if self.distances else 0.0

    @property
    def total_visits(self) -> int:
        return len(self.sequence)


def rank_level(p: float) -> int:
    return int(round(p / RANK_RESOLUTION))


def _tie_key(p: float, dist: float, t: LocationTuple):
    return (-rank_level(p), dist, str(t))


def _candidates(env: Environment, state: PlannerState, target: str):
    """Unvisited tuples with positive mass, ordered by probability, distance, name."""
    row = state.belief.row(target)
    out = []
    for j, t in enumerate(state.belief.tuples):
        if t in state.visited or row[j] <= 0:
            continue
        out.append((t, float(row[j]), env.distance_to_tuple(state.agent, t)))
    if not out:
        raise SearchExhausted(f"no unvisited tuple has mass for {target!r}")
    out.sort(key=lambda c: _tie_key(c[1], c[2], c[0]))
    return out


def lookahead_window(probs, tuples: Sequence[LocationTuple] | None = None, distances=None) -> list:
    """Shortest descending-probability prefix whose cumulative mass exceeds one half.

    Ties are broken by ascending distance, then tuple name. Without ``tuples``
    the returned window holds column indices.
    """
    probs = np.asarray(probs, dtype=float)
    labels = list(tuples) if tuples is not None else list(range(len(probs)))
    dists = np.zeros(len(probs)) if distances is None else np.asarray(distances, dtype=float)
    order = sorted(range(len(probs)), key=lambda j: (-rank_level(probs[j]), dists[j], str(labels[j])))
    window, acc = [], 0.0
    for j in order:
        window.append(labels[j])
        acc += probs[j]
        if acc > CDF_THRESHOLD + _EPS:
            break
    return window


def utility(p: float, dist: float, alpha: float) -> float:
    if not dist > 0:
        raise ValueError("utility needs a positive distance; co-located tuples are visited directly")
    return p + alpha / dist


@dataclass(frozen=True)
class TspSolution:
    order: tuple[int, ...]
    cost: float


def tour_cost(order, start_dist, dist, utilities) -> float:
    """Open-path cost: each leg's distance divided by the utility of its destination."""
    cost, prev = 0.0, None
    for j in order:
        d = start_dist[j] if prev is None else dist[prev][j]
        cost += d / utilities[j]
        prev = j
    return cost


def _better(cost, path, best_cost, best_path) -> bool:
    tol = 1e-12 * max(1.0, abs(best_cost))
    if cost < best_cost - tol:
        return True
    return abs(cost - best_cost) <= tol and path < best_path


def _held_karp(start_dist, dist, util, rank) -> TspSolution:
    n = len(util)
    # best[mask][last] = (cost, path as rank tuple, path as index tuple)
    best: dict = {}
    for j in range(n):
        best[(1 << j, j)] = (start_dist[j] / util[j], (rank[j],), (j,))
    for mask in range(1, 1 << n):
        for last in range(n):
            entry = best.get((mask, last))
            if entry is None:
                continue
            c0, rp, ip = entry
            for j in range(n):
                if mask & (1 << j):
                    continue
                key = (mask | (1 << j), j)
                cand = (c0 + dist[last][j] / util[j], rp + (rank[j],), ip + (j,))
                cur = best.get(key)
                if cur is None or _better(cand[0], cand[1], cur[0], cur[1]):
                    best[key] = cand
    full = (1 << n) - 1
    winner = None
    for j in range(n):
        cand = best[(full, j)]
        if winner is None or _better(cand[0], cand[1], winner[0], winner[1]):
            winner = cand
    return TspSolution(winner[2], winner[0])


def _nn_two_opt(start_dist, dist, util, rank) -> TspSolution:
    n = len(util)
    left = set(range(n))
    order, prev = [], None
    while left:
        nxt = min(left, key=lambda j: ((start_dist[j] if prev is None else dist[prev][j]) / util[j], rank[j]))
        order.append(nxt)
        left.remove(nxt)
        prev = nxt
    best = tour_cost(order, start_dist, dist, util)
    improved = True
    while improved:
        improved = False
        for i in range(n - 1):
            for k in range(i + 1, n):
                cand = order[:i] + order[i:k + 1][::-1] + order[k + 1:]
                c = tour_cost(cand, start_dist, dist, util)
                if c < best - 1e-12:
                    order, best, improved = cand, c, True
    return TspSolution(tuple(order), best)


def solve_open_tsp(start_dist, dist, utilities, labels=None,
                   exact_limit: int = EXACT_TSP_LIMIT) -> TspSolution:
    """Visit order from a fixed start through every node, ending anywhere.

    Minimizes the sum over legs of distance / destination utility. Exact for up to
    ``exact_limit`` nodes; nearest neighbour followed by 2-opt beyond that. Equal-cost
    orders resolve to the lexicographically smallest label sequence.
    """
    util = [float(u) for u in utilities]
    n = len(util)
    if n == 0:
        raise ValueError("no nodes to order")
    if min(util) <= 0:
        raise ValueError("utilities must be positive")
    start_dist = [float(d) for d in start_dist]
    dist = [[float(v) for v in row] for row in np.asarray(dist, dtype=float).reshape(n, n)]
    if any(math.isinf(d) for d in start_dist) or any(math.isinf(v) for row in dist for v in row):
        raise NoPathError("unreachable node in TSP instance")
    labels = [str(j) for j in range(n)] if labels is None else [str(x) for x in labels]
    rank_of = {j: r for r, j in enumerate(sorted(range(n), key=lambda j: labels[j]))}
    rank = [rank_of[j] for j in range(n)]
    if n <= exact_limit:
        return _held_karp(start_dist, dist, util, rank)
    return _nn_two_opt(start_dist, dist, util, rank)


def next_step_adaptive(env: Environment, state: PlannerState, target: str) -> LocationTuple:
    cands = _candidates(env, state, target)
    best_t, best_p, _ = cands[0]
    if best_p > GREEDY_THRESHOLD + _EPS:
        return best_t
    tuples = [c[0] for c in cands]
    window = lookahead_window([c[1] for c in cands], tuples, [c[2] for c in cands])
    info = {c[0]: c for c in cands}
    for t in window:
        if info[t][2] == 0:
            return t
    utils = [utility(info[t][1], info[t][2], state.alpha) for t in window]
    start = [info[t][2] for t in window]
    cells = [env.access_cell(t) for t in window]
    pair = [[env.distance(a, b) for b in cells] for a in cells]
    sol = solve_open_tsp(start, pair, utils, [str(t) for t in window])
    return window[sol.order[0]]


def pks_next(env: Environment, state: PlannerState, target: str) -> LocationTuple:
    return _candidates(env, state, target)[0][0]


def ltos_cost(dists, probs, alpha: float) -> float:
    return sum(d / ((1.0 + alpha * p) * 2 ** i) for i, (d, p) in enumerate(zip(dists, probs)))


def ltos_order(dists, probs, alpha: float = LTOS_ALPHA, labels=None) -> tuple[int, ...]:
    """Exhaustive minimizer of the weighted path length over all orderings of the candidates.

    Equal costs resolve to the lexicographically smallest label sequence.
    """
    n = len(dists)
    labels = [str(j) for j in range(n)] if labels is None else [str(x) for x in labels]
    by_label = sorted(range(n), key=lambda j: labels[j])
    best_cost, best = math.inf, None
    for perm in itertools.permutations(by_label):
        c = ltos_cost([dists[j] for j in perm], [probs[j] for j in perm], alpha)
        if best is None or c < best_cost - 1e-12 * max(1.0, best_cost):
            best_cost, best = c, perm
    return tuple(best)


def ltos_route(env: Environment, state: PlannerState, target: str,
               alpha: float = LTOS_ALPHA, k: int = LTOS_TOP_K) -> list[LocationTuple]:
    """Order of the top-``k`` candidates minimizing the 2^i-discounted weighted path length.

    Every term uses the distance from the agent's current cell, as the route weight is
    defined; the search is exhaustive over all orderings.
    """
    cands = _candidates(env, state, target)[:k]
    order = ltos_order([c[2] for c in cands], [c[1] for c in cands], alpha,
                       [str(c[0]) for c in cands])
    return [cands[j][0] for j in order]


def ltos_next(env: Environment, state: PlannerState, target: str,
              alpha: float = LTOS_ALPHA, k: int = LTOS_TOP_K) -> LocationTuple:
    return ltos_route(env, state, target, alpha, k)[0]


def room_score(p_room: float, size_fraction: float, dist: float) -> float:
    """Room preference P(R|O) / (R_s + Dist(R, A))."""
    denom = size_fraction + dist
    if not denom > 0:
        raise ValueError("room size plus distance must be positive")
    return p_room / denom


def hskos_scores(env: Environment, state: PlannerState, target: str) -> dict[str, float]:
    """Room heuristic P(R|O) / (relative room size + distance to room) for rooms with candidates."""
    cands = _candidates(env, state, target)
    mass: dict[str, float] = {}
    for t, p, _ in cands:
        mass[t.room] = mass.get(t.room, 0.0) + p
    total = sum(mass.values())
    sizes = env.room_size_fractions()
    return {room: room_score(m / total, sizes[room], env.distance_to_room(state.agent, room))
            for room, m in mass.items()}


def hskos_next(env: Environment, state: PlannerState, target: str) -> LocationTuple:
    scores = hskos_scores(env, state, target)
    room = min(scores, key=lambda r: (-scores[r], env.distance_to_room(state.agent, r), r))
    for t, _, _ in _candidates(env, state, target):
        if t.room == room:
            return t
    raise SearchExhausted(f"room {room} has no candidates")  # unreachable: scores come from candidates


def next_landmark(kind: str, env: Environment, state: PlannerState, target: str,
                  ltos_alpha: float = LTOS_ALPHA, ltos_k: int = LTOS_TOP_K) -> LocationTuple:
    if kind == "adaptive":
        return next_step_adaptive(env, state, target)
    if kind == "pks":
        return pks_next(env, state, target)
    if kind == "ltos":
        return ltos_next(env, state, target, ltos_alpha, ltos_k)
    if kind == "hskos":
        return hskos_next(env, state, target)
    raise ValueError(f"unknown planner {kind!r}; expected one of {PLANNERS}")


def dbu(belief: BeliefMatrix, visited: LocationTuple, observed, unvisited=None,
        objects=None) -> BeliefMatrix:
    """Revise beliefs after inspecting ``visited`` and seeing ``observed`` there.

    Objects found collapse to certainty at ``visited``. For every other object the
    visited entry is zeroed and the ``unvisited`` entries (default: all others) are
    divided by the removed complement mass. ``objects`` limits which rows change.
    """
    k = belief.tuple_index(visited)
    if unvisited is None:
        mask = np.ones(len(belief.tuples), dtype=bool)
    else:
        unvisited = set(unvisited)
        mask = np.array([t in unvisited for t in belief.tuples])
    mask[k] = False
    others = np.arange(len(belief.tuples)) != k
    observed = set(observed)
    rows = belief.objects if objects is None else objects
    p = belief.p.copy()
    for obj in rows:
        i = belief.object_index(obj)
        if obj in observed:
            p[i] = 0.0
            p[i, k] = 1.0
            continue
        pv = p[i, k]
        if pv >= 1.0 - _EPS:
            raise BeliefInconsistency(f"{obj!r} was certain to be at {visited} but is absent")
        # 1 - P(visited), summed from the remaining entries to avoid cancellation near 1
        p[i, mask] = p[i, mask] / p[i, others].sum()
        p[i, k] = 0.0
    return belief.with_matrix(p)


def run_search(env: Environment, world: WorldState, planner: str, task: SearchTask,
               belief: BeliefMatrix, alpha: float = DEFAULT_ALPHA, use_dbu: bool = True,
               ltos_alpha: float = LTOS_ALPHA, ltos_k: int = LTOS_TOP_K) -> SearchResult:
    """Search for each target in turn, revealing the next only after the previous one.

    With ``use_dbu`` every object's row is revised at each visit and the revised
    belief carries over to later targets. Without it only the current target's row
    is conditioned on its misses, and each target starts again from ``belief``.
    """
    if planner not in PLANNERS:
        raise ValueError(f"unknown planner {planner!r}; expected one of {PLANNERS}")
    for target in task.targets:
        belief.object_index(target)
    agent = tuple(task.start) if task.start is not None else env.start
    result = SearchResult(planner, task.targets, agent, waypoints=[agent])
    carried = belief
    all_tuples = set(env.tuples)
    for target in task.targets:
        working = carried if use_dbu else belief
        visited: set = set()
        travelled, found = 0.0, False
        while not found and len(visited) < len(all_tuples):
            state = PlannerState(working, agent, frozenset(visited), alpha)
            t = next_landmark(planner, env, state, target, ltos_alpha, ltos_k)
            travelled += env.distance_to_tuple(agent, t)
            agent = env.access_cell(t)
            visited.add(t)
            result.sequence.append((target, t))
            result.waypoints.append(agent)
            seen = observe_at(world, t)
            found = target in seen
            working = dbu(working, t, seen, all_tuples - visited,
                          objects=None if use_dbu else (target,))
        result.distances.append(travelled)
        result.visits.append(len(visited))
        result.found.append(found)
        if use_dbu:
            carried = working
    result.belief = carried
    return result
