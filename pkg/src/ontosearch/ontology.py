"""Belief matrices P(O|T) and their personalization.

A belief matrix holds one probability row per object over the environment's
location tuples. Everything here is value-in/value-out: updates return new
matrices and never mutate their inputs.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .envmodel import ROOM_LABELS, LocationTuple

LEARNING_RATE = 0.1
DISCOUNT = 0.9
HORIZON = 5
Z_95 = 1.96
CI_THRESHOLD = 0.05
PROBABILITY_FLOOR = 1e-6
KL_SMOOTHING = 1e-4
JEFFREYS_LAMBDA = 0.5


def _normalize_rows(p: np.ndarray) -> np.ndarray:
    return p / p.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class BeliefMatrix:
    objects: tuple[str, ...]
    tuples: tuple[LocationTuple, ...]
    p: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        if p.shape != (len(self.objects), len(self.tuples)):
            raise ValueError(f"belief shape {p.shape} does not match "
                             f"{len(self.objects)} objects x {len(self.tuples)} tuples")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("belief entries must be finite and non-negative")
        p.setflags(write=False)
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "tuples", tuple(self.tuples))
        object.__setattr__(self, "p", p)

    def object_index(self, obj: str) -> int:
        try:
            return self.objects.index(obj)
        except ValueError:
            raise KeyError(f"unknown object {obj!r}") from None

    def tuple_index(self, t: LocationTuple) -> int:
        try:
            return self.tuples.index(t)
        except ValueError:
            raise KeyError(f"unknown location tuple {t}") from None

    def row(self, obj: str) -> np.ndarray:
        return self.p[self.object_index(obj)]

    def prob(self, obj: str, t: LocationTuple) -> float:
        return float(self.p[self.object_index(obj), self.tuple_index(t)])

    def with_row(self, obj: str, row) -> "BeliefMatrix":
        p = self.p.copy()
        p[self.object_index(obj)] = row
        return BeliefMatrix(self.objects, self.tuples, p)

    def with_matrix(self, p) -> "BeliefMatrix":
        return BeliefMatrix(self.objects, self.tuples, p)

    def to_dict(self, episode: int | None = None) -> dict:
        return {
            "episode": episode,
            "objects": list(self.objects),
            "tuples": [str(t) for t in self.tuples],
            "p": [[float(v) for v in row] for row in self.p],
        }

    def to_json(self, episode: int | None = None) -> str:
        return json.dumps(self.to_dict(episode), sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "BeliefMatrix":
        return cls(tuple(d["objects"]), tuple(LocationTuple.parse(t) for t in d["tuples"]),
                   np.array(d["p"], dtype=float))


def uniform_prior(objects: Sequence[str], tuples: Sequence[LocationTuple]) -> BeliefMatrix:
    if not tuples:
        raise ValueError("at least one location tuple is required")
    p = np.full((len(objects), len(tuples)), 1.0 / len(tuples))
    return BeliefMatrix(tuple(objects), tuple(tuples), _normalize_rows(p))


def empirical_prior(objects, tuples, counts: Mapping[str, Mapping[LocationTuple, float]],
                    lam: float = JEFFREYS_LAMBDA, n: int | None = None) -> BeliefMatrix:
    """Smoothed dataset frequencies: (N(O and T) + lam) / (N(O) + lam * n), row-renormalized.

    ``n`` defaults to the number of tuples. Counts for tuples absent from ``tuples``
    still contribute to N(O).
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    n = len(tuples) if n is None else n
    p = np.empty((len(objects), len(tuples)))
    for i, obj in enumerate(objects):
        row_counts = counts.get(obj, {})
        if any(c < 0 for c in row_counts.values()):
            raise ValueError(f"negative count for {obj!r}")
        total = float(sum(row_counts.values()))
        for j, t in enumerate(tuples):
            p[i, j] = (row_counts.get(t, 0.0) + lam) / (total + lam * n)
    return BeliefMatrix(tuple(objects), tuple(tuples), _normalize_rows(p))


def insitu_prior(objects, tuples, observation_log, lam: float = JEFFREYS_LAMBDA) -> BeliefMatrix:
    """Add-lambda relative frequencies of (object, tuple) sightings from exploratory episodes."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    log = list(observation_log)
    if not log:
        raise ValueError("observation log is empty")
    index = {t: j for j, t in enumerate(tuples)}
    obj_index = {o: i for i, o in enumerate(objects)}
    counts = np.zeros((len(objects), len(tuples)))
    for obj, t in log:
        counts[obj_index[obj], index[t]] += 1
    return BeliefMatrix(tuple(objects), tuple(tuples), _normalize_rows(counts + lam))


def load_empirical_counts(path: str | Path | None = None) -> dict[str, dict[LocationTuple, float]]:
    """Read ``object,category,room,count`` rows; lines starting with '#' are provenance notes."""
    if path is None:
        path = Path(__file__).parent / "data" / "empirical_counts.csv"
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines()
             if ln.strip() and not ln.startswith("#")]
    reader = csv.DictReader(io.StringIO("\n".join(lines)))
    if reader.fieldnames != ["object", "category", "room", "count"]:
        raise ValueError("empirical counts header must be object,category,room,count")
    counts: dict[str, dict[LocationTuple, float]] = {}
    for rec in reader:
        t = LocationTuple(rec["category"], rec["room"])
        counts.setdefault(rec["object"], {})
        counts[rec["object"]][t] = counts[rec["object"]].get(t, 0.0) + float(rec["count"])
    return counts


def similarity(t: LocationTuple, t2: LocationTuple) -> int:
    """0 for the same tuple, 1 if landmark category or room matches, 2 if neither does."""
    return 2 - (int(t.category == t2.category) + int(t.room == t2.room))


def similarity_matrix(tuples: Sequence[LocationTuple]) -> np.ndarray:
    return np.array([[similarity(a, b) for b in tuples] for a in tuples], dtype=float)


def observe_update(belief: BeliefMatrix, obj: str, t_obs: LocationTuple,
                   beta: float = LEARNING_RATE, episode: int = 1,
                   floor: float = PROBABILITY_FLOOR) -> BeliefMatrix:
    """One multi-resolution P-learning step for ``obj`` seen at ``t_obs`` during ``episode``.

    The observed entry moves toward 1 by beta/sqrt(N); every other entry moves
    toward 0 scaled by its similarity to the observed tuple. Entries are floored and
    the row renormalized; an entry already below the floor is never raised by the
    clamp, so exact zeros stay zero.
    """
    if not 0 <= beta <= 1:
        raise ValueError("beta must lie in [0, 1]")
    if episode < 1:
        raise ValueError("episode must be >= 1")
    i = belief.object_index(obj)
    k = belief.tuple_index(t_obs)
    if beta == 0:
        return belief
    row = belief.p[i]
    rate = beta / math.sqrt(episode)
    sim = np.array([similarity(t_obs, t) for t in belief.tuples], dtype=float)
    new = row - rate * sim * (1.0 - row)
    new[k] = row[k] + rate * (1.0 - row[k])
    new = np.maximum(new, np.minimum(floor, row))
    return belief.with_row(obj, new / new.sum())


@dataclass(frozen=True)
class EpisodeHistory:
    """Newest-first buffer of up to ``horizon + 1`` belief snapshots."""

    snapshots: tuple[BeliefMatrix, ...] = ()
    horizon: int = HORIZON
    gamma: float = DISCOUNT

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if len(self.snapshots) > self.horizon + 1:
            object.__setattr__(self, "snapshots", tuple(self.snapshots[: self.horizon + 1]))

    def push(self, belief: BeliefMatrix) -> "EpisodeHistory":
        if self.snapshots:
            head = self.snapshots[0]
            if head.objects != belief.objects or head.tuples != belief.tuples:
                raise ValueError("snapshot ordering differs from buffered snapshots")
        return EpisodeHistory((belief,) + self.snapshots, self.horizon, self.gamma)

    def __len__(self) -> int:
        return len(self.snapshots)


def aggregate_history(history: EpisodeHistory) -> BeliefMatrix:
    """Discounted sum of the buffered snapshots, row-renormalized."""
    if not history.snapshots:
        raise ValueError("episode history is empty")
    n = min(history.horizon, len(history.snapshots) - 1)
    acc = np.zeros_like(history.snapshots[0].p)
    for t in range(n + 1):
        acc += history.gamma ** t * history.snapshots[t].p
    return history.snapshots[0].with_matrix(_normalize_rows(acc))


def room_mass(belief: BeliefMatrix, rooms: Sequence[str] | None = None):
    """Per-object probability mass summed over the tuples of each room.

    Returns ``(rooms, masses)`` with ``masses`` shaped (objects, rooms).
    """
    if rooms is None:
        rooms = _rooms_in_order(belief.tuples)
    col = {r: j for j, r in enumerate(rooms)}
    m = np.zeros((len(belief.objects), len(rooms)))
    for k, t in enumerate(belief.tuples):
        m[:, col[t.room]] += belief.p[:, k]
    return tuple(rooms), m


def _rooms_in_order(tuples) -> tuple[str, ...]:
    present = {t.room for t in tuples}
    ordered = [r for r in ROOM_LABELS if r in present]
    return tuple(ordered + sorted(present - set(ordered)))


def room_posterior(belief: BeliefMatrix, room_prior: Mapping[str, float] | None = None):
    """P(R|O) from P(O|R) and a room prior (uniform over the belief's rooms by default).

    Returns ``(rooms, posterior)`` with ``posterior`` shaped (objects, rooms).
    """
    rooms, like = room_mass(belief)
    if room_prior is None:
        prior = np.full(len(rooms), 1.0 / len(rooms))
    else:
        prior = np.array([room_prior.get(r, 0.0) for r in rooms], dtype=float)
        if abs(prior.sum() - 1.0) > 1e-9:
            raise ValueError("room prior must sum to 1")
    joint = like * prior
    z = joint.sum(axis=1, keepdims=True)
    if np.any(z <= 0):
        raise ValueError("object has zero mass in every room")
    return rooms, joint / z


def wilson_halfwidth(p_hat, n, z: float = Z_95):
    """Wilson score half-width for a binomial proportion ``p_hat`` observed over ``n`` trials."""
    p_hat = np.asarray(p_hat, dtype=float)
    n = np.asarray(n, dtype=float)
    if np.any(n < 1):
        raise ValueError("n must be >= 1")
    var = p_hat * (1.0 - p_hat) / n
    out = (z * n / (z * z + n)) * np.sqrt(var + z * z / (4.0 * n * n))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ConvergenceReport:
    episode: int
    objects: tuple[str, ...]
    rooms: tuple[str, ...]
    posterior: np.ndarray = field(repr=False)
    halfwidth: np.ndarray = field(repr=False)
    threshold: float = CI_THRESHOLD

    @property
    def object_converged(self) -> dict[str, bool]:
        ok = np.all(self.halfwidth <= self.threshold, axis=1)
        return dict(zip(self.objects, map(bool, ok)))

    @property
    def terminated(self) -> bool:
        return bool(np.all(self.halfwidth <= self.threshold))


def check_termination(belief: BeliefMatrix, episode: int, z: float = Z_95,
                      threshold: float = CI_THRESHOLD) -> ConvergenceReport:
    if episode < 1:
        raise ValueError("episode must be >= 1")
    rooms, post = room_posterior(belief)
    hw = wilson_halfwidth(post, episode, z)
    return ConvergenceReport(episode, belief.objects, rooms, post, np.asarray(hw), threshold)


def kl_divergence(row, true_row, eps: float = KL_SMOOTHING) -> float:
    """Smoothed KL divergence sum P ln((P + eps) / (P_true + eps)), natural log."""
    p = np.asarray(row, dtype=float)
    q = np.asarray(true_row, dtype=float)
    if p.shape != q.shape:
        raise ValueError("rows must have the same length")
    return float(np.sum(p * np.log((p + eps) / (q + eps))))
