"""Landmark tracking and room labeling on synthetic 2D detections."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

ASSOCIATION_GATE = 0.5  # m
INITIAL_VARIANCE = 1.0  # m^2
MEASUREMENT_VARIANCE = 0.04  # m^2

FREQUENCY_COLUMNS = ("bedroom", "living", "bathroom", "study")
FREQUENCY_LABELS = ("Bedroom", "LivingRoom", "Bathroom", "StudyRoom")


@dataclass(frozen=True)
class Detection:
    category: str
    position: tuple[float, float]

    def __post_init__(self):
        if not np.all(np.isfinite(self.position)):
            raise ValueError("detection coordinates must be finite")


@dataclass(frozen=True)
class Track:
    id: int
    category: str
    mean: tuple[float, float]
    variance: tuple[float, float] = (INITIAL_VARIANCE, INITIAL_VARIANCE)

    def __post_init__(self):
        if min(self.variance) <= 0:
            raise ValueError("track variance must be positive")


@dataclass(frozen=True)
class Assignment:
    pairs: tuple[tuple[int, int], ...]
    unmatched_tracks: tuple[int, ...]
    unmatched_detections: tuple[int, ...]
    total_cost: float


def association_matrix(tracks, detections) -> np.ndarray:
    """Euclidean distance between every track mean (rows) and detection (columns)."""
    if not tracks or not detections:
        return np.zeros((len(tracks), len(detections)))
    p = np.array([t.mean for t in tracks], dtype=float)
    c = np.array([d.position for d in detections], dtype=float)
    diff = p[:, None, :] - c[None, :, :]
    return np.sqrt(np.einsum("kld,kld->kl", diff, diff))


def assign(costs, gate: float = ASSOCIATION_GATE) -> Assignment:
    """Minimum-cost matching of size min(K, L); pairs costing more than ``gate`` are dissolved.

    ``total_cost`` is the cost of the full optimal matching, before gating.
    """
    costs = np.asarray(costs, dtype=float)
    if costs.ndim != 2:
        raise ValueError("cost matrix must be 2-D")
    k, l = costs.shape
    if k == 0 or l == 0:
        return Assignment((), tuple(range(k)), tuple(range(l)), 0.0)
    if not np.all(np.isfinite(costs)) or np.any(costs < 0):
        raise ValueError("costs must be finite and non-negative")
    rows, cols = linear_sum_assignment(costs)
    total = float(costs[rows, cols].sum())
    pairs = tuple((int(r), int(c)) for r, c in zip(rows, cols) if costs[r, c] <= gate)
    matched_r = {r for r, _ in pairs}
    matched_c = {c for _, c in pairs}
    return Assignment(pairs,
                      tuple(r for r in range(k) if r not in matched_r),
                      tuple(c for c in range(l) if c not in matched_c),
                      total)


def kalman_update(track: Track, detection: Detection,
                  meas_var: float = MEASUREMENT_VARIANCE) -> Track:
    """Static-position Kalman correction, independently per axis."""
    if track.category != detection.category:
        raise ValueError(f"category mismatch: track {track.category!r} vs detection {detection.category!r}")
    if not meas_var > 0:
        raise ValueError("measurement variance must be positive")
    mean = np.asarray(track.mean, dtype=float)
    var = np.asarray(track.variance, dtype=float)
    z = np.asarray(detection.position, dtype=float)
    gain = var / (var + meas_var)
    new_mean = mean + gain * (z - mean)
    new_var = (1.0 - gain) * var
    return replace(track, mean=tuple(new_mean.tolist()), variance=tuple(new_var.tolist()))


class LandmarkTracker:
    """Persistent landmark tracks: associate, refine matched tracks, spawn tracks for the rest.

    Tracks are never deleted. Association is restricted to same-category pairs.
    """

    def __init__(self, gate: float = ASSOCIATION_GATE, meas_var: float = MEASUREMENT_VARIANCE,
                 initial_var: float = INITIAL_VARIANCE):
        self.gate = gate
        self.meas_var = meas_var
        self.initial_var = initial_var
        self.tracks: list[Track] = []

    def step(self, detections) -> list[Track]:
        detections = list(detections)
        costs = association_matrix(self.tracks, detections)
        for i, t in enumerate(self.tracks):
            for j, d in enumerate(detections):
                if t.category != d.category:
                    costs[i, j] = 1e6
        result = assign(costs, self.gate)
        for i, j in result.pairs:
            self.tracks[i] = kalman_update(self.tracks[i], detections[j], self.meas_var)
        for j in result.unmatched_detections:
            d = detections[j]
            self.tracks.append(Track(len(self.tracks), d.category, tuple(map(float, d.position)),
                                     (self.initial_var, self.initial_var)))
        return list(self.tracks)


@dataclass(frozen=True)
class FrequencyTable:
    categories: tuple[str, ...]
    counts: np.ndarray  # (n_categories, 4), columns in FREQUENCY_LABELS order
    provenance: str = ""

    def row(self, category: str) -> np.ndarray:
        try:
            return self.counts[self.categories.index(category)]
        except ValueError:
            raise KeyError(f"category {category!r} not in frequency table") from None


def parse_frequency_table(text: str) -> FrequencyTable:
    provenance = []
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            provenance.append(line.lstrip("#").strip())
        elif line.strip():
            body.append(line)
    reader = csv.reader(io.StringIO("\n".join(body)))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != ("category",) + FREQUENCY_COLUMNS:
        raise ValueError(f"frequency table header must be category,{','.join(FREQUENCY_COLUMNS)}")
    cats, rows = [], []
    for rec in reader:
        if len(rec) != 5:
            raise ValueError(f"malformed frequency row {rec}")
        counts = [int(v) for v in rec[1:]]
        if min(counts) < 0:
            raise ValueError(f"negative count in row {rec}")
        cats.append(rec[0].strip())
        rows.append(counts)
    return FrequencyTable(tuple(cats), np.array(rows, dtype=float).reshape(-1, 4),
                          " ".join(provenance))


def load_frequency_table(path: str | Path | None = None) -> FrequencyTable:
    if path is None:
        path = Path(__file__).parent / "data" / "room_frequency.csv"
    return parse_frequency_table(Path(path).read_text(encoding="utf-8"))


def label_room(categories_in_region, table: FrequencyTable) -> np.ndarray:
    """Posterior over the four room labels given the landmark categories in a region.

    Each landmark contributes its row-normalized counts; contributions multiply and the
    product is renormalized. Raises if a row is all zero or the product vanishes.
    """
    post = np.ones(4)
    for cat in categories_in_region:
        row = table.row(cat)
        total = row.sum()
        if total <= 0:
            raise ValueError(f"frequency row for {cat!r} is all zero")
        post = post * (row / total)
    z = post.sum()
    if z <= 0:
        raise ValueError("ambiguous region: every room label has zero probability")
    return post / z
