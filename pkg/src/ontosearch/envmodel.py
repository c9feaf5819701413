"""Simulated household world: occupancy grid, rooms, landmarks and object placements."""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

ROOM_LABELS = ("Bedroom", "LivingRoom", "Bathroom", "StudyRoom")

Cell = tuple[int, int]

_TOP_KEYS = {"name", "grid", "rooms", "landmarks", "objects", "true_distribution", "start"}
_GRID_KEYS = {"width", "height", "resolution", "occupied"}
_ROOM_KEYS = {"id", "label", "rects"}
_LANDMARK_KEYS = {"category", "cell", "room"}

NORMALIZATION_TOL = 1e-6


class ConfigError(ValueError):
    """Raised when an environment config is malformed or violates an invariant."""


class NoPathError(RuntimeError):
    """No 4-connected free path joins the two cells."""


@dataclass(frozen=True, order=True)
class LocationTuple:
    category: str
    room: str

    def __str__(self) -> str:
        return f"{self.category}@{self.room}"

    @classmethod
    def parse(cls, text: str) -> "LocationTuple":
        category, sep, room = text.partition("@")
        if not sep or not category or not room:
            raise ConfigError(f"bad location tuple {text!r}, expected 'category@Room'")
        return cls(category, room)


@dataclass(frozen=True)
class GridMap:
    width: int
    height: int
    resolution: float
    occupied: np.ndarray = field(repr=False)  # bool, shape (height, width)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ConfigError("grid dimensions must be >= 1")
        if not self.resolution > 0:
            raise ConfigError("grid resolution must be > 0")
        if self.occupied.shape != (self.height, self.width):
            raise ConfigError("occupancy array does not match grid dimensions")
        self.occupied.setflags(write=False)

    @classmethod
    def from_occupied(cls, width: int, height: int, resolution: float,
                      occupied: Iterable[Cell] = ()) -> "GridMap":
        grid = np.zeros((height, width), dtype=bool)
        for x, y in occupied:
            if not (0 <= x < width and 0 <= y < height):
                raise ConfigError(f"occupied cell {(x, y)} outside grid")
            grid[y, x] = True
        return cls(width, height, float(resolution), grid)

    def in_bounds(self, cell: Cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and not self.occupied[cell[1], cell[0]]

    def neighbors(self, cell: Cell):
        x, y = cell
        for nb in ((x, y - 1), (x + 1, y), (x, y + 1), (x - 1, y)):
            if self.is_free(nb):
                yield nb


@dataclass(frozen=True)
class Room:
    id: str
    label: str
    cells: frozenset

    @property
    def size(self) -> int:
        return len(self.cells)


@dataclass(frozen=True)
class LandmarkInstance:
    id: str
    category: str
    position: Cell
    room_id: str


@dataclass(frozen=True)
class WorldState:
    episode: int
    placements: Mapping[str, LocationTuple]
    tuples: frozenset = frozenset()

    def to_dict(self) -> dict:
        return {"episode": self.episode,
                "placements": {o: str(t) for o, t in sorted(self.placements.items())}}


def _manhattan(a: Cell, b: Cell) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def astar_steps(grid: GridMap, a: Cell, b: Cell) -> int:
    """Number of moves on a shortest 4-connected path, via A* with a Manhattan heuristic."""
    for c in (a, b):
        if not grid.is_free(c):
            raise ConfigError(f"cell {c} is not a free cell")
    if a == b:
        return 0
    g = {a: 0}
    counter = 0
    frontier = [(_manhattan(a, b), counter, a)]
    closed = set()
    while frontier:
        _, _, cur = heapq.heappop(frontier)
        if cur == b:
            return g[cur]
        if cur in closed:
            continue
        closed.add(cur)
        for nb in grid.neighbors(cur):
            cost = g[cur] + 1
            if cost < g.get(nb, math.inf):
                g[nb] = cost
                counter += 1
                heapq.heappush(frontier, (cost + _manhattan(nb, b), counter, nb))
    raise NoPathError(f"no free path between {a} and {b}")


def shortest_path_distance(grid: GridMap, a: Cell, b: Cell) -> float:
    """Shortest 4-connected path length between two free cells, in meters."""
    return astar_steps(grid, tuple(a), tuple(b)) * grid.resolution


def bfs_steps(grid: GridMap, source: Cell) -> np.ndarray:
    """Step counts from ``source`` to every cell; -1 marks unreachable or occupied cells.

    Breadth-first search as a wavefront: each step dilates the frontier by one
    4-neighbour over the free, not yet reached cells.
    """
    if not grid.is_free(source):
        raise ConfigError(f"cell {source} is not a free cell")
    free = ~grid.occupied
    dist = np.full((grid.height, grid.width), -1, dtype=np.int64)
    frontier = np.zeros_like(free)
    frontier[source[1], source[0]] = True
    d = 0
    while frontier.any():
        dist[frontier] = d
        grown = np.zeros_like(frontier)
        grown[1:, :] |= frontier[:-1, :]
        grown[:-1, :] |= frontier[1:, :]
        grown[:, 1:] |= frontier[:, :-1]
        grown[:, :-1] |= frontier[:, 1:]
        frontier = grown & free & (dist < 0)
        d += 1
    return dist


class Environment:
    """Immutable household world.

    Tuples are ordered by (category, room label); every tuple maps to exactly one
    landmark instance. Distances between cells are cached per source cell.
    """

    def __init__(self, grid: GridMap, rooms: Sequence[Room], landmarks: Sequence[LandmarkInstance],
                 objects: Sequence[str], true_distribution: np.ndarray, start: Cell | None = None,
                 name: str = "environment"):
        self.name = name
        self.grid = grid
        self.rooms = tuple(rooms)
        self.landmarks = tuple(landmarks)
        self.objects = tuple(objects)
        self._rooms_by_id = {r.id: r for r in self.rooms}
        by_tuple = {}
        for lm in self.landmarks:
            t = LocationTuple(lm.category, self._rooms_by_id[lm.room_id].label)
            by_tuple[t] = lm
        self.tuples = tuple(sorted(by_tuple))
        self._landmark_of = by_tuple
        self._tuple_index = {t: i for i, t in enumerate(self.tuples)}
        self._object_index = {o: i for i, o in enumerate(self.objects)}
        self.true_distribution = np.array(true_distribution, dtype=float)
        self.true_distribution.setflags(write=False)
        cdf = np.cumsum(self.true_distribution, axis=1)
        self._cdf = cdf / cdf[:, -1:]
        self._access = {t: self._access_cell(by_tuple[t]) for t in self.tuples}
        self.start = tuple(start) if start is not None else self._access[self.tuples[0]]
        if not grid.is_free(self.start):
            raise ConfigError(f"start cell {self.start} is not free")
        self._fields: dict[Cell, np.ndarray] = {}

    def __repr__(self) -> str:
        return (f"Environment({self.name!r}, rooms={len(self.rooms)}, "
                f"tuples={len(self.tuples)}, objects={len(self.objects)})")

    def _access_cell(self, lm: LandmarkInstance) -> Cell:
        room_cells = self._rooms_by_id[lm.room_id].cells
        free = sorted(nb for nb in self.grid.neighbors(lm.position))
        inside = [c for c in free if c in room_cells]
        if inside:
            return inside[0]
        if free:
            return free[0]
        return lm.position

    # lookups
    def room(self, room_id: str) -> Room:
        return self._rooms_by_id[room_id]

    @property
    def room_labels(self) -> tuple[str, ...]:
        return tuple(sorted({r.label for r in self.rooms}, key=_label_key))

    def tuple_index(self, t: LocationTuple) -> int:
        try:
            return self._tuple_index[t]
        except KeyError:
            raise KeyError(f"unknown location tuple {t}") from None

    def object_index(self, obj: str) -> int:
        try:
            return self._object_index[obj]
        except KeyError:
            raise KeyError(f"unknown object {obj!r}") from None

    def landmark(self, t: LocationTuple) -> LandmarkInstance:
        return self._landmark_of[t]

    def access_cell(self, t: LocationTuple) -> Cell:
        """Cell the agent stands on when it is 'at' the landmark of tuple ``t``."""
        return self._access[t]

    def true_row(self, obj: str) -> np.ndarray:
        return self.true_distribution[self.object_index(obj)]

    # distances
    def distance_field(self, source: Cell) -> np.ndarray:
        source = tuple(source)
        fld = self._fields.get(source)
        if fld is None:
            fld = bfs_steps(self.grid, source)
            fld.setflags(write=False)
            self._fields[source] = fld
        return fld

    def distance(self, a: Cell, b: Cell) -> float:
        """Shortest-path distance in meters (cached breadth-first fields; equal to A*)."""
        steps = self.distance_field(a)[b[1], b[0]]
        if steps < 0:
            raise NoPathError(f"no free path between {tuple(a)} and {tuple(b)}")
        return float(steps) * self.grid.resolution

    def distance_to_tuple(self, cell: Cell, t: LocationTuple) -> float:
        return self.distance(cell, self._access[t])

    def distance_to_room(self, cell: Cell, room_label: str) -> float:
        fld = self.distance_field(cell)
        best = math.inf
        for room in self.rooms:
            if room.label != room_label:
                continue
            for x, y in room.cells:
                d = fld[y, x]
                if 0 <= d < best:
                    best = d
        if best == math.inf:
            raise NoPathError(f"room {room_label} unreachable from {tuple(cell)}")
        return float(best) * self.grid.resolution

    def room_size_fractions(self) -> dict[str, float]:
        sizes: dict[str, int] = {}
        for room in self.rooms:
            sizes[room.label] = sizes.get(room.label, 0) + room.size
        total = sum(sizes.values())
        return {label: n / total for label, n in sizes.items()}

    def room_of_cell(self, cell: Cell) -> str | None:
        for room in self.rooms:
            if tuple(cell) in room.cells:
                return room.label
        return None


def _label_key(label: str):
    return (ROOM_LABELS.index(label) if label in ROOM_LABELS else len(ROOM_LABELS), label)


def _check_keys(section: str, obj: Mapping, allowed: set, required: set):
    if not isinstance(obj, Mapping):
        raise ConfigError(f"{section}: expected an object")
    extra = set(obj) - allowed
    if extra:
        raise ConfigError(f"{section}: unknown keys {sorted(extra)}")
    missing = required - set(obj)
    if missing:
        raise ConfigError(f"{section}: missing keys {sorted(missing)}")


def _rect_cells(rect) -> set:
    if len(rect) != 4:
        raise ConfigError(f"room rect {rect} must be [x0, y0, x1, y1]")
    x0, y0, x1, y1 = (int(v) for v in rect)
    if x1 < x0 or y1 < y0:
        raise ConfigError(f"room rect {rect} has negative extent")
    return {(x, y) for x in range(x0, x1 + 1) for y in range(y0, y1 + 1)}


def environment_from_dict(cfg: Mapping) -> Environment:
    """Build and validate an :class:`Environment` from a parsed config document."""
    _check_keys("config", cfg, _TOP_KEYS, _TOP_KEYS - {"name", "start"})
    g = cfg["grid"]
    _check_keys("grid", g, _GRID_KEYS, _GRID_KEYS - {"occupied"})
    grid = GridMap.from_occupied(int(g["width"]), int(g["height"]), float(g["resolution"]),
                                 (tuple(c) for c in g.get("occupied", [])))

    rooms = []
    seen_cells: set = set()
    for r in cfg["rooms"]:
        _check_keys("room", r, _ROOM_KEYS, _ROOM_KEYS)
        if r["label"] not in ROOM_LABELS:
            raise ConfigError(f"room label {r['label']!r} not in {ROOM_LABELS}")
        cells = set()
        for rect in r["rects"]:
            cells |= _rect_cells(rect)
        cells = {c for c in cells if grid.is_free(c)}
        if not cells:
            raise ConfigError(f"room {r['id']!r} has no free cells")
        if cells & seen_cells:
            raise ConfigError(f"room {r['id']!r} overlaps another room")
        seen_cells |= cells
        rooms.append(Room(str(r["id"]), r["label"], frozenset(cells)))
    if not rooms:
        raise ConfigError("at least one room is required")
    ids = [r.id for r in rooms]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate room ids")
    rooms_by_id = {r.id: r for r in rooms}

    landmarks = []
    pairs = set()
    for i, lm in enumerate(cfg["landmarks"]):
        _check_keys("landmark", lm, _LANDMARK_KEYS, _LANDMARK_KEYS)
        cell = tuple(int(v) for v in lm["cell"])
        room = rooms_by_id.get(lm["room"])
        if room is None:
            raise ConfigError(f"landmark references unknown room {lm['room']!r}")
        if not grid.is_free(cell):
            raise ConfigError(f"landmark {lm['category']} at {cell} is on an occupied cell")
        if cell not in room.cells:
            raise ConfigError(f"landmark {lm['category']} at {cell} is outside room {room.id!r}")
        key = (lm["category"], room.label)
        if key in pairs:
            raise ConfigError(f"duplicate landmark {lm['category']!r} in room {room.label}")
        pairs.add(key)
        landmarks.append(LandmarkInstance(f"L{i}", lm["category"], cell, room.id))
    if not landmarks:
        raise ConfigError("at least one landmark is required")

    objects = list(cfg["objects"])
    if not objects or len(set(objects)) != len(objects):
        raise ConfigError("objects must be a non-empty list of unique names")
    objects = sorted(objects)
    tuples = sorted(LocationTuple(c, r) for c, r in pairs)
    index = {t: i for i, t in enumerate(tuples)}

    dist_cfg = cfg["true_distribution"]
    if set(dist_cfg) != set(objects):
        raise ConfigError("true_distribution must have exactly one row per object")
    table = np.zeros((len(objects), len(tuples)))
    for oi, obj in enumerate(objects):
        for key, p in dist_cfg[obj].items():
            t = LocationTuple.parse(key)
            if t not in index:
                raise ConfigError(f"true_distribution[{obj}] names unknown tuple {key!r}")
            if not (p >= 0 and math.isfinite(p)):
                raise ConfigError(f"true_distribution[{obj}][{key}] must be a finite non-negative number")
            table[oi, index[t]] = p
        total = table[oi].sum()
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise ConfigError(f"true_distribution[{obj}] sums to {total}, not 1")
        table[oi] /= total

    start = cfg.get("start")
    return Environment(grid, rooms, landmarks, objects, table,
                       start=tuple(start) if start is not None else None,
                       name=str(cfg.get("name", "environment")))


def load_environment(source: str | Path | Mapping) -> Environment:
    """Load an environment from a JSON path, JSON text, or an already parsed mapping."""
    if isinstance(source, Mapping):
        return environment_from_dict(source)
    text = None
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"environment config is not valid JSON: {exc}") from exc
    return environment_from_dict(cfg)


def reference_environment_path() -> Path:
    return Path(__file__).parent / "data" / "reference_env.json"


def load_reference_environment() -> Environment:
    return load_environment(reference_environment_path())


def sample_placements(env: Environment, episode: int, rng: np.random.Generator) -> WorldState:
    """Place every object independently at a tuple drawn from its true distribution."""
    if episode < 1:
        raise ValueError("episode must be >= 1")
    # same stream and result as rng.choice(n, p=row) per object, in one draw
    u = rng.random(len(env.objects))
    placements = {}
    for oi, obj in enumerate(env.objects):
        idx = int(env._cdf[oi].searchsorted(u[oi], side="right"))
        placements[obj] = env.tuples[idx]
    return WorldState(episode, placements, frozenset(env.tuples))


def episode_rng(seed: int, stream: int, episode: int) -> np.random.Generator:
    """Independent generator per (seed, stream, episode); streams separate unrelated draws."""
    return np.random.default_rng([int(seed), int(stream), int(episode)])


def observe_at(world: WorldState, t: LocationTuple) -> frozenset:
    """Objects resting at tuple ``t`` (perfect detection)."""
    if world.tuples and t not in world.tuples:
        raise KeyError(f"unknown location tuple {t}")
    return frozenset(o for o, p in world.placements.items() if p == t)
