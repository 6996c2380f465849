"""Grid worlds, sensor footprints and intruder paths.

Cells are ``(row, col)`` tuples with row 0 at the top of the map, so North
decreases the row index.  The world graph connects 4-adjacent free cells.
"""

from __future__ import annotations

import builtins
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path as FsPath
from typing import Iterable, Sequence

import networkx as nx
import numpy as np

Cell = tuple[int, int]

OBSTACLE = "#"
FREE = "."
SOURCE = "S"
TERMINAL = "T"

# Orientation order used everywhere: index k of a sensor's orientation list.
DIRECTIONS: dict[str, Cell] = {"E": (0, 1), "N": (-1, 0), "W": (0, -1), "S": (1, 0)}
ORIENTATIONS = tuple(DIRECTIONS)


class MapError(ValueError):
    """Raised for malformed or inconsistent grid maps."""


class PathEnumerationError(ValueError):
    def __init__(self, message: str, achievable: int):
        super().__init__(message)
        self.achievable = achievable


@dataclass(frozen=True)
class GridEnvironment:
    width: int
    height: int
    obstacles: frozenset[Cell]
    source: Cell
    terminal: Cell
    sensor_cells: tuple[Cell, ...] = ()
    sensor_symbols: tuple[str, ...] = ()

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise MapError("empty map")
        if not self.sensor_symbols:
            object.__setattr__(
                self, "sensor_symbols", tuple(str(q + 1) for q in range(len(self.sensor_cells)))
            )
        if len(self.sensor_symbols) != len(self.sensor_cells):
            raise MapError("sensor_symbols and sensor_cells differ in length")
        for name, cell in [("source", self.source), ("terminal", self.terminal)] + [
            (f"sensor {s}", c) for s, c in zip(self.sensor_symbols, self.sensor_cells)
        ]:
            if not self.in_bounds(cell):
                raise MapError(f"{name} {cell} is out of bounds")
            if cell in self.obstacles:
                raise MapError(f"{name} {cell} is on an obstacle")
        if self.source == self.terminal:
            raise MapError("source and terminal coincide")

    def in_bounds(self, cell: Cell) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and cell not in self.obstacles

    @property
    def free_cells(self) -> list[Cell]:
        return [(r, c) for r in range(self.height) for c in range(self.width) if (r, c) not in self.obstacles]

    def neighbors(self, cell: Cell) -> list[Cell]:
        r, c = cell
        out = [(r + dr, c + dc) for dr, dc in DIRECTIONS.values()]
        return sorted(n for n in out if self.is_free(n))

    def graph(self) -> nx.Graph:
        g = nx.Graph()
        free = self.free_cells
        g.add_nodes_from(free)
        for r, c in free:
            for nb in ((r, c + 1), (r + 1, c)):
                if self.is_free(nb):
                    g.add_edge((r, c), nb)
        return g


def parse_grid_map(text: str) -> GridEnvironment:
    """Parse an ASCII map.

    ``#`` is an obstacle, ``.`` free, ``S``/``T`` the intruder's source and
    terminal, and any other digit or letter marks a sensor cell. Sensors are
    ordered by symbol.
    """
    rows = [line.rstrip("\r") for line in text.splitlines()]
    while rows and not rows[-1].strip():
        rows.pop()
    if not rows:
        raise MapError("empty map")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise MapError("map is not rectangular")

    obstacles, sources, terminals, sensors = set(), [], [], {}
    for r, line in enumerate(rows):
        for c, ch in enumerate(line):
            if ch == OBSTACLE:
                obstacles.add((r, c))
            elif ch == SOURCE:
                sources.append((r, c))
            elif ch == TERMINAL:
                terminals.append((r, c))
            elif ch == FREE:
                continue
            elif ch.isalnum():
                if ch in sensors:
                    raise MapError(f"duplicate sensor symbol {ch!r}")
                sensors[ch] = (r, c)
            else:
                raise MapError(f"unknown map character {ch!r} at {(r, c)}")
    if not sources:
        raise MapError("missing source")
    if len(sources) > 1:
        raise MapError("multiple sources")
    if not terminals:
        raise MapError("missing terminal")
    if len(terminals) > 1:
        raise MapError("multiple terminals")
    symbols = tuple(sorted(sensors))
    return GridEnvironment(
        width=width,
        height=len(rows),
        obstacles=frozenset(obstacles),
        source=sources[0],
        terminal=terminals[0],
        sensor_cells=tuple(sensors[s] for s in symbols),
        sensor_symbols=symbols,
    )


def load_grid_map(path) -> GridEnvironment:
    return parse_grid_map(FsPath(path).read_text())


def render_grid_map(env: GridEnvironment) -> str:
    grid = [[FREE] * env.width for _ in range(env.height)]
    for r, c in env.obstacles:
        grid[r][c] = OBSTACLE
    for sym, (r, c) in zip(env.sensor_symbols, env.sensor_cells):
        grid[r][c] = sym
    grid[env.source[0]][env.source[1]] = SOURCE
    grid[env.terminal[0]][env.terminal[1]] = TERMINAL
    return "\n".join("".join(row) for row in grid) + "\n"


def _blocks(obstacle: Cell, start: Cell, end: Cell) -> bool:
    # Does the segment between cell centres cross the open square of `obstacle`?
    lo, hi = Fraction(0), Fraction(1)
    for axis in (0, 1):
        p0, d = start[axis], end[axis] - start[axis]
        a, b = Fraction(2 * obstacle[axis] - 1, 2), Fraction(2 * obstacle[axis] + 1, 2)
        if d == 0:
            if not a < p0 < b:
                return False
            continue
        t1, t2 = (a - p0) / d, (b - p0) / d
        if t1 > t2:
            t1, t2 = t2, t1
        lo, hi = max(lo, t1), min(hi, t2)
    return lo < hi


def line_of_sight(env: GridEnvironment, start: Cell, end: Cell) -> bool:
    """True when no obstacle interior lies on the straight segment start-end."""
    r0, r1 = sorted((start[0], end[0]))
    c0, c1 = sorted((start[1], end[1]))
    for r in range(r0, r1 + 1):
        for c in range(c0, c1 + 1):
            if (r, c) in env.obstacles and _blocks((r, c), start, end):
                return False
    return True


def compute_coverage(
    env: GridEnvironment,
    cell: Cell,
    direction: str,
    range: int | None = None,
    cone_width: int = 1,
) -> frozenset[Cell]:
    """Cells seen by a sensor at `cell` facing `direction`.

    The footprint is an axis-aligned cone: at forward distance ``s`` it spans
    lateral offsets ``|l| <= min(s, (cone_width - 1) // 2)``.  A cell is
    covered when it is free and the segment from the sensor is unobstructed.
    ``range=None`` means unbounded (up to the map extent).
    """
    if not env.is_free(cell):
        raise ValueError(f"sensor cell {cell} is not free")
    if direction not in DIRECTIONS:
        raise ValueError(f"unknown direction {direction!r}")
    if cone_width < 1 or cone_width % 2 == 0:
        raise ValueError("cone_width must be a positive odd integer")
    reach = max(env.width, env.height) if range is None else range
    if reach < 1:
        raise ValueError("range must be >= 1")
    dr, dc = DIRECTIONS[direction]
    pr, pc = dc, dr  # perpendicular
    half = (cone_width - 1) // 2
    covered = {cell}
    for s in builtins.range(1, reach + 1):
        for lat in builtins.range(-min(s, half), min(s, half) + 1):
            target = (cell[0] + s * dr + lat * pr, cell[1] + s * dc + lat * pc)
            if env.is_free(target) and line_of_sight(env, cell, target):
                covered.add(target)
    return frozenset(covered)


@dataclass(frozen=True)
class Sensor:
    id: int
    cell: Cell
    orientations: tuple[str, ...]
    coverage: tuple[frozenset[Cell], ...]
    orientation_costs: tuple[float, ...]
    p_true: float
    p_bounds: tuple[float, float]
    symbol: str = ""

    def __post_init__(self):
        lo, hi = self.p_bounds
        if not 0 < lo < hi < 1:
            raise ValueError(f"sensor {self.id}: need 0 < p_min < p_max < 1, got {self.p_bounds}")
        if not lo <= self.p_true <= hi:
            raise ValueError(f"sensor {self.id}: p_true {self.p_true} outside {self.p_bounds}")
        if len(self.coverage) != len(self.orientations) or len(self.orientation_costs) != len(self.orientations):
            raise ValueError(f"sensor {self.id}: one coverage set and cost per orientation required")
        if any(c < 0 for c in self.orientation_costs):
            raise ValueError(f"sensor {self.id}: orientation costs must be nonnegative")

    @property
    def d(self) -> int:
        return len(self.orientations)


@dataclass(frozen=True)
class Path:
    id: int
    nodes: tuple[Cell, ...]
    cost: float = 0.0

    @property
    def length(self) -> int:
        return len(self.nodes) - 1


def is_simple_path(env: GridEnvironment, nodes: Sequence[Cell]) -> bool:
    if not nodes or nodes[0] != env.source or nodes[-1] != env.terminal:
        return False
    if len(set(nodes)) != len(nodes) or not all(env.is_free(n) for n in nodes):
        return False
    return all(abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1 for a, b in zip(nodes, nodes[1:]))


def _loop_erased_walk(env: GridEnvironment, rng: np.random.Generator, max_steps: int):
    path = [env.source]
    where = {env.source: 0}
    for _ in range(max_steps):
        nbs = env.neighbors(path[-1])
        nxt = nbs[int(rng.integers(len(nbs)))]
        if nxt in where:
            cut = where[nxt]
            for dropped in path[cut + 1:]:
                del where[dropped]
            del path[cut + 1:]
        else:
            where[nxt] = len(path)
            path.append(nxt)
        if nxt == env.terminal:
            return tuple(path)
    return None


def enumerate_paths(
    env: GridEnvironment,
    count: int,
    seed: int = 0,
    cost_scale: float = 0.0,
    max_shortest: int | None = None,
    walk_attempts: int | None = None,
) -> list[Path]:
    """Return `count` distinct simple source-to-terminal paths.

    Shortest paths come first (Yen ordering, at most `max_shortest` of them);
    any shortfall is filled with seeded loop-erased random walks and finally
    with longer Yen paths.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    g = env.graph()
    if not nx.has_path(g, env.source, env.terminal):
        raise PathEnumerationError("terminal unreachable from source", achievable=0)

    found: list[tuple[Cell, ...]] = []
    seen: set[tuple[Cell, ...]] = set()

    def take(nodes):
        nodes = tuple(nodes)
        if nodes not in seen:
            seen.add(nodes)
            found.append(nodes)

    yen = nx.shortest_simple_paths(g, env.source, env.terminal)
    pending = None
    shortest = None
    for nodes in yen:
        if shortest is None:
            shortest = len(nodes)
        if len(nodes) > shortest:
            pending = nodes
            break
        take(nodes)
        if len(found) == min(count, max_shortest or count):
            break

    if len(found) < count:
        rng = np.random.default_rng(seed)
        attempts = 20 * count if walk_attempts is None else walk_attempts
        max_steps = 50 * g.number_of_nodes() ** 2
        for _ in range(attempts):
            walk = _loop_erased_walk(env, rng, max_steps)
            if walk is not None:
                take(walk)
            if len(found) == count:
                break

    if len(found) < count:
        if pending is not None:
            take(pending)
        for nodes in yen:
            if len(found) == count:
                break
            take(nodes)
    if len(found) < count:
        raise PathEnumerationError(
            f"requested {count} paths but only {len(found)} distinct simple paths exist",
            achievable=len(found),
        )
    return [Path(id=j, nodes=nodes, cost=cost_scale * (len(nodes) - 1)) for j, nodes in enumerate(found)]


@dataclass(frozen=True)
class CoverageTensor:
    """Coverage counts ``counts[q, k, j]``: nodes of path j seen by sensor q in orientation k."""

    counts: np.ndarray

    def __getitem__(self, key):
        return self.counts[key]

    @property
    def shape(self):
        return self.counts.shape


def build_coverage_tensor(env: GridEnvironment, sensors: Sequence[Sensor], paths: Sequence[Path]) -> CoverageTensor:
    if not sensors:
        raise ValueError("at least one sensor is required")
    d = sensors[0].d
    if any(s.d != d for s in sensors):
        raise ValueError("all sensors must have the same number of orientations")
    counts = np.zeros((len(sensors), d, len(paths)), dtype=np.int64)
    path_sets = [frozenset(p.nodes) for p in paths]
    for q, sensor in enumerate(sensors):
        for k, cov in enumerate(sensor.coverage):
            for j, nodes in enumerate(path_sets):
                counts[q, k, j] = len(cov & nodes)
    return CoverageTensor(counts)


@dataclass
class EnvironmentConfig:
    """Knobs for turning a map into sensors and paths.

    ``sensors`` maps a sensor symbol (or ``"default"``) to a dict with
    ``p_true``, ``p_bounds`` and optionally ``orientation_costs``.
    """

    coverage_range: int | None = None
    cone_width: int = 1
    orientation_costs: list[float] = field(default_factory=lambda: [0.0] * len(ORIENTATIONS))
    path_cost_scale: float = 0.0
    num_paths: int = 50
    max_shortest_paths: int | None = 10
    path_seed: int = 0
    sensors: dict = field(default_factory=lambda: {"default": {"p_true": 0.8, "p_bounds": [0.5, 0.95]}})

    @classmethod
    def from_dict(cls, data: dict) -> "EnvironmentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown environment config keys: {sorted(unknown)}")
        cfg = cls(**data)
        if len(cfg.orientation_costs) != len(ORIENTATIONS):
            raise ValueError("orientation_costs: need one cost per orientation (E, N, W, S)")
        if cfg.cone_width < 1 or cfg.cone_width % 2 == 0:
            raise ValueError("cone_width: must be a positive odd integer")
        if cfg.coverage_range is not None and cfg.coverage_range < 1:
            raise ValueError("coverage_range: must be >= 1")
        return cfg

    def sensor_params(self, symbol: str) -> dict:
        params = dict(self.sensors.get("default", {}))
        params.update(self.sensors.get(symbol, {}))
        return params


def load_environment_config(path) -> EnvironmentConfig:
    return EnvironmentConfig.from_dict(json.loads(FsPath(path).read_text()))


def build_sensors(env: GridEnvironment, config: EnvironmentConfig, count: int | None = None) -> list[Sensor]:
    """Instantiate the first `count` sensors of the map (all when None)."""
    count = len(env.sensor_cells) if count is None else count
    if count > len(env.sensor_cells):
        raise ValueError(f"map has {len(env.sensor_cells)} sensor slots, {count} requested")
    sensors = []
    for q in range(count):
        sym, cell = env.sensor_symbols[q], env.sensor_cells[q]
        params = config.sensor_params(sym)
        coverage = tuple(
            compute_coverage(env, cell, o, config.coverage_range, config.cone_width) for o in ORIENTATIONS
        )
        sensors.append(
            Sensor(
                id=q + 1,
                cell=cell,
                orientations=ORIENTATIONS,
                coverage=coverage,
                orientation_costs=tuple(float(c) for c in params.get("orientation_costs", config.orientation_costs)),
                p_true=float(params["p_true"]),
                p_bounds=tuple(float(b) for b in params["p_bounds"]),
                symbol=sym,
            )
        )
    return sensors


def nine_room_map() -> str:
    """The bundled 19x19 nine-room fixture (our own layout)."""
    return (FsPath(__file__).parent / "data" / "nine_rooms.txt").read_text()


def free_cell_count(env: GridEnvironment) -> int:
    return env.width * env.height - len(env.obstacles)


def cells_of(paths: Iterable[Path]) -> set[Cell]:
    return {n for p in paths for n in p.nodes}
