"""Discrete-time evacuation engine.

Residents leave their buildings after a floor-dependent delay and walk
toward the open space whose boundary is nearest. Each tick runs, in order:
spawning, movement against a snapshot of the previous positions, danger
classification, falling-debris deaths while the ground shakes, and gate
checks with admission in ascending person order.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Any, Sequence

import numpy as np

from . import _kernels, streams
from .debris import DEBRIS_MODELS, PYRAMID, BuildingGeometryInput, DebrisSolution, make_debris_zone, solve_debris
from .geom import (
    ElevationGrid,
    Point2D,
    Polygon2D,
    SpatialIndex,
    equivalent_rectangle,
    longest_edge_midpoint,
    polygon_area,
    polygon_perimeter,
)
from .mobility import DEBRIS_SPEED_FACTOR, OBSTACLE_CLEARANCE, SpeedSlopeCurve, pack_neighbours
from .vulnerability import (
    CasualtyTable,
    ConfigurationError,
    DamageState,
    Typology,
    bin_damage_state,
    casualty_rate,
    classify_typology,
    normalize_mean_damage,
)

log = logging.getLogger(__name__)


class PersonState(enum.IntEnum):
    UNSPAWNED = 0
    VULNERABLE = 1
    IN_DANGER = 2
    SAFE = 3
    DEAD = 4


@dataclass
class ScenarioConfig:
    shake_duration: float = 30.0
    sim_duration: float = 300.0
    tick: float = 1.0
    household_size: int = 4
    seconds_per_floor: float = 15.0
    speed_min: float = 1.2
    speed_max: float = 1.6
    person_radius: float = 0.3
    discovery_radius: float = 2.0
    debris_model: str = PYRAMID
    ring_pile_height: float = 1.0
    slope_lookahead: float = 5.0
    arrival_overshoot: float = 0.5
    orbit_tolerance: float = 0.5
    door_offset: float = 0.05
    seed: int = 0
    casualty_table: CasualtyTable = field(default_factory=CasualtyTable.default)
    slope_curve: SpeedSlopeCurve = field(default_factory=SpeedSlopeCurve.default)

    def __post_init__(self):
        errors = []
        positive = (
            "shake_duration", "tick", "household_size", "speed_min", "speed_max", "person_radius",
            "discovery_radius", "ring_pile_height", "slope_lookahead", "arrival_overshoot",
            "orbit_tolerance", "door_offset",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                errors.append(f"{name} must be positive, got {getattr(self, name)}")
        if not self.sim_duration >= 0:
            errors.append(f"sim_duration must be >= 0, got {self.sim_duration}")
        if not self.seconds_per_floor >= 0:
            errors.append(f"seconds_per_floor must be >= 0, got {self.seconds_per_floor}")
        if self.speed_min > self.speed_max:
            errors.append("speed_min exceeds speed_max")
        if self.tick > 0 and abs(self.sim_duration / self.tick - round(self.sim_duration / self.tick)) > 1e-9:
            errors.append(f"tick {self.tick} does not divide sim_duration {self.sim_duration}")
        if int(self.household_size) != self.household_size:
            errors.append("household_size must be an integer")
        if self.debris_model not in DEBRIS_MODELS:
            errors.append(f"debris_model must be one of {DEBRIS_MODELS}, got {self.debris_model!r}")
        if not (isinstance(self.seed, int) and 0 <= self.seed < streams.SEED_LIMIT):
            errors.append(f"seed must be an integer in [0, 2**64), got {self.seed!r}")
        if errors:
            raise ConfigurationError(errors)

    @property
    def n_ticks(self) -> int:
        return int(round(self.sim_duration / self.tick))

    def to_dict(self) -> dict[str, Any]:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("casualty_table", "slope_curve")}
        out["casualty_table"] = [list(r) for r in self.casualty_table.rows()]
        out["slope_curve"] = [list(k) for k in self.slope_curve.knots()]
        return out

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class BuildingRecord:
    id: int
    footprint: Polygon2D
    floors: int
    apartments: int
    year: int
    mu_ds: float
    door: Point2D | None = None


@dataclass(frozen=True)
class OpenSpaceRecord:
    id: int
    polygon: Polygon2D
    locked: bool = False


@dataclass
class Building:
    id: int
    footprint: Polygon2D
    floors: int
    apartments: int
    year: int
    mu_ds: float
    door: Point2D
    typology: Typology
    damage_state: DamageState
    indoor_rate: float
    outdoor_rate: float
    debris: DebrisSolution
    debris_zone: Polygon2D | None


@dataclass
class OpenSpace:
    id: int
    polygon: Polygon2D
    locked: bool
    capacity: int
    occupancy: int = 0
    arrival_times: list[float] = field(default_factory=list)

    @property
    def min_arrival(self) -> float:
        return min(self.arrival_times) if self.arrival_times else 0.0

    @property
    def max_arrival(self) -> float:
        return max(self.arrival_times) if self.arrival_times else 0.0

    @property
    def avg_arrival(self) -> float:
        return math.fsum(self.arrival_times) / len(self.arrival_times) if self.arrival_times else 0.0


@dataclass(frozen=True)
class Person:
    id: int
    home: int
    floor: int
    natural_speed: float
    spawn_time: float
    position: Point2D
    state: PersonState
    target: int
    arrival_time: float | None


@dataclass(frozen=True)
class SpaceSummary:
    space_id: int
    locked: bool
    pct_population: float
    min_arrival_s: float
    max_arrival_s: float
    avg_arrival_s: float
    occupancy: int
    capacity: int


COUNT_COLUMNS = ("t", "safe", "vulnerable", "in_danger", "dead", "unspawned")


@dataclass
class SimulationResult:
    timeseries: list[tuple]
    spaces: list[SpaceSummary]
    total_residents: int
    config: dict[str, Any]
    seed: int
    stranded: int = 0

    @property
    def final_safe_fraction(self) -> float:
        if not self.total_residents:
            return 0.0
        return self.timeseries[-1][1] / self.total_residents


def _spawn_point(footprint: Polygon2D, door: Point2D, offset: float) -> tuple[float, float]:
    """Door moved ``offset`` outward along its edge normal."""
    ring = footprint.exterior
    best = (math.inf, 0.0, 0.0)
    for i in range(len(ring)):
        a, b = ring[i], ring[(i + 1) % len(ring)]
        d2, _, _ = _kernels.point_segment_d2(door.x, door.y, a[0], a[1], b[0], b[1])
        if d2 < best[0]:
            ex, ey = b[0] - a[0], b[1] - a[1]
            best = (d2, ex, ey)
    _, ex, ey = best
    norm = math.hypot(ex, ey)
    nx, ny = ey / norm, -ex / norm
    if not footprint.is_ccw:
        nx, ny = -nx, -ny
    return door.x + offset * nx, door.y + offset * ny


def _assess_building(rec: BuildingRecord, config: ScenarioConfig) -> Building:
    typ = classify_typology(rec.year, rec.floors)
    ds = bin_damage_state(rec.mu_ds)
    rect = equivalent_rectangle(polygon_area(rec.footprint), polygon_perimeter(rec.footprint))
    sol = solve_debris(
        BuildingGeometryInput(rect.x, rect.y, rec.floors, normalize_mean_damage(rec.mu_ds)),
        config.debris_model,
        config.ring_pile_height,
    )
    return Building(
        id=rec.id,
        footprint=rec.footprint,
        floors=rec.floors,
        apartments=rec.apartments,
        year=rec.year,
        mu_ds=rec.mu_ds,
        door=rec.door if rec.door is not None else longest_edge_midpoint(rec.footprint),
        typology=typ,
        damage_state=ds,
        indoor_rate=casualty_rate(config.casualty_table, typ, ds, "indoor"),
        outdoor_rate=casualty_rate(config.casualty_table, typ, ds, "outdoor"),
        debris=sol,
        debris_zone=make_debris_zone(rec.footprint, sol.buffer),
    )


class World:
    """Mutable simulation state. Person attributes are stored column-wise."""

    def __init__(self, buildings: list[Building], spaces: list[OpenSpace], elevation: ElevationGrid, config: ScenarioConfig):
        self.config = config
        self.buildings = buildings
        self.spaces = spaces
        self.elevation = elevation
        self.clock = 0.0
        self.tick_index = 0
        self.timeseries: list[tuple] = []

        self.obstacles = SpatialIndex(
            {i: b.footprint for i, b in enumerate(buildings)}
            | {len(buildings) + j: s.polygon for j, s in enumerate(spaces) if s.locked}
        )
        zone_ids = [i for i, b in enumerate(buildings) if b.debris_zone is not None]
        self.zones = SpatialIndex({i: buildings[i].debris_zone for i in zone_ids})
        self.zone_rates = np.array([buildings[i].outdoor_rate for i in self.zones.ids], dtype=np.float64)

        rings = [s.polygon.exterior for s in spaces]
        self.space_ptr = np.zeros(len(spaces) + 1, dtype=np.int64)
        self.space_ptr[1:] = np.cumsum([len(r) for r in rings])
        self.space_xy = np.ascontiguousarray(np.concatenate(rings))
        self.space_ccw = np.array([s.polygon.is_ccw for s in spaces])
        self.space_locked = np.array([s.locked for s in spaces])
        self.space_capacity = np.array([s.capacity for s in spaces], dtype=np.int64)
        self.space_occupancy = np.zeros(len(spaces), dtype=np.int64)

        g = elevation
        self._elev = (
            float(g.origin.x), float(g.origin.y), float(g.cell_size), int(g.n_cols), int(g.n_rows),
            np.ascontiguousarray(g.values, dtype=np.float64), float("nan") if g.nodata is None else float(g.nodata),
        )
        self._curve = (np.ascontiguousarray(config.slope_curve.slopes), np.ascontiguousarray(config.slope_curve.factors))

        self.spawn_xy = np.array(
            [_spawn_point(b.footprint, b.door, config.door_offset) for b in buildings], dtype=np.float64
        ).reshape(-1, 2)
        no_exclusion = np.zeros(len(spaces), dtype=np.bool_)
        self.building_target = np.array(
            [_kernels.nearest_space(x, y, self.spaces_packed, no_exclusion) for x, y in self.spawn_xy], dtype=np.int64
        )
        self._init_persons()

    @property
    def spaces_packed(self) -> tuple:
        return self.space_ptr, self.space_xy

    def _init_persons(self):
        cfg = self.config
        per_building = np.array([b.apartments * cfg.household_size for b in self.buildings], dtype=np.int64)
        n = int(per_building.sum())
        self.n_persons = n
        self.home = np.repeat(np.arange(len(self.buildings), dtype=np.int64), per_building)
        floors = np.array([b.floors for b in self.buildings], dtype=np.int64)[self.home]
        u_floor = streams.uniforms(cfg.seed, 0, streams.FLOOR, n)
        self.floor = np.minimum(1 + np.floor(u_floor * floors).astype(np.int64), floors)
        u_speed = streams.uniforms(cfg.seed, 0, streams.SPEED, n)
        self.speed = cfg.speed_min + u_speed * (cfg.speed_max - cfg.speed_min)
        self.spawn_time = (self.floor - 1) * cfg.seconds_per_floor

        indoor = np.array([b.indoor_rate for b in self.buildings], dtype=np.float64)[self.home]
        u_indoor = streams.uniforms(cfg.seed, 0, streams.INDOOR_DEATH, n)
        self.state = np.where(u_indoor < indoor, PersonState.DEAD, PersonState.UNSPAWNED).astype(np.int8)

        self.pos = np.full((n, 2), np.nan)
        self.target = np.full(n, -1, dtype=np.int64)
        self.orbit = np.full(n, -1, dtype=np.int64)
        self.discovered = np.zeros((n, len(self.spaces)), dtype=np.bool_)
        self.stranded = np.zeros(n, dtype=np.bool_)
        self.arrival = np.full(n, np.nan)
        self.in_zone = np.zeros(n, dtype=np.bool_)
        self.zone_rate = np.zeros(n, dtype=np.float64)

    def counts(self) -> tuple[int, int, int, int, int]:
        c = np.bincount(self.state, minlength=5)
        return (
            int(c[PersonState.SAFE]),
            int(c[PersonState.VULNERABLE]),
            int(c[PersonState.IN_DANGER]),
            int(c[PersonState.DEAD]),
            int(c[PersonState.UNSPAWNED]),
        )

    def record(self):
        self.timeseries.append((self.clock, *self.counts()))

    def person(self, i: int) -> Person:
        p = self.pos[i]
        return Person(
            id=int(i),
            home=self.buildings[self.home[i]].id,
            floor=int(self.floor[i]),
            natural_speed=float(self.speed[i]),
            spawn_time=float(self.spawn_time[i]),
            position=None if np.isnan(p[0]) else Point2D(float(p[0]), float(p[1])),
            state=PersonState(int(self.state[i])),
            target=self.spaces[self.target[i]].id if self.target[i] >= 0 else -1,
            arrival_time=None if np.isnan(self.arrival[i]) else float(self.arrival[i]),
        )


def build_world(
    buildings: Sequence[BuildingRecord],
    open_spaces: Sequence[OpenSpaceRecord],
    elevation: ElevationGrid,
    config: ScenarioConfig,
) -> World:
    if not open_spaces:
        raise ValueError("at least one open space is required")
    built = [_assess_building(b, config) for b in buildings]
    spaces = [
        OpenSpace(id=s.id, polygon=s.polygon, locked=s.locked, capacity=int(math.floor(2.0 * polygon_area(s.polygon))))
        for s in sorted(open_spaces, key=lambda s: s.id)
    ]
    world = World(built, spaces, elevation, config)
    world.record()
    log.info("world: %d buildings, %d spaces, %d residents", len(built), len(spaces), world.n_persons)
    return world


def select_target(world: World, i: int) -> int:
    """Id of the nearest space person ``i`` has not found locked."""
    x, y = world.pos[i]
    k = _kernels.nearest_space(x, y, world.spaces_packed, world.discovered[i])
    if k < 0:
        return world.spaces[world.target[i]].id
    return world.spaces[k].id


def _move(world: World, moving: np.ndarray, pool: ThreadPoolExecutor | None, workers: int):
    cfg = world.config
    radii = np.full(world.n_persons, 2.0 * cfg.person_radius)
    nbr = pack_neighbours(world.pos, radii, moving)
    snapshot = world.pos
    out = snapshot.copy()
    params = (cfg.tick, DEBRIS_SPEED_FACTOR, OBSTACLE_CLEARANCE, cfg.arrival_overshoot, cfg.slope_lookahead)
    zones = (world.zones.packed(), world.zone_rates)
    args = (
        snapshot, out, world.speed, world.target, world.orbit, world.spaces_packed, zones,
        world.obstacles.packed(), nbr, world._elev, world._curve[0], world._curve[1], params,
    )
    if pool is None or workers <= 1 or len(moving) < 2:
        _kernels.move_chunk(moving, *args)
    else:
        chunks = [c for c in np.array_split(moving, workers) if len(c)]
        for f in [pool.submit(_kernels.move_chunk, c, *args) for c in chunks]:
            f.result()
    world.pos = out


def tick(world: World, pool: ThreadPoolExecutor | None = None, workers: int = 1) -> World:
    """Advance ``world`` by one tick in place and return it."""
    cfg = world.config
    now = world.clock
    state = world.state

    due = np.flatnonzero((state == PersonState.UNSPAWNED) & (world.spawn_time <= now + 1e-9))
    if len(due):
        state[due] = PersonState.VULNERABLE
        world.pos[due] = world.spawn_xy[world.home[due]]
        world.target[due] = world.building_target[world.home[due]]

    moving = np.flatnonzero((state == PersonState.VULNERABLE) | (state == PersonState.IN_DANGER))
    if len(moving):
        _move(world, moving, pool, workers)
        _kernels.classify_zones(moving, world.pos, (world.zones.packed(), world.zone_rates), world.in_zone, world.zone_rate)
        state[moving] = np.where(world.in_zone[moving], PersonState.IN_DANGER, PersonState.VULNERABLE)

        if now < cfg.shake_duration:
            _outdoor_deaths(world, moving)

        before = world.space_occupancy.copy()
        _kernels.handle_arrivals(
            world.pos, state, world.target, world.orbit, world.discovered, world.stranded, world.arrival,
            world.spaces_packed, world.space_ccw, world.space_locked, world.space_occupancy,
            world.space_capacity, now + cfg.tick, cfg.discovery_radius, cfg.orbit_tolerance,
        )
        if np.any(world.space_occupancy != before):
            arrived = moving[(state[moving] == PersonState.SAFE)]
            for i in arrived:
                sp = world.spaces[world.target[i]]
                sp.arrival_times.append(float(world.arrival[i]))
            for sp, occ in zip(world.spaces, world.space_occupancy):
                sp.occupancy = int(occ)

    world.tick_index += 1
    world.clock = world.tick_index * cfg.tick
    world.record()
    return world


def outdoor_hazard(rate: np.ndarray | float, tick: float, shake_duration: float):
    """Per-tick death probability whose compound over the shaking equals ``rate``."""
    return 1.0 - np.power(1.0 - np.asarray(rate, dtype=np.float64), tick / shake_duration)


def _outdoor_deaths(world: World, moving: np.ndarray):
    cfg = world.config
    exposed = moving[world.state[moving] == PersonState.IN_DANGER]
    if not len(exposed):
        return
    q = outdoor_hazard(world.zone_rate[exposed], cfg.tick, cfg.shake_duration)
    u = streams.uniforms(cfg.seed, world.tick_index, streams.OUTDOOR_DEATH, world.n_persons)[exposed]
    world.state[exposed[u < q]] = PersonState.DEAD


def summarize(world: World) -> SimulationResult:
    total = world.n_persons
    spaces = []
    for sp in world.spaces:
        spaces.append(
            SpaceSummary(
                space_id=sp.id,
                locked=sp.locked,
                pct_population=100.0 * sp.occupancy / total if total else 0.0,
                min_arrival_s=sp.min_arrival,
                max_arrival_s=sp.max_arrival,
                avg_arrival_s=sp.avg_arrival,
                occupancy=sp.occupancy,
                capacity=sp.capacity,
            )
        )
    return SimulationResult(
        timeseries=list(world.timeseries),
        spaces=spaces,
        total_residents=total,
        config=world.config.to_dict(),
        seed=world.config.seed,
        stranded=int(world.stranded.sum()),
    )


def run(world: World, threads: int = 1, on_tick=None) -> SimulationResult:
    """Tick until the configured duration is reached.

    ``on_tick(world)`` is called after every tick when given.
    """
    n = world.config.n_ticks
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        while world.tick_index < n:
            tick(world, pool, threads)
            if on_tick is not None:
                on_tick(world)
    finally:
        if pool is not None:
            pool.shutdown()
    return summarize(world)
