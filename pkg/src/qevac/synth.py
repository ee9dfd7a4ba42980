"""Synthetic city generator for desk-scale experiments.

Buildings sit one per cell on a square grid separated by streets. Open
spaces take over blocks of cells: an optional block at the centre and a set
of blocks spread evenly along a ring inset from the grid border (or hugging
the outside of the grid when the grid is too small for an inner ring).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import BuildingRecord, OpenSpaceRecord
from .geom import ElevationGrid, Point2D, Polygon2D, rectangle
from .scenario_io import feature_collection, polygon_feature, write_esri_ascii, write_geojson

# lower / upper bound of mean damage per damage state
DAMAGE_BINS = ((0.0, 0.5), (0.5, 1.5), (1.5, 2.5), (2.5, 3.5), (3.5, 4.0))


class SynthSpecError(ValueError):
    pass


@dataclass(frozen=True)
class SynthCitySpec:
    cols: int = 10
    rows: int = 10
    pitch: float = 34.0
    footprint_min: float = 14.0
    footprint_max: float = 24.0
    floors_min: int = 2
    floors_max: int = 8
    n_buildings: int | None = None
    total_apartments: int | None = None
    apartments_per_floor: float = 1.5
    year_min: int = 1930
    year_max: int = 2015
    # share of buildings per damage state, None..Complete
    damage_shares: tuple[float, ...] = (0.008, 0.81, 0.18, 0.002, 0.0)
    space_cells: int = 2
    ring_spaces: int = 4
    ring_inset: int = 2
    center_space: bool = True
    terrain: str = "flat"
    grade: float = 0.0
    dem_cell: float = 5.0
    dem_margin: float = 20.0
    seed: int = 0

    def validate(self) -> list[str]:
        errors = []
        if self.cols < 1 or self.rows < 1:
            errors.append("grid needs at least one row and one column")
        if not 0 < self.footprint_min <= self.footprint_max < self.pitch:
            errors.append("need 0 < footprint_min <= footprint_max < pitch")
        if not 1 <= self.floors_min <= self.floors_max:
            errors.append("need 1 <= floors_min <= floors_max")
        if self.ring_spaces < 0 or self.ring_spaces + int(self.center_space) < 1:
            errors.append("at least one open space is required")
        if self.space_cells < 1:
            errors.append("space_cells must be >= 1")
        if len(self.damage_shares) != 5 or any(s < 0 for s in self.damage_shares) or sum(self.damage_shares) <= 0:
            errors.append("damage_shares needs five non-negative shares")
        if self.terrain not in ("flat", "ramp"):
            errors.append(f"terrain must be flat or ramp, got {self.terrain!r}")
        if self.dem_cell <= 0:
            errors.append("dem_cell must be positive")
        return errors


PRESETS = {
    # 28 x 28 cells of 33.6 m cover 0.885 km^2; 8 spaces of 2 x 2 cells leave
    # 752 cells, 7 of which are left empty
    "hamra-like": SynthCitySpec(
        cols=28,
        rows=28,
        pitch=33.6,
        footprint_min=16.0,
        footprint_max=24.0,
        floors_min=2,
        floors_max=10,
        n_buildings=745,
        total_apartments=9438,
        # building counts per damage state, None..Complete
        damage_shares=(6, 604, 134, 1, 0),
        space_cells=2,
        ring_spaces=7,
        ring_inset=3,
        center_space=True,
        terrain="ramp",
        grade=0.03,
        seed=2020,
    ),
    "minimal": SynthCitySpec(cols=1, rows=1, ring_spaces=1, center_space=False, space_cells=1, seed=0),
}


@dataclass
class SynthCity:
    spec: SynthCitySpec
    buildings: list[BuildingRecord]
    open_spaces: list[OpenSpaceRecord]
    elevation: ElevationGrid
    notes: list[str] = field(default_factory=list)


def _largest_remainder(total: int, weights: np.ndarray) -> np.ndarray:
    quota = total * weights / weights.sum()
    base = np.floor(quota).astype(np.int64)
    short = total - int(base.sum())
    order = np.argsort(-(quota - base), kind="stable")
    base[order[:short]] += 1
    return base


def _ring_anchors(cols: int, rows: int, size: int, inset: int) -> list[tuple[int, int]]:
    """Block anchors walked around a rectangle, starting at its lower-left corner."""
    lo_i, hi_i = inset, cols - inset - size
    lo_j, hi_j = inset, rows - inset - size
    if hi_i <= lo_i or hi_j <= lo_j:
        lo_i, hi_i, lo_j, hi_j = -size, cols, -size, rows
    path = [(i, lo_j) for i in range(lo_i, hi_i)]
    path += [(hi_i, j) for j in range(lo_j, hi_j)]
    path += [(i, hi_j) for i in range(hi_i, lo_i, -1)]
    path += [(lo_i, j) for j in range(hi_j, lo_j, -1)]
    return path or [(lo_i, lo_j)]


def generate(spec: SynthCitySpec) -> SynthCity:
    errors = spec.validate()
    if errors:
        raise SynthSpecError("; ".join(errors))
    rng = np.random.default_rng(spec.seed)
    p = spec.pitch
    sc = spec.space_cells
    notes = []

    blocks: list[tuple[int, int]] = []
    if spec.center_space:
        blocks.append(((spec.cols - sc) // 2, (spec.rows - sc) // 2))
    if spec.ring_spaces:
        path = _ring_anchors(spec.cols, spec.rows, sc, spec.ring_inset)
        step = len(path) / spec.ring_spaces
        for k in range(spec.ring_spaces):
            a = path[int(round(k * step)) % len(path)]
            if a in blocks:
                raise SynthSpecError("ring too short for the requested number of open spaces")
            blocks.append(a)

    taken = set()
    for bi, bj in blocks:
        cells = {(bi + di, bj + dj) for di in range(sc) for dj in range(sc)}
        if taken & cells:
            raise SynthSpecError("open-space blocks overlap")
        taken |= cells

    street = p - spec.footprint_max
    spaces = []
    for sid, (bi, bj) in enumerate(blocks, start=1):
        poly = rectangle(bi * p + street / 2, bj * p + street / 2, sc * p - street, sc * p - street)
        spaces.append(OpenSpaceRecord(sid, poly, False))

    cells = [(i, j) for j in range(spec.rows) for i in range(spec.cols) if (i, j) not in taken]
    if spec.n_buildings is not None:
        if spec.n_buildings > len(cells):
            raise SynthSpecError(f"only {len(cells)} free cells for {spec.n_buildings} buildings")
        drop = rng.choice(len(cells), size=len(cells) - spec.n_buildings, replace=False)
        keep = np.ones(len(cells), dtype=bool)
        keep[drop] = False
        cells = [c for c, k in zip(cells, keep) if k]
    n = len(cells)

    widths = rng.uniform(spec.footprint_min, spec.footprint_max, n)
    depths = rng.uniform(spec.footprint_min, spec.footprint_max, n)
    floors = rng.integers(spec.floors_min, spec.floors_max + 1, n)
    years = rng.integers(spec.year_min, spec.year_max + 1, n)

    weights = floors * spec.apartments_per_floor
    if spec.total_apartments is not None:
        if spec.total_apartments < n:
            raise SynthSpecError("total_apartments is smaller than the number of buildings")
        apartments = 1 + _largest_remainder(spec.total_apartments - n, weights.astype(float))
    else:
        apartments = np.maximum(1, np.round(weights)).astype(np.int64)

    counts = _largest_remainder(n, np.asarray(spec.damage_shares, dtype=float))
    states = rng.permutation(np.repeat(np.arange(5), counts))
    lo = np.array([DAMAGE_BINS[s][0] for s in states])
    hi = np.array([DAMAGE_BINS[s][1] for s in states])
    # stay strictly inside each bin so rounding cannot move a building across
    mu = np.round(lo + (hi - lo) * rng.uniform(0.05, 0.95, n), 3)

    buildings = []
    for k, (i, j) in enumerate(cells):
        cx, cy = (i + 0.5) * p, (j + 0.5) * p
        w, d = widths[k], depths[k]
        x0, x1 = round(cx - w / 2, 3), round(cx + w / 2, 3)
        y0, y1 = round(cy - d / 2, 3), round(cy + d / 2, 3)
        # corners on the 1 mm grid so written files reproduce them exactly
        fp = Polygon2D.from_coords([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
        buildings.append(
            BuildingRecord(k + 1, fp, int(floors[k]), int(apartments[k]), int(years[k]), float(mu[k]))
        )

    boxes = np.array([b.footprint.bounds for b in buildings] + [s.polygon.bounds for s in spaces])
    x0 = float(np.floor(boxes[:, 0].min() - spec.dem_margin))
    y0 = float(np.floor(boxes[:, 1].min() - spec.dem_margin))
    x1 = float(boxes[:, 2].max() + spec.dem_margin)
    y1 = float(boxes[:, 3].max() + spec.dem_margin)
    ncols = int(np.ceil((x1 - x0) / spec.dem_cell))
    nrows = int(np.ceil((y1 - y0) / spec.dem_cell))
    yc = y0 + (np.arange(nrows) + 0.5) * spec.dem_cell
    grade = spec.grade if spec.terrain == "ramp" else 0.0
    values = np.round(np.repeat((grade * (yc - y0))[:, None], ncols, axis=1), 3)
    grid = ElevationGrid(Point2D(x0, y0), spec.dem_cell, ncols, nrows, values, -9999.0)

    return SynthCity(spec, buildings, spaces, grid, notes)


def write_city(city: SynthCity, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "buildings": out / "buildings.geojson",
        "open_spaces": out / "open_spaces.geojson",
        "dem": out / "dem.asc",
        "spec": out / "synth_spec.json",
    }
    write_geojson(
        feature_collection(
            [
                polygon_feature(
                    b.id,
                    b.footprint,
                    {"floors": b.floors, "apartments": b.apartments, "year": b.year, "mu_ds": b.mu_ds},
                    ndigits=3,
                )
                for b in city.buildings
            ]
        ),
        paths["buildings"],
    )
    write_geojson(
        feature_collection([polygon_feature(s.id, s.polygon, {"locked": s.locked}, ndigits=3) for s in city.open_spaces]),
        paths["open_spaces"],
    )
    write_esri_ascii(city.elevation, paths["dem"])
    paths["spec"].write_text(json.dumps(dataclasses.asdict(city.spec), indent=2, sort_keys=True) + "\n")
    return paths
