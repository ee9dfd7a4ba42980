"""Pedestrian speed and steering."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .geom import Point2D, SpatialIndex
from .vulnerability import ConfigurationError

FACTOR_MAX = 1.25
DEBRIS_SPEED_FACTOR = 0.5
# steering keeps this much distance from obstacle walls
OBSTACLE_CLEARANCE = 0.01


@dataclass(frozen=True, eq=False)
class SpeedSlopeCurve:
    """Piecewise-linear speed factor against signed slope in degrees."""

    slopes: np.ndarray
    factors: np.ndarray

    def __post_init__(self):
        slopes = np.asarray(self.slopes, dtype=np.float64)
        factors = np.asarray(self.factors, dtype=np.float64)
        errors = []
        if slopes.ndim != 1 or slopes.shape != factors.shape or len(slopes) < 1:
            errors.append("slope and factor columns must be equal-length, non-empty lists")
        else:
            if np.any(np.diff(slopes) <= 0):
                errors.append("slopes must be strictly increasing")
            if np.any(factors < 0) or np.any(factors > FACTOR_MAX) or not np.all(np.isfinite(factors)):
                errors.append(f"factors must lie in [0, {FACTOR_MAX}]")
            zero = np.nonzero(slopes == 0.0)[0]
            if len(zero) != 1 or factors[zero[0]] != 1.0:
                errors.append("curve needs a knot at slope 0 with factor 1.0")
        if errors:
            raise ConfigurationError(errors)
        slopes.setflags(write=False)
        factors.setflags(write=False)
        object.__setattr__(self, "slopes", slopes)
        object.__setattr__(self, "factors", factors)

    @property
    def factor_max(self) -> float:
        return float(self.factors.max())

    def __eq__(self, other):
        if not isinstance(other, SpeedSlopeCurve):
            return NotImplemented
        return self.knots() == other.knots()

    def __hash__(self):
        return hash(tuple(self.knots()))

    def knots(self) -> list[tuple[float, float]]:
        return [(float(s), float(f)) for s, f in zip(self.slopes, self.factors)]

    @classmethod
    def from_knots(cls, knots: Sequence[Sequence[float]]) -> SpeedSlopeCurve:
        knots = list(knots)
        return cls(np.array([k[0] for k in knots], dtype=float), np.array([k[1] for k in knots], dtype=float))

    @classmethod
    def from_csv_text(cls, text: str, source: str = "<text>") -> SpeedSlopeCurve:
        try:
            rows = list(csv.DictReader(io.StringIO(text)))
            knots = [(float(r["slope_deg"]), float(r["factor"])) for r in rows]
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigurationError(f"{source}: expected columns slope_deg,factor ({exc})") from None
        try:
            return cls.from_knots(knots)
        except ConfigurationError as exc:
            raise ConfigurationError([f"{source}: {e}" for e in exc.errors]) from None

    @classmethod
    def from_csv(cls, path: str | Path) -> SpeedSlopeCurve:
        return cls.from_csv_text(Path(path).read_text(), source=str(path))

    def to_csv(self) -> str:
        return "slope_deg,factor\n" + "".join(f"{s!r},{f!r}\n" for s, f in self.knots())

    @classmethod
    def default(cls) -> SpeedSlopeCurve:
        text = resources.files("qevac.data").joinpath("slope_curve.csv").read_text()
        return cls.from_csv_text(text, source="default slope curve")


def slope_factor(curve: SpeedSlopeCurve, slope: float) -> float:
    return float(np.interp(slope, curve.slopes, curve.factors))


def effective_speed(natural: float, slope_f: float, in_debris: bool, debris_factor: float = DEBRIS_SPEED_FACTOR) -> float:
    return natural * slope_f * (debris_factor if in_debris else 1.0)


def pack_neighbours(positions: np.ndarray, radii: np.ndarray, members: np.ndarray | None = None, cell_size: float = 2.0) -> tuple:
    """Bucket neighbour discs on a grid for :func:`_kernels.neighbour_limit`."""
    positions = np.ascontiguousarray(positions, dtype=np.float64).reshape(-1, 2)
    radii = np.ascontiguousarray(radii, dtype=np.float64)
    if members is None:
        members = np.arange(len(positions), dtype=np.int64)
    if len(members):
        sub = positions[members]
        lo = sub.min(axis=0)
        hi = sub.max(axis=0)
        rmax = float(radii[members].max())
    else:
        lo = hi = np.zeros(2)
        rmax = 0.0
    cs = max(cell_size, 2.0 * rmax, 1e-6)
    nx = int((hi[0] - lo[0]) // cs) + 1
    ny = int((hi[1] - lo[1]) // cs) + 1
    ptr, items = _kernels.build_point_grid(positions, members, float(lo[0]), float(lo[1]), cs, nx, ny)
    return positions, radii, float(lo[0]), float(lo[1]), cs, nx, ny, ptr, items, rmax


@dataclass(frozen=True)
class SteeringContext:
    position: Point2D
    target: Point2D
    obstacles: SpatialIndex
    neighbours: Sequence[tuple[Point2D, float]] = field(default_factory=tuple)
    step_budget: float = 0.0

    def __post_init__(self):
        if not self.step_budget >= 0:
            raise ValueError(f"step budget must be >= 0, got {self.step_budget}")


def steer(ctx: SteeringContext, clearance: float = OBSTACLE_CLEARANCE) -> tuple[float, float]:
    """Displacement of length <= step budget that keeps clear of obstacles.

    Neighbour discs in ``ctx.neighbours`` are given as (centre, radius);
    the endpoint is kept out of every disc by shortening the step. A disc
    that already holds the start only rejects steps ending closer to it.
    """
    pts = np.array([[p.x, p.y] for p, _ in ctx.neighbours], dtype=np.float64).reshape(-1, 2)
    rad = np.array([r for _, r in ctx.neighbours], dtype=np.float64)
    nbr = pack_neighbours(pts, rad)
    budget = min(ctx.step_budget, math.hypot(ctx.target.x - ctx.position.x, ctx.target.y - ctx.position.y))
    dx, dy = _kernels.steer_one(
        ctx.position.x, ctx.position.y, ctx.target.x, ctx.target.y, budget, -1,
        ctx.obstacles.packed(), nbr, clearance,
    )
    return float(dx), float(dy)
