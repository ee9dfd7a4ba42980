"""Debris volume and footprint of a collapsed building.

The rubble is idealised as a truncated pyramid standing on an enlarged
rectangular base. Given the building's equivalent rectangle (x, y), floor
count and normalised mean damage, the pyramid's base (x_p, y_p) fixes the
width of the debris ring that is buffered around the footprint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .geom import DomainError, Polygon2D, buffer_polygon

FLOOR_HEIGHT = 3.0
COLLAPSE_LOSS_PER_FLOOR = 1.0
MATERIAL_FRACTION = 1.0 / 3.0

PYRAMID = "pyramid"
RING = "ring"
DEBRIS_MODELS = (PYRAMID, RING)


@dataclass(frozen=True)
class BuildingGeometryInput:
    x: float
    y: float
    n: int
    mu_nds: float

    def __post_init__(self):
        if not (self.x >= self.y > 0):
            raise DomainError(f"need x >= y > 0, got x={self.x}, y={self.y}")
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"floor count must be an integer >= 1, got {self.n}")
        if not 0.0 <= self.mu_nds <= 1.0:
            raise DomainError(f"normalised mean damage must lie in [0, 1], got {self.mu_nds}")


@dataclass(frozen=True)
class DebrisSolution:
    h: float
    h_prime: float
    V: float
    k: float
    r: float
    x_p: float
    y_p: float
    h_t: float
    buffer: float


def building_heights(n: int) -> tuple[float, float]:
    """Standing height and collapsed pile height for ``n`` floors."""
    if n < 1:
        raise DomainError(f"floor count must be >= 1, got {n}")
    h = FLOOR_HEIGHT * n
    return h, h - COLLAPSE_LOSS_PER_FLOOR * n


def debris_volume(x: float, y: float, h: float, mu_nds: float) -> float:
    if not (x > 0 and y > 0 and h > 0):
        raise DomainError(f"dimensions must be positive, got {x}, {y}, {h}")
    if not 0.0 <= mu_nds <= 1.0:
        raise DomainError(f"normalised mean damage must lie in [0, 1], got {mu_nds}")
    return MATERIAL_FRACTION * (x * y) * h * mu_nds


def pyramid_for_volume(x: float, y: float, h_prime: float, volume: float) -> tuple[float, float, float, float, float]:
    """Solve the pyramid system for a given debris volume.

    Returns ``(k, r, x_p, y_p, h_t)`` where ``k = 3V / (x y h')`` is the
    volume relative to a prism on the footprint and ``r = x / x_p``. For
    ``k <= 1`` the pile fits on the footprint and nothing spreads.
    """
    k = 3.0 * volume / (x * y * h_prime)
    if k <= 1.0:
        return k, 1.0, x, y, h_prime
    # positive root of (k - 1) r^2 + r - 1 = 0, rationalised for k near 1
    r = 2.0 / (1.0 + math.sqrt(4.0 * k - 3.0))
    return k, r, x / r, y / r, h_prime / (1.0 + r)


def ring_width_for_volume(x: float, y: float, volume: float, pile_height: float) -> float:
    """Width b of a flat ring of height ``pile_height`` holding ``volume``.

    Solves ((x + 2b)(y + 2b) - x y) * pile_height = volume.
    """
    if volume <= 0:
        return 0.0
    c = volume / pile_height
    s = x + y
    return 2.0 * c / (2.0 * s + math.sqrt(4.0 * s * s + 16.0 * c))


def solve_truncated_pyramid(inp: BuildingGeometryInput) -> DebrisSolution:
    h, h_prime = building_heights(inp.n)
    volume = debris_volume(inp.x, inp.y, h, inp.mu_nds)
    k, r, x_p, y_p, h_t = pyramid_for_volume(inp.x, inp.y, h_prime, volume)
    buffer = max((x_p - inp.x) / 2.0, (y_p - inp.y) / 2.0) if k > 1.0 else 0.0
    return DebrisSolution(h, h_prime, volume, k, r, x_p, y_p, h_t, buffer)


def solve_ring(inp: BuildingGeometryInput, pile_height: float = 1.0) -> DebrisSolution:
    """Alternative flat-ring footprint: every damaged building gets a ring."""
    if not pile_height > 0:
        raise DomainError(f"pile height must be positive, got {pile_height}")
    h, h_prime = building_heights(inp.n)
    volume = debris_volume(inp.x, inp.y, h, inp.mu_nds)
    k = 3.0 * volume / (inp.x * inp.y * h_prime)
    b = ring_width_for_volume(inp.x, inp.y, volume, pile_height)
    x_p, y_p = inp.x + 2 * b, inp.y + 2 * b
    return DebrisSolution(h, h_prime, volume, k, inp.x / x_p, x_p, y_p, pile_height, b)


def solve_debris(inp: BuildingGeometryInput, model: str = PYRAMID, pile_height: float = 1.0) -> DebrisSolution:
    if model == PYRAMID:
        return solve_truncated_pyramid(inp)
    if model == RING:
        return solve_ring(inp, pile_height)
    raise DomainError(f"unknown debris model {model!r}; expected one of {DEBRIS_MODELS}")


def make_debris_zone(footprint: Polygon2D, buffer: float) -> Polygon2D | None:
    """Ring polygon around ``footprint``; ``None`` marks an empty zone."""
    if not buffer >= 0:
        raise DomainError(f"buffer must be >= 0, got {buffer}")
    if buffer == 0:
        return None
    outer = buffer_polygon(footprint, buffer)
    return Polygon2D(outer.exterior, (footprint.exterior,), validate=False)
