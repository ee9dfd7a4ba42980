"""Planar geometry and raster primitives.

Coordinates are projected planar meters. Polygons keep the vertex order
they were given in; the closing vertex is dropped if present.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
import shapely

BOUNDARY_EPS = 1e-9


class GeometryError(ValueError):
    """Base class for geometry failures."""


class InvalidGeometryError(GeometryError):
    pass


class DomainError(ValueError):
    pass


class SamplingError(GeometryError):
    pass


@dataclass(frozen=True)
class Point2D:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidGeometryError(f"non-finite point ({self.x}, {self.y})")

    def __iter__(self) -> Iterator[float]:
        yield self.x
        yield self.y


def _as_ring(coords) -> np.ndarray:
    ring = np.asarray(coords, dtype=np.float64)
    if ring.ndim != 2 or ring.shape[1] != 2:
        raise InvalidGeometryError(f"ring must be an (n, 2) array, got shape {ring.shape}")
    if len(ring) > 1 and np.array_equal(ring[0], ring[-1]):
        ring = ring[:-1]
    if len(ring) < 3:
        raise InvalidGeometryError(f"ring has {len(ring)} distinct vertices, need at least 3")
    if not np.all(np.isfinite(ring)):
        raise InvalidGeometryError("ring has non-finite coordinates")
    ring.setflags(write=False)
    return ring


def ring_signed_area(ring: np.ndarray) -> float:
    """Shoelace signed area; positive for counter-clockwise rings."""
    x, y = ring[:, 0], ring[:, 1]
    # shifted to the first vertex to limit cancellation on large coordinates
    x = x - x[0]
    y = y - y[0]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segments_cross(p1, p2, q1, q2) -> bool:
    """True when the closed segments p1p2 and q1q2 share any point."""

    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if v == 0 else (1 if v > 0 else -1)

    def on_seg(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    return (
        (o1 == 0 and on_seg(p1, p2, q1))
        or (o2 == 0 and on_seg(p1, p2, q2))
        or (o3 == 0 and on_seg(q1, q2, p1))
        or (o4 == 0 and on_seg(q1, q2, p2))
    )


def _ring_is_simple(ring: np.ndarray) -> bool:
    n = len(ring)
    for i in range(n):
        a, b = ring[i], ring[(i + 1) % n]
        if a[0] == b[0] and a[1] == b[1]:
            return False
        for j in range(i + 1, n):
            # adjacent edges share a vertex by construction
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(a, b, ring[j], ring[(j + 1) % n]):
                return False
    return True


@dataclass(frozen=True, eq=False)
class Polygon2D:
    """Simple polygon with optional holes.

    ``exterior`` and each hole are read-only ``(n, 2)`` float arrays without
    a repeated closing vertex.
    """

    exterior: np.ndarray
    holes: tuple[np.ndarray, ...] = field(default=())
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "exterior", _as_ring(self.exterior))
        object.__setattr__(self, "holes", tuple(_as_ring(h) for h in self.holes))
        if self.validate:
            for ring in (self.exterior, *self.holes):
                if abs(ring_signed_area(ring)) <= 0.0:
                    raise InvalidGeometryError("degenerate ring with zero area")
                if not _ring_is_simple(ring):
                    raise InvalidGeometryError("ring is self-intersecting")

    @classmethod
    def from_coords(cls, exterior: Iterable[Sequence[float]], holes: Iterable = ()) -> Polygon2D:
        return cls(np.asarray(list(exterior), dtype=float), tuple(np.asarray(list(h), dtype=float) for h in holes))

    @property
    def rings(self) -> tuple[np.ndarray, ...]:
        return (self.exterior, *self.holes)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        mn = self.exterior.min(axis=0)
        mx = self.exterior.max(axis=0)
        return float(mn[0]), float(mn[1]), float(mx[0]), float(mx[1])

    @property
    def is_ccw(self) -> bool:
        return ring_signed_area(self.exterior) > 0

    def __eq__(self, other):
        if not isinstance(other, Polygon2D):
            return NotImplemented
        return (
            np.array_equal(self.exterior, other.exterior)
            and len(self.holes) == len(other.holes)
            and all(np.array_equal(a, b) for a, b in zip(self.holes, other.holes))
        )

    __hash__ = None

    def to_shapely(self) -> shapely.Polygon:
        return shapely.Polygon(self.exterior, list(self.holes))


def longest_edge_midpoint(p: Polygon2D) -> Point2D:
    """Midpoint of the longest exterior edge; the first one wins ties."""
    ring = p.exterior
    nxt = np.roll(ring, -1, axis=0)
    k = int(np.argmax(np.hypot(*(nxt - ring).T)))
    mid = 0.5 * (ring[k] + nxt[k])
    return Point2D(float(mid[0]), float(mid[1]))


def rectangle(x0: float, y0: float, width: float, height: float) -> Polygon2D:
    """Axis-aligned rectangle, counter-clockwise from the lower-left corner."""
    return Polygon2D(
        np.array([[x0, y0], [x0 + width, y0], [x0 + width, y0 + height], [x0, y0 + height]], dtype=float)
    )


def polygon_area(p: Polygon2D) -> float:
    """Area in square meters with holes subtracted."""
    area = abs(ring_signed_area(p.exterior)) - sum(abs(ring_signed_area(h)) for h in p.holes)
    if area <= 0.0:
        raise InvalidGeometryError(f"polygon area {area} is not positive")
    return area


def polygon_perimeter(p: Polygon2D) -> float:
    ring = p.exterior
    return float(np.sum(np.hypot(*(np.roll(ring, -1, axis=0) - ring).T)))


@dataclass(frozen=True)
class EquivalentRectangle:
    x: float
    y: float

    @property
    def area(self) -> float:
        return self.x * self.y


def equivalent_rectangle(area: float, perimeter: float) -> EquivalentRectangle:
    """Rectangle with the given area and perimeter, long side first.

    Pairs that no rectangle can realise (perimeter**2 < 16 * area) fall back
    to the square of equal area.
    """
    if not (area > 0 and perimeter > 0):
        raise DomainError(f"area and perimeter must be positive, got {area}, {perimeter}")
    semi = perimeter / 2.0
    disc = semi * semi - 4.0 * area
    if disc < 0:
        side = math.sqrt(area)
        return EquivalentRectangle(side, side)
    x = (semi + math.sqrt(disc)) / 2.0
    # x * y = area exactly, without the cancellation of semi - sqrt(disc)
    y = area / x
    if y > x:
        x, y = y, x
    return EquivalentRectangle(x, y)


def buffer_polygon(p: Polygon2D, d: float) -> Polygon2D:
    """Outward offset of the exterior ring by ``d`` with round joins.

    Each quarter turn of a join is approximated by 8 segments. Holes are
    dropped. ``d == 0`` returns ``p`` itself.
    """
    if not d >= 0:
        raise DomainError(f"buffer distance must be >= 0, got {d}")
    if d == 0:
        return p
    buffered = shapely.Polygon(p.exterior).buffer(d, quad_segs=8, join_style="round")
    return Polygon2D(np.asarray(buffered.exterior.coords), validate=False)


def _point_segment(px: float, py: float, ax: float, ay: float, bx: float, by: float):
    dx, dy = bx - ax, by - ay
    ll = dx * dx + dy * dy
    t = 0.0 if ll == 0 else max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / ll))
    cx, cy = ax + t * dx, ay + t * dy
    return cx, cy, math.hypot(px - cx, py - cy)


def _ring_boundary_distance(ring: np.ndarray, px: float, py: float) -> tuple[float, float, float]:
    best = (math.nan, math.nan, math.inf)
    n = len(ring)
    pts = ring.tolist()
    for i in range(n):
        ax, ay = pts[i]
        bx, by = pts[(i + 1) % n]
        c = _point_segment(px, py, ax, ay, bx, by)
        if c[2] < best[2]:
            best = c
    return best


def _ring_crossings(ring: np.ndarray, px: float, py: float) -> bool:
    x, y = ring[:, 0], ring[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    straddle = (y > py) != (yn > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x + (py - y) * (xn - x) / (yn - y)
    return bool(np.count_nonzero(straddle & (px < xint)) % 2)


def boundary_distance(p: Polygon2D, pt: Point2D) -> float:
    """Distance from ``pt`` to the nearest point on any ring of ``p``."""
    return min(_ring_boundary_distance(r, pt.x, pt.y)[2] for r in p.rings)


def contains(p: Polygon2D, pt: Point2D) -> bool:
    """Even-odd containment; points on the boundary count as inside."""
    if boundary_distance(p, pt) <= BOUNDARY_EPS:
        return True
    inside = False
    for ring in p.rings:
        inside ^= _ring_crossings(ring, pt.x, pt.y)
    return inside


def strictly_inside(p: Polygon2D, pt: Point2D, eps: float = BOUNDARY_EPS) -> bool:
    if boundary_distance(p, pt) <= eps:
        return False
    inside = False
    for ring in p.rings:
        inside ^= _ring_crossings(ring, pt.x, pt.y)
    return inside


def nearest_boundary_point(p: Polygon2D, pt: Point2D) -> tuple[Point2D, float]:
    """Closest point on the exterior ring and the distance to it.

    The distance is reported as 0 when ``pt`` lies inside the polygon.
    """
    cx, cy, dist = _ring_boundary_distance(p.exterior, pt.x, pt.y)
    if contains(p, pt):
        dist = 0.0
    return Point2D(cx, cy), dist


class SpatialIndex:
    """Uniform-grid index over polygon bounding boxes.

    Built once; ``query`` returns ids whose bounding boxes intersect a box.
    The packed arrays are also consumed by the compiled movement kernels.
    """

    def __init__(self, polygons: Mapping[int, Polygon2D], cell_size: float | None = None):
        self.ids = np.array(sorted(polygons), dtype=np.int64)
        self.polygons = {int(i): polygons[int(i)] for i in self.ids}
        n = len(self.ids)
        self.bboxes = np.array([self.polygons[int(i)].bounds for i in self.ids], dtype=np.float64).reshape(n, 4)

        # exterior rings packed back to back, for the kernels
        rings = [self.polygons[int(i)].exterior for i in self.ids]
        self.ring_ptr = np.zeros(n + 1, dtype=np.int64)
        if n:
            self.ring_ptr[1:] = np.cumsum([len(r) for r in rings])
            self.ring_xy = np.ascontiguousarray(np.concatenate(rings))
        else:
            self.ring_xy = np.zeros((0, 2))

        if n:
            lo = self.bboxes[:, :2].min(axis=0)
            hi = self.bboxes[:, 2:].max(axis=0)
        else:
            lo = hi = np.zeros(2)
        if cell_size is None:
            spans = np.maximum(self.bboxes[:, 2] - self.bboxes[:, 0], self.bboxes[:, 3] - self.bboxes[:, 1]) if n else [1.0]
            extent = float(max(hi - lo)) if n else 1.0
            cell_size = max(float(np.median(spans)), extent / 512.0, 1e-6)
        self.cell_size = float(cell_size)
        self.origin = lo.astype(np.float64)
        self.nx = max(1, int(math.floor((hi[0] - lo[0]) / self.cell_size)) + 1)
        self.ny = max(1, int(math.floor((hi[1] - lo[1]) / self.cell_size)) + 1)

        buckets: list[list[int]] = [[] for _ in range(self.nx * self.ny)]
        for k in range(n):
            i0, j0, i1, j1 = self._cell_range(*self.bboxes[k])
            for j in range(j0, j1 + 1):
                for i in range(i0, i1 + 1):
                    buckets[j * self.nx + i].append(k)
        self.cell_ptr = np.zeros(len(buckets) + 1, dtype=np.int64)
        self.cell_ptr[1:] = np.cumsum([len(b) for b in buckets])
        self.cell_items = np.array([k for b in buckets for k in b], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.ids)

    def packed(self) -> tuple:
        """Flat arrays in the layout the compiled kernels expect."""
        return (
            self.ring_ptr,
            self.ring_xy,
            self.bboxes,
            float(self.origin[0]),
            float(self.origin[1]),
            self.cell_size,
            self.nx,
            self.ny,
            self.cell_ptr,
            self.cell_items,
        )

    def _cell_range(self, x0, y0, x1, y1):
        cs = self.cell_size
        i0 = min(max(int(math.floor((x0 - self.origin[0]) / cs)), 0), self.nx - 1)
        j0 = min(max(int(math.floor((y0 - self.origin[1]) / cs)), 0), self.ny - 1)
        i1 = min(max(int(math.floor((x1 - self.origin[0]) / cs)), 0), self.nx - 1)
        j1 = min(max(int(math.floor((y1 - self.origin[1]) / cs)), 0), self.ny - 1)
        return i0, j0, i1, j1

    def query(self, box: tuple[float, float, float, float]) -> list[int]:
        """Ids whose bounding boxes intersect ``box = (xmin, ymin, xmax, ymax)``."""
        x0, y0, x1, y1 = box
        if not len(self.ids) or x1 < x0 or y1 < y0:
            return []
        i0, j0, i1, j1 = self._cell_range(x0, y0, x1, y1)
        cand = set()
        for j in range(j0, j1 + 1):
            row = j * self.nx
            cand.update(self.cell_items[self.cell_ptr[row + i0] : self.cell_ptr[row + i1 + 1]].tolist())
        if not cand:
            return []
        k = np.fromiter(sorted(cand), dtype=np.int64)
        bb = self.bboxes[k]
        hit = (bb[:, 0] <= x1) & (bb[:, 2] >= x0) & (bb[:, 1] <= y1) & (bb[:, 3] >= y0)
        return self.ids[k[hit]].tolist()


def _segment_ring_params(ax, ay, bx, by, ring: np.ndarray) -> list[float]:
    """Parameters along a->b where the segment meets edges of ``ring``."""
    ts = []
    dx, dy = bx - ax, by - ay
    n = len(ring)
    for i in range(n):
        cx, cy = ring[i]
        ex, ey = ring[(i + 1) % n][0] - cx, ring[(i + 1) % n][1] - cy
        denom = dx * ey - dy * ex
        wx, wy = cx - ax, cy - ay
        if denom != 0.0:
            tn = wx * ey - wy * ex
            un = wx * dy - wy * dx
            # out-of-range parameters skipped before dividing by a tiny denom
            lim = abs(denom) * (1.0 + 1e-12)
            if abs(tn) > lim or abs(un) > lim:
                continue
            t = tn / denom
            u = un / denom
            if -1e-12 <= t <= 1 + 1e-12 and -1e-12 <= u <= 1 + 1e-12:
                ts.append(min(max(t, 0.0), 1.0))
        elif wx * dy - wy * dx == 0.0:
            # collinear: both edge endpoints projected onto the segment
            ll = dx * dx + dy * dy
            if ll == 0.0:
                continue
            for qx, qy in ((cx, cy), (cx + ex, cy + ey)):
                t = ((qx - ax) * dx + (qy - ay) * dy) / ll
                if 0.0 <= t <= 1.0:
                    ts.append(t)
    return ts


def segment_entry(a: Point2D, b: Point2D, p: Polygon2D) -> float | None:
    """Parameter at which the segment a->b first enters the interior of ``p``."""
    ts = {0.0, 1.0}
    for ring in p.rings:
        ts.update(_segment_ring_params(a.x, a.y, b.x, b.y, ring))
    ts = sorted(ts)
    for t0, t1 in zip(ts, ts[1:]):
        if t1 - t0 <= 1e-12:
            continue
        tm = 0.5 * (t0 + t1)
        m = Point2D(a.x + tm * (b.x - a.x), a.y + tm * (b.y - a.y))
        if strictly_inside(p, m):
            return t0
    return None


def segment_blocked(a: Point2D, b: Point2D, obstacles: SpatialIndex) -> int | None:
    """Id of the first obstacle whose interior the segment (a, b] enters."""
    if a == b:
        raise DomainError("segment endpoints coincide")
    box = (min(a.x, b.x), min(a.y, b.y), max(a.x, b.x), max(a.y, b.y))
    best: tuple[float, int] | None = None
    for oid in obstacles.query(box):
        t = segment_entry(a, b, obstacles.polygons[oid])
        if t is not None and (best is None or (t, oid) < best):
            best = (t, oid)
    return None if best is None else best[1]


@dataclass(frozen=True, eq=False)
class ElevationGrid:
    """Raster of elevations. ``values[0]`` is the southernmost row.

    ``origin`` is the lower-left corner of the lower-left cell.
    """

    origin: Point2D
    cell_size: float
    n_cols: int
    n_rows: int
    values: np.ndarray
    nodata: float | None = None

    def __post_init__(self):
        if not self.cell_size > 0:
            raise InvalidGeometryError(f"cell size must be positive, got {self.cell_size}")
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (self.n_rows, self.n_cols):
            raise InvalidGeometryError(f"values shape {vals.shape} != ({self.n_rows}, {self.n_cols})")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def extent(self) -> tuple[float, float, float, float]:
        x0, y0 = self.origin.x, self.origin.y
        return x0, y0, x0 + self.n_cols * self.cell_size, y0 + self.n_rows * self.cell_size

    def covers(self, box: tuple[float, float, float, float]) -> bool:
        x0, y0, x1, y1 = self.extent
        return box[0] >= x0 and box[1] >= y0 and box[2] <= x1 and box[3] <= y1

    @classmethod
    def constant(cls, origin: Point2D, cell_size: float, n_cols: int, n_rows: int, value: float = 0.0):
        return cls(origin, cell_size, n_cols, n_rows, np.full((n_rows, n_cols), float(value)))


def sample_elevation(g: ElevationGrid, pt: Point2D) -> float:
    """Nearest-cell elevation; points on the outer edge map to the edge cell."""
    x0, y0, x1, y1 = g.extent
    if not (x0 <= pt.x <= x1 and y0 <= pt.y <= y1):
        raise SamplingError(f"point ({pt.x}, {pt.y}) outside grid extent")
    col = min(int((pt.x - x0) // g.cell_size), g.n_cols - 1)
    row = min(int((pt.y - y0) // g.cell_size), g.n_rows - 1)
    v = float(g.values[row, col])
    if (g.nodata is not None and v == g.nodata) or math.isnan(v):
        raise SamplingError(f"nodata cell at row {row}, col {col}")
    return v


def directional_slope(g: ElevationGrid, start: Point2D, end: Point2D) -> float:
    """Signed slope in degrees from ``start`` to ``end``; uphill is positive."""
    if start == end:
        raise DomainError("slope needs two distinct points")
    rise = sample_elevation(g, end) - sample_elevation(g, start)
    run = math.hypot(end.x - start.x, end.y - start.y)
    return math.degrees(math.atan(rise / run))
