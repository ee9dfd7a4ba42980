"""Compiled per-person kernels.

Geometry arrives packed: polygon exterior rings back to back in an
``(n, 2)`` array with a pointer array, plus the uniform-grid index of
:class:`qevac.geom.SpatialIndex`. Neighbour positions use the same grid
layout, rebuilt every tick.

Kernels that touch per-person state are ``nogil`` so that chunks can run on
worker threads; each writes only the rows it was handed.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

VULNERABLE = 1
IN_DANGER = 2
SAFE = 3

BOUNDARY_EPS = 1e-9
MIN_STEP = 1e-9
COS45 = math.sqrt(0.5)
# route lengths closer than this count as a tie
SLIDE_TIE = 1e-9


@njit(cache=True, nogil=True)
def point_segment_d2(px, py, ax, ay, bx, by):
    dx = bx - ax
    dy = by - ay
    ll = dx * dx + dy * dy
    t = 0.0
    if ll > 0.0:
        t = ((px - ax) * dx + (py - ay) * dy) / ll
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
    cx = ax + t * dx
    cy = ay + t * dy
    return (px - cx) ** 2 + (py - cy) ** 2, cx, cy


@njit(cache=True, nogil=True)
def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


@njit(cache=True, nogil=True)
def segment_segment_d2(ax, ay, bx, by, cx, cy, dx, dy):
    o1 = _orient(ax, ay, bx, by, cx, cy)
    o2 = _orient(ax, ay, bx, by, dx, dy)
    o3 = _orient(cx, cy, dx, dy, ax, ay)
    o4 = _orient(cx, cy, dx, dy, bx, by)
    if ((o1 > 0 and o2 < 0) or (o1 < 0 and o2 > 0)) and ((o3 > 0 and o4 < 0) or (o3 < 0 and o4 > 0)):
        return 0.0
    d = point_segment_d2(ax, ay, cx, cy, dx, dy)[0]
    d = min(d, point_segment_d2(bx, by, cx, cy, dx, dy)[0])
    d = min(d, point_segment_d2(cx, cy, ax, ay, bx, by)[0])
    d = min(d, point_segment_d2(dx, dy, ax, ay, bx, by)[0])
    return d


@njit(cache=True, nogil=True)
def point_in_ring(px, py, xy, s, e):
    inside = False
    j = e - 1
    for i in range(s, e):
        xi = xy[i, 0]
        yi = xy[i, 1]
        xj = xy[j, 0]
        yj = xy[j, 1]
        if (yi > py) != (yj > py):
            if px < xi + (py - yi) * (xj - xi) / (yj - yi):
                inside = not inside
        j = i
    return inside


@njit(cache=True, nogil=True)
def nearest_on_ring(px, py, xy, s, e):
    """Closest point on the ring; returns (distance, cx, cy, edge start index)."""
    best = np.inf
    bx = 0.0
    by = 0.0
    be = s
    for i in range(s, e):
        j = i + 1 if i + 1 < e else s
        d2, cx, cy = point_segment_d2(px, py, xy[i, 0], xy[i, 1], xy[j, 0], xy[j, 1])
        if d2 < best:
            best = d2
            bx = cx
            by = cy
            be = i
    return math.sqrt(best), bx, by, be


@njit(cache=True, nogil=True)
def _cell(v, o, cs, n):
    c = int(math.floor((v - o) / cs))
    if c < 0:
        return 0
    if c > n - 1:
        return n - 1
    return c


@njit(cache=True, nogil=True)
def obstacle_hit(ax, ay, bx, by, obs, clearance):
    """Clearance test of the swept segment a->b against packed obstacles.

    The segment is blocked when it passes within ``clearance`` of an
    obstacle boundary or an endpoint lies inside one. Returns
    ``(blocked, x0, y0, x1, y1)`` with the end points of the blocking edge,
    taken as the offending edge closest to ``a``.
    """
    ptr, xy, bbox, ox, oy, cs, nx, ny, cell_ptr, cell_items = obs
    c2 = clearance * clearance
    x0 = min(ax, bx) - clearance
    x1 = max(ax, bx) + clearance
    y0 = min(ay, by) - clearance
    y1 = max(ay, by) + clearance
    i0 = _cell(x0, ox, cs, nx)
    i1 = _cell(x1, ox, cs, nx)
    j0 = _cell(y0, oy, cs, ny)
    j1 = _cell(y1, oy, cs, ny)
    blocked = False
    best = np.inf
    e0x = e0y = e1x = e1y = 0.0
    for j in range(j0, j1 + 1):
        for i in range(i0, i1 + 1):
            cell = j * nx + i
            for q in range(cell_ptr[cell], cell_ptr[cell + 1]):
                k = cell_items[q]
                if bbox[k, 0] > x1 or bbox[k, 2] < x0 or bbox[k, 1] > y1 or bbox[k, 3] < y0:
                    continue
                s = ptr[k]
                e = ptr[k + 1]
                hit = point_in_ring(bx, by, xy, s, e) or point_in_ring(ax, ay, xy, s, e)
                if not hit:
                    for m in range(s, e):
                        n2 = m + 1 if m + 1 < e else s
                        if segment_segment_d2(ax, ay, bx, by, xy[m, 0], xy[m, 1], xy[n2, 0], xy[n2, 1]) < c2:
                            hit = True
                            break
                if not hit:
                    continue
                blocked = True
                for m in range(s, e):
                    n2 = m + 1 if m + 1 < e else s
                    d2 = point_segment_d2(ax, ay, xy[m, 0], xy[m, 1], xy[n2, 0], xy[n2, 1])[0]
                    if d2 < best:
                        best = d2
                        e0x = xy[m, 0]
                        e0y = xy[m, 1]
                        e1x = xy[n2, 0]
                        e1y = xy[n2, 1]
    return blocked, e0x, e0y, e1x, e1y


@njit(cache=True, nogil=True)
def neighbour_limit(px, py, ux, uy, length, self_idx, nbr):
    """Longest step along u (up to ``length``) that does not enter a neighbour disc.

    A neighbour whose disc already contains the start only blocks steps
    that end closer to it than they began.
    """
    pos, rad, ox, oy, cs, nx, ny, cell_ptr, cell_items, rmax = nbr
    if len(pos) == 0:
        return length
    reach = length + rmax
    i0 = _cell(px - reach, ox, cs, nx)
    i1 = _cell(px + reach, ox, cs, nx)
    j0 = _cell(py - reach, oy, cs, ny)
    j1 = _cell(py + reach, oy, cs, ny)
    s = length
    for j in range(j0, j1 + 1):
        for i in range(i0, i1 + 1):
            cell = j * nx + i
            for q in range(cell_ptr[cell], cell_ptr[cell + 1]):
                k = cell_items[q]
                if k == self_idx:
                    continue
                wx = px - pos[k, 0]
                wy = py - pos[k, 1]
                r = rad[k]
                ww = wx * wx + wy * wy
                b = ux * wx + uy * wy
                if ww < r * r:
                    # end distance^2 = ww + 2 s b + s^2 >= ww  <=>  s >= -2b
                    if b < 0.0 and s < -2.0 * b:
                        return 0.0
                    continue
                if b >= 0.0:
                    continue
                disc = b * b - (ww - r * r)
                if disc <= 0.0:
                    continue
                enter = -b - math.sqrt(disc)
                if enter < s:
                    s = max(enter, 0.0)
    return s


@njit(cache=True, nogil=True)
def steer_one(px, py, tx, ty, length, self_idx, obs, nbr, clearance):
    """Displacement toward (tx, ty) of at most ``length``.

    Candidate directions in fixed order: straight, slide along the blocking
    edge toward the end corner on the shorter route to the target, offsets
    of +45, -45, +90 and -90 degrees, then the slide back along the edge.
    The first candidate clear
    of obstacles with a positive neighbour-limited length is taken;
    otherwise the displacement is zero.
    """
    dx = tx - px
    dy = ty - py
    dist = math.sqrt(dx * dx + dy * dy)
    if dist <= 0.0 or length <= 0.0:
        return 0.0, 0.0
    ux = dx / dist
    uy = dy / dist
    cand = np.zeros((7, 2))
    n = 0
    cand[n, 0] = ux
    cand[n, 1] = uy
    n += 1
    blocked, e0x, e0y, e1x, e1y = obstacle_hit(px, py, px + length * ux, py + length * uy, obs, clearance)
    straight_clear = not blocked
    el = 0.0
    ex = ey = 0.0
    if blocked:
        ex = e1x - e0x
        ey = e1y - e0y
        el = math.sqrt(ex * ex + ey * ey)
        if el > 0.0:
            ex /= el
            ey /= el
            # head for the corner on the shorter route to the target; moving
            # along the edge keeps that route the shorter one on later ticks
            via0 = math.hypot(e0x - px, e0y - py) + math.hypot(tx - e0x, ty - e0y)
            via1 = math.hypot(e1x - px, e1y - py) + math.hypot(tx - e1x, ty - e1y)
            if via0 < via1 - SLIDE_TIE:
                flip = True
            elif via1 < via0 - SLIDE_TIE:
                flip = False
            else:
                flip = ex * ux + ey * uy < 0.0
            if flip:
                ex = -ex
                ey = -ey
            cand[n, 0] = ex
            cand[n, 1] = ey
            n += 1
    cand[n, 0] = COS45 * (ux - uy)
    cand[n, 1] = COS45 * (ux + uy)
    cand[n + 1, 0] = COS45 * (ux + uy)
    cand[n + 1, 1] = COS45 * (uy - ux)
    cand[n + 2, 0] = -uy
    cand[n + 2, 1] = ux
    cand[n + 3, 0] = uy
    cand[n + 3, 1] = -ux
    n += 4
    if blocked and el > 0.0:
        # backing off along the edge is the last resort
        cand[n, 0] = -ex
        cand[n, 1] = -ey
        n += 1
    for c in range(n):
        cx = cand[c, 0]
        cy = cand[c, 1]
        if c == 0:
            if not straight_clear:
                continue
        else:
            hit = obstacle_hit(px, py, px + length * cx, py + length * cy, obs, clearance)[0]
            if hit:
                continue
        s = neighbour_limit(px, py, cx, cy, length, self_idx, nbr)
        if s > MIN_STEP:
            return s * cx, s * cy
    return 0.0, 0.0


@njit(cache=True)
def build_point_grid(pos, members, ox, oy, cs, nx, ny):
    """CSR bucket layout of ``pos[members]``; items are person indices."""
    counts = np.zeros(nx * ny + 1, dtype=np.int64)
    cells = np.empty(len(members), dtype=np.int64)
    for q in range(len(members)):
        k = members[q]
        c = _cell(pos[k, 1], oy, cs, ny) * nx + _cell(pos[k, 0], ox, cs, nx)
        cells[q] = c
        counts[c + 1] += 1
    ptr = np.cumsum(counts)
    fill = ptr[:-1].copy()
    items = np.empty(len(members), dtype=np.int64)
    for q in range(len(members)):
        c = cells[q]
        items[fill[c]] = members[q]
        fill[c] += 1
    return ptr, items


@njit(cache=True, nogil=True)
def zone_rate(px, py, zones):
    """(inside any zone, maximum rate among containing zones)."""
    ptr, xy, bbox, ox, oy, cs, nx, ny, cell_ptr, cell_items = zones[0]
    rates = zones[1]
    inside = False
    rate = 0.0
    if len(bbox) == 0:
        return inside, rate
    cell = _cell(py, oy, cs, ny) * nx + _cell(px, ox, cs, nx)
    for q in range(cell_ptr[cell], cell_ptr[cell + 1]):
        k = cell_items[q]
        if px < bbox[k, 0] or px > bbox[k, 2] or py < bbox[k, 1] or py > bbox[k, 3]:
            continue
        s = ptr[k]
        e = ptr[k + 1]
        if point_in_ring(px, py, xy, s, e) or nearest_on_ring(px, py, xy, s, e)[0] <= BOUNDARY_EPS:
            inside = True
            if rates[k] > rate:
                rate = rates[k]
    return inside, rate


@njit(cache=True, nogil=True)
def elevation_at(x, y, elev):
    """Nearest-cell elevation and a validity flag."""
    x0, y0, cs, ncols, nrows, values, nodata = elev
    if x < x0 or y < y0 or x > x0 + ncols * cs or y > y0 + nrows * cs:
        return 0.0, False
    col = min(int((x - x0) // cs), ncols - 1)
    row = min(int((y - y0) // cs), nrows - 1)
    v = values[row, col]
    if v == nodata or v != v:
        return 0.0, False
    return v, True


@njit(cache=True, nogil=True)
def aim_point(i, pos, target, orbit, spaces, overshoot):
    """Point person ``i`` heads for this tick."""
    ptr, xy = spaces
    t = target[i]
    s = ptr[t]
    e = ptr[t + 1]
    px = pos[i, 0]
    py = pos[i, 1]
    if orbit[i] >= 0:
        return xy[orbit[i], 0], xy[orbit[i], 1]
    if point_in_ring(px, py, xy, s, e):
        return px, py
    d, cx, cy, _ = nearest_on_ring(px, py, xy, s, e)
    if d <= 0.0:
        return px, py
    # continue past the boundary so the person ends up inside
    return cx + overshoot * (cx - px) / d, cy + overshoot * (cy - py) / d


@njit(cache=True, nogil=True)
def move_chunk(members, pos, out, speed, target, orbit, spaces, zones, obs, nbr, elev, knots, factors, params):
    """Advance ``members`` one tick from the snapshot ``pos`` into ``out``."""
    dt, debris_factor, clearance, overshoot, lookahead = params
    for q in range(len(members)):
        i = members[q]
        px = pos[i, 0]
        py = pos[i, 1]
        tx, ty = aim_point(i, pos, target, orbit, spaces, overshoot)
        dx = tx - px
        dy = ty - py
        dist = math.sqrt(dx * dx + dy * dy)
        out[i, 0] = px
        out[i, 1] = py
        if dist <= 0.0:
            continue
        factor = 1.0
        e0, ok0 = elevation_at(px, py, elev)
        e1, ok1 = elevation_at(px + lookahead * dx / dist, py + lookahead * dy / dist, elev)
        if ok0 and ok1:
            slope = math.degrees(math.atan((e1 - e0) / lookahead))
            factor = np.interp(slope, knots, factors)
        in_zone, _ = zone_rate(px, py, zones)
        budget = speed[i] * factor * dt
        if in_zone:
            budget *= debris_factor
        length = min(budget, dist)
        mx, my = steer_one(px, py, tx, ty, length, i, obs, nbr, clearance)
        out[i, 0] = px + mx
        out[i, 1] = py + my


@njit(cache=True)
def classify_zones(members, pos, zones, in_zone, rate):
    for q in range(len(members)):
        i = members[q]
        a, r = zone_rate(pos[i, 0], pos[i, 1], zones)
        in_zone[i] = a
        rate[i] = r


@njit(cache=True)
def nearest_space(px, py, spaces, excluded_row):
    """Index of the space with the nearest boundary, skipping excluded ones."""
    ptr, xy = spaces
    best = -1
    best_d = np.inf
    for t in range(len(ptr) - 1):
        if excluded_row[t]:
            continue
        s = ptr[t]
        e = ptr[t + 1]
        if point_in_ring(px, py, xy, s, e):
            d = 0.0
        else:
            d = nearest_on_ring(px, py, xy, s, e)[0]
        if d < best_d:
            best_d = d
            best = t
    return best


@njit(cache=True)
def handle_arrivals(pos, state, target, orbit, discovered, stranded, arrival, spaces, ccw,
                    locked, occupancy, capacity, now, discovery_radius, orbit_tol):
    """Gate checks and admissions, serialised in ascending person index."""
    ptr, xy = spaces
    admitted = 0
    for i in range(len(state)):
        if state[i] != VULNERABLE and state[i] != IN_DANGER:
            continue
        t = target[i]
        s = ptr[t]
        e = ptr[t + 1]
        px = pos[i, 0]
        py = pos[i, 1]
        d, _, _, edge = nearest_on_ring(px, py, xy, s, e)
        inside = d <= BOUNDARY_EPS or point_in_ring(px, py, xy, s, e)
        if inside:
            d = 0.0
        if d > discovery_radius:
            continue
        if locked[t]:
            discovered[i, t] = True
            nt = nearest_space(px, py, spaces, discovered[i])
            if nt < 0:
                stranded[i] = True
            else:
                target[i] = nt
                orbit[i] = -1
        elif occupancy[t] >= capacity[t]:
            n = e - s
            if orbit[i] < 0:
                if ccw[t]:
                    orbit[i] = edge
                else:
                    orbit[i] = s + (edge - s + 1) % n
            else:
                v = orbit[i]
                if math.hypot(px - xy[v, 0], py - xy[v, 1]) <= orbit_tol:
                    if ccw[t]:
                        orbit[i] = s + (v - s - 1) % n
                    else:
                        orbit[i] = s + (v - s + 1) % n
        else:
            orbit[i] = -1
            if inside:
                state[i] = SAFE
                occupancy[t] += 1
                arrival[i] = now
                admitted += 1
    return admitted
