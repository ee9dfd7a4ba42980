"""Brute-force solver for the truncated-pyramid debris system.

Independent of the closed form: for each trial ratio r = x / x_p it takes the
pyramid height from the Pythagoras relation (both sign branches), evaluates
the volume relation and locates sign changes of its residual on a fine scan,
then refines each bracket by bisection.
"""

from __future__ import annotations

import numpy as np


def _residual(r, branch, x, y, h_prime, volume):
    r = np.asarray(r, dtype=float)
    # Pythagoras relation reduces to r * h_t = +/-(h_t - h'); pick one sign
    if branch == "apex":
        h_t = h_prime / (1.0 - r)
    else:
        h_t = h_prime / (1.0 + r)
    x_p, y_p = x / r, y / r
    pyramid = (x_p * y_p * h_t - x * y * (h_t - h_prime)) / 3.0
    return pyramid - volume, h_t


def _bisect(f, lo, hi, iters=200):
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < 1e-16:
            break
    return 0.5 * (lo + hi)


def scan_roots(x, y, h_prime, volume, step=1e-7, hi=2.0, chunk=2_000_000):
    """All roots r in (0, hi) of the volume residual, per branch."""
    roots = {"apex": [], "algebraic": []}
    for branch in roots:
        start = step
        while start < hi:
            r = np.arange(start, min(start + chunk * step, hi), step)
            with np.errstate(divide="ignore", invalid="ignore"):
                res, h_t = _residual(r, branch, x, y, h_prime, volume)
            ok = np.isfinite(res) & (h_t > 0)
            s = np.sign(res)
            idx = np.nonzero(ok[:-1] & ok[1:] & (s[:-1] != s[1:]))[0]
            for i in idx:
                f = lambda rr: float(_residual(rr, branch, x, y, h_prime, volume)[0])
                roots[branch].append(_bisect(f, float(r[i]), float(r[i + 1])))
            start = float(r[-1]) + step
    return roots


def oracle_solution(x, y, h_prime, volume, step=1e-7):
    """Golden (r, x_p, y_p, h_t, buffer) from the algebraic-branch root in (0, 1)."""
    roots = [r for r in scan_roots(x, y, h_prime, volume, step=step)["algebraic"] if 0 < r < 1]
    if not roots:
        return None
    assert len(roots) == 1, roots
    r = roots[0]
    x_p, y_p = x / r, y / r
    h_t = h_prime / (1 + r)
    return dict(r=r, x_p=x_p, y_p=y_p, h_t=h_t, buffer=max((x_p - x) / 2, (y_p - y) / 2))
