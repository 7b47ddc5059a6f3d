"""Zero contours of real functions on the complex plane."""
from __future__ import annotations

import numpy as np
from skimage.measure import find_contours

from .errors import EmptySpectrumError, ParameterError


def symmetric_grid(box: float, size: int, center_re: float = 0.0):
    """Axes of a ``size x size`` grid over ``[c - box, c + box] x [-box, box]``.

    ``size`` is forced even so no node lies on the real axis, where sampled
    poles of the boundary functions sit.
    """
    size = int(size) + (int(size) % 2)
    h = 2.0 * box / size
    xs = center_re - box + h * (np.arange(size) + 0.5)
    ys = -box + h * (np.arange(size) + 0.5)
    return xs, ys


def evaluate_grid(fn, xs, ys, symmetric=True, chunk=4096):
    """``fn`` on the grid; with ``symmetric`` only Im > 0 rows are evaluated
    and mirrored (``fn(conj(l)) == fn(l)``)."""
    ny = len(ys)
    out = np.empty((ny, len(xs)))
    rows = np.arange(ny // 2, ny) if symmetric else np.arange(ny)
    lam = (xs[None, :] + 1j * ys[rows, None]).ravel()
    vals = np.concatenate([np.asarray(fn(lam[i : i + chunk]), dtype=float)
                           for i in range(0, lam.size, chunk)])
    out[rows] = vals.reshape(len(rows), len(xs))
    if symmetric:
        out[: ny // 2] = out[ny - 1 : ny // 2 - 1 : -1]
    return out


def _refine(fn, a, b, fa, tol):
    """Vectorised bisection between complex endpoints ``a`` (value ``fa``) and ``b``."""
    sa = np.sign(fa)
    for _ in range(200):
        if np.max(np.abs(b - a)) <= tol:
            break
        m = 0.5 * (a + b)
        fm = np.asarray(fn(m), dtype=float)
        same = np.sign(fm) == sa
        a = np.where(same, m, a)
        b = np.where(same, b, m)
    return 0.5 * (a + b)


def zero_contour(fn, box: float, size: int = 600, center_re: float = 0.0,
                 refine_tol: float = 1e-6, symmetric: bool = True, values=None):
    """Closed rings (complex arrays) where ``fn`` changes sign.

    Marching squares on the grid, then each vertex is moved onto the zero
    set by bisection along the grid edge it lies on.
    """
    if box <= 0 or size < 4:
        raise ParameterError("box must be positive and size >= 4")
    xs, ys = symmetric_grid(box, size, center_re)
    S = evaluate_grid(fn, xs, ys, symmetric) if values is None else values
    finite = np.isfinite(S)
    if not finite.all():
        S = np.where(finite, S, np.nanmax(np.where(finite, S, -np.inf)) + 1.0)
    if not (np.any(S > 0) and np.any(S < 0)):
        raise EmptySpectrumError(
            f"no sign change on the grid (min {S.min():.3g}, max {S.max():.3g})")
    h = xs[1] - xs[0]
    rings = []
    for path in find_contours(S, 0.0):
        r, c = path[:, 0], path[:, 1]
        # vertices sit on an edge: integer row (horizontal edge) or integer col
        on_row = np.abs(r - np.round(r)) < 1e-9
        r0 = np.where(on_row, np.round(r), np.floor(r)).astype(int)
        c0 = np.where(on_row, np.floor(c), np.round(c)).astype(int)
        r1 = np.where(on_row, r0, np.minimum(r0 + 1, len(ys) - 1))
        c1 = np.where(on_row, np.minimum(c0 + 1, len(xs) - 1), c0)
        a = xs[c0] + 1j * ys[r0]
        b = xs[c1] + 1j * ys[r1]
        fa = S[r0, c0]
        pts = _refine(fn, a, b, fa, refine_tol)
        if np.abs(pts[0] - pts[-1]) > 2 * h:
            pts = np.append(pts, pts[0])  # touched the box edge; close anyway
        rings.append(pts)
    return rings


def points_inside(points, rings) -> np.ndarray:
    """Even-odd rule against all rings (holes handled naturally)."""
    P = np.asarray(points, dtype=complex).ravel()
    x, y = P.real, P.imag
    inside = np.zeros(P.size, dtype=bool)
    for ring in rings:
        ring = np.asarray(ring)
        x1, y1 = ring[:-1].real, ring[:-1].imag
        x2, y2 = ring[1:].real, ring[1:].imag
        for j in range(len(x1)):
            cond = (y1[j] > y) != (y2[j] > y)
            if not cond.any():
                continue
            t = (y[cond] - y1[j]) / (y2[j] - y1[j])
            xc = x1[j] + t * (x2[j] - x1[j])
            inside[np.flatnonzero(cond)[x[cond] < xc]] ^= True
    return inside


def circle(center, radius, n=720):
    t = np.linspace(0.0, 2 * np.pi, n + 1)
    return center + radius * np.exp(1j * t)


def distance_to_polyline(points, polyline) -> np.ndarray:
    """Euclidean distance from each point to the nearest segment of ``polyline``."""
    P = np.asarray(points, dtype=complex).ravel()
    L = np.asarray(polyline, dtype=complex).ravel()
    a, d = L[:-1], np.diff(L)
    dd = np.maximum(np.abs(d) ** 2, 1e-300)
    out = np.empty(P.size)
    for i in range(0, P.size, 512):
        w = P[i : i + 512, None] - a[None, :]
        t = np.clip((w.real * d.real + w.imag * d.imag) / dd, 0.0, 1.0)
        out[i : i + 512] = np.abs(w - t * d).min(axis=1)
    return out


def hausdorff(a, b) -> float:
    """Symmetric Hausdorff distance between two polylines (segments, not just vertices)."""
    a, b = np.asarray(a).ravel(), np.asarray(b).ravel()
    return float(max(distance_to_polyline(a, b).max(), distance_to_polyline(b, a).max()))


def ray_radius(rings, center, angle) -> float:
    """Largest distance from ``center`` at which the ray at ``angle`` meets a ring."""
    d = np.exp(1j * angle)
    best = 0.0
    for ring in rings:
        p = np.asarray(ring) - center
        q = p * np.conj(d)  # rotate so the ray is the positive real axis
        a, b = q[:-1], q[1:]
        cross = (a.imag > 0) != (b.imag > 0)
        if not cross.any():
            continue
        t = a.imag[cross] / (a.imag[cross] - b.imag[cross])
        xr = a.real[cross] + t * (b.real[cross] - a.real[cross])
        xr = xr[xr > 0]
        if xr.size:
            best = max(best, float(xr.max()))
    return best
