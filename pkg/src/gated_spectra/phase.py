"""Fixed-point phase diagram of the GRU mean-field equations in the (a_h, a_r) plane."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import erfc

from .errors import GatedSpectraError, NotApplicableError, ParameterError
from .mft import Branch, gru_fp_solve, gru_kernels
from .params import GatedNetParams, sigmoid

SQRT2 = float(np.sqrt(2.0))


class Region(str, Enum):
    BLUE = "Blue"      # only the zero fixed point, stable
    GREEN = "Green"    # zero stable plus a pair of nonzero fixed points
    ORANGE = "Orange"  # zero fixed point unstable


@dataclass
class PhasePoint:
    a_h: float
    a_r: float
    n_fixed_points: int
    zero_stable: bool
    region: Region
    marginal: bool
    rho0: list = field(default_factory=list)
    c_h: list = field(default_factory=list)
    error: str = ""

    def to_row(self):
        return {"a_h": self.a_h, "a_r": self.a_r, "region": self.region.value,
                "n_fp": self.n_fixed_points, "marginal": int(self.marginal)}


def _params(a_h, a_r, params_rest):
    base = dict(params_rest or {})
    base.setdefault("n", 2)  # unused by the mean-field equations
    return GatedNetParams.gru(a_h=float(a_h), a_r=float(a_r), **base)


def zero_fp_stable(params: GatedNetParams) -> bool:
    """Stability of the zero fixed point from its disk radius."""
    z, r = float(sigmoid(params.b("z"))), float(sigmoid(params.b("r")))
    _, dphi = params.phi()
    return bool(z + (1 - z) * r * params.a("h") * float(dphi(params.b("h"))) < 1)


def alpha_fraction(beta: float, c_h: float) -> float:
    """Fraction of closed update gates in the large-gain limit."""
    if c_h <= 0:
        return float(beta < 0) if beta != 0 else 0.5
    return float(0.5 * erfc(beta / np.sqrt(2.0 * c_h)))


def marginal_condition(rho0: float, beta: float, c_h: float) -> bool:
    return bool(rho0 ** 2 < 1.0 / alpha_fraction(beta, c_h))


def classify(a_h: float, a_r: float, params_rest=None, beta: float = 0.0, grid: int = 400) -> PhasePoint:
    p = _params(a_h, a_r, params_rest)
    sols = gru_fp_solve(p, grid=grid)
    has_zero = any(s.branch == Branch.ZERO for s in sols)
    nz = [s for s in sols if s.branch != Branch.ZERO]
    n_fp = len(sols)
    zs = bool(has_zero and zero_fp_stable(p))
    if not zs:
        region = Region.ORANGE
    elif nz:
        region = Region.GREEN
    else:
        region = Region.BLUE
    marginal = False
    if nz:
        low = min(nz, key=lambda s: s.rho0)
        marginal = marginal_condition(low.rho0, beta, low.c_h)
    return PhasePoint(float(a_h), float(a_r), n_fp, zs, region, marginal,
                      [s.rho0 for s in nz], [s.c_h for s in nz])


def marginal_region(a_h: float, a_r: float, beta: float = 0.0, params_rest=None) -> bool:
    pt = classify(a_h, a_r, params_rest, beta)
    if not pt.rho0:
        raise NotApplicableError(f"no nonzero fixed point at a_h={a_h}, a_r={a_r}")
    return pt.marginal


def _min_ratio_gap(a_h, a_r, params_rest=None, c_min=1e-8, c_max=1.0):
    """``min_c (1 - C_phi(c)/c)``; negative iff a pair of nonzero roots exists."""
    p = _params(a_h, a_r, params_rest)
    rel = lambda c: 1.0 - gru_kernels(c, p).c_phi / c
    xs = np.geomspace(c_min, c_max, 120)
    v = np.array([rel(c) for c in xs])
    j = int(np.argmin(v))
    lo, hi = np.log(xs[max(j - 1, 0)]), np.log(xs[min(j + 1, xs.size - 1)])
    res = minimize_scalar(lambda t: rel(np.exp(t)), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-10})
    return float(min(v[j], res.fun))


def has_nonzero_pair(a_h, a_r, params_rest=None) -> bool:
    return _min_ratio_gap(a_h, a_r, params_rest) < 0


@dataclass
class BifurcationPoint:
    a_h: float
    a_r_star: float
    found: bool


def critical_reset_gain(a_h: float, params_rest=None, a_r_max: float = 1e3, resolution: float = 1e-3) -> BifurcationPoint:
    """Smallest ``a_r`` at which the nonzero pair appears (bisection to ``resolution``)."""
    if not SQRT2 < a_h < 2:
        raise ParameterError("a_h must lie strictly between sqrt(2) and 2")
    lo, hi = 0.0, 1.0
    while not has_nonzero_pair(a_h, hi, params_rest):
        lo, hi = hi, 2 * hi
        if hi > a_r_max:
            if has_nonzero_pair(a_h, a_r_max, params_rest):
                hi = a_r_max
                break
            return BifurcationPoint(float(a_h), float("inf"), False)
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if has_nonzero_pair(a_h, mid, params_rest):
            hi = mid
        else:
            lo = mid
    return BifurcationPoint(float(a_h), float(hi), True)


def bifurcation_curve(a_h_grid, params_rest=None, a_r_max: float = 1e3, resolution: float = 1e-3,
                      margin: float = 1e-3) -> list:
    grid = np.asarray(a_h_grid, dtype=float)
    if np.any(grid <= SQRT2 + margin * 0.999) or np.any(grid >= 2 - margin * 0.999):
        raise ParameterError(f"a_h grid must lie in (sqrt(2) + {margin}, 2 - {margin})")
    return [critical_reset_gain(a, params_rest, a_r_max, resolution) for a in grid]


def bifurcation_endpoint(eps_values=(4e-3, 2e-3, 1e-3), resolution: float = 1e-5):
    """Extrapolate ``a_r*(2 - eps)`` to ``eps -> 0``.

    Near the endpoint ``a_r*^2`` is linear in ``sqrt(eps)`` to leading order,
    so a straight-line fit in that variable gives the intercept.
    Returns ``(a_r_star_limit, points)``.
    """
    pts = [critical_reset_gain(2.0 - e, resolution=resolution) for e in eps_values]
    s = np.sqrt(np.asarray(eps_values))
    y = np.array([b.a_r_star for b in pts]) ** 2
    coef = np.polyfit(s, y, 1 if len(s) < 3 else 2)
    return float(np.sqrt(np.polyval(coef, 0.0))), pts


def critical_bias_line(b_r):
    """Zero-fixed-point stability line ``a_h = 1 + exp(-b_r)`` (zero update bias)."""
    return 1.0 + np.exp(-np.asarray(b_r, dtype=float))


@dataclass
class PhaseGrid:
    a_h: np.ndarray
    a_r: np.ndarray
    points: list  # row-major over (a_r, a_h)
    errors: dict

    def region_raster(self) -> np.ndarray:
        codes = {Region.BLUE: 0, Region.GREEN: 1, Region.ORANGE: 2}
        return np.array([codes[p.region] for p in self.points]).reshape(self.a_r.size, self.a_h.size)

    def marginal_raster(self) -> np.ndarray:
        return np.array([p.marginal for p in self.points]).reshape(self.a_r.size, self.a_h.size)


def sweep(a_h_values, a_r_values, params_rest=None, beta: float = 0.0, grid: int = 200,
          threads: int = 1) -> PhaseGrid:
    """Classify every node of the rectangular grid (errors recorded per node)."""
    ah = np.asarray(a_h_values, dtype=float)
    ar = np.asarray(a_r_values, dtype=float)
    nodes = [(a, b) for b in ar for a in ah]
    errors = {}

    def one(node):
        try:
            return classify(node[0], node[1], params_rest, beta, grid)
        except GatedSpectraError as e:
            errors[node] = str(e)
            return PhasePoint(node[0], node[1], 0, False, Region.ORANGE, False, error=str(e))

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            pts = list(ex.map(one, nodes))
    else:
        pts = [one(n) for n in nodes]
    return PhaseGrid(ah, ar, pts, errors)
