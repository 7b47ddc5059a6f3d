"""Mean-field self-consistency: Gaussian integrals, GRU fixed points and
single-site Monte Carlo for steady-state correlators.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import solve_triangular
from scipy.optimize import brentq
from scipy.special import roots_hermitenorm

from .errors import (ConvergenceError, DivergenceError, InvariantError,
                     ParameterError)
from .params import Activation, Arch, GatedNetParams, check_params, sigmoid, sigmoid_prime

GH_ORDER = 201
_SQRT2PI = np.sqrt(2.0 * np.pi)


# --------------------------------------------------------------------------
# quadrature


@lru_cache(maxsize=8)
def _gh(order):
    x, w = roots_hermitenorm(order)
    return x, w / _SQRT2PI


@lru_cache(maxsize=4)
def _gl(order):
    return leggauss(order)


def _adaptive_gl(g, edges, tol, max_levels=40):
    """Adaptive Gauss-Legendre on consecutive intervals; ``g`` is vectorised."""
    xg, wg = _gl(15)
    lo = np.asarray(edges[:-1], dtype=float)
    hi = np.asarray(edges[1:], dtype=float)
    total_len = hi[-1] - lo[0]
    total = 0.0
    for _ in range(max_levels):
        if lo.size == 0:
            return total
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)

        def panel(a, h):
            pts = a[:, None] + h[:, None] * (xg[None, :] + 1.0)
            return (g(pts.ravel()).reshape(pts.shape) @ wg) * h

        whole = panel(lo, half)
        split = panel(lo, 0.5 * half) + panel(mid, 0.5 * half)
        err = np.abs(whole - split)
        ok = err <= tol * (hi - lo) / total_len + 1e-300
        total += split[ok].sum()
        lo, hi, mid = lo[~ok], hi[~ok], mid[~ok]
        lo, hi = np.concatenate([lo, mid]), np.concatenate([mid, hi])
    raise ConvergenceError("adaptive quadrature did not converge", iterates=(total,))


def gauss_expect(f: Callable, mean: float = 0.0, variance: float = 1.0,
                 order: int = GH_ORDER, breakpoints=None, tol: float = 1e-10,
                 scale: float = 1.0, smooth: bool = True) -> float:
    """``E[f(mean + sqrt(variance) X)]`` for standard normal ``X``.

    ``f`` must accept numpy arrays.  Gauss-Hermite at ``order`` is checked
    against ``2 * order``; on disagreement above ``tol`` the integral is
    redone adaptively on [-12, 12] standard deviations, split at
    ``breakpoints`` (given in the units of the argument of ``f``).

    ``scale`` is the width of the sharpest feature of ``f``; when the
    Gaussian is much wider than that, or ``smooth`` is False (kinks), the
    Hermite rule is skipped since both orders can miss the feature alike.
    """
    if not np.isfinite(variance) or variance < 0:
        raise ParameterError(f"variance must be finite and >= 0, got {variance}")
    if variance == 0.0:
        return float(np.asarray(f(np.array([float(mean)])))[0])
    sd = np.sqrt(variance)
    if smooth and sd <= 2.0 * scale:
        x1, w1 = _gh(order)
        x2, w2 = _gh(2 * order)
        v1 = float(w1 @ f(mean + sd * x1))
        v2 = float(w2 @ f(mean + sd * x2))
        if abs(v1 - v2) <= tol:
            return v2
    L = 12.0
    edges = [-L, L]
    width = scale / sd  # feature width in standard-normal units
    if breakpoints is not None:
        steps = width * 0.25 * 2.0 ** np.arange(0, 60)
        steps = steps[steps < 2 * L]
        for b in np.atleast_1d(breakpoints):
            u = (float(b) - mean) / sd
            if -L < u < L:
                # geometric panels so a narrow feature at u cannot hide between nodes
                edges.extend([u, *(u + steps), *(u - steps)])
    edges = np.unique(np.clip(edges, -L, L))

    def g(u):
        return f(mean + sd * u) * np.exp(-0.5 * u * u) / _SQRT2PI

    return float(_adaptive_gl(g, edges, tol * 0.1))


def gauss_expect2(f: Callable, g: Callable, mean1, mean2, var1, var2, cov, order: int = 161) -> float:
    """``E[f(X1) g(X2)]`` for a bivariate Gaussian, tensor Gauss-Hermite."""
    if var1 < 0 or var2 < 0:
        raise ParameterError("variances must be >= 0")
    x, w = _gh(order)
    s1 = np.sqrt(var1)
    if s1 == 0.0:
        return float(f(np.array([mean1]))[0]) * gauss_expect(g, mean2, var2)
    slope = cov / s1
    rest = max(var2 - slope * slope, 0.0)
    X1 = mean1 + s1 * x
    X2 = mean2 + slope * x[:, None] + np.sqrt(rest) * x[None, :]
    inner = g(X2) @ w
    return float(w @ (f(X1) * inner))


def _sigmoid_breaks(b):
    return [b]


def _sig_sq(x):
    return sigmoid(x) ** 2


def _sigp_sq(x):
    return sigmoid_prime(x) ** 2


# --------------------------------------------------------------------------
# correlation containers


@dataclass
class CorrelationSet:
    """Equal-time (and optionally lagged) mean-field moments.

    Fields left at ``None`` were not computed by the producing routine.
    """

    c_h: float
    c_h_lag: Optional[np.ndarray] = None
    c_r: Optional[float] = None
    c_z: Optional[float] = None
    c_phi: Optional[float] = None
    c_phiprime: Optional[float] = None
    c_rprime: Optional[float] = None
    kappa: Optional[float] = None
    c_y: Optional[float] = None
    nu_sq: Optional[float] = None
    lstm_q: Optional[float] = None
    lstm_p: Optional[float] = None
    alpha: Optional[float] = None
    eta: Optional[float] = None
    stderr: dict = field(default_factory=dict)
    samples: Optional[dict] = field(default=None, repr=False)
    lag_batches: Optional[np.ndarray] = field(default=None, repr=False)
    meta: dict = field(default_factory=dict)

    def check(self):
        if self.c_h_lag is not None:
            lag = np.asarray(self.c_h_lag)
            if np.any(np.abs(lag) > lag[0] * (1 + 1e-12) + 1e-15):
                k = int(np.argmax(np.abs(lag) > lag[0]))
                raise InvariantError(f"|C_h({k})| = {abs(lag[k]):.6g} exceeds C_h(0) = {lag[0]:.6g}")
        return self

    def to_json(self) -> str:
        d = {k: v for k, v in asdict(self).items() if k not in ("samples", "lag_batches")}
        if self.c_h_lag is not None:
            d["c_h_lag"] = [float(x) for x in np.asarray(self.c_h_lag)]
        d["stderr"] = {k: (np.asarray(v).tolist()) for k, v in self.stderr.items()}
        return json.dumps(d)

    @classmethod
    def from_json(cls, text: str) -> "CorrelationSet":
        d = json.loads(text)
        if d.get("c_h_lag") is not None:
            d["c_h_lag"] = np.asarray(d["c_h_lag"], dtype=float)
        return cls(**d)


def gru_kernels(c_h: float, params: GatedNetParams) -> CorrelationSet:
    """Gate and activation kernels at equal-time variance ``c_h`` (quadrature)."""
    check_params(params, Arch.GRU)
    if not np.isfinite(c_h) or c_h < 0:
        raise ParameterError(f"c_h must be finite and >= 0, got {c_h}")
    p = params
    phi, dphi = p.phi()
    var_r = p.a("r") ** 2 * c_h + p.v("r")
    var_z = p.a("z") ** 2 * c_h + p.v("z")
    br, bz, bh = p.b("r"), p.b("z"), p.b("h")
    c_r = gauss_expect(_sig_sq, br, var_r, breakpoints=[br])
    c_rp = gauss_expect(_sigp_sq, br, var_r, breakpoints=[br])
    c_z = gauss_expect(_sig_sq, bz, var_z, breakpoints=[bz])
    kappa = gauss_expect(sigmoid, bz, var_z, breakpoints=[bz])
    c_y = c_h * c_r
    var_y = p.a("h") ** 2 * c_y + p.v("h")
    kinks = [-1.0, 1.0] if p.activation == Activation.HARD_TANH else [bh]
    smooth = p.activation != Activation.HARD_TANH
    c_phi = gauss_expect(lambda x: phi(x) ** 2, bh, var_y, breakpoints=kinks, smooth=smooth)
    c_phip = gauss_expect(lambda x: dphi(x) ** 2, bh, var_y, breakpoints=kinks, smooth=smooth)
    sd_z = np.sqrt(var_z)
    if p.a("z") > 0 and c_h > 0:
        beta = bz / p.a("z")
        alpha = 0.5 * float(_erfc(beta / np.sqrt(2.0 * c_h)))
    else:
        alpha = 1.0 - kappa
    return CorrelationSet(c_h=float(c_h), c_r=c_r, c_z=c_z, c_phi=c_phi, c_phiprime=c_phip,
                          c_rprime=c_rp, kappa=kappa, c_y=c_y, alpha=alpha,
                          eta=unsaturated_fraction(bh, var_y, p.activation),
                          meta={"source": "quadrature", "var_z": var_z, "sd_z": sd_z})


def _erfc(x):
    from scipy.special import erfc
    return erfc(x)


def unsaturated_fraction(mean, variance, activation) -> float:
    """Fraction of unsaturated activations: exact interval probability for
    hard-tanh, ``E[phi'(y)^2]`` for tanh."""
    activation = Activation(activation)
    if activation == Activation.HARD_TANH:
        if variance == 0:
            return float(abs(mean) < 1.0)
        from scipy.stats import norm
        sd = np.sqrt(variance)
        return float(norm.cdf((1.0 - mean) / sd) - norm.cdf((-1.0 - mean) / sd))
    from .params import tanh_prime
    return gauss_expect(lambda x: tanh_prime(x) ** 2, mean, variance)


def shaping_parameter_sq(k: CorrelationSet, params: GatedNetParams) -> float:
    """``a_h^2 C_phi' (C_r + a_r^2 C_r' C_h)``."""
    return params.a("h") ** 2 * k.c_phiprime * (k.c_r + params.a("r") ** 2 * k.c_rprime * k.c_h)


# --------------------------------------------------------------------------
# GRU fixed points


class Branch(str, Enum):
    ZERO = "zero"
    LOWER = "nonzero_lower"
    UPPER = "nonzero_upper"


@dataclass(frozen=True)
class FixedPointSolution:
    c_h: float
    c_y: float
    branch: Branch
    rho0: float
    stable: bool
    residual: float = 0.0


def _fp_residual(c_h, params):
    k = gru_kernels(c_h, params)
    return c_h - k.c_phi, k


def _solution(c_h, params, branch):
    res, k = _fp_residual(c_h, params)
    rho0 = float(np.sqrt(shaping_parameter_sq(k, params)))
    return FixedPointSolution(float(c_h), float(k.c_y), branch, rho0, bool(rho0 < 1.0), float(abs(res)))


def gru_fp_solve(params: GatedNetParams, grid: int = 400, c_min: float = 1e-12,
                 c_max: Optional[float] = None, xtol: float = 1e-14) -> list:
    """All fixed-point variances ``C_h`` of the GRU mean-field equations.

    Nonzero roots are bracketed by sign changes of ``1 - C_phi(C_h)/C_h`` on
    a log grid and polished with Brent's method.  The zero solution is
    included whenever ``C_phi(0) = 0`` (no activation bias).
    """
    check_params(params, Arch.GRU)
    if c_max is None:
        c_max = 1.0 if params.activation in (Activation.TANH, Activation.HARD_TANH) else 10.0
    out = []
    phi, _ = params.phi()
    c_phi0 = gauss_expect(lambda x: phi(x) ** 2, params.b("h"), params.v("h"))
    if c_phi0 == 0.0:
        out.append(_solution(0.0, params, Branch.ZERO))

    def rel(c):
        return 1.0 - gru_kernels(c, params).c_phi / c

    xs = np.geomspace(c_min, c_max, grid)
    vals = np.array([rel(c) for c in xs])
    roots = []
    for j in range(grid - 1):
        a, b = vals[j], vals[j + 1]
        if a == 0.0:
            roots.append(xs[j])
        elif a * b < 0:
            roots.append(brentq(rel, xs[j], xs[j + 1], xtol=xtol * min(1.0, xs[j]), rtol=1e-15))
    if vals[-1] == 0.0:
        roots.append(xs[-1])
    dedup = []
    for r in sorted(roots):
        if not dedup or abs(r - dedup[-1]) > 1e-6 * max(r, dedup[-1]):
            dedup.append(r)
    if len(dedup) == 1:
        labels = [Branch.UPPER]
    else:
        labels = [Branch.LOWER] + [Branch.UPPER] * (len(dedup) - 1)
    out.extend(_solution(r, params, lab) for r, lab in zip(dedup, labels))
    return out


def fpoly(a_r):
    """Rational correction coefficient of the large-reset perturbative branch."""
    x = a_r * a_r
    num = 31552 - 11424 * x + 744 * x ** 2 + 72 * x ** 3 + 9 * x ** 4
    return 4.0 * num / (3 * x ** 2 + 24 * x - 136) ** 2


def series_coefficients(b_r: float):
    """Small-variance expansion of ``C_r`` in powers of ``a_r^2 C_h``."""
    e1, e2 = np.exp(-b_r), np.exp(-2 * b_r)
    c1 = sigmoid(b_r) ** 2
    c2 = -(e1 - 2 * e2) / (1 + e1) ** 4
    E = np.exp(b_r)
    c3 = -(E ** 2) * (E ** 3 - 18 * E ** 2 + 33 * E - 8) / (4 * (1 + E) ** 6)
    return float(c1), float(c2), float(c3)


def gru_fp_perturbative(params: GatedNetParams, eps: float) -> list:
    """Closed-form small-``C_h`` fixed-point branches at ``a_h = 2 + eps``.

    ``eps`` is signed; ``params.a_h`` is ignored.  Returns a list of
    ``(Branch, c_h)``; empty when no nonzero perturbative branch exists.
    """
    check_params(params, Arch.GRU)
    if any(params.b(k) != 0 for k in ("r", "h")) or params.v("r") or params.v("h"):
        raise ParameterError("perturbative branches assume zero reset/activation biases")
    a_h = 2.0 + eps
    a_r = params.a("r")
    crit = np.sqrt(2.0) * a_h
    if abs(a_r - crit) < 1e-3:
        raise ParameterError("a_r = sqrt(2) a_h is degenerate; use gru_fp_critical_branch")
    x = a_r * a_r
    big = 6 * (x - 8) / (3 * x * x + 24 * x - 136)
    if eps > 0:
        if a_r < crit:
            return [(Branch.UPPER, 4 * eps / (8 - x))]
        return [(Branch.UPPER, big + fpoly(a_r) * eps / (x - 8))]
    e = -eps
    if a_r <= crit or e == 0:
        return []
    return [(Branch.LOWER, 4 * e / (x - 8)), (Branch.UPPER, big - fpoly(a_r) * e / (x - 8))]


def gru_fp_critical_branch(eps: float, exact: bool = False) -> float:
    """Nonzero branch at ``a_r = sqrt(2) a_h``, ``a_h = 2 + eps``.

    ``exact=False`` returns ``sqrt(eps)/4``; ``exact=True`` returns the root of
    the truncated cubic expansion, ``sqrt(48 eps / 496)``.
    """
    if eps <= 0:
        return 0.0
    return float(np.sqrt(48.0 * eps / 496.0)) if exact else float(np.sqrt(eps) / 4.0)


# --------------------------------------------------------------------------
# single-site Monte Carlo


def _chol(cov):
    """Cholesky with eigenvalue clipping fallback for PSD-but-singular input."""
    cov = 0.5 * (cov + cov.T)
    try:
        return np.linalg.cholesky(cov + 1e-14 * np.eye(len(cov)))
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(cov)
        return V * np.sqrt(np.clip(w, 0.0, None))


def _batch_se(x, batches):
    """Standard error of the mean of ``x`` (paths on axis 0) by batch means."""
    parts = np.array_split(np.asarray(x), batches, axis=0)
    means = np.array([p.mean(axis=0) for p in parts])
    return means.std(axis=0, ddof=1) / np.sqrt(batches)


def _lag_stats(H, horizon, batches):
    """Lagged correlation over the last ``horizon`` steps, plus per-batch values."""
    W = H[-horizon:]  # (horizon, paths)
    P = W.shape[1]
    lags = np.empty(horizon)
    per_batch = np.empty((batches, horizon))
    idx = np.array_split(np.arange(P), batches)
    for k in range(horizon):
        prod = (W[: horizon - k] * W[k:]).mean(axis=0)  # per path
        lags[k] = prod.mean()
        per_batch[:, k] = [prod[i].mean() for i in idx]
    return lags, per_batch


@dataclass
class _MCConfig:
    paths: int
    horizon: int
    burn_in: int
    seed: int
    max_sweeps: int
    tol: float
    damping: float
    batches: int


def _mc_common(paths, horizon, burn_in, seed, max_sweeps, tol, damping, batches):
    if paths < 2 * batches or horizon < 2 or burn_in < 1:
        raise ParameterError("need paths >= 2*batches, horizon >= 2, burn_in >= 1")
    return _MCConfig(int(paths), int(horizon), int(burn_in), int(seed), int(max_sweeps),
                     float(tol), float(damping), int(batches))


def _noise(L, Z, mean):
    return mean + L @ Z


class _CausalNoise:
    """Gaussian sequence whose covariance row for step t is supplied at step t.

    Row t of the Cholesky factor depends only on covariances with earlier
    steps, so a kernel measured from the paths' own past can be used as the
    time loop advances.
    """

    def __init__(self, T, Z, mean):
        self.L = np.zeros((T, T))
        self.Ls = np.zeros((T, T))  # copy with unit placeholders on zero pivots
        self.Z = Z
        self.mean = mean
        self.scale = 0.0

    def draw(self, t, krow, nugget=1e-9):
        self.scale = max(self.scale, krow[t])
        if self.scale == 0.0:  # degenerate: constant process
            self.Ls[t, t] = 1.0
            return np.full(self.Z.shape[1], self.mean, dtype=float)
        l = solve_triangular(self.Ls[:t, :t], krow[:t], lower=True) if t else np.zeros(0)
        # the nugget keeps the sequential factor well conditioned when the
        # kernel is nearly singular (frozen gates make h_t almost constant)
        d = np.sqrt(max(krow[t] + nugget * self.scale - l @ l, nugget * self.scale))
        self.L[t, :t] = self.Ls[t, :t] = l
        self.L[t, t] = self.Ls[t, t] = d
        return self.mean + l @ self.Z[:t] + d * self.Z[t]


def _iterate(sweep, x0, cfg, name):
    """Half-damped (by default) fixed-point iteration of the sweep map."""
    x = x0
    history = []
    for k in range(cfg.max_sweeps):
        gx, ch0, state = sweep(x)
        history.append(ch0)
        if k >= 1 and abs(history[-1] - history[-2]) < cfg.tol:
            return state, history
        x = (1 - cfg.damping) * gx + cfg.damping * x
    raise ConvergenceError(f"single-site {name} did not converge in {cfg.max_sweeps} sweeps",
                           iterates=history[-2:])


def _mc_rng(cfg):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed & ((1 << 64) - 1))))


def single_site_mc_gru(params: GatedNetParams, paths: int = 20000, horizon: int = 64,
                       seed: int = 0, burn_in: int = 200, max_sweeps: int = 20,
                       tol: float = 1e-3, damping: float = 0.5, batches: int = 20) -> CorrelationSet:
    """Self-consistent two-time single-site simulation of the GRU.

    Each path obeys ``h_t = z_t h_{t-1} + (1 - z_t) phi(y_t)`` where the
    pre-activations are Gaussian processes whose covariances are built from
    the previous sweep's measured two-time correlations of ``h_{t-1}`` and
    ``r_t h_{t-1}``.  The same standard normal draws are reused across
    sweeps, so each sweep is a smooth deterministic map that Anderson mixing
    can accelerate.
    """
    check_params(params, Arch.GRU)
    cfg = _mc_common(paths, horizon, burn_in, seed, max_sweeps, tol, damping, batches)
    p = params
    phi, dphi = p.phi()
    T = cfg.burn_in + cfg.horizon
    rng = _mc_rng(cfg)
    h0 = 0.5 * rng.standard_normal(cfg.paths)
    Zz, Zr, Zy = (rng.standard_normal((T, cfg.paths)) for _ in range(3))

    def sweep(x):
        Ch, Cq = x[: T * T].reshape(T, T), x[T * T :].reshape(T, T)
        z = sigmoid(_noise(_chol(p.a("z") ** 2 * Ch + p.v("z")), Zz, p.b("z")))
        r = sigmoid(_noise(_chol(p.a("r") ** 2 * Ch + p.v("r")), Zr, p.b("r")))
        Y = _noise(_chol(p.a("h") ** 2 * Cq + p.v("h")), Zy, p.b("h"))
        Hprev = np.empty((T, cfg.paths))
        H = np.empty((T, cfg.paths))
        h = h0
        for t in range(T):
            Hprev[t] = h
            h = z[t] * h + (1.0 - z[t]) * phi(Y[t])
            H[t] = h
        if not np.all(np.isfinite(h)):
            raise DivergenceError("single-site GRU produced non-finite values")
        Q = r * Hprev
        gx = np.concatenate([(Hprev @ Hprev.T).ravel(), (Q @ Q.T).ravel()]) / cfg.paths
        return gx, float(np.mean(H[-cfg.horizon :] ** 2)), (z, r, Y, Hprev, H)

    def causal():
        nz, nr, ny = (_CausalNoise(T, Zk, p.b(k)) for Zk, k in ((Zz, "z"), (Zr, "r"), (Zy, "h")))
        Hprev = np.empty((T, cfg.paths))
        Q = np.empty((T, cfg.paths))
        h = h0
        for t in range(T):
            Hprev[t] = h
            ch = Hprev[: t + 1] @ h / cfg.paths
            z = sigmoid(nz.draw(t, p.a("z") ** 2 * ch + p.v("z")))
            r = sigmoid(nr.draw(t, p.a("r") ** 2 * ch + p.v("r")))
            Q[t] = r * h
            y = ny.draw(t, p.a("h") ** 2 * (Q[: t + 1] @ Q[t]) / cfg.paths + p.v("h"))
            h = z * h + (1.0 - z) * phi(y)
        return np.concatenate([(Hprev @ Hprev.T).ravel(), (Q @ Q.T).ravel()]) / cfg.paths

    (z, r, Y, Hprev, H), history = _iterate(sweep, causal(), cfg, "GRU")

    w = slice(T - cfg.horizon, T)
    zw, rw, yw, hpw, hw = z[w], r[w], Y[w], Hprev[w], H[w]
    lags, per_batch = _lag_stats(H, cfg.horizon, cfg.batches)
    c_h = float(lags[0])
    c_r = float(np.mean(rw ** 2))
    nu = (hpw - phi(yw)) ** 2
    ypath = yw.T
    out = CorrelationSet(
        c_h=c_h, c_h_lag=lags, c_r=c_r, c_z=float(np.mean(zw ** 2)),
        c_phi=float(np.mean(phi(yw) ** 2)), c_phiprime=float(np.mean(dphi(yw) ** 2)),
        c_rprime=float(np.mean((rw * (1 - rw)) ** 2)), kappa=float(np.mean(zw)),
        c_y=c_r * c_h, nu_sq=float(np.mean(nu)), alpha=float(1.0 - np.mean(zw)),
        eta=_eta_samples(yw, p.activation),
        stderr={"c_h": float(per_batch[:, 0].std(ddof=1) / np.sqrt(cfg.batches)),
                "c_h_lag": per_batch.std(axis=0, ddof=1) / np.sqrt(cfg.batches),
                "c_phi": float(_batch_se((phi(ypath) ** 2).mean(axis=1), cfg.batches)),
                "nu_sq": float(_batch_se(nu.T.mean(axis=1), cfg.batches))},
        samples={"z": z[-1], "zprime": z[-1] * (1 - z[-1]), "r": r[-1], "rprime": r[-1] * (1 - r[-1]),
                 "h_prev": Hprev[-1], "y": Y[-1]},
        lag_batches=per_batch,
        meta={"sweeps": len(history), "history": history, "paths": cfg.paths,
              "horizon": cfg.horizon, "burn_in": cfg.burn_in, "seed": cfg.seed,
              "source": "single_site_mc"},
    )
    return out


def _eta_samples(y, activation):
    if Activation(activation) == Activation.HARD_TANH:
        return float(np.mean(np.abs(y) < 1.0))
    from .params import tanh_prime
    return float(np.mean(tanh_prime(y) ** 2))


def single_site_mc_lstm(params: GatedNetParams, paths: int = 20000, horizon: int = 64,
                        seed: int = 0, burn_in: int = 200, max_sweeps: int = 20,
                        tol: float = 1e-3, damping: float = 0.5, batches: int = 20,
                        c_limit: float = 1e6) -> CorrelationSet:
    """Self-consistent single-site simulation of the LSTM.

    ``c_t = f_t c_{t-1} + i_t phi(y_t)``, ``h_t = o_t phi(c_t)`` with
    independent Gaussian gate processes of covariance ``a_k^2 C_h + v_k``.
    """
    check_params(params, Arch.LSTM)
    cfg = _mc_common(paths, horizon, burn_in, seed, max_sweeps, tol, damping, batches)
    p = params
    phi, dphi = p.phi()
    T = cfg.burn_in + cfg.horizon
    rng = _mc_rng(cfg)
    h0 = 0.5 * rng.standard_normal(cfg.paths)
    Zs = {k: rng.standard_normal((T, cfg.paths)) for k in ("f", "i", "o", "h")}

    def sweep(x):
        Ch = x.reshape(T, T)
        f, i, o = (sigmoid(_noise(_chol(p.a(k) ** 2 * Ch + p.v(k)), Zs[k], p.b(k))) for k in ("f", "i", "o"))
        Y = _noise(_chol(p.a("h") ** 2 * Ch + p.v("h")), Zs["h"], p.b("h"))
        Hprev = np.empty((T, cfg.paths))
        C = np.empty((T, cfg.paths))
        Cprev = np.empty((T, cfg.paths))
        H = np.empty((T, cfg.paths))
        h, c = h0, np.zeros(cfg.paths)
        for t in range(T):
            Hprev[t], Cprev[t] = h, c
            c = f[t] * c + i[t] * phi(Y[t])
            if not np.all(np.abs(c) <= c_limit):
                raise DivergenceError(
                    f"cell state exceeded {c_limit:g} at step {t + 1}; mean forget gate {f[t].mean():.6f}",
                    step=t + 1)
            h = o[t] * phi(c)
            C[t], H[t] = c, h
        gx = (Hprev @ Hprev.T).ravel() / cfg.paths
        return gx, float(np.mean(H[-cfg.horizon :] ** 2)), (f, i, o, Y, Hprev, C, Cprev, H)

    def causal():
        noise = {k: _CausalNoise(T, Zs[k], p.b(k)) for k in ("f", "i", "o", "h")}
        Hprev = np.empty((T, cfg.paths))
        h, c = h0, np.zeros(cfg.paths)
        for t in range(T):
            Hprev[t] = h
            ch = Hprev[: t + 1] @ h / cfg.paths
            f, i, o = (sigmoid(noise[k].draw(t, p.a(k) ** 2 * ch + p.v(k))) for k in ("f", "i", "o"))
            y = noise["h"].draw(t, p.a("h") ** 2 * ch + p.v("h"))
            c = f * c + i * phi(y)
            if not np.all(np.abs(c) <= c_limit):
                raise DivergenceError(
                    f"cell state exceeded {c_limit:g} at step {t + 1}; mean forget gate {f.mean():.6f}",
                    step=t + 1)
            h = o * phi(c)
        return (Hprev @ Hprev.T).ravel() / cfg.paths

    (f, i, o, Y, Hprev, C, Cprev, H), history = _iterate(sweep, causal(), cfg, "LSTM")

    w = slice(T - cfg.horizon, T)
    fw, iw, ow, yw, cw, cpw = f[w], i[w], o[w], Y[w], C[w], Cprev[w]
    q = p.a("o") ** 2 * (ow * (1 - ow)) ** 2 * phi(cw) ** 2
    pp = lstm_p_values(p, fw, iw, ow, yw, cw, cpw)
    lags, per_batch = _lag_stats(H, cfg.horizon, cfg.batches)
    last = {"f": f[-1], "i": i[-1], "o": o[-1], "y": Y[-1], "c": C[-1], "c_prev": Cprev[-1],
            "h_prev": Hprev[-1]}
    for k in ("f", "i", "o"):
        last[k + "prime"] = last[k] * (1 - last[k])
    return CorrelationSet(
        c_h=float(lags[0]), c_h_lag=lags,
        c_phi=float(np.mean(phi(yw) ** 2)), c_phiprime=float(np.mean(dphi(yw) ** 2)),
        kappa=float(np.mean(fw)), lstm_q=float(np.mean(q)), lstm_p=float(np.mean(pp)),
        alpha=float(1.0 - np.mean(fw)), eta=_eta_samples(yw, p.activation),
        stderr={"c_h": float(per_batch[:, 0].std(ddof=1) / np.sqrt(cfg.batches)),
                "c_h_lag": per_batch.std(axis=0, ddof=1) / np.sqrt(cfg.batches),
                "lstm_q": float(_batch_se(q.T.mean(axis=1), cfg.batches)),
                "lstm_p": float(_batch_se(pp.T.mean(axis=1), cfg.batches))},
        samples=last, lag_batches=per_batch,
        meta={"sweeps": len(history), "history": history, "paths": cfg.paths,
              "horizon": cfg.horizon, "burn_in": cfg.burn_in, "seed": cfg.seed,
              "source": "single_site_mc"},
    )


def lstm_q_values(params, o, c):
    phi, _ = params.phi()
    return params.a("o") ** 2 * (o * (1 - o)) ** 2 * phi(c) ** 2


def lstm_p_values(params, f, i, o, y, c, c_prev):
    phi, dphi = params.phi()
    fp, ip = f * (1 - f), i * (1 - i)
    inner = (params.a("f") ** 2 * c_prev ** 2 * fp ** 2 + params.a("i") ** 2 * ip ** 2 * phi(y) ** 2
             + params.a("h") ** 2 * i ** 2 * dphi(y) ** 2)
    return o ** 2 * dphi(c) ** 2 * inner


# --------------------------------------------------------------------------
# steady-state difference equations


def lagged_kernels(c_h0: float, c_hk: float, params: GatedNetParams):
    """``(kappa, C_z(k), C_phi(k))`` for lag correlation ``c_hk`` by bivariate quadrature."""
    p = params
    phi, _ = p.phi()
    vz0, vzk = p.a("z") ** 2 * c_h0 + p.v("z"), p.a("z") ** 2 * c_hk + p.v("z")
    vr0, vrk = p.a("r") ** 2 * c_h0 + p.v("r"), p.a("r") ** 2 * c_hk + p.v("r")
    kappa = gauss_expect(sigmoid, p.b("z"), vz0, breakpoints=[p.b("z")])
    cz = gauss_expect2(sigmoid, sigmoid, p.b("z"), p.b("z"), vz0, vz0, vzk)
    cr0 = gauss_expect(_sig_sq, p.b("r"), vr0, breakpoints=[p.b("r")])
    crk = gauss_expect2(sigmoid, sigmoid, p.b("r"), p.b("r"), vr0, vr0, vrk)
    vy0 = p.a("h") ** 2 * cr0 * c_h0 + p.v("h")
    vyk = p.a("h") ** 2 * crk * c_hk + p.v("h")
    cphi = gauss_expect2(phi, phi, p.b("h"), p.b("h"), vy0, vy0, vyk)
    return kappa, cz, cphi


def dmft_steady_residual(corr: CorrelationSet, params: GatedNetParams, lags=None) -> np.ndarray:
    """Absolute residuals of the steady-state difference equations.

    Entry 0 is the equal-time equation, entry k >= 1 the lag-k equation
    (which needs ``C_h(k + 1)``, so the last available lag is dropped).
    """
    check_params(params, Arch.GRU)
    if corr.c_h_lag is None or len(corr.c_h_lag) < 2:
        raise ParameterError("correlation set needs lags 0..K with K >= 1")
    C = np.asarray(corr.c_h_lag, dtype=float)
    corr.check()
    return np.abs(_signed_residual(C, params, lags))


def dmft_residual_stderr(corr: CorrelationSet, params: GatedNetParams, lags=None) -> np.ndarray:
    """Batch-means standard error of each residual (needs ``corr.lag_batches``)."""
    if corr.lag_batches is None:
        raise ParameterError("correlation set carries no per-batch lags")
    per = []
    for row in np.asarray(corr.lag_batches):
        sub = CorrelationSet(c_h=float(row[0]), c_h_lag=row)
        try:
            sub.check()
        except InvariantError:
            pass
        per.append(_signed_residual(sub.c_h_lag, params, lags))
    per = np.array(per)
    return per.std(axis=0, ddof=1) / np.sqrt(len(per))


def _signed_residual(C, params, lags):
    K = len(C) - 1
    ks = range(K) if lags is None else lags
    out = []
    for k in ks:
        if k < 0 or k >= K:
            raise ParameterError(f"lag {k} needs C_h({k + 1}); available up to {K}")
        kappa, cz, cphi = lagged_kernels(C[0], C[k], params)
        if k == 0:
            r = C[0] + cz * C[0] - 2 * kappa * C[1] - (1 - 2 * kappa + cz) * cphi
        else:
            r = C[k] - kappa * C[k - 1] - kappa * C[k + 1] + cz * C[k] - (1 - 2 * kappa + cz) * cphi
        out.append(r)
    return np.array(out)


def fp_correlation_set(sol: FixedPointSolution, params: GatedNetParams, lags: int = 8) -> CorrelationSet:
    """Time-independent correlator set for a fixed-point solution."""
    k = gru_kernels(sol.c_h, params)
    k.c_h_lag = np.full(lags, sol.c_h)
    k.nu_sq = 0.0
    return k
