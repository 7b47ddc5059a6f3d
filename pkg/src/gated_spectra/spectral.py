"""Theoretical spectra of gated-network Jacobians.

Everything here consumes a :class:`SampleMoments` (joint per-neuron state
samples) plus the network parameters, and produces boundary functions,
contours, resolvents, densities and radii.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq, curve_fit
from scipy.special import erfc, erfinv, gammaln, logsumexp

from . import contour as _ct
from .errors import (EmptySpectrumError, FitError, NoMarginalStabilityError, NotApplicableError,
                     ParameterError, PoleProximityError, ShapeError, UnsupportedRegimeError)
from .mft import (CorrelationSet, gauss_expect, gru_kernels, lstm_p_values, lstm_q_values,
                  shaping_parameter_sq)
from .params import Arch, GatedNetParams, check_params, sigmoid

POLE_TOL = 1e-12
EXCLUDE_FLAG = 1e-3


class Source(str, Enum):
    NETWORK = "NetworkSim"
    MC = "SingleSiteMC"
    ZERO_FP = "AnalyticZeroFP"


class PredictionKind(str, Enum):
    GRU_GENERAL = "GruGeneral"
    GRU_ZERO_FP = "GruZeroFP"
    GRU_BINARY_UPDATE = "GruBinaryUpdate"
    GRU_UPDATE_ONLY = "GruUpdateOnlyResolvent"
    GRU_BOUNDING = "GruBounding"
    LSTM_GENERAL = "LstmGeneral"
    LSTM_ZERO_FP = "LstmZeroFP"
    LSTM_BINARY_FORGET = "LstmBinaryForget"


_GRU_FIELDS = ("z", "zprime", "r", "rprime", "h_prev", "y")
_LSTM_FIELDS = ("f", "fprime", "i", "iprime", "o", "oprime", "c", "c_prev", "y")


# --------------------------------------------------------------------------
# samples


@dataclass
class SampleMoments:
    """Per-neuron joint samples used for every expectation over the state.

    GRU fields: z, zprime, r, rprime, h_prev, y, phi, phiprime.
    LSTM fields: f, fprime, i, iprime, o, oprime, c, c_prev, y (q and p derived).
    """

    arch: Arch
    samples: dict
    source: Source
    c_h: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.arch = Arch(self.arch)
        self.source = Source(self.source)
        need = _GRU_FIELDS if self.arch == Arch.GRU else _LSTM_FIELDS
        missing = [k for k in need if k not in self.samples]
        if missing:
            raise ParameterError(f"samples missing fields {missing}")
        s = {k: np.atleast_1d(np.asarray(v, dtype=float)).ravel() for k, v in self.samples.items()}
        sizes = {v.size for v in s.values()}
        if len(sizes) != 1:
            raise ShapeError(f"sample arrays have differing lengths {sorted(sizes)}")
        for g, gp in (("z", "zprime"), ("r", "rprime")) if self.arch == Arch.GRU else \
                (("f", "fprime"), ("i", "iprime"), ("o", "oprime")):
            if np.any((s[g] < 0) | (s[g] > 1)) or not np.all(np.isfinite(s[g])):
                raise ParameterError(f"gate samples '{g}' outside [0, 1]")
            if np.max(np.abs(s[gp] - s[g] * (1 - s[g]))) > 1e-9:
                raise ParameterError(f"'{gp}' inconsistent with '{g}'")
        self.samples = s

    def __len__(self):
        return next(iter(self.samples.values())).size

    def __getitem__(self, k):
        return self.samples[k]

    def _with_activation(self, params):
        if self.arch == Arch.GRU and "phi" not in self.samples:
            phi, dphi = params.phi()
            self.samples["phi"] = phi(self.samples["y"])
            self.samples["phiprime"] = dphi(self.samples["y"])
        return self

    @classmethod
    def from_states(cls, states, params: GatedNetParams, meta=None) -> "SampleMoments":
        """Pool one or more network states (each a GRU/LSTM state after a step)."""
        states = states if isinstance(states, (list, tuple)) else [states]
        arch = params.arch
        need = _GRU_FIELDS if arch == Arch.GRU else _LSTM_FIELDS
        d = {k: np.concatenate([np.asarray(getattr(st, k)) for st in states]) for k in need}
        c_h = float(np.mean(d["h_prev"] ** 2)) if arch == Arch.GRU else float(
            np.mean(np.concatenate([st.h_prev for st in states]) ** 2))
        return cls(arch, d, Source.NETWORK, c_h, dict(meta or {}))._with_activation(params)

    @classmethod
    def from_correlation(cls, corr: CorrelationSet, params: GatedNetParams) -> "SampleMoments":
        """Samples carried by a single-site Monte Carlo result."""
        if corr.samples is None:
            raise ParameterError("correlation set carries no samples")
        s = dict(corr.samples)
        for g in ("z", "r", "f", "i", "o"):
            if g in s and g + "prime" not in s:
                s[g + "prime"] = s[g] * (1 - s[g])
        if params.arch == Arch.LSTM:
            c_h = float(np.mean(s["h_prev"] ** 2)) if "h_prev" in s else float(corr.c_h)
            s = {k: s[k] for k in _LSTM_FIELDS}
        else:
            c_h = float(np.mean(s["h_prev"] ** 2))
            s = {k: s[k] for k in _GRU_FIELDS}
        return cls(params.arch, s, Source.MC, c_h, {"c_h_mc": corr.c_h})._with_activation(params)

    @classmethod
    def analytic_zero_fp(cls, params: GatedNetParams) -> "SampleMoments":
        """The single deterministic 'sample' at the zero fixed point."""
        _require_zero_fp(params)
        p = params
        if p.arch == Arch.GRU:
            z, r = sigmoid(p.b("z")), sigmoid(p.b("r"))
            d = dict(z=z, zprime=z * (1 - z), r=r, rprime=r * (1 - r), h_prev=0.0, y=p.b("h"))
        else:
            f, i, o = sigmoid(p.b("f")), sigmoid(p.b("i")), sigmoid(p.b("o"))
            d = dict(f=f, fprime=f * (1 - f), i=i, iprime=i * (1 - i), o=o, oprime=o * (1 - o),
                     c=0.0, c_prev=0.0, y=p.b("h"))
        return cls(p.arch, d, Source.ZERO_FP, 0.0)._with_activation(params)

    def lstm_qp(self, params):
        s = self.samples
        q = lstm_q_values(params, s["o"], s["c"])
        p = lstm_p_values(params, s["f"], s["i"], s["o"], s["y"], s["c"], s["c_prev"])
        return q, p

    def nu_sq(self) -> float:
        """Mean squared gap between previous state and activation (GRU)."""
        return float(np.mean((self.samples["h_prev"] - self.samples["phi"]) ** 2))


def _require_zero_fp(params):
    phi, _ = params.phi()
    if params.v("h") > 0 or float(phi(params.b("h"))) != 0.0:
        raise NotApplicableError("zero is not a fixed point (needs phi(b_h) = 0 and no bias spread)")
    gates = ("z", "r") if params.arch == Arch.GRU else ("f", "i", "o")
    if params.arch == Arch.VANILLA or any(params.v(g) > 0 for g in gates):
        raise NotApplicableError("zero-fixed-point disk needs deterministic gate biases")


# --------------------------------------------------------------------------
# generic pole sums


class PoleSum:
    """``sum_j w_j / |lam - x_j|^2 / N + w0 / |lam|^2 + const`` with real poles ``x_j``.

    Equal poles are merged.  ``on_pole`` is ``"raise"`` or ``"exclude"``; in
    the latter case terms closer than the pole tolerance are dropped and
    counted in ``self.excluded``.
    """

    def __init__(self, poles, weights, origin_weight=0.0, const=-1.0, on_pole="raise"):
        poles = np.asarray(poles, dtype=float).ravel()
        weights = np.broadcast_to(np.asarray(weights, dtype=float), poles.shape)
        self.count = poles.size
        keep = weights != 0
        u, inv = np.unique(poles[keep], return_inverse=True)
        self.poles = u
        self.weights = np.bincount(inv, weights=weights[keep], minlength=u.size) / self.count
        self.origin_weight = float(origin_weight)
        self.const = float(const)
        if on_pole not in ("raise", "exclude"):
            raise ParameterError("on_pole must be 'raise' or 'exclude'")
        self.on_pole = on_pole
        self.excluded = 0
        self.evaluated = 0

    @property
    def flagged(self) -> bool:
        return self.evaluated > 0 and self.excluded / self.evaluated > EXCLUDE_FLAG

    def terms(self, lam, power=1):
        """Per-point sum of ``w / |lam - x|^(2 power)`` (no const, no origin term)."""
        lam = np.asarray(lam, dtype=complex)
        flat = lam.ravel()
        out = np.empty(flat.size)
        for s in range(0, flat.size, 256):
            l = flat[s : s + 256, None]
            d = (l.real - self.poles[None, :]) ** 2 + l.imag ** 2
            close = d < POLE_TOL ** 2
            if close.any():
                if self.on_pole == "raise":
                    raise PoleProximityError(
                        f"lambda within {POLE_TOL:g} of a sampled pole")
                self.excluded += int(close.sum())
                d = np.where(close, np.inf, d)
            self.evaluated += d.size
            out[s : s + 256] = (self.weights[None, :] / d ** power).sum(axis=1)
        return out.reshape(lam.shape)

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=complex)
        val = self.terms(lam) + self.const
        if self.origin_weight:
            a2 = np.abs(lam) ** 2
            if np.any(a2 < POLE_TOL ** 2):
                raise PoleProximityError("lambda at the origin pole")
            val = val + self.origin_weight / a2
        return val if val.ndim else float(val)

    def largest_real_root(self, tol=1e-14) -> float:
        """Largest real root above every pole; the function decreases strictly there."""
        tops = list(self.poles[-1:]) + ([0.0] if self.origin_weight else [])
        if not tops:
            return 0.0
        lo = max(tops)
        f = lambda x: float(self(complex(x, 0.0)))
        step = 1.0
        while f(lo + step) > 0:
            step *= 2
        hi = lo + step
        eps = max(POLE_TOL * 2, 8 * np.spacing(abs(lo)))
        while f(lo + eps) <= 0:  # root squeezed against the top pole
            eps *= 2
            if eps >= step:
                return float(lo)
        return float(brentq(f, lo + eps, hi, xtol=tol, rtol=4 * np.finfo(float).eps))


# --------------------------------------------------------------------------
# results


@dataclass
class FlatDensity:
    value: float
    center: complex
    radius: float

    def mass(self):
        return float(self.value * np.pi * self.radius ** 2)


@dataclass
class SpectralPrediction:
    kind: PredictionKind
    rings: list
    radius: float
    atoms: list = field(default_factory=list)
    flat_density: Optional[FlatDensity] = None
    rho_shape: float = 0.0
    s_evaluator: Optional[Callable] = field(default=None, repr=False)
    center: complex = 0.0
    stable: Optional[bool] = None
    meta: dict = field(default_factory=dict)

    @property
    def boundary(self) -> np.ndarray:
        """All rings joined into one polyline (NaN separates rings)."""
        if not self.rings:
            return np.array([], dtype=complex)
        parts = []
        for r in self.rings:
            parts += [np.asarray(r), np.array([np.nan + 1j * np.nan])]
        return np.concatenate(parts[:-1])

    def inside(self, points) -> np.ndarray:
        if not self.rings:
            raise EmptySpectrumError("prediction has no boundary")
        return _ct.points_inside(points, self.rings)

    def S(self, lam):
        return self.s_evaluator(lam)

    def total_mass(self) -> float:
        m = sum(w for _, w in self.atoms)
        if self.flat_density is not None:
            m += self.flat_density.mass()
        return float(m)


def _disk_prediction(kind, center, radius, density, atoms=(), rho_shape=0.0, stable=None,
                     s_eval=None, n=2000, meta=None):
    rings = [_ct.circle(center, radius, n)] if radius > 0 else []
    flat = FlatDensity(float(density), complex(center), float(radius)) if radius > 0 else None
    return SpectralPrediction(kind, rings, float(abs(center) + radius), list(atoms), flat,
                              float(rho_shape), s_eval, complex(center), stable, dict(meta or {}))


def _contour(fn, radius, grid, box=None, center_re=0.0):
    box = 1.2 * radius if box is None else box
    if not np.isfinite(box) or box <= 0:
        raise EmptySpectrumError(f"nonpositive radius {radius}")
    return _ct.zero_contour(fn, box, grid, center_re=center_re)


# --------------------------------------------------------------------------
# GRU


def gru_shaping_sq(moments: SampleMoments, params: GatedNetParams) -> float:
    """Squared shaping parameter from quadrature kernels at the measured ``C_h``."""
    return shaping_parameter_sq(gru_kernels(moments.c_h, params), params)


def gru_s_function(moments: SampleMoments, params: GatedNetParams, rho_sq=None, nu_sq=None,
                   on_pole="raise") -> PoleSum:
    """The boundary function as a callable.

    ``nu_sq=None`` gives the exact joint-sample form; a number replaces the
    per-sample ``(h_prev - phi)^2`` by that constant (bounding curves).
    """
    check_params(params, Arch.GRU)
    if moments.arch != Arch.GRU:
        raise ParameterError("GRU moments required")
    s = moments._with_activation(params).samples
    rho_sq = gru_shaping_sq(moments, params) if rho_sq is None else float(rho_sq)
    gap = (s["h_prev"] - s["phi"]) ** 2 if nu_sq is None else float(nu_sq)
    w = rho_sq * (1 - s["z"]) ** 2 + params.a("z") ** 2 * s["zprime"] ** 2 * gap
    ps = PoleSum(s["z"], w, on_pole=on_pole)
    ps.rho_sq = rho_sq
    return ps


def gru_S(lam, moments: SampleMoments, params: GatedNetParams, rho_sq=None, on_pole="raise"):
    return gru_s_function(moments, params, rho_sq, on_pole=on_pole)(lam)


def gru_spectral_radius_theory(moments: SampleMoments, params: GatedNetParams, rho_sq=None) -> float:
    return gru_s_function(moments, params, rho_sq).largest_real_root()


def gru_boundary(moments: SampleMoments, params: GatedNetParams, grid: int = 600, box=None,
                 rho_sq=None) -> SpectralPrediction:
    S = gru_s_function(moments, params, rho_sq, on_pole="exclude")
    radius = S.largest_real_root()
    rings = _contour(S, radius, grid, box)
    return SpectralPrediction(PredictionKind.GRU_GENERAL, rings, radius, [], None,
                              float(np.sqrt(S.rho_sq)), S, 0.0, bool(radius < 1),
                              {"excluded": S.excluded, "flagged": S.flagged, "grid": grid})


def gru_bounding_curves(moments: SampleMoments, params: GatedNetParams, grid: int = 600,
                        nu_sq=None):
    """Inner (``nu = 0``) and outer (measured ``nu``) boundary curves."""
    nu_sq = moments._with_activation(params).nu_sq() if nu_sq is None else float(nu_sq)
    out = []
    for label, nu in (("inner", 0.0), ("outer", nu_sq)):
        S = gru_s_function(moments, params, nu_sq=nu, on_pole="exclude")
        radius = S.largest_real_root()
        out.append(SpectralPrediction(PredictionKind.GRU_BOUNDING, _contour(S, radius, grid), radius,
                                      [], None, float(np.sqrt(S.rho_sq)), S, 0.0, bool(radius < 1),
                                      {"curve": label, "nu_sq": nu}))
    return tuple(out)


def gru_zero_fp(params: GatedNetParams) -> SpectralPrediction:
    """Uniform disk of the zero fixed point."""
    check_params(params, Arch.GRU)
    _require_zero_fp(params)
    _, dphi = params.phi()
    z, r = float(sigmoid(params.b("z"))), float(sigmoid(params.b("r")))
    rho = r * params.a("h") * float(dphi(params.b("h")))
    R = (1 - z) * rho
    s_eval = lambda lam: R ** 2 / np.abs(np.asarray(lam) - z) ** 2 - 1.0
    dens = 1.0 / (np.pi * R ** 2) if R > 0 else np.inf
    pred = _disk_prediction(PredictionKind.GRU_ZERO_FP, z, R, dens, rho_shape=rho,
                            stable=bool(z + R < 1), s_eval=s_eval)
    if R == 0:
        pred.atoms = [(complex(z), 1.0)]
    return pred


def gru_binary_update_density(params: GatedNetParams, alpha: float, eta: float) -> SpectralPrediction:
    """Limit density for a binary update gate: atoms at 1 and 0 plus a flat disk."""
    check_params(params, Arch.GRU)
    if not (0 <= alpha <= 1 and 0 <= eta <= 1):
        raise ParameterError("alpha and eta must lie in [0, 1]")
    r = float(sigmoid(params.b("r")))
    scale = params.a("h") * r
    R = float(np.sqrt(alpha * eta) * scale)
    atoms = [(1.0 + 0j, 1 - alpha), (0j, alpha * (1 - eta))]
    atoms = [(l, float(m)) for l, m in atoms if m > 0]
    s_eval = lambda lam: R ** 2 / np.abs(np.asarray(lam)) ** 2 - 1.0
    return _disk_prediction(PredictionKind.GRU_BINARY_UPDATE, 0.0, R, 1.0 / (np.pi * scale ** 2),
                            atoms, rho_shape=scale, s_eval=s_eval,
                            meta={"alpha": alpha, "eta": eta})


def _bisect_F(rhs, n, iters=64):
    """Vectorised root of a decreasing ``rhs(F) - 1`` on ``F in [0, 1]``."""
    lo, hi = np.zeros(n), np.ones(n)
    g_hi = rhs(hi)
    while np.any(g_hi >= 1):  # safeguard; the bound rhs(F) < 1/F makes this unreachable
        hi = np.where(g_hi >= 1, 2 * hi, hi)
        g_hi = rhs(hi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        g = rhs(mid)
        lo, hi = np.where(g > 1, mid, lo), np.where(g > 1, hi, mid)
    return 0.5 * (lo + hi)


def _update_only_parts(moments, params):
    check_params(params, Arch.GRU)
    if params.a("r") != 0 or params.v("r") != 0:
        raise UnsupportedRegimeError("resolvent is only available with a deterministic reset gate")
    s = moments._with_activation(params).samples
    r = s["r"]
    st = (r ** 2 * params.a("h") ** 2 * (1 - s["z"]) ** 2 * s["phiprime"] ** 2
          + params.a("z") ** 2 * s["zprime"] ** 2 * (s["h_prev"] - s["phi"]) ** 2)
    return s["z"], st


def gru_resolvent_update_only(lam, moments: SampleMoments, params: GatedNetParams, return_f=False):
    """Normalised resolvent trace (reset gate fixed).  Vectorised over ``lam``."""
    z, st = _update_only_parts(moments, params)
    lam = np.asarray(lam, dtype=complex)
    flat = lam.ravel()
    G = np.empty(flat.size, dtype=complex)
    F = np.zeros(flat.size)
    for s0 in range(0, flat.size, 256):
        l = flat[s0 : s0 + 256, None]
        d = np.abs(l - z[None, :]) ** 2
        if np.any(d < POLE_TOL ** 2):
            raise PoleProximityError("lambda within tolerance of a sampled update gate")
        rhs = lambda Fv: (st[None, :] / (d + Fv[:, None] * st[None, :])).mean(axis=1)
        inside = rhs(np.zeros(l.shape[0])) > 1
        Fv = np.zeros(l.shape[0])
        if inside.any():
            sub = d[inside]
            Fv[inside] = _bisect_F(lambda x: (st[None, :] / (sub + x[:, None] * st[None, :])).mean(axis=1),
                                   int(inside.sum()))
        G[s0 : s0 + 256] = ((np.conj(l) - z[None, :]) / (d + Fv[:, None] * st[None, :])).mean(axis=1)
        F[s0 : s0 + 256] = Fv
    G = G.reshape(lam.shape)
    F = F.reshape(lam.shape)
    if G.ndim == 0:
        G, F = complex(G), float(F)
    return (G, F) if return_f else G


# --------------------------------------------------------------------------
# fixed points: pinching near lambda = 1


def pinching_c(rho0: float, beta: float, c_h: float) -> float:
    """Exponential pinching rate of the support near 1 at a fixed point."""
    if c_h <= 0 or rho0 <= 0:
        raise ParameterError("rho0 and c_h must be positive")
    alpha = 0.5 * erfc(beta / np.sqrt(2.0 * c_h))
    r2 = rho0 ** 2
    if r2 <= 1:
        raise NoMarginalStabilityError(f"rho0^2 = {r2:.6g} <= 1: fixed point is stable, no pinching")
    if r2 * alpha > 1 + 1e-12:
        raise NoMarginalStabilityError(f"rho0^2 = {r2:.6g} exceeds 1/alpha = {1 / alpha:.6g}")
    arg = min(2.0 / r2 - 1.0, 1.0)
    return float(beta / np.sqrt(c_h) + np.sqrt(2.0) * erfinv(arg))


def _gate_sd(a_z, c_h):
    return a_z * np.sqrt(c_h)


def fp_S(lam, rho0_sq: float, c_h: float, a_z: float, b_z: float = 0.0) -> float:
    """Boundary function at a fixed point with the update-gate expectation done by quadrature."""
    lam = complex(lam)
    sd = _gate_sd(a_z, c_h)
    # 1 - z = sigmoid(-u), lam - z = (lam - 1) + sigmoid(-u)
    e = lam - 1.0

    def g(u):
        w = sigmoid(-u)
        return w ** 2 / np.abs(e + w) ** 2

    bps = [b_z]
    if abs(e) > 0:
        bps.append(-np.log(abs(e)))
    if sd == 0:
        return float(rho0_sq * g(np.array(b_z)) - 1.0)
    return float(rho0_sq * gauss_expect(g, b_z, sd ** 2, breakpoints=bps, smooth=False) - 1.0)


def fp_radius(rho0_sq: float, c_h: float, a_z: float, b_z: float = 0.0) -> float:
    """Largest real root ``1 + delta`` of the fixed-point boundary function (``rho0 > 1``)."""
    if rho0_sq <= 1:
        raise NotApplicableError("fixed point with rho0 <= 1 has radius below 1")
    f = lambda t: fp_S(1.0 + np.exp(t), rho0_sq, c_h, a_z, b_z)
    lo, hi = -700.0, 5.0
    while f(hi) > 0:
        hi += 5
    if f(lo) <= 0:
        return 1.0
    t = brentq(f, lo, hi, xtol=1e-12)
    return float(1.0 + np.exp(t))


def real_one_intercept(s_fn: Callable, y_max: float = 10.0, tol: float = 1e-14) -> float:
    """Height ``y > 0`` where the boundary crosses ``Re lam = 1`` (0 if 1 lies outside)."""
    f = lambda y: float(s_fn(complex(1.0, y)))
    lo = 1e-300
    if f(lo) <= 0:
        return 0.0
    hi = 1e-12
    while f(hi) > 0:
        hi *= 2
        if hi > y_max:
            return float(y_max)
    lo_l = np.log(max(hi / 2, 1e-300)) if hi > 1e-12 else -690.0
    t = brentq(lambda t: f(np.exp(t)), lo_l, np.log(hi), xtol=tol)
    return float(np.exp(t))


# --------------------------------------------------------------------------
# accumulation at 1


def _erfc_model(a, c1, c2):
    return c1 * erfc(c2 / a)


def cdf_scaling_fit(az_values, cdf_values):
    """Least-squares ``c1 erfc(c2 / a)`` with ``0 <= c1 <= 1``.  Returns ``(c1, c2, R^2)``."""
    a = np.asarray(az_values, dtype=float)
    y = np.asarray(cdf_values, dtype=float)
    if a.shape != y.shape or a.size < 4:
        raise FitError("need at least 4 matching points")
    if np.any(a <= 0):
        raise FitError("gains must be positive")
    if np.ptp(y) < 1e-12:
        raise FitError("CDF values are constant")
    best = None
    for c2_0 in (0.1, 1.0, 5.0, 20.0):
        try:
            popt, _ = curve_fit(_erfc_model, a, y, p0=(min(max(y.max(), 1e-3), 1.0), c2_0),
                                bounds=([0.0, 0.0], [1.0, np.inf]), maxfev=20000)
        except RuntimeError:
            continue
        res = float(np.sum((y - _erfc_model(a, *popt)) ** 2))
        if best is None or res < best[1]:
            best = (popt, res)
    if best is None:
        raise FitError("fit did not converge")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return float(best[0][0]), float(best[0][1]), float(1.0 - best[1] / ss_tot)


def cdf_near_one_analytic(r: float, a_z, c_h: float):
    """Large-gain accumulation law ``P(|lam - 1| < r)`` (zero update bias)."""
    return 0.5 * erfc(-np.log(r) / (np.asarray(a_z, dtype=float) * np.sqrt(2.0 * c_h)))


# --------------------------------------------------------------------------
# LSTM


def lstm_s_function(moments: SampleMoments, params: GatedNetParams, on_pole="raise") -> PoleSum:
    check_params(params, Arch.LSTM)
    if moments.arch != Arch.LSTM:
        raise ParameterError("LSTM moments required")
    q, p = moments.lstm_qp(params)
    ps = PoleSum(moments["f"], p, origin_weight=float(np.mean(q)), on_pole=on_pole)
    ps.q_mean, ps.p_mean = float(np.mean(q)), float(np.mean(p))
    return ps


def lstm_S(lam, moments: SampleMoments, params: GatedNetParams, on_pole="raise"):
    return lstm_s_function(moments, params, on_pole)(lam)


def lstm_spectral_radius_theory(moments: SampleMoments, params: GatedNetParams) -> float:
    return lstm_s_function(moments, params).largest_real_root()


def lstm_boundary(moments: SampleMoments, params: GatedNetParams, grid: int = 600,
                  box=None) -> SpectralPrediction:
    S = lstm_s_function(moments, params, on_pole="exclude")
    radius = S.largest_real_root()
    rings = _contour(S, radius, grid, box)
    return SpectralPrediction(PredictionKind.LSTM_GENERAL, rings, radius, [], None,
                              float(np.sqrt(S.q_mean + S.p_mean)), S, 0.0, bool(radius < 1),
                              {"excluded": S.excluded, "flagged": S.flagged, "grid": grid})


def _lstm_parts(lam, moments, params):
    q, p = moments.lstm_qp(params)
    f = moments["f"]
    l = lam[:, None]
    a2 = np.abs(l) ** 2
    b2 = np.abs(l - f[None, :]) ** 2
    if np.any(a2 < POLE_TOL ** 2) or np.any(b2 < POLE_TOL ** 2):
        raise PoleProximityError("lambda within tolerance of 0 or a sampled forget gate")
    Q = b2 * q[None, :] + a2 * p[None, :]
    return f, q, p, l, a2, b2, Q


def _lstm_F(a2, b2, Q):
    rhs = lambda Fv, A=a2 * b2: (Q / (A + Fv[:, None] * Q)).mean(axis=1)
    F = np.zeros(Q.shape[0])
    inside = rhs(F) > 1
    if inside.any():
        sub = (a2 * b2)[inside] if np.ndim(a2 * b2) else a2 * b2
        Qi = Q[inside]
        F[inside] = _bisect_F(lambda x: (Qi / (sub + x[:, None] * Qi)).mean(axis=1), int(inside.sum()))
    return F


def lstm_resolvent(lam, moments: SampleMoments, params: GatedNetParams):
    """``(G, F)``; vectorised over ``lam``."""
    check_params(params, Arch.LSTM)
    lam = np.asarray(lam, dtype=complex)
    flat = lam.ravel()
    G = np.empty(flat.size, dtype=complex)
    Fs = np.empty(flat.size)
    for s0 in range(0, flat.size, 256):
        f, q, p, l, a2, b2, Q = _lstm_parts(flat[s0 : s0 + 256], moments, params)
        F = _lstm_F(a2, b2, Q)[:, None]
        lb = np.conj(l)
        num = a2 * (lb - f) + lb * b2 + F * ((lb - f) * q + lb * p)
        G[s0 : s0 + 256] = (num / (a2 * b2 + F * Q)).mean(axis=1)
        Fs[s0 : s0 + 256] = F[:, 0]
    G, Fs = G.reshape(lam.shape), Fs.reshape(lam.shape)
    if G.ndim == 0:
        return complex(G), float(Fs)
    return G, Fs


def lstm_interior_density(lam, moments: SampleMoments, params: GatedNetParams, strict=True):
    """Continuous eigenvalue density inside the support (vectorised).

    Uses the implicit derivative of ``F`` with respect to ``conj(lam)``.
    With ``strict`` a point where ``F = 0`` raises; otherwise it returns 0.
    """
    check_params(params, Arch.LSTM)
    lam = np.asarray(lam, dtype=complex)
    flat = lam.ravel()
    out = np.empty(flat.size)
    for s0 in range(0, flat.size, 256):
        f, q, p, l, a2, b2, Q = _lstm_parts(flat[s0 : s0 + 256], moments, params)
        F = _lstm_F(a2, b2, Q)
        if strict and np.any(F <= 0):
            raise NotApplicableError("lambda lies on or outside the support boundary (F = 0)")
        F = F[:, None]
        D = a2 * b2 + F * Q
        lb = np.conj(l)
        dF = -((l * b2 ** 2 * q + (l - f) * a2 ** 2 * p) / D ** 2).mean(axis=1, keepdims=True) \
            / ((Q ** 2) / D ** 2).mean(axis=1, keepdims=True)
        num = F * (b2 ** 2 * q + a2 ** 2 * p) - dF * (lb * b2 ** 2 * q + (lb - f) * a2 ** 2 * p) \
            + F ** 2 * f ** 2 * p * q
        mu = (num / D ** 2).mean(axis=1).real / np.pi
        out[s0 : s0 + 256] = np.where(F[:, 0] > 0, mu, 0.0)
    out = out.reshape(lam.shape)
    return float(out) if out.ndim == 0 else out


def lstm_zero_fp(params: GatedNetParams) -> SpectralPrediction:
    check_params(params, Arch.LSTM)
    _require_zero_fp(params)
    _, dphi = params.phi()
    f, i, o = (float(sigmoid(params.b(k))) for k in ("f", "i", "o"))
    g = float(dphi(params.b("h")))
    sp = o * i * params.a("h") * g  # sqrt(p); phi'(c = 0) = 1
    s_eval = lambda lam: sp ** 2 / np.abs(np.asarray(lam) - f) ** 2 - 1.0
    dens = 1.0 / (np.pi * sp ** 2) if sp > 0 else np.inf
    pred = _disk_prediction(PredictionKind.LSTM_ZERO_FP, f, sp, dens, [(0j, 1.0)], rho_shape=sp,
                            stable=bool(f + sp < 1), s_eval=s_eval)
    if sp == 0:
        pred.atoms.append((complex(f), 1.0))
    return pred


def lstm_binary_forget_density(params: GatedNetParams, eta: float) -> SpectralPrediction:
    check_params(params, Arch.LSTM)
    if not 0 <= eta <= 1:
        raise ParameterError("eta must lie in [0, 1]")
    R = float(sigmoid(params.b("o")) * sigmoid(params.b("i")) * params.a("h"))
    rad = float(np.sqrt(eta / 2) * R)
    atoms = [(0j, 1 + (1 - eta) / 2), (1.0 + 0j, 0.5)]
    s_eval = lambda lam: rad ** 2 / np.abs(np.asarray(lam)) ** 2 - 1.0
    return _disk_prediction(PredictionKind.LSTM_BINARY_FORGET, 0.0, rad, 1.0 / (np.pi * R ** 2),
                            atoms, rho_shape=R, s_eval=s_eval, meta={"eta": eta})


# --------------------------------------------------------------------------
# long-product moments


class GelfandRegime(str, Enum):
    BINARY = "BinaryUpdate"
    CONSTANT = "ConstantUpdate"


def gelfand_moment_theory(params: GatedNetParams, rho: float, n, regime, alpha=None) -> float:
    """Normalised mean squared singular value of an ``n``-step Jacobian product.

    ``BinaryUpdate`` needs ``alpha`` (fraction of open update gates; defaults
    to 1/2 when the scaled update bias is zero).  ``n = inf`` returns the
    limit when it exists.
    """
    regime = GelfandRegime(regime)
    r2 = float(rho) ** 2
    if regime == GelfandRegime.BINARY:
        if alpha is None:
            if params.b("z") != 0:
                raise ParameterError("alpha required for a biased update gate")
            alpha = 0.5
        x = alpha * r2
        if np.isinf(n):
            if x >= 1:
                return float("inf")
            return float((1 - alpha) / (1 - x))
        n = int(n)
        if n < 0:
            raise ParameterError("n must be >= 0")
        s = n + 1 if x == 1 else (1 - x ** (n + 1)) / (1 - x)
        return float((1 - alpha) * s)
    if np.isinf(n):
        raise ParameterError("constant-gate moments have no finite limit in general")
    n = int(n)
    if n < 0:
        raise ParameterError("n must be >= 0")
    s = float(sigmoid(params.b("z")))
    if n == 0:
        return 1.0
    k = np.arange(n + 1)
    lb = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    if r2 == 0:
        return float(s ** (2 * n))
    terms = 2 * lb + 2 * (n - k) * np.log(s) + k * (2 * np.log1p(-s) + np.log(r2))
    return float(np.exp(logsumexp(terms)))


def gelfand_radius_theory(params: GatedNetParams, rho: float) -> float:
    s = float(sigmoid(params.b("z")))
    return s + (1 - s) * float(rho)
