"""Empirical Jacobian spectra and theory-vs-simulation comparisons."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from . import contour as _ct
from .errors import (ComparisonError, DivergenceError, ParameterError, ShapeError, SolverError)
from .net import jacobian, run_to_steady, sample_network
from .params import Arch, GatedNetParams

MAX_DIM = 4096
ATOM_RADIUS = 0.02
OVERFLOW = 1e150


@dataclass
class EigenCloud:
    values: np.ndarray
    n: int
    meta: dict = field(default_factory=dict)

    @property
    def units(self) -> int:
        """Hidden units: ``n`` for GRU, ``n / 2`` for the LSTM (c, h) Jacobian."""
        return self.n // 2 if self.meta.get("arch") == Arch.LSTM.value else self.n

    @property
    def radius(self) -> float:
        return float(np.abs(self.values).max())

    def conjugation_gap(self) -> float:
        v = np.sort(self.values)
        return float(np.abs(v - np.sort(np.conj(self.values))).max()) if v.size else 0.0

    def without_atoms(self, atoms, radius=ATOM_RADIUS) -> np.ndarray:
        keep = np.ones(self.values.size, dtype=bool)
        for loc, _ in atoms:
            keep &= np.abs(self.values - loc) >= radius
        return self.values[keep]


def eig_dense(m, meta=None, check=True) -> EigenCloud:
    """All eigenvalues of a real square matrix (LAPACK balancing + Hessenberg + shifted QR)."""
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"square matrix required, got shape {m.shape}")
    if np.iscomplexobj(m) or not np.all(np.isfinite(m)):
        raise ParameterError("matrix must be real and finite")
    n = m.shape[0]
    if n > MAX_DIM:
        raise ShapeError(f"dimension {n} exceeds {MAX_DIM}")
    try:
        vals = np.linalg.eigvals(m.astype(float))
    except np.linalg.LinAlgError as e:
        raise SolverError(f"eigensolver did not converge: {e}") from e
    cloud = EigenCloud(np.asarray(vals, dtype=complex), n, dict(meta or {}))
    if check:
        tr = float(np.trace(m))
        gap = abs(vals.sum() - tr)
        if gap > 1e-6 * max(n, 1) * max(1.0, np.abs(m).max()):
            raise SolverError(f"trace check failed: |sum - trace| = {gap:.3g}")
        if cloud.conjugation_gap() > 1e-8 * max(1.0, cloud.radius):
            raise SolverError("eigenvalues are not closed under conjugation")
    return cloud


def jacobian_cloud(net, state, meta=None) -> EigenCloud:
    m = dict(meta or {})
    m.setdefault("arch", net.arch.value)
    m.setdefault("seed", net.seed)
    m.setdefault("params", net.params.to_dict())
    return eig_dense(jacobian(net, state), m)


@dataclass
class SteadySample:
    net: object
    trajectory: object
    clouds: list
    states: list


def steady_clouds(params: GatedNetParams, seed: int, burn_in: int = 500, collect: int = 500,
                  snapshots: int = 1, spacing: int = 10) -> SteadySample:
    """Run one network to steady state and diagonalise the Jacobian at the last
    ``snapshots`` steps (``spacing`` apart, final step included)."""
    net = sample_network(params, seed)
    keep = 1 + (snapshots - 1) * spacing
    if keep > collect:
        raise ParameterError("collect window shorter than the requested snapshots")
    traj = run_to_steady(net, burn_in, collect, seed=seed, keep=keep)
    states = traj.states[::-1][::spacing][:snapshots][::-1]
    clouds = [jacobian_cloud(net, st, {"step": burn_in + collect - (len(states) - 1 - k) * spacing})
              for k, st in enumerate(states)]
    return SteadySample(net, traj, clouds, states)


def cdf_near_one(cloud: EigenCloud, r: float) -> float:
    """Eigenvalues within ``r`` of 1, normalised by the number of hidden units."""
    if r <= 0:
        raise ParameterError("r must be positive")
    return float(np.count_nonzero(np.abs(cloud.values - 1.0) < r) / cloud.units)


@dataclass
class ComparisonReport:
    inside_fraction: float
    radius_empirical: float
    radius_theory: float
    cdf_at_r: dict
    hausdorff_gap: float
    meta: dict = field(default_factory=dict)

    @property
    def radius_gap(self) -> float:
        return abs(self.radius_empirical - self.radius_theory) / self.radius_theory

    def to_dict(self):
        return {"inside_fraction": self.inside_fraction, "radius_empirical": self.radius_empirical,
                "radius_theory": self.radius_theory, "radius_gap": self.radius_gap,
                "cdf_at_r": {str(k): v for k, v in self.cdf_at_r.items()},
                "hausdorff_gap": self.hausdorff_gap, **self.meta}


def compare(cloud: EigenCloud, pred, radii=(0.05,), exclude_atoms=None) -> ComparisonReport:
    """Fraction of eigenvalues inside the predicted support (atoms matched within
    0.02), empirical vs predicted radius and near-1 CDFs.

    Atom clusters are removed from the empirical radius when the prediction has
    atoms (or ``exclude_atoms`` is true).
    """
    if not pred.rings:
        raise ComparisonError("prediction has an empty boundary")
    arch = cloud.meta.get("arch")
    if arch is not None and pred.kind.value.lower().startswith(("gru", "lstm")):
        if not pred.kind.value.lower().startswith(str(arch)):
            raise ComparisonError(f"{arch} cloud against a {pred.kind.value} prediction")
    vals = cloud.values
    near_atom = np.zeros(vals.size, dtype=bool)
    for loc, _ in pred.atoms:
        near_atom |= np.abs(vals - loc) < ATOM_RADIUS
    inside = near_atom.copy()
    inside[~near_atom] = pred.inside(vals[~near_atom])
    use_excl = bool(pred.atoms) if exclude_atoms is None else exclude_atoms
    cont = cloud.without_atoms(pred.atoms) if use_excl else vals
    r_emp = float(np.abs(cont).max()) if cont.size else 0.0
    try:
        pts = np.column_stack([vals.real, vals.imag])
        hull = vals[ConvexHull(pts).vertices]
        hull = np.append(hull, hull[0])
        gap = _ct.hausdorff(hull, np.concatenate([np.asarray(r) for r in pred.rings]))
    except (QhullError, ValueError):
        gap = float("nan")
    return ComparisonReport(float(inside.mean()), r_emp, float(pred.radius),
                            {float(r): cdf_near_one(cloud, r) for r in radii}, float(gap),
                            {"kind": pred.kind.value, "n": cloud.n})


@dataclass
class GelfandSeries:
    moments: list
    truncated: bool

    def radius_estimates(self):
        n = np.arange(1, len(self.moments) + 1)
        return np.asarray(self.moments) ** (1.0 / (2 * n))


def gelfand_moments_empirical(j, n_max: int, units=None) -> GelfandSeries:
    """``mu_k = ||J^k||_F^2 / N`` for ``k = 1..n_max`` by repeated multiplication."""
    j = np.asarray(j, dtype=float)
    if j.ndim != 2 or j.shape[0] != j.shape[1]:
        raise ShapeError("square matrix required")
    if not 1 <= n_max <= 64:
        raise ParameterError("n_max must lie in 1..64")
    N = j.shape[0] if units is None else units
    out = []
    P = np.eye(j.shape[0])
    for _ in range(n_max):
        P = j @ P
        mu = float(np.sum(P * P) / N)
        if not np.isfinite(mu) or mu > OVERFLOW:
            return GelfandSeries(out, True)
        out.append(mu)
    return GelfandSeries(out, False)


@dataclass
class ScalingTable:
    gate: str
    values: np.ndarray
    mean_radius: np.ndarray
    stderr: np.ndarray
    flags: list
    slope: float
    radii: np.ndarray
    theory: np.ndarray = None         # mean theory radius per gain
    theory_slope: float = float("nan")
    theory_radii: np.ndarray = None   # per (gain, seed)

    def rows(self):
        return [(float(v), float(m), float(s)) for v, m, s in zip(self.values, self.mean_radius, self.stderr)]


def loglog_slope(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = (x > 0) & (y > 0) & np.isfinite(y)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def radius_scaling_sweep(params_template: GatedNetParams, gate_label: str, values, seeds,
                         burn_in: int = 500, collect: int = 20, offset: float = 0.0,
                         theory=None) -> ScalingTable:
    """Steady-state spectral radius versus one gain, averaged over seeds.

    The slope is fitted on ``radius - offset`` over the top decade of gains.
    ``theory(state, params)``, if given, is evaluated on the final state of
    each run and averaged the same way.
    """
    values = np.asarray(values, dtype=float)
    if values.size < 2 or np.any(np.diff(values) <= 0) or values[0] <= 0:
        raise ParameterError("values must be positive and strictly ascending")
    if not seeds:
        raise ParameterError("seeds must be nonempty")
    radii = np.full((values.size, len(seeds)), np.nan)
    th = np.full_like(radii, np.nan)
    flags = []
    for a, v in enumerate(values):
        p = params_template.with_gains(**{gate_label: float(v)})
        note = None
        for b, sd in enumerate(seeds):
            try:
                s = steady_clouds(p, sd, burn_in, collect)
                radii[a, b] = s.clouds[-1].radius
                if theory is not None:
                    th[a, b] = theory(s.states[-1], p)
                if s.trajectory.nonstationary:
                    note = "nonstationary"
            except DivergenceError as e:
                note = f"diverged: {e}"
        flags.append(note)
    mean = np.nanmean(radii, axis=1)
    se = np.nanstd(radii, axis=1, ddof=1) / np.sqrt(np.sum(np.isfinite(radii), axis=1)) \
        if len(seeds) > 1 else np.zeros(values.size)
    top = values >= values.max() / 10.0
    if top.sum() < 2:
        top = np.ones(values.size, dtype=bool)
    slope = loglog_slope(values[top], mean[top] - offset)
    if theory is None:
        return ScalingTable(gate_label, values, mean, se, flags, slope, radii)
    tm = np.nanmean(th, axis=1)
    return ScalingTable(gate_label, values, mean, se, flags, slope, radii, tm,
                        loglog_slope(values[top], tm[top] - offset), th)
