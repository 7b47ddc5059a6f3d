"""End-to-end quantitative checks, one function per criterion.

Every check returns a :class:`Verdict` with a machine-readable ``details``
dict.  ``run`` executes a selection; ``--n 500`` (or an automatic fallback
when a 1000-dimensional eigensolve is slower than 60 s) widens every
tolerance by 1.5.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage
from scipy.stats import kstest

from . import empirics as em
from . import mft, phase
from . import spectral as sp
from .errors import GatedSpectraError
from .net import (GruState, LstmState, initial_state, jacobian, run_to_steady, sample_network, step)
from .params import Activation, GatedNetParams, sigmoid

SEEDS = (1, 2, 3)
GRU_REGIMES = ((1.0, 10.0), (10.0, 10.0), (1.0, 1.0), (10.0, 1.0))      # (a_z, a_r), a_h = 3
LSTM_REGIMES = ((1.0, 1.0), (1.0, 4.0), (5.0, 1.0), (5.0, 4.0))          # (a_f, a_o), a_h = 3, a_i = 1


@dataclass
class Context:
    n: int = 1000
    scale: float = 1.0
    log: object = None

    def tol(self, x):
        return x * self.scale

    def say(self, msg):
        if self.log:
            self.log(msg)


@dataclass
class Verdict:
    id: int
    key: str
    title: str
    passed: bool
    details: dict = field(default_factory=dict)
    runtime: float = 0.0
    error: str = ""

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] #{self.id:<2d} {self.key:<20s} {self.title} ({self.runtime:.1f}s)"

    def to_dict(self):
        return asdict(self)


def _f(x):
    return float(np.round(float(x), 6))


def _zero_state(net):
    h0 = np.zeros(net.n)
    st = GruState.initial(h0) if net.arch.value == "gru" else LstmState.initial(h0)
    return step(net, st)


# ---------------------------------------------------------------- 1, 2


def zero_fp_gru(ctx):
    p = GatedNetParams.gru(n=ctx.n, a_h=3.0)
    net = sample_network(p, 1)
    cloud = em.jacobian_cloud(net, _zero_state(net))
    pred = sp.gru_zero_fp(p)
    u = np.abs(cloud.values - pred.center) / pred.flat_density.radius
    rmax = float(u.max())
    ks = float(kstest(np.clip(u, 0, None), lambda x: np.clip(x, 0, 1) ** 2).statistic)
    ok = abs(rmax - 1) <= ctx.tol(0.03) and ks < ctx.tol(0.03)
    return ok, {"max_dist_over_radius": _f(rmax), "ks_r2_law": _f(ks),
                "radius_theory": pred.flat_density.radius, "center": 0.5}


def zero_fp_lstm(ctx):
    p = GatedNetParams.lstm(n=ctx.n, a_h=3.0)
    net = sample_network(p, 1)
    cloud = em.jacobian_cloud(net, _zero_state(net))
    a = np.abs(cloud.values)
    zeros = int(np.count_nonzero(a < 1e-8))
    rest = cloud.values[a >= 1e-8]
    pred = sp.lstm_zero_fp(p)
    r = float(np.abs(rest - pred.center).max())
    ok = zeros == ctx.n and abs(r / pred.flat_density.radius - 1) <= ctx.tol(0.03)
    return ok, {"zero_count": zeros, "expected_zero_count": ctx.n, "disk_radius": _f(r),
                "radius_theory": pred.flat_density.radius}


# ---------------------------------------------------------------- 3


def _perturbation_growth(p, seed=1, steps=1500, amp=1e-3):
    net = sample_network(p, seed)
    rng = np.random.default_rng(seed)
    h0 = amp * rng.standard_normal(p.n)
    st = initial_state(net, h0)
    n0 = float(np.linalg.norm(h0))
    for _ in range(steps):
        st = step(net, st)
    return float(np.linalg.norm(st.h)) / n0


def stability(ctx):
    out, ok = {}, True
    for a_h in (1.8, 1.9, 2.1, 2.2):
        expect = a_h < 2
        for arch in ("gru", "lstm"):
            p = (GatedNetParams.gru if arch == "gru" else GatedNetParams.lstm)(n=ctx.n, a_h=a_h)
            theory = (sp.gru_zero_fp(p) if arch == "gru" else sp.lstm_zero_fp(p)).stable
            g = _perturbation_growth(p)
            emp = g < 1e-2 if expect else g > 10
            ok &= bool(theory == expect and emp)
            out[f"{arch}_{a_h}"] = {"theory_stable": theory, "growth_factor": float(g), "empirical_ok": bool(emp)}
    return ok, out


# ---------------------------------------------------------------- 4


def spectral_curve(ctx):
    out, ok = {}, True
    for a_z, a_r in GRU_REGIMES:
        p = GatedNetParams.gru(n=ctx.n, a_h=3.0, a_z=a_z, a_r=a_r)
        s = em.steady_clouds(p, 1)
        m = sp.SampleMoments.from_states(s.states[-1], p)
        if a_z > 0 and a_r > 0:
            pred = sp.gru_bounding_curves(m, p)[1]
        else:
            pred = sp.gru_boundary(m, p)
        rep = em.compare(s.clouds[-1], pred)
        good = rep.inside_fraction >= 1 - ctx.tol(0.03)
        ok &= good
        out[f"az{a_z:g}_ar{a_r:g}"] = {"inside_fraction": rep.inside_fraction, "curve": pred.meta.get("curve", "exact"),
                                       "radius_empirical": _f(rep.radius_empirical),
                                       "radius_theory": _f(rep.radius_theory), "drift": _f(s.trajectory.drift)}
    return ok, out


# ---------------------------------------------------------------- 5, 6


def _gru_theory(state, p):
    return sp.gru_spectral_radius_theory(sp.SampleMoments.from_states(state, p), p)


def _lstm_theory(state, p):
    return sp.lstm_spectral_radius_theory(sp.SampleMoments.from_states(state, p), p)


def _table(tab):
    return {"rows": tab.rows(), "radii": np.round(tab.radii, 6).tolist(),
            "theory_radius": np.round(tab.theory, 6).tolist(),
            "theory_radii": np.round(tab.theory_radii, 6).tolist(), "slope": _f(tab.slope),
            "theory_slope": _f(tab.theory_slope), "flags": tab.flags}


def radius_scaling_gru(ctx):
    base = GatedNetParams.gru(n=ctx.n, a_h=3.0)
    tab = em.radius_scaling_sweep(base, "r", (10.0, 100.0, 1000.0), list(SEEDS), theory=_gru_theory)
    gaps = np.abs(tab.theory / tab.mean_radius - 1)
    ok = abs(tab.slope - 0.5) <= ctx.tol(0.1) and bool(np.all(gaps <= ctx.tol(0.05)))
    out = _table(tab)
    out["relative_gap"] = np.round(gaps, 6).tolist()
    return ok, out


def radius_scaling_lstm(ctx):
    base = GatedNetParams.lstm(n=ctx.n, a_h=3.0)
    out, ok = {}, True
    for g in ("i", "o"):
        tab = em.radius_scaling_sweep(base, g, (10.0, 100.0, 1000.0), list(SEEDS), theory=_lstm_theory)
        ok &= abs(tab.slope - 0.5) <= ctx.tol(0.1)
        out[g] = _table(tab)
    tab = em.radius_scaling_sweep(base, "f", (1.0, 3.0, 10.0, 30.0), list(SEEDS), theory=_lstm_theory)
    slope_f = em.loglog_slope(tab.values, tab.mean_radius)
    ok &= slope_f <= 0.5 + ctx.tol(0.1)
    out["f"] = _table(tab)
    out["f"]["slope_full_range"] = _f(slope_f)
    return ok, out


# ---------------------------------------------------------------- 7


def _cdf_series(make, gains, r=0.05):
    vals = []
    for a in gains:
        p = make(a)
        per = []
        for seed in SEEDS:
            s = em.steady_clouds(p, seed, collect=50, snapshots=3, spacing=10)
            per += [em.cdf_near_one(c, r) for c in s.clouds]
        vals.append(float(np.mean(per)))
    return vals


def accumulation(ctx):
    gains = (1.0, 2.0, 4.0, 8.0)
    out, ok = {}, True
    for arch, make in (("gru", lambda a: GatedNetParams.gru(n=ctx.n, a_h=3.0, a_z=a)),
                       ("lstm", lambda a: GatedNetParams.lstm(n=ctx.n, a_h=3.0, a_f=a))):
        v = _cdf_series(make, gains)
        mono = bool(np.all(np.diff(v) >= 0))
        c1, c2, r2 = sp.cdf_scaling_fit(gains, v)
        ok &= mono and r2 > 1 - ctx.tol(0.05)
        out[arch] = {"cdf_0.05": [_f(x) for x in v], "monotone_nondecreasing": mono,
                     "strictly_increasing": bool(np.all(np.diff(v) > 0)),
                     "c1": _f(c1), "c2": _f(c2), "r_squared": _f(r2)}
    return ok, out


# ---------------------------------------------------------------- 8


def binary_limits(ctx):
    out, ok = {}, True
    for arch in ("gru", "lstm"):
        if arch == "gru":
            p = GatedNetParams.gru(n=ctx.n, a_h=3.0, a_z=1e3, activation=Activation.HARD_TANH)
            mc = mft.single_site_mc_gru(p, seed=1)
            pred = sp.gru_binary_update_density(p, 0.5, mc.eta)
        else:
            p = GatedNetParams.lstm(n=ctx.n, a_h=3.0, a_f=1e3, activation=Activation.HARD_TANH)
            mc = mft.single_site_mc_lstm(p, seed=1)
            pred = sp.lstm_binary_forget_density(p, mc.eta)
        atoms, radii, q99 = [], [], []
        for seed in SEEDS:
            c = em.steady_clouds(p, seed, collect=20).clouds[-1]
            atoms.append(np.count_nonzero(np.abs(c.values - 1) < em.ATOM_RADIUS) / c.units)
            cont = np.abs(c.without_atoms(pred.atoms))
            radii.append(float(cont.max()))
            q99.append(float(np.quantile(cont, 0.99)))
        atom, rad = float(np.mean(atoms)), float(np.mean(radii))
        r_th = pred.flat_density.radius
        good = abs(atom / 0.5 - 1) <= ctx.tol(0.05) and abs(rad / r_th - 1) <= ctx.tol(0.05)
        ok &= good
        out[arch] = {"atom_at_one": [_f(x) for x in atoms], "atom_mean": _f(atom), "eta_mc": _f(mc.eta),
                     "radius_continuous": [_f(x) for x in radii], "radius_mean": _f(rad),
                     "radius_q99": [_f(x) for x in q99], "radius_theory": _f(r_th), "passed": bool(good)}
    return ok, out


# ---------------------------------------------------------------- 9


def phase_diagram(ctx):
    ah = np.linspace(1.0, 3.0, 40)
    ar = np.linspace(0.0, 12.0, 40)
    g = phase.sweep(ah, ar)
    reg = g.region_raster()
    AH = np.broadcast_to(ah[None, :], reg.shape)
    checks = {}
    checks["no_node_errors"] = not g.errors
    checks["orange_iff_ah_gt_2"] = bool(np.all((reg == 2) == (AH > 2)))
    checks["green_only_above_sqrt2"] = bool(np.all(AH[reg == 1] > phase.SQRT2))
    checks["green_absent_at_ar0"] = bool(np.all(reg[0] != 1))
    checks["all_three_regions"] = bool(set(np.unique(reg)) == {0, 1, 2})
    checks["regions_connected"] = all(ndimage.label(reg == k)[1] == 1 for k in (0, 1, 2))
    rhos = [r for pt in g.points for r in pt.rho0]
    checks["nonzero_fp_unstable"] = bool(min(rhos) > 1) if rhos else False
    lim, pts = phase.bifurcation_endpoint()
    checks["endpoint"] = abs(lim - 2 * np.sqrt(2)) <= ctx.tol(0.05)
    curve = phase.bifurcation_curve([1.5, 1.6, 1.7, 1.8, 1.9])
    checks["curve_decreasing"] = bool(np.all(np.diff([b.a_r_star for b in curve]) < 0))
    pert = {}
    eps = 1e-3
    for a_r in (0.0, 1.0, 2.0, 2.5):
        p = GatedNetParams.gru(n=2, a_h=2 + eps, a_r=a_r)
        num = [s.c_h for s in mft.gru_fp_solve(p) if s.branch != mft.Branch.ZERO]
        ana = mft.gru_fp_perturbative(p, eps)
        rel = abs(ana[0][1] / max(num) - 1) if num and ana else float("inf")
        pert[f"ar{a_r:g}"] = {"numeric": max(num) if num else None, "perturbative": ana[0][1] if ana else None,
                              "relative_gap": _f(rel)}
    checks["perturbative_within_15pct"] = all(v["relative_gap"] <= ctx.tol(0.15) for v in pert.values())
    ok = all(checks.values())
    return ok, {"checks": checks, "endpoint_limit": _f(lim),
                "endpoint_points": [(b.a_h, b.a_r_star) for b in pts],
                "curve": [(b.a_h, b.a_r_star) for b in curve], "perturbative": pert,
                "min_nonzero_rho0": _f(min(rhos)) if rhos else None}


# ---------------------------------------------------------------- 10


def pinching(ctx):
    pt = phase.classify(3.0, 1.0)
    if not pt.rho0:
        return False, {"error": "no nonzero fixed point"}
    rho0, c_h = pt.rho0[0], pt.c_h[0]
    c = sp.pinching_c(rho0, 0.0, c_h)
    azs = np.array([10.0, 15.0, 20.0, 30.0, 40.0])
    delta = np.array([sp.fp_radius(rho0 ** 2, c_h, a) - 1 for a in azs])
    slope = -np.polyfit(azs * np.sqrt(c_h), np.log(delta), 1)[0]
    inter = [sp.real_one_intercept(lambda l, a=a: sp.fp_S(l, rho0 ** 2, c_h, a)) for a in azs]
    mono = bool(np.all(np.diff(inter) < 0))
    ok = abs(slope / c - 1) <= ctx.tol(0.2) and mono and pt.marginal
    return ok, {"rho0": _f(rho0), "c_h": _f(c_h), "pinching_c": _f(c), "fitted_rate": _f(slope),
                "a_z": azs.tolist(), "radius_minus_one": delta.tolist(), "re1_intercept": inter,
                "intercept_decreasing": mono, "marginal": pt.marginal}


# ---------------------------------------------------------------- 11


def gelfand(ctx):
    out = {}
    p = GatedNetParams.gru(n=ctx.n, a_h=2.4, v_z=1e8)
    net = sample_network(p, 1)
    st = _zero_state(net)
    alpha = float(np.mean(st.z < 0.5))
    rho = 2.4 * float(sigmoid(0.0))
    ser = em.gelfand_moments_empirical(jacobian(net, st), 32)
    lim = sp.gelfand_moment_theory(p, rho, np.inf, "BinaryUpdate", alpha=alpha)
    g1 = abs(ser.moments[-1] / lim - 1)
    ok = (not ser.truncated) and alpha * rho ** 2 < 1 and g1 <= ctx.tol(0.05)
    out["binary"] = {"alpha": alpha, "rho": rho, "mu_32": _f(ser.moments[-1]), "plateau_theory": _f(lim),
                     "relative_gap": _f(g1)}
    p = GatedNetParams.gru(n=ctx.n, a_h=3.0)
    net = sample_network(p, 1)
    J = jacobian(net, _zero_state(net))
    ser = em.gelfand_moments_empirical(J, 32)
    est = float(ser.radius_estimates()[-1])
    r6 = sp.gelfand_radius_theory(p, 3.0 * float(sigmoid(0.0)))
    g2 = abs(est / r6 - 1)
    eig_r = em.eig_dense(J).radius
    ok &= (not ser.truncated) and g2 <= ctx.tol(0.05) and abs(est / eig_r - 1) <= ctx.tol(0.05)
    out["constant"] = {"mu_32_root": _f(est), "radius_closed_form": _f(r6), "relative_gap": _f(g2),
                       "eigensolver_radius": _f(eig_r)}
    return ok, out


# ---------------------------------------------------------------- 12


def _network_averages(p, seeds=(1, 2), burn_in=500, collect=200):
    ch, q, pp = [], [], []
    for seed in seeds:
        net = sample_network(p, seed)
        tr = run_to_steady(net, burn_in, collect, seed=seed)
        ch.append(tr.mean_sq.mean())
        if p.arch.value == "lstm":
            qs = [np.mean(mft.lstm_q_values(p, s.o, s.c)) for s in tr.states]
            ps = [np.mean(mft.lstm_p_values(p, s.f, s.i, s.o, s.y, s.c, s.c_prev)) for s in tr.states]
            q.append(np.mean(qs))
            pp.append(np.mean(ps))
    return float(np.mean(ch)), (float(np.mean(q)) if q else None), (float(np.mean(pp)) if pp else None)


def mft_cross_validation(ctx):
    out = {}
    ok_mc, ok_res, ok_bound = True, True, True
    for a_z, a_r in GRU_REGIMES:
        p = GatedNetParams.gru(n=ctx.n, a_h=3.0, a_z=a_z, a_r=a_r)
        mc = mft.single_site_mc_gru(p, seed=1)
        ch_net, _, _ = _network_averages(p)
        gap = abs(mc.c_h / ch_net - 1)
        res = mft.dmft_steady_residual(mc, p, lags=[0, 1, 2, 4])
        se = mft.dmft_residual_stderr(mc, p, lags=[0, 1, 2, 4])
        z = res / np.maximum(se, 1e-300)
        ok_mc &= gap <= ctx.tol(0.05)
        ok_res &= bool(np.all(z <= 3))
        ok_bound &= mc.c_h <= mc.c_phi
        out[f"gru_az{a_z:g}_ar{a_r:g}"] = {"c_h_mc": _f(mc.c_h), "c_h_network": _f(ch_net), "relative_gap": _f(gap),
                                           "residual_over_se": [_f(x) for x in z], "c_phi_mc": _f(mc.c_phi)}
    for a_f, a_o in LSTM_REGIMES:
        p = GatedNetParams.lstm(n=ctx.n, a_h=3.0, a_i=1.0, a_f=a_f, a_o=a_o)
        mc = mft.single_site_mc_lstm(p, seed=1)
        ch_net, q_net, p_net = _network_averages(p)
        gaps = [abs(mc.c_h / ch_net - 1), abs(mc.lstm_q / q_net - 1), abs(mc.lstm_p / p_net - 1)]
        ok_mc &= max(gaps) <= ctx.tol(0.05)
        out[f"lstm_af{a_f:g}_ao{a_o:g}"] = {"c_h": [_f(mc.c_h), _f(ch_net)], "q": [_f(mc.lstm_q), _f(q_net)],
                                            "p": [_f(mc.lstm_p), _f(p_net)], "relative_gaps": [_f(g) for g in gaps]}
    out["checks"] = {"mc_vs_network": ok_mc, "residuals_within_3se": ok_res, "c_h_le_c_phi": ok_bound}
    return ok_mc and ok_res and ok_bound, out


# ---------------------------------------------------------------- driver

CRITERIA = [
    (1, "zero-fp-gru", "GRU zero-fixed-point disk", zero_fp_gru, 120),
    (2, "zero-fp-lstm", "LSTM zero-fixed-point disk and exact zeros", zero_fp_lstm, 300),
    (3, "stability", "zero-fixed-point stability flips at a_h = 2", stability, None),
    (4, "spectral-curve", "steady-state support encloses the eigenvalues", spectral_curve, 900),
    (5, "radius-scaling-gru", "sqrt(a_r) radius growth and theory radius", radius_scaling_gru, None),
    (6, "radius-scaling-lstm", "sqrt(a_i), sqrt(a_o) growth; a_f slope bound", radius_scaling_lstm, None),
    (7, "accumulation", "eigenvalue accumulation at 1 and erfc scaling", accumulation, None),
    (8, "binary-limits", "binary-gate atoms and disk radius", binary_limits, None),
    (9, "phase-diagram", "fixed-point phase diagram", phase_diagram, None),
    (10, "pinching", "marginal stability and pinching rate", pinching, None),
    (11, "gelfand", "long-product moments", gelfand, None),
    (12, "mft", "single-site mean field vs network", mft_cross_validation, None),
]


def select(only=None):
    if not only:
        return list(CRITERIA)
    keys = [only] if isinstance(only, str) else list(only)
    chosen = []
    for c in CRITERIA:
        for k in keys:
            k = str(k)
            if k == str(c[0]) or c[1] == k or c[1].startswith(k):
                chosen.append(c)
                break
    if not chosen:
        raise KeyError(f"no criterion matches {keys}; known: {[c[1] for c in CRITERIA]}")
    return chosen


def eig_budget_exceeded(n=1000, limit=60.0) -> bool:
    rng = np.random.default_rng(0)
    t = time.perf_counter()
    np.linalg.eigvals(rng.standard_normal((n, n)) / np.sqrt(n))
    return time.perf_counter() - t > limit


def make_context(n=None, log=None) -> Context:
    if n is None:
        n = 500 if eig_budget_exceeded() else 1000
    return Context(n=int(n), scale=1.0 if n >= 1000 else 1.5, log=log)


def run_one(entry, ctx: Context) -> Verdict:
    cid, key, title, fn, budget = entry
    t = time.perf_counter()
    try:
        ok, details = fn(ctx)
        err = ""
    except GatedSpectraError as e:
        ok, details, err = False, {}, f"{type(e).__name__}: {e}"
    dt = time.perf_counter() - t
    if budget is not None:
        details["runtime_budget_s"] = budget
        if dt > budget:
            ok = False
    v = Verdict(cid, key, title, bool(ok), details, dt, err)
    ctx.say(v.line())
    return v


def run(only=None, n=None, log=None) -> list:
    ctx = make_context(n, log)
    return [run_one(c, ctx) for c in select(only)]
