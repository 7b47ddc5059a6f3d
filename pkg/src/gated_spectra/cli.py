"""Command-line front end: ``gated-spectra <command> [options]``.

Exit codes: 0 success, 1 acceptance failure, 2 usage error, 3 numerical error.
Option precedence: explicit flags > ``--config`` JSON file > built-in defaults.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import acceptance, io, mft, phase
from . import empirics as em
from . import spectral as sp
from .errors import GatedSpectraError, ParameterError
from .net import GruState, jacobian, sample_network, step
from .params import Activation, GatedNetParams, sigmoid

GRU_FLAGS = {"az": "a_z", "ar": "a_r", "bz": "b_z", "br": "b_r", "vz": "v_z", "vr": "v_r"}
LSTM_FLAGS = {"af": "a_f", "ai": "a_i", "ao": "a_o", "bf": "b_f", "bi": "b_i", "bo": "b_o",
              "vf": "v_f", "vi": "v_i", "vo": "v_o"}
SHARED_FLAGS = {"ah": "a_h", "bh": "b_h", "vh": "v_h"}

DEFAULTS = {
    "n": 1000, "ah": 3.0, "bh": 0.0, "vh": 0.0, "activation": "tanh", "seed": [1],
    "out": "out", "format": "csv", "threads": 1, "grid": 600,
    "az": 1.0, "ar": 10.0, "bz": 0.0, "br": 0.0, "vz": 0.0, "vr": 0.0,
    "af": 1.0, "ai": 1.0, "ao": 4.0, "bf": 0.0, "bi": 0.0, "bo": 0.0, "vf": 0.0, "vi": 0.0, "vo": 0.0,
    "burn_in": 500, "collect": 20,
    # phase-diagram
    "phase_grid": "40x40", "ah_range": [1.0, 3.0], "ar_range": [0.0, 12.0], "beta": 0.0,
    # sweeps
    "arch": "gru", "gate": None, "values": None, "radius": 0.05,
    # gelfand
    "moments": 32,
    # acceptance
    "only": None, "acc_n": None,
}
COMMAND_DEFAULTS = {
    "fixed-points": {"az": 0.0, "ar": 0.0},
    "gelfand": {"az": 0.0, "ar": 0.0},
    "phase-diagram": {"grid": 200},
}

CSV_DOCS = {
    "spectrum": "cloud CSV: re,im | boundary CSV: re,im,value (value = ring index) | report JSON",
    "lstm-spectrum": "cloud CSV: re,im | boundary CSV: re,im,value (value = ring index) | report JSON",
    "phase-diagram": "raster CSV: a_h,a_r,region,n_fp,marginal | curve CSV: a_h,a_r_star",
    "radius-scaling": "CSV: gain,seed,radius,theory_radius plus a summary JSON with slopes",
    "cdf-accumulation": "CSV: gain,seed,cdf plus a fit JSON (c1, c2, r_squared)",
    "fixed-points": "CSV: branch,c_h,c_y,rho0,stable,marginal,pinching_c",
    "gelfand": "CSV: k,moment,root_estimate,theory_binary,theory_constant",
    "acceptance": "JSON verdict per criterion plus summary.json",
}


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ parsing


def _add_common(p, flags):
    g = p.add_argument_group("network")
    g.add_argument("--n", type=int, help="network width (default 1000)")
    g.add_argument("--activation", choices=[a.value for a in Activation])
    for f in flags:
        g.add_argument(f"--{f}", type=float)
    o = p.add_argument_group("run")
    o.add_argument("--seed", type=int, nargs="+", help="one or more seeds (default 1)")
    o.add_argument("--out", help="output directory (default ./out)")
    o.add_argument("--format", choices=["csv", "json", "svg"],
                   help="csv writes data files; json embeds data in the report; svg adds a figure")
    o.add_argument("--threads", type=int, help="worker cap (env GATED_SPECTRA_THREADS)")
    o.add_argument("--config", help="JSON file of option values; flags override it")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gated-spectra", description=__doc__.splitlines()[0],
                                 argument_default=argparse.SUPPRESS)
    sub = ap.add_subparsers(dest="command", required=True)
    gru = list(SHARED_FLAGS) + list(GRU_FLAGS)
    lstm = list(SHARED_FLAGS) + list(LSTM_FLAGS)

    def cmd(name, help_, flags):
        p = sub.add_parser(name, help=help_, description=f"{help_}. Output: {CSV_DOCS[name]}.",
                           argument_default=argparse.SUPPRESS)
        _add_common(p, flags)
        return p

    p = cmd("spectrum", "GRU steady-state Jacobian spectrum against its predicted support", gru)
    p.add_argument("--grid", type=int)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p = cmd("lstm-spectrum", "LSTM steady-state Jacobian spectrum against its predicted support", lstm)
    p.add_argument("--grid", type=int)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p = cmd("phase-diagram", "fixed-point regions in the (a_h, a_r) plane", ["bh", "bz", "br"])
    p.add_argument("--phase-grid", dest="phase_grid", help="nodes as AHxAR, e.g. 40x40")
    p.add_argument("--ah-range", dest="ah_range", type=float, nargs=2)
    p.add_argument("--ar-range", dest="ar_range", type=float, nargs=2)
    p.add_argument("--beta", type=float, help="update-gate bias for the marginal overlay")
    p.add_argument("--grid", type=int, help="mean-field root-scan resolution")
    p = cmd("radius-scaling", "spectral radius versus one gate gain", sorted(set(gru + lstm)))
    p.add_argument("--arch", choices=["gru", "lstm"])
    p.add_argument("--gate", help="gain to sweep (r, z for GRU; f, i, o for LSTM)")
    p.add_argument("--values", type=float, nargs="+")
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p = cmd("cdf-accumulation", "eigenvalue mass near 1 versus one gate gain", sorted(set(gru + lstm)))
    p.add_argument("--arch", choices=["gru", "lstm"])
    p.add_argument("--gate")
    p.add_argument("--values", type=float, nargs="+")
    p.add_argument("--radius", type=float)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p = cmd("fixed-points", "mean-field fixed points and marginal stability", gru)
    p.add_argument("--beta", type=float)
    p = cmd("gelfand", "long-product moments of the zero-fixed-point Jacobian", gru)
    p.add_argument("--moments", type=int, help="largest product length (<= 64)")
    p = cmd("acceptance", "run the quantitative acceptance checks", [])
    p.add_argument("--only", nargs="+", help="criterion ids or key prefixes (e.g. zero-fp)")
    p.add_argument("--acc-n", "--size", dest="acc_n", type=int, help="network width (500 widens tolerances)")
    return ap


def resolve(ns: argparse.Namespace) -> dict:
    """Merge defaults, the config file and explicit flags (in that order)."""
    given = vars(ns).copy()
    command = given.pop("command")
    cfg = {}
    path = given.pop("config", None)
    if path:
        try:
            with open(path) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config {path}: {e}")
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    out = dict(DEFAULTS)
    out.update(COMMAND_DEFAULTS.get(command, {}))
    if "threads" not in given and os.environ.get("GATED_SPECTRA_THREADS"):
        out["threads"] = int(os.environ["GATED_SPECTRA_THREADS"])
    unknown = set(cfg) - set(DEFAULTS)
    if unknown:
        raise UsageError(f"unknown config keys {sorted(unknown)}")
    out.update(cfg)
    out.update(given)
    out["command"] = command
    if isinstance(out["seed"], int):
        out["seed"] = [out["seed"]]
    if not out["seed"]:
        raise UsageError("at least one seed is required")
    return out


def _foreign(cfg, command, flags):
    """Config-file keys that belong to the other architecture."""
    if command in ("spectrum", "fixed-points", "gelfand"):
        return [k for k in flags if k in LSTM_FLAGS]
    if command == "lstm-spectrum":
        return [k for k in flags if k in GRU_FLAGS]
    return []


def make_params(cfg, arch) -> GatedNetParams:
    act = Activation(cfg["activation"])
    if arch == "gru":
        kw = {v: cfg[k] for k, v in {**SHARED_FLAGS, **GRU_FLAGS}.items()}
        return GatedNetParams.gru(n=cfg["n"], activation=act, **kw)
    kw = {v: cfg[k] for k, v in {**SHARED_FLAGS, **LSTM_FLAGS}.items()}
    return GatedNetParams.lstm(n=cfg["n"], activation=act, **kw)


# ------------------------------------------------------------------ commands


def _path(cfg, name):
    return os.path.join(cfg["out"], name)


def _emit_figure(cfg, name, cloud=None, rings=(), extra=()):
    if cfg["format"] != "svg":
        return None
    pts = [np.asarray(cloud)] if cloud is not None else []
    pts += [np.asarray(r) for r in rings] + [np.asarray(r) for r in extra]
    allp = np.concatenate(pts) if pts else np.array([0j])
    span = max(float(np.max(np.abs(allp.real - allp.real.mean()))), float(np.max(np.abs(allp.imag))), 1e-3) * 1.1
    cx = float(allp.real.mean())
    fig = io.Svg((cx - span, cx + span), (-span, span))
    if cloud is not None:
        fig.scatter(cloud)
    for r in rings:
        fig.polyline(np.append(r, r[:1]))
    for r in extra:
        fig.polyline(np.append(r, r[:1]), color="blue", dash="4,3")
    return fig.save(_path(cfg, name + ".svg"))


def _spectrum(cfg, arch):
    p = make_params(cfg, arch)
    files = []
    for seed in cfg["seed"]:
        tag = f"{p.tag()}_{seed}"
        s = em.steady_clouds(p, seed, burn_in=cfg["burn_in"], collect=cfg["collect"])
        cloud = s.clouds[-1]
        note = ""
        zero_fp = None
        try:
            zero_fp = sp.gru_zero_fp(p) if arch == "gru" else sp.lstm_zero_fp(p)
        except GatedSpectraError:
            pass
        collapsed = float(s.trajectory.mean_sq[-1]) < 1e-20
        inner = outer = None
        if collapsed and zero_fp is not None and zero_fp.stable:
            pred = zero_fp
            note = "activity decays to the stable zero fixed point; support is its disk"
        else:
            m = sp.SampleMoments.from_states(s.states[-1], p)
            if arch == "gru":
                pred = sp.gru_boundary(m, p, cfg["grid"])
                if p.a("z") > 0 and p.a("r") > 0:
                    inner, outer = sp.gru_bounding_curves(m, p, cfg["grid"])
            else:
                pred = sp.lstm_boundary(m, p, cfg["grid"])
        rep = em.compare(cloud, outer if outer is not None else pred)
        report = {"params": p.to_dict(), "seed": seed, "note": note, **rep.to_dict(),
                  "radius_theory_exact": pred.radius, "stable_zero_fp": bool(zero_fp.stable) if zero_fp else None,
                  "prediction": pred.kind.value, "drift": s.trajectory.drift,
                  "nonstationary": s.trajectory.nonstationary}
        if pred.flat_density is not None:
            report["disk_radius"] = pred.flat_density.radius
            report["disk_center"] = pred.flat_density.center
        if cfg["format"] == "json":
            report["cloud"] = io.complex_rows(cloud.values)
            report["boundary"] = [io.complex_rows(r) for r in pred.rings]
        else:
            files.append(io.write_points(_path(cfg, f"{tag}_cloud.csv"), cloud.values))
            files.append(io.write_rings(_path(cfg, f"{tag}_boundary.csv"), pred.rings))
            if outer is not None:
                files.append(io.write_rings(_path(cfg, f"{tag}_outer.csv"), outer.rings))
                files.append(io.write_rings(_path(cfg, f"{tag}_inner.csv"), inner.rings))
        files.append(io.write_json(_path(cfg, f"{tag}_report.json"), report))
        fig = _emit_figure(cfg, f"{tag}_overlay", cloud.values, pred.rings,
                           outer.rings if outer is not None else ())
        if fig:
            files.append(fig)
        print(f"{tag}: inside_fraction={rep.inside_fraction:.4f} radius={rep.radius_empirical:.4f} "
              f"theory={pred.radius:.4f}" + (f" [{note}]" if note else ""))
    return files


def cmd_spectrum(cfg):
    return _spectrum(cfg, "gru")


def cmd_lstm_spectrum(cfg):
    return _spectrum(cfg, "lstm")


def _parse_grid(text):
    try:
        a, b = (int(x) for x in str(text).lower().split("x"))
    except ValueError:
        raise UsageError(f"--phase-grid must look like 40x40, got {text!r}")
    if a < 2 or b < 2:
        raise UsageError("--phase-grid needs at least 2 nodes per axis")
    return a, b


def cmd_phase_diagram(cfg):
    na, nr = _parse_grid(cfg["phase_grid"])
    ah = np.linspace(*cfg["ah_range"], na)
    ar = np.linspace(*cfg["ar_range"], nr)
    rest = {"b_h": cfg["bh"], "b_z": cfg["bz"], "b_r": cfg["br"]}
    g = phase.sweep(ah, ar, rest, beta=cfg["beta"], grid=cfg["grid"], threads=cfg["threads"])
    rows = [(pt.a_h, pt.a_r, pt.region.value, pt.n_fixed_points, pt.marginal) for pt in g.points]
    lo, hi = phase.SQRT2 + 0.02, 1.98
    inside = ah[(ah > lo) & (ah < hi)]
    curve_ah = inside if inside.size else np.array([])
    curve = phase.bifurcation_curve(curve_ah, rest) if curve_ah.size else []
    crow = [(b.a_h, b.a_r_star) for b in curve]
    files = []
    stem = f"phase_{na}x{nr}_beta{cfg['beta']:g}"
    if cfg["format"] == "json":
        files.append(io.write_json(_path(cfg, stem + ".json"), {"raster": rows, "curve": crow, "errors": {
            str(k): v for k, v in g.errors.items()}}))
    else:
        files.append(io.write_csv(_path(cfg, stem + "_raster.csv"), ["a_h", "a_r", "region", "n_fp", "marginal"], rows))
        files.append(io.write_csv(_path(cfg, stem + "_curve.csv"), ["a_h", "a_r_star"], crow))
    if cfg["format"] == "svg":
        fig = io.Svg((ah[0], ah[-1]), (ar[0], ar[-1]))
        fig.raster(ah, ar, g.region_raster(), {0: "#9ecae1", 1: "#a1d99b", 2: "#fdae6b"})
        mr = g.marginal_raster()
        for i, y in enumerate(ar):
            for j, x in enumerate(ah):
                if mr[i, j]:
                    fig.scatter([x + 1j * y], r=1.0)
        finite = [(a, b) for a, b in crow if np.isfinite(b) and b <= ar[-1]]
        if len(finite) > 1:
            fig.polyline(np.array([a + 1j * b for a, b in finite]), color="black", dash="4,3")
        files.append(fig.save(_path(cfg, stem + ".svg")))
    counts = {r.value: sum(pt.region == r for pt in g.points) for r in phase.Region}
    print(f"{stem}: {counts}, marginal nodes={int(g.marginal_raster().sum())}, errors={len(g.errors)}")
    return files


GATES = {"gru": ("z", "r"), "lstm": ("f", "i", "o")}


def _sweep_setup(cfg, default_values):
    arch = cfg["arch"]
    gate = cfg["gate"] or ("r" if arch == "gru" else "i")
    if gate not in GATES[arch]:
        raise UsageError(f"gate {gate!r} is not a gate of the {arch.upper()} (choose from {GATES[arch]})")
    vals = cfg["values"] or default_values
    return make_params(cfg, arch), gate, [float(v) for v in vals]


def cmd_radius_scaling(cfg):
    p, gate, vals = _sweep_setup(cfg, [10.0, 100.0, 1000.0])
    if cfg["arch"] == "gru":
        p = p.with_gains(z=0.0)
        theory = lambda st, q: sp.gru_spectral_radius_theory(sp.SampleMoments.from_states(st, q), q)
    else:
        theory = lambda st, q: sp.lstm_spectral_radius_theory(sp.SampleMoments.from_states(st, q), q)
    tab = em.radius_scaling_sweep(p, gate, vals, cfg["seed"], burn_in=cfg["burn_in"],
                                  collect=cfg["collect"], theory=theory)
    rows = [(v, s, tab.radii[a, b], tab.theory_radii[a, b])
            for a, v in enumerate(vals) for b, s in enumerate(cfg["seed"])]
    stem = f"radius_{p.arch.value}_{gate}"
    summary = {"gate": gate, "values": vals, "mean_radius": tab.mean_radius, "stderr": tab.stderr,
               "slope_top_decade": tab.slope, "theory_mean": tab.theory, "theory_slope": tab.theory_slope,
               "flags": tab.flags}
    files = []
    if cfg["format"] != "json":
        files.append(io.write_csv(_path(cfg, stem + ".csv"), ["gain", "seed", "radius", "theory_radius"], rows))
    else:
        summary["rows"] = rows
    files.append(io.write_json(_path(cfg, stem + "_summary.json"), summary))
    print(f"{stem}: slope={tab.slope:.3f} theory_slope={tab.theory_slope:.3f}")
    return files


def cmd_cdf_accumulation(cfg):
    p, gate, vals = _sweep_setup(cfg, [1.0, 2.0, 4.0, 8.0])
    if cfg["arch"] == "gru" and cfg["gate"] is None:
        gate = "z"
    rows, means = [], []
    for v in vals:
        q = p.with_gains(**{gate: v})
        per = []
        for s in cfg["seed"]:
            c = em.steady_clouds(q, s, burn_in=cfg["burn_in"], collect=cfg["collect"]).clouds[-1]
            per.append(em.cdf_near_one(c, cfg["radius"]))
            rows.append((v, s, per[-1]))
        means.append(float(np.mean(per)))
    fit = {"gains": vals, "mean_cdf": means, "radius": cfg["radius"]}
    try:
        c1, c2, r2 = sp.cdf_scaling_fit(vals, means)
        fit.update(c1=c1, c2=c2, r_squared=r2)
    except GatedSpectraError as e:
        fit["fit_error"] = str(e)
    stem = f"cdf_{p.arch.value}_{gate}"
    files = []
    if cfg["format"] != "json":
        files.append(io.write_csv(_path(cfg, stem + ".csv"), ["gain", "seed", "cdf"], rows))
    else:
        fit["rows"] = rows
    files.append(io.write_json(_path(cfg, stem + "_fit.json"), fit))
    print(f"{stem}: " + ", ".join(f"{v:g}:{m:.4f}" for v, m in zip(vals, means)))
    return files


def cmd_fixed_points(cfg):
    p = make_params(cfg, "gru")
    sols = mft.gru_fp_solve(p)
    rows = []
    for s in sols:
        marg, c = "", ""
        if s.branch != mft.Branch.ZERO:
            marg = phase.marginal_condition(s.rho0, cfg["beta"], s.c_h)
            try:
                c = sp.pinching_c(s.rho0, cfg["beta"], s.c_h)
            except GatedSpectraError:
                c = ""
        rows.append((s.branch.value, s.c_h, s.c_y, s.rho0, s.stable, marg, c))
    stem = f"fixed_points_{p.tag()}"
    header = ["branch", "c_h", "c_y", "rho0", "stable", "marginal", "pinching_c"]
    if cfg["format"] == "json":
        f = io.write_json(_path(cfg, stem + ".json"), [dict(zip(header, r)) for r in rows])
    else:
        f = io.write_csv(_path(cfg, stem + ".csv"), header, rows)
    for r in rows:
        print(f"{r[0]}: C_h={r[1]:.6g} rho0={r[3]:.6g}")
    return [f]


def cmd_gelfand(cfg):
    p = make_params(cfg, "gru")
    files = []
    k = int(cfg["moments"])
    rho = p.a("h") * float(sigmoid(p.b("r")))
    for seed in cfg["seed"]:
        net = sample_network(p, seed)
        st = step(net, GruState.initial(np.zeros(p.n)))
        ser = em.gelfand_moments_empirical(jacobian(net, st), k)
        est = ser.radius_estimates()
        alpha = float(np.mean(st.z < 0.5))
        rows = []
        for j, (m, e) in enumerate(zip(ser.moments, est), start=1):
            try:
                tb = sp.gelfand_moment_theory(p, rho, j, "BinaryUpdate", alpha=alpha)
            except GatedSpectraError:
                tb = float("nan")
            try:
                tc = sp.gelfand_moment_theory(p, rho, j, "ConstantUpdate")
            except GatedSpectraError:
                tc = float("nan")
            rows.append((j, m, e, tb, tc))
        stem = f"gelfand_{p.tag()}_{seed}"
        header = ["k", "moment", "root_estimate", "theory_binary", "theory_constant"]
        if cfg["format"] == "json":
            files.append(io.write_json(_path(cfg, stem + ".json"), {"rows": rows, "truncated": ser.truncated}))
        else:
            files.append(io.write_csv(_path(cfg, stem + ".csv"), header, rows))
        print(f"{stem}: mu_{k}={rows[-1][1]:.6g} root={rows[-1][2]:.6g} truncated={ser.truncated}")
    return files


def cmd_acceptance(cfg):
    try:
        chosen = acceptance.select(cfg["only"])
    except KeyError as e:
        raise UsageError(str(e.args[0]))
    ctx = acceptance.make_context(cfg["acc_n"], log=print)
    verdicts = [acceptance.run_one(c, ctx) for c in chosen]
    files = [io.write_json(_path(cfg, f"criterion_{v.id:02d}_{v.key}.json"), v.to_dict()) for v in verdicts]
    summary = {"n": ctx.n, "tolerance_scale": ctx.scale,
               "passed": [v.id for v in verdicts if v.passed], "failed": [v.id for v in verdicts if not v.passed]}
    files.append(io.write_json(_path(cfg, "summary.json"), summary))
    print(f"{len(summary['passed'])}/{len(verdicts)} criteria passed")
    return files, (1 if summary["failed"] else 0)


COMMANDS = {
    "spectrum": cmd_spectrum, "lstm-spectrum": cmd_lstm_spectrum, "phase-diagram": cmd_phase_diagram,
    "radius-scaling": cmd_radius_scaling, "cdf-accumulation": cmd_cdf_accumulation,
    "fixed-points": cmd_fixed_points, "gelfand": cmd_gelfand, "acceptance": cmd_acceptance,
}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)  # argparse exits with 2 on unknown flags
    try:
        cfg = resolve(ns)
        bad = _foreign(cfg, cfg["command"], vars(ns)) + _foreign(cfg, cfg["command"], _config_keys(ns))
        if bad:
            raise UsageError(f"options {sorted(set(bad))} do not apply to {cfg['command']}")
        if cfg["threads"] < 1:
            raise UsageError("--threads must be >= 1")
        os.makedirs(cfg["out"], exist_ok=True)
        if not os.access(cfg["out"], os.W_OK):
            raise UsageError(f"output directory {cfg['out']} is not writable")
        res = COMMANDS[cfg["command"]](cfg)
    except (UsageError, ParameterError) as e:
        print(f"gated-spectra: error: {e}", file=sys.stderr)
        return 2
    except GatedSpectraError as e:
        print(f"gated-spectra: numerical error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3
    if isinstance(res, tuple):
        return res[1]
    return 0


def _config_keys(ns):
    path = getattr(ns, "config", None)
    if not path:
        return []
    try:
        with open(path) as fh:
            return list(json.load(fh))
    except (OSError, json.JSONDecodeError, TypeError):
        return []


if __name__ == "__main__":
    sys.exit(main())
