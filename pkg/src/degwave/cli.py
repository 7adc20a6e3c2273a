"""Command-line orchestration: config files, pipelines, artifact emission.

Config files are plain ``key = value`` lines with ``#`` comments; unknown
keys are errors.  Every command writes its artifacts under --out with fixed
filenames plus a manifest.json listing each emitted file with its sha256, so
reruns with the same inputs are byte-identical and diffable.

Exit codes: 0 success, 2 configuration/input violation, 3 integration
failure, 4 no usable scaling window.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import attractor as at
from . import diagnostics as dg
from . import dimension as dm
from . import dynamics as dyn
from .errors import ConfigError, InsufficientWindowError, IntegrationError
from .model import ModalState, ProblemConfig, build_basis

_CONFIG_TYPES = {
    "p": float, "dim": int, "n_modes": int, "n_colloc": int,
    "f1": float, "c3": float, "c5": float, "strict_growth": bool,
    "tol_abs": float, "tol_rel": float, "seed": int,
}


class _ScalingWindowError(RuntimeError):
    pass


def parse_config_text(text: str) -> dict:
    out = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _CONFIG_TYPES:
            raise ConfigError(f"line {ln}: unknown key {key!r}")
        typ = _CONFIG_TYPES[key]
        try:
            if typ is bool:
                if val.lower() in ("true", "1", "yes"):
                    out[key] = True
                elif val.lower() in ("false", "0", "no"):
                    out[key] = False
                else:
                    raise ValueError(val)
            else:
                out[key] = typ(val)
        except ValueError:
            raise ConfigError(f"line {ln}: cannot parse {key} = {val!r}") from None
    return out


def load_config(path, seed=None, modes=None) -> ProblemConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    kw = parse_config_text(p.read_text())
    if "p" not in kw:
        raise ConfigError("config must set p")
    if modes is not None:
        kw["n_modes"] = int(modes)
        kw.pop("n_colloc", None)
    if seed is not None:
        kw["seed"] = int(seed)
    return ProblemConfig(**kw)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


class Manifest:
    """Stage ledger for one command invocation."""

    def __init__(self, command: str, config_path, out_dir: Path):
        self.doc = {"command": command, "config": str(config_path),
                    "out": str(out_dir), "stages": [], "artifacts": {}}
        self.out_dir = out_dir

    def stage(self, name: str, status: str = "ok") -> None:
        self.doc["stages"].append({"name": name, "status": status})

    def write(self) -> None:
        for f in sorted(self.out_dir.iterdir()):
            if f.name != "manifest.json" and f.is_file():
                self.doc["artifacts"][f.name] = _sha256(f)
        with open(self.out_dir / "manifest.json", "w") as fh:
            json.dump(self.doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _json_dump(obj, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _initial_state(spec: str, target_norm: float, config, basis) -> ModalState:
    if spec == "zero":
        return ModalState(np.zeros(basis.size), np.zeros(basis.size))
    if spec == "random":
        rng = np.random.default_rng(config.seed)
        return at.random_low_mode_state(basis, rng, target_norm)
    if spec.startswith("mode:"):
        k = int(spec.split(":", 1)[1])
        if not (1 <= k <= basis.size):
            raise ConfigError(f"mode index out of range: {k}")
        return at.eigen_direction_state(basis, k - 1, target_norm)
    raise ConfigError(f"unknown initial spec {spec!r}")


def _fit_dict(fit: dg.DecayFit) -> dict:
    return {"exponent": fit.exponent, "amplitude": fit.amplitude,
            "offset_k": fit.offset_k, "residual": fit.residual,
            "window": list(fit.window), "p": fit.p}


def _fit_from_dict(d: dict) -> dg.DecayFit:
    return dg.DecayFit(exponent=d["exponent"], amplitude=d["amplitude"],
                       offset_k=d["offset_k"], residual=d["residual"],
                       window=tuple(d["window"]), p=d["p"])


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    config = load_config(args.config, args.seed, args.modes)
    basis = build_basis(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest("simulate", args.config, out)
    state = _initial_state(args.initial, args.phase_norm, config, basis)
    te = np.linspace(0.0, args.T, args.samples)
    traj = dyn.integrate(state, args.T, config, basis=basis, t_eval=te)
    man.stage("integrate")
    dg.write_run_csv(out / "trajectory.csv", traj)
    rep = dg.energy_report(traj)
    res, t_worst = dg.energy_equality_residual(traj)
    _json_dump({
        "p": config.p, "n_modes": config.n_modes, "T": args.T,
        "E0": float(rep.E[0]), "residual_max": res, "t_worst": t_worst,
        "n_accepted": traj.stats.n_accepted, "n_rejected": traj.stats.n_rejected,
        "n_rhs": traj.stats.n_rhs,
        "tol_abs": config.tol_abs, "tol_rel": config.tol_rel,
    }, out / "energy.json")
    man.stage("energy-report")
    man.write()
    return 0


def run_decay_ensemble(config, basis, radius: float, n_runs: int, T: float,
                       t_lo: float, t_hi: float, n_eval: int = 400,
                       jobs: int = 1):
    """Small-data ensemble plus pooled two-sided fits; returns
    (report, per-run free exponents)."""
    te = np.unique(np.concatenate([[0.0], np.geomspace(min(1e-2, T / 100), T,
                                                       n_eval)]))
    rng = np.random.default_rng(config.seed)
    states = [at.random_low_mode_state(basis, rng, radius, n_low=min(4, basis.size))
              for _ in range(n_runs)]
    trajs = at._run_many(states, T, config, basis, te, jobs)
    i0 = radius ** 2
    all_t, all_v, free_exps = [], [], []
    for traj in trajs:
        pn = traj.phase_norms()
        rep = dg.fit_two_sided_decay(traj.times, pn, config.p, i0, t_lo, t_hi)
        free_exps.append(rep.free.exponent)
        m = (traj.times >= t_lo) & (traj.times <= t_hi)
        all_t.append(traj.times[m])
        all_v.append(pn[m])
    pooled = dg.fit_two_sided_decay(np.concatenate(all_t), np.concatenate(all_v),
                                    config.p, i0, t_lo, t_hi)
    return pooled, np.array(free_exps)


def cmd_decay(args) -> int:
    config = load_config(args.config, args.seed, args.modes)
    basis = build_basis(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest("decay", args.config, out)
    if args.radius is not None:
        radius = args.radius
    else:
        probe = at.probe_small_data_radius(config, basis)
        radius = 0.1 * probe.radius
        man.stage("probe-small-data-radius")
    pooled, free_exps = run_decay_ensemble(config, basis, radius, args.runs,
                                           args.T, args.t_lo, args.t_hi,
                                           jobs=args.jobs)
    man.stage("ensemble-and-fit")
    _json_dump({
        "p": config.p, "radius": radius, "i0": radius ** 2,
        "n_runs": args.runs, "window": [args.t_lo, args.t_hi],
        "constrained": _fit_dict(pooled.constrained),
        "free": _fit_dict(pooled.free),
        "lower": _fit_dict(pooled.lower),
        "upper": _fit_dict(pooled.upper),
        "free_exponents": [float(e) for e in free_exps],
        "free_exponent_median": float(np.median(free_exps)),
        "free_exponent_range": [float(free_exps.min()), float(free_exps.max())],
    }, out / "decay.json")
    man.write()
    return 0


def cmd_sample(args) -> int:
    config = load_config(args.config, args.seed, args.modes)
    basis = build_basis(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest("sample", args.config, out)
    burn_in, stride = args.burn_in, args.stride
    if burn_in == "auto" or stride == "auto":
        spec = at.EnsembleSpec(n_traj=min(args.trajectories, 8),
                               max_norm=args.max_norm, t_budget=100.0,
                               seed=config.seed)
        sug = at.suggest_sampling(config, spec, basis, jobs=args.jobs)
        burn_in = sug.burn_in if burn_in == "auto" else float(burn_in)
        stride = sug.stride if stride == "auto" else float(stride)
        man.stage("suggest-sampling")
    cloud = at.sample_attractor(config, args.trajectories, float(burn_in),
                                args.samples, float(stride), basis=basis,
                                max_norm=args.max_norm, jobs=args.jobs)
    man.stage("sample")
    cloud.save(out / "cloud.bin")
    cloud.to_csv(out / "cloud.csv")
    _json_dump({
        "n_points": len(cloud), "provenance": cloud.provenance,
        "max_phase_norm": float(cloud.phase_norms().max()) if len(cloud) else 0.0,
    }, out / "sample.json")
    man.write()
    return 0


def cmd_dimension(args) -> int:
    config = load_config(args.config, args.seed, args.modes)
    basis = build_basis(config)
    cloud_path = Path(args.cloud)
    if not cloud_path.is_file():
        raise ConfigError(f"cloud file not found: {args.cloud}")
    cloud = at.PointCloud.load(cloud_path, eigenvalues=basis.eigenvalues)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest("dimension", args.config, out)

    pn = cloud.phase_norms()
    eps0 = args.eps0 if args.eps0 is not None else float(np.quantile(pn, 0.5))
    inner, outer = at.annulus_split(cloud, eps0)
    if len(outer) == 0:
        raise _ScalingWindowError("no points outside B(0, eps0)")
    start = max(outer.diameter() / 4.0, 1e-12)
    outer_rep = dm.box_dimension(outer, start, args.alpha, args.m_max)
    ann_pts = cloud.subset((pn > eps0 / 2.0) & (pn <= eps0))
    ann_rep = dm.box_dimension(ann_pts, eps0 / 2.0, args.alpha, args.m_max) \
        if len(ann_pts) >= 2 else None
    man.stage("classical-coverings")
    if outer_rep.verdict != "ok":
        raise _ScalingWindowError("outer covering found no scaling window")

    if args.decay is not None:
        doc = json.loads(Path(args.decay).read_text())
        pooled = dg.TwoSidedDecayReport(
            lower=_fit_from_dict(doc["lower"]), upper=_fit_from_dict(doc["upper"]),
            constrained=_fit_from_dict(doc["constrained"]),
            free=_fit_from_dict(doc["free"]), p=doc["p"], i0=doc["i0"],
            n_tail=0)
    else:
        probe = at.probe_small_data_radius(config, basis)
        pooled, _ = run_decay_ensemble(config, basis, 0.1 * probe.radius,
                                       4, 1e4, 1e2, 1e4, jobs=args.jobs)
    man.stage("decay-constants")

    # temporal modulus from a trajectory launched near the degenerate region
    # (the annulus median point); that is where the cover gets inflated
    in_ann = np.nonzero((pn > eps0 / 2.0) & (pn <= eps0))[0]
    j = int(in_ann[np.argsort(pn[in_ann])[in_ann.size // 2]]) if in_ann.size \
        else int(np.argmax(pn))
    htraj = dyn.integrate(cloud.state(j), 50.0, config, basis=basis,
                          t_eval=np.linspace(0.0, 50.0, 2001))
    holder = dg.holder_time_exponent(htraj, seed=config.seed)
    holder_source = "measured"
    if holder.degenerate or not holder.slope > dg.THETA_HOLDER:
        # fall back on the guaranteed temporal exponent 2/9
        holder = dg.HolderFit(slope=dg.THETA_HOLDER, intercept=0.0,
                              ci_low=dg.THETA_HOLDER, ci_high=dg.THETA_HOLDER,
                              n_pairs=holder.n_pairs, degenerate=True)
        holder_source = "guaranteed-floor"
    man.stage("holder-modulus")

    deg = dm.degenerate_cover(cloud, config, pooled, holder, eps0,
                              m_max=args.m_max_degenerate, jobs=args.jobs)
    man.stage("degenerate-cover")

    ann_used = ann_rep if (ann_rep is not None and ann_rep.verdict == "ok") \
        else outer_rep
    summary = dm.two_regime_summary(outer_rep, ann_used, deg)
    _json_dump({
        "eps0": eps0,
        "outer": outer_rep.to_json_dict(),
        "annulus": None if ann_rep is None else ann_rep.to_json_dict(),
        "degenerate": {
            "schedule": deg.report.to_json_dict(),
            "theta": deg.theta, "holder_modulus": deg.holder_modulus,
            "holder_source": holder_source,
            "annulus_counts": [int(c) for c in deg.annulus_counts],
            "slot_counts": [int(c) for c in deg.slot_counts],
            "verified": deg.verified,
            "inner_dim_bound": None if math.isnan(deg.inner_dim_bound)
            else deg.inner_dim_bound,
            "n_inner": deg.n_inner, "n_annulus": deg.n_annulus,
        },
        "summary": summary,
    }, out / "cover.json")
    deg.report.save_csv(out / "cover.csv")
    man.write()
    return 0


def cmd_decompose(args) -> int:
    config = load_config(args.config, args.seed, args.modes)
    basis = build_basis(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest("decompose", args.config, out)
    state = _initial_state(args.initial, args.phase_norm, config, basis)
    u, v, w = dyn.integrate_decomposition(state, args.T, config, lam=args.lam,
                                          basis=basis)
    man.stage("integrate-decomposition")
    lam_shift = config.fprime0 if args.lam is None else args.lam
    iv = dyn.tilde_i_v(v, lam_shift)
    defect = dyn.reconstruction_defect(u, v, w)
    rises = np.diff(iv) > 1e-9 * max(iv[0], 1e-300)
    lam_k = basis.eigenvalues
    wnorm = w.a ** 2 @ lam_k ** (1.0 + dg.BETA_REG) + w.b ** 2 @ lam_k ** dg.BETA_REG
    with open(out / "decompose.csv", "w") as fh:
        fh.write("t,tilde_I_v,w_sobolev_sq\n")
        for i in range(len(u)):
            fh.write(f"{u.times[i]:.17g},{iv[i]:.17g},{wnorm[i]:.17g}\n")
    _json_dump({
        "T": args.T, "lam_shift": lam_shift,
        "reconstruction_defect": defect,
        "tilde_I_v_initial": float(iv[0]), "tilde_I_v_final": float(iv[-1]),
        "tilde_I_v_monotone_violations": int(np.sum(rises)),
        "w_sobolev_sq_sup": float(np.max(wnorm)),
        "n_steps": u.stats.n_accepted,
    }, out / "decompose.json")
    man.stage("audit")
    man.write()
    return 0


def cmd_linearize(args) -> int:
    config = load_config(args.config, args.seed, args.modes)
    basis = build_basis(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest("linearize", args.config, out)
    u0 = _initial_state(args.initial, args.phase_norm, config, basis)
    rng = np.random.default_rng(config.seed + 1)
    if args.direction == "random":
        xi = at.random_low_mode_state(basis, rng, 1.0)
    else:
        xi = _initial_state(args.direction, 1.0, config, basis)
    te = np.linspace(0.0, args.T, args.samples)
    u, U = dyn.integrate_linearized(u0, xi, args.T, config, basis=basis, t_eval=te)
    man.stage("integrate-linearized")
    eps = args.eps if args.eps is not None else dg.default_lambda_u_eps(config.p)
    lam_u = np.array([dg.lambda_u(u.state(i), U.state(i), eps, config, basis)
                      for i in range(len(u))])
    with open(out / "linearize.csv", "w") as fh:
        fh.write("t,Lambda_U,I_u\n")
        lam_k = basis.eigenvalues
        iu = u.a ** 2 @ lam_k + np.sum(u.b ** 2, axis=1)
        for i in range(len(u)):
            fh.write(f"{u.times[i]:.17g},{lam_u[i]:.17g},{iu[i]:.17g}\n")
    drift = float(np.max(np.abs(lam_u - lam_u[0])) / max(abs(lam_u[0]), 1e-300))
    rises = int(np.sum(np.diff(lam_u) > 1e-9 * max(abs(lam_u[0]), 1e-300)))
    _json_dump({
        "T": args.T, "eps": eps, "Lambda_U_initial": float(lam_u[0]),
        "Lambda_U_final": float(lam_u[-1]), "relative_drift": drift,
        "monotone_violations": rises, "decay_factor": float(lam_u[-1] / lam_u[0])
        if lam_u[0] != 0 else 1.0,
    }, out / "linearize.json")
    man.stage("audit")
    man.write()
    return 0


def cmd_vw_report(args) -> int:
    config = load_config(args.config, args.seed, args.modes)
    basis = build_basis(config)
    cloud_path = Path(args.cloud)
    if not cloud_path.is_file():
        raise ConfigError(f"cloud file not found: {args.cloud}")
    cloud = at.PointCloud.load(cloud_path, eigenvalues=basis.eigenvalues)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest("vw-report", args.config, out)
    pn = cloud.phase_norms()
    eps0 = args.eps0 if args.eps0 is not None else float(np.quantile(pn, 0.5))
    grid = np.linspace(args.T / 4.0, args.T, 4)
    rep = dm.vw_splitting_report(cloud, config, eps0, grid,
                                 n_samples=args.samples,
                                 n_directions=args.directions,
                                 basis=basis, jobs=args.jobs)
    man.stage("vw-probes")
    _json_dump({
        "eps0": eps0, "T_grid": [float(t) for t in rep.T_grid],
        "q_by_T": [float(q) for q in rep.q_by_T], "q_max": rep.q_max,
        "T0_empirical": None if math.isnan(rep.T0_empirical) else rep.T0_empirical,
        "w_proxy_sup": rep.w_proxy_sup,
        "n_samples": args.samples, "n_directions": args.directions,
    }, out / "vw.json")
    man.write()
    return 0


def cmd_gronwall(args) -> int:
    src = Path(args.input)
    if not src.is_file():
        raise ConfigError(f"input file not found: {args.input}")
    rows = np.genfromtxt(src, delimiter=",", names=True)
    for col in ("t", "F", "phi", "psi"):
        if col not in (rows.dtype.names or ()):
            raise ConfigError(f"input CSV must have column {col!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest("gronwall", args.input, out)
    rep = dg.gronwall_bound_check(rows["t"], rows["F"], rows["phi"], rows["psi"],
                                  args.c1, args.c2)
    man.stage("check")
    _json_dump({
        "hypotheses_ok": rep.hypotheses_ok, "window_l1_ok": rep.window_l1_ok,
        "oscillation_ok": rep.oscillation_ok, "inequality_ok": rep.inequality_ok,
        "M": rep.M, "sup_F": rep.sup_F, "bounded": rep.bounded,
        "failing_windows": rep.failing_windows[:20],
    }, out / "gronwall.json")
    man.write()
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="degwave",
        description="Spectral simulator and attractor-dimension toolkit for "
                    "the wave equation with degenerate nonlocal damping")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, cloud=False):
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--modes", type=int, default=None)
        if cloud:
            sp.add_argument("--cloud", required=True)

    sp = sub.add_parser("simulate", help="integrate and emit the run CSV")
    common(sp)
    sp.add_argument("--T", type=float, default=50.0)
    sp.add_argument("--initial", default="random")
    sp.add_argument("--phase-norm", type=float, default=1.0, dest="phase_norm")
    sp.add_argument("--samples", type=int, default=501)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("decay", help="small-data ensemble and decay fits")
    common(sp)
    sp.add_argument("--T", type=float, default=1e5)
    sp.add_argument("--radius", type=float, default=None)
    sp.add_argument("--runs", type=int, default=4)
    sp.add_argument("--t-lo", type=float, default=1e3, dest="t_lo")
    sp.add_argument("--t-hi", type=float, default=1e5, dest="t_hi")
    sp.set_defaults(func=cmd_decay)

    sp = sub.add_parser("sample", help="sample an attractor point cloud")
    common(sp)
    sp.add_argument("--trajectories", type=int, default=32)
    sp.add_argument("--samples", type=int, default=256)
    sp.add_argument("--burn-in", default="auto", dest="burn_in",
                    help="time units, or 'auto' (4x probed entry time)")
    sp.add_argument("--stride", default="auto",
                    help="time units, or 'auto' (energy decorrelation lag)")
    sp.add_argument("--max-norm", type=float, default=5.0, dest="max_norm")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("dimension", help="covering reports and the combined bound")
    common(sp, cloud=True)
    sp.add_argument("--eps0", type=float, default=None)
    sp.add_argument("--alpha", type=float, default=0.5)
    sp.add_argument("--m-max", type=int, default=12, dest="m_max")
    sp.add_argument("--m-max-degenerate", type=int, default=5,
                    dest="m_max_degenerate")
    sp.add_argument("--decay", default=None,
                    help="decay.json from 'degwave decay' (else fitted in-line)")
    sp.set_defaults(func=cmd_dimension)

    sp = sub.add_parser("decompose", help="v/w split with monotonicity audit")
    common(sp)
    sp.add_argument("--T", type=float, default=50.0)
    sp.add_argument("--initial", default="random")
    sp.add_argument("--phase-norm", type=float, default=1.0, dest="phase_norm")
    sp.add_argument("--lam", type=float, default=None)
    sp.set_defaults(func=cmd_decompose)

    sp = sub.add_parser("linearize", help="variational flow with Lambda_U audit")
    common(sp)
    sp.add_argument("--T", type=float, default=100.0)
    sp.add_argument("--initial", default="zero")
    sp.add_argument("--phase-norm", type=float, default=0.0, dest="phase_norm")
    sp.add_argument("--direction", default="random")
    sp.add_argument("--samples", type=int, default=401)
    sp.add_argument("--eps", type=float, default=None)
    sp.set_defaults(func=cmd_linearize)

    sp = sub.add_parser("vw-report", help="V-contraction / W-compactness probes")
    common(sp, cloud=True)
    sp.add_argument("--eps0", type=float, default=None)
    sp.add_argument("--T", type=float, default=10.0)
    sp.add_argument("--samples", type=int, default=32)
    sp.add_argument("--directions", type=int, default=8)
    sp.set_defaults(func=cmd_vw_report)

    sp = sub.add_parser("gronwall", help="audit a sampled F' + phi F <= psi phi bound")
    sp.add_argument("--input", required=True, help="CSV with columns t,F,phi,psi")
    sp.add_argument("--out", required=True)
    sp.add_argument("--c1", type=float, required=True)
    sp.add_argument("--c2", type=float, required=True)
    sp.set_defaults(func=cmd_gronwall)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, InsufficientWindowError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except IntegrationError as e:
        print(f"integration failure: {e}", file=sys.stderr)
        return 3
    except _ScalingWindowError as e:
        print(f"no scaling window: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
