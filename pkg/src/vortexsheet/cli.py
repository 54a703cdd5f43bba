"""Command line runner: ``vortexsheet <command> --config run.json --out DIR``.

Every run reads one JSON config, writes its outputs plus ``metadata.json``
into ``--out``, and embeds a hash of the effective config in every file.
CSV files start with a ``# config_hash: ...`` line and carry floats with 17
significant digits; the wall-clock timestamp lives only in the metadata, so
identical config and seed give byte-identical CSVs.

Exit codes: 0 success, 2 config or input error, 3 numerical abort or failed
oracle check, 4 hypothesis violation (``regularity`` with ``"strict": true``).
"""

import argparse
import contextlib
import csv
import datetime
import hashlib
import json
import math
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .dynamics import EvolutionConfig, evolve, normal_defect, total_circulation
from .exceptions import NumericalAbort, SheetError
from .geometry import (default_centers, estimate_regularity_constant, hausdorff_distance,
                       lp_norm)
from .kernels import QuadratureSpec, maximal_operator, pv_velocity, velocity_off_sheet
from .oracles import (OracleSpec, build, flat_uniform_state, kh_linearized_growth,
                      perturbed_circle, prandtl_munk_lp_norm, prandtl_munk_state,
                      prandtl_munk_trajectory, segment_state)
from .state import SheetState, SheetTrajectory, read_jsonl, write_jsonl
from .testfunctions import TestFunction
from .weak_forms import ResidualReport, build_test_suite, evaluate_suite

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_HYPOTHESIS = 0, 2, 3, 4
COMMANDS = ("simulate", "residual", "regularity", "convergence", "oracle-check")
STUDIES = ("pv-prandtl-munk", "reparam-invariance", "residual-refinement", "maximal-sweep")


class ConfigError(Exception):
    pass


class HypothesisViolation(Exception):
    pass


@contextlib.contextmanager
def _parsing(what):
    """Turn malformed config values into ConfigError."""
    try:
        yield
    except ConfigError:
        raise
    except KeyError as exc:
        raise ConfigError(f"{what}: missing key {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: {exc}") from None


# -- config and output helpers ----------------------------------------------------

def load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def write_csv(path, header, rows, chash):
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash: {chash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- inputs ------------------------------------------------------------------------

def initial_state(spec):
    """Initial sheet from an ``initial`` config block."""
    with _parsing("initial"):
        if not isinstance(spec, dict) or len(spec) != 1:
            raise ConfigError("initial must hold exactly one of oracle, curve, segment, state")
        (kind, body), = spec.items()
        if kind == "oracle":
            osp = OracleSpec.from_dict(body)
            if osp.kind == "prandtl_munk":
                return prandtl_munk_state(osp.N)
            return build(osp)
        if kind == "curve":
            return perturbed_circle(int(body.get("N", 64)))
        if kind == "segment":
            return segment_state(int(body.get("N", 64)), float(body.get("length", 1.0)),
                                 float(body.get("gamma", 1.0)))
        if kind == "state":
            return load_trajectory(body)[0]
        raise ConfigError(f"unknown initial data kind {kind!r}")


def load_trajectory(source):
    """Trajectory from a JSON-lines path or an ``{"oracle": ...}`` block
    (exact Prandtl-Munk, or a single-state oracle)."""
    if isinstance(source, str):
        try:
            return read_jsonl(source)
        except OSError as exc:
            raise ConfigError(f"cannot read trajectory {source}: {exc.strerror}") from None
        except SheetError as exc:
            raise ConfigError(f"trajectory {source}: {exc}") from None
    with _parsing("trajectory"):
        if isinstance(source, dict) and "oracle" in source:
            osp = OracleSpec.from_dict(source["oracle"])
            if osp.kind == "prandtl_munk":
                return prandtl_munk_trajectory(osp)
            return SheetTrajectory((build(osp),))
        raise ConfigError("trajectory must be a path or an {\"oracle\": ...} block")


def _quadrature(cfg):
    with _parsing("quadrature"):
        return QuadratureSpec.from_dict(cfg.get("quadrature", {}))


# -- simulate ---------------------------------------------------------------------------

def cmd_simulate(cfg, out, ctx):
    state = initial_state(cfg.get("initial", {"oracle": {"kind": "flat_uniform"}}))
    with _parsing("evolution"):
        ecfg = EvolutionConfig.from_dict(cfg.get("evolution", {}))
    result = evolve(state, ecfg)
    traj = result.trajectory
    write_jsonl(out / "trajectory.jsonl", traj, config_hash=ctx["config_hash"])
    rows = []
    s0 = traj[0]
    for st in traj:
        _, xi, _, w = st.quad_nodes()
        centroid = (xi * w[:, None]).sum(axis=0) / w.sum()
        disp = float(np.abs(st.xi - s0.xi).max()) if st.n == s0.n else float("nan")
        rows.append([st.t, total_circulation(st), centroid[0], centroid[1], disp])
    write_csv(out / "simulate.csv",
              ["t", "total_circulation", "centroid_x", "centroid_y", "max_node_displacement"],
              rows, ctx["config_hash"])
    final = traj[-1]
    return {"diagnostics": result.diagnostics, "evolution": ecfg.to_dict(),
            "final_time": final.t, "final_mean_height": float(final.xi[:, 1].mean()),
            "outputs": ["trajectory.jsonl", "simulate.csv"]}


# -- residual ---------------------------------------------------------------------------

def cmd_residual(cfg, out, ctx, trajectory=None):
    source = trajectory or cfg.get("trajectory")
    if source is None:
        raise ConfigError("residual needs a trajectory (positional argument or config key)")
    traj = load_trajectory(source)
    q = _quadrature(cfg)
    with _parsing("residual"):
        n = int(cfg.get("suite_size", 12))
        levels = int(cfg.get("levels", 3))
        diagonal = cfg.get("diagonal", "limit")
        suite = build_test_suite(traj, n)
        reports = evaluate_suite(traj, suite, q, levels=levels, diagonal=diagonal)
    write_csv(out / "residuals.csv", ResidualReport.CSV_HEADER, [r.csv_row() for r in reports],
              ctx["config_hash"])
    payload = {
        "config_hash": ctx["config_hash"],
        "test_functions": [phi.to_dict() for phi in suite],
        "reports": [r.to_dict() for r in reports],
        "not_numerically_certified": ["membership in H^-1_loc",
                                      "Lipschitz-in-time H^-4 estimate"],
    }
    write_json(out / "residuals.json", payload)
    lines = [f"{r.test_function_id} {r.decision_br} {r.decision_euler}" for r in reports]
    for line in lines:
        print(line)
    return {"summary": lines, "outputs": ["residuals.csv", "residuals.json"]}


# -- regularity -------------------------------------------------------------------------

def l2_refinement(state, levels=3):
    """L^2(ds) norms of ``state`` subsampled by 2^(levels-1), ..., 1, and
    whether they diverge: the last increment is not small relative to the
    norm and does not shrink at least by half."""
    strides = [2**k for k in range(levels - 1, -1, -1)]
    if (state.n - 1) % strides[0]:
        return [lp_norm(state, 2.0)], None
    one = SheetTrajectory((state,))
    vals = [lp_norm(one.subsample(s, 1)[0], 2.0) for s in strides]
    d1, d2 = vals[-2] - vals[-3], vals[-1] - vals[-2]
    diverging = d2 > 1e-3 * abs(vals[-1]) and d2 >= 0.5 * d1
    return vals, bool(diverging)


def cmd_regularity(cfg, out, ctx, trajectory=None):
    source = trajectory or cfg.get("trajectory")
    if source is None:
        raise ConfigError("regularity needs a trajectory (positional argument or config key)")
    traj = load_trajectory(source)
    with _parsing("regularity"):
        max_states = int(cfg.get("max_states", 11))
        lattice = int(cfg.get("lattice", 32))
        levels = int(cfg.get("levels", 3))
        strict = bool(cfg.get("strict", False))
        a_limit = cfg.get("A_limit")
    stride = max(1, math.ceil((len(traj) - 1) / max(1, max_states - 1)))
    picks = list(range(0, len(traj), stride))
    if picks[-1] != len(traj) - 1:
        picks.append(len(traj) - 1)
    rows, per_state, reasons = [], [], set()
    for k in picks:
        st = traj[k]
        rep = estimate_regularity_constant(st, centers=default_centers(st, lattice))
        norms, diverging = l2_refinement(st, levels)
        if diverging:
            reasons.add("L2 norm of gamma diverges under refinement")
        if a_limit is not None and rep.A_estimate > float(a_limit):
            reasons.add(f"A_estimate exceeds {a_limit}")
        rows.append([st.t, rep.A_estimate, rep.l1_gamma, rep.l2_gamma, norms[0],
                     "NA" if diverging is None else int(diverging)])
        d = rep.to_dict()
        d.update(t=st.t, l2_refinement=norms, l2_diverging=diverging)
        per_state.append(d)
    write_csv(out / "regularity.csv",
              ["t", "A_estimate", "l1_gamma", "l2_gamma", "l2_gamma_coarsest", "l2_diverging"],
              rows, ctx["config_hash"])
    flag = "HYPOTHESIS_VIOLATED" if reasons else "OK"
    summary = {
        "flag": flag,
        "reasons": sorted(reasons),
        "A_max": max(r[1] for r in rows),
        "l1_max": max(r[2] for r in rows),
        "l2_max": max(r[3] for r in rows),
    }
    write_json(out / "regularity.json", {"config_hash": ctx["config_hash"], "summary": summary,
                                         "states": per_state})
    print(f"regularity {flag} A_max={summary['A_max']:.6g} l2_max={summary['l2_max']:.6g}")
    result = {"summary": summary, "outputs": ["regularity.csv", "regularity.json"]}
    if strict and reasons:
        raise HypothesisViolation(result)
    return result


# -- convergence studies ------------------------------------------------------------------

def study_pv_prandtl_munk(cfg, ctx):
    q = _quadrature(cfg)
    resolutions = [int(n) for n in cfg.get("resolutions", [32, 64, 128, 256])]
    rows = []
    for n in resolutions:
        st = prandtl_munk_state(n)
        U = pv_velocity(st, q)
        err = np.hypot(U[:, 0], U[:, 1] + 0.5)
        rows.append([n, float(err[1:-1].max()), float(err.max()), q.resolve(st)])
    return ["resolution", "max_error_interior", "max_error_all", "scheme"], rows, {}


def _orders(values, resolutions):
    out = [float("nan")]
    for (a, na), (b, nb) in zip(zip(values, resolutions), zip(values[1:], resolutions[1:])):
        out.append(math.log(a / b) / math.log(nb / na) if a > 0 and b > 0 else float("nan"))
    return out


def _pairing_functions(n, seed):
    rng = np.random.default_rng(seed)
    return [TestFunction("gaussian_bump_truncated", tuple(rng.uniform(-1.0, 1.0, 2)),
                         float(rng.uniform(0.5, 1.5)), time_kind="constant", id=f"pair-{i}")
            for i in range(n)]


def reparametrization_study(resolutions=(64, 128, 256), dt_coarse=0.05, base=32, t_end=0.5,
                            filter_level=1e-13, n_pairings=20, seed=0):
    """Lagrangian and arclength evolutions of the same perturbed circle.

    ``dt = dt_coarse * base / N`` so space and time are refined together.
    Returns rows (N, dt, Hausdorff distance, max pairing difference).
    """
    phis = _pairing_functions(n_pairings, seed)

    def pairings(st):
        _, xi, sig, w = st.quad_nodes()
        return np.array([np.dot(p(xi, st.t), sig * w) for p in phis])

    rows = []
    for n in resolutions:
        dt = dt_coarse * base / n
        runs = []
        for scheme in ("lagrangian", "arclength"):
            cfg = EvolutionConfig(scheme=scheme, dt=dt, t_end=t_end,
                                  fourier_filter_level=filter_level)
            runs.append(evolve(perturbed_circle(n), cfg).trajectory[-1])
        a, b = runs
        rows.append([n, dt, hausdorff_distance(a, b), float(np.abs(pairings(a) - pairings(b)).max())])
    return rows


def study_reparam_invariance(cfg, ctx):
    res = [int(n) for n in cfg.get("resolutions", [64, 128, 256])]
    rows = reparametrization_study(res, float(cfg.get("dt_coarse", 0.05)), int(cfg.get("base", 32)),
                                   float(cfg.get("t_end", 0.5)), cfg.get("filter_level", 1e-13),
                                   int(cfg.get("n_pairings", 20)), ctx["seed"])
    ho = _orders([r[2] for r in rows], res)
    po = _orders([r[3] for r in rows], res)
    rows = [r + [a, b] for r, a, b in zip(rows, ho, po)]
    return (["resolution", "dt", "hausdorff", "pairing_error", "hausdorff_order", "pairing_order"],
            rows, {"min_hausdorff_order": float(np.nanmin(ho)) if len(res) > 1 else None,
                   "min_pairing_order": float(np.nanmin(po)) if len(res) > 1 else None})


def study_residual_refinement(cfg, ctx):
    traj = load_trajectory(cfg.get("trajectory", {"oracle": {"kind": "prandtl_munk", "N": 128,
                                                                "T": 1.0, "dt": 0.05}}))
    q = _quadrature(cfg)
    suite = build_test_suite(traj, int(cfg.get("suite_size", 12)))
    reports = evaluate_suite(traj, suite, q, levels=int(cfg.get("levels", 3)))
    rows = []
    for r in reports:
        for (n, br), (_, eu) in zip(r.refinements_br, r.refinements_euler):
            rows.append([r.test_function_id, n, br, eu])
    return ["test_function_id", "resolution", "residual_br", "residual_euler"], rows, {}


def random_densities(m, count, rng, kmax_cycle=(2, 4, 8, 16)):
    """``count`` random signed trigonometric densities on m periodic nodes;
    sample i has a random mean and modes up to ``kmax_cycle[i % len]`` with
    1/k amplitudes."""
    eta = 2.0 * np.pi * np.arange(m) / m
    out, rough = np.empty((m, count)), []
    for i in range(count):
        kmax = kmax_cycle[i % len(kmax_cycle)]
        k = np.arange(1, kmax + 1)
        a = rng.normal(size=kmax) / k
        b = rng.normal(size=kmax) / k
        f = rng.normal() + np.cos(np.outer(eta, k)) @ a + np.sin(np.outer(eta, k)) @ b
        out[:, i] = f / np.abs(f).max()
        rough.append(kmax)
    return out, np.array(rough)


def maximal_sweep(n_nodes=64, count=50, seed=0, n_eps=8):
    """Ratios ||U* gamma||_2 / ||gamma||_2 on the perturbed circle for random
    smooth densities (L^2 with respect to arclength)."""
    st = perturbed_circle(n_nodes)
    st = st.replace(sigma=np.ones(st.n))
    _, xi, _, w = st.quad_nodes()
    seg = np.hypot(*np.diff(st.xi, axis=0).T)
    ds = 0.5 * (seg + np.roll(seg, 1)) / w
    eps = np.geomspace(2.0 * seg.max(), 1.0, n_eps)
    rng = np.random.default_rng(seed)
    gam, rough = random_densities(st.n - 1, count, rng)
    sig = gam * ds[:, None]
    ustar = maximal_operator(st, eps, sigma=sig)
    norm = lambda f: np.sqrt(np.sum(f**2 * (ds * w)[:, None], axis=0))
    return norm(ustar) / norm(gam), rough


def study_maximal_sweep(cfg, ctx):
    ratios, rough = maximal_sweep(int(cfg.get("nodes", 64)), int(cfg.get("count", 50)), ctx["seed"])
    rows = [[i, int(k), r] for i, (k, r) in enumerate(zip(rough, ratios))]
    levels = sorted(set(rough.tolist()))
    means = [float(ratios[rough == k].mean()) for k in levels]
    slope = float(np.polyfit(np.log(levels), np.log(means), 1)[0]) if len(levels) > 1 else 0.0
    return ["sample", "kmax", "ratio"], rows, {
        "spread": float(ratios.max() / ratios.min()), "log_slope_vs_kmax": slope,
        "mean_ratio_per_kmax": dict(zip(map(str, levels), means))}


_STUDIES = {"pv-prandtl-munk": study_pv_prandtl_munk,
            "reparam-invariance": study_reparam_invariance,
            "residual-refinement": study_residual_refinement,
            "maximal-sweep": study_maximal_sweep}


def cmd_convergence(cfg, out, ctx):
    name = cfg.get("study")
    if name not in _STUDIES:
        raise ConfigError(f"study must be one of {', '.join(STUDIES)}")
    with _parsing(f"study {name}"):
        header, rows, extra = _STUDIES[name](cfg, ctx)
    fname = f"convergence-{name}.csv"
    write_csv(out / fname, header, rows, ctx["config_hash"])
    return {"study": name, "summary": extra, "outputs": [fname]}


# -- oracle check -------------------------------------------------------------------------

def oracle_checks():
    """Rows (check, value, reference, tolerance, passed)."""
    rows = []

    def add(name, value, ref, tol):
        rows.append([name, float(value), float(ref), float(tol), abs(value - ref) <= tol])

    U = pv_velocity(prandtl_munk_state(256))
    add("prandtl_munk_velocity_max_error", np.hypot(U[1:-1, 0], U[1:-1, 1] + 0.5).max(), 0.0, 1e-3)
    pm = prandtl_munk_trajectory(OracleSpec("prandtl_munk", N=64, T=1.0, dt=0.5))
    add("prandtl_munk_final_height", pm[-1].xi[:, 1].mean(), -0.5, 1e-14)
    b = normal_defect(pm[0], pm[1], pv_velocity(pm[0]))
    add("prandtl_munk_normal_defect", np.abs(b[1:-1]).max(), 0.0, 1e-6)
    flat_spec = OracleSpec("flat_uniform", N=64)
    flat = flat_uniform_state(flat_spec)
    add("flat_uniform_velocity", np.abs(pv_velocity(flat)).max(), 0.0, 1e-12)
    h = 0.5
    v = velocity_off_sheet(flat, np.array([[0.3, h], [0.3, -h]]))
    add("flat_uniform_offsheet_above", v[0, 0], -0.5, 2 * math.exp(-2 * math.pi * h / flat.period))
    add("flat_uniform_offsheet_below", v[1, 0], 0.5, 2 * math.exp(-2 * math.pi * h / flat.period))
    rates = kh_linearized_growth(flat_spec, (1, 2, 4))
    per_k = [rates[k] / k for k in (1, 2, 4)]
    add("kh_rate_linear_in_k", max(per_k) / min(per_k), 1.0, 1e-2)
    rates2 = kh_linearized_growth(OracleSpec("flat_uniform", N=64, params={"gamma_bar": 2.0}), (2,))
    add("kh_rate_linear_in_gamma", rates2[2] / rates[2], 2.0, 2e-2)
    l1 = [prandtl_munk_lp_norm(n, 1.0) for n in (128, 8192)]
    add("prandtl_munk_l1_converges", l1[1] - l1[0], 0.0, 1e-3)
    l2 = [prandtl_munk_lp_norm(n, 2.0) for n in (128, 8192)]
    rows.append(["prandtl_munk_l2_growth", l2[1] / l2[0], 1.0, 0.0, l2[1] / l2[0] > 1.2])
    rt = SheetState.from_dict(json.loads(pm[-1].to_json()))
    add("serialization_round_trip", np.abs(rt.xi - pm[-1].xi).max(), 0.0, 1e-15)
    return rows


def cmd_oracle_check(cfg, out, ctx):
    rows = oracle_checks()
    write_csv(out / "oracle-check.csv", ["check", "value", "reference", "tolerance", "passed"],
              rows, ctx["config_hash"])
    failed = [r[0] for r in rows if not r[4]]
    for r in rows:
        print(f"{r[0]} {'PASS' if r[4] else 'FAIL'} value={r[1]:.6g}")
    result = {"failed": failed, "outputs": ["oracle-check.csv"]}
    if failed:
        raise NumericalAbort("oracle_check", "failed checks: " + ", ".join(failed))
    return result


# -- entry point ----------------------------------------------------------------------------

def _parser():
    p = argparse.ArgumentParser(prog="vortexsheet", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("trajectory", nargs="?", help="trajectory JSON-lines file (residual, regularity)")
    p.add_argument("--config", help="JSON config document")
    p.add_argument("--out", default="vortexsheet-out", help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads (recorded)")
    p.add_argument("--seed", type=int, default=None, help="random seed (overrides config)")
    return p


def _versions():
    return {"vortexsheet": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def main(argv=None):
    args = _parser().parse_args(argv)
    out = Path(args.out)
    meta = {"command": args.command, "versions": _versions(), "threads": args.threads}
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = load_config(args.config)
        effective = dict(cfg)
        if args.seed is not None:
            effective["seed"] = args.seed
        effective.setdefault("seed", 0)
        if not isinstance(effective["seed"], int):
            raise ConfigError("seed must be an integer")
        ctx = {"config_hash": config_hash(effective), "seed": effective["seed"]}
        meta.update(config=cfg, effective_config=effective, config_hash=ctx["config_hash"],
                    seed=ctx["seed"])
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {out}: {exc.strerror}") from None
        handlers = {"simulate": cmd_simulate, "convergence": cmd_convergence,
                    "oracle-check": cmd_oracle_check}
        if args.command in ("residual", "regularity"):
            fn = cmd_residual if args.command == "residual" else cmd_regularity
            result = fn(effective, out, ctx, args.trajectory)
        else:
            result = handlers[args.command](effective, out, ctx)
        meta.update(status="ok", result=result)
        code = EXIT_OK
    except ConfigError as exc:
        meta.update(status="error", error={"category": "config", "message": str(exc)})
        code = EXIT_CONFIG
    except NumericalAbort as exc:
        meta.update(status="error", error={"category": exc.category, "message": str(exc)})
        code = EXIT_NUMERICAL
    except HypothesisViolation as exc:
        meta.update(status="hypothesis_violated", result=exc.args[0])
        code = EXIT_HYPOTHESIS
    meta["timestamp"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    if code != EXIT_OK:
        print(json.dumps(_jsonable(meta.get("error", {"category": "hypothesis_violated"}))),
              file=sys.stderr)
    if out.is_dir():
        write_json(out / "metadata.json", meta)
    return code


if __name__ == "__main__":
    sys.exit(main())
