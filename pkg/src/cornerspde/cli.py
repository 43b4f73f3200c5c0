"""Command-line front end: simulate, decompose, verify, example."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, parse_config, render_config
from .dual import manufactured_recovery
from .noise import CovarianceSpec
from .she import ModalCoefficients, path_statistics, read_trajectory, simulate_paths, write_trajectory
from .transform import CornerModes, CornerPipeline, FrequencyGrid, band_residual, dual_modes, laplace_of_path, sobolev_time_norm
from . import verify as V

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2
SUITES = ("helmholtz", "grisvard", "main-estimate", "hs-operator")
MANIFEST = "simulate.json"
BATCH = 25
EXPORT_PATHS = 4


class RunError(RuntimeError):
    """Missing inputs or inconsistent run state."""


# ------------------------------------------------------------------ output


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def envelope(cfg: RunConfig, command: str, payload: dict, passed: bool, input_hash: str | None = None) -> dict:
    return V.plain(
        {
            "command": command,
            "version": __version__,
            "config": cfg.resolved(),
            "config_text": render_config(cfg, include_out=False),
            "config_hash": cfg.content_hash(),
            "input_hash": input_hash or cfg.content_hash(),
            "passed": bool(passed),
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "report": payload,
        }
    )


def write_json(path, data: dict) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def without_timestamp(data: dict) -> dict:
    return {k: v for k, v in data.items() if k != "timestamp"}


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


# ----------------------------------------------------------------- helpers


def _problem(cfg: RunConfig, h: float | None = None) -> V.CornerProblem:
    return V.CornerProblem.build(cfg.domain(), cfg.h if h is None else h, cfg.modes, cfg.beta)


def _example2_fields(problem: V.CornerProblem):
    x, y = problem.system.mesh.nodes[problem.system.dofs].T
    u0 = np.sin(np.pi * x) * np.sin(np.pi * y)
    return u0, problem.dual.nodal, problem.dual.load


def _model(cfg: RunConfig, problem: V.CornerProblem, threshold_factor: float | None = None):
    if cfg.variant != "example2":
        return cfg.model()
    u0, v0, v0_load = _example2_fields(problem)
    u0_norm = float(np.sqrt(u0 @ (problem.basis.mass @ u0)))
    factor = cfg.threshold_factor if threshold_factor is None else threshold_factor
    return cfg.model(u0_field=u0, v0_field=v0, v0_load=v0_load, threshold=factor * u0_norm)


def _initial_state(cfg: RunConfig, problem: V.CornerProblem):
    return _example2_fields(problem)[0] if cfg.variant == "example2" else None


def _paths(cfg, problem, model, n_steps=None, n_paths=None, seed=None, spec=None):
    n_steps = cfg.steps if n_steps is None else n_steps
    n_paths = cfg.paths if n_paths is None else n_paths
    spec = cfg.covariance() if spec is None else spec
    u0 = _initial_state(cfg, problem)
    out = []
    for first in range(0, n_paths, BATCH):
        count = min(BATCH, n_paths - first)
        out += simulate_paths(problem.basis, spec, model, u0, cfg.T, n_steps, cfg.seed if seed is None else seed, count, first)
    return out


def _grid(cfg: RunConfig, n_steps: int | None = None) -> FrequencyGrid:
    return FrequencyGrid.for_path(cfg.T, cfg.steps if n_steps is None else n_steps, cfg.pad_factor)


# ---------------------------------------------------------------- commands


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    problem = _problem(cfg)
    model = _model(cfg, problem)
    paths = _paths(cfg, problem, model)
    store = out / "paths"
    store.mkdir(parents=True, exist_ok=True)
    files = {}
    for p in paths:
        name = f"path_{p.path:05d}.bin"
        write_trajectory(p, store / name)
        files[name] = sha256_file(store / name)
    stats = path_statistics(paths)
    write_csv(
        out / "simulate_trace.csv",
        ["t", "mean_square_norm"],
        zip(paths[0].t, np.mean([np.sum(p.u**2, axis=1) for p in paths], axis=0)),
    )
    payload = {"mesh": problem.describe(), "files": files, "statistics": stats, "n_steps": cfg.steps, "T": cfg.T}
    write_json(out / MANIFEST, envelope(cfg, "simulate", payload, True))
    return EXIT_PASS


def cmd_decompose(cfg: RunConfig, out: Path, files=()) -> int:
    manifest_path = out / MANIFEST
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else None
    if manifest is not None and manifest["config_hash"] != cfg.content_hash():
        raise RunError(f"hash mismatch: {manifest_path} was produced with a different config")
    if not files:
        if manifest is None:
            raise RunError(f"no trajectory files given and no {MANIFEST} in {out}")
        files = [out / "paths" / name for name in sorted(manifest["report"]["files"])]
    files = [Path(f) for f in files]
    for f in files:
        if not f.exists():
            raise RunError(f"missing trajectory file: {f}")
        if manifest is not None and f.name in manifest["report"]["files"]:
            if sha256_file(f) != manifest["report"]["files"][f.name]:
                raise RunError(f"hash mismatch: {f} differs from the simulate manifest")
    input_hash = hashlib.sha256(
        (cfg.content_hash() + "".join(sha256_file(f) for f in files)).encode()
    ).hexdigest()

    problem = _problem(cfg)
    model = _model(cfg, problem)
    coeffs = ModalCoefficients(model, problem.basis)
    grid = _grid(cfg)
    pipeline = CornerPipeline(problem.basis, problem.dual, grid, cfg.window)
    target = out / "decompose"
    target.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, f in enumerate(files):
        path_id = int(f.stem.split("_")[-1]) if f.stem.split("_")[-1].isdigit() else k
        path = read_trajectory(f, cfg.T, path_id)
        if path.n_steps != cfg.steps:
            raise RunError(f"{f}: {path.n_steps} steps, config says {cfg.steps}")
        if path.u.shape[1] != problem.basis.size:
            raise RunError(f"{f}: {path.u.shape[1]} modes, config says {problem.basis.size}")
        dec = pipeline.decompose(path, coeffs, cfg.support_delta_steps, cfg.support_tol)
        alpha = pipeline.alpha
        reg, phi_raw = V.path_lhs(dec, cfg.s, alpha)
        _, phi_win = V.path_lhs(dec, cfg.s, alpha, cfg.window)
        residual = band_residual(problem.basis.eigenvalues, laplace_of_path(path, grid), dec.H, cfg.xi_band)
        rows.append(
            {
                "file": f.name,
                "path": path_id,
                "support_fraction": dec.support_fraction,
                "accepted": dec.accepted,
                "hermitian_error": dec.c.hermitian_error(),
                "coefficient_at_zero": complex(dec.c.values[0]),
                "phi_norm_sq_raw": phi_raw,
                "phi_norm_sq_windowed": phi_win,
                "regular_norm_sq": reg,
                "phi_l2": sobolev_time_norm(dec.c.values, grid.xi, grid.dxi, 0.0) / np.sqrt(2 * np.pi),
                "helmholtz_residual": residual,
            }
        )
        if k < EXPORT_PATHS:
            order = np.argsort(grid.xi, kind="stable")
            write_csv(
                target / f"spectrum_{path_id:05d}.csv",
                ["xi", "re", "im"],
                zip(grid.xi[order], dec.c.values.real[order], dec.c.values.imag[order]),
            )
            write_csv(target / f"phi_{path_id:05d}.csv", ["t", "phi"], zip(dec.t, dec.phi))
    passed = all(r["accepted"] for r in rows)
    payload = {
        "grid": grid.describe(),
        "window": cfg.window,
        "support_delta": cfg.support_delta_steps * grid.dt,
        "support_tol": cfg.support_tol,
        "mesh": problem.describe(),
        "alpha": pipeline.alpha,
        "paths": rows,
        "max_support_fraction": max(r["support_fraction"] for r in rows) if rows else 0.0,
    }
    write_json(out / "decompose.json", envelope(cfg, "decompose", payload, passed, input_hash))
    return EXIT_PASS if passed else EXIT_FAIL


def _suite_helmholtz(cfg, out):
    coarse = _problem(cfg, 2 * cfg.h)
    fine = _problem(cfg, cfg.h)
    levels = [(coarse, cfg.steps // 2), (fine, cfg.steps)]
    model_c, model_f = _model(cfg, coarse), _model(cfg, fine)
    trace = []
    for (problem, n), model in zip(levels, (model_c, model_f)):
        trace.append(_helmholtz_level(cfg, problem, model, n))
    values = [t["residual"] for t in trace]
    rep = V.EstimateReport("helmholtz", trace=trace)
    rep.details = {"xi_band": cfg.xi_band, "decreasing": bool(values[-1] < values[0]), "final": values[-1]}
    rep.passed = bool(values[-1] < values[0] and values[-1] <= cfg.residual_tol)
    write_csv(out / "verify_helmholtz.csv", ["h", "dt", "residual"], [(t["h"], t["dt"], t["residual"]) for t in trace])
    return rep


def _helmholtz_level(cfg, problem, model, n_steps):
    coeffs = ModalCoefficients(model, problem.basis)
    paths = _paths(cfg, problem, model, n_steps)
    value = V.helmholtz_level(problem.basis, coeffs, paths, _grid(cfg, n_steps), cfg.xi_band)
    return {"h": problem.h, "n_steps": n_steps, "dt": cfg.T / n_steps, "residual": value}


def _suite_grisvard(cfg, out):
    domain = cfg.domain()
    zs = V.ray_grid(cfg.theta0)
    sources = V.gaussian_mixture_fields(domain, cfg.n_sources, cfg.seed)
    trace, manufactured = [], []
    for h in (2 * cfg.h, cfg.h):
        problem = _problem(cfg, h)
        modes = CornerModes(problem.basis, problem.dual)
        nodes = problem.system.mesh.nodes[problem.system.dofs]
        g_modes = np.array([problem.basis.project(g(nodes)) for g in sources])
        rep_h = V.grisvard_sweep(problem.basis, modes, dual_modes(problem.basis, problem.dual), zs, g_modes)
        trace.append({"h": h, **rep_h.details, "quantiles": rep_h.ratio_quantiles})
    for z in (0, 1, 1 + 5j, 100j):
        r = manufactured_recovery(problem.dual, z)
        manufactured.append({"z": complex(z), "coefficient": r.coefficient, "error": abs(r.coefficient - 1)})
    sups = [t["sup_ratio"] for t in trace]
    change = abs(sups[-1] / sups[0] - 1)
    rep = V.EstimateReport("grisvard", trace=trace)
    rep.ratio_quantiles = trace[-1]["quantiles"]
    rep.details = {"theta0": cfg.theta0, "relative_change": change, "manufactured": manufactured}
    rep.passed = bool(np.all(np.isfinite(sups)) and change <= cfg.grisvard_tol and sups[-1] / sups[0] <= cfg.refine_factor)
    write_csv(out / "verify_grisvard.csv", ["h", "sup_ratio"], [(t["h"], t["sup_ratio"]) for t in trace])
    return rep


def _suite_main_estimate(cfg, out):
    problem = _problem(cfg)
    model = _model(cfg, problem)
    coeffs = ModalCoefficients(model, problem.basis)
    spec = cfg.covariance()
    trace = []
    last = None
    for n in (cfg.steps // 2, cfg.steps):
        pipeline = CornerPipeline(problem.basis, problem.dual, _grid(cfg, n), cfg.window)
        last = V.main_estimate_check(pipeline, _paths(cfg, problem, model, n), coeffs, spec, cfg.s)
        trace.append({"n_steps": n, "dt": cfg.T / n, **last.details, "quantiles": last.ratio_quantiles})
    ratios = [t["ratio_of_means"] for t in trace]
    change = abs(ratios[-1] / ratios[0] - 1) if ratios[0] > 0 else 0.0
    last.trace = trace
    last.details = {**last.details, "relative_change": change}
    last.passed = bool(np.all(np.isfinite(ratios)) and change <= cfg.stability_tol)
    write_csv(out / "verify_main-estimate.csv", ["dt", "ratio_of_means"], [(t["dt"], t["ratio_of_means"]) for t in trace])
    return last


def _suite_hs_operator(cfg, out):
    problem = _problem(cfg)
    model = _model(cfg, problem)
    coeffs = ModalCoefficients(model, problem.basis)
    spec = cfg.covariance()
    rep = V.hs_operator_check(_paths(cfg, problem, model), coeffs, spec, cfg.s, cfg.hs_basis)
    ok = rep.details["last_increment_fraction"] < 0.05
    if "deviation_in_se" in rep.details:
        ok = ok and rep.details["deviation_in_se"] <= 4.0
    rep.passed = bool(ok)
    write_csv(out / "verify_hs-operator.csv", ["K", "partial_sum"], [(k + 1, v) for k, v in enumerate(rep.trace)])
    return rep


def cmd_verify(cfg: RunConfig, suite: str, out: Path) -> int:
    runners = {
        "helmholtz": _suite_helmholtz,
        "grisvard": _suite_grisvard,
        "main-estimate": _suite_main_estimate,
        "hs-operator": _suite_hs_operator,
    }
    if suite not in runners:
        raise ConfigError(f"suite: expected one of {SUITES}")
    out.mkdir(parents=True, exist_ok=True)
    rep = runners[suite](cfg, out)
    write_json(out / f"verify_{suite}.json", envelope(cfg, f"verify {suite}", rep.to_dict(), rep.passed))
    return EXIT_PASS if rep.passed else EXIT_FAIL


def _example1(cfg, out):
    problem = _problem(cfg)
    spec = CovarianceSpec.power_law(cfg.noise_modes, cfg.q0, cfg.decay)
    v0 = dual_modes(problem.basis, problem.dual)
    leak = V.coefficient_leak(problem.dual, V.boundary_polynomial_laplacians(problem.domain))
    rep = V.example1_experiment(problem.basis, v0, spec, cfg.T, cfg.steps, cfg.example1_paths, cfg.seed, leak)
    rep["mesh"] = problem.describe()
    passed = rep["probability_nonzero"] >= 0.99 and rep["variance_relative_error"] <= 0.15
    write_csv(out / "example1.csv", ["quantity", "value"], [(k, rep[k]) for k in ("sample_variance", "variance_oracle", "probability_nonzero", "threshold")])
    return rep, passed


def _example2(cfg, out):
    problem = _problem(cfg)
    u0, v0, v0_load = _example2_fields(problem)
    u0_norm = float(np.sqrt(u0 @ (problem.basis.mass @ u0)))
    factors = sorted({0.0, 1.0, 1.01, cfg.threshold_factor, 1.05, 1.1, 1.2})
    rep = V.example2_experiment(
        problem.basis, u0, v0, v0_load, cfg.T, cfg.steps, cfg.example2_paths, cfg.seed, [f * u0_norm for f in factors]
    )
    for row, f in zip(rep["rows"], factors):
        row["threshold_factor"] = f
    default = next(r for r in rep["rows"] if r["threshold_factor"] == cfg.threshold_factor)
    rep["default"] = default
    rep["mesh"] = problem.describe()
    passed = 0 < default["wilson_low"] and default["wilson_high"] < 1 and rep["monotone_in_threshold"]
    write_csv(
        out / "example2.csv",
        ["threshold_factor", "threshold", "probability", "wilson_low", "wilson_high", "ou_probability"],
        [(r["threshold_factor"], r["threshold"], r["probability"], r["wilson_low"], r["wilson_high"], r["ou_lower_bound_probability"]) for r in rep["rows"]],
    )
    return rep, passed


def cmd_example(cfg: RunConfig, which: int, out: Path) -> int:
    runners = {1: _example1, 2: _example2}
    if which not in runners:
        raise ConfigError("example: expected 1 or 2")
    out.mkdir(parents=True, exist_ok=True)
    rep, passed = runners[which](cfg, out)
    write_json(out / f"example{which}.json", envelope(cfg, f"example {which}", rep, passed))
    return EXIT_PASS if passed else EXIT_FAIL


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run configuration (INI sections); defaults apply when omitted")
    common.add_argument("--seed", type=int, help="override run.seed (unsigned 64-bit)")
    common.add_argument("--out", type=Path, help="output directory (default: run.out)")
    common.add_argument("--threads", type=int, default=1, help="BLAS threads")
    parser = argparse.ArgumentParser(prog="cornerspde", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate trajectories")
    dec = sub.add_parser("decompose", parents=[common], help="decompose stored trajectories")
    dec.add_argument("files", nargs="*", type=Path, help="trajectory files (default: those of the simulate manifest)")
    ver = sub.add_parser("verify", parents=[common], help="run a verification suite")
    ver.add_argument("suite", choices=SUITES)
    ex = sub.add_parser("example", parents=[common], help="run a Monte Carlo example")
    ex.add_argument("which", type=int, choices=(1, 2))
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config is not None else parse_config("")
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed: must be an unsigned 64-bit integer")
        cfg.seed = args.seed
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads: must be positive")
        cfg.threads = args.threads
    if args.out is not None:
        cfg.out = str(args.out)
    return cfg


def run(args) -> int:
    from threadpoolctl import threadpool_limits

    cfg = resolve_config(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with threadpool_limits(limits=cfg.threads):
        if args.command == "simulate":
            return cmd_simulate(cfg, out)
        if args.command == "decompose":
            return cmd_decompose(cfg, out, args.files)
        if args.command == "verify":
            return cmd_verify(cfg, args.suite, out)
        return cmd_example(cfg, args.which, out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except (ConfigError, RunError, FileNotFoundError, ValueError, FloatingPointError) as exc:
        print(f"cornerspde: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
