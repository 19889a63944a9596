"""Command-line front end: simulate | estimate | montecarlo | ode-check.

Every numeric choice lives in the YAML config; the flags only select the
config file, input data and output directory. All outputs are
byte-reproducible for a fixed config except the timestamp inside the
summaries' "meta" field.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import ode, offline, runio
from .config import ExperimentConfig, build_stepper, load_config, r_p_weight_matrix
from .montecarlo import run_replications, simulate_increments
from .recursive import run_stepper


def _config_echo(cfg: ExperimentConfig) -> dict:
    return cfg.raw


def cmd_simulate(cfg: ExperimentConfig, out_dir: Path) -> dict:
    """Write an increment CSV plus a JSON sidecar carrying truth and seed."""
    data = simulate_increments(cfg, [cfg.seed], cfg.n)[0]
    data_path = out_dir / "data.csv"
    runio.write_increments_csv(data_path, data, column="dy" if cfg.has_system else "y")
    sidecar = {
        "seed": cfg.seed,
        "n": cfg.n,
        "noise": {"family": cfg.family, "eta": cfg.eta_true, "h": cfg.h},
        "system": {"ar": cfg.ar_true, "ma": cfg.ma_true} if cfg.has_system else None,
        "config": _config_echo(cfg),
        "meta": runio.timestamp_meta(),
    }
    runio.write_json(out_dir / "data_meta.json", sidecar)
    return {"data": str(data_path)}


def cmd_estimate(cfg: ExperimentConfig, data_path: Path, out_dir: Path) -> dict:
    """Run the configured estimator on a data file; emit trajectory + summary."""
    data = runio.read_increments_csv(data_path)
    summary_extra = {"algorithm": cfg.algorithm, "seed": cfg.seed,
                     "config": _config_echo(cfg), "data_file": str(data_path)}
    if cfg.algorithm in ("offline_ecf", "offline_pe"):
        if cfg.algorithm == "offline_ecf":
            fit = offline.offline_ecf_iid(data, cfg.noise_init(), cfg.grid_e, cfg.weight)
        else:
            fit = offline.offline_pe(data, cfg.p, cfg.q, theta0=cfg.theta0)
        payload = {
            "final": {"estimate": fit.estimate},
            "objective": fit.objective,
            "iterations": fit.iterations,
            "converged": fit.converged,
            "reset_count": 0,
            "n_steps": int(data.size),
        }
        payload.update(summary_extra)
        payload["meta"] = runio.timestamp_meta()
        runio.write_json(out_dir / "summary.json", payload)
        return {"summary": str(out_dir / "summary.json")}
    trajectory = run_stepper(build_stepper(cfg), data, record=True)
    traj_path = out_dir / "trajectory.csv"
    runio.trajectory_to_csv(trajectory, traj_path)
    payload = runio.trajectory_summary(trajectory, summary_extra)
    payload["meta"] = runio.timestamp_meta()
    runio.write_json(out_dir / "summary.json", payload)
    return {"trajectory": str(traj_path), "summary": str(out_dir / "summary.json")}


def cmd_montecarlo(cfg: ExperimentConfig, out_dir: Path) -> dict:
    """Replication study: emit the JSON report plus CSV ratio and finals tables."""
    report = run_replications(cfg)
    payload = report.to_payload()
    payload["config"] = _config_echo(cfg)
    payload["meta"] = runio.timestamp_meta()
    runio.write_json(out_dir / "montecarlo.json", payload)
    rows = []
    for j, name in enumerate(report.component_names):
        rows.append([name, report.truth[j], report.rmse[j], report.n_cov[j, j],
                     report.sigma_theory[j, j], report.ratio_diag[j]])
    runio.write_csv(out_dir / "montecarlo_table.csv",
                    ["component", "truth", "rmse", "n_cov_diag", "sigma_diag", "ratio"],
                    ([r[0]] + [float(v) for v in r[1:]] for r in rows))
    runio.write_csv(out_dir / "finals.csv",
                    ["replication"] + report.component_names + ["reset_count"],
                    ([float(k)] + [float(v) for v in report.finals[k]]
                     + [float(report.reset_counts[k])]
                     for k in range(report.replications)))
    return {"report": str(out_dir / "montecarlo.json")}


def _system_ode_kwargs(cfg: ExperimentConfig) -> dict:
    if cfg.algorithm == "system_ecf" and cfg.weight == "optimal":
        return {"r_p_weight": r_p_weight_matrix(cfg)}
    return {}


def _build_ode(cfg: ExperimentConfig):
    if cfg.algorithm == "iid_ecf":
        return ode.IidOde(cfg.noise_true(), cfg.grid_e, cfg.weight)
    return ode.SystemOde(cfg.noise_true(), cfg.theta_true(), algorithm=cfg.algorithm,
                         grid_e=cfg.grid_e, grid_s=cfg.grid_s, weight_kind=cfg.weight,
                         n_path=cfg.ode_n_path, seed=cfg.seed,
                         **_system_ode_kwargs(cfg))


def cmd_ode_check(cfg: ExperimentConfig, out_dir: Path) -> dict:
    """Equilibrium diagnostics: RHS norm at the truth, Jacobian spectrum,
    Lyapunov covariance, and an integrated path from the truth."""
    system = _build_ode(cfg)
    x_star = system.equilibrium()
    f_star = system.rhs(x_star)
    jac, eigs = ode.jacobian_at(system.rhs, x_star, step=cfg.ode_jacobian_step)
    block_names = list(system.blocks.keys())
    diag = {
        "algorithm": cfg.algorithm,
        "rhs_norm_at_truth": float(np.linalg.norm(f_star)),
        "rhs_max_abs_at_truth": float(np.max(np.abs(f_star))) if f_star.size else 0.0,
        "eigenvalues_re": eigs.real,
        "eigenvalues_im": eigs.imag,
        "blocks": {name: [system.blocks[name].start, system.blocks[name].stop]
                   for name in block_names},
        "config": _config_echo(cfg),
    }
    if isinstance(system, ode.SystemOde):
        _, se = system.rhs(x_star, with_se=True)
        diag["rhs_standard_errors"] = {k: float(v) for k, v in se.items()}
        step_scale = cfg.ode_jacobian_step
        if se and max(se.values()) > 0.1 * step_scale:
            diag["warning"] = ("Monte Carlo noise is close to the finite-difference "
                               "scale; increase ode.n_path")
    try:
        p_star = ode.p_star_estimate(
            cfg.algorithm, cfg.noise_true(), grid=cfg.grid_e,
            theta_true=cfg.theta_true() if cfg.has_system else None,
            n=cfg.p_star_n, seed=cfg.seed + 31, weight_kind=cfg.weight,
            lag_cap=cfg.lag_cap, grid_s=cfg.grid_s if cfg.has_system else None,
            **_system_ode_kwargs(cfg))
        lyap = ode.lyapunov_solve(jac, p_star)
        diag["lyapunov_sigma_diag"] = np.diag(lyap.sigma_xx)
        diag["lyapunov_residual"] = lyap.residual
    except (ValueError, RuntimeError) as exc:
        diag["lyapunov_error"] = str(exc)
    path = ode.integrate(system.rhs, x_star, (0.0, cfg.ode_t_max), cfg.ode_dt,
                         in_domain=system.in_domain)
    diag["path_escaped"] = path.escaped
    diag["meta"] = runio.timestamp_meta()
    runio.write_json(out_dir / "ode_check.json", diag)
    runio.write_csv(out_dir / "ode_path.csv",
                    ["t"] + [f"x_{i}" for i in range(system.dim)],
                    ([float(path.ts[i])] + [float(v) for v in path.xs[i]]
                     for i in range(path.ts.size)))
    runio.write_csv(out_dir / "ode_spectrum.csv", ["re", "im"],
                    ([float(e.real), float(e.imag)] for e in eigs))
    return {"diagnostics": str(out_dir / "ode_check.json")}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="levyecf",
        description="Recursive ECF identification of Levy-driven linear systems")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "estimate", "montecarlo", "ode-check"):
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, type=Path)
        cmd.add_argument("--out", type=Path, default=Path("."))
        cmd.add_argument("--seed-override", type=int, default=None)
        if name == "estimate":
            cmd.add_argument("--data", required=True, type=Path)
    args = parser.parse_args(argv)

    cfg = load_config(args.config)
    if args.seed_override is not None:
        cfg.seed = int(args.seed_override)
    out_dir = args.out
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.command == "simulate":
        written = cmd_simulate(cfg, out_dir)
    elif args.command == "estimate":
        written = cmd_estimate(cfg, args.data, out_dir)
    elif args.command == "montecarlo":
        written = cmd_montecarlo(cfg, out_dir)
    else:
        written = cmd_ode_check(cfg, out_dir)
    for kind, path in written.items():
        print(f"{kind}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
