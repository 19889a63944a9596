"""Monte Carlo replication studies: N * cov of final errors vs closed forms.

Replications carry pre-assigned independent seeds and advance in lockstep
through the batched recursion engine; aggregation is deterministic, so a
report is byte-reproducible from its config.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import arma, ecf, offline
from .config import ExperimentConfig, build_stepper
from .recursive import run_stepper


@dataclass
class MonteCarloReport:
    """Final-estimate statistics across replications plus theory comparison."""

    algorithm: str
    n: int
    replications: int
    component_names: list[str]
    finals: np.ndarray  # (R, dim)
    truth: np.ndarray
    rmse: np.ndarray
    n_cov: np.ndarray  # N * sample covariance of final errors
    sigma_theory: np.ndarray
    ratio_diag: np.ndarray
    reset_counts: np.ndarray
    failures: list = field(default_factory=list)

    def to_payload(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "n": self.n,
            "replications": self.replications,
            "components": self.component_names,
            "truth": self.truth,
            "rmse": self.rmse,
            "n_cov": self.n_cov,
            "sigma_theory": self.sigma_theory,
            "ratio_diag": self.ratio_diag,
            "reset_counts": self.reset_counts,
            "failures": self.failures,
        }


def simulate_increments(cfg: ExperimentConfig, seeds: list[int], n: int | None = None) -> np.ndarray:
    """One data row per replication: raw increments, or system output if configured."""
    n = cfg.n if n is None else n
    model = cfg.noise_true()
    rows = np.empty((len(seeds), n))
    system = cfg.theta_true() if cfg.has_system else None
    for k, seed in enumerate(seeds):
        e = model.sample(n, seed).values
        rows[k] = arma.simulate(system, e) if system is not None else e
    return rows


def _component_names(cfg: ExperimentConfig) -> tuple[list[str], np.ndarray]:
    model = cfg.noise_true()
    names, truth = [], []
    if cfg.algorithm in ("iid_ecf", "three_stage", "offline_ecf"):
        names += [f"eta_{model.param_names[i]}" for i in model.free]
        truth += list(model.free_eta)
    if cfg.algorithm in ("system_ecf", "three_stage", "offline_pe"):
        names += [f"ar_{i+1}" for i in range(cfg.p)] + [f"ma_{j+1}" for j in range(cfg.q)]
        truth += list(cfg.ar_true) + list(cfg.ma_true)
    return names, np.asarray(truth)


def _sigma_theory(cfg: ExperimentConfig) -> np.ndarray:
    """Block-diagonal closed-form asymptotic covariance at the configured truth."""
    model = cfg.noise_true()
    blocks = []
    if cfg.algorithm in ("iid_ecf", "three_stage", "offline_ecf"):
        blocks.append(ecf.sigma_eta(model, cfg.grid_e))
    if cfg.algorithm in ("system_ecf", "three_stage", "offline_pe"):
        r_p_true = arma.r_p_estimate(cfg.theta_true(), model, cfg.r_p_n,
                                     seed=cfg.seed + 900_001)
        if cfg.algorithm == "offline_pe":
            # classical PE asymptotics: Var(e) * R_P^-1
            var_e = _noise_variance(model)
            blocks.append(var_e * np.linalg.inv(r_p_true))
        else:
            blocks.append(ecf.sigma_theta(model, cfg.grid_s, r_p_true))
    dim = sum(b.shape[0] for b in blocks)
    out = np.zeros((dim, dim))
    at = 0
    for b in blocks:
        k = b.shape[0]
        out[at:at + k, at:at + k] = b
        at += k
    return out


def _noise_variance(model) -> float:
    e, h = model.eta, model.h
    if model.family == "gaussian":
        return float(e[1] ** 2 * h)
    if model.family == "variance_gamma":
        sig, nu, th = e[0], e[1], e[2]
        return float((sig**2 + th**2 * nu) * h)
    alpha, beta, delta, _ = e
    gamma = np.sqrt(alpha**2 - beta**2)
    return float(delta * h * alpha**2 / gamma**3)


def _finals_matrix(cfg: ExperimentConfig, trajectories) -> np.ndarray:
    rows = []
    for traj in trajectories:
        parts = []
        if cfg.algorithm in ("iid_ecf", "three_stage"):
            parts.append(traj.final["eta"])
        if cfg.algorithm in ("system_ecf", "three_stage"):
            parts.append(traj.final["theta_s"])
        rows.append(np.concatenate(parts))
    return np.asarray(rows)


def run_replications(cfg: ExperimentConfig, n: int | None = None) -> MonteCarloReport:
    """Run R independent seeded replications and compare N*cov to closed forms."""
    n = cfg.n if n is None else n
    seeds = cfg.seeds_for_replications()
    if len(seeds) < 2:
        raise ValueError("montecarlo needs at least 2 replications")
    names, truth = _component_names(cfg)
    data = simulate_increments(cfg, seeds, n)
    failures: list = []
    reset_counts = np.zeros(len(seeds), dtype=int)

    if cfg.algorithm in ("offline_ecf", "offline_pe"):
        finals = np.full((len(seeds), truth.size), np.nan)
        for k in range(len(seeds)):
            try:
                if cfg.algorithm == "offline_ecf":
                    fit = offline.offline_ecf_iid(data[k], cfg.noise_init(), cfg.grid_e,
                                                  cfg.weight)
                else:
                    fit = offline.offline_pe(data[k], cfg.p, cfg.q)
                finals[k] = fit.estimate
            except Exception as exc:  # noqa: BLE001 - per-replication failure log
                failures.append({"replication": k, "seed": seeds[k], "error": str(exc)})
    else:
        stepper = build_stepper(cfg)
        trajectories = run_stepper(stepper, data, record=False)
        finals = _finals_matrix(cfg, trajectories)
        reset_counts = np.asarray([t.reset_count for t in trajectories])
        for k in range(len(seeds)):
            if not np.all(np.isfinite(finals[k])):
                failures.append({"replication": k, "seed": seeds[k],
                                 "error": "non-finite final estimate"})

    valid = np.all(np.isfinite(finals), axis=1)
    errors = finals[valid] - truth
    rmse = np.sqrt(np.mean(errors**2, axis=0)) if errors.size else np.full(truth.size, np.nan)
    if errors.shape[0] >= 2:
        n_cov = n * np.atleast_2d(np.cov(errors.T))
    else:
        n_cov = np.full((truth.size, truth.size), np.nan)
    sigma = _sigma_theory(cfg)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.diag(n_cov) / np.diag(sigma)
    return MonteCarloReport(
        algorithm=cfg.algorithm, n=n, replications=len(seeds),
        component_names=names, finals=finals, truth=truth, rmse=rmse,
        n_cov=n_cov, sigma_theory=sigma, ratio_diag=ratio,
        reset_counts=reset_counts, failures=failures,
    )


def rate_ratio(cfg: ExperimentConfig, n_small: int | None = None) -> dict:
    """Per-component RMSE ratio between runs at N and 4N (root-N rate check)."""
    n_small = (cfg.n if n_small is None else n_small)
    small = run_replications(cfg, n=n_small)
    big = run_replications(cfg, n=4 * n_small)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = small.rmse / big.rmse
    return {
        "components": small.component_names,
        "n_small": n_small,
        "n_big": 4 * n_small,
        "rmse_small": small.rmse,
        "rmse_big": big.rmse,
        "rmse_ratio": ratio,
    }
