"""Experiment configuration: one YAML file defines everything numeric.

Flags on the command line only select the file, mode and output paths; all
model truths, grids, initial values, domains and seeds live in the config so
a run is reproducible from the file alone. See README for the key reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import arma
from .ecf import FreqGrid
from .noise import NoiseModel
from .recursive import (ConfigurationError, IidEcfStepper, SystemEcfStepper,
                        ThreeStageStepper, TruncationDomain)

ALGORITHMS = ("iid_ecf", "system_ecf", "three_stage", "offline_ecf", "offline_pe")
MODES = ("simulate", "estimate", "montecarlo", "ode-check")


@dataclass
class ExperimentConfig:
    """Validated experiment definition (see module docstring)."""

    mode: str = "estimate"
    algorithm: str = "iid_ecf"
    seed: int = 0
    n: int = 1000
    replications: int = 0
    replication_seeds: list[int] | None = None

    family: str = "gaussian"
    eta_true: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0]))
    h: float = 1.0
    free: tuple[int, ...] | None = None

    ar_true: np.ndarray = field(default_factory=lambda: np.empty(0))
    ma_true: np.ndarray = field(default_factory=lambda: np.empty(0))
    has_system: bool = False

    grid_e: FreqGrid | None = None
    grid_s: FreqGrid | None = None
    weight: str = "optimal"

    eta0: np.ndarray | None = None
    theta0: np.ndarray | None = None
    g0: str = "zero"
    warmup_len: int = 0
    r_p_weight: str = "estimate"  # estimate | identity (system_ecf weighting factor)
    r_p_n: int = 100_000

    domain: TruncationDomain = field(default_factory=TruncationDomain)

    ode_n_path: int = 50_000
    ode_dt: float = 0.05
    ode_t_max: float = 20.0
    ode_jacobian_step: float = 1e-6
    p_star_n: int = 100_000
    lag_cap: int | None = None

    raw: dict = field(default_factory=dict)

    # -- derived objects ------------------------------------------------------

    def noise_true(self) -> NoiseModel:
        return NoiseModel(self.family, self.eta_true, self.h, self.free)

    def noise_init(self) -> NoiseModel:
        model = self.noise_true()
        if self.eta0 is not None:
            model = model.with_free_eta(np.asarray(self.eta0, dtype=float))
        return model

    def theta_true(self) -> arma.ArmaParams:
        return arma.ArmaParams(self.ar_true, self.ma_true, self.domain.theta_margin)

    def theta_init(self) -> np.ndarray:
        if self.theta0 is not None:
            return np.asarray(self.theta0, dtype=float)
        return np.concatenate([self.ar_true, self.ma_true])

    @property
    def p(self) -> int:
        return self.ar_true.size

    @property
    def q(self) -> int:
        return self.ma_true.size

    def seeds_for_replications(self) -> list[int]:
        if self.replication_seeds is not None:
            return [int(s) for s in self.replication_seeds]
        return [int(self.seed) + 1 + k for k in range(self.replications)]


def _as_array(value, default=None) -> np.ndarray:
    if value is None:
        return default
    return np.atleast_1d(np.asarray(value, dtype=float))


def _parse_grid(block) -> FreqGrid | None:
    if block is None:
        return None
    if "points" in block:
        return FreqGrid(np.asarray(block["points"], dtype=float))
    m = int(block.get("m", 10))
    u_max = float(block.get("u_max", 2.0))
    return FreqGrid.equispaced(m, u_max)


def load_config(path) -> ExperimentConfig:
    with Path(path).open("r") as fh:
        doc = yaml.safe_load(fh) or {}
    return config_from_dict(doc)


def config_from_dict(doc: dict) -> ExperimentConfig:
    cfg = ExperimentConfig(raw=doc)
    cfg.mode = doc.get("mode", cfg.mode)
    if cfg.mode not in MODES:
        raise ConfigurationError(f"unknown mode {cfg.mode!r}; expected one of {MODES}")
    cfg.algorithm = doc.get("algorithm", cfg.algorithm)
    if cfg.algorithm not in ALGORITHMS:
        raise ConfigurationError(
            f"unknown algorithm {cfg.algorithm!r}; expected one of {ALGORITHMS}")
    cfg.seed = int(doc.get("seed", cfg.seed))
    cfg.n = int(doc.get("n", cfg.n))
    cfg.replications = int(doc.get("replications", cfg.replications))
    if doc.get("replication_seeds") is not None:
        cfg.replication_seeds = [int(s) for s in doc["replication_seeds"]]

    noise = doc.get("noise", {})
    cfg.family = noise.get("family", cfg.family)
    cfg.eta_true = _as_array(noise.get("eta"), cfg.eta_true)
    cfg.h = float(noise.get("h", cfg.h))
    if noise.get("free") is not None:
        cfg.free = tuple(int(i) for i in noise["free"])

    system = doc.get("system")
    if system is not None:
        cfg.has_system = True
        cfg.ar_true = _as_array(system.get("ar"), np.empty(0))
        cfg.ma_true = _as_array(system.get("ma"), np.empty(0))

    cfg.grid_e = _parse_grid(doc.get("grid")) or FreqGrid.equispaced()
    cfg.grid_s = _parse_grid(doc.get("grid_s")) or cfg.grid_e
    cfg.weight = doc.get("weight", cfg.weight)
    if cfg.weight not in ("optimal", "identity"):
        raise ConfigurationError(f"unknown weight {cfg.weight!r}")

    init = doc.get("init", {})
    cfg.eta0 = _as_array(init.get("eta0"), None)
    cfg.theta0 = _as_array(init.get("theta0"), None)
    cfg.g0 = init.get("g0", cfg.g0)
    cfg.warmup_len = int(init.get("warmup_len", cfg.warmup_len))
    cfg.r_p_weight = init.get("r_p_weight", cfg.r_p_weight)
    cfg.r_p_n = int(init.get("r_p_n", cfg.r_p_n))

    dom = doc.get("domain", {})
    cfg.domain = TruncationDomain(
        eta_low=_as_array(dom.get("eta_low"), None),
        eta_high=_as_array(dom.get("eta_high"), None),
        theta_margin=float(dom.get("theta_margin", 0.05)),
        r_floor=float(dom.get("r_floor", 1e-10)),
        guard_scale=float(dom.get("guard_scale", 1e6)),
    )

    ode = doc.get("ode", {})
    cfg.ode_n_path = int(ode.get("n_path", cfg.ode_n_path))
    cfg.ode_dt = float(ode.get("dt", cfg.ode_dt))
    cfg.ode_t_max = float(ode.get("t_max", cfg.ode_t_max))
    cfg.ode_jacobian_step = float(ode.get("jacobian_step", cfg.ode_jacobian_step))
    cfg.p_star_n = int(ode.get("p_star_n", cfg.p_star_n))
    if ode.get("lag_cap") is not None:
        cfg.lag_cap = int(ode["lag_cap"])

    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    cfg.noise_true()  # family/eta domain check
    if cfg.algorithm in ("system_ecf", "three_stage", "offline_pe") and not cfg.has_system:
        raise ConfigurationError(f"algorithm {cfg.algorithm} requires a system block")
    if cfg.has_system:
        cfg.theta_true()  # stability check
        d = cfg.p + cfg.q
        if cfg.theta0 is not None and cfg.theta0.size != d:
            raise ConfigurationError(f"theta0 must have length {d}")
    model = cfg.noise_true()
    if cfg.eta0 is not None and cfg.eta0.size != model.p_eta:
        raise ConfigurationError(
            f"eta0 must have length {model.p_eta} (one entry per free parameter)")
    if cfg.domain.eta_low is not None and cfg.domain.eta_low.size != model.p_eta:
        raise ConfigurationError("eta box size must match the free parameter count")
    if cfg.mode == "montecarlo" and cfg.replications < 2:
        raise ConfigurationError("montecarlo mode needs replications >= 2")
    if cfg.replication_seeds is not None and cfg.replications \
            and len(cfg.replication_seeds) != cfg.replications:
        raise ConfigurationError("replication_seeds length must equal replications")


# ---------------------------------------------------------------------------
# stepper / run factory
# ---------------------------------------------------------------------------


def r_p_weight_matrix(cfg: ExperimentConfig) -> np.ndarray | None:
    """The fixed scaling factor of the known-noise weighting, per config."""
    if cfg.r_p_weight == "identity" or cfg.weight == "identity":
        return None
    return arma.r_p_estimate(cfg.theta_true(), cfg.noise_true(), cfg.r_p_n,
                             seed=cfg.seed + 900_001)


def build_stepper(cfg: ExperimentConfig):
    if cfg.algorithm == "iid_ecf":
        return IidEcfStepper(cfg.noise_init(), cfg.grid_e, cfg.domain, cfg.weight)
    if cfg.algorithm == "system_ecf":
        return SystemEcfStepper(
            cfg.noise_true(), cfg.grid_s, cfg.p, cfg.q, cfg.theta_init(), cfg.domain,
            weight_kind=cfg.weight, r_p_weight=r_p_weight_matrix(cfg),
            g0=cfg.g0, warmup_len=cfg.warmup_len)
    if cfg.algorithm == "three_stage":
        return ThreeStageStepper(
            cfg.noise_init(), cfg.grid_e, cfg.grid_s, cfg.p, cfg.q, cfg.theta_init(),
            cfg.domain, weight_kind=cfg.weight, g0=cfg.g0, warmup_len=cfg.warmup_len)
    raise ConfigurationError(f"{cfg.algorithm} is not a recursive algorithm")


def run(algorithm: str, data, cfg: ExperimentConfig, record: bool = True):
    """Drive one recursive run over a data sequence; deterministic given inputs."""
    cfg.algorithm = algorithm
    validate_config(cfg)
    from .recursive import run_stepper

    return run_stepper(build_stepper(cfg), np.asarray(data, dtype=float), record=record)
