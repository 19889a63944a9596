"""Recursive ECF identification of Levy-driven linear systems."""

from .arma import ArmaParams, FilterState, innovation_step, r_p_estimate, simulate, stability_margin
from .ecf import (FreqGrid, IdentifiabilityError, WeightMatrix, c_matrix, kron_weight,
                  noise_score, sigma_eta, sigma_theta)
from .estimators import (BatchNoiseEcf, BatchPredictionError, RecursiveNoiseEcf,
                         RecursiveSystemEcf, ThreeStageEcf)
from .noise import FAMILIES, IncrementSample, NoiseDomainError, NoiseModel
from .ode import IidOde, LyapunovResult, SystemOde, integrate, jacobian_at, lyapunov_solve, p_star_estimate
from .offline import OfflineFit, offline_ecf_iid, offline_pe
from .recursive import (EstimatorState, IidEcfStepper, SystemEcfStepper, ThreeStageStepper,
                        Trajectory, TruncationDomain, resetting_step, run_stepper)

__version__ = "0.1.0"

__all__ = [
    "ArmaParams", "BatchNoiseEcf", "BatchPredictionError", "EstimatorState", "FAMILIES",
    "FilterState", "FreqGrid", "IdentifiabilityError", "IidEcfStepper", "IidOde",
    "IncrementSample", "LyapunovResult", "NoiseDomainError", "NoiseModel", "OfflineFit",
    "RecursiveNoiseEcf", "RecursiveSystemEcf", "SystemEcfStepper", "SystemOde",
    "ThreeStageEcf", "ThreeStageStepper", "Trajectory", "TruncationDomain",
    "WeightMatrix", "c_matrix", "resetting_step", "innovation_step", "integrate",
    "jacobian_at", "kron_weight", "lyapunov_solve", "noise_score", "offline_ecf_iid",
    "offline_pe", "p_star_estimate", "r_p_estimate", "run_stepper", "sigma_eta",
    "sigma_theta", "simulate", "stability_margin",
]
