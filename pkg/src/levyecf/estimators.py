"""scikit-learn style estimator front ends for the recursive and batch fits.

Each estimator consumes a 1-D increment series through ``fit`` and exposes
the results as trailing-underscore attributes, so the algorithms compose
with sklearn tooling (get_params/set_params, clone, pipelines operating on
series). Constructor arguments are stored verbatim; all work happens in
``fit``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import offline
from .ecf import FreqGrid
from .noise import NoiseModel
from .recursive import (IidEcfStepper, SystemEcfStepper, ThreeStageStepper,
                        TruncationDomain, run_stepper)

# parameter count used when eta0 is left to the moment initializer
DEFAULT_PARAM_COUNT = {"gaussian": 2, "variance_gamma": 3, "normal_inverse_gaussian": 4}


def check_series(x) -> np.ndarray:
    """Validate a 1-D finite increment series (accepts a single-column 2-D array)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D series, got shape {np.shape(x)}")
    if arr.size == 0:
        raise ValueError("empty series")
    if not np.all(np.isfinite(arr)):
        raise ValueError("series contains non-finite values")
    return arr


def _as_grid(grid, u_max: float) -> FreqGrid:
    if isinstance(grid, FreqGrid):
        return grid
    if np.isscalar(grid):
        return FreqGrid.equispaced(int(grid), u_max)
    return FreqGrid(np.asarray(grid, dtype=float))


class RecursiveNoiseEcf(BaseEstimator):
    """Recursive ECF estimator of Levy increment parameters from i.i.d. data.

    Parameters default to a 10-point grid on (0, 2], plug-in optimal
    weighting, and a moment-based starting point when ``eta0`` is None.
    """

    def __init__(self, family="gaussian", eta0=None, h=1.0, free=None, grid=10,
                 u_max=2.0, weight="optimal", eta_low=None, eta_high=None,
                 theta_margin=0.05, r_floor=1e-10, guard_scale=1e6, record=True):
        self.family = family
        self.eta0 = eta0
        self.h = h
        self.free = free
        self.grid = grid
        self.u_max = u_max
        self.weight = weight
        self.eta_low = eta_low
        self.eta_high = eta_high
        self.theta_margin = theta_margin
        self.r_floor = r_floor
        self.guard_scale = guard_scale
        self.record = record

    def _domain(self) -> TruncationDomain:
        return TruncationDomain(
            eta_low=None if self.eta_low is None else np.asarray(self.eta_low, float),
            eta_high=None if self.eta_high is None else np.asarray(self.eta_high, float),
            theta_margin=self.theta_margin, r_floor=self.r_floor,
            guard_scale=self.guard_scale)

    def _model0(self, y: np.ndarray) -> NoiseModel:
        if self.eta0 is not None:
            return NoiseModel(self.family, self.eta0, self.h, self.free)
        eta_init = offline.moment_initializer(self.family, y, self.h,
                                              DEFAULT_PARAM_COUNT[self.family])
        return NoiseModel(self.family, eta_init, self.h, self.free)

    def fit(self, X, y=None):
        series = check_series(X)
        model0 = self._model0(series)
        stepper = IidEcfStepper(model0, _as_grid(self.grid, self.u_max),
                                self._domain(), self.weight)
        traj = run_stepper(stepper, series, record=self.record)
        self.model0_ = model0
        self.trajectory_ = traj
        self.eta_ = traj.final["eta"]
        self.r_e_ = traj.final["r_e"]
        self.reset_count_ = traj.reset_count
        self.n_steps_ = len(series)
        self.model_ = model0.with_free_eta(self.eta_)
        return self


class RecursiveSystemEcf(BaseEstimator):
    """Recursive ECF re-estimation of ARMA parameters with known noise law."""

    def __init__(self, p=1, q=0, family="gaussian", eta=(0.0, 1.0), h=1.0,
                 theta0=None, grid=10, u_max=2.0, weight="optimal",
                 r_p_weight=None, g0="zero", warmup_len=0, theta_margin=0.05,
                 r_floor=1e-10, guard_scale=1e6, record=True):
        self.p = p
        self.q = q
        self.family = family
        self.eta = eta
        self.h = h
        self.theta0 = theta0
        self.grid = grid
        self.u_max = u_max
        self.weight = weight
        self.r_p_weight = r_p_weight
        self.g0 = g0
        self.warmup_len = warmup_len
        self.theta_margin = theta_margin
        self.r_floor = r_floor
        self.guard_scale = guard_scale
        self.record = record

    def fit(self, X, y=None):
        series = check_series(X)
        theta0 = (np.zeros(self.p + self.q) if self.theta0 is None
                  else np.asarray(self.theta0, dtype=float))
        domain = TruncationDomain(theta_margin=self.theta_margin, r_floor=self.r_floor,
                                  guard_scale=self.guard_scale)
        stepper = SystemEcfStepper(
            NoiseModel(self.family, self.eta, self.h), _as_grid(self.grid, self.u_max),
            self.p, self.q, theta0, domain, weight_kind=self.weight,
            r_p_weight=self.r_p_weight, g0=self.g0, warmup_len=self.warmup_len)
        traj = run_stepper(stepper, series, record=self.record)
        self.trajectory_ = traj
        self.theta_ = traj.final["theta_s"]
        self.ar_ = self.theta_[: self.p]
        self.ma_ = self.theta_[self.p:]
        self.reset_count_ = traj.reset_count
        self.n_steps_ = len(series)
        return self


class ThreeStageEcf(BaseEstimator):
    """Joint recursive estimation of ARMA parameters and the noise law."""

    def __init__(self, p=1, q=0, family="gaussian", eta0=(0.0, 1.0), h=1.0,
                 free=None, theta0=None, grid=10, u_max=2.0, grid_s=None,
                 weight="optimal", eta_low=None, eta_high=None, g0="zero",
                 warmup_len=0, theta_margin=0.05, r_floor=1e-10,
                 guard_scale=1e6, record=True):
        self.p = p
        self.q = q
        self.family = family
        self.eta0 = eta0
        self.h = h
        self.free = free
        self.theta0 = theta0
        self.grid = grid
        self.u_max = u_max
        self.grid_s = grid_s
        self.weight = weight
        self.eta_low = eta_low
        self.eta_high = eta_high
        self.g0 = g0
        self.warmup_len = warmup_len
        self.theta_margin = theta_margin
        self.r_floor = r_floor
        self.guard_scale = guard_scale
        self.record = record

    def fit(self, X, y=None):
        series = check_series(X)
        theta0 = (np.zeros(self.p + self.q) if self.theta0 is None
                  else np.asarray(self.theta0, dtype=float))
        domain = TruncationDomain(
            eta_low=None if self.eta_low is None else np.asarray(self.eta_low, float),
            eta_high=None if self.eta_high is None else np.asarray(self.eta_high, float),
            theta_margin=self.theta_margin, r_floor=self.r_floor,
            guard_scale=self.guard_scale)
        grid_e = _as_grid(self.grid, self.u_max)
        grid_s = grid_e if self.grid_s is None else _as_grid(self.grid_s, self.u_max)
        stepper = ThreeStageStepper(
            NoiseModel(self.family, self.eta0, self.h, self.free), grid_e, grid_s,
            self.p, self.q, theta0, domain, weight_kind=self.weight,
            g0=self.g0, warmup_len=self.warmup_len)
        traj = run_stepper(stepper, series, record=self.record)
        self.trajectory_ = traj
        self.eta_ = traj.final["eta"]
        self.theta_ = traj.final["theta_s"]
        self.theta_pe_ = traj.final["theta_p"]
        self.ar_ = self.theta_[: self.p]
        self.ma_ = self.theta_[self.p:]
        self.reset_count_ = traj.reset_count
        self.n_steps_ = len(series)
        return self


class BatchNoiseEcf(BaseEstimator):
    """Off-line ECF minimizer (Gauss-Newton), the oracle for RecursiveNoiseEcf."""

    def __init__(self, family="gaussian", eta0=None, h=1.0, free=None, grid=10,
                 u_max=2.0, weight="optimal"):
        self.family = family
        self.eta0 = eta0
        self.h = h
        self.free = free
        self.grid = grid
        self.u_max = u_max
        self.weight = weight

    def fit(self, X, y=None):
        series = check_series(X)
        if self.eta0 is not None:
            model0 = NoiseModel(self.family, self.eta0, self.h, self.free)
            use_moment = False
        else:
            eta_init = offline.moment_initializer(self.family, series, self.h,
                                                  DEFAULT_PARAM_COUNT[self.family])
            model0 = NoiseModel(self.family, eta_init, self.h, self.free)
            use_moment = True
        fit = offline.offline_ecf_iid(series, model0, _as_grid(self.grid, self.u_max),
                                      self.weight, use_moment_init=use_moment)
        self.fit_ = fit
        self.eta_ = fit.estimate
        self.converged_ = fit.converged
        self.model_ = model0.with_free_eta(fit.estimate)
        return self


class BatchPredictionError(BaseEstimator):
    """Off-line prediction-error ARMA fit, the oracle for the recursive PE block."""

    def __init__(self, p=1, q=0, theta0=None, margin=0.02):
        self.p = p
        self.q = q
        self.theta0 = theta0
        self.margin = margin

    def fit(self, X, y=None):
        series = check_series(X)
        fit = offline.offline_pe(series, self.p, self.q, theta0=self.theta0,
                                 margin=self.margin)
        self.fit_ = fit
        self.theta_ = fit.estimate
        self.ar_ = fit.estimate[: self.p]
        self.ma_ = fit.estimate[self.p:]
        self.converged_ = fit.converged
        return self
