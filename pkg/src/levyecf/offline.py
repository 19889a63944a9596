"""Desk-scale off-line oracles: batch ECF minimization and prediction-error LS.

These deliberately minimal Gauss-Newton fits cross-validate the recursive
methods: on the same data a recursive estimate and its off-line counterpart
must agree to within a few asymptotic standard errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import arma
from .ecf import FreqGrid, IdentifiabilityError, c_matrix, weight_solve
from .noise import NoiseModel

MAX_ITER = 200
STEP_TOL = 1e-8


@dataclass
class OfflineFit:
    """Result of one batch fit; objective is non-increasing across accepted steps."""

    estimate: np.ndarray
    objective: float
    iterations: int
    converged: bool
    objective_history: list = field(default_factory=list)
    message: str = ""


def _sample_moments(data: np.ndarray):
    mean = float(np.mean(data))
    var = float(np.var(data))
    centered = data - mean
    kurt_ex = float(np.mean(centered**4) / max(var, 1e-300) ** 2 - 3.0)
    return mean, var, kurt_ex


def moment_initializer(family: str, data: np.ndarray, h: float, p_full: int) -> np.ndarray:
    """Method-of-moments starting point; crude but inside the family domain."""
    mean, var, kurt_ex = _sample_moments(data)
    var = max(var, 1e-12)
    if family == "gaussian":
        return np.array([mean / h, np.sqrt(var / h)])
    if family == "variance_gamma":
        nu = h * max(kurt_ex, 0.1) / 3.0
        out = [np.sqrt(var / h), nu, 0.0]
        if p_full == 4:
            out.append(mean / h)
        return np.array(out)
    k = max(kurt_ex, 0.05)
    alpha = np.sqrt(3.0 / (var * k))
    delta = np.sqrt(3.0 * var / k) / h
    return np.array([alpha, 0.0, delta, mean / h])


def offline_ecf_iid(data, model0: NoiseModel, grid: FreqGrid,
                    weight_kind: str = "optimal",
                    use_moment_init: bool = True) -> OfflineFit:
    """Minimize the weighted squared norm of the sample-averaged ECF score.

    Gauss-Newton with step halving; the weight is refreshed at the current
    estimate each iteration when ``weight_kind`` is "optimal". Free
    parameters start from a moment-based initializer (unless disabled), the
    fixed ones stay at their model0 values.
    """
    data = np.asarray(data, dtype=float)
    p = model0.p_eta
    if data.size < 10 * p:
        raise ValueError(f"need at least {10 * p} observations, got {data.size}")
    if grid.m < p:
        raise IdentifiabilityError(
            f"grid has {grid.m} frequencies but {p} parameters are free")
    e_iu = np.exp(1j * np.outer(data, grid.u)).mean(axis=0)  # sample cf on the grid

    def pieces(eta_free):
        model = model0.with_free_eta(eta_free)
        hbar = e_iu - model.cf(grid.u)
        grad = model.cf_grad(grid.u)
        if weight_kind == "identity":
            kinv_h, kinv_grad = hbar, grad
        else:
            k_mat = c_matrix(model, grid)
            kinv_h = weight_solve(k_mat, hbar)
            kinv_grad = weight_solve(k_mat, grad)
        obj = float(np.real(hbar.conj() @ kinv_h))
        return obj, hbar, grad, kinv_h, kinv_grad

    def in_domain(eta_free):
        try:
            model0.with_free_eta(eta_free)
            return True
        except ValueError:
            return False

    if use_moment_init:
        init_full = moment_initializer(model0.family, data, model0.h, model0.eta.size)
        eta = init_full[list(model0.free)]
        if not in_domain(eta):
            eta = model0.free_eta.copy()
    else:
        eta = model0.free_eta.copy()

    obj, *_ = pieces(eta)
    history = [obj]
    converged = False
    message = "max iterations reached"
    iterations = 0
    for iterations in range(1, MAX_ITER + 1):
        _, hbar, grad, kinv_h, kinv_grad = pieces(eta)
        info = np.real(grad.conj().T @ kinv_grad)
        info = 0.5 * (info + info.T)
        sv = np.linalg.svd(grad, compute_uv=False)
        if sv[-1] < 1e-12 * max(sv[0], 1e-300):
            raise IdentifiabilityError("cf gradient rank-deficient at the current estimate")
        step = np.linalg.solve(info, np.real(grad.conj().T @ kinv_h))
        alpha = 1.0
        accepted = False
        while alpha >= 1e-12:
            cand = eta + alpha * step
            if in_domain(cand):
                cand_obj, *_ = pieces(cand)
                if cand_obj <= obj:
                    eta, obj = cand, cand_obj
                    history.append(obj)
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            message = "no descent step found"
            converged = np.linalg.norm(step) < STEP_TOL
            break
        if np.linalg.norm(alpha * step) < STEP_TOL:
            converged = True
            message = "step tolerance reached"
            break
    return OfflineFit(estimate=eta, objective=obj, iterations=iterations,
                      converged=converged, objective_history=history, message=message)


def _project_stable(theta: np.ndarray, p: int, q: int, margin: float) -> np.ndarray:
    """Shrink any root outside the margin radius back to the boundary."""
    out = theta.copy()
    for coeffs, start in ((theta[:p], 0), (theta[p:], p)):
        if coeffs.size == 0:
            continue
        roots = np.roots(np.concatenate(([1.0], coeffs)))
        radius = 1.0 - margin
        mods = np.abs(roots)
        if np.any(mods > radius):
            roots = np.where(mods > radius, roots * (0.999 * radius / np.maximum(mods, 1e-300)),
                             roots)
            poly = np.real(np.poly(roots))
            out[start:start + coeffs.size] = poly[1:]
    return out


def _ar_init(data: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return np.empty(0)
    n = data.size
    rows = np.stack([-data[p - i - 1: n - i - 1] for i in range(p)], axis=1)
    target = data[p:]
    coef, *_ = np.linalg.lstsq(rows, target, rcond=None)
    return -coef  # y_n = -sum a_i y_{n-i} + ...


def offline_pe(data, p: int, q: int, theta0: np.ndarray | None = None,
               margin: float = 0.02) -> OfflineFit:
    """Batch prediction-error fit: Gauss-Newton on the innovation residuals.

    Candidates outside the stability margin are projected back onto its
    boundary before evaluation; the same projection rescues an unstable
    initialization.
    """
    data = np.asarray(data, dtype=float)
    d = p + q
    if d == 0:
        return OfflineFit(estimate=np.empty(0), objective=float(np.sum(data**2)),
                          iterations=0, converged=True, message="nothing to fit")
    if data.size < 10 * d:
        raise ValueError(f"need at least {10 * d} observations, got {data.size}")
    if theta0 is None:
        theta = np.concatenate([_ar_init(data, p), np.zeros(q)])
    else:
        theta = np.asarray(theta0, dtype=float).copy()
    theta = _project_stable(theta, p, q, margin)

    def sse(theta_vec):
        eps = arma.innovations_path(theta_vec[:p], theta_vec[p:], data)
        return float(eps @ eps), eps

    obj, eps = sse(theta)
    history = [obj]
    converged = False
    message = "max iterations reached"
    iterations = 0
    for iterations in range(1, MAX_ITER + 1):
        sens = arma.sensitivities_path(theta[:p], theta[p:], data, eps)
        gram = sens.T @ sens
        step = -np.linalg.solve(gram + 1e-12 * np.trace(gram) / d * np.eye(d), sens.T @ eps)
        alpha = 1.0
        accepted = False
        while alpha >= 1e-12:
            cand = _project_stable(theta + alpha * step, p, q, margin)
            cand_obj, cand_eps = sse(cand)
            if cand_obj <= obj:
                moved = np.linalg.norm(cand - theta)
                theta, obj, eps = cand, cand_obj, cand_eps
                history.append(obj)
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            message = "no descent step found"
            converged = np.linalg.norm(step) < STEP_TOL
            break
        if moved < STEP_TOL:
            converged = True
            message = "step tolerance reached"
            break
    return OfflineFit(estimate=theta, objective=obj, iterations=iterations,
                      converged=converged, objective_history=history, message=message)
