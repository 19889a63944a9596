"""Stochastic-approximation engine with resetting and the three ECF algorithms.

All three algorithms share the same skeleton: at step N a correction vector
is computed from the new datum and the previous estimates, the tentative
update ``x + correction/N`` is formed, and if it leaves the truncation
domain the whole estimate vector is reset to its initial point.

The engine is batched over a leading replication axis so that a Monte Carlo
ensemble advances in lockstep through vectorized numpy ops; a single run is
a batch of one. Per-replication trajectories are independent of the batch
composition.

Algorithms
----------
* ``iid_ecf``: noise parameters from raw i.i.d. increments; Newton step on
  the ECF score with a relaxation recursion for the scaling matrix.
* ``system_ecf``: system parameters with known noise law; ECF score built
  from innovations and their sensitivities, Jacobian tracked by relaxation.
* ``three_stage``: prediction-error block for theta, noise-ECF block on the
  estimated innovations, then ECF re-estimation of theta, all inside one
  pass over the data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import arma
from .ecf import FreqGrid, weight_solve
from .noise import NoiseModel, cf_at, cf_grad_at

R_RIDGE_REL = 1e-8  # ridge, relative to trace/p, for scaling-matrix inversion
C_RIDGE_REL = 1e-10  # ridge for the plug-in cf covariance


class ConfigurationError(ValueError):
    """Run configuration inconsistent or initial point not interior."""


# ---------------------------------------------------------------------------
# truncation domain
# ---------------------------------------------------------------------------


def _max_root_modulus_batch(coeffs: np.ndarray) -> np.ndarray:
    """Max characteristic-root modulus per row of a (R, k) coefficient array."""
    r, k = coeffs.shape
    if k == 0:
        return np.zeros(r)
    with np.errstate(invalid="ignore", over="ignore"):
        if k == 1:
            return np.abs(coeffs[:, 0])
        if k == 2:
            a1, a2 = coeffs[:, 0], coeffs[:, 1]
            disc = a1 * a1 - 4.0 * a2
            real_case = 0.5 * (np.abs(a1) + np.sqrt(np.abs(disc)))
            cplx_case = np.sqrt(np.abs(a2))
            out = np.where(disc >= 0, real_case, cplx_case)
        else:
            comp = np.zeros((r, k, k))
            comp[:, 0, :] = -coeffs
            idx = np.arange(k - 1)
            comp[:, idx + 1, idx] = 1.0
            out = np.abs(np.linalg.eigvals(comp)).max(axis=1)
    return np.where(np.all(np.isfinite(coeffs), axis=1), out, np.inf)


def _min_eig_batch(sym: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue per matrix of a (R, k, k) real symmetric stack."""
    k = sym.shape[-1]
    if k == 0:
        return np.full(sym.shape[0], np.inf)
    if k == 1:
        return sym[:, 0, 0]
    if k == 2:
        tr = sym[:, 0, 0] + sym[:, 1, 1]
        det = sym[:, 0, 0] * sym[:, 1, 1] - sym[:, 0, 1] * sym[:, 1, 0]
        disc = np.sqrt(np.maximum(0.25 * tr * tr - det, 0.0))
        return 0.5 * tr - disc
    finite = np.all(np.isfinite(sym), axis=(1, 2))
    out = np.full(sym.shape[0], -np.inf)
    if np.any(finite):
        out[finite] = np.linalg.eigvalsh(sym[finite])[:, 0]
    return out


@dataclass(frozen=True)
class TruncationDomain:
    """Compact region the estimates are confined to.

    Per-component boxes for the free noise parameters, a stability margin for
    the system parameters, a positive-definiteness floor for the scaling
    matrices, and an overflow guard: corrections whose scaled norm exceeds
    ``guard_scale`` are treated as escapes without evaluating the candidate.
    """

    eta_low: np.ndarray | None = None
    eta_high: np.ndarray | None = None
    theta_margin: float = 0.05
    r_floor: float = 1e-10
    guard_scale: float = 1e6

    def __post_init__(self):
        if (self.eta_low is None) != (self.eta_high is None):
            raise ConfigurationError("eta_low and eta_high must be given together")
        if self.eta_low is not None:
            lo = np.atleast_1d(np.asarray(self.eta_low, dtype=float))
            hi = np.atleast_1d(np.asarray(self.eta_high, dtype=float))
            if lo.shape != hi.shape or np.any(lo >= hi):
                raise ConfigurationError("eta box must satisfy eta_low < eta_high")
            object.__setattr__(self, "eta_low", lo)
            object.__setattr__(self, "eta_high", hi)

    def eta_ok(self, eta: np.ndarray) -> np.ndarray:
        ok = np.all(np.isfinite(eta), axis=-1)
        if self.eta_low is not None and eta.shape[-1]:
            ok = ok & np.all((eta >= self.eta_low) & (eta <= self.eta_high), axis=-1)
        return ok

    def eta_interior(self, eta: np.ndarray) -> bool:
        if self.eta_low is None:
            return bool(np.all(np.isfinite(eta)))
        return bool(np.all((eta > self.eta_low) & (eta < self.eta_high)))

    def theta_ok(self, theta: np.ndarray, p: int, q: int) -> np.ndarray:
        ok = np.all(np.isfinite(theta), axis=-1)
        if p:
            ok = ok & (_max_root_modulus_batch(theta[:, :p]) <= 1.0 - self.theta_margin)
        if q:
            ok = ok & (_max_root_modulus_batch(theta[:, p:]) <= 1.0 - self.theta_margin)
        return ok

    def r_ok(self, r_mat: np.ndarray) -> np.ndarray:
        finite = np.all(np.isfinite(r_mat), axis=(-2, -1))
        safe = np.where(finite[:, None, None], r_mat, 0.0)
        return finite & (_min_eig_batch(safe) > self.r_floor)


# ---------------------------------------------------------------------------
# state / trajectory
# ---------------------------------------------------------------------------


@dataclass
class InitialPoint:
    """Reset target x_0, stored batched (one row per replication)."""

    eta: np.ndarray | None = None
    r_e: np.ndarray | None = None
    theta_p: np.ndarray | None = None
    r_p: np.ndarray | None = None
    theta_s: np.ndarray | None = None
    g_mat: np.ndarray | None = None


@dataclass
class EstimatorState:
    """All per-step recursion variables, batched over ``n_rep`` replications.

    Blocks not used by the active algorithm stay None. Scaling matrices are
    kept symmetric positive definite; parameter blocks stay inside the
    truncation domain after every step.
    """

    n: int
    n_rep: int
    x0: InitialPoint
    reset_count: np.ndarray = field(default=None)  # type: ignore[assignment]
    eta: np.ndarray | None = None  # (R, p_eta)
    r_e: np.ndarray | None = None  # (R, p_eta, p_eta)
    theta_p: np.ndarray | None = None  # (R, d)
    r_p: np.ndarray | None = None  # (R, d, d)
    theta_s: np.ndarray | None = None  # (R, d)
    g_mat: np.ndarray | None = None  # (R, M, d, d) complex
    pfilter: arma.FilterState | None = None
    sfilter: arma.FilterState | None = None
    last_candidates: dict | None = None  # tentative values of the latest step

    def __post_init__(self):
        if self.reset_count is None:
            self.reset_count = np.zeros(self.n_rep, dtype=int)

    _BLOCKS = ("eta", "r_e", "theta_p", "r_p", "theta_s", "g_mat")

    def blocks(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self._BLOCKS if getattr(self, k) is not None}

    def reset_to_x0(self, mask: np.ndarray) -> None:
        for name in self._BLOCKS:
            cur = getattr(self, name)
            if cur is not None:
                cur[mask] = getattr(self.x0, name)[mask]
        self.reset_count[mask] += 1


def resetting_step(state: EstimatorState, corrections: dict[str, np.ndarray], domain: TruncationDomain,
             p: int = 0, q: int = 0) -> np.ndarray:
    """Apply one tentative update x + correction/(n+1) with resetting.

    ``corrections`` maps block names to batched correction arrays. Any
    replication whose candidate leaves the domain (or whose correction trips
    the overflow guard) has its full estimate vector reset to x_0. Returns
    the boolean reset mask. The step counter advances by one.
    """
    gain = 1.0 / (state.n + 1)
    ok = np.ones(state.n_rep, dtype=bool)
    candidates = {}
    with np.errstate(over="ignore", invalid="ignore"):
        for name, corr in corrections.items():
            flat = corr.reshape(state.n_rep, -1)
            norms = np.linalg.norm(np.abs(flat), axis=1)
            ok &= np.isfinite(norms) & (norms * gain <= domain.guard_scale)
            candidates[name] = getattr(state, name) + gain * corr
        for name, cand in candidates.items():
            if name == "eta":
                ok &= domain.eta_ok(cand)
            elif name in ("theta_p", "theta_s"):
                ok &= domain.theta_ok(cand, p, q)
            elif name in ("r_e", "r_p"):
                ok &= domain.r_ok(cand)
            else:  # g_mat: finiteness only
                ok &= np.all(np.isfinite(cand.reshape(state.n_rep, -1)), axis=1)
    for name, cand in candidates.items():
        getattr(state, name)[ok] = cand[ok]
    state.reset_to_x0(~ok)
    state.n += 1
    state.last_candidates = candidates
    return ~ok


# ---------------------------------------------------------------------------
# pure single-shot helpers (also exercised directly by tests)
# ---------------------------------------------------------------------------


def ecf_newton_correction(cf_grad_mat: np.ndarray, score: np.ndarray, k_matrix: np.ndarray,
                          r_mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Noise-block corrections for one datum: Newton step and scaling relaxation.

    Returns (eta correction, scaling-matrix correction); both real.
    """
    kinv_score = weight_solve(k_matrix, score)
    kinv_grad = weight_solve(k_matrix, cf_grad_mat)
    num = np.real(cf_grad_mat.conj().T @ kinv_score)
    info = np.real(cf_grad_mat.conj().T @ kinv_grad)
    info = 0.5 * (info + info.T)
    corr_eta = np.linalg.solve(r_mat, num)
    return corr_eta, info - r_mat


# ---------------------------------------------------------------------------
# batched linear-algebra helpers
# ---------------------------------------------------------------------------


def _regularize_spd(mats: np.ndarray, rel: float, events: list) -> np.ndarray:
    """Ridge any real-symmetric batch member that is not comfortably PD."""
    k = mats.shape[-1]
    if k == 0:
        return mats
    tr = np.einsum("...ii->...", mats)
    ridge = rel * np.maximum(tr, 1.0) / k
    bad = ~(_min_eig_batch(mats) > ridge)
    if np.any(bad):
        events.append(int(np.sum(bad)))
        out = mats.copy()
        eye = np.eye(k)
        factor = np.maximum(ridge[bad], rel / k)
        for _ in range(6):
            out[bad] = out[bad] + factor[:, None, None] * eye
            if np.all(_min_eig_batch(out[bad]) > 0):
                break
            factor = factor * 100.0
        return out
    return mats


def _solve_vec(mats: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    if mats.shape[-1] == 0:
        return vecs
    return np.linalg.solve(mats, vecs[..., None])[..., 0]


def _plug_in_c(family: str, h: float, eta_full: np.ndarray, phi: np.ndarray,
               u: np.ndarray, diff: np.ndarray) -> np.ndarray:
    """Batched cf covariance at per-replication eta with a tiny fixed ridge."""
    phi_diff = cf_at(family, eta_full, h, diff)
    c = phi_diff - phi[:, :, None] * phi[:, None, :].conj()
    c = 0.5 * (c + np.swapaxes(c.conj(), 1, 2))
    tr = np.einsum("rii->r", c).real
    m = u.size
    c += (C_RIDGE_REL * np.maximum(tr, 1.0) / m)[:, None, None] * np.eye(m)
    return c


# ---------------------------------------------------------------------------
# steppers
# ---------------------------------------------------------------------------


class _EcfEvaluator:
    """Per-step cf quantities at the current (batched) noise parameters."""

    def __init__(self, model0: NoiseModel, grid: FreqGrid, weight_kind: str):
        if weight_kind not in ("optimal", "identity"):
            raise ConfigurationError(f"unknown weight kind {weight_kind!r}")
        self.family = model0.family
        self.h = model0.h
        self.free = model0.free
        self.template = model0.eta.copy()
        self.u = grid.u
        self.diff = grid.u[:, None] - grid.u[None, :]
        self.weight_kind = weight_kind
        self.ridge_events: list = []

    def full_eta(self, eta_free: np.ndarray) -> np.ndarray:
        full = np.tile(self.template, (eta_free.shape[0], 1))
        full[:, list(self.free)] = eta_free
        return full

    def cf_and_grad(self, eta_free: np.ndarray):
        full = self.full_eta(eta_free)
        phi = cf_at(self.family, full, self.h, self.u)
        grad = cf_grad_at(self.family, full, self.h, self.u, self.free)
        return full, phi, grad

    def c_batch(self, eta_full: np.ndarray, phi: np.ndarray) -> np.ndarray | None:
        """Plug-in cf covariance per replication; None => identity weighting.

        A tiny unconditional ridge (1e-10 relative) keeps the per-step solve
        safe against rounding-level indefiniteness without per-step
        eigendecompositions; the analysis-path c_matrix() applies the
        conditional, reported regularization instead.
        """
        if self.weight_kind == "identity":
            return None
        return _plug_in_c(self.family, self.h, eta_full, phi, self.u, self.diff)


class IidEcfStepper:
    """Recursive noise-parameter ECF: Newton block + scaling relaxation."""

    algorithm = "iid_ecf"
    needs_system = False

    def __init__(self, model0: NoiseModel, grid: FreqGrid, domain: TruncationDomain,
                 weight_kind: str = "optimal", r_e0: np.ndarray | None = None):
        self.ev = _EcfEvaluator(model0, grid, weight_kind)
        self.domain = domain
        self.model0 = model0
        self.grid = grid
        self.p = self.q = 0
        if domain.eta_low is not None and domain.eta_low.size != model0.p_eta:
            raise ConfigurationError("eta box size must match the number of free parameters")
        if not domain.eta_interior(model0.free_eta):
            raise ConfigurationError("initial eta must be strictly interior to its box")
        self.r_e0 = self._default_r0() if r_e0 is None else np.asarray(r_e0, dtype=float)
        if np.linalg.eigvalsh(self.r_e0)[0] <= domain.r_floor:
            raise ConfigurationError("initial scaling matrix must be positive definite")
        self.ridge_events = self.ev.ridge_events

    def _default_r0(self) -> np.ndarray:
        eta0 = self.model0.free_eta[None, :]
        full, phi, grad = self.ev.cf_and_grad(eta0)
        c = self.ev.c_batch(full, phi)
        kinv_grad = grad if c is None else np.linalg.solve(c, grad)
        info = np.real(np.einsum("rmp,rmq->rpq", grad.conj(), kinv_grad))[0]
        return 0.5 * (info + info.T)

    def init_state(self, n_rep: int) -> EstimatorState:
        pe = self.model0.p_eta
        x0 = InitialPoint(
            eta=np.tile(self.model0.free_eta, (n_rep, 1)),
            r_e=np.tile(self.r_e0, (n_rep, 1, 1)).reshape(n_rep, pe, pe),
        )
        return EstimatorState(n=0, n_rep=n_rep, x0=x0,
                              eta=x0.eta.copy(), r_e=x0.r_e.copy())

    def corrections(self, state: EstimatorState, datum: np.ndarray) -> dict[str, np.ndarray]:
        full, phi, grad = self.ev.cf_and_grad(state.eta)
        score = np.exp(1j * datum[:, None] * self.ev.u) - phi
        c = self.ev.c_batch(full, phi)
        if c is None:
            kinv_score, kinv_grad = score, grad
        else:
            rhs = np.concatenate([score[..., None], grad], axis=2)
            solved = np.linalg.solve(c, rhs)
            kinv_score, kinv_grad = solved[..., 0], solved[..., 1:]
        num = np.real(np.einsum("rmp,rm->rp", grad.conj(), kinv_score))
        info = np.real(np.einsum("rmp,rmq->rpq", grad.conj(), kinv_grad))
        info = 0.5 * (info + np.swapaxes(info, 1, 2))
        r_reg = _regularize_spd(state.r_e, R_RIDGE_REL, self.ridge_events)
        return {"eta": _solve_vec(r_reg, num), "r_e": info - state.r_e}

    def step(self, state: EstimatorState, datum: np.ndarray):
        corr = self.corrections(state, datum)
        reset = resetting_step(state, corr, self.domain)
        return corr, reset


class SystemEcfStepper:
    """Recursive system-parameter ECF with known noise characteristics."""

    algorithm = "system_ecf"
    needs_system = True

    def __init__(self, model_known: NoiseModel, grid: FreqGrid, p: int, q: int,
                 theta0: np.ndarray, domain: TruncationDomain,
                 weight_kind: str = "optimal", r_p_weight: np.ndarray | None = None,
                 g0: np.ndarray | str = "zero", warmup_len: int = 0):
        self.model = model_known
        self.grid = grid
        self.p, self.q = int(p), int(q)
        self.d = self.p + self.q
        self.domain = domain
        self.theta0 = np.asarray(theta0, dtype=float)
        if self.theta0.shape != (self.d,):
            raise ConfigurationError(f"theta0 must have length {self.d}")
        if arma.stability_margin(self.theta0[: self.p], self.theta0[self.p:]) <= domain.theta_margin:
            raise ConfigurationError("initial theta must be strictly interior to the stability domain")
        self.u = grid.u
        self.phi_star = model_known.cf(grid.u)
        if weight_kind not in ("optimal", "identity"):
            raise ConfigurationError(f"unknown weight kind {weight_kind!r}")
        m = grid.m
        if weight_kind == "identity":
            self.cinv = np.eye(m, dtype=complex)
            self.rinv = np.eye(self.d)
        else:
            from .ecf import c_matrix

            self.cinv = np.linalg.inv(c_matrix(model_known, grid))
            rw = np.eye(self.d) if r_p_weight is None else np.asarray(r_p_weight, dtype=float)
            if rw.size and np.linalg.eigvalsh(0.5 * (rw + rw.T))[0] <= 0:
                raise ConfigurationError("r_p weight factor must be positive definite")
            self.rinv = np.linalg.inv(rw) if rw.size else rw
        self.g0_spec = g0
        self.warmup_len = int(warmup_len)
        self.ridge_events: list = []

    def _warm_start(self, n_rep: int, data: np.ndarray | None):
        """Initial Jacobian-tracking block, scaling matrix and filter states.

        With g0="warmup" the first ``warmup_len`` data points are consumed by
        off-line averaging at theta0: they set G_0 (and the prediction-error
        scaling average), advance the filter buffers, and start the step
        counter at warmup_len so the averages keep their weight under the
        exact 1/(n+1) gain schedule.
        """
        m, d = self.grid.m, self.d
        sfilter = arma.FilterState(self.p, self.q, n_rep)
        g0 = np.zeros((n_rep, m, d, d), dtype=complex)
        r_p_warm = None
        start = 0
        if isinstance(self.g0_spec, np.ndarray):
            g0 = np.tile(self.g0_spec.astype(complex), (n_rep, 1, 1, 1))
        elif self.g0_spec == "warmup":
            if data is None or self.warmup_len <= 0:
                raise ConfigurationError("warmup initialization needs data and warmup_len > 0")
            w = self.warmup_len
            if data.shape[-1] <= w:
                raise ConfigurationError("warmup_len must be smaller than the data length")
            prefix = np.atleast_2d(data)[:, :w]  # (R, W)
            ar, ma = self.theta0[: self.p], self.theta0[self.p:]
            eps = arma.innovations_path(ar, ma, prefix)  # (R, W)
            sens = arma.sensitivities_path(ar, ma, prefix, eps)  # (R, W, d)
            e_iu = np.exp(1j * eps[..., None] * self.u)  # (R, W, M)
            outer = sens[..., None, :] * sens[..., :, None]  # (R, W, d, d)
            g0 = np.einsum("m,rnm,rnab->rmab", 1j * self.u, e_iu, outer) / w
            r_p_warm = np.einsum("rna,rnb->rab", sens, sens) / w
            self._seed_filter(sfilter, prefix, eps, sens)
            start = w
        elif self.g0_spec != "zero":
            raise ConfigurationError("g0 must be 'zero', 'warmup' or an array")
        return g0, r_p_warm, start, sfilter

    def _seed_filter(self, filt: arma.FilterState, prefix, eps, sens) -> None:
        for k in range(self.p):
            filt.y_hist[:, k] = prefix[:, -1 - k]
        for k in range(self.q):
            filt.eps_hist[:, k] = eps[:, -1 - k]
            filt.sens_hist[:, k] = sens[:, -1 - k]
        filt.n = prefix.shape[1]

    def init_state(self, n_rep: int, data: np.ndarray | None = None) -> EstimatorState:
        g0, _, start, sfilter = self._warm_start(n_rep, data)
        x0 = InitialPoint(theta_s=np.tile(self.theta0, (n_rep, 1)), g_mat=g0.copy())
        return EstimatorState(
            n=start, n_rep=n_rep, x0=x0,
            theta_s=x0.theta_s.copy(),
            g_mat=g0,
            sfilter=sfilter,
        )

    def _s_branch(self, theta_s, g_mat, sfilter, datum, phi_vec, c_weight, r_weight):
        """Shared by the known-noise and three-stage steppers.

        phi_vec: (R, M) cf at the eta used in the score. The weighting factors
        come in two forms: a fixed precomputed INVERSE ((M, M) resp. (d, d)),
        or a batched matrix stack ((R, M, M) resp. (R, d, d)) to solve
        against. Returns corrections for theta_s and g_mat.
        """
        eps, sens = sfilter.step(theta_s[:, : self.p], theta_s[:, self.p:], datum)
        e_iu = np.exp(1j * eps[:, None] * self.u)  # (R, M)
        s_vec = e_iu - phi_vec
        outer = sens[:, None, :] * sens[:, :, None]  # (R, d, d) [a, b]
        h_theta = (1j * self.u)[None, :, None, None] * e_iu[:, :, None, None] * outer[:, None, :, :]
        if self.d == 0:
            return eps, {"theta_s": np.zeros((theta_s.shape[0], 0)),
                         "g_mat": h_theta - g_mat}
        if c_weight.ndim == 2:  # precomputed inverse
            w = s_vec @ c_weight.T  # Sum_l Cinv[k,l] s_l
            cg = np.einsum("kl,rlaj->rkaj", c_weight, g_mat)
        else:
            w = _solve_vec(c_weight, s_vec)
            r, m = g_mat.shape[0], self.grid.m
            cg = np.linalg.solve(c_weight, g_mat.reshape(r, m, -1)).reshape(g_mat.shape)
        if r_weight.ndim == 2:  # precomputed inverse
            t = sens @ r_weight.T
            rcg = np.einsum("ab,rkbj->rkaj", r_weight, cg)
        else:
            t = _solve_vec(r_weight, sens)
            r, m = g_mat.shape[0], self.grid.m
            x = cg.transpose(0, 2, 1, 3).reshape(r, self.d, m * self.d)
            rcg = np.linalg.solve(r_weight, x).reshape(r, self.d, m, self.d).transpose(0, 2, 1, 3)
        num = np.real(np.einsum("rk,rkaj,ra->rj", w, g_mat.conj(), t))
        r_s = np.real(np.einsum("rkai,rkaj->rij", g_mat.conj(), rcg))
        r_s = 0.5 * (r_s + np.swapaxes(r_s, 1, 2))
        r_s = _regularize_spd(r_s, R_RIDGE_REL, self.ridge_events)
        return eps, {"theta_s": -_solve_vec(r_s, num), "g_mat": h_theta - g_mat}

    def corrections(self, state: EstimatorState, datum: np.ndarray) -> dict[str, np.ndarray]:
        phi_vec = np.broadcast_to(self.phi_star, (state.n_rep, self.grid.m))
        _, corr = self._s_branch(state.theta_s, state.g_mat, state.sfilter, datum,
                                 phi_vec, self.cinv, self.rinv)
        return corr

    def step(self, state: EstimatorState, datum: np.ndarray):
        corr = self.corrections(state, datum)
        reset = resetting_step(state, corr, self.domain, self.p, self.q)
        return corr, reset


class ThreeStageStepper(SystemEcfStepper):
    """Joint system + noise estimation: PE block, noise-ECF block, re-estimation."""

    algorithm = "three_stage"
    needs_system = True

    def __init__(self, model0: NoiseModel, grid_e: FreqGrid, grid_s: FreqGrid | None,
                 p: int, q: int, theta0: np.ndarray, domain: TruncationDomain,
                 weight_kind: str = "optimal", r_e0: np.ndarray | None = None,
                 r_p0: np.ndarray | None = None, g0: np.ndarray | str = "zero",
                 warmup_len: int = 0):
        grid_s = grid_e if grid_s is None else grid_s
        super().__init__(model0, grid_s, p, q, theta0, domain,
                         weight_kind="identity", g0=g0, warmup_len=warmup_len)
        self.weight_kind = weight_kind
        if weight_kind not in ("optimal", "identity"):
            raise ConfigurationError(f"unknown weight kind {weight_kind!r}")
        self.ev_e = _EcfEvaluator(model0, grid_e, weight_kind)
        self.grid_e = grid_e
        self.same_grid = np.array_equal(grid_e.u, grid_s.u)
        self.iid = IidEcfStepper(model0, grid_e, domain, weight_kind, r_e0)
        self.iid.ridge_events = self.ridge_events
        self.iid.ev.ridge_events = self.ridge_events
        self.r_e0 = self.iid.r_e0
        self.r_p0 = np.eye(self.d) if r_p0 is None else np.asarray(r_p0, dtype=float)
        if self.d and np.linalg.eigvalsh(self.r_p0)[0] <= domain.r_floor:
            raise ConfigurationError("initial r_p must be positive definite")

    def init_state(self, n_rep: int, data: np.ndarray | None = None) -> EstimatorState:
        g0, r_p_warm, start, sfilter = self._warm_start(n_rep, data)
        pe, d = self.model.p_eta, self.d
        if r_p_warm is None:
            r_p0 = np.tile(self.r_p0, (n_rep, 1, 1)).reshape(n_rep, d, d)
            pfilter = arma.FilterState(self.p, self.q, n_rep)
        else:
            # warm averages can be near-singular for short prefixes
            r_p0 = r_p_warm + 1e-6 * np.eye(d)
            pfilter = sfilter.copy()
        x0 = InitialPoint(
            eta=np.tile(self.model.free_eta, (n_rep, 1)),
            r_e=np.tile(self.r_e0, (n_rep, 1, 1)).reshape(n_rep, pe, pe),
            theta_p=np.tile(self.theta0, (n_rep, 1)),
            r_p=r_p0,
            theta_s=np.tile(self.theta0, (n_rep, 1)),
            g_mat=g0.copy(),
        )
        return EstimatorState(
            n=start, n_rep=n_rep, x0=x0,
            eta=x0.eta.copy(), r_e=x0.r_e.copy(),
            theta_p=x0.theta_p.copy(), r_p=x0.r_p.copy(),
            theta_s=x0.theta_s.copy(), g_mat=g0,
            pfilter=pfilter,
            sfilter=sfilter,
        )

    def corrections(self, state: EstimatorState, datum: np.ndarray) -> dict[str, np.ndarray]:
        # (i) prediction-error block
        eps_p, sens_p = state.pfilter.step(
            state.theta_p[:, : self.p], state.theta_p[:, self.p:], datum)
        r_p_reg = _regularize_spd(state.r_p, R_RIDGE_REL, self.ridge_events)
        corr_theta_p = -_solve_vec(r_p_reg, sens_p * eps_p[:, None])
        corr_r_p = sens_p[:, None, :] * sens_p[:, :, None] - state.r_p
        # (ii) noise-ECF block fed by the PE innovations
        full, phi_e, grad = self.ev_e.cf_and_grad(state.eta)
        score = np.exp(1j * eps_p[:, None] * self.ev_e.u) - phi_e
        c_e = self.ev_e.c_batch(full, phi_e)
        if c_e is None:
            kinv_score, kinv_grad = score, grad
        else:
            rhs = np.concatenate([score[..., None], grad], axis=2)
            solved = np.linalg.solve(c_e, rhs)
            kinv_score, kinv_grad = solved[..., 0], solved[..., 1:]
        num = np.real(np.einsum("rmp,rm->rp", grad.conj(), kinv_score))
        info = np.real(np.einsum("rmp,rmq->rpq", grad.conj(), kinv_grad))
        info = 0.5 * (info + np.swapaxes(info, 1, 2))
        r_e_reg = _regularize_spd(state.r_e, R_RIDGE_REL, self.ridge_events)
        corr_eta = _solve_vec(r_e_reg, num)
        # (iii) system re-estimation block at the current eta
        if self.same_grid:
            phi_s = phi_e
        else:
            phi_s = cf_at(self.model.family, full, self.model.h, self.u)
        if self.weight_kind == "identity":
            cinv = np.eye(self.grid.m, dtype=complex)
            rinv = np.eye(self.d)
        else:
            if self.same_grid and c_e is not None:
                cinv = c_e
            else:
                cinv = self._c_s_batch(full, phi_s)
            rinv = r_p_reg
        _, s_corr = self._s_branch(state.theta_s, state.g_mat, state.sfilter, datum,
                                   phi_s, cinv, rinv)
        return {
            "theta_p": corr_theta_p, "r_p": corr_r_p,
            "eta": corr_eta, "r_e": info - state.r_e,
            "theta_s": s_corr["theta_s"], "g_mat": s_corr["g_mat"],
        }

    def _c_s_batch(self, eta_full: np.ndarray, phi_s: np.ndarray) -> np.ndarray:
        diff = self.u[:, None] - self.u[None, :]
        return _plug_in_c(self.model.family, self.model.h, eta_full, phi_s, self.u, diff)


# ---------------------------------------------------------------------------
# run driver
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    """Time-indexed record of one run: estimates, reset flags, final state.

    Reset rows carry the pre-reset escaping candidate values.
    """

    steps: np.ndarray
    columns: dict[str, np.ndarray]
    resets: np.ndarray
    reset_count: int
    final: dict[str, np.ndarray]
    ridge_events: int = 0

    def __len__(self) -> int:
        return self.steps.size

    def column_names(self) -> list[str]:
        names = []
        for key, arr in self.columns.items():
            width = arr.shape[1] if arr.ndim > 1 else 1
            if width == 1:
                names.append(key)
            else:
                names.extend(f"{key}_{i}" for i in range(width))
        return names


def _record_blocks(state: EstimatorState) -> dict[str, np.ndarray]:
    out = {}
    for name in ("eta", "theta_p", "theta_s"):
        block = getattr(state, name)
        if block is not None:
            out[name] = block
    for name in ("r_e", "r_p"):
        block = getattr(state, name)
        if block is not None:
            out[name] = block.reshape(state.n_rep, -1)
    if state.g_mat is not None:
        out["g_norm"] = np.linalg.norm(
            state.g_mat.reshape(state.n_rep, -1), axis=1)[:, None]
    return out


def run_stepper(stepper, data: np.ndarray, record: bool = True):
    """Drive a stepper over a data array.

    data of shape (N,) runs a single replication and returns a Trajectory;
    shape (R, N) advances R replications in lockstep and returns a list of
    per-replication Trajectories (or finals only when record=False).
    """
    data = np.asarray(data, dtype=float)
    single = data.ndim == 1
    batch = data[None, :] if single else data
    n_rep, n_steps = batch.shape
    if stepper.needs_system:
        state = stepper.init_state(n_rep, batch)
    else:
        state = stepper.init_state(n_rep)
    recorded: dict[str, np.ndarray] = {}
    resets = np.zeros((n_steps, n_rep), dtype=bool)
    if record and n_steps:
        for name, arr in _record_blocks(state).items():
            recorded[name] = np.empty((n_steps,) + arr.shape, dtype=arr.dtype)
    start = state.n  # warm-up consumed this many data points into the averages
    if record and n_steps:
        for name, arr in _record_blocks(state).items():
            recorded[name][:start] = arr
    for i in range(start, n_steps):
        _, reset = stepper.step(state, batch[:, i])
        resets[i] = reset
        if record:
            snap = _record_blocks(state)
            if np.any(reset):
                # reset rows carry the escaping candidate values
                esc = _record_blocks(_snapshot_like(state, state.last_candidates))
                for name in snap:
                    snap[name] = snap[name].copy()
                    snap[name][reset] = esc[name][reset]
            for name, arr in snap.items():
                recorded[name][i] = arr
    trajectories = []
    for r in range(n_rep):
        final = {k: v[r].copy() for k, v in state.blocks().items()}
        final["reset_count"] = int(state.reset_count[r])
        cols = {k: v[:, r] for k, v in recorded.items()} if record else {}
        trajectories.append(Trajectory(
            steps=np.arange(1, n_steps + 1),
            columns=cols,
            resets=resets[:, r],
            reset_count=int(state.reset_count[r]),
            final=final,
            ridge_events=int(sum(getattr(stepper, "ridge_events", []))),
        ))
    return trajectories[0] if single else trajectories


def _snapshot_like(state: EstimatorState, blocks: dict[str, np.ndarray]) -> EstimatorState:
    snap = EstimatorState(n=state.n, n_rep=state.n_rep, x0=state.x0,
                          reset_count=state.reset_count)
    for k, v in blocks.items():
        setattr(snap, k, v)
    return snap
