"""Associated-ODE tooling: right-hand sides, integration, Jacobians, Lyapunov.

The recursions are analyzed through the ODE ``dx/dt = F(x)`` whose right-hand
side is the expected correction at frozen parameters (time-homogeneous form;
the 1/t-scaled variant is the same flow up to reparameterization).

Two RHS families are provided:

* ``IidOde``: the noise-only case, where every expectation has a closed form.
* ``SystemOde``: the system cases, where frozen-parameter expectations are
  time-averages over one fixed-seed simulated path. By default each average
  is control-variated against the same summand evaluated at the true
  parameter (whose exact mean is known), which makes F vanish exactly at the
  truth and keeps finite differences clean; plain averaging is available via
  ``control_variates=False``.

State packing: parameter blocks in declared order, symmetric matrices as
upper-triangle vectors, the complex Jacobian-tracking block as stacked real
and imaginary parts. Block names and slices are exposed for structure tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from . import arma
from .ecf import FreqGrid, c_matrix, weight_solve
from .noise import NoiseModel


# ---------------------------------------------------------------------------
# packing helpers
# ---------------------------------------------------------------------------


def vech(mat: np.ndarray) -> np.ndarray:
    k = mat.shape[0]
    iu = np.triu_indices(k)
    return mat[iu]


def unvech(v: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((k, k))
    iu = np.triu_indices(k)
    out[iu] = v
    out = out + out.T - np.diag(np.diag(out))
    return out


def _blocks(layout: list[tuple[str, int]]) -> dict[str, slice]:
    out, start = {}, 0
    for name, size in layout:
        out[name] = slice(start, start + size)
        start += size
    return out


# ---------------------------------------------------------------------------
# i.i.d. ECF ODE (closed form)
# ---------------------------------------------------------------------------


class IidOde:
    """Associated ODE of the recursive i.i.d. ECF method, in closed form.

    State: (eta, vech of the scaling matrix). The eta block relaxes by a
    Newton step against the expected score, the scaling block relaxes toward
    the current information matrix.
    """

    def __init__(self, model_true: NoiseModel, grid: FreqGrid, weight_kind: str = "optimal"):
        self.model_true = model_true
        self.grid = grid
        self.weight_kind = weight_kind
        self.pe = model_true.p_eta
        self.blocks = _blocks([("eta", self.pe), ("r_e", self.pe * (self.pe + 1) // 2)])
        self.dim = self.pe + self.pe * (self.pe + 1) // 2
        self._phi_true = model_true.cf(grid.u)

    def pack(self, eta: np.ndarray, r_e: np.ndarray) -> np.ndarray:
        return np.concatenate([np.asarray(eta, dtype=float), vech(np.asarray(r_e, dtype=float))])

    def unpack(self, x: np.ndarray):
        return x[self.blocks["eta"]], unvech(x[self.blocks["r_e"]], self.pe)

    def _info_and_score(self, eta: np.ndarray):
        model = self.model_true.with_free_eta(eta)
        grad = model.cf_grad(self.grid.u)
        g_vec = self._phi_true - model.cf(self.grid.u)
        if self.weight_kind == "identity":
            kinv_grad, kinv_g = grad, g_vec
        else:
            k_mat = c_matrix(model, self.grid)
            kinv_grad = weight_solve(k_mat, grad)
            kinv_g = weight_solve(k_mat, g_vec)
        info = np.real(grad.conj().T @ kinv_grad)
        info = 0.5 * (info + info.T)
        num = np.real(grad.conj().T @ kinv_g)
        return info, num

    def rhs(self, x: np.ndarray) -> np.ndarray:
        eta, r_e = self.unpack(x)
        info, num = self._info_and_score(eta)
        eta_dot = np.linalg.solve(r_e, num)
        return np.concatenate([eta_dot, vech(info - r_e)])

    def equilibrium(self) -> np.ndarray:
        info, _ = self._info_and_score(self.model_true.free_eta)
        return self.pack(self.model_true.free_eta, info)

    def in_domain(self, x: np.ndarray) -> bool:
        if not np.all(np.isfinite(x)):
            return False
        eta, r_e = self.unpack(x)
        try:
            self.model_true.with_free_eta(eta)
        except ValueError:
            return False
        return np.linalg.eigvalsh(r_e)[0] > 1e-12


# ---------------------------------------------------------------------------
# system ODEs (Monte Carlo frozen-parameter expectations)
# ---------------------------------------------------------------------------


class SystemOde:
    """Frozen-parameter ODE for the known-noise and three-stage algorithms.

    Every expectation is a time-average over one simulated path at the true
    system (fixed seed, transient discarded). With ``control_variates`` the
    same-path summand at the true parameter is subtracted and its exact mean
    added back, so the RHS vanishes identically at the equilibrium point
    returned by :meth:`equilibrium` (for zero-mean driving noise the
    prediction-error block's exact mean is zero; for nonzero-mean noise the
    correct nonzero mean is used, and the truth is then genuinely not an
    equilibrium of the prediction-error block).
    """

    def __init__(self, model_true: NoiseModel, theta_true: arma.ArmaParams,
                 algorithm: str = "three_stage", grid_e: FreqGrid | None = None,
                 grid_s: FreqGrid | None = None, weight_kind: str = "optimal",
                 n_path: int = 50_000, seed: int = 1234, transient: int | None = None,
                 control_variates: bool = True, r_p_weight: np.ndarray | None = None):
        if algorithm not in ("system_ecf", "three_stage"):
            raise ValueError(f"unknown system algorithm {algorithm!r}")
        if algorithm == "three_stage" and grid_e is None:
            raise ValueError("three_stage needs grid_e")
        if grid_s is None:
            grid_s = grid_e
        if grid_s is None:
            raise ValueError("a system grid is required")
        self.model_true = model_true
        self.theta_true = theta_true
        self.algorithm = algorithm
        self.grid_e, self.grid_s = grid_e, grid_s
        self.weight_kind = weight_kind
        self.cv = control_variates
        self.p, self.q = theta_true.p, theta_true.q
        self.d = theta_true.p_theta
        self.pe = model_true.p_eta
        m = grid_s.m

        e = model_true.sample(n_path, seed).values
        y = arma.simulate(theta_true, e)
        skip = 10 * max(self.p, self.q, 1) if transient is None else int(transient)
        self._y = y
        self._keep = slice(skip, None)
        self._e = e[self._keep]
        sens_true = arma.sensitivities_path(theta_true.ar, theta_true.ma, y)[self._keep]
        self._sens_true = sens_true
        self._n_kept = self._e.size

        # exact control means
        mean_e = _noise_mean(model_true)
        self._phi_true_e = model_true.cf(grid_e.u) if grid_e is not None else None
        self._phi_true_s = model_true.cf(grid_s.u)
        # stationary mean of the sensitivity vector at truth: AR part mean_e/A(1),
        # MA part -mean_e/C(1)
        a1 = 1.0 + np.sum(theta_true.ar)
        c1 = 1.0 + np.sum(theta_true.ma)
        sens_mean = np.concatenate([
            np.full(self.p, mean_e / a1), np.full(self.q, -mean_e / c1)])
        self._sens_mean = sens_mean
        self._w_p_exact = mean_e * sens_mean

        # same-path baselines at the true parameter
        if grid_e is not None:
            self._base_e_cf = np.exp(1j * np.outer(self._e, grid_e.u)).mean(axis=0)
        eiu_s = np.exp(1j * np.outer(self._e, grid_s.u))
        self._base_h_s = np.einsum("nm,nd->md", eiu_s - self._phi_true_s, sens_true) / self._n_kept
        self._base_w_p = sens_true.T @ self._e / self._n_kept
        self._r_p_path = sens_true.T @ sens_true / self._n_kept
        self._g_path = np.einsum(
            "m,nm,na,nb->mab", 1j * grid_s.u, eiu_s, sens_true, sens_true) / self._n_kept

        if weight_kind == "identity":
            self._rinv_weight = np.eye(self.d)
        elif algorithm == "system_ecf":
            rw = np.eye(self.d) if r_p_weight is None else np.asarray(r_p_weight, dtype=float)
            self._rinv_weight = np.linalg.inv(rw) if rw.size else rw
        else:
            self._rinv_weight = None  # three_stage: R_P block of the state

        layout = []
        if algorithm == "three_stage":
            layout += [("theta_p", self.d), ("r_p", self.d * (self.d + 1) // 2),
                       ("eta", self.pe), ("r_e", self.pe * (self.pe + 1) // 2)]
        layout += [("theta_s", self.d), ("g_re", m * self.d * self.d),
                   ("g_im", m * self.d * self.d)]
        self.blocks = _blocks(layout)
        self.dim = sum(s.stop - s.start for s in self.blocks.values())

    # -- packing ------------------------------------------------------------

    def pack(self, **kw) -> np.ndarray:
        x = np.zeros(self.dim)
        for name, sl in self.blocks.items():
            if name == "g_re":
                x[sl] = kw["g_mat"].real.ravel()
            elif name == "g_im":
                x[sl] = kw["g_mat"].imag.ravel()
            elif name in ("r_p", "r_e"):
                x[sl] = vech(kw[name])
            else:
                x[sl] = kw[name]
        return x

    def unpack(self, x: np.ndarray) -> dict:
        out = {}
        m = self.grid_s.m
        for name, sl in self.blocks.items():
            if name == "g_re":
                g = x[sl].reshape(m, self.d, self.d) + 1j * x[self.blocks["g_im"]].reshape(
                    m, self.d, self.d)
                out["g_mat"] = g
            elif name == "g_im":
                continue
            elif name == "r_p":
                out[name] = unvech(x[sl], self.d)
            elif name == "r_e":
                out[name] = unvech(x[sl], self.pe)
            else:
                out[name] = x[sl]
        return out

    # -- frozen-parameter expectations ---------------------------------------

    def _filtered(self, theta_vec: np.ndarray):
        eps = arma.innovations_path(theta_vec[: self.p], theta_vec[self.p:], self._y)
        sens = arma.sensitivities_path(theta_vec[: self.p], theta_vec[self.p:], self._y, eps)
        return eps[self._keep], sens[self._keep]

    def _pe_expectations(self, theta_p: np.ndarray):
        eps, sens = self._filtered(theta_p)
        w_hat = sens.T @ eps / self._n_kept
        r_hat = sens.T @ sens / self._n_kept
        if self.cv:
            w_hat = w_hat - self._base_w_p + self._w_p_exact
        cf_p = np.exp(1j * np.outer(eps, self.grid_e.u)).mean(axis=0) if self.grid_e else None
        if self.cv and cf_p is not None:
            cf_p = cf_p - self._base_e_cf + self._phi_true_e
        return w_hat, r_hat, cf_p

    def _s_expectations(self, theta_s: np.ndarray, phi_at_eta: np.ndarray):
        eps, sens = self._filtered(theta_s)
        eiu = np.exp(1j * np.outer(eps, self.grid_s.u))
        h_s = np.einsum("nm,nd->md", eiu - phi_at_eta, sens) / self._n_kept
        if self.cv:
            # same-path baseline at the true theta with the same eta plug-in;
            # its exact mean is (phi* - phi(eta)) x E[sens at truth]
            base = self._base_h_s + np.outer(
                self._phi_true_s - phi_at_eta, self._sens_true.mean(axis=0))
            exact = np.outer(self._phi_true_s - phi_at_eta, self._sens_mean)
            h_s = h_s - base + exact
        g_hat = np.einsum("m,nm,na,nb->mab", 1j * self.grid_s.u, eiu, sens, sens) / self._n_kept
        return h_s, g_hat

    # -- ODE surface ----------------------------------------------------------

    def rhs(self, x: np.ndarray, with_se: bool = False):
        parts = self.unpack(x)
        out = np.zeros(self.dim)
        se: dict[str, float] = {}
        theta_s = parts["theta_s"]
        if self.algorithm == "three_stage":
            theta_p, r_p, eta, r_e = (parts["theta_p"], parts["r_p"],
                                      parts["eta"], parts["r_e"])
            model_eta = self.model_true.with_free_eta(eta)
            w_hat, r_hat, cf_p = self._pe_expectations(theta_p)
            out[self.blocks["theta_p"]] = -np.linalg.solve(r_p, w_hat) if self.d else []
            out[self.blocks["r_p"]] = vech(r_hat - r_p)
            grad = model_eta.cf_grad(self.grid_e.u)
            h_e = cf_p - model_eta.cf(self.grid_e.u)
            if self.weight_kind == "identity":
                kinv_grad, kinv_h = grad, h_e
            else:
                k_e = c_matrix(model_eta, self.grid_e)
                kinv_grad = weight_solve(k_e, grad)
                kinv_h = weight_solve(k_e, h_e)
            info = np.real(grad.conj().T @ kinv_grad)
            info = 0.5 * (info + info.T)
            out[self.blocks["eta"]] = np.linalg.solve(r_e, np.real(grad.conj().T @ kinv_h))
            out[self.blocks["r_e"]] = vech(info - r_e)
            phi_s = model_eta.cf(self.grid_s.u)
            rinv = np.linalg.inv(r_p) if self.d else np.zeros((0, 0))
            c_s_model = model_eta
        else:
            model_eta = self.model_true
            phi_s = self._phi_true_s
            rinv = self._rinv_weight
            c_s_model = self.model_true

        h_s, g_hat = self._s_expectations(theta_s, phi_s)
        g_mat = parts["g_mat"]
        if self.d:
            if self.weight_kind == "identity":
                cinv_h = h_s
                cinv_g = g_mat
            else:
                k_s = c_matrix(c_s_model, self.grid_s)
                cinv_h = weight_solve(k_s, h_s)
                cinv_g = weight_solve(k_s, g_mat.reshape(self.grid_s.m, -1)).reshape(g_mat.shape)
            # G^H (C^-1 (x) Rinv) applied blockwise
            num = np.real(np.einsum("kaj,ka->j", g_mat.conj(), cinv_h @ rinv.T))
            r_s = np.real(np.einsum("kai,kab,kbj->ij", g_mat.conj(),
                                    np.broadcast_to(rinv, (self.grid_s.m, self.d, self.d)),
                                    cinv_g))
            r_s = 0.5 * (r_s + r_s.T)
            out[self.blocks["theta_s"]] = -np.linalg.solve(r_s, num)
        g_dot = g_hat - g_mat
        out[self.blocks["g_re"]] = g_dot.real.ravel()
        out[self.blocks["g_im"]] = g_dot.imag.ravel()
        if with_se:
            se = self._standard_errors(parts)
            return out, se
        return out

    def _standard_errors(self, parts: dict) -> dict[str, float]:
        """Naive per-block MC standard errors of the time-averaged summands."""
        theta_s = parts["theta_s"]
        eps, sens = self._filtered(theta_s)
        eiu = np.exp(1j * np.outer(eps, self.grid_s.u))
        se = {}
        if self.algorithm == "three_stage":
            eps_p, sens_p = self._filtered(parts["theta_p"])
            summand = sens_p * eps_p[:, None]
            if self.cv:
                summand = summand - self._sens_true * self._e[:, None]
            se["theta_p"] = float(np.max(summand.std(axis=0)) / np.sqrt(self._n_kept)) if self.d else 0.0
            cf_sum = np.exp(1j * np.outer(eps_p, self.grid_e.u))
            if self.cv:
                cf_sum = cf_sum - np.exp(1j * np.outer(self._e, self.grid_e.u))
            se["eta"] = float(np.max(np.abs(cf_sum - cf_sum.mean(axis=0)).std(axis=0))
                              / np.sqrt(self._n_kept))
        model_eta = (self.model_true.with_free_eta(parts["eta"])
                     if self.algorithm == "three_stage" else self.model_true)
        phi_s = model_eta.cf(self.grid_s.u)
        summand_s = (eiu - phi_s)[:, :, None] * sens[:, None, :]
        if self.cv:
            summand_s = summand_s - (np.exp(1j * np.outer(self._e, self.grid_s.u))
                                     - phi_s)[:, :, None] * self._sens_true[:, None, :]
        if self.d:
            se["theta_s"] = float(np.max(np.abs(summand_s - summand_s.mean(axis=0)).std(axis=0))
                                  / np.sqrt(self._n_kept))
        return se

    def equilibrium(self) -> np.ndarray:
        """Same-path stationary point: rhs is exactly zero here (zero-mean noise)."""
        kw = {"theta_s": self.theta_true.theta.copy(), "g_mat": self._g_path.copy()}
        if self.algorithm == "three_stage":
            kw["theta_p"] = self.theta_true.theta.copy()
            kw["r_p"] = self._r_p_path.copy()
            kw["eta"] = self.model_true.free_eta.copy()
            grad = self.model_true.cf_grad(self.grid_e.u)
            if self.weight_kind == "identity":
                kinv_grad = grad
            else:
                kinv_grad = weight_solve(c_matrix(self.model_true, self.grid_e), grad)
            info = np.real(grad.conj().T @ kinv_grad)
            kw["r_e"] = 0.5 * (info + info.T)
        return self.pack(**kw)

    def in_domain(self, x: np.ndarray) -> bool:
        if not np.all(np.isfinite(x)):
            return False
        parts = self.unpack(x)
        margin = arma.stability_margin(parts["theta_s"][: self.p], parts["theta_s"][self.p:])
        ok = margin > 0
        if self.algorithm == "three_stage":
            margin_p = arma.stability_margin(parts["theta_p"][: self.p],
                                             parts["theta_p"][self.p:])
            ok = ok and margin_p > 0
            ok = ok and np.linalg.eigvalsh(parts["r_p"])[0] > 1e-12 if self.d else ok
            ok = ok and np.linalg.eigvalsh(parts["r_e"])[0] > 1e-12
            try:
                self.model_true.with_free_eta(parts["eta"])
            except ValueError:
                return False
        return bool(ok)


def _noise_mean(model: NoiseModel) -> float:
    """Exact mean of one h-increment."""
    e, h = model.eta, model.h
    if model.family == "gaussian":
        return float(e[0] * h)
    if model.family == "variance_gamma":
        drift = e[3] if e.size == 4 else 0.0
        return float((e[2] + drift) * h)
    alpha, beta, delta, mu = e
    gamma = np.sqrt(alpha**2 - beta**2)
    return float(mu * h + delta * h * beta / gamma)


# ---------------------------------------------------------------------------
# integration / differentiation / Lyapunov
# ---------------------------------------------------------------------------


@dataclass
class OdePath:
    ts: np.ndarray
    xs: np.ndarray
    escaped: bool = False
    escape_state: np.ndarray | None = None
    escape_time: float | None = None


def integrate(rhs, x_init, t_span: tuple[float, float], dt: float,
              in_domain=None) -> OdePath:
    """Classical fixed-step 4th-order integration of dx/dt = rhs(x).

    If ``in_domain`` is given and a step leaves it, integration stops and the
    escape point is reported on the path (diagnostic, not fatal).
    """
    t0, t1 = t_span
    n_steps = max(int(round((t1 - t0) / dt)), 0)
    x = np.array(x_init, dtype=float)
    ts = [t0]
    xs = [x.copy()]
    for i in range(n_steps):
        k1 = rhs(x)
        k2 = rhs(x + 0.5 * dt * k1)
        k3 = rhs(x + 0.5 * dt * k2)
        k4 = rhs(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t0 + (i + 1) * dt
        if in_domain is not None and not in_domain(x):
            return OdePath(np.asarray(ts), np.asarray(xs), escaped=True,
                           escape_state=x, escape_time=t)
        ts.append(t)
        xs.append(x.copy())
    return OdePath(np.asarray(ts), np.asarray(xs))


def jacobian_at(rhs, x: np.ndarray, step: float = 1e-6,
                noise_floor: float | None = None):
    """Central finite-difference Jacobian of rhs at x, plus sorted eigenvalues.

    RHS evaluations must be deterministic (the Monte Carlo RHS here is, given
    its fixed seed). ``noise_floor`` optionally declares the evaluation noise
    level; an error is raised when it would dominate the differences.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    f0 = rhs(x)
    jac = np.zeros((f0.size, n))
    for j in range(n):
        h = step * (1.0 + abs(x[j]))
        if noise_floor is not None and noise_floor > 0.1 * h:
            raise RuntimeError(
                f"Monte Carlo noise {noise_floor:.2e} dominates the difference step "
                f"{h:.2e}; increase the path length")
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        jac[:, j] = (rhs(xp) - rhs(xm)) / (2.0 * h)
    if not np.all(np.isfinite(jac)):
        raise RuntimeError("non-finite entries in the finite-difference Jacobian")
    eigs = np.linalg.eigvals(jac)
    order = np.argsort(eigs.real)
    return jac, eigs[order]


# ---------------------------------------------------------------------------
# long-run covariance of the frozen correction terms
# ---------------------------------------------------------------------------


def long_run_covariance(series: np.ndarray, lag_cap: int | None = None) -> np.ndarray:
    """Bartlett-tapered long-run covariance with PSD projection.

    ``series`` has one correction vector per row; the default lag cap is
    2*ceil(N^(1/3)).
    """
    q = np.asarray(series, dtype=float)
    n = q.shape[0]
    if lag_cap is None:
        lag_cap = 2 * int(np.ceil(n ** (1.0 / 3.0)))
    lag_cap = min(lag_cap, n - 1)
    qc = q - q.mean(axis=0)
    out = qc.T @ qc / n
    for lag in range(1, lag_cap + 1):
        w = 1.0 - lag / (lag_cap + 1.0)
        gam = qc[lag:].T @ qc[:-lag] / n
        out = out + w * (gam + gam.T)
    out = 0.5 * (out + out.T)
    vals, vecs = np.linalg.eigh(out)
    vals = np.maximum(vals, 0.0)
    return (vecs * vals) @ vecs.T


def frozen_corrections_iid(model_true: NoiseModel, grid: FreqGrid, n: int, seed: int,
                           weight_kind: str = "optimal") -> np.ndarray:
    """Per-datum correction vectors of the i.i.d. algorithm frozen at the truth.

    Columns align with IidOde packing; the scaling-matrix block is
    deterministic (zero) at the truth.
    """
    ode = IidOde(model_true, grid, weight_kind)
    y = model_true.sample(n, seed).values
    grad = model_true.cf_grad(grid.u)
    score = np.exp(1j * np.outer(y, grid.u)) - model_true.cf(grid.u)
    if weight_kind == "identity":
        kinv_grad = grad
    else:
        k_mat = c_matrix(model_true, grid)
        kinv_grad = weight_solve(k_mat, grad)
    r_star = np.real(grad.conj().T @ kinv_grad)
    r_star = 0.5 * (r_star + r_star.T)
    num = np.real(score @ kinv_grad.conj())  # (n, p): Re(grad^H K^-1 h) per datum
    corr_eta = np.linalg.solve(r_star, num.T).T
    out = np.zeros((n, ode.dim))
    out[:, ode.blocks["eta"]] = corr_eta
    return out


def frozen_corrections_system(ode: SystemOde, n: int | None = None) -> np.ndarray:
    """Frozen correction vectors at the truth for a SystemOde's algorithm.

    Reuses the ODE's fixed path and same-path stationary values, so the
    sequence has (Monte Carlo) zero mean by construction. Columns align with
    the ODE packing.
    """
    eq = ode.unpack(ode.equilibrium())
    e = ode._e if n is None else ode._e[:n]
    sens = ode._sens_true if n is None else ode._sens_true[:n]
    n_used = e.size
    out = np.zeros((n_used, ode.dim))
    m = ode.grid_s.m
    g_star = eq["g_mat"]
    if ode.algorithm == "three_stage":
        r_p = eq["r_p"]
        corr_tp = -np.linalg.solve(r_p, (sens * e[:, None]).T).T if ode.d else np.zeros((n_used, 0))
        out[:, ode.blocks["theta_p"]] = corr_tp
        souter = sens[:, None, :] * sens[:, :, None]
        iu_idx = np.triu_indices(ode.d)
        out[:, ode.blocks["r_p"]] = (souter - r_p)[:, iu_idx[0], iu_idx[1]]
        model = ode.model_true
        grad = model.cf_grad(ode.grid_e.u)
        score = np.exp(1j * np.outer(e, ode.grid_e.u)) - model.cf(ode.grid_e.u)
        if ode.weight_kind == "identity":
            kinv_grad = grad
        else:
            kinv_grad = weight_solve(c_matrix(model, ode.grid_e), grad)
        num = np.real(score @ kinv_grad.conj())
        out[:, ode.blocks["eta"]] = np.linalg.solve(eq["r_e"], num.T).T
        rinv = np.linalg.inv(r_p)
    else:
        rinv = ode._rinv_weight
    if ode.d:
        phi_s = ode._phi_true_s
        eiu = np.exp(1j * np.outer(e, ode.grid_s.u))
        s_vec = eiu - phi_s
        if ode.weight_kind == "identity":
            w = s_vec
            cinv_g = g_star
        else:
            k_s = c_matrix(ode.model_true, ode.grid_s)
            w = weight_solve(k_s, s_vec.T).T
            cinv_g = weight_solve(k_s, g_star.reshape(m, -1)).reshape(g_star.shape)
        t_vec = sens @ rinv.T
        num_s = np.real(np.einsum("nk,kaj,na->nj", w, g_star.conj(), t_vec))
        r_s = np.real(np.einsum("kai,ab,kbj->ij", g_star.conj(),
                                rinv, cinv_g))
        r_s = 0.5 * (r_s + r_s.T)
        out[:, ode.blocks["theta_s"]] = -np.linalg.solve(r_s, num_s.T).T
        h_theta = (1j * ode.grid_s.u)[None, :, None, None] * eiu[:, :, None, None] \
            * (sens[:, None, :] * sens[:, :, None])[:, None, :, :]
        g_corr = h_theta - g_star
        out[:, ode.blocks["g_re"]] = g_corr.real.reshape(n_used, -1)
        out[:, ode.blocks["g_im"]] = g_corr.imag.reshape(n_used, -1)
    return out


def p_star_estimate(algorithm: str, model_true: NoiseModel, grid: FreqGrid | None = None,
                    theta_true: arma.ArmaParams | None = None, n: int = 100_000,
                    seed: int = 777, weight_kind: str = "optimal",
                    lag_cap: int | None = None, grid_s: FreqGrid | None = None,
                    **system_kw) -> np.ndarray:
    """Long-run covariance of the frozen correction sequence at the truth.

    Lags are Bartlett-tapered up to 2*ceil(n^(1/3)) (overridable) and the
    result is projected onto the PSD cone. Column order matches the
    corresponding ODE packing.
    """
    if algorithm == "iid_ecf":
        corr = frozen_corrections_iid(model_true, grid, n, seed, weight_kind)
    else:
        ode = SystemOde(model_true, theta_true, algorithm=algorithm, grid_e=grid,
                        grid_s=grid_s, weight_kind=weight_kind, n_path=n, seed=seed,
                        **system_kw)
        corr = frozen_corrections_system(ode)
    return long_run_covariance(corr, lag_cap)


@dataclass
class LyapunovResult:
    """Solution of (A+I/2) S + S (A+I/2)^T + P = 0 with diagnostics."""

    a_star: np.ndarray
    p_star: np.ndarray
    sigma_xx: np.ndarray
    residual: float


def lyapunov_solve(a_star: np.ndarray, p_star: np.ndarray) -> LyapunovResult:
    """Asymptotic covariance of a 1/n recursion from its Lyapunov equation.

    Requires every eigenvalue of A* + I/2 to have negative real part (the
    rate condition alpha > 1/2); otherwise raises with the offending
    eigenvalue.
    """
    a = np.asarray(a_star, dtype=float)
    p = np.asarray(p_star, dtype=float)
    shifted = a + 0.5 * np.eye(a.shape[0])
    eigs = np.linalg.eigvals(shifted)
    worst = eigs[np.argmax(eigs.real)]
    if worst.real >= 0:
        raise ValueError(
            f"eigenvalue {worst:.6g} of A*+I/2 has nonnegative real part: "
            f"the rate condition alpha > 1/2 fails")
    sigma = solve_continuous_lyapunov(shifted, -p)
    sigma = 0.5 * (sigma + sigma.T)
    residual = float(np.linalg.norm(shifted @ sigma + sigma @ shifted.T + p))
    scale = max(float(np.linalg.norm(p)), 1e-300)
    if residual > 1e-6 * scale:
        raise RuntimeError(f"Lyapunov residual {residual:.3e} too large")
    return LyapunovResult(a_star=a, p_star=p, sigma_xx=sigma, residual=residual)
