"""ECF scores, the cf covariance matrix, weightings and closed-form asymptotics.

Conventions used throughout the package:

* Frequency grids are finite sets of distinct nonzero reals u_1..u_M.
* The cf covariance matrix has entries
  ``C[k, l] = phi(u_k - u_l) - phi(u_k) * phi(-u_l)``,
  i.e. the covariance of the complex vector (exp(i*u_k*Y))_k.
* Every bilinear form that feeds a real parameter update takes its real
  part, which keeps Newton steps real.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .noise import NoiseModel


class IdentifiabilityError(ValueError):
    """The frequency grid cannot identify the requested parameters."""


class ConditioningError(np.linalg.LinAlgError):
    """A matrix stayed indefinite after regularization."""


@dataclass(frozen=True)
class FreqGrid:
    """Fixed real frequencies at which the ECF is matched."""

    u: np.ndarray

    def __post_init__(self):
        u = np.atleast_1d(np.asarray(self.u, dtype=float))
        if u.ndim != 1 or u.size == 0:
            raise ValueError("grid must be a nonempty 1-D array")
        if np.any(u == 0.0):
            raise ValueError("grid frequencies must be nonzero")
        if np.unique(u).size != u.size:
            raise ValueError("grid frequencies must be distinct")
        object.__setattr__(self, "u", u)

    @property
    def m(self) -> int:
        return self.u.size

    @staticmethod
    def equispaced(m: int = 10, u_max: float = 2.0) -> "FreqGrid":
        """m equispaced points in (0, u_max], the package default."""
        return FreqGrid(np.linspace(u_max / m, u_max, m))


def _grid_u(grid) -> np.ndarray:
    return grid.u if isinstance(grid, FreqGrid) else np.atleast_1d(np.asarray(grid, dtype=float))


def noise_score(y, model: NoiseModel, grid) -> np.ndarray:
    """Per-datum ECF score: component j is exp(i*u_j*y) - phi(u_j, eta).

    ``y`` may be a scalar or an array; the grid axis is appended last.
    """
    u = _grid_u(grid)
    y = np.asarray(y, dtype=float)
    return np.exp(1j * y[..., None] * u) - model.cf(u)


def c_matrix(model: NoiseModel, grid, regularize: bool = True) -> np.ndarray:
    """Covariance matrix of (exp(i*u_k*Y))_k, Hermitian PSD by construction.

    With ``regularize`` a ridge of 1e-10*trace/M is added whenever the minimum
    eigenvalue falls below that ridge; if the matrix is still indefinite
    afterwards a ConditioningError is raised.
    """
    u = _grid_u(grid)
    diff = u[:, None] - u[None, :]
    phi_u = model.cf(u)
    c = model.cf(diff) - phi_u[:, None] * model.cf(-u)[None, :]
    c = 0.5 * (c + c.conj().T)
    if regularize:
        ridge = 1e-10 * np.trace(c).real / len(u)
        min_eig = np.linalg.eigvalsh(c)[0]
        if min_eig < ridge:
            c = c + ridge * np.eye(len(u))
            if np.linalg.eigvalsh(c)[0] <= 0:
                raise ConditioningError(
                    f"cf covariance matrix indefinite after regularization "
                    f"(min eigenvalue {min_eig:.3e})"
                )
    return c


@dataclass(frozen=True)
class WeightMatrix:
    """ECF weighting: identity, the plug-in cf covariance, or a fixed matrix."""

    kind: str = "c_at_eta"  # identity | c_at_eta | custom
    value: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("identity", "c_at_eta", "custom"):
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if self.kind == "custom":
            v = np.asarray(self.value, dtype=complex)
            if v.ndim != 2 or v.shape[0] != v.shape[1]:
                raise ValueError("custom weight must be a square matrix")
            if not np.allclose(v, v.conj().T):
                raise ValueError("custom weight must be Hermitian")
            if np.linalg.eigvalsh(v)[0] <= 1e-12 * np.linalg.eigvalsh(v)[-1]:
                raise ValueError("custom weight must be positive definite")
            object.__setattr__(self, "value", v)

    def matrix(self, model: NoiseModel, grid) -> np.ndarray:
        if self.kind == "identity":
            return np.eye(len(_grid_u(grid)), dtype=complex)
        if self.kind == "c_at_eta":
            return c_matrix(model, grid)
        return self.value


def weight_solve(k_matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve K x = rhs for Hermitian PD K, with an escalating ridge fallback."""
    ridge = 1e-10 * max(np.trace(k_matrix).real, 1.0) / k_matrix.shape[0]
    for attempt in range(4):
        try:
            return cho_solve(cho_factor(k_matrix), rhs)
        except np.linalg.LinAlgError:
            k_matrix = k_matrix + ridge * np.eye(k_matrix.shape[0])
            ridge *= 100.0
    raise ConditioningError("weight matrix not positive definite after ridge escalation")


def sigma_eta(model: NoiseModel, grid) -> np.ndarray:
    """Closed-form asymptotic covariance of the noise-parameter ECF estimate.

    Inverse of Re(phi_eta^H C^-1 phi_eta); symmetric positive definite when
    the gradient matrix has full column rank on the grid, otherwise raises
    IdentifiabilityError naming the deficient directions.
    """
    u = _grid_u(grid)
    pg = model.cf_grad(u)  # (M, p)
    p = pg.shape[1]
    if len(u) < p:
        raise IdentifiabilityError(
            f"grid has {len(u)} frequencies but {p} parameters are free (need M >= p)"
        )
    sv = np.linalg.svd(pg, compute_uv=False)
    if sv[-1] < 1e-10 * max(sv[0], 1e-300):
        _, _, vh = np.linalg.svd(pg)
        names = [model.param_names[i] for i in model.free]
        null_dir = vh[-1]
        weak = [names[j] for j in range(p) if abs(null_dir[j]) > 0.3]
        raise IdentifiabilityError(
            f"cf gradient rank-deficient on this grid; unidentified direction "
            f"involves {weak} (singular values {sv})"
        )
    c = c_matrix(model, grid)
    info = np.real(pg.conj().T @ weight_solve(c, pg))
    info = 0.5 * (info + info.T)
    return np.linalg.inv(info)


def sigma_theta(model: NoiseModel, grid, r_p: np.ndarray) -> np.ndarray:
    """Closed-form asymptotic covariance of the re-estimated system parameter.

    Equals (Re(psi^H C^-1 psi))^-1 * r_p^-1 with psi_j = i*u_j*phi(u_j).
    """
    u = _grid_u(grid)
    r_p = np.asarray(r_p, dtype=float)
    if r_p.size and np.linalg.eigvalsh(0.5 * (r_p + r_p.T))[0] <= 0:
        raise np.linalg.LinAlgError("r_p must be positive definite")
    psi = 1j * u * model.cf(u)
    c = c_matrix(model, grid)
    s = float(np.real(psi.conj() @ weight_solve(c, psi)))
    if s <= 0:
        raise ValueError(f"nonpositive information scalar {s}")
    out = np.linalg.inv(r_p) / s if r_p.size else r_p.reshape(0, 0)
    return 0.5 * (out + out.T)


def kron_weight(c: np.ndarray, r_p: np.ndarray) -> np.ndarray:
    """Kronecker-product weighting C (x) R_P for the stacked system score."""
    c = np.asarray(c, dtype=complex)
    r_p = np.asarray(r_p, dtype=float)
    for mat, name in ((c, "c"), (r_p, "r_p")):
        if mat.size and np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))[0] <= 0:
            raise np.linalg.LinAlgError(f"{name} factor must be positive definite")
    return np.kron(c, r_p)


def expected_score(model_true: NoiseModel, model_at: NoiseModel, grid) -> np.ndarray:
    """Expectation of the noise score under the true law: phi*(u) - phi(u, eta)."""
    u = _grid_u(grid)
    return model_true.cf(u) - model_at.cf(u)
