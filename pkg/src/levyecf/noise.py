"""Parametric Levy increment families: characteristic functions, gradients, samplers.

Three families are provided, all with closed-form characteristic functions
of one increment over a sampling interval ``h``:

* ``gaussian``: eta = (mu, sigma), increment ~ N(mu*h, sigma^2*h).
* ``variance_gamma``: eta = (sigma, nu, theta_vg) or (sigma, nu, theta_vg, mu).
  Gamma-time-subordinated Brownian motion; the optional 4th entry is a
  deterministic drift per unit time. Convention fixed here: the 3-parameter
  form has no deterministic drift.
* ``normal_inverse_gaussian``: eta = (alpha, beta, delta, mu) with
  alpha > |beta| >= 0, delta > 0.

All characteristic functions are evaluated through the cumulant (log-cf),
scaled by ``h`` in the exponent, so no principal-branch power of the cf is
ever taken and phi is continuous in u. The relevant complex arguments have
strictly positive real part for every valid parameter, so the principal
log/sqrt are themselves continuous.

Note on theory: the square-increment exponential-moment condition behind the
convergence guarantees holds for the Gaussian family only; VG and NIG are
provided for practical use (semi-heavy tails) without that guarantee.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

FAMILIES = ("gaussian", "variance_gamma", "normal_inverse_gaussian")

PARAM_NAMES = {
    "gaussian": ("mu", "sigma"),
    "variance_gamma": ("sigma", "nu", "theta_vg", "mu"),
    "normal_inverse_gaussian": ("alpha", "beta", "delta", "mu"),
}


class NoiseDomainError(ValueError):
    """Parameter vector outside the family's domain."""


def _validate(family: str, eta: np.ndarray) -> None:
    if family == "gaussian":
        if eta.shape != (2,):
            raise NoiseDomainError("gaussian eta must be (mu, sigma)")
        if not eta[1] > 0:
            raise NoiseDomainError(f"gaussian requires sigma > 0, got {eta[1]}")
    elif family == "variance_gamma":
        if eta.shape not in ((3,), (4,)):
            raise NoiseDomainError("variance_gamma eta must be (sigma, nu, theta_vg[, mu])")
        if not eta[0] > 0:
            raise NoiseDomainError(f"variance_gamma requires sigma > 0, got {eta[0]}")
        if not eta[1] > 0:
            raise NoiseDomainError(f"variance_gamma requires nu > 0, got {eta[1]}")
    elif family == "normal_inverse_gaussian":
        if eta.shape != (4,):
            raise NoiseDomainError("NIG eta must be (alpha, beta, delta, mu)")
        alpha, beta, delta = eta[0], eta[1], eta[2]
        if not alpha > abs(beta):
            raise NoiseDomainError(f"NIG requires alpha > |beta|, got alpha={alpha}, beta={beta}")
        if not delta > 0:
            raise NoiseDomainError(f"NIG requires delta > 0, got {delta}")
    else:
        raise NoiseDomainError(f"unknown family {family!r}; expected one of {FAMILIES}")
    if not np.all(np.isfinite(eta)):
        raise NoiseDomainError("eta must be finite")


def _expand(component: np.ndarray, ndim_u: int) -> np.ndarray:
    # eta component of shape B -> B + (1,)*ndim_u so it broadcasts against u.
    return component.reshape(component.shape + (1,) * ndim_u)


def log_cf_at(family: str, eta, h: float, u) -> np.ndarray:
    """Cumulant of one h-increment: eta of shape (..., p), u of any shape S.

    Returns an array of shape (..., *S). Used directly by the batched
    recursion engine, where eta carries one parameter vector per replication.
    """
    eta = np.asarray(eta, dtype=float)
    u = np.asarray(u, dtype=complex)
    k = u.ndim

    def comp(i):
        return _expand(eta[..., i], k)

    if family == "gaussian":
        mu, sig = comp(0), comp(1)
        return 1j * u * mu * h - 0.5 * u**2 * sig**2 * h
    if family == "variance_gamma":
        sig, nu, th = comp(0), comp(1), comp(2)
        # Re(z) = 1 + sig^2*nu*u^2/2 > 0, so the principal log is continuous in u.
        z = 1.0 - 1j * u * th * nu + 0.5 * sig**2 * nu * u**2
        out = -(h / nu) * np.log(z)
        if eta.shape[-1] == 4:
            out = out + 1j * u * comp(3) * h
        return out
    if family == "normal_inverse_gaussian":
        alpha, beta, delta, mu = comp(0), comp(1), comp(2), comp(3)
        gamma = np.sqrt(alpha**2 - beta**2)
        # Re(alpha^2 - (beta+iu)^2) = alpha^2 - beta^2 + u^2 > 0: principal sqrt is safe.
        s = np.sqrt(alpha**2 - (beta + 1j * u) ** 2)
        return h * (1j * u * mu + delta * (gamma - s))
    raise NoiseDomainError(f"unknown family {family!r}")


def cf_at(family: str, eta, h: float, u) -> np.ndarray:
    return np.exp(log_cf_at(family, eta, h, u))


def cf_grad_at(family: str, eta, h: float, u, free: tuple[int, ...]) -> np.ndarray:
    """Gradient of phi w.r.t. the parameters listed in ``free``.

    eta of shape (..., p), u of shape S -> output (..., *S, len(free)).
    """
    eta = np.asarray(eta, dtype=float)
    u = np.asarray(u, dtype=complex)
    k = u.ndim
    phi = cf_at(family, eta, h, u)

    def comp(i):
        return _expand(eta[..., i], k)

    if family == "gaussian":
        sig = comp(1)
        dlog = [1j * u * h * np.ones_like(sig), -(u**2) * sig * h]
    elif family == "variance_gamma":
        sig, nu, th = comp(0), comp(1), comp(2)
        z = 1.0 - 1j * u * th * nu + 0.5 * sig**2 * nu * u**2
        logz = np.log(z)
        dlog = [
            -h * sig * u**2 / z,
            (h / nu**2) * (logz - 1.0 + 1.0 / z),
            1j * u * h / z,
        ]
        if eta.shape[-1] == 4:
            dlog.append(1j * u * h * np.ones_like(z))
    else:
        alpha, beta, delta = comp(0), comp(1), comp(2)
        gamma = np.sqrt(alpha**2 - beta**2)
        s = np.sqrt(alpha**2 - (beta + 1j * u) ** 2)
        dlog = [
            h * delta * (alpha / gamma - alpha / s),
            h * delta * (-beta / gamma + (beta + 1j * u) / s),
            h * (gamma - s),
            1j * u * h * np.ones_like(s),
        ]
    grads = np.stack([np.broadcast_to(dlog[i], phi.shape) for i in free], axis=-1)
    return grads * phi[..., None]


@dataclass(frozen=True)
class NoiseModel:
    """One Levy increment law, identified by family, parameters and interval.

    Parameters
    ----------
    family : str
        One of ``FAMILIES``.
    eta : array_like
        Family parameter vector (see module docstring for conventions).
    h : float
        Sampling interval over which one increment accrues.
    free : tuple of int, optional
        Indices of the parameters treated as unknown by estimators and by
        ``cf_grad``. Defaults to all of them.
    """

    family: str
    eta: np.ndarray
    h: float = 1.0
    free: tuple[int, ...] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        object.__setattr__(self, "eta", eta)
        _validate(self.family, eta)
        if not self.h > 0:
            raise NoiseDomainError(f"h must be positive, got {self.h}")
        free = self.free
        if free is None:
            free = tuple(range(eta.size))
        else:
            free = tuple(int(i) for i in free)
            if len(set(free)) != len(free) or any(i < 0 or i >= eta.size for i in free):
                raise NoiseDomainError(f"invalid free-parameter indices {free}")
        object.__setattr__(self, "free", free)

    @property
    def p_eta(self) -> int:
        """Number of free parameters."""
        return len(self.free)

    @property
    def free_eta(self) -> np.ndarray:
        return self.eta[list(self.free)]

    @property
    def param_names(self) -> tuple[str, ...]:
        return PARAM_NAMES[self.family][: self.eta.size]

    def with_free_eta(self, values) -> "NoiseModel":
        """Return a copy with the free parameter entries replaced."""
        values = np.asarray(values, dtype=float)
        if values.shape != (len(self.free),):
            raise ValueError(f"expected {len(self.free)} values, got shape {values.shape}")
        eta = self.eta.copy()
        eta[list(self.free)] = values
        return replace(self, eta=eta)

    # -- characteristic function ------------------------------------------

    def log_cf(self, u) -> np.ndarray:
        """Cumulant (log characteristic function) of one h-increment at real u."""
        return log_cf_at(self.family, self.eta, self.h, u)

    def cf(self, u) -> np.ndarray:
        """Characteristic function phi(u) of one h-increment; phi(0) = 1 exactly."""
        return np.exp(self.log_cf(u))

    def cf_grad(self, u) -> np.ndarray:
        """Gradient of phi(u) w.r.t. the free parameters, shape u.shape + (p_eta,)."""
        return cf_grad_at(self.family, self.eta, self.h, u, self.free)

    # -- sampling -----------------------------------------------------------

    def sample(self, n: int, seed: int) -> "IncrementSample":
        """Draw ``n`` i.i.d. increments, bit-reproducible from (model, seed, n)."""
        if n < 0:
            raise ValueError("n must be >= 0")
        rng = np.random.default_rng(seed)
        values = self.draw(n, rng)
        return IncrementSample(values=values, seed=int(seed), model=self)

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw from a caller-owned generator (for concurrent workers)."""
        e = self.eta
        h = self.h
        if self.family == "gaussian":
            mu, sig = e
            return rng.normal(mu * h, sig * np.sqrt(h), size=n)
        if self.family == "variance_gamma":
            sig, nu, th = e[0], e[1], e[2]
            drift = e[3] if e.size == 4 else 0.0
            # Gamma subordinator with mean rate 1, variance rate nu, over time h.
            g = rng.gamma(shape=h / nu, scale=nu, size=n)
            z = rng.standard_normal(n)
            return drift * h + th * g + sig * np.sqrt(g) * z
        alpha, beta, delta, mu = e
        gamma = np.sqrt(alpha**2 - beta**2)
        v = _inverse_gaussian(rng, mean=delta * h / gamma, shape=(delta * h) ** 2, size=n)
        z = rng.standard_normal(n)
        return mu * h + beta * v + np.sqrt(v) * z


def _inverse_gaussian(rng: np.random.Generator, mean: float, shape: float, size: int) -> np.ndarray:
    """Exact IG(mean, shape) sampler via the Michael-Schucany-Haas transform."""
    y = rng.standard_normal(size) ** 2
    m, lam = mean, shape
    x = m + (m**2 * y) / (2.0 * lam) - (m / (2.0 * lam)) * np.sqrt(4.0 * m * lam * y + m**2 * y**2)
    u = rng.uniform(size=size)
    take_root = u <= m / (m + x)
    return np.where(take_root, x, m**2 / x)


@dataclass(frozen=True)
class IncrementSample:
    """An i.i.d. increment draw together with its provenance."""

    values: np.ndarray
    seed: int
    model: NoiseModel

    def __len__(self) -> int:
        return self.values.size
