"""Scalar ARMA realization of a Levy-driven linear system and its inverse filter.

The system is the monic ARMA(p, q) recursion

    y_n = -sum_i a_i y_{n-i} + e_n + sum_j c_j e_{n-j},

driven by i.i.d. Levy increments e_n, with zero pre-sample values. The
innovation filter inverts it,

    eps_n = y_n + sum_i a_i y_{n-i} - sum_j c_j eps_{n-j},

and carries the parameter sensitivities of eps alongside:

    d eps_n / d a_i = y_{n-i}   - sum_j c_j * d eps_{n-j} / d a_i
    d eps_n / d c_j = -eps_{n-j} - sum_k c_k * d eps_{n-k} / d c_j.

Stability is measured by the root moduli of the two characteristic
polynomials; membership in the truncation domain means both stay at least
``margin_delta`` inside the unit circle.

The stepwise filter is batched over a leading replication axis so a Monte
Carlo ensemble can be advanced in lockstep; a single run is a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .noise import IncrementSample, NoiseModel


def stability_margin(ar, ma) -> float:
    """1 - max root modulus over the AR and MA characteristic polynomials."""
    worst = 0.0
    for coeffs in (ar, ma):
        coeffs = np.atleast_1d(np.asarray(coeffs, dtype=float))
        if coeffs.size == 0:
            continue
        if not np.all(np.isfinite(coeffs)):
            return -np.inf
        roots = np.roots(np.concatenate(([1.0], coeffs)))
        if roots.size:
            worst = max(worst, float(np.max(np.abs(roots))))
    return 1.0 - worst


@dataclass(frozen=True)
class ArmaParams:
    """Monic ARMA(p, q) coefficients with a stability margin requirement."""

    ar: np.ndarray
    ma: np.ndarray = field(default_factory=lambda: np.empty(0))
    margin_delta: float = 0.05

    def __post_init__(self):
        ar = np.atleast_1d(np.asarray(self.ar, dtype=float))
        ma = np.atleast_1d(np.asarray(self.ma, dtype=float))
        object.__setattr__(self, "ar", ar)
        object.__setattr__(self, "ma", ma)
        if not 0 < self.margin_delta < 1:
            raise ValueError("margin_delta must lie in (0, 1)")
        margin = stability_margin(ar, ma)
        if margin < self.margin_delta:
            raise ValueError(
                f"parameters outside the stability domain: margin {margin:.4f} "
                f"< delta {self.margin_delta}"
            )

    @property
    def p(self) -> int:
        return self.ar.size

    @property
    def q(self) -> int:
        return self.ma.size

    @property
    def p_theta(self) -> int:
        return self.ar.size + self.ma.size

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.ar, self.ma])

    def margin(self) -> float:
        return stability_margin(self.ar, self.ma)


def simulate(theta: ArmaParams, noise: IncrementSample | np.ndarray) -> np.ndarray:
    """Run the forward system on an increment sequence, zero pre-sample values."""
    e = noise.values if isinstance(noise, IncrementSample) else np.asarray(noise, dtype=float)
    a_poly = np.concatenate(([1.0], theta.ar))
    c_poly = np.concatenate(([1.0], theta.ma))
    return lfilter(c_poly, a_poly, e)


def _shift(x: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros_like(x)
    if k == 0:
        out[...] = x
    else:
        out[..., k:] = x[..., :-k]
    return out


def innovations_path(ar, ma, y) -> np.ndarray:
    """Whole-path innovation filter (zero initial state); y may be (N,) or (R, N)."""
    a_poly = np.concatenate(([1.0], np.atleast_1d(ar)))
    c_poly = np.concatenate(([1.0], np.atleast_1d(ma)))
    return lfilter(a_poly, c_poly, np.asarray(y, dtype=float), axis=-1)


def sensitivities_path(ar, ma, y, eps: np.ndarray | None = None) -> np.ndarray:
    """Whole-path innovation sensitivities, zero initial state.

    y of shape (N,) gives (N, p+q); shape (R, N) gives (R, N, p+q).
    """
    ar = np.atleast_1d(np.asarray(ar, dtype=float))
    ma = np.atleast_1d(np.asarray(ma, dtype=float))
    y = np.asarray(y, dtype=float)
    if eps is None:
        eps = innovations_path(ar, ma, y)
    c_poly = np.concatenate(([1.0], ma))
    cols = []
    for i in range(1, ar.size + 1):
        cols.append(lfilter([1.0], c_poly, _shift(y, i), axis=-1))
    for j in range(1, ma.size + 1):
        cols.append(-lfilter([1.0], c_poly, _shift(eps, j), axis=-1))
    if not cols:
        return np.zeros(y.shape + (0,))
    return np.stack(cols, axis=-1)


class FilterState:
    """Mutable innovation-filter state, batched over a replication axis.

    Buffers hold the last p outputs, last q innovations and last q
    sensitivity vectors, all zero-initialized.
    """

    def __init__(self, p: int, q: int, n_rep: int = 1):
        self.p = p
        self.q = q
        self.d = p + q
        self.n_rep = n_rep
        self.y_hist = np.zeros((n_rep, p))
        self.eps_hist = np.zeros((n_rep, q))
        self.sens_hist = np.zeros((n_rep, q, self.d))
        self.n = 0

    def copy(self) -> "FilterState":
        out = FilterState(self.p, self.q, self.n_rep)
        out.y_hist = self.y_hist.copy()
        out.eps_hist = self.eps_hist.copy()
        out.sens_hist = self.sens_hist.copy()
        out.n = self.n
        return out

    def step(self, ar: np.ndarray, ma: np.ndarray, y: np.ndarray):
        """Advance one step at per-replication coefficients.

        ar: (n_rep, p), ma: (n_rep, q), y: (n_rep,). Returns
        (eps (n_rep,), eps_theta (n_rep, p+q)).
        """
        p, q = self.p, self.q
        eps = y.copy()
        if p:
            eps += np.einsum("ri,ri->r", ar, self.y_hist)
        if q:
            eps -= np.einsum("rj,rj->r", ma, self.eps_hist)
        if self.d:
            base = np.concatenate([self.y_hist, -self.eps_hist], axis=1)
            if q:
                sens = base - np.einsum("rj,rjd->rd", ma, self.sens_hist)
            else:
                sens = base
        else:
            sens = np.zeros((self.n_rep, 0))
        # shift buffers (newest in column 0)
        if p:
            self.y_hist[:, 1:] = self.y_hist[:, :-1]
            self.y_hist[:, 0] = y
        if q:
            self.eps_hist[:, 1:] = self.eps_hist[:, :-1]
            self.eps_hist[:, 0] = eps
            self.sens_hist[:, 1:] = self.sens_hist[:, :-1]
            self.sens_hist[:, 0] = sens
        self.n += 1
        return eps, sens


def innovation_step(theta: ArmaParams, state: FilterState, y_n: float):
    """Single-series convenience wrapper around FilterState.step."""
    eps, sens = state.step(
        theta.ar.reshape(1, -1), theta.ma.reshape(1, -1), np.asarray([y_n], dtype=float)
    )
    return float(eps[0]), sens[0], state


def r_p_estimate(theta: ArmaParams, model: NoiseModel, n: int, seed: int) -> np.ndarray:
    """Monte Carlo E[eps_theta eps_theta^T] at theta over a fresh simulated path.

    A transient of 10*max(p, q) steps is discarded. Returns an empty (0, 0)
    matrix when theta has no parameters.
    """
    d = theta.p_theta
    if d == 0:
        return np.zeros((0, 0))
    e = model.sample(n, seed).values
    y = simulate(theta, e)
    sens = sensitivities_path(theta.ar, theta.ma, y)
    skip = 10 * max(theta.p, theta.q)
    kept = sens[skip:]
    out = kept.T @ kept / kept.shape[0]
    return 0.5 * (out + out.T)
