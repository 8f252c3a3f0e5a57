"""Diagonal calculus of the Dirichlet Laplacian on (0, 1).

Functions are represented by their coefficients in the sine eigenbasis
``e_k(xi) = sqrt(2) sin((k+1) pi xi)``, with ``-A e_k = lambda_k e_k`` and
``lambda_k = pi^2 (k+1)^2``. Eigenvalues always come from the closed form.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

SQRT2 = np.sqrt(2.0)
LAMBDA0 = np.pi**2


def eigenvalues(n):
    """First ``n`` eigenvalues of ``-A`` as a float array."""
    k = np.arange(n, dtype=float)
    return np.pi**2 * (k + 1.0) ** 2


def eigenfunction(k, xi):
    return SQRT2 * np.sin((k + 1) * np.pi * np.asarray(xi, dtype=float))


@dataclass(frozen=True)
class EigenPair:
    index: int
    lam: float

    def evaluate_at(self, xi):
        return eigenfunction(self.index, xi)


def eigen_pair(k: int) -> EigenPair:
    if k < 0:
        raise ValueError(f"mode index must be nonnegative, got {k}")
    return EigenPair(k, float(np.pi**2 * (k + 1) ** 2))


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Coefficients ``x_k`` of a function of ``L^2(0,1)`` in the sine basis."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        if c.size == 0:
            raise ValueError("a spectral field needs at least one mode")
        if not np.all(np.isfinite(c)):
            raise ValueError("spectral coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, mode_count):
        return cls(np.zeros(mode_count))

    @classmethod
    def unit(cls, k, mode_count=None):
        c = np.zeros(mode_count if mode_count is not None else k + 1)
        c[k] = 1.0
        return cls(c)

    @classmethod
    def from_function(cls, f, mode_count, resolution=None):
        """Sine coefficients of ``f`` by the exact-for-sines discrete transform."""
        q = resolution or 4 * mode_count
        xi = np.arange(1, q + 1) / (q + 1)
        return cls(sine_matrix(mode_count, q).T @ np.asarray(f(xi), dtype=float) / (q + 1))

    @property
    def mode_count(self):
        return self.coeffs.size

    def norm(self):
        return float(np.sqrt(np.dot(self.coeffs, self.coeffs)))

    def evaluate(self, xi):
        xi = np.asarray(xi, dtype=float)
        k = np.arange(self.mode_count)
        return SQRT2 * np.sin(np.multiply.outer(xi, (k + 1) * np.pi)) @ self.coeffs

    def inner(self, other):
        n = min(self.mode_count, other.mode_count)
        return float(np.dot(self.coeffs[:n], other.coeffs[:n]))

    def __eq__(self, other):
        return isinstance(other, SpectralField) and np.array_equal(self.coeffs, other.coeffs)

    def __hash__(self):
        return hash(self.coeffs.tobytes())

    def __repr__(self):
        return f"SpectralField(mode_count={self.mode_count})"


def frac_power_apply(alpha: float, x: SpectralField) -> SpectralField:
    """``(-A)^alpha x``."""
    return SpectralField(eigenvalues(x.mode_count) ** alpha * x.coeffs)


def sobolev_norm(alpha, x: SpectralField) -> float:
    """``|x|_alpha = |(-A)^alpha x|_H``."""
    return frac_power_apply(alpha, x).norm()


def semigroup_apply(t: float, x: SpectralField) -> SpectralField:
    """``e^{tA} x``."""
    if t < 0:
        raise ValueError("semigroup time must be nonnegative")
    return SpectralField(np.exp(-eigenvalues(x.mode_count) * t) * x.coeffs)


def project_modes(M: int, x: SpectralField) -> SpectralField:
    """Orthogonal projection onto ``span(e_0, ..., e_M)``; the mode count is kept."""
    c = np.array(x.coeffs)
    c[M + 1:] = 0.0
    return SpectralField(c)


def smoothing_bound(sigma, t):
    """``sigma^sigma t^-sigma e^{-lambda_0 t/2}``, dominating ``|(-A)^sigma e^{tA}|``.

    Splitting ``e^{-lam t}`` in halves, ``lam^sigma e^{-lam t/2}`` peaks at
    ``(2 sigma / e)^sigma t^-sigma`` which is below ``sigma^sigma t^-sigma``.
    """
    c = sigma**sigma if sigma > 0 else 1.0
    return c * t ** (-sigma) * np.exp(-LAMBDA0 * t / 2)


@lru_cache(maxsize=32)
def sine_matrix(mode_count: int, points: int) -> np.ndarray:
    """``S[q, k] = e_k(q / (points+1))`` for ``q = 1..points``; read-only, cached."""
    xi = np.arange(1, points + 1) / (points + 1)
    S = SQRT2 * np.sin(np.pi * np.outer(xi, np.arange(1, mode_count + 1)))
    S.setflags(write=False)
    return S
