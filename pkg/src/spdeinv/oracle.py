"""Exact invariant laws of the linear (F = 0) dynamics.

Every mode of the linear equation is an independent Ornstein-Uhlenbeck
process ``dx = -lam x dt + dbeta``, stationary variance ``1/(2 lam)``. The
semi-implicit Euler chain turns each mode into the AR(1) recursion
``x' = (x + sqrt(tau) xi)/(1 + lam tau)`` whose stationary variance solves
``v = (v + tau)/(1 + lam tau)^2``, i.e. ``v = 1/(2 lam + lam^2 tau)``. The
finite element laws use the generalized eigenvalues of ``(K_h, M_h)`` in the
same formulas. Infinite series are summed either in closed form or as a
partial sum plus a tail with an explicit remainder bound.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import fem
from .fem import FemOperator, NodalField, TridiagonalSolver
from .spectral import SpectralField, eigenvalues

_EPS = np.finfo(float).eps
PI2 = math.pi**2


@dataclass(frozen=True, eq=False)
class LinearInvariantLaw:
    kind: str
    tau: float = 0.0
    operator: Optional[FemOperator] = None

    @classmethod
    def continuous(cls):
        return cls("continuous")

    @classmethod
    def discrete_time_spectral(cls, tau):
        return cls("discrete_time_spectral", tau=float(tau))

    @classmethod
    def fem_continuous_time(cls, op):
        return cls("fem_continuous_time", operator=op)

    @classmethod
    def fem_fully_discrete(cls, op, tau):
        return cls("fem_fully_discrete", tau=float(tau), operator=op)

    @property
    def is_fem(self):
        return self.operator is not None

    def eigenvalues(self, n=None):
        if self.is_fem:
            lams = self.operator.eigenvalues
            return lams if n is None else lams[:n]
        return eigenvalues(n)

    def variances(self, n=None):
        lam = self.eigenvalues(n)
        return 1.0 / (2.0 * lam + self.tau * lam * lam)

    @property
    def parameter(self):
        parts = []
        if self.kind in ("discrete_time_spectral", "fem_fully_discrete"):
            parts.append(f"tau={self.tau!r}")
        if self.is_fem:
            parts.append(f"h={self.operator.h!r}")
        return ";".join(parts) or "-"


def mode_variance(law: LinearInvariantLaw, j: int) -> float:
    if j < 0 or (law.is_fem and j >= law.operator.n):
        raise IndexError(f"mode {j} out of range for {law.kind}")
    lam = law.operator.eigenvalues[j] if law.is_fem else PI2 * (j + 1) ** 2
    return float(1.0 / (2.0 * lam + law.tau * lam * lam))


def _components(law: LinearInvariantLaw, v):
    """Coordinates of ``v`` in the law's orthonormal eigenbasis."""
    if not law.is_fem:
        if isinstance(v, SpectralField):
            return v.coeffs
        if isinstance(v, NodalField):
            return fem.sine_coefficients(v.operator, v.values, 1024)
        return np.asarray(v, dtype=float)
    op = law.operator
    if isinstance(v, NodalField) and v.operator is op:
        b = op.mass.matvec(v.values)
    else:
        f = v.evaluate if isinstance(v, (SpectralField, NodalField)) else v
        b = fem.load_vector(op, f, order=5)
    return op.eigenvectors.T @ b


def char_functional(law: LinearInvariantLaw, v) -> float:
    """``E cos<X, v> = exp(-1/2 sum_j v_j^2 var_j)`` under the law."""
    c = _components(law, v)
    var = law.variances(c.size)
    return float(math.exp(-0.5 * float(np.dot(c * c, var))))


def _inv_square_tail(m):
    """``sum_{n >= m} 1/n^2`` by Euler-Maclaurin, with its remainder bound."""
    val = 1.0 / m + 1.0 / (2 * m**2) + 1.0 / (6 * m**3) - 1.0 / (30 * m**5)
    return val, 1.0 / (42 * m**7)


def _shifted_tail(m, a):
    """``sum_{n >= m} 1/(n^2 + a^2)`` by the midpoint integral, with its remainder bound."""
    val = (math.pi / 2 - math.atan((m - 0.5) / a)) / a
    return val, 1.0 / (12 * (m - 0.5) ** 3)


def _shifted_series(a):
    """``sum_{n >= 1} 1/(n^2 + a^2)`` in closed form."""
    pa = math.pi * a
    coth = 1.0 / math.tanh(pa)
    return (pa * coth - 1.0) / (2 * a * a)


def second_moment_certified(law: LinearInvariantLaw, truncation=None):
    """``(E|X|_H^2, certified_error)``.

    Spectral laws are infinite-dimensional: without ``truncation`` the series is
    summed in closed form; with it, the first ``truncation`` modes are summed
    and the rest is added as a bounded tail. FEM laws sum all of ``V_h``.
    """
    if law.is_fem:
        lam = law.operator.eigenvalues
        terms = 1.0 / (2.0 * lam + law.tau * lam * lam)
        return float(math.fsum(terms)), float(lam.size * _EPS * terms.sum() * 10)
    if truncation is None:
        val = 1.0 / 12.0
        if law.tau > 0:
            val -= tau_weak_error_closed_form(law.tau)
        return val, 10 * _EPS
    K = int(truncation)
    if K < 1:
        raise ValueError("truncation must be at least 1")
    partial = math.fsum(1.0 / (2.0 * eigenvalues(K) + law.tau * eigenvalues(K) ** 2))
    tail, err = _inv_square_tail(K + 1)
    tail /= 2 * PI2
    err /= 2 * PI2
    if law.tau > 0:
        a = math.sqrt(2.0 / (PI2 * law.tau))
        t2, e2 = _shifted_tail(K + 1, a)
        tail -= t2 / (2 * PI2)
        err += e2 / (2 * PI2)
    return partial + tail, err + 10 * K * _EPS


def second_moment(law: LinearInvariantLaw, truncation=None) -> float:
    return second_moment_certified(law, truncation)[0]


def second_moment_by_trace(op: FemOperator) -> float:
    """``1/2 trace(K_h^{-1} M_h)`` from tridiagonal solves, independent of the eigensolver."""
    X = TridiagonalSolver(op.stiffness).solve(op.mass.to_dense())
    return 0.5 * float(np.trace(X))


def tau_weak_error_closed_form(tau: float) -> float:
    """``sum_{k >= 0} tau / (2 (2 + lam_k tau))`` in closed form."""
    if tau == 0:
        return 0.0
    a = math.sqrt(2.0 / (PI2 * tau))
    return _shifted_series(a) / (2 * PI2)


def tau_weak_error_exact(tau: float, truncation: int = 1024, tail: bool = True) -> float:
    """Second-moment gap ``E_mu|X|^2 - E_{mu^tau}|X|^2 = sum_k tau/(2(2 + lam_k tau))``.

    The first ``truncation`` modes are summed exactly; ``tail`` adds the
    integral estimate of the rest (remainder below ``1/(24 pi^2 K^3)``).
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if tau == 0:
        return 0.0
    lam = eigenvalues(truncation)
    val = math.fsum(tau / (2.0 * (2.0 + lam * tau)))
    if tail:
        a = math.sqrt(2.0 / (PI2 * tau))
        val += _shifted_tail(truncation + 1, a)[0] / (2 * PI2)
    return val


def h_weak_error_exact(op: FemOperator) -> float:
    """``|1/12 - 1/2 sum_j 1/lam_j^h|``: invariant second-moment gap of the P1 space discretization."""
    return abs(1.0 / 12.0 - second_moment(LinearInvariantLaw.fem_continuous_time(op)))


ORACLE_COLUMNS = ["variant", "parameter", "value", "certified_error"]


def oracle_rows(laws, truncation=None):
    rows = []
    for law in laws:
        val, err = second_moment_certified(law, truncation)
        if law.kind == "fem_continuous_time":
            err = max(err, abs(val - second_moment_by_trace(law.operator)))
        rows.append({"variant": law.kind, "parameter": law.parameter, "value": repr(float(val)),
                     "certified_error": repr(float(err))})
    return rows


def write_oracle_csv(fh_or_path, rows):
    if hasattr(fh_or_path, "write"):
        _write_rows(fh_or_path, rows)
        return
    with open(fh_or_path, "w", newline="", encoding="utf-8") as fh:
        _write_rows(fh, rows)


def _write_rows(fh, rows):
    w = csv.DictWriter(fh, fieldnames=ORACLE_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
