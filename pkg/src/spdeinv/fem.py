"""P1 finite elements on a partition of [0, 1] with homogeneous Dirichlet ends.

Nodal vectors always hold the *interior* node values; the two boundary values
are zero and implicit. Mass and stiffness matrices are tridiagonal and kept in
band form. The discrete operator ``A_h`` is never formed: its eigenpairs come
from the generalized problem ``K v = lam M v`` and its resolvent from
tridiagonal LDL^T solves.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import LinAlgError, cholesky_banded, eigh, solve_triangular
from scipy.linalg.lapack import dpttrf, dpttrs

from .errors import CholeskyFailure, ConvergenceFailure, EmptyPartition, NonMonotonePartition, SolverBreakdown
from .spectral import SQRT2, eigenvalues


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray

    def __post_init__(self):
        x = np.array(self.nodes, dtype=float).reshape(-1)
        if x.size < 3:
            raise EmptyPartition("a mesh needs at least one interior node")
        if x[0] != 0.0 or x[-1] != 1.0:
            raise NonMonotonePartition("mesh nodes must start at 0 and end at 1")
        if not np.all(np.diff(x) > 0):
            raise NonMonotonePartition("mesh nodes must be strictly increasing")
        x.setflags(write=False)
        object.__setattr__(self, "nodes", x)

    @property
    def gaps(self):
        return np.diff(self.nodes)

    @property
    def h(self):
        return float(self.gaps.max())

    @property
    def interior(self):
        return self.nodes[1:-1]

    @property
    def n_interior(self):
        return self.nodes.size - 2

    @property
    def is_uniform(self):
        g = self.gaps
        return bool(np.allclose(g, g[0], rtol=1e-12, atol=0.0))

    def to_json(self):
        return json.dumps([float(v) for v in self.nodes])

    @classmethod
    def from_json(cls, text):
        return cls(np.asarray(json.loads(text), dtype=float))

    def __repr__(self):
        return f"Mesh(n_interior={self.n_interior}, h={self.h:.6g})"


def build_mesh(interior_points=None, uniform_n=None) -> Mesh:
    """Mesh from explicit interior points or ``uniform_n`` equispaced interior nodes."""
    if (interior_points is None) == (uniform_n is None):
        raise ValueError("give exactly one of interior_points or uniform_n")
    if uniform_n is not None:
        if uniform_n < 1:
            raise EmptyPartition("uniform_n must be at least 1")
        return Mesh(np.linspace(0.0, 1.0, uniform_n + 2))
    pts = np.asarray(interior_points, dtype=float).reshape(-1)
    if pts.size == 0:
        raise EmptyPartition("no interior node given")
    if np.any(pts <= 0.0) or np.any(pts >= 1.0):
        raise NonMonotonePartition("interior points must lie strictly inside (0, 1)")
    if not np.all(np.diff(pts) > 0):
        raise NonMonotonePartition("interior points must be strictly increasing")
    return Mesh(np.concatenate(([0.0], pts, [1.0])))


@dataclass(frozen=True, eq=False)
class TridiagonalMatrix:
    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray

    @property
    def size(self):
        return self.diag.size

    @property
    def is_symmetric(self):
        return np.array_equal(self.sub, self.sup)

    def matvec(self, x):
        """``T @ x`` for ``x`` of shape ``(n,)`` or ``(n, r)``."""
        x = np.asarray(x, dtype=float)
        d = self.diag if x.ndim == 1 else self.diag[:, None]
        lo = self.sub if x.ndim == 1 else self.sub[:, None]
        up = self.sup if x.ndim == 1 else self.sup[:, None]
        y = d * x
        y[1:] += lo * x[:-1]
        y[:-1] += up * x[1:]
        return y

    def to_dense(self):
        return np.diag(self.diag) + np.diag(self.sub, -1) + np.diag(self.sup, 1)

    def __add__(self, other):
        return TridiagonalMatrix(self.sub + other.sub, self.diag + other.diag, self.sup + other.sup)

    def scaled(self, c):
        return TridiagonalMatrix(c * self.sub, c * self.diag, c * self.sup)


class TridiagonalSolver:
    """LDL^T factorization of an SPD tridiagonal matrix (LAPACK ``pttrf``/``pttrs``)."""

    def __init__(self, matrix: TridiagonalMatrix):
        if matrix.size == 1:
            # LAPACK rejects an empty off-diagonal
            d, e, info = np.array(matrix.diag, dtype=float), None, 0 if matrix.diag[0] > 0 else 1
        else:
            d, e, info = dpttrf(matrix.diag, matrix.sub)
        if info != 0 or not np.all(d > 0):
            raise SolverBreakdown(f"nonpositive pivot in tridiagonal factorization (info={info})")
        self._d, self._e = d, e

    def solve(self, rhs):
        if self._e is None:
            return np.asarray(rhs, dtype=float) / self._d[0]
        x, info = dpttrs(self._d, self._e, rhs)
        if info != 0:
            raise SolverBreakdown(f"tridiagonal solve failed (info={info})")
        return x


@dataclass(frozen=True, eq=False)
class NodalField:
    """A P1 function given by its interior nodal values on ``operator.mesh``."""

    values: np.ndarray
    operator: "FemOperator"

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size != self.operator.mesh.n_interior:
            raise ValueError(f"expected {self.operator.mesh.n_interior} nodal values, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ValueError("nodal values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def mesh(self):
        return self.operator.mesh

    def norm(self):
        return float(np.sqrt(max(self.values @ self.operator.mass.matvec(self.values), 0.0)))

    def evaluate(self, xi):
        return interpolate(self.mesh, self.values, xi)

    def __repr__(self):
        return f"NodalField(n={self.values.size})"


_GAUSS = {n: leggauss(n) for n in (2, 3, 5)}


def _gauss(order):
    if order not in _GAUSS:
        _GAUSS[order] = leggauss(order)
    t, w = _GAUSS[order]
    return (t + 1.0) / 2.0, w / 2.0


class FemOperator:
    """Assembled mass/stiffness pair on one mesh, with lazily computed eigenpairs."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        g = mesh.gaps
        self.mass = TridiagonalMatrix(g[1:-1] / 6.0, (g[:-1] + g[1:]) / 3.0, g[1:-1] / 6.0)
        self.stiffness = TridiagonalMatrix(-1.0 / g[1:-1], 1.0 / g[:-1] + 1.0 / g[1:], -1.0 / g[1:-1])
        self.mass_cholesky = _banded_cholesky(self.mass)
        _banded_cholesky(self.stiffness)
        self._lock = threading.Lock()
        self._eigen = None
        self._solvers = {}

    @property
    def n(self):
        return self.mesh.n_interior

    @property
    def h(self):
        return self.mesh.h

    @property
    def eigen(self):
        """``(lams, V)``: ascending eigenvalues of ``-A_h`` and M-orthonormal columns."""
        if self._eigen is None:
            with self._lock:
                if self._eigen is None:
                    self._eigen = _generalized_eigen(self)
        return self._eigen

    @property
    def eigenvalues(self):
        return self.eigen[0]

    @property
    def eigenvectors(self):
        return self.eigen[1]

    def resolvent(self, tau) -> TridiagonalSolver:
        """Cached solver for ``M + tau K``."""
        tau = float(tau)
        solver = self._solvers.get(tau)
        if solver is None:
            with self._lock:
                solver = self._solvers.get(tau)
                if solver is None:
                    solver = TridiagonalSolver(self.mass + self.stiffness.scaled(tau))
                    self._solvers[tau] = solver
        return solver

    def field(self, values):
        return NodalField(values, self)

    def zeros(self):
        return NodalField(np.zeros(self.n), self)

    def mass_cholesky_apply(self, x):
        """``C @ x`` with ``C`` the lower bidiagonal Cholesky factor of the mass matrix."""
        diag, sub = self.mass_cholesky
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            y = diag * x
            y[1:] += sub * x[:-1]
        else:
            y = diag[:, None] * x
            y[1:] += sub[:, None] * x[:-1]
        return y

    @cached_property
    def _quadrature2(self):
        return element_quadrature(self.mesh, 2)

    def eigen_coefficients(self, values):
        """Coordinates of a nodal vector in the M-orthonormal eigenbasis."""
        return self.eigenvectors.T @ self.mass.matvec(np.asarray(values, dtype=float))

    def frac_power_norm(self, alpha, values):
        """``|(-A_h)^alpha x_h|_H``."""
        a = self.eigen_coefficients(values)
        return float(np.sqrt(np.sum(self.eigenvalues ** (2 * alpha) * a * a)))

    def __repr__(self):
        return f"FemOperator({self.mesh!r})"


def _banded_cholesky(T: TridiagonalMatrix):
    ab = np.zeros((2, T.size))
    ab[0] = T.diag
    ab[1, :-1] = T.sub
    try:
        c = cholesky_banded(ab, lower=True)
    except LinAlgError as exc:
        raise CholeskyFailure(f"matrix is not positive definite: {exc}") from exc
    return c[0].copy(), c[1, :-1].copy()


def _generalized_eigen(op: FemOperator):
    diag, sub = op.mass_cholesky
    C = np.diag(diag) + np.diag(sub, -1)
    K = op.stiffness.to_dense()
    try:
        B = solve_triangular(C, solve_triangular(C, K, lower=True).T, lower=True)
        lams, Y = eigh((B + B.T) / 2.0)
    except (LinAlgError, ValueError) as exc:
        raise ConvergenceFailure(f"symmetric eigensolver failed: {exc}") from exc
    V = solve_triangular(C.T, Y, lower=False)
    return lams, V


def assemble(mesh: Mesh) -> FemOperator:
    return FemOperator(mesh)


def generalized_eigs(op: FemOperator):
    """All ``(lam_j^h, v_j)`` pairs of ``K v = lam M v``, ascending."""
    lams, V = op.eigen
    return [(float(lams[j]), NodalField(V[:, j], op)) for j in range(lams.size)]


def uniform_eigenvalues(n):
    """Closed-form eigenvalues of ``-A_h`` on the uniform mesh with ``n`` interior nodes."""
    d = 1.0 / (n + 1)
    c = np.cos(np.arange(1, n + 1) * np.pi * d)
    return 6.0 / d**2 * (1.0 - c) / (2.0 + c)


def element_quadrature(mesh: Mesh, order=2):
    """Gauss points per element: ``(xi[E, Q], s[Q], weights[E, Q])``, ``s`` the local coordinate."""
    s, w = _gauss(order)
    g = mesh.gaps
    xi = mesh.nodes[:-1, None] + g[:, None] * s[None, :]
    return xi, s, g[:, None] * w[None, :]


def _scatter_to_nodes(s, weighted):
    """Assemble per-element integrals against the two local hats into interior loads."""
    left = weighted @ (1.0 - s)
    right = weighted @ s
    return left[1:] + right[:-1]


def load_vector(op: FemOperator, f, order=2):
    """``b_j = int f phi_j`` by composite Gauss-Legendre of the given order."""
    xi, s, w = element_quadrature(op.mesh, order) if order != 2 else op._quadrature2
    vals = np.asarray(f(xi), dtype=float) * np.ones_like(xi)
    return _scatter_to_nodes(s, vals * w)


def full_values(values):
    v = np.asarray(values, dtype=float)
    return np.concatenate(([0.0], v, [0.0]))


def interpolate(mesh: Mesh, values, xi):
    return np.interp(xi, mesh.nodes, full_values(values))


def values_at_quadrature(op: FemOperator, values, order=2):
    """P1 interpolant evaluated at element Gauss points, shape ``(E, Q)``."""
    s, _ = _gauss(order)
    u = full_values(values)
    return u[:-1, None] * (1.0 - s)[None, :] + u[1:, None] * s[None, :]


def l2_project(op: FemOperator, f) -> NodalField:
    b = load_vector(op, f)
    return NodalField(op.resolvent(0.0).solve(b), op)


def ritz_project(op: FemOperator, f) -> NodalField:
    """Energy-orthogonal projection onto ``V_h``.

    ``phi_j'`` is constant on each element, so ``int f' phi_j'`` reduces exactly
    to nodal differences of ``f``; ``f'`` itself is never needed.
    """
    u = np.asarray(f(op.mesh.nodes), dtype=float)
    g = op.mesh.gaps
    flux = np.diff(u) / g
    b = flux[:-1] - flux[1:]
    x = TridiagonalSolver(op.stiffness).solve(b)
    return NodalField(x, op)


def l2_error(op: FemOperator, values, f, order=5):
    """``|f - x_h|_H`` by composite Gauss quadrature."""
    xi, s, w = element_quadrature(op.mesh, order)
    diff = np.asarray(f(xi), dtype=float) - values_at_quadrature(op, values, order)
    return float(np.sqrt(np.sum(w * diff * diff)))


def energy_error(op: FemOperator, values, df, order=5):
    """``|f' - x_h'|_H`` given the derivative ``df``; this is ``|f - x_h|_{1/2}``."""
    xi, s, w = element_quadrature(op.mesh, order)
    slope = np.diff(full_values(values)) / op.mesh.gaps
    diff = np.asarray(df(xi), dtype=float) - slope[:, None]
    return float(np.sqrt(np.sum(w * diff * diff)))


def sine_coefficients(op: FemOperator, values, modes):
    """Exact ``<x_h, e_k>`` for ``k < modes``.

    Integrating by parts twice, only the slope jumps at interior nodes remain.
    """
    slope = np.diff(full_values(values)) / op.mesh.gaps
    jumps = slope[:-1] - slope[1:]
    k = np.arange(modes)
    E = SQRT2 * np.sin(np.pi * np.outer(k + 1, op.mesh.interior))
    return (E @ jumps) / eigenvalues(modes)


def continuous_frac_norm(op: FemOperator, values, alpha, modes=4096):
    """``|(-A)^alpha x_h|_H`` for ``x_h`` in ``V_h``, ``alpha`` in [-1/2, 1/2]."""
    if alpha == 0.5:
        return float(np.sqrt(np.asarray(values) @ op.stiffness.matvec(values)))
    if alpha == 0.0:
        return NodalField(values, op).norm()
    c = sine_coefficients(op, values, modes)
    return float(np.sqrt(np.sum(eigenvalues(modes) ** (2 * alpha) * c * c)))


def trace_neg_half_power(op: FemOperator, kappa: float) -> float:
    """``Tr(P_h (-A_h)^{-1/2-kappa} P_h) = sum_j (lam_j^h)^{-1/2-kappa}``."""
    return float(np.sum(op.eigenvalues ** (-0.5 - kappa)))


def semi_implicit_solve(op: FemOperator, tau: float, rhs) -> NodalField:
    """Solve ``(M + tau K) x = rhs``, i.e. ``x = S_{tau,h} M^{-1} rhs``."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    return NodalField(op.resolvent(tau).solve(np.asarray(rhs, dtype=float)), op)


def smoothing_symbol_bound(j, tau, kappa, lam0=float(np.pi**2)):
    """``(j tau)^{-(1-kappa)} (1 + lam0 tau)^{-j kappa}``."""
    return (j * tau) ** (kappa - 1.0) * (1.0 + lam0 * tau) ** (-j * kappa)


def discrete_smoothing_violations(lams, kappas, js, taus, rtol=1e-12):
    """Triples ``(kappa, j, tau)`` where ``max_lam lam^{1-kappa} (1 + lam tau)^{-j}`` exceeds its bound.

    Evaluated in logs so that large ``j`` does not underflow.
    """
    lams = np.asarray(lams, dtype=float)
    bad = []
    for kappa in kappas:
        for tau in taus:
            log_l = (1.0 - kappa) * np.log(lams)
            log_r = np.log1p(lams * tau)
            for j in js:
                lhs = float(np.max(log_l - j * log_r))
                rhs = math.log(smoothing_symbol_bound(j, tau, kappa))
                if lhs > rhs + rtol:
                    bad.append((kappa, j, tau))
    return bad
