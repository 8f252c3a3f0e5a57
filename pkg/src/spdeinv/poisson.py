"""Numerical probe of the Poisson equation of a small Galerkin system.

For the ``M + 1``-mode truncation with generator

    L psi(x) = <-lam x + F_M(x), D psi(x)> + 1/2 Tr D^2 psi(x)

the time integral ``Psi(x) = int_0^inf (E phi(X(t, x)) - phibar) dt`` is
estimated by Monte Carlo along a time grid, integrated by composite Simpson.
Since ``d/dt E phi(X(t, x)) = L E phi(X(t, .))(x)``, the integral satisfies
``L Psi = phibar - phi``; the residual reported here is therefore
``|L Psi_hat + (phi - phibar)|``. All points of one finite-difference stencil
are driven by the same noise so that their differences are not swamped by
Monte Carlo error.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .dynamics import Nonlinearity, SchemeConfig, SpectralGalerkin, _spectral_drift, _spectral_drift_derivative
from .ergodic import CIEstimate, TestFunctional, Z95, estimate_invariant_functional
from .errors import TailNotConverged, ValidationError
from .rng import NoiseSource
from .spectral import eigenvalues

MAX_M = 3
CHUNK = 1 << 16


@dataclass(frozen=True, eq=False)
class GalerkinSystem:
    M: int
    functional: TestFunctional
    nonlinearity: Optional[Nonlinearity] = None
    phibar: Optional[float] = None
    phibar_halfwidth: float = 0.0

    def __post_init__(self):
        if not 0 <= self.M <= MAX_M:
            raise ValidationError(f"Galerkin dimension M must lie in [0, {MAX_M}], got {self.M}")

    @property
    def dim(self):
        return self.M + 1

    @property
    def lam(self):
        return eigenvalues(self.dim)

    @property
    def is_linear(self):
        return self.nonlinearity is None

    def F(self, X):
        """``F_M(x)`` batched over leading axes; zero for linear systems."""
        if self.nonlinearity is None:
            return np.zeros_like(X)
        return _spectral_drift(self.M, self.nonlinearity, X)

    def drift(self, X):
        return -self.lam * X + self.F(X)

    def phi(self, X):
        X = np.asarray(X, dtype=float)
        return self.functional.spectral_batch(X.reshape(-1, self.dim)).reshape(X.shape[:-1])

    def point(self, x):
        p = np.atleast_1d(np.asarray(x, dtype=float))
        if p.shape != (self.dim,):
            raise ValidationError(f"point must have {self.dim} coordinates, got shape {p.shape}")
        return p

    def with_phibar(self, budget=None):
        est = estimate_phibar(self, budget)
        return replace(self, phibar=est.mean, phibar_halfwidth=est.halfwidth)


@dataclass(frozen=True)
class Budget:
    """Work for :func:`estimate_phibar`.

    ``tau`` should match the step used by the probe (``dt / substeps``) so that
    ``phibar`` is the mean of the same discrete dynamics.
    """

    steps: int = 200_000
    burn_in: Optional[int] = None
    replicas: int = 4
    tau: float = 1e-3
    seed: int = 0
    samples: int = 1_000_000


@dataclass(frozen=True)
class PoissonEstimate:
    x: np.ndarray
    value: float
    mc_halfwidth: float
    T_max: float
    replicas: int
    tail: float = 0.0
    tail_halfwidth: float = 0.0


def _exact_phibar(sys: GalerkinSystem):
    var = 1.0 / (2.0 * sys.lam)
    f = sys.functional
    if f.kind == "constant":
        return f.scale
    if f.kind == "cos_inner":
        w = f._dual_vector(SpectralGalerkin(sys.M))
        return math.exp(-0.5 * float(np.dot(w * w, var)))
    if f.kind == "exp_neg_sq":
        return float(np.prod(1.0 / np.sqrt(1.0 + 2.0 * f.scale * var)))
    if f.kind == "second_moment":
        return float(var.sum())
    return None


def estimate_phibar(sys: GalerkinSystem, budget: Optional[Budget] = None) -> CIEstimate:
    """``phibar = int phi dmu`` of the Galerkin system.

    Linear systems have a Gaussian invariant law with mode variances
    ``1/(2 lam_j)``: known functionals are evaluated in closed form (half-width
    0), others by sampling that law directly. Nonlinear systems use a long
    semi-implicit ergodic average.
    """
    budget = budget or Budget()
    if sys.is_linear:
        exact = _exact_phibar(sys)
        if exact is not None:
            return CIEstimate(float(exact), 0.0, 0)
        rng = np.random.Generator(np.random.Philox(key=np.array([budget.seed, 0], dtype=np.uint64)))
        X = rng.standard_normal((budget.samples, sys.dim)) / np.sqrt(2.0 * sys.lam)
        v = sys.phi(X)
        return CIEstimate(float(v.mean()), Z95 * float(v.std(ddof=1)) / math.sqrt(v.size), v.size)
    cfg = SchemeConfig(variant=SpectralGalerkin(sys.M), tau=budget.tau, steps=budget.steps,
                       burn_in=budget.burn_in, nonlinearity=sys.nonlinearity,
                       functional=sys.functional, seed=budget.seed)
    return estimate_invariant_functional(cfg, replicas=budget.replicas)


def _resolved(sys: GalerkinSystem) -> GalerkinSystem:
    return sys if sys.phibar is not None else sys.with_phibar()


def _phibar(sys: GalerkinSystem):
    return _resolved(sys).phibar


def simpson_weights(n, dt):
    if n < 2 or n % 2:
        raise ValidationError(f"Simpson's rule needs an even number of intervals, got {n}")
    w = np.full(n + 1, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return w * (dt / 3.0)


def _grid(T_max, dt):
    n = int(round(T_max / dt))
    if n < 2 or abs(n * dt - T_max) > 1e-9 * T_max:
        raise ValidationError(f"T_max={T_max} is not a multiple of dt={dt}")
    if n % 2:
        raise ValidationError(f"T_max/dt = {n} must be even for Simpson's rule")
    return n


def _integrate_chunk(sys, points, phibar, n, dt, substeps, src, rows):
    """Per-replica Simpson integrals over ``[0, T]`` and ``[T, 2T]`` for every point.

    Returns two arrays of shape ``(P, rows)``.
    """
    d = sys.dim
    w = simpson_weights(n, dt)
    head = np.zeros((len(points), rows))
    tail = np.zeros((len(points), rows))
    lam = sys.lam
    if sys.is_linear:
        # exact OU transitions: X(t; x) = x e^{-lam t} + Z(t) with Z(0) = 0
        a = np.exp(-lam * dt)
        s = np.sqrt(-np.expm1(-2.0 * lam * dt) / (2.0 * lam))
        Z = np.zeros((rows, d))
        decay = np.ones(d)
        for i in range(2 * n + 1):
            if i:
                Z = a * Z + s * src.next(rows * d).reshape(rows, d)
                decay = decay * a
            X = points[:, None, :] * decay + Z
            f = sys.phi(X) - phibar
            if i <= n:
                head += w[i] * f
            if i >= n:
                tail += w[i - n] * f
        return head, tail
    h = dt / substeps
    inv = 1.0 / (1.0 + h * lam)
    sq = math.sqrt(h)
    X = np.broadcast_to(points[:, None, :], (len(points), rows, d)).copy()
    for i in range(2 * n + 1):
        if i:
            for _ in range(substeps):
                xi = src.next(rows * d).reshape(rows, d)
                X = (X + h * _spectral_drift(sys.M, sys.nonlinearity, X) + sq * xi) * inv
        f = sys.phi(X) - phibar
        if i <= n:
            head += w[i] * f
        if i >= n:
            tail += w[i - n] * f
    return head, tail


def _estimate_points(sys, points, T_max, replicas, seed, dt, substeps, threads, stream_base=0):
    n = _grid(T_max, dt)
    phibar = _phibar(sys)
    sizes = [min(CHUNK, replicas - c) for c in range(0, replicas, CHUNK)]
    if not sizes:
        raise ValidationError("need at least one replica")

    def job(c):
        src = NoiseSource(seed, stream_base + c)
        return _integrate_chunk(sys, points, phibar, n, dt, substeps, src, sizes[c])

    idx = range(len(sizes))
    if threads and threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(job, idx))
    else:
        parts = [job(c) for c in idx]
    head = np.concatenate([p[0] for p in parts], axis=1)
    tail = np.concatenate([p[1] for p in parts], axis=1)
    return head, tail


def _summarize(point, head, tail, T_max, check_tail, phibar_hw=0.0):
    R = head.size
    value = float(head.mean())
    hw = Z95 * float(head.std(ddof=1)) / math.sqrt(R) if R > 1 else math.inf
    t = float(tail.mean())
    t_sd = float(tail.std(ddof=1)) / math.sqrt(R) if R > 1 else math.inf
    # an error d in phibar shifts the [T, 2T] integral by T d on its own
    allowed = max(hw, 3.0 * t_sd) + T_max * phibar_hw
    if check_tail and abs(t) > allowed:
        raise TailNotConverged(
            f"integral over [T_max, 2 T_max] is {t:.3e}, above the allowed {allowed:.3e}; increase T_max={T_max}")
    return PoissonEstimate(point.copy(), value, hw, T_max, R, t, Z95 * t_sd)


def poisson_solution_estimate(sys: GalerkinSystem, x, T_max: float = 2.0, replicas: int = 10_000,
                              seed: int = 0, dt: float = 0.01, substeps: int = 10,
                              check_tail: bool = True, threads=None) -> PoissonEstimate:
    """``Psi_hat(x) = int_0^T_max (E_hat phi(X(t, x)) - phibar) dt``.

    Simulation runs to ``2 T_max``; ``TailNotConverged`` is raised when the
    extra half moves the integral by more than its Monte Carlo resolution.
    Linear systems use exact Ornstein-Uhlenbeck transitions on the ``dt`` grid,
    nonlinear ones semi-implicit Euler with ``substeps`` per grid interval.
    """
    p = sys.point(x)
    sys = _resolved(sys)
    head, tail = _estimate_points(sys, p[None, :], T_max, replicas, seed, dt, substeps, threads)
    return _summarize(p, head[0], tail[0], T_max, check_tail, sys.phibar_halfwidth)


def _stencil(x, delta):
    d = x.size
    pts = [x]
    for i in range(d):
        e = np.zeros(d)
        e[i] = delta
        pts += [x + e, x - e]
    return np.array(pts)


def _generator_from_stencil(sys, x, delta, vals):
    c = vals[0]
    plus, minus = vals[1::2], vals[2::2]
    grad = (plus - minus) / (2 * delta)
    trace = float(np.sum(plus - 2 * c + minus)) / delta**2
    return float(np.dot(sys.drift(x), grad)) + 0.5 * trace


def generator_apply_fd(sys: GalerkinSystem, psi: Callable, x, delta: float) -> float:
    """``L psi(x)`` with central differences of step ``delta``."""
    if delta <= 0:
        raise ValidationError("delta must be positive")
    p = sys.point(x)
    vals = np.array([float(psi(q)) for q in _stencil(p, delta)])
    return _generator_from_stencil(sys, p, delta, vals)


@dataclass(frozen=True)
class ProbeResult:
    x: np.ndarray
    psi: PoissonEstimate
    residual: float
    phibar: float


def probe(sys: GalerkinSystem, x, delta: float = 0.05, T_max: float = 2.0, replicas: int = 10**6,
          seed: int = 0, dt: float = 0.01, substeps: int = 10, threads=None) -> ProbeResult:
    """Evaluate ``Psi_hat`` on the stencil around ``x`` with common noise and form the residual."""
    if delta <= 0:
        raise ValidationError("delta must be positive")
    p = sys.point(x)
    sys = _resolved(sys)
    phibar = sys.phibar
    pts = _stencil(p, delta)
    head, tail = _estimate_points(sys, pts, T_max, replicas, seed, dt, substeps, threads)
    ests = [_summarize(q, head[j], tail[j], T_max, True, sys.phibar_halfwidth) for j, q in enumerate(pts)]
    vals = np.array([e.value for e in ests])
    Lpsi = _generator_from_stencil(sys, p, delta, vals)
    res = abs(Lpsi + (float(sys.phi(p)) - phibar))
    return ProbeResult(p, ests[0], res, phibar)


def poisson_residual(sys: GalerkinSystem, x, **kwargs) -> float:
    """``|L Psi_hat(x) + phi(x) - phibar|``; see :func:`probe` for the keywords."""
    return probe(sys, x, **kwargs).residual


# --- gradient ------------------------------------------------------------------

@dataclass(frozen=True)
class GradientEstimate:
    gradient: np.ndarray
    stderr: np.ndarray
    replicas: int


def _variation_step(sys, X, eta, h, inv):
    if sys.nonlinearity is None:
        return eta * inv[..., :, None]
    out = np.empty_like(eta)
    for i in range(eta.shape[-1]):
        col = eta[..., :, i]
        out[..., :, i] = (col + h * _spectral_drift_derivative(sys.M, sys.nonlinearity, X, col)) * inv
    return out


def first_variation(sys: GalerkinSystem, x, direction, t: float, dt: float = 1e-3, seed: int = 0):
    """``eta^{h,x}(t)`` along one semi-implicit path; returns ``(X_t, eta_t)``."""
    if sys.nonlinearity is not None and sys.nonlinearity.dg is None:
        raise ValidationError("first variation needs dg/du")
    X = sys.point(x).copy()
    eta = np.asarray(direction, dtype=float).reshape(sys.dim, 1).copy()
    n = max(1, int(round(t / dt)))
    h = t / n
    inv = 1.0 / (1.0 + h * sys.lam)
    src = NoiseSource(seed, 0)
    for _ in range(n):
        xi = src.next(sys.dim)
        eta = _variation_step(sys, X, eta, h, inv)
        X = (X + h * sys.F(X) + math.sqrt(h) * xi) * inv
    return X, eta[:, 0]


def bel_gradient(sys: GalerkinSystem, t: float, x, replicas: int = 100_000, seed: int = 0,
                 dt: float = 1e-3, baseline: Optional[float] = None) -> GradientEstimate:
    """Bismut-Elworthy-Li estimate of ``D E phi(X(t, x))``.

    Component ``i`` is ``(1/t) E[sum_k <eta_k e_i, dW_k> (phi(X_t) - b)]`` with
    ``eta`` the semi-implicit first variation. The constant ``b`` (default
    ``phibar`` for linear systems) only reduces variance: the stochastic sum has
    mean zero.
    """
    if t <= 0:
        raise ValidationError("t must be positive")
    if sys.nonlinearity is not None and sys.nonlinearity.dg is None:
        raise ValidationError("the gradient estimator needs dg/du")
    if baseline is None:
        baseline = _phibar(sys) if sys.is_linear or sys.phibar is not None else 0.0
    d = sys.dim
    n = max(1, int(round(t / dt)))
    h = t / n
    inv = 1.0 / (1.0 + h * sys.lam)
    sq = math.sqrt(h)
    p = sys.point(x)
    samples = []
    for c, start in enumerate(range(0, replicas, CHUNK)):
        rows = min(CHUNK, replicas - start)
        src = NoiseSource(seed, c)
        X = np.broadcast_to(p, (rows, d)).copy()
        eta = np.broadcast_to(np.eye(d), (rows, d, d)).copy()
        acc = np.zeros((rows, d))
        for _ in range(n):
            dW = sq * src.next(rows * d).reshape(rows, d)
            acc += np.einsum("rji,rj->ri", eta, dW)
            eta = _variation_step(sys, X, eta, h, inv)
            X = (X + h * sys.F(X) + dW) * inv
        samples.append(acc * ((sys.phi(X) - baseline) / t)[:, None])
    S = np.concatenate(samples)
    R = S.shape[0]
    sd = S.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.full(d, math.inf)
    return GradientEstimate(S.mean(axis=0), sd, R)


PROBE_COLUMNS = ["M", "phi", "x", "psi_hat", "residual", "T_max", "replicas", "seed"]


def probe_row(sys: GalerkinSystem, result: ProbeResult, seed: int):
    return {
        "M": str(sys.M),
        "phi": sys.functional.name or sys.functional.kind,
        "x": " ".join(repr(float(v)) for v in result.x),
        "psi_hat": repr(result.psi.value),
        "residual": repr(result.residual),
        "T_max": repr(float(result.psi.T_max)),
        "replicas": str(result.psi.replicas),
        "seed": str(seed),
    }


def write_probe_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=PROBE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)
