"""Semi-implicit Euler integrators for the spectral Galerkin and P1 schemes.

One step of either scheme solves

    (I - tau A_h) X_{k+1} = X_k + tau P F(X_k) + sqrt(tau) P chi_{k+1}

with the linear part implicit and the Nemytskii drift explicit. In the sine
basis the solve is a division per mode; in nodal coordinates it is
``(M_h + tau K_h) x_{k+1} = M_h x_k + tau b(x_k) + z`` with ``z ~ N(0, tau M_h)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from . import fem
from .errors import ValidationError
from .fem import FemOperator, NodalField
from .rng import NoiseSource
from .spectral import SpectralField, eigenvalues, sine_matrix


@dataclass(frozen=True)
class Nonlinearity:
    """Nemytskii map ``F(x)(xi) = g(xi, x(xi))`` with declared bounds.

    ``dg`` is ``dg/du`` and is only needed for first-variation processes.
    ``eta`` is the regularity exponent of the second derivative; it is
    metadata and never read by the integrators.
    """

    g: Callable
    g_bound: float
    lipschitz: float
    second_bound: float
    dg: Optional[Callable] = None
    name: str = "custom"
    eta: float = 0.3

    @classmethod
    def sine(cls, amplitude=1.0, frequency=1.0):
        a, w = float(amplitude), float(frequency)
        return cls(
            g=lambda xi, u: a * np.sin(w * u),
            dg=lambda xi, u: a * w * np.cos(w * u),
            g_bound=abs(a),
            lipschitz=abs(a * w),
            second_bound=abs(a) * w * w,
            name=f"sin(a={a:g},w={w:g})",
        )

    @classmethod
    def constant(cls, c):
        c = float(c)
        return cls(
            g=lambda xi, u: np.full(np.broadcast(xi, u).shape, c),
            dg=lambda xi, u: np.zeros(np.broadcast(xi, u).shape),
            g_bound=abs(c), lipschitz=0.0, second_bound=0.0, name=f"const({c:g})",
        )

    @classmethod
    def zero(cls):
        return cls.constant(0.0)

    @classmethod
    def identity(cls):
        """``g(xi, u) = u``; unbounded, useful only as a transform check."""
        return cls(g=lambda xi, u: u + 0.0 * xi, dg=lambda xi, u: np.ones(np.broadcast(xi, u).shape),
                   g_bound=np.inf, lipschitz=1.0, second_bound=0.0, name="identity")

    def bounds_violation(self, radius=50.0, points=201, slack=1e-9):
        """Largest excess of sampled ``|g|``, ``|dg|`` over the declared bounds (0 if honored).

        Second derivatives are checked by central differences of ``dg`` when
        available. Sampling is best effort: it cannot certify a bound.
        """
        xi, u = np.meshgrid(np.linspace(0.0, 1.0, points), np.linspace(-radius, radius, 4 * points))
        excess = float(np.max(np.abs(self.g(xi, u)))) - self.g_bound
        if self.dg is not None:
            d1 = np.abs(self.dg(xi, u))
            excess = max(excess, float(np.max(d1)) - self.lipschitz)
            e = 1e-4
            d2 = np.abs(self.dg(xi, u + e) - self.dg(xi, u - e)) / (2 * e)
            excess = max(excess, float(np.max(d2)) - self.second_bound - 1e-6)
        return max(excess - slack, 0.0)


@dataclass(frozen=True)
class SpectralGalerkin:
    """Galerkin truncation onto ``span(e_0, ..., e_M)``."""

    M: int

    def __post_init__(self):
        if self.M < 0:
            raise ValidationError("M must be nonnegative")

    @property
    def size(self):
        return self.M + 1

    @property
    def label(self):
        return "spectral"

    @property
    def resolution(self):
        return self.M


@dataclass(frozen=True, eq=False)
class FiniteElement:
    operator: FemOperator

    @classmethod
    def uniform(cls, n):
        return cls(fem.assemble(fem.build_mesh(uniform_n=n)))

    @property
    def size(self):
        return self.operator.n

    @property
    def label(self):
        return "fem"

    @property
    def resolution(self):
        return self.operator.h


Variant = Union[SpectralGalerkin, FiniteElement]


@dataclass(frozen=True, eq=False)
class SchemeConfig:
    variant: Variant
    tau: float
    steps: int
    burn_in: Optional[int] = None
    nonlinearity: Optional[Nonlinearity] = None
    initial: object = None
    seed: int = 0
    functional: object = None
    tau0: float = 1.0

    def __post_init__(self):
        if not (self.tau > 0):
            raise ValidationError(f"tau must be positive, got {self.tau}")
        if self.tau > self.tau0:
            raise ValidationError(f"tau={self.tau} exceeds the cap tau0={self.tau0}")
        if self.steps < 0:
            raise ValidationError("steps must be nonnegative")
        burn = int(0.1 * self.steps) if self.burn_in is None else int(self.burn_in)
        if burn < 0 or (self.steps > 0 and burn >= self.steps) or (self.steps == 0 and burn > 0):
            raise ValidationError(f"burn_in={burn} must lie in [0, steps={self.steps})")
        object.__setattr__(self, "burn_in", burn)

    @property
    def horizon(self):
        return self.tau * self.steps

    def replace(self, **changes):
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        if "steps" in changes and "burn_in" not in changes:
            kw["burn_in"] = None
        kw.update(changes)
        return SchemeConfig(**kw)


# --- noise -------------------------------------------------------------------

def sample_noise_spectral(M: int, tau: float, src: NoiseSource) -> SpectralField:
    """``M + 1`` independent standard normals; the ``sqrt(tau)`` is applied by the step."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    return SpectralField(src.next(M + 1))


def sample_noise_fem(op: FemOperator, tau: float, src: NoiseSource) -> np.ndarray:
    """Load ``z = sqrt(tau) C xi`` with ``C C^T = M_h``, so ``z ~ N(0, tau M_h)``."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    return np.sqrt(tau) * op.mass_cholesky_apply(src.next(op.n))


# --- drift -------------------------------------------------------------------

def nemytskii_load_fem(op: FemOperator, nl: Nonlinearity, x: NodalField) -> np.ndarray:
    """``b_j = int g(xi, x_h(xi)) phi_j`` with 2-point Gauss per element."""
    return _fem_drift(op, nl, x.values)


def _fem_drift(op, nl, values):
    xi, s, w = op._quadrature2
    u = fem.values_at_quadrature(op, values, 2)
    return fem._scatter_to_nodes(s, nl.g(xi, u) * w)


def collocation_points(M):
    q = 2 * (M + 1)
    return np.arange(1, q + 1) / (q + 1)


def nemytskii_project_spectral(M: int, nl: Nonlinearity, x: SpectralField) -> SpectralField:
    """Pseudo-spectral ``P_M F(x)`` on ``Q = 2(M+1)`` interior collocation points."""
    if x.mode_count != M + 1:
        raise ValueError(f"expected {M + 1} modes, got {x.mode_count}")
    return SpectralField(_spectral_drift(M, nl, x.coeffs))


def _spectral_drift(M, nl, coeffs):
    """Batched over leading axes of ``coeffs``."""
    q = 2 * (M + 1)
    S = sine_matrix(M + 1, q)
    u = coeffs @ S.T
    return nl.g(collocation_points(M), u) @ S / (q + 1)


def _spectral_drift_derivative(M, nl, coeffs, h):
    """``P_M [dg/du(xi, x(xi)) h(xi)]`` on the same collocation grid."""
    q = 2 * (M + 1)
    S = sine_matrix(M + 1, q)
    return (nl.dg(collocation_points(M), coeffs @ S.T) * (h @ S.T)) @ S / (q + 1)


# --- steppers ----------------------------------------------------------------

class _SpectralKernel:
    def __init__(self, cfg: SchemeConfig):
        M = cfg.variant.M
        self.M = M
        self.size = M + 1
        self.tau = cfg.tau
        self.inv = 1.0 / (1.0 + cfg.tau * eigenvalues(M + 1))
        self.sqrt_tau = np.sqrt(cfg.tau)
        self.nl = cfg.nonlinearity

    def noise(self, src):
        return src.next(self.size)

    def step(self, x, xi):
        rhs = x + self.sqrt_tau * xi if xi is not None else np.array(x, dtype=float)
        if self.nl is not None:
            rhs = rhs + self.tau * _spectral_drift(self.M, self.nl, x)
        return rhs * self.inv

    def wrap(self, x):
        return SpectralField(x)

    def initial(self, init):
        if init is None:
            return np.zeros(self.size)
        if isinstance(init, SpectralField):
            c = np.zeros(self.size)
            n = min(self.size, init.mode_count)
            c[:n] = init.coeffs[:n]
            return c
        if callable(init):
            return np.array(SpectralField.from_function(init, self.size).coeffs)
        c = np.asarray(init, dtype=float)
        if c.shape != (self.size,):
            raise ValidationError(f"initial spectral field must have {self.size} coefficients")
        return c.copy()


class _FemKernel:
    def __init__(self, cfg: SchemeConfig):
        self.op = cfg.variant.operator
        self.size = self.op.n
        self.tau = cfg.tau
        self.solver = self.op.resolvent(cfg.tau)
        self.sqrt_tau = np.sqrt(cfg.tau)
        self.nl = cfg.nonlinearity

    def noise(self, src):
        return self.sqrt_tau * self.op.mass_cholesky_apply(src.next(self.size))

    def step(self, x, z):
        rhs = self.op.mass.matvec(x)
        if z is not None:
            rhs += z
        if self.nl is not None:
            rhs += self.tau * _fem_drift(self.op, self.nl, x)
        return self.solver.solve(rhs)

    def wrap(self, x):
        return NodalField(x, self.op)

    def initial(self, init):
        if init is None:
            return np.zeros(self.size)
        if isinstance(init, NodalField):
            return np.array(init.values)
        if isinstance(init, SpectralField):
            return np.array(fem.l2_project(self.op, init.evaluate).values)
        if callable(init):
            return np.array(fem.l2_project(self.op, init).values)
        v = np.asarray(init, dtype=float)
        if v.shape != (self.size,):
            raise ValidationError(f"initial nodal field must have {self.size} values")
        return v.copy()


def kernel_for(cfg: SchemeConfig):
    if isinstance(cfg.variant, SpectralGalerkin):
        return _SpectralKernel(cfg)
    if isinstance(cfg.variant, FiniteElement):
        return _FemKernel(cfg)
    raise ValidationError(f"unknown variant {cfg.variant!r}")


def step_spectral(state: SpectralField, cfg: SchemeConfig, src: Optional[NoiseSource]) -> SpectralField:
    """One step in the sine basis; ``src=None`` forces the noise to zero."""
    k = _SpectralKernel(cfg)
    if state.mode_count != k.size:
        raise ValueError(f"state has {state.mode_count} modes, config expects {k.size}")
    return SpectralField(k.step(state.coeffs, None if src is None else k.noise(src)))


def step_fem(state: NodalField, cfg: SchemeConfig, src: Optional[NoiseSource]) -> NodalField:
    """One step in nodal coordinates; ``src=None`` forces the noise to zero."""
    k = _FemKernel(cfg)
    if state.operator is not k.op:
        raise ValueError("state lives on a different mesh than the config")
    return NodalField(k.step(state.values, None if src is None else k.noise(src)), k.op)


def run_arrays(cfg: SchemeConfig, src: NoiseSource, callback=None, every_step=False):
    """Iterate the scheme on raw arrays; ``callback(k, x)`` sees ``X_k`` for ``k >= burn_in``.

    Returns ``X_N``. With ``every_step`` the callback also sees burn-in steps.
    """
    kern = kernel_for(cfg)
    x = kern.initial(cfg.initial)
    first = 0 if every_step else cfg.burn_in
    for k in range(cfg.steps):
        if callback is not None and k >= first:
            callback(k, x)
        x = kern.step(x, kern.noise(src))
    return x


def simulate(cfg: SchemeConfig, observer=None, src: Optional[NoiseSource] = None, every_step=False):
    """Run ``cfg.steps`` steps from ``cfg.initial``; memory is constant in the horizon.

    ``observer(k, state)`` receives wrapped fields (SpectralField or NodalField)
    for ``k`` in ``[burn_in, steps)``, before the step from ``k`` to ``k+1``.
    """
    kern = kernel_for(cfg)
    src = src if src is not None else NoiseSource(cfg.seed, 0)
    cb = None
    if observer is not None:
        def cb(k, x):
            observer(k, kern.wrap(x))
    return kern.wrap(run_arrays(cfg, src, cb, every_step))


class TrajectoryCSV:
    """Observer streaming ``step,time,value`` rows of a functional to a CSV file."""

    def __init__(self, path, functional, tau):
        self._fh = open(path, "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(["step", "time", "value"])
        self.functional = functional
        self.tau = tau

    def __call__(self, k, state):
        self._writer.writerow([k, repr(k * self.tau), repr(float(self.functional(state)))])

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def synchronous_gap(cfg: SchemeConfig, x1, x2, src: Optional[NoiseSource] = None) -> np.ndarray:
    """``|X_k(x1) - X_k(x2)|_H`` for ``k = 0..N`` with both chains driven by the same noise."""
    kern = kernel_for(cfg)
    src = src if src is not None else NoiseSource(cfg.seed, 0)
    a, b = kern.initial(x1), kern.initial(x2)
    if isinstance(kern, _FemKernel):
        mass = kern.op.mass
        norm = lambda d: float(np.sqrt(d @ mass.matvec(d)))
    else:
        norm = lambda d: float(np.sqrt(d @ d))
    out = np.empty(cfg.steps + 1)
    out[0] = norm(a - b)
    for k in range(cfg.steps):
        xi = kern.noise(src)
        a, b = kern.step(a, xi), kern.step(b, xi)
        out[k + 1] = norm(a - b)
    return out
