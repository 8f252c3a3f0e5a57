"""Time-average estimation of invariant-measure expectations.

The estimator is ``(1/N) sum_m phi(X_m)`` over post-burn-in steps, averaged
over independent replicas. Its statistical error is reported with batch means:
each replica's samples are cut into ``floor(sqrt(N - burn_in))``-long batches
and the pooled batch means give a 95% half-width.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import fem
from .dynamics import FiniteElement, SchemeConfig, SpectralGalerkin, kernel_for
from .errors import InsufficientBatches, ValidationError
from .fem import NodalField
from .rng import NoiseSource
from .spectral import SpectralField

Z95 = 1.96
MIN_BATCHES = 8


@dataclass(frozen=True, eq=False)
class TestFunctional:
    """An observable ``phi: H -> R`` evaluable on either discretization.

    Build with :meth:`cos_inner`, :meth:`exp_neg_sq`, :meth:`second_moment`,
    :meth:`constant` or :meth:`custom`. ``sup_norm``, ``lip`` and ``hess`` hold
    ``||phi||_inf``, ``||phi||_1``, ``||phi||_2`` when known.
    """

    __test__ = False  # keep pytest from collecting this class

    kind: str
    direction: object = None
    scale: float = 1.0
    fn: Optional[Callable] = None
    name: str = ""
    sup_norm: Optional[float] = None
    lip: Optional[float] = None
    hess: Optional[float] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def cos_inner(cls, direction, name=None):
        if isinstance(direction, (SpectralField, NodalField)):
            n = direction.norm()
            return cls("cos_inner", direction=direction, name=name or "cos_inner", sup_norm=1.0, lip=n, hess=n * n)
        return cls("cos_inner", direction=direction, name=name or "cos_inner", sup_norm=1.0)

    @classmethod
    def exp_neg_sq(cls, scale=1.0):
        """``exp(-scale |x|_H^2)``."""
        s = float(scale)
        return cls("exp_neg_sq", scale=s, name=f"exp_neg_sq({s:g})", sup_norm=1.0,
                   lip=math.sqrt(2 * s) * math.exp(-0.5), hess=2 * s)

    @classmethod
    def second_moment(cls):
        """``|x|_H^2``; unbounded, so not admissible, but exact oracles exist."""
        return cls("second_moment", name="second_moment")

    @classmethod
    def constant(cls, c):
        c = float(c)
        return cls("constant", scale=c, name=f"constant({c:g})", sup_norm=abs(c), lip=0.0, hess=0.0)

    @classmethod
    def custom(cls, fn, name="custom", sup_norm=None):
        """``fn`` receives a SpectralField or NodalField."""
        return cls("custom", fn=fn, name=name, sup_norm=sup_norm)

    def __call__(self, state):
        if isinstance(state, SpectralField):
            return self.compile(SpectralGalerkin(state.mode_count - 1))(state.coeffs)
        if isinstance(state, NodalField):
            return self.compile(FiniteElement(state.operator))(state.values)
        raise TypeError(f"cannot evaluate a functional on {type(state).__name__}")

    def compile(self, variant) -> Callable[[np.ndarray], float]:
        """Fast evaluator on the raw coefficient/nodal array of ``variant``."""
        key = ("s", variant.M) if isinstance(variant, SpectralGalerkin) else ("f", id(variant.operator))
        fn = self._cache.get(key)
        if fn is None:
            fn = self._build(variant)
            self._cache[key] = fn
        return fn

    def _build(self, variant):
        spectral = isinstance(variant, SpectralGalerkin)
        if self.kind == "custom":
            if spectral:
                return lambda x: float(self.fn(SpectralField(x)))
            op = variant.operator
            return lambda x: float(self.fn(NodalField(x, op)))
        if self.kind == "constant":
            c = self.scale
            return lambda x: c
        if self.kind == "cos_inner":
            w = self._dual_vector(variant)
            return lambda x: math.cos(float(np.dot(x, w)))
        if spectral:
            sq = lambda x: float(np.dot(x, x))
        else:
            mass = variant.operator.mass
            sq = lambda x: float(x @ mass.matvec(x))
        if self.kind == "second_moment":
            return sq
        if self.kind == "exp_neg_sq":
            s = self.scale
            return lambda x: math.exp(-s * sq(x))
        raise ValidationError(f"unknown functional kind {self.kind!r}")

    def _dual_vector(self, variant):
        """Vector ``w`` with ``<x, direction>_H = x . w`` for the variant's arrays."""
        d = self.direction
        if isinstance(variant, SpectralGalerkin):
            n = variant.M + 1
            if isinstance(d, SpectralField):
                w = np.zeros(n)
                m = min(n, d.mode_count)
                w[:m] = d.coeffs[:m]
                return w
            if isinstance(d, NodalField):
                return fem.sine_coefficients(d.operator, d.values, n)
            return np.array(SpectralField.from_function(d, n, resolution=max(4 * n, 512)).coeffs)
        op = variant.operator
        if isinstance(d, NodalField) and d.operator is op:
            return op.mass.matvec(d.values)
        f = d.evaluate if isinstance(d, (SpectralField, NodalField)) else d
        return fem.load_vector(op, f, order=5)

    def spectral_batch(self, X):
        """Evaluate on a batch of sine-coefficient rows ``X[r, k]``."""
        X = np.atleast_2d(X)
        if self.kind == "constant":
            return np.full(X.shape[0], self.scale)
        if self.kind == "cos_inner":
            return np.cos(X @ self._dual_vector(SpectralGalerkin(X.shape[1] - 1)))
        if self.kind == "second_moment":
            return np.einsum("rk,rk->r", X, X)
        if self.kind == "exp_neg_sq":
            return np.exp(-self.scale * np.einsum("rk,rk->r", X, X))
        return np.array([float(self.fn(SpectralField(row))) for row in X])

    def __repr__(self):
        return f"TestFunctional({self.name or self.kind})"


class RunningAverage:
    """Streaming mean with Neumaier-compensated summation and batch means."""

    def __init__(self, batch_size=1):
        if batch_size < 1:
            raise ValueError("batch size must be at least 1")
        self.batch_size = int(batch_size)
        self.count = 0
        self._sum = 0.0
        self._comp = 0.0
        self._batch = []
        self.batch_means = []

    def update(self, value):
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"non-finite sample {value}")
        self.count += 1
        t = self._sum + value
        if abs(self._sum) >= abs(value):
            self._comp += (self._sum - t) + value
        else:
            self._comp += (value - t) + self._sum
        self._sum = t
        self._batch.append(value)
        if len(self._batch) == self.batch_size:
            self.batch_means.append(math.fsum(self._batch) / self.batch_size)
            self._batch = []
        return self

    @property
    def total(self):
        return self._sum + self._comp

    @property
    def mean(self):
        return self.total / self.count if self.count else math.nan


def update_time_average(acc: RunningAverage, value) -> RunningAverage:
    return acc.update(value)


@dataclass(frozen=True)
class CIEstimate:
    mean: float
    halfwidth: float
    batches: int
    replica_means: tuple = ()

    @property
    def stderr(self):
        return self.halfwidth / Z95


def ci_from_batches(mean, batch_means) -> CIEstimate:
    b = np.asarray(batch_means, dtype=float)
    if b.size < MIN_BATCHES:
        raise InsufficientBatches(f"{b.size} complete batches, need at least {MIN_BATCHES}")
    s = 0.0 if np.ptp(b) == 0.0 else float(np.std(b, ddof=1))
    return CIEstimate(float(mean), Z95 * s / math.sqrt(b.size), int(b.size))


def batch_means_ci(acc: RunningAverage) -> CIEstimate:
    return ci_from_batches(acc.mean, acc.batch_means)


def default_batch_size(cfg: SchemeConfig):
    return max(1, math.isqrt(cfg.steps - cfg.burn_in))


def replica_average(cfg: SchemeConfig, stream_id: int, functional=None) -> RunningAverage:
    """Time average of one trajectory driven by stream ``(cfg.seed, stream_id)``."""
    functional = functional or cfg.functional
    if functional is None:
        raise ValidationError("config has no test functional")
    phi = functional.compile(cfg.variant)
    acc = RunningAverage(default_batch_size(cfg))
    kern = kernel_for(cfg)
    src = NoiseSource(cfg.seed, stream_id)
    x = kern.initial(cfg.initial)
    burn = cfg.burn_in
    for k in range(cfg.steps):
        if k >= burn:
            acc.update(phi(x))
        x = kern.step(x, kern.noise(src))
    return acc


def estimate_invariant_functional(cfg: SchemeConfig, replicas: int = 1, threads=None,
                                  stream_ids=None, functional=None) -> CIEstimate:
    """Replica-averaged time average with a pooled batch-means half-width.

    Replica ``r`` uses stream id ``stream_ids[r]`` (default ``r``). Results are
    merged in stream-id order so the output does not depend on scheduling.
    """
    ids = list(range(replicas)) if stream_ids is None else [int(i) for i in stream_ids]
    if len(ids) < 1:
        raise ValidationError("need at least one replica")
    if len(set(ids)) != len(ids):
        raise ValidationError("replica stream ids must be distinct")
    ids.sort()
    workers = min(len(ids), threads or 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            accs = list(pool.map(lambda i: replica_average(cfg, i, functional), ids))
    else:
        accs = [replica_average(cfg, i, functional) for i in ids]
    means = [a.mean for a in accs]
    mean = math.fsum(means) / len(means)
    pooled = [m for a in accs for m in a.batch_means]
    ci = ci_from_batches(mean, pooled)
    return CIEstimate(ci.mean, ci.halfwidth, ci.batches, tuple(means))


ESTIMATE_COLUMNS = ["functional", "variant", "tau", "h_or_M", "N", "burn_in", "replicas", "mean", "halfwidth", "seed"]


def estimate_row(cfg: SchemeConfig, replicas: int, est: CIEstimate, functional=None):
    functional = functional or cfg.functional
    v = cfg.variant
    return {
        "functional": functional.name or functional.kind,
        "variant": v.label,
        "tau": repr(float(cfg.tau)),
        "h_or_M": str(v.M) if isinstance(v, SpectralGalerkin) else repr(float(v.operator.h)),
        "N": str(cfg.steps),
        "burn_in": str(cfg.burn_in),
        "replicas": str(replicas),
        "mean": repr(float(est.mean)),
        "halfwidth": repr(float(est.halfwidth)),
        "seed": str(cfg.seed),
    }


def write_estimate_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=ESTIMATE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)
