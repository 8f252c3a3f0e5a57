"""Rate sweeps in tau and h with log-log slope fits.

Linear sweeps are exact: they difference closed-form invariant-law quantities
from :mod:`spdeinv.oracle`. Nonlinear sweeps difference ergodic estimates
against a finer reference run of the same scheme and keep only rows whose
error clearly exceeds its Monte Carlo half-width.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import oracle
from .dynamics import FiniteElement, SchemeConfig, SpectralGalerkin
from .ergodic import estimate_invariant_functional
from .errors import DegenerateFit, InsufficientSignal, ValidationError
from .fem import FemOperator, Mesh, build_mesh
from .oracle import LinearInvariantLaw

MIN_ROWS = 4
SIGNAL_RATIO = 5.0
REFERENCE_REFINE = 8
REFERENCE_REPLICAS = 4
# replica stream ids of sweep point i start at i * STREAM_STRIDE
STREAM_STRIDE = 1 << 20


def fit_loglog(points):
    """OLS of ``log y`` on ``log x``; returns ``(slope, intercept, r2)``."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise ValidationError("need at least two (x, y) points")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise ValidationError("log-log fit needs finite positive coordinates")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    dx = lx - lx.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise DegenerateFit("all x values are equal")
    slope = float(dx @ (ly - ly.mean())) / sxx
    intercept = float(ly.mean() - slope * lx.mean())
    resid = ly - (intercept + slope * lx)
    sst = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 if sst == 0.0 else 1.0 - float(resid @ resid) / sst
    return slope, intercept, r2


@dataclass(frozen=True)
class SweepResult:
    """Rows ``(parameter, error, halfwidth)`` sorted by parameter, plus the fit on ``used`` rows."""

    rows: tuple
    slope: float
    intercept: float
    r2: float
    used: tuple = ()

    @property
    def parameters(self):
        return [r[0] for r in self.rows]

    @property
    def errors(self):
        return [r[1] for r in self.rows]


def _finish(rows):
    rows = sorted((float(p), float(e), float(hw)) for p, e, hw in rows)
    params = [r[0] for r in rows]
    if len(set(params)) != len(params):
        raise ValidationError("sweep parameters must be distinct")
    used = tuple(r for r in rows if r[1] > 0 and r[1] > SIGNAL_RATIO * r[2])
    if len(used) < MIN_ROWS:
        raise InsufficientSignal(
            f"{len(used)} of {len(rows)} sweep rows carry signal (error > {SIGNAL_RATIO:g} x halfwidth); "
            f"need {MIN_ROWS}")
    slope, intercept, r2 = fit_loglog([(p, e) for p, e, _ in used])
    return SweepResult(tuple(rows), slope, intercept, r2, used)


def _linear_law_gap(law_a: LinearInvariantLaw, law_b: LinearInvariantLaw, functional):
    if functional.kind == "second_moment":
        return abs(oracle.second_moment(law_a) - oracle.second_moment(law_b))
    if functional.kind == "cos_inner":
        v = functional.direction
        return abs(oracle.char_functional(law_a, v) - oracle.char_functional(law_b, v))
    return None


def _exact_tau_error(cfg: SchemeConfig, tau, functional):
    v = cfg.variant
    if isinstance(v, SpectralGalerkin):
        if functional.kind == "second_moment":
            return oracle.tau_weak_error_exact(tau)
        return _linear_law_gap(LinearInvariantLaw.discrete_time_spectral(tau),
                               LinearInvariantLaw.continuous(), functional)
    op = v.operator
    return _linear_law_gap(LinearInvariantLaw.fem_fully_discrete(op, tau),
                           LinearInvariantLaw.fem_continuous_time(op), functional)


def _exact_h_error(op: FemOperator, functional):
    if functional.kind == "second_moment":
        return oracle.h_weak_error_exact(op)
    return _linear_law_gap(LinearInvariantLaw.fem_continuous_time(op), LinearInvariantLaw.continuous(), functional)


def _is_exact(cfg, functional):
    return cfg.nonlinearity is None and functional.kind in ("second_moment", "cos_inner")


def _rescaled(cfg: SchemeConfig, tau):
    """Same physical horizon and burn-in time at step ``tau``."""
    steps = max(1, int(round(cfg.steps * cfg.tau / tau)))
    burn = int(round(cfg.burn_in * cfg.tau / tau))
    return cfg.replace(tau=tau, steps=steps, burn_in=min(burn, steps - 1))


def _estimates(cfgs, replicas, threads, functional):
    def job(i):
        c, r = cfgs[i], replicas[i]
        ids = [i * STREAM_STRIDE + k for k in range(r)]
        return estimate_invariant_functional(c, replicas=r, stream_ids=ids, functional=functional)

    idx = range(len(cfgs))
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(job, idx))
    return [job(i) for i in idx]


def _mc_rows(params, cfgs, ref_cfg, replicas, threads, functional):
    ests = _estimates(cfgs + [ref_cfg], [replicas] * len(cfgs) + [REFERENCE_REPLICAS * replicas],
                      threads, functional)
    ref = ests[-1]
    return [(p, abs(e.mean - ref.mean), math.hypot(e.halfwidth, ref.halfwidth))
            for p, e in zip(params, ests[:-1])]


def run_tau_sweep(cfg: SchemeConfig, taus: Sequence[float], replicas: int = 1, threads=None,
                  functional=None) -> SweepResult:
    """Invariant-law error against ``tau``.

    Linear configs with ``|x|^2`` or ``cos<x, v>`` are exact. Otherwise each
    ``tau`` is estimated over the base config's physical horizon and compared
    with the same scheme at ``min(taus) / 8`` using four times the replicas.
    """
    functional = functional or cfg.functional
    if functional is None:
        raise ValidationError("config has no test functional")
    taus = [float(t) for t in taus]
    if any(t <= 0 for t in taus):
        raise ValidationError("sweep step sizes must be positive")
    if len(taus) < MIN_ROWS:
        raise InsufficientSignal(f"{len(taus)} sweep points given, need at least {MIN_ROWS}")
    if _is_exact(cfg, functional):
        return _finish([(t, _exact_tau_error(cfg, t, functional), 0.0) for t in taus])
    cfgs = [_rescaled(cfg, t) for t in taus]
    ref = _rescaled(cfg, min(taus) / REFERENCE_REFINE)
    return _finish(_mc_rows(taus, cfgs, ref, replicas, threads, functional))


def _as_operator(m):
    if isinstance(m, FemOperator):
        return m
    if isinstance(m, Mesh):
        return FemOperator(m)
    if isinstance(m, (int, np.integer)):
        return FemOperator(build_mesh(uniform_n=int(m)))
    raise ValidationError(f"cannot build a mesh from {m!r}")


def run_h_sweep(cfg: SchemeConfig, meshes, replicas: int = 1, threads=None, functional=None) -> SweepResult:
    """Invariant-law error against the mesh size ``h``.

    Entries of ``meshes`` are uniform interior-node counts, meshes or
    operators. Linear configs compare the continuous-time FEM law with the
    exact one; otherwise the reference is the same scheme on a mesh twice as
    fine as the finest one, with four times the replicas.
    """
    functional = functional or cfg.functional
    if functional is None:
        raise ValidationError("config has no test functional")
    ops = [_as_operator(m) for m in meshes]
    if len(ops) < MIN_ROWS:
        raise InsufficientSignal(f"{len(ops)} meshes given, need at least {MIN_ROWS}")
    hs = [op.h for op in ops]
    if _is_exact(cfg, functional):
        return _finish([(h, _exact_h_error(op, functional), 0.0) for h, op in zip(hs, ops)])
    cfgs = [cfg.replace(variant=FiniteElement(op)) for op in ops]
    finest = min(ops, key=lambda o: o.h)
    ref = cfg.replace(variant=FiniteElement(FemOperator(build_mesh(uniform_n=2 * finest.n + 1))))
    return _finish(_mc_rows(hs, cfgs, ref, replicas, threads, functional))


SWEEP_HEADER = ["parameter", "error", "halfwidth"]


def emit_csv(result: SweepResult, path) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_HEADER)
            for p, e, hw in result.rows:
                w.writerow([repr(p), repr(e), repr(hw)])
            fh.write(f"# slope={result.slope!r},intercept={result.intercept!r},r2={result.r2!r}\n")
    except OSError as exc:
        raise OSError(f"cannot write sweep table to {path}: {exc.strerror or exc}") from exc


def read_sweep_csv(path):
    """Returns ``(rows, fit)`` where ``fit`` maps slope/intercept/r2 to floats."""
    rows, fit = [], {}
    with open(path, newline="", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    for line in csv.reader(l for l in lines[1:] if not l.startswith("#")):
        rows.append(tuple(float(v) for v in line))
    for line in lines:
        if line.startswith("#"):
            for part in line[1:].strip().split(","):
                k, v = part.split("=")
                fit[k.strip()] = float(v)
    return rows, fit
