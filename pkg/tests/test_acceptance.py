"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``CRITERION n: PASS|FAIL ...`` line straight to the
terminal (not captured) and then asserts the same condition.
"""

import math

import numpy as np
import pytest

from spdeinv import fem
from spdeinv.bench import fit_loglog
from spdeinv.dynamics import FiniteElement, Nonlinearity, SchemeConfig, SpectralGalerkin, synchronous_gap
from spdeinv.ergodic import TestFunctional, estimate_invariant_functional
from spdeinv.fem import FemOperator, build_mesh
from spdeinv.oracle import h_weak_error_exact, tau_weak_error_exact
from spdeinv.poisson import GalerkinSystem, bel_gradient, probe
from spdeinv.spectral import SpectralField, eigenvalues

LAM0 = math.pi**2
E0 = SpectralField.unit(0, 1)
COS = TestFunctional.cos_inner(E0)


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail

    return _report


def uniform(n):
    return FemOperator(build_mesh(uniform_n=n))


def test_criterion_1_exact_tau_rate(report):
    taus = [0.2, 0.1, 0.05, 0.025, 0.0125]
    errs = [tau_weak_error_exact(t) for t in taus]
    slope = fit_loglog(list(zip(taus, errs)))[0]
    report(1, abs(slope - 0.5) <= 0.05, f"tau slope {slope:.4f} (target 0.5 +- 0.05)")


def test_criterion_2_exact_h_rate(report):
    ns = [15, 31, 63, 127, 255]
    pts = [(1.0 / (n + 1), h_weak_error_exact(uniform(n))) for n in ns]
    slope = fit_loglog(pts)[0]
    report(2, abs(slope - 1.0) <= 0.15, f"h slope {slope:.4f} (target 1.0 +- 0.15)")


def test_criterion_3_ergodic_estimator(report):
    tau = 0.05
    cfg = SchemeConfig(SpectralGalerkin(64), tau, 200_000, burn_in=20_000, functional=COS, seed=2024)
    est = estimate_invariant_functional(cfg, replicas=4, threads=4)
    oracle = math.exp(-0.5 / (2 * LAM0 + LAM0**2 * tau))
    gap = abs(est.mean - oracle)
    report(3, gap <= 3 * est.halfwidth,
           f"estimate {est.mean:.6f} vs oracle {oracle:.6f}, gap {gap:.2e}, 3 halfwidths {3 * est.halfwidth:.2e}")


def test_criterion_4_fem_spectral_agreement(report):
    tau = 0.05
    base = dict(tau=tau, steps=100_000, burn_in=10_000, nonlinearity=Nonlinearity.sine(), functional=COS)
    op = uniform(127)
    sg = estimate_invariant_functional(SchemeConfig(SpectralGalerkin(128), seed=1, **base), replicas=4, threads=4)
    fe = estimate_invariant_functional(SchemeConfig(FiniteElement(op), seed=2, **base), replicas=4, threads=4)
    gap = abs(sg.mean - fe.mean)
    allowed = 3 * math.hypot(sg.stderr, fe.stderr) + 2 * op.h
    report(4, gap <= allowed, f"spectral {sg.mean:.6f} vs FEM {fe.mean:.6f}, gap {gap:.2e}, allowed {allowed:.2e}")


def test_criterion_5_trace_uniformity(report):
    vals = [fem.trace_neg_half_power(uniform(n), 0.25) for n in (15, 31, 63, 127)]
    # lam_j^h >= lam_j, so each trace sits below the full continuous series sum_k (pi k)^{-3/2}
    k = np.arange(1, 10**6 + 1, dtype=float)
    bound = float(np.sum((math.pi * k) ** -1.5)) + 2 / math.sqrt(1e6) * math.pi**-1.5
    increasing = all(b > a for a, b in zip(vals, vals[1:]))
    report(5, increasing and vals[-1] < bound,
           f"traces {', '.join(f'{v:.5f}' for v in vals)}; bound {bound:.5f}")


def test_criterion_6_discrete_smoothing(report):
    lams = np.concatenate([uniform(n).eigenvalues for n in (15, 63, 255)] + [eigenvalues(256)])
    bad = fem.discrete_smoothing_violations(lams, [0.0, 0.25, 0.5], range(1, 201), [0.1, 0.01])
    report(6, not bad, f"{len(bad)} violations over {lams.size} eigenvalues x 3 kappa x 200 j x 2 tau")


def test_criterion_7_contraction(report):
    tau = 0.01
    # 300 steps keep the gap (about e^{-27} of its start) well above rounding level
    cfg = SchemeConfig(SpectralGalerkin(64), tau, 300, nonlinearity=Nonlinearity.sine(), seed=7)
    x1 = 3 * SpectralField.unit(0, 65).coeffs
    x2 = -2 * SpectralField.unit(2, 65).coeffs
    gap = synchronous_gap(cfg, x1, x2)
    slope = float(np.polyfit(np.arange(gap.size), np.log(gap), 1)[0])
    target = -tau * (LAM0 - 1.0) / 2
    report(7, bool(np.all(gap > 0)) and slope < target,
           f"log-gap slope {slope:.4f} per step (must be below {target:.4f})")


def test_criterion_8_poisson_identity(report):
    sys = GalerkinSystem(0, COS)
    res = {x: probe(sys, x, delta=0.05, T_max=2.0, replicas=10**6, seed=11, threads=4).residual
           for x in (-1.0, 0.0, 1.0)}
    worst = max(res.values())
    report(8, worst <= 5e-3, "residuals " + ", ".join(f"x={x:+.0f}: {r:.2e}" for x, r in res.items()))


def test_criterion_9_bel_gradient(report):
    t, x = 0.5, 1.0
    est = bel_gradient(GalerkinSystem(0, COS), t, x, replicas=10**5, seed=5)
    a = math.exp(-LAM0 * t)
    exact = -a * math.sin(x * a) * math.exp(-0.25 * -math.expm1(-2 * LAM0 * t) / LAM0)
    gap = abs(est.gradient[0] - exact)
    report(9, gap <= 3 * est.stderr[0],
           f"BEL {est.gradient[0]:.3e} vs exact {exact:.3e}, gap {gap:.2e}, 3 SE {3 * est.stderr[0]:.2e}")
