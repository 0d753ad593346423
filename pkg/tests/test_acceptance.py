"""Acceptance suite: one test and one printed PASS/FAIL line per criterion.

Run with `pytest tests/test_acceptance.py -v -s` to see the summary lines;
without -s they still appear in captured output on failure.
"""

import json
import math
import time

import numpy as np
import pytest
import sympy as sp

from kamtori import (
    BSplineProfile,
    CompositeHamiltonian,
    FourierMap,
    FrequencyVector,
    HamiltonianModel,
    RoughTerm,
    TorusEmbedding,
    check_diophantine,
    estimate_gamma,
    solve_cohomological,
)
from kamtori.driver import RunParams, run_scheme, select_k0
from kamtori.smoothing import (
    bernstein_1d,
    bernstein_derivative,
    build_smoothing_sequence,
    cl_gap,
    cutoff_extend,
    unit_box,
)
from kamtori.solver import invariance_error, newton_step, solve_torus

from conftest import GOLDEN, random_trig


def report(num, label, ok, detail=""):
    suffix = f" ({detail})" if detail else ""
    print(f"[acceptance {num:02d}] {label}: {'PASS' if ok else 'FAIL'}{suffix}")
    return ok


def rough_rotator(amplitude=1e-4):
    profile = BSplineProfile([0.0, 0.52, 0.55, 0.05, -0.48, -0.55], degree=5)
    return CompositeHamiltonian(
        HamiltonianModel.free_rotator(1), [RoughTerm(0, profile, amplitude)]
    )


@pytest.fixture(scope="module")
def golden_freq():
    return FrequencyVector.estimated(np.array([GOLDEN]), sigma=1.1, horizon=256)


@pytest.fixture(scope="module")
def pendulum_solved(golden_freq):
    h = HamiltonianModel.pendulum(1e-3)
    K0 = TorusEmbedding.circle(GOLDEN, trunc_order=64)
    t0 = time.perf_counter()
    res = solve_torus(h, K0, golden_freq, tol=1e-12, max_iter=12)
    return h, K0, res, time.perf_counter() - t0


def test_criterion_01_exact_rotator_zero(golden_freq):
    t0 = time.perf_counter()
    h = HamiltonianModel.free_rotator(1)
    K = TorusEmbedding.circle(GOLDEN, trunc_order=32)
    err = invariance_error(h, K, golden_freq)
    res = solve_torus(h, K, golden_freq, tol=1e-13)
    elapsed = time.perf_counter() - t0
    ok = err.norm_grid <= 1e-13 and res.iterations == 0 and elapsed < 1.0
    report(1, "exact rotator zero defect", ok,
           f"e_grid={err.norm_grid:.1e}, iters={res.iterations}, {elapsed:.2f}s")
    assert err.norm_grid <= 1e-13
    assert res.converged and res.iterations == 0
    assert elapsed < 1.0


def test_criterion_02_quadratic_contraction_and_flow(pendulum_solved):
    h, _, res, solve_time = pendulum_solved
    t0 = time.perf_counter()
    errs = [rec["error"] for rec in res.trace]
    contraction = all(
        b <= 1e3 * a**2 for a, b in zip(errs, errs[1:]) if a >= 1e-12
    )

    # independent check: classical RK4 on the closed-form pendulum field
    # xdot = y, ydot = 2 pi eps sin(2 pi x), eps = 1e-3
    K = res.torus
    rng = np.random.default_rng(7)
    theta = rng.random((6, 1))
    z = K(theta)
    step, eps = 1e-4, 1e-3

    def field(z):
        return np.stack(
            [z[:, 1], 2 * np.pi * eps * np.sin(2 * np.pi * z[:, 0])], axis=1
        )

    for _ in range(10000):
        k1 = field(z)
        k2 = field(z + 0.5 * step * k1)
        k3 = field(z + 0.5 * step * k2)
        k4 = field(z + step * k3)
        z = z + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    flow_gap = float(np.max(np.abs(z - K(theta + GOLDEN))))
    elapsed = solve_time + time.perf_counter() - t0

    ok = (
        res.error < 1e-12
        and res.iterations <= 6
        and contraction
        and flow_gap < 1e-8
        and elapsed < 30.0
    )
    report(2, "pendulum quadratic contraction + flow check", ok,
           f"iters={res.iterations}, e={res.error:.1e}, flow={flow_gap:.1e}, "
           f"{elapsed:.1f}s")
    assert res.converged and res.error < 1e-12
    assert res.iterations <= 6
    assert contraction
    assert flow_gap < 1e-8
    assert elapsed < 30.0


def test_criterion_03_lindstedt_first_step(golden_freq):
    eps = 1e-3
    h = HamiltonianModel.pendulum(eps)
    K = TorusEmbedding.circle(GOLDEN, trunc_order=64)
    K1, _ = newton_step(h, K, golden_freq)
    theta = (np.arange(512) / 512)[:, None]
    u = K1.periodic(theta)[:, 0] - K.periodic(theta)[:, 0]
    # dominant (first) sine mode amplitude vs the Lindstedt coefficient
    got = 2.0 * float(np.mean(u * np.sin(2 * np.pi * theta[:, 0])))
    want = -eps / (2 * np.pi * GOLDEN**2)
    gap = abs(got - want)
    ok = gap < 5 * eps**2
    report(3, "Lindstedt first-order consistency", ok,
           f"mode gap={gap:.2e} < {5 * eps**2:.1e}")
    assert gap < 5 * eps**2


def test_criterion_04_bernstein_exactness_and_rate():
    t0 = time.perf_counter()

    def affine(x):
        return 3.0 * x[..., 0] - 1.25

    pts = np.linspace(0, 1, 101)[:, None]
    affine_worst = 0.0
    for k in range(1, 65):
        b = bernstein_1d(affine, k)
        affine_worst = max(affine_worst, float(np.max(np.abs(b(pts) - affine(pts)))))

    nodes = np.arange(11) / 10
    b10 = bernstein_1d(nodes**2, 10)
    x = np.linspace(0, 1, 201)
    closed = x**2 + x * (1 - x) / 10
    square_gap = float(np.max(np.abs(b10(x[:, None]) - closed)))

    def smooth(x):
        return np.sin(2 * np.pi * x[..., 0])

    ks = [8, 16, 32, 64]
    gaps = [cl_gap(bernstein_1d(smooth, k), smooth, unit_box(1), 3) for k in ks]
    slopes = [math.log2(a / b) for a, b in zip(gaps, gaps[1:])]
    rate = sum(slopes) / len(slopes)
    elapsed = time.perf_counter() - t0

    ok = (
        affine_worst <= 1e-13
        and square_gap <= 1e-12
        and 0.8 <= rate <= 1.2
        and elapsed < 60.0
    )
    report(4, "Bernstein exactness and C3 rate", ok,
           f"affine={affine_worst:.1e}, square={square_gap:.1e}, "
           f"rate={rate:.2f}, {elapsed:.1f}s")
    assert affine_worst <= 1e-13
    assert square_gap <= 1e-12
    assert 0.8 <= rate <= 1.2
    assert elapsed < 60.0


def test_criterion_05_derivative_identity_vs_symbolic():
    # 50 random smooth sample sets; for each, all q in {1,2,3} at one of
    # the degrees 8/16/32/64, checked against exact rational differentiation
    rng = np.random.default_rng(977)
    x = sp.Symbol("x")
    worst = 0.0
    checks = 0
    for trial in range(50):
        k = (8, 16, 32, 64)[trial % 4]
        coeffs = rng.uniform(-1, 1, 5)
        amp = rng.uniform(-0.3, 0.3)

        def f(u):
            return sum(c * u**m for m, c in enumerate(coeffs)) + amp * np.sin(
                2 * np.pi * u
            )

        samples = f(np.arange(k + 1) / k)
        expr = sum(
            sp.binomial(k, p) * sp.Rational(float(samples[p]))
            * x**p * (1 - x) ** (k - p)
            for p in range(k + 1)
        )
        poly = sp.Poly(expr, x)
        b = bernstein_1d(samples, k)
        for q in (1, 2, 3):
            dq = poly.diff((x, q))
            got = bernstein_derivative(b, q)(np.arange(8) / 7)
            for i in range(8):
                ref = float(dq.eval(sp.Rational(i, 7)))
                worst = max(worst, abs(got[i] - ref))
                checks += 1
    ok = worst < 1e-11
    report(5, "derivative formula vs symbolic", ok,
           f"worst={worst:.2e} over {checks} checks")
    assert worst < 1e-11


def test_criterion_06_smoothing_envelope_and_k0():
    H = rough_rotator(1e-4)
    K0 = TorusEmbedding.circle(np.array([0.4]), trunc_order=64)
    e0 = invariance_error(H, K0, np.array([GOLDEN]), rho=0.02).norm_rho.value
    h_ext = cutoff_extend(H, K0, 0.8, 0.02)
    seq = build_smoothing_sequence(h_ext, 4, 1.1, 3, e0)

    envelope = all(
        g <= seq.bound(i) * (1 + 1e-12) for i, g in enumerate(seq.gaps_c3)
    )
    d = v = tau = 1.0
    k0, rows = select_k0(seq, d, v, tau, e0)

    # re-check every reported witness with plain arithmetic
    hand = True
    for j, row in enumerate(rows):
        remaining = seq.gaps_c3[j:]
        worst = max(remaining, default=0.0)
        tail_sum = sum(remaining)
        hand &= row["ineq8_lhs"] == 2.0 * d**2 * v**2 * worst * tau
        hand &= row["ineq9_lhs"] == 0.0
        hand &= row["ineq10_lhs"] == 4.0 * d**2 * v**2 * tau**2 * tail_sum
        hand &= row["ineq15_lhs"] == seq.a_const * 4.0 ** (-j * (4 + 2 * 1.1))
        hand &= row["ok"] == (
            row["ineq8_lhs"] < 0.5
            and row["ineq9_lhs"] < 1.0
            and row["ineq10_lhs"] < 1.0
            and row["ineq15_lhs"] <= e0
        )
    finite = 0 <= k0 < len(rows) and rows[k0]["ok"]

    ok = envelope and finite and hand
    report(6, "smoothing envelope + finite k0 witnesses", ok,
           f"k0={k0}, gaps={['%.2e' % g for g in seq.gaps_c3]}")
    assert envelope
    assert finite
    assert hand


def test_criterion_07_end_to_end_rough_run():
    t0 = time.perf_counter()
    H = rough_rotator(1e-4)
    K0 = TorusEmbedding.circle(np.array([0.4]), trunc_order=64)
    params = RunParams(rho=0.02, r=0.8, sigma=1.1, horizon=256, target_error=1e-8)
    res = run_scheme(H, K0, np.array([GOLDEN]), params)
    elapsed = time.perf_counter() - t0

    freq = FrequencyVector.estimated(np.array([GOLDEN]), sigma=1.1, horizon=256)
    final = invariance_error(H, res.torus, freq).norm_grid
    cert = res.certificate
    ok = (
        res.converged
        and final <= 1e-7
        and cert["final"]["error_vs_original_grid"] <= 1e-7
        and cert["lemma4"]["passed"]
        and elapsed < 300.0
    )
    report(7, "end-to-end run on C4 input", ok,
           f"final={final:.2e}, stages={len(res.stages)}, {elapsed:.0f}s")
    assert res.converged
    assert final <= 1e-7
    assert cert["final"]["error_vs_original_grid"] <= 1e-7
    assert cert["lemma4"]["passed"]
    assert json.dumps(cert)  # serializable certificate
    assert elapsed < 300.0


def test_criterion_08_analytic_bypass_equivalence(golden_freq):
    h = HamiltonianModel.pendulum(1e-3)
    K0 = TorusEmbedding.circle(GOLDEN, trunc_order=64)
    res = run_scheme(h, K0, np.array([GOLDEN]), RunParams(target_error=1e-11))
    direct = solve_torus(
        h, K0, golden_freq, tol=1e-11, max_iter=12, max_trunc_order=256, rho=0.05
    )
    same_winding = np.array_equal(res.torus.winding, direct.torus.winding)
    modes_close = res.torus.periodic.allclose(direct.torus.periodic, 1e-11)
    ok = res.converged and direct.converged and same_winding and modes_close
    report(8, "analytic bypass equals direct solve", ok, "mode tol 1e-11")
    assert res.converged and direct.converged
    assert same_winding
    assert modes_close


def test_criterion_09_diophantine_toolkit():
    omega = np.array([GOLDEN])
    est = estimate_gamma(omega, 1.0, 10000)
    ks = np.arange(1, 10001, dtype=float)
    dist = np.abs(ks * GOLDEN - np.round(ks * GOLDEN))
    margins = dist * ks**1.0
    scan = float(margins.min())
    scan_k = int(ks[np.argmin(margins)])

    rep = check_diophantine(omega, est, 1.0, 10000)
    resonant = check_diophantine(np.array([0.5]), 0.3, 1.0, 100)

    ok = (
        est == scan
        and rep.passed
        and tuple(rep.worst_k) == (scan_k,)
        and not resonant.passed
        and tuple(resonant.worst_k) == (2,)
        and resonant.worst_margin == 0.0
    )
    report(9, "golden-mean gamma scan + resonance witness", ok,
           f"gamma={est:.16f}, witness k={tuple(resonant.worst_k)}")
    assert est == scan
    assert rep.passed and tuple(rep.worst_k) == (scan_k,)
    assert not resonant.passed
    assert tuple(resonant.worst_k) == (2,)
    assert resonant.worst_margin == 0.0


def test_criterion_10_cohomology_oracle():
    rng = np.random.default_rng(4096)
    freqs = {
        1: FrequencyVector.estimated(np.array([GOLDEN]), sigma=1.1, horizon=64),
        2: FrequencyVector.estimated(np.array([1.0, GOLDEN]), sigma=1.1, horizon=32),
    }
    worst_residual = 0.0
    amplification_ok = True
    for trial in range(100):
        n = 1 if trial % 2 == 0 else 2
        order = 12 if n == 1 else 4
        freq = freqs[n]
        g = random_trig(rng, n, order, ())
        sol = solve_cohomological(g, freq)

        theta = rng.random((200, n))
        lhs = sol.solution.directional(freq.omega)(theta)
        rhs = g(theta) - sol.average
        worst_residual = max(worst_residual, float(np.max(np.abs(lhs - rhs))))

        for k, amp in sol.solution.modes.items():
            norm1 = sum(abs(v) for v in k)
            bound = (
                np.max(np.abs(np.asarray(g.modes[k])))
                * norm1**freq.sigma
                / (2 * np.pi * freq.gamma)
            )
            if np.max(np.abs(amp)) > bound * (1 + 1e-12):
                amplification_ok = False

    ok = worst_residual <= 1e-10 and amplification_ok
    report(10, "cohomology forward-apply oracle", ok,
           f"residual={worst_residual:.2e} over 100 inputs")
    assert worst_residual <= 1e-10
    assert amplification_ok
