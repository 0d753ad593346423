"""Finite-horizon Diophantine scans and certified frequency vectors."""

import itertools

import numpy as np
import pytest

from kamtori import FrequencyVector, check_diophantine, estimate_gamma

from conftest import GOLDEN

# worst margin of the golden mean at sigma=1 over any horizon >= 1:
# |1*omega - 1| * 1 = 1 - omega = omega^2, frozen from an exhaustive scan
GOLDEN_GAMMA = 0.3819660112501051


def scan_min(omega, sigma, horizon):
    """Brute-force reference: min over 0 < |k|_1 <= horizon."""
    n = len(omega)
    best, best_k = np.inf, None
    ranges = [range(-horizon, horizon + 1)] * n
    for k in itertools.product(*ranges):
        k1 = sum(abs(v) for v in k)
        if k1 == 0 or k1 > horizon:
            continue
        val = abs(float(np.dot(k, omega))) * k1**sigma
        if val < best:
            best, best_k = val, k
    return best, best_k


class TestEstimateGamma:
    def test_golden_mean_frozen_value(self):
        got = estimate_gamma(np.array([GOLDEN]), 1.0, 10_000)
        assert got == GOLDEN_GAMMA

    def test_matches_exhaustive_scan(self):
        omega = np.array([GOLDEN, np.sqrt(2) - 1])
        got = estimate_gamma(omega, 1.5, 30)
        want, _ = scan_min(omega, 1.5, 30)
        assert got == pytest.approx(want, rel=0, abs=0)

    def test_resonant_gives_zero(self):
        assert estimate_gamma(np.array([1.0, 2.0]), 1.5, 5) == 0.0

    def test_monotone_in_horizon(self):
        omega = np.array([GOLDEN])
        e3 = estimate_gamma(omega, 1.0, 1000)
        e4 = estimate_gamma(omega, 1.0, 10_000)
        assert e4 <= e3
        assert e3 > 0

    def test_monotone_in_sigma(self):
        omega = np.array([GOLDEN])
        lo = estimate_gamma(omega, 1.0, 200)
        hi = estimate_gamma(omega, 1.3, 200)
        assert hi >= lo


class TestCheckDiophantine:
    def test_resonant_vector_fails_with_witness(self):
        report = check_diophantine(np.array([1.0, 2.0]), 0.1, 1.5, 5)
        assert not report.passed
        assert report.resonant
        k = np.array(report.worst_k)
        assert float(k @ np.array([1.0, 2.0])) == 0.0

    def test_golden_passes_below_margin(self):
        report = check_diophantine(np.array([GOLDEN]), 0.38, 1.0, 10_000)
        assert report.passed
        assert report.worst_margin == GOLDEN_GAMMA
        assert tuple(report.worst_k) == (1,)

    def test_fails_above_margin(self):
        report = check_diophantine(np.array([GOLDEN]), 0.39, 1.0, 100)
        assert not report.passed

    def test_scaling_invariance(self):
        # homogeneity of |k.omega| |k|^sigma holds for the n >= 2 form;
        # the n = 1 scan uses nearest-integer distance, which is not scalable
        omega = np.array([GOLDEN, np.sqrt(2) - 1])
        a = check_diophantine(omega, 0.05, 1.5, 30)
        for c in (0.5, 2.0, 7.3):
            b = check_diophantine(c * omega, c * 0.05, 1.5, 30)
            assert a.passed == b.passed
            assert tuple(a.worst_k) == tuple(b.worst_k)
            assert b.worst_margin == pytest.approx(c * a.worst_margin, rel=1e-12)

    def test_estimate_is_tight(self):
        omega = np.array([GOLDEN])
        g = estimate_gamma(omega, 1.0, 300)
        report = check_diophantine(omega, g, 1.0, 300)
        assert report.passed
        assert report.worst_margin == g

    def test_sigma_at_boundary_rejected(self):
        with pytest.raises(ValueError, match="sigma"):
            check_diophantine(np.array([GOLDEN, 0.3]), 0.1, 1.0, 10)

    def test_zero_omega_rejected(self):
        with pytest.raises(ValueError):
            check_diophantine(np.array([0.0]), 0.1, 1.0, 10)


class TestFrequencyVector:
    def test_construction_verifies(self):
        freq = FrequencyVector(np.array([GOLDEN]), 0.38, 1.0, 1000)
        assert freq.gamma == 0.38

    def test_rejects_unverifiable(self):
        with pytest.raises(ValueError):
            FrequencyVector(np.array([GOLDEN]), 0.5, 1.0, 1000)

    def test_estimated_matches_scan(self):
        freq = FrequencyVector.estimated(np.array([GOLDEN]), 1.0, 500)
        assert freq.gamma == estimate_gamma(np.array([GOLDEN]), 1.0, 500)

    def test_estimated_safety_shrinks_gamma(self):
        base = FrequencyVector.estimated(np.array([GOLDEN]), 1.0, 500)
        safe = FrequencyVector.estimated(np.array([GOLDEN]), 1.0, 500, safety=0.5)
        assert safe.gamma == pytest.approx(0.5 * base.gamma)

    def test_unchecked_skips_scan(self):
        freq = FrequencyVector.unchecked(np.array([1.0, 2.0]), 0.1, 1.5, 10)
        assert freq.gamma == 0.1
