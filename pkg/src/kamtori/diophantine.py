"""Finite-horizon Diophantine verification of frequency vectors.

A frequency vector omega passes at (gamma, sigma) up to horizon K when
every wavevector k with 0 < |k|_1 <= K satisfies

    margin(k) := divisor(k) * |k|_1^sigma >= gamma.

For n >= 2 the divisor is |k . omega|.  For n = 1 a single flow frequency
has no small divisors, so the scan measures |k omega - nearest integer|
instead (the frequency relative to the unit base frequency); that margin
is a lower bound for |k omega| as well, so certificates remain valid for
the cohomological equation.  The scan is exhaustive and deterministic:
shells of constant |k|_1 in increasing order, lexicographic within a
shell, one representative per conjugate pair (first nonzero component
positive).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DiophantineReport",
    "FrequencyVector",
    "check_diophantine",
    "estimate_gamma",
]


@dataclass(frozen=True)
class DiophantineReport:
    passed: bool
    gamma: float
    sigma: float
    horizon: int
    worst_k: tuple[int, ...]
    worst_margin: float
    resonant: bool

    def __str__(self) -> str:
        verdict = "pass" if self.passed else "fail"
        return (
            f"diophantine {verdict}: worst k={self.worst_k} "
            f"margin={self.worst_margin:.6e} (gamma={self.gamma:.6e}, "
            f"sigma={self.sigma}, horizon={self.horizon})"
        )


def _thread_count() -> int:
    raw = os.environ.get("KAMTORI_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _validate(omega: np.ndarray, sigma: float, horizon: int) -> None:
    n = omega.size
    if n < 1:
        raise ValueError("omega must have at least one component")
    if not np.all(np.isfinite(omega)) or np.all(omega == 0):
        raise ValueError("omega must be a finite nonzero vector")
    if sigma <= n - 1:
        raise ValueError(f"sigma must exceed n - 1 = {n - 1}, got {sigma}")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")


def _margins_1d(omega: float, horizon: int, sigma: float) -> np.ndarray:
    k = np.arange(1, horizon + 1, dtype=float)
    frac = k * omega
    divisor = np.abs(frac - np.round(frac))
    return divisor * k**sigma


def _shell_vectors(n: int, shell: int):
    """Canonical wavevectors with |k|_1 == shell, lexicographic order."""

    # canonical means: first nonzero component positive
    def gen(prefix: tuple[int, ...], budget: int, leading: bool):
        pos = len(prefix)
        if pos == n:
            if budget == 0 and not leading:
                yield prefix
            return
        remaining = n - pos - 1
        if leading:
            # still waiting for the first nonzero entry: it must be positive
            yield from gen(prefix + (0,), budget, True)
            for v in range(1, budget + 1):
                yield from gen(prefix + (v,), budget - v, False)
        else:
            for v in range(-budget, budget + 1):
                yield from gen(prefix + (v,), budget - abs(v), False)

    yield from gen((), shell, True)


def _scan(omega: np.ndarray, sigma: float, horizon: int):
    """Exhaustive margin scan; returns (worst_margin, worst_k)."""
    n = omega.size
    if n == 1:
        margins = _margins_1d(float(omega[0]), horizon, sigma)
        idx = int(np.argmin(margins))
        return float(margins[idx]), (idx + 1,)
    worst = np.inf
    worst_k: tuple[int, ...] = (0,) * n

    def shell_min(shell: int):
        ks = np.array(list(_shell_vectors(n, shell)), dtype=float)
        if ks.size == 0:
            return None
        margins = np.abs(ks @ omega) * float(shell) ** sigma
        j = int(np.argmin(margins))
        return float(margins[j]), tuple(int(v) for v in ks[j])

    threads = _thread_count()
    shells = range(1, horizon + 1)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(shell_min, shells))
    else:
        results = [shell_min(s) for s in shells]
    for res in results:  # reduced in shell order: deterministic worst_k
        if res is None:
            continue
        margin, k = res
        if margin < worst:
            worst, worst_k = margin, k
    return worst, worst_k


def check_diophantine(
    omega, gamma: float, sigma: float, horizon: int
) -> DiophantineReport:
    """Exhaustively verify the Diophantine bound up to the horizon."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    _validate(omega, sigma, horizon)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    worst, worst_k = _scan(omega, sigma, horizon)
    return DiophantineReport(
        passed=bool(worst >= gamma),
        gamma=float(gamma),
        sigma=float(sigma),
        horizon=int(horizon),
        worst_k=worst_k,
        worst_margin=worst,
        resonant=bool(worst == 0.0),
    )


def estimate_gamma(omega, sigma: float, horizon: int) -> float:
    """Largest gamma the finite scan can certify (the minimal margin)."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    _validate(omega, sigma, horizon)
    worst, _ = _scan(omega, sigma, horizon)
    return worst


@dataclass(frozen=True)
class FrequencyVector:
    """A frequency vector with a finite-horizon Diophantine certificate.

    Construction verifies the bound by exhaustive scan and raises on
    failure, so holding a FrequencyVector means the certificate was
    checked.  ``unchecked`` skips the scan for expert use (for instance
    to demonstrate resonant failure modes downstream).
    """

    omega: np.ndarray
    gamma: float
    sigma: float
    horizon: int
    verified: bool = True

    def __post_init__(self):
        omega = np.atleast_1d(np.asarray(self.omega, dtype=float)).copy()
        omega.flags.writeable = False
        object.__setattr__(self, "omega", omega)
        _validate(omega, self.sigma, self.horizon)
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.verified:
            report = check_diophantine(omega, self.gamma, self.sigma, self.horizon)
            if not report.passed:
                raise ValueError(
                    f"omega fails the Diophantine bound: worst k={report.worst_k} "
                    f"margin={report.worst_margin:.3e} < gamma={self.gamma:.3e}"
                )

    @property
    def dim(self) -> int:
        return int(self.omega.size)

    @classmethod
    def unchecked(cls, omega, gamma: float, sigma: float, horizon: int):
        return cls(omega, gamma, sigma, horizon, verified=False)

    @classmethod
    def estimated(cls, omega, sigma: float, horizon: int, safety: float = 1.0):
        """Build with gamma set to the scan minimum (scaled by safety)."""
        gamma = estimate_gamma(omega, sigma, horizon) * safety
        if gamma <= 0:
            raise ValueError("omega is resonant within the horizon")
        return cls(omega, gamma, sigma, horizon)
