"""Spectral Newton solver for invariant tori of Hamiltonian flows.

Solves the invariance equation d_omega K = J grad H (K) for an embedding
K: T^n -> R^2n carrying quasi-periodic motion with frequency omega.  Each
Newton step reduces the linearized equation to two constant-coefficient
cohomological equations through the adapted frame M = [DK | J DK N],
N = (DK^T DK)^-1:

    d_omega xi_T = eta_T + S xi_N      (tangent components)
    d_omega xi_N = eta_N               (normal components)

with eta = M^-1 e, torsion S = N DK^T (A J - J A) DK N, A = J D^2H(K).
The normal equation's zero mode is split off, and the free constant of
xi_N is spent cancelling the tangent obstruction:

    c_N = <S>^-1 (-<eta_T> - <S xi_N^0>),

which is where invertibility of the averaged torsion (the twist
condition) enters.  The correction Delta = M xi acts on the periodic part
of K only; re-analysis on the grid restores exact reality symmetry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cohomology import DivisorReport, solve_cohomological
from .diophantine import FrequencyVector
from .fourier import FourierMap, StripNormEstimate, TorusEmbedding
from .hamiltonian import jet_grid, symplectic_matrix

__all__ = [
    "ErrorField",
    "NondegeneracyData",
    "SolveResult",
    "StepDiagnostics",
    "flow",
    "invariance_error",
    "newton_step",
    "nondegeneracy",
    "solve_torus",
]

COND_DK_LIMIT = 1e8


@dataclass(frozen=True)
class ErrorField:
    """Invariance defect e = J grad H (K) - d_omega K."""

    e: FourierMap
    norm_rho: StripNormEstimate
    norm_grid: float

    @property
    def tail_flag(self) -> bool:
        return self.norm_rho.tail_flag


def _omega_array(omega) -> np.ndarray:
    return np.asarray(getattr(omega, "omega", omega), dtype=float)


def invariance_error(
    hamiltonian, K: TorusEmbedding, omega, grid_size=None, rho: float = 0.0
) -> ErrorField:
    """Evaluate the defect on the sampling grid and return it as a map.

    norm_grid is the max absolute component over the grid, the quantity
    the Newton iteration drives down.  norm_rho is the coefficient bound
    over the strip of half-width rho (rho = 0 gives the plain coefficient
    sum); its tail_flag trips when the defect's spectrum has not decayed
    by the truncation order, meaning the grid is too coarse to trust.
    """
    om = _omega_array(omega)
    gs = grid_size or K.periodic.grid_size
    samples = K.grid_samples(gs)
    _, grad, _ = jet_grid(hamiltonian, samples)
    j = symplectic_matrix(K.dim_domain)
    x_h = grad @ j.T
    d_om = K.directional(om).synthesize(gs)
    values = x_h - d_om
    e = FourierMap.from_samples(values, K.dim_domain)
    return ErrorField(
        e=e,
        norm_rho=e.strip_norm(rho),
        norm_grid=float(np.max(np.abs(values))),
    )


@dataclass(frozen=True)
class NondegeneracyData:
    """Frame and twist data for the adapted-frame reduction.

    n_map is N = (DK^T DK)^-1, s_map the torsion S, both as maps on the
    torus; avg_s must be invertible for the Newton step to exist.  The
    norms are coefficient bounds at the rho the data was built with.
    """

    n_map: FourierMap
    s_map: FourierMap
    avg_s: np.ndarray
    avg_s_inv: np.ndarray
    norm_n: float
    norm_dk: float
    norm_s_inv: float
    cond_dk: float
    frame_min_det: float


def _frame_tensors(hamiltonian, K: TorusEmbedding, grid_size=None):
    """Pointwise DK, N, M, M^-1, S, gram on the sampling grid."""
    n = K.dim_domain
    gs = grid_size or K.periodic.grid_size
    samples = K.grid_samples(gs)
    _, _, hess = jet_grid(hamiltonian, samples)
    j = symplectic_matrix(n)
    a = np.einsum("ij,...jk->...ik", j, hess)
    dk = K.dk().synthesize(gs)
    gram = np.einsum("...ji,...jk->...ik", dk, dk)
    n_mat = np.linalg.inv(gram)
    jdkn = np.einsum("ij,...jk,...kl->...il", j, dk, n_mat)
    m = np.concatenate([dk, jdkn], axis=-1)
    m_inv = np.linalg.inv(m)
    comm = a @ j - np.einsum("ij,...jk->...ik", j, a)
    s = n_mat @ np.einsum("...ji,...jk,...kl->...il", dk, comm, dk) @ n_mat
    return dk, n_mat, m, m_inv, s, gram


def nondegeneracy(
    hamiltonian, K: TorusEmbedding, omega=None, grid_size=None, rho: float = 0.0
) -> NondegeneracyData:
    """Definition-level non-degeneracy check: frame rank and averaged twist."""
    del omega  # the data depends on (H, K) only
    dk, n_mat, m, m_inv, s, gram = _frame_tensors(hamiltonian, K, grid_size)
    cond = float(np.max(np.linalg.cond(gram)))
    if cond > COND_DK_LIMIT:
        raise ValueError(f"DK rank-deficient on grid: cond(DK^T DK) = {cond:.3e}")
    n = K.dim_domain
    avg_s = s.mean(axis=tuple(range(s.ndim - 2)))
    svals = np.linalg.svd(avg_s, compute_uv=False)
    if svals[-1] < 1e-12 * max(1.0, svals[0]):
        raise ValueError(
            f"averaged torsion <S> is singular: smallest singular value "
            f"{svals[-1]:.3e}"
        )
    avg_s_inv = np.linalg.inv(avg_s)
    return NondegeneracyData(
        n_map=FourierMap.from_samples(n_mat, n),
        s_map=FourierMap.from_samples(s, n),
        avg_s=avg_s,
        avg_s_inv=avg_s_inv,
        norm_n=FourierMap.from_samples(n_mat, n).strip_norm(rho).value,
        norm_dk=K.dk().strip_norm(rho).value,
        norm_s_inv=float(np.linalg.norm(avg_s_inv, 2)),
        cond_dk=cond,
        frame_min_det=float(np.min(np.abs(np.linalg.det(m)))),
    )


@dataclass(frozen=True)
class StepDiagnostics:
    error_before: float
    correction_sup: float
    counterterm: np.ndarray
    torsion_average: np.ndarray
    frame_min_det: float
    eta_tangent_sup: float
    eta_normal_sup: float
    normal_divisors: DivisorReport
    tangent_divisors: DivisorReport
    tangent_residual_mean: float
    tail_flag: bool


def newton_step(
    hamiltonian,
    K: TorusEmbedding,
    omega: FrequencyVector,
    nd: NondegeneracyData | None = None,
    grid_size=None,
):
    """One quadratically convergent correction K -> K + M xi.

    nd must describe (hamiltonian, K); it is recomputed when omitted.
    """
    n = K.dim_domain
    gs = grid_size or K.periodic.grid_size
    if nd is None:
        nd = nondegeneracy(hamiltonian, K, omega, gs)
    err = invariance_error(hamiltonian, K, omega, gs)
    e_vals = err.e.synthesize(gs)
    dk, _, m, m_inv, _, _ = _frame_tensors(hamiltonian, K, gs)
    s = nd.s_map.synthesize(gs)
    eta = np.einsum("...ij,...j->...i", m_inv, e_vals)
    eta_t, eta_n = eta[..., :n], eta[..., n:]
    grid_axes = tuple(range(eta_n.ndim - 1))

    sol_n = solve_cohomological(FourierMap.from_samples(eta_n, n), omega)
    xi_n0 = sol_n.solution.synthesize(gs)
    s_xi_n0 = np.einsum("...ij,...j->...i", s, xi_n0)
    c_n = nd.avg_s_inv @ (
        -eta_t.mean(axis=grid_axes) - s_xi_n0.mean(axis=grid_axes)
    )
    xi_n = xi_n0 + c_n

    rhs_t = eta_t + np.einsum("...ij,...j->...i", s, xi_n)
    sol_t = solve_cohomological(FourierMap.from_samples(rhs_t, n), omega)
    xi_t = sol_t.solution.synthesize(gs)

    xi = np.concatenate([xi_t, xi_n], axis=-1)
    delta = np.einsum("...ij,...j->...i", m, xi)
    delta_map = FourierMap.from_samples(delta, n)
    K_next = K.with_periodic(K.periodic + delta_map)
    diag = StepDiagnostics(
        error_before=err.norm_grid,
        correction_sup=float(np.max(np.abs(delta))),
        counterterm=c_n,
        torsion_average=nd.avg_s,
        frame_min_det=nd.frame_min_det,
        eta_tangent_sup=float(np.max(np.abs(eta_t))),
        eta_normal_sup=float(np.max(np.abs(eta_n))),
        normal_divisors=sol_n.report,
        tangent_divisors=sol_t.report,
        tangent_residual_mean=float(np.max(np.abs(sol_t.average))),
        tail_flag=err.tail_flag,
    )
    return K_next, diag


@dataclass
class SolveResult:
    status: str
    torus: TorusEmbedding
    error: float
    iterations: int
    trace: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def solve_torus(
    hamiltonian,
    K0: TorusEmbedding,
    omega: FrequencyVector,
    tol: float = 1e-12,
    max_iter: int = 12,
    grid_size: int | None = None,
    max_trunc_order: int = 512,
    rho: float = 0.0,
) -> SolveResult:
    """Newton iteration with divergence detection and tail-driven refinement.

    Stops when the grid sup of the defect drops below tol.  Two
    consecutive error increases abort the iteration: if some iterate
    improved on the initial error, the best one is returned with status
    "floored" (the iteration hit its numerical floor), otherwise
    "diverged".  A tripped spectral tail doubles the truncation order, up
    to max_trunc_order, before the next step.  The trace records the
    growth quantities (|DK|, |N|, |<S>^-1|) per accepted step.
    """
    K = K0
    trace: list[dict] = []
    best_err = np.inf
    best_K = K0
    initial = None
    increases = 0
    prev = np.inf
    for it in range(max_iter + 1):
        err = invariance_error(hamiltonian, K, omega, grid_size, rho)
        if initial is None:
            initial = err.norm_grid
        if err.norm_grid < best_err:
            best_err, best_K = err.norm_grid, K
        if err.norm_grid <= tol:
            trace.append({"iter": it, "error": err.norm_grid})
            return SolveResult("converged", K, err.norm_grid, it, trace)
        if err.norm_grid > prev:
            increases += 1
            if increases >= 2:
                status = "floored" if best_err < initial else "diverged"
                return SolveResult(status, best_K, best_err, it, trace)
        else:
            increases = 0
        prev = err.norm_grid
        if it == max_iter:
            break
        if err.tail_flag and K.trunc_order * 2 <= max_trunc_order:
            K = K.resized(K.trunc_order * 2)
        nd = nondegeneracy(hamiltonian, K, omega, grid_size, rho)
        K, diag = newton_step(hamiltonian, K, omega, nd, grid_size)
        trace.append(
            {
                "iter": it,
                "error": diag.error_before,
                "correction": diag.correction_sup,
                "norm_dk": nd.norm_dk,
                "norm_n": nd.norm_n,
                "norm_s_inv": nd.norm_s_inv,
                "min_divisor": diag.normal_divisors.min_divisor,
                "frame_min_det": diag.frame_min_det,
                "trunc_order": K.trunc_order,
            }
        )
    status = "floored" if best_err < initial else "max_iter"
    return SolveResult(status, best_K, best_err, max_iter, trace)


def flow(hamiltonian, z0: np.ndarray, time: float, step: float = 1e-4) -> np.ndarray:
    """Integrate the Hamiltonian field with classical RK4 (verification aid)."""
    j = symplectic_matrix(hamiltonian.n)

    def f(z):
        _, grad, _ = jet_grid(hamiltonian, z)
        return grad @ j.T

    z = np.array(z0, dtype=float)
    sgn = 1.0 if time >= 0 else -1.0
    h = sgn * abs(step)
    steps = int(abs(time) / abs(step))
    for _ in range(steps):
        k1 = f(z)
        k2 = f(z + 0.5 * h * k1)
        k3 = f(z + 0.5 * h * k2)
        k4 = f(z + h * k3)
        z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    rest = time - steps * h
    if abs(rest) > 0:
        k1 = f(z)
        k2 = f(z + 0.5 * rest * k1)
        k3 = f(z + 0.5 * rest * k2)
        k4 = f(z + rest * k3)
        z = z + (rest / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return z
