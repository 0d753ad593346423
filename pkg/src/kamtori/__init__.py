"""Spectral solver and a-posteriori verifier for invariant tori.

The package computes invariant tori of Hamiltonian flows by a Newton
iteration on the embedding's Fourier coefficients, certifies frequency
vectors by finite-horizon Diophantine scans, and extends the solver to
finitely differentiable Hamiltonians through Bernstein smoothing with a
quantified approximation ladder.
"""

from .cohomology import CohomologySolution, DivisorReport, solve_cohomological
from .diophantine import (
    DiophantineReport,
    FrequencyVector,
    check_diophantine,
    estimate_gamma,
)
from .driver import (
    DEFAULT_LAMBDA,
    KamSchedule,
    RunParams,
    RunResult,
    check_conditions,
    eval_lambda,
    lemma4_check,
    run_scheme,
    select_k0,
)
from .fourier import (
    FourierMap,
    StripNormEstimate,
    TorusEmbedding,
    analyze,
    average,
    directional_derivative,
)
from .hamiltonian import (
    Box,
    BSplineProfile,
    CompositeHamiltonian,
    HamiltonianModel,
    RoughTerm,
    SinPowerProfile,
    symplectic_matrix,
)
from .smoothing import (
    BernsteinApproximant,
    BernsteinHamiltonian,
    CutoffHamiltonian,
    PlateauBump,
    SmoothingSequence,
    SumModel,
    bernstein_1d,
    bernstein_derivative,
    bernstein_nd,
    bernstein_tensor,
    build_smoothing_sequence,
    cl_gap,
    cl_norm,
    cutoff_extend,
    rescale_from_unit,
    rescale_to_unit,
)
from .solver import (
    ErrorField,
    NondegeneracyData,
    SolveResult,
    StepDiagnostics,
    flow,
    invariance_error,
    newton_step,
    nondegeneracy,
    solve_torus,
)

__version__ = "0.1.0"

__all__ = [
    "analyze",
    "average",
    "bernstein_1d",
    "bernstein_derivative",
    "bernstein_nd",
    "bernstein_tensor",
    "build_smoothing_sequence",
    "check_conditions",
    "check_diophantine",
    "cl_gap",
    "cl_norm",
    "cutoff_extend",
    "directional_derivative",
    "estimate_gamma",
    "eval_lambda",
    "flow",
    "invariance_error",
    "lemma4_check",
    "newton_step",
    "nondegeneracy",
    "rescale_from_unit",
    "rescale_to_unit",
    "run_scheme",
    "select_k0",
    "solve_cohomological",
    "solve_torus",
    "symplectic_matrix",
    "BernsteinApproximant",
    "BernsteinHamiltonian",
    "Box",
    "BSplineProfile",
    "CohomologySolution",
    "CompositeHamiltonian",
    "CutoffHamiltonian",
    "DEFAULT_LAMBDA",
    "DiophantineReport",
    "DivisorReport",
    "ErrorField",
    "FourierMap",
    "FrequencyVector",
    "HamiltonianModel",
    "KamSchedule",
    "NondegeneracyData",
    "PlateauBump",
    "RoughTerm",
    "RunParams",
    "RunResult",
    "SinPowerProfile",
    "SmoothingSequence",
    "SolveResult",
    "StepDiagnostics",
    "StripNormEstimate",
    "SumModel",
    "TorusEmbedding",
]
