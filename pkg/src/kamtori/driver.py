"""Orchestration of the full scheme for finitely differentiable Hamiltonians.

Pipeline: localize the rough part of H near the initial torus (cutoff),
build the analytic smoothing sequence, select the starting index k0 from
the measured inequality witnesses, then run a cascade of Newton solves at
shrinking strip widths: stage 1 against the selected smoothed model, the
remaining stages against the original H (once close enough, H's own
finitely many derivatives suffice for the quadratic iteration).  Every
stage records the drift, constant, and smallness bookkeeping (A1..A4),
the torus gaps feed the geometric-convergence check, and the whole run
is summarized in a deterministic certificate.

The proof-side constant c = lambda(mu, d, v, tau) is existential: no
explicit polynomial is available.  Certificates therefore always carry
the raw measured quantities plus both condition variants: the literal
lambda-form left-hand sides under a configurable spec (default
"mu * d**2 * v**2 * tau**2"), and measured analogues (observed quadratic
constant and step amplification of an actual trial Newton step).  The
default gate decision uses the measured variant; "strict" mode gates on
the literal one.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field

import numpy as np

from .diophantine import FrequencyVector
from .fourier import TorusEmbedding
from .hamiltonian import Box, HamiltonianModel
from .smoothing import (
    BernsteinHamiltonian,
    CutoffHamiltonian,
    SmoothingSequence,
    SumModel,
    build_smoothing_sequence,
    cl_gap,
    cl_norm,
    cutoff_extend,
)
from .solver import invariance_error, newton_step, nondegeneracy, solve_torus

__all__ = [
    "DEFAULT_LAMBDA",
    "KamSchedule",
    "RunParams",
    "RunResult",
    "check_conditions",
    "eval_lambda",
    "lemma4_check",
    "run_scheme",
    "select_k0",
]

DEFAULT_LAMBDA = "mu * d**2 * v**2 * tau**2"

_LAMBDA_NODES = (
    ast.Expression,
    ast.BinOp,
    ast.UnaryOp,
    ast.Add,
    ast.Sub,
    ast.Mult,
    ast.Div,
    ast.Pow,
    ast.USub,
    ast.UAdd,
    ast.Constant,
    ast.Name,
    ast.Load,
)


def eval_lambda(spec: str, mu: float, d: float, v: float, tau: float) -> float:
    """Evaluate a user-supplied polynomial spec in mu, d, v, tau.

    Only arithmetic expressions over those four names and numeric
    constants are admitted; anything else raises.
    """
    tree = ast.parse(spec, mode="eval")
    for node in ast.walk(tree):
        if not isinstance(node, _LAMBDA_NODES):
            raise ValueError(f"lambda spec: unsupported element {type(node).__name__}")
        if isinstance(node, ast.Name) and node.id not in {"mu", "d", "v", "tau"}:
            raise ValueError(f"lambda spec: unknown name {node.id!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ValueError("lambda spec: only numeric constants allowed")
    code = compile(tree, "<lambda-spec>", "eval")
    return float(eval(code, {"__builtins__": {}}, {"mu": mu, "d": d, "v": v, "tau": tau}))


@dataclass(frozen=True)
class KamSchedule:
    """Stage widths, radii, and capped constants of the cascade.

    rho_k = rho / 2^(k-1), delta_k = rho_k / 12, r_k = r * 4^(-(l+sigma)(k-1)),
    delta0 = min(1, rho/12).  beta comes in two variants (the statement
    uses 2^(-4 sigma), the notation block 1/(2^(4 sigma) - 2^(2 sigma + 1)));
    both are exposed, the capped constants mu = mu0 + 1, d = d0 + beta,
    v = v0 + beta, tau = tau0 + beta + 1 use the notation-block variant.
    """

    rho: float
    r: float
    l: int
    sigma: float
    gamma: float
    mu0: float
    d0: float
    v0: float
    tau0: float

    def __post_init__(self):
        if min(self.rho, self.r, self.gamma) <= 0 or self.sigma <= 0:
            raise ValueError("rho, r, gamma, sigma must be positive")
        if self.l < 4:
            raise ValueError("smoothness class l must be >= 4")
        # sum r_k = r / (1 - 4^-(l+sigma)) <= (4/3) r needs 4^(l+sigma) >= 4
        if self.l + self.sigma < 1:
            raise ValueError("l + sigma < 1 breaks the drift envelope")

    @property
    def delta0(self) -> float:
        return min(1.0, self.rho / 12.0)

    @property
    def beta_statement(self) -> float:
        return self.gamma ** -2 * self.delta0 ** (2 * self.sigma - 1) * 2.0 ** (-4 * self.sigma)

    @property
    def beta_notation(self) -> float:
        den = 2.0 ** (4 * self.sigma) - 2.0 ** (2 * self.sigma + 1)
        if den <= 0:
            return math.inf
        return self.gamma ** -2 * self.delta0 ** (2 * self.sigma - 1) / den

    @property
    def mu(self) -> float:
        return self.mu0 + 1.0

    @property
    def d(self) -> float:
        return self.d0 + self.beta_notation

    @property
    def v(self) -> float:
        return self.v0 + self.beta_notation

    @property
    def tau(self) -> float:
        return self.tau0 + self.beta_notation + 1.0

    def rho_k(self, k: int) -> float:
        return self.rho / 2.0 ** (k - 1)

    def delta_k(self, k: int) -> float:
        return self.rho_k(k) / 12.0

    def r_k(self, k: int) -> float:
        return self.r * 4.0 ** (-(self.l + self.sigma) * (k - 1))

    def drift_budget(self, k: int) -> float:
        """A1 right-hand side: r * sum_{i<k} 4^(-(l+sigma) i) <= (4/3) r."""
        q = 4.0 ** (-(self.l + self.sigma))
        return self.r * (1 - q**k) / (1 - q)


def check_conditions(
    c: float, gamma: float, sigma: float, delta0: float, e_norm: float, r: float
) -> dict:
    """Smallness conditions: c g^-4 d0^-4s |e| < 1 and c g^-2 d0^-2s |e| < r."""
    if min(c, gamma, sigma, delta0, r) <= 0 or e_norm < 0:
        raise ValueError("inputs must be positive (e_norm >= 0)")
    lhs2 = c * gamma ** -4 * delta0 ** (-4 * sigma) * e_norm
    lhs3 = c * gamma ** -2 * delta0 ** (-2 * sigma) * e_norm
    return {
        "condition2_lhs": lhs2,
        "condition2_rhs": 1.0,
        "condition2_ok": bool(lhs2 < 1.0),
        "condition2_margin": 1.0 - lhs2,
        "condition3_lhs": lhs3,
        "condition3_rhs": r,
        "condition3_ok": bool(lhs3 < r),
        "condition3_margin": r - lhs3,
    }


def select_k0(
    seq: SmoothingSequence,
    d: float,
    v: float,
    tau: float,
    e0_norm: float,
    tails=None,
) -> tuple[int, list[dict]]:
    """Least sequence index whose four measured inequality witnesses hold.

    Witnesses per candidate j (gap_j = C^3 gap to the next entry, tail_j
    the measured C^3 distance to the rough target, or 0 when analytic):
      (8)  2 d^2 v^2 gap tau < 1/2   for every remaining gap
      (9)  tail < 1
      (10) 4 d^2 v^2 tau^2 (tail + remaining gaps) < 1
      (15) A_fit * 4^(-j (l + 2 sigma)) <= e0_norm
    Raises when no index qualifies, naming the blocking inequality.
    """
    m = len(seq.approximants)
    if tails is None:
        tails = [0.0] * m
    if len(tails) != m:
        raise ValueError("need one tail estimate per sequence entry")
    rate = seq.l + 2.0 * seq.sigma
    rows = []
    chosen = None
    for j in range(m):
        remaining = seq.gaps_c3[j:]
        worst_gap = max(remaining, default=0.0)
        tail_sum = tails[j] + sum(remaining)
        lhs8 = 2.0 * d**2 * v**2 * worst_gap * tau
        lhs9 = tails[j]
        lhs10 = 4.0 * d**2 * v**2 * tau**2 * (tails[j] + tail_sum)
        lhs15 = seq.a_const * 4.0 ** (-j * rate)
        row = {
            "index": j,
            "ineq8_lhs": lhs8,
            "ineq8_ok": bool(lhs8 < 0.5),
            "ineq9_lhs": lhs9,
            "ineq9_ok": bool(lhs9 < 1.0),
            "ineq10_lhs": lhs10,
            "ineq10_ok": bool(lhs10 < 1.0),
            "ineq15_lhs": lhs15,
            "ineq15_rhs": e0_norm,
            "ineq15_ok": bool(lhs15 <= e0_norm),
        }
        row["ok"] = all(row[k] for k in ("ineq8_ok", "ineq9_ok", "ineq10_ok", "ineq15_ok"))
        rows.append(row)
        if chosen is None and row["ok"]:
            chosen = j
    if chosen is None:
        blockers = {}
        for row in rows:
            for name in ("ineq8", "ineq9", "ineq10", "ineq15"):
                if not row[name + "_ok"]:
                    blockers.setdefault(name, row["index"])
        names = ", ".join(f"{k} (first at index {v})" for k, v in sorted(blockers.items()))
        raise ValueError(f"no admissible k0 in a sequence of {m}: blocked by {names}")
    return chosen, rows


def lemma4_check(gaps, l: int, slack: float = 1.5) -> dict:
    """Geometric-convergence test: gaps_k <= A 4^(-l k) with stable fit.

    gaps are ||K_k - K_{k+1}|| at widths rho/4^k, k = 1-based.  The fit
    A = max_k gap_k 4^(l k) passes when it is set by the first gap up to
    the slack factor: later gaps may not push the envelope up, otherwise
    the sequence decays slower than 4^(-l) per stage and the C^l limit
    argument does not apply.
    """
    gaps = [float(g) for g in gaps]
    if len(gaps) < 3:
        raise ValueError("need at least 3 gaps to test the envelope")
    scaled = [g * 4.0 ** (l * (k + 1)) for k, g in enumerate(gaps)]
    a_fit = max(scaled)
    passed = a_fit <= slack * scaled[0]
    return {
        "a_fit": a_fit,
        "per_stage": scaled,
        "gaps": gaps,
        "slack": slack,
        "passed": bool(passed),
    }


@dataclass
class RunParams:
    """Knobs of run_scheme; everything is echoed into the certificate."""

    rho: float = 0.05
    r: float = 0.35
    sigma: float = 1.1
    gamma: float | None = None
    horizon: int = 256
    l: int | None = None
    target_error: float = 1e-9
    tol: float | None = None
    max_iter: int = 12
    max_stages: int = 6
    min_tori: int = 4
    count: int = 2
    start_degree: int = 8
    max_degree: int = 4096
    measure_points: int = 33
    norm_points: int = 9
    condition_mode: str = "measured"
    lambda_spec: str = DEFAULT_LAMBDA

    def __post_init__(self):
        if self.condition_mode not in ("measured", "strict"):
            raise ValueError("condition_mode must be 'measured' or 'strict'")


@dataclass
class RunResult:
    torus: TorusEmbedding
    certificate: dict
    stages: list
    sequence: SmoothingSequence | None = None

    @property
    def converged(self) -> bool:
        return bool(self.certificate.get("converged"))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(x) for x in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_jsonable(x) for x in obj.tolist()]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def _model_value(model):
    """Value-only callable for C^3 norm estimation (cheapest available path)."""
    if isinstance(model, BernsteinHamiltonian):
        return model.approx
    if isinstance(model, SumModel):
        parts = [_model_value(p) for p in model.parts]
        return lambda z: sum(np.asarray(p(z)) for p in parts)
    if isinstance(model, CutoffHamiltonian):
        return model
    return lambda z: model.jet_batch(z)[0]


def _hull_box(K: TorusEmbedding, margin: float) -> Box:
    """Box hull of the margin-neighborhood of the torus image (angles periodic)."""
    n = K.dim_domain
    pts = K.grid_samples().reshape(-1, 2 * n)
    lo = np.concatenate([np.zeros(n), pts[:, n:].min(axis=0) - margin])
    hi = np.concatenate([np.ones(n), pts[:, n:].max(axis=0) + margin])
    return Box(lo, hi, np.concatenate([np.ones(n, bool), np.zeros(n, bool)]))


def _c3_near(model, K: TorusEmbedding, margin: float, points: int) -> float:
    box = _hull_box(K, margin)
    return cl_norm(_model_value(model), box, 3, points)


def _frequency(omega, params: RunParams, n: int) -> FrequencyVector:
    if isinstance(omega, FrequencyVector):
        return omega
    if params.gamma is not None:
        return FrequencyVector(omega, params.gamma, params.sigma, params.horizon)
    return FrequencyVector.estimated(omega, params.sigma, params.horizon)


def run_scheme(hamiltonian, K0: TorusEmbedding, omega, params: RunParams | None = None,
               **overrides) -> RunResult:
    """Full cascade for a C^l (or analytic) Hamiltonian; see module docstring.

    Analytic input bypasses cutoff and smoothing entirely (constant
    sequence), and the cascade degenerates to direct Newton solves whose
    first stage reproduces solve_torus on H itself.
    """
    if params is None:
        params = RunParams(**overrides)
    elif overrides:
        raise ValueError("pass either params or keyword overrides, not both")
    n = K0.dim_domain
    freq = _frequency(omega, params, n)
    smooth_cls = getattr(hamiltonian, "smoothness_class", math.inf)
    analytic_input = math.isinf(smooth_cls)
    l = params.l if params.l is not None else (4 if analytic_input else int(smooth_cls))
    if not analytic_input and l > smooth_cls:
        raise ValueError(f"requested l={l} exceeds the model's C^{smooth_cls}")

    cert: dict = {
        "params": _jsonable(params.__dict__),
        "omega": _jsonable(freq.omega),
        "gamma": freq.gamma,
        "sigma": freq.sigma,
        "horizon": freq.horizon,
        "l": l,
        "lambda_spec": params.lambda_spec,
        "analytic_input": analytic_input,
    }
    stages: list[dict] = []

    # initial defect of the original model, the anchor scale of the sequence
    e0_orig = invariance_error(hamiltonian, K0, freq, rho=params.rho)
    cert["e0_original"] = {
        "grid": e0_orig.norm_grid,
        "rho": e0_orig.norm_rho.value,
        "tail_flag": bool(e0_orig.tail_flag),
    }
    e0_norm = e0_orig.norm_rho.value

    if analytic_input:
        h_ext = hamiltonian
    else:
        h_ext = cutoff_extend(hamiltonian, K0, params.r, params.rho)
    seq = build_smoothing_sequence(
        h_ext,
        l,
        params.sigma,
        params.count,
        e0_norm,
        start_degree=params.start_degree,
        max_degree=params.max_degree,
        measure_points=params.measure_points,
    )
    cert["smoothing"] = {
        "anchor_index": seq.anchor_index,
        "degrees": list(seq.degrees),
        "gaps_c3": list(seq.gaps_c3),
        "gaps_c0": list(seq.gaps_c0),
        "a_const": seq.a_const,
        "ladder_degrees": list(seq.history["ladder_degrees"]),
        "ladder_gaps_c3": list(seq.history["ladder_gaps_c3"]),
        "bound_checks": _jsonable(seq.bound_checks),
    }

    if analytic_input:
        tails = [0.0] * len(seq.approximants)
    else:
        tails = [
            cl_gap(b, h_ext.cut_values, h_ext.box, 3, params.measure_points)
            for b in seq.history["bernstein"]
        ]
    cert["tails_c3"] = list(tails)

    # base quantities for the selected stage-1 model
    nd0 = nondegeneracy(
        seq.approximants[0] if not analytic_input else hamiltonian,
        K0,
        freq,
        rho=params.rho,
    )
    mu0 = _c3_near(
        hamiltonian if analytic_input else h_ext, K0, 2 * params.r, params.norm_points
    )
    schedule = KamSchedule(
        rho=params.rho,
        r=params.r,
        l=l,
        sigma=params.sigma,
        gamma=freq.gamma,
        mu0=mu0,
        d0=nd0.norm_dk,
        v0=nd0.norm_n,
        tau0=nd0.norm_s_inv,
    )
    cert["schedule"] = {
        "delta0": schedule.delta0,
        "beta_statement": schedule.beta_statement,
        "beta_notation": schedule.beta_notation,
        "mu0": schedule.mu0,
        "d0": schedule.d0,
        "v0": schedule.v0,
        "tau0": schedule.tau0,
        "mu": schedule.mu,
        "d": schedule.d,
        "v": schedule.v,
        "tau": schedule.tau,
        "rho_k": [schedule.rho_k(k) for k in range(1, params.max_stages + 1)],
        "delta_k": [schedule.delta_k(k) for k in range(1, params.max_stages + 1)],
        "r_k": [schedule.r_k(k) for k in range(1, params.max_stages + 1)],
        "drift_budget": schedule.drift_budget(params.max_stages),
    }

    try:
        k0_index, k0_rows = select_k0(
            seq, schedule.d, schedule.v, schedule.tau, e0_norm, tails
        )
        cert["k0"] = {"index": k0_index, "witnesses": _jsonable(k0_rows)}
    except ValueError as exc:
        cert["k0"] = {"error": str(exc)}
        cert["converged"] = False
        cert["termination_reason"] = "no_admissible_k0"
        return RunResult(K0, _jsonable(cert), stages, seq)

    h_stage1 = seq.approximants[k0_index]
    e0_stage = invariance_error(h_stage1, K0, freq, rho=params.rho)
    cert["e0_stage1"] = {
        "grid": e0_stage.norm_grid,
        "rho": e0_stage.norm_rho.value,
        "tail_flag": bool(e0_stage.tail_flag),
    }

    # gate: literal lambda-form conditions plus measured trial-step analogues
    c_value = eval_lambda(
        params.lambda_spec, schedule.mu, schedule.d, schedule.v, schedule.tau
    )
    cert["c_value"] = c_value
    strict = check_conditions(
        c_value, freq.gamma, params.sigma, schedule.delta0,
        e0_stage.norm_rho.value, params.r,
    )
    cert["conditions_strict"] = strict

    e0g = e0_stage.norm_grid
    if e0g > 0:
        nd_trial = nd0
        if not analytic_input and k0_index != 0:
            nd_trial = nondegeneracy(h_stage1, K0, freq, rho=params.rho)
        k_trial, diag = newton_step(h_stage1, K0, freq, nd=nd_trial)
        e_trial = invariance_error(h_stage1, k_trial, freq, rho=params.rho / 2)
        c_meas = e_trial.norm_grid / e0g**2
        d_meas = diag.correction_sup / e0g
        q = c_meas * e0g
        drift_bound = d_meas * e0g / max(1.0 - min(q, 0.5), 0.5)
        measured = {
            "quadratic_constant": c_meas,
            "step_amplification": d_meas,
            "condition2_lhs": q,
            "condition2_ok": bool(q < 1.0),
            "condition3_lhs": drift_bound,
            "condition3_ok": bool(drift_bound < params.r),
        }
    else:
        measured = {
            "quadratic_constant": 0.0,
            "step_amplification": 0.0,
            "condition2_lhs": 0.0,
            "condition2_ok": True,
            "condition3_lhs": 0.0,
            "condition3_ok": True,
        }
    cert["conditions_measured"] = measured

    gate = strict if params.condition_mode == "strict" else measured
    if not gate["condition2_ok"]:
        cert["converged"] = False
        cert["termination_reason"] = "condition2_failed"
        return RunResult(K0, _jsonable(cert), stages, seq)
    if not gate["condition3_ok"]:
        cert["converged"] = False
        cert["termination_reason"] = "condition3_failed"
        return RunResult(K0, _jsonable(cert), stages, seq)

    # Newton cascade: stage 1 on the smoothed model, then the original H
    tol = params.tol if params.tol is not None else params.target_error
    tori = [K0]
    k_prev = K0
    termination = "stage_cap"
    failed_stage = None
    for k in range(1, params.max_stages + 1):
        h_k = h_stage1 if k == 1 else hamiltonian
        rho_k = schedule.rho_k(k)
        rho_prev = schedule.rho_k(k - 1) if k > 1 else params.rho
        r_prev = schedule.r_k(k - 1) if k > 1 else params.r
        e_k = invariance_error(h_k, k_prev, freq, rho=rho_k)
        nd_k = nondegeneracy(h_k, k_prev, freq, rho=rho_prev)
        mu_k = _c3_near(h_k, k_prev, min(r_prev, 2 * params.r), params.norm_points)
        c_k = eval_lambda(params.lambda_spec, mu_k, nd_k.norm_dk, nd_k.norm_n,
                          nd_k.norm_s_inv)
        delta_k = schedule.delta_k(k)
        a3_lhs = c_k * freq.gamma ** -4 * delta_k ** (-4 * params.sigma) * e_k.norm_rho.value
        a4_lhs = c_k * freq.gamma ** -2 * delta_k ** (-2 * params.sigma) * e_k.norm_rho.value

        # refinement may not outgrow the certified Diophantine horizon
        res = solve_torus(
            h_k, k_prev, freq, tol=tol, max_iter=params.max_iter,
            max_trunc_order=freq.horizon, rho=rho_k,
        )
        k_new = res.torus
        step_norm = k_new.difference(k_prev).strip_norm(rho_k).value
        drift = k_new.difference(K0).strip_norm(schedule.rho_k(k + 1)).value
        drift_rhs = schedule.drift_budget(k)
        err_vs_h = invariance_error(hamiltonian, k_new, freq, rho=0.0)
        quad = None
        if len(res.trace) >= 2 and res.trace[0]["error"] > 0:
            quad = res.trace[1]["error"] / res.trace[0]["error"] ** 2
        record = {
            "stage": k,
            "model": "smoothed" if k == 1 else "limit",
            "limit": k != 1,
            "rho_k": rho_k,
            "delta_k": delta_k,
            "r_k": schedule.r_k(k),
            "status": res.status,
            "iterations": res.iterations,
            "error_stage_model": res.error,
            "error_vs_original_grid": err_vs_h.norm_grid,
            "e_k_rho": e_k.norm_rho.value,
            "A1_lhs": drift,
            "A1_rhs": drift_rhs,
            "A1_ok": bool(drift <= drift_rhs),
            "A2_c_k": c_k,
            "A2_c": c_value,
            "A2_ok": bool(c_k <= c_value),
            "A3_lhs": a3_lhs,
            "A3_ok": bool(a3_lhs < 1.0),
            "A4_lhs": a4_lhs,
            "A4_rhs": schedule.r_k(k),
            "A4_ok": bool(a4_lhs < schedule.r_k(k)),
            "mu_k": mu_k,
            "d_k": nd_k.norm_dk,
            "v_k": nd_k.norm_n,
            "tau_k": nd_k.norm_s_inv,
            "step_norm": step_norm,
            "step_within_r_k": bool(step_norm <= schedule.r_k(k)),
            "measured_quadratic": quad,
            "trace": _jsonable(res.trace),
        }
        stages.append(record)
        tori.append(k_new)
        k_prev = k_new

        if res.status == "diverged":
            termination = f"diverged_at_stage_{k}"
            failed_stage = k
            break
        if params.condition_mode == "strict" and not (
            record["A1_ok"] and record["A2_ok"] and record["A3_ok"] and record["A4_ok"]
        ):
            termination = f"A_failed_at_stage_{k}"
            failed_stage = k
            break
        enough = len(tori) - 1 >= params.min_tori
        if err_vs_h.norm_grid <= params.target_error and enough:
            termination = "target_reached"
            break
        if k > 1 and res.status == "floored" and enough:
            termination = "truncation_floor"
            break

    gaps = [
        tori[i].difference(tori[i + 1]).strip_norm(params.rho / 4.0**i).value
        for i in range(1, len(tori) - 1)
    ]
    cert["torus_gaps"] = list(gaps)
    if len(gaps) >= 3:
        lemma4 = lemma4_check(gaps, l)
    else:
        lemma4 = {"passed": False, "error": f"only {len(gaps)} gaps measured"}
    cert["lemma4"] = _jsonable(lemma4)

    k_final = tori[-1]
    final_err = invariance_error(hamiltonian, k_final, freq, rho=0.0)
    final_drift = k_final.difference(K0).strip_norm(params.rho / 2).value
    cert["final"] = {
        "error_vs_original_grid": final_err.norm_grid,
        "error_vs_original_coeff": final_err.norm_rho.value,
        "tail_flag": bool(final_err.tail_flag),
        "drift": final_drift,
        "drift_within_r": bool(final_drift <= params.r),
        "drift_within_budget": bool(final_drift <= 4.0 * params.r / 3.0),
        "target_error": params.target_error,
        "target_met": bool(final_err.norm_grid <= params.target_error),
    }
    cert["termination_reason"] = termination
    cert["failed_stage"] = failed_stage
    cert["converged"] = bool(
        failed_stage is None
        and cert["final"]["target_met"]
        and cert["final"]["drift_within_r"]
        and lemma4.get("passed", False)
    )
    return RunResult(k_final, _jsonable(cert), stages, seq)
