"""Command-line front end: config files, subcommands, run directories.

Subcommands
-----------
solve        Newton iteration for an invariant torus; trace as JSON lines.
verify       a-posteriori check of a given torus: defect, nondegeneracy,
             smallness conditions.  No iteration.
smooth       cutoff extension plus approximant ladder; gap table as CSV.
diophantine  finite-horizon frequency scan; result as JSON.
run          full cascade (cutoff, smoothing, staged Newton, certificate).

Every invocation that touches disk writes the echoed config next to its
outputs, JSON is emitted with sorted keys and no timestamps so reruns are
byte-stable, and exit codes are 0 (pass / convergence), 1 (certified
failure), 2 (usage error).  KAMTORI_THREADS caps worker threads in the
frequency scan.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .diophantine import FrequencyVector, check_diophantine, estimate_gamma
from .driver import (
    DEFAULT_LAMBDA,
    KamSchedule,
    RunParams,
    _c3_near,
    _jsonable,
    check_conditions,
    eval_lambda,
    run_scheme,
)
from .fourier import TorusEmbedding
from .hamiltonian import (
    BSplineProfile,
    CompositeHamiltonian,
    HamiltonianModel,
    RoughTerm,
    SinPowerProfile,
)
from .smoothing import build_smoothing_sequence, cutoff_extend
from .solver import invariance_error, nondegeneracy, solve_torus


class ConfigError(Exception):
    """Config rejected; .violations lists every problem found."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class RunConfig:
    """Validated run description; all fields echo into config.json."""

    hamiltonian: str
    omega: tuple
    torus_file: str | None = None
    y0: tuple | None = None
    gamma: float | None = None
    sigma: float = 1.1
    horizon: int = 256
    rho: float = 0.05
    r: float = 0.35
    l: int | None = None
    trunc: int = 64
    tol: float | None = None
    target_error: float = 1e-9
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
    out: str | None = None
    seed: int = 0

    def to_json(self) -> str:
        doc = {}
        for f in fields(self):
            v = getattr(self, f.name)
            doc[f.name] = list(v) if isinstance(v, tuple) else v
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    def load_hamiltonian(self):
        return load_hamiltonian(self.hamiltonian)

    def load_torus(self) -> TorusEmbedding:
        if self.torus_file is not None:
            text = Path(self.torus_file).read_text()
            if self.torus_file.endswith(".json"):
                return TorusEmbedding.from_json(text)
            return TorusEmbedding.from_csv(text)
        y0 = self.y0 if self.y0 is not None else self.omega
        return TorusEmbedding.circle(np.asarray(y0, dtype=float), self.trunc)

    def frequency(self) -> FrequencyVector:
        omega = np.asarray(self.omega, dtype=float)
        if self.gamma is not None:
            return FrequencyVector(omega, self.gamma, self.sigma, self.horizon)
        return FrequencyVector.estimated(omega, self.sigma, self.horizon)

    def run_params(self) -> RunParams:
        return RunParams(
            rho=self.rho,
            r=self.r,
            sigma=self.sigma,
            gamma=self.gamma,
            horizon=self.horizon,
            l=self.l,
            target_error=self.target_error,
            tol=self.tol,
            max_iter=self.max_iter,
            max_stages=self.max_stages,
            min_tori=self.min_tori,
            count=self.count,
            start_degree=self.start_degree,
            max_degree=self.max_degree,
            measure_points=self.measure_points,
            norm_points=self.norm_points,
            condition_mode=self.condition_mode,
            lambda_spec=self.lambda_spec,
        )


def load_hamiltonian(path: str):
    """Model file: analytic terms plus optional finitely smooth summands.

    The base document is the {n, terms, smoothness_class} form; an optional
    "rough" list adds 1-D profile summands, each
    {coordinate, amplitude, profile: {type: bspline|sinpower, ...}}.
    """
    doc = json.loads(Path(path).read_text())
    rough_docs = doc.pop("rough", [])
    base = HamiltonianModel.from_json(json.dumps(doc))
    if not rough_docs:
        return base
    terms = []
    for rec in rough_docs:
        prof = rec["profile"]
        kind = prof.get("type")
        if kind == "bspline":
            profile = BSplineProfile(prof["coefficients"], prof.get("degree", 5))
        elif kind == "sinpower":
            profile = SinPowerProfile(
                prof.get("power", 4.5), prof.get("scale", 1.0), prof.get("shift", 0.0)
            )
        else:
            raise ConfigError([f"unknown rough profile type: {kind!r}"])
        terms.append(
            RoughTerm(int(rec["coordinate"]), profile, float(rec.get("amplitude", 1.0)))
        )
    return CompositeHamiltonian(analytic=base, rough=terms)


def parse_config(path) -> RunConfig:
    """Read and validate a config file, reporting every violation at once."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"])
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config is not valid JSON: {exc}"])

    known = {f.name for f in fields(RunConfig)}
    bad = []
    for key in sorted(set(raw) - known - {"torus"}):
        bad.append(f"unknown key: {key}")

    torus_file, y0 = raw.get("torus_file"), raw.get("y0")
    torus = raw.get("torus")
    if torus is not None:
        if isinstance(torus, dict) and "file" in torus:
            torus_file = torus["file"]
        elif isinstance(torus, dict) and "circle" in torus:
            y0 = torus["circle"].get("y0")
        else:
            bad.append("torus must be {'file': path} or {'circle': {'y0': ...}}")

    for key in ("hamiltonian", "omega"):
        if key not in raw:
            bad.append(f"missing key: {key}")

    n = None
    ham = raw.get("hamiltonian")
    if ham is not None:
        ham = str(Path(ham).absolute())
        if not Path(ham).is_file():
            bad.append(f"hamiltonian file not found: {ham}")
        else:
            try:
                n = int(json.loads(Path(ham).read_text())["n"])
            except Exception as exc:
                bad.append(f"hamiltonian file does not parse: {exc}")
    if torus_file is not None:
        torus_file = str(Path(torus_file).absolute())
        if not Path(torus_file).is_file():
            bad.append(f"torus file not found: {torus_file}")

    vals = {k: raw[k] for k in known & set(raw)}
    vals["hamiltonian"] = ham
    vals["torus_file"] = torus_file
    if y0 is not None:
        vals["y0"] = tuple(float(v) for v in np.atleast_1d(y0))
    if "omega" in raw:
        vals["omega"] = tuple(float(v) for v in np.atleast_1d(raw["omega"]))

    def check(name, default, ok, message):
        v = vals.get(name, default)
        if v is not None and not ok(v):
            bad.append(message.format(v))

    check("gamma", None, lambda v: v > 0, "gamma must be positive, got {}")
    check("rho", 0.05, lambda v: v > 0, "rho must be positive, got {}")
    check("r", 0.35, lambda v: v > 0, "r must be positive, got {}")
    check("l", None, lambda v: v >= 4, "l must be at least 4, got {}")
    check("trunc", 64, lambda v: v >= 1, "truncation order M must be >= 1, got {}")
    check("horizon", 256, lambda v: v >= 1, "horizon must be >= 1, got {}")
    check("max_iter", 12, lambda v: v >= 1, "max_iter must be >= 1, got {}")
    check("target_error", 1e-9, lambda v: v > 0, "target_error must be positive, got {}")
    check("tol", None, lambda v: v > 0, "tol must be positive, got {}")
    check(
        "condition_mode",
        "measured",
        lambda v: v in ("measured", "strict"),
        "condition_mode must be 'measured' or 'strict', got {}",
    )
    if n is not None:
        sigma = vals.get("sigma", 1.1)
        # sigma = n - 1 sits on the boundary where Diophantine vectors
        # cease to have full measure; the strict inequality is required
        if not sigma > n - 1:
            bad.append(
                f"sigma must be strictly greater than n - 1 = {n - 1} "
                f"(Diophantine exponent bound), got {sigma}"
            )
    if "lambda_spec" in vals:
        try:
            eval_lambda(vals["lambda_spec"], 1.0, 1.0, 1.0, 1.0)
        except ValueError as exc:
            bad.append(f"lambda_spec does not evaluate: {exc}")

    if bad:
        raise ConfigError(bad)
    return RunConfig(**vals)


# -- artifact helpers ---------------------------------------------------------


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n")


def _samples_csv(K: TorusEmbedding) -> str:
    theta = K.grid(None)
    z = K.grid_samples()
    n, m = K.dim_domain, K.dim_range
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow([f"theta{j}" for j in range(n)] + [f"z{j}" for j in range(m)])
    flat_t = theta.reshape(-1, n)
    flat_z = z.reshape(-1, m)
    for t, v in zip(flat_t, flat_z):
        writer.writerow([repr(float(x)) for x in t] + [repr(float(x)) for x in v])
    return out.getvalue()


def _prepare_out(cfg: RunConfig, override) -> Path:
    out = Path(override or cfg.out or "kamtori-run")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    return out


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    updates = {}
    if getattr(args, "hamiltonian", None):
        updates["hamiltonian"] = str(Path(args.hamiltonian).absolute())
    if getattr(args, "max_iter", None) is not None:
        updates["max_iter"] = args.max_iter
    if getattr(args, "tol", None) is not None:
        updates["tol"] = args.tol
    if getattr(args, "trunc", None) is not None:
        updates["trunc"] = args.trunc
    if not updates:
        return cfg
    doc = asdict(cfg)
    doc.update(updates)
    return RunConfig(**doc)


# -- subcommands --------------------------------------------------------------


def cmd_diophantine(args) -> int:
    omega = np.array([float(v) for v in args.omega.split(",")])
    if args.gamma is not None:
        report = check_diophantine(omega, args.gamma, args.sigma, args.horizon)
        doc = {
            "passed": report.passed,
            "gamma": report.gamma,
            "gamma_est": estimate_gamma(omega, args.sigma, args.horizon),
            "worst_k": list(report.worst_k),
            "margin": report.worst_margin,
            "sigma": args.sigma,
            "horizon": args.horizon,
        }
        code = 0 if report.passed else 1
    else:
        gamma_est = estimate_gamma(omega, args.sigma, args.horizon)
        report = check_diophantine(omega, gamma_est, args.sigma, args.horizon)
        doc = {
            "gamma_est": gamma_est,
            "worst_k": list(report.worst_k),
            "margin": report.worst_margin,
            "sigma": args.sigma,
            "horizon": args.horizon,
        }
        code = 0
    print(json.dumps(_jsonable(doc), sort_keys=True))
    return code


def cmd_solve(args) -> int:
    cfg = _apply_overrides(parse_config(args.config), args)
    out = _prepare_out(cfg, args.out)
    H = cfg.load_hamiltonian()
    K0 = cfg.load_torus()
    freq = cfg.frequency()
    tol = cfg.tol if cfg.tol is not None else 1e-12
    # rho = 0 here: at the doubled truncation orders the strip weighting
    # amplifies FFT floor noise, and bare solves gate on the grid error
    res = solve_torus(
        H, K0, freq, tol=tol, max_iter=cfg.max_iter,
        max_trunc_order=cfg.horizon, rho=0.0,
    )
    with (out / "trace.jsonl").open("w") as fh:
        for rec in res.trace:
            fh.write(json.dumps(_jsonable(rec), sort_keys=True) + "\n")
    (out / "torus_final.csv").write_text(res.torus.to_csv())
    (out / "torus_samples.csv").write_text(_samples_csv(res.torus))
    _write_json(
        out / "certificate.json",
        {
            "status": res.status,
            "error": res.error,
            "iterations": res.iterations,
            "tol": tol,
            "omega": list(freq.omega),
            "gamma": freq.gamma,
        },
    )
    return 0 if res.status == "converged" else 1


def cmd_verify(args) -> int:
    cfg = _apply_overrides(parse_config(args.config), args)
    out = _prepare_out(cfg, args.out)
    H = cfg.load_hamiltonian()
    K = cfg.load_torus()
    freq = cfg.frequency()
    err = invariance_error(H, K, freq, rho=cfg.rho)
    nd = nondegeneracy(H, K, freq, rho=cfg.rho)
    mu = _c3_near(H, K, 2 * cfg.r, cfg.norm_points)
    smooth_cls = getattr(H, "smoothness_class", math.inf)
    l = cfg.l if cfg.l is not None else (4 if math.isinf(smooth_cls) else int(smooth_cls))
    schedule = KamSchedule(
        rho=cfg.rho, r=cfg.r, l=l, sigma=cfg.sigma, gamma=freq.gamma,
        mu0=mu, d0=nd.norm_dk, v0=nd.norm_n, tau0=nd.norm_s_inv,
    )
    c_value = eval_lambda(cfg.lambda_spec, schedule.mu, schedule.d, schedule.v, schedule.tau)
    conditions = check_conditions(
        c_value, freq.gamma, cfg.sigma, schedule.delta0, err.norm_rho.value, cfg.r
    )
    passed = bool(conditions["condition2_ok"] and conditions["condition3_ok"])
    _write_json(
        out / "certificate.json",
        {
            "error_grid": err.norm_grid,
            "error_rho": err.norm_rho.value,
            "tail_flag": bool(err.tail_flag),
            "nondegeneracy": {
                "norm_dk": nd.norm_dk,
                "norm_n": nd.norm_n,
                "norm_s_inv": nd.norm_s_inv,
                "cond_dk": nd.cond_dk,
                "avg_s": nd.avg_s,
            },
            "mu0": mu,
            "c_value": c_value,
            "conditions": conditions,
            "omega": list(freq.omega),
            "gamma": freq.gamma,
            "passed": passed,
        },
    )
    return 0 if passed else 1


def cmd_smooth(args) -> int:
    cfg = _apply_overrides(parse_config(args.config), args)
    out = _prepare_out(cfg, args.out)
    H = cfg.load_hamiltonian()
    K0 = cfg.load_torus()
    freq = cfg.frequency()
    err = invariance_error(H, K0, freq, rho=cfg.rho)
    smooth_cls = getattr(H, "smoothness_class", math.inf)
    analytic = math.isinf(smooth_cls)
    l = cfg.l if cfg.l is not None else (4 if analytic else int(smooth_cls))
    h_ext = H if analytic else cutoff_extend(H, K0, cfg.r, cfg.rho)
    try:
        seq = build_smoothing_sequence(
            h_ext, l, cfg.sigma, cfg.count, err.norm_rho.value,
            start_degree=cfg.start_degree, max_degree=cfg.max_degree,
            measure_points=cfg.measure_points,
        )
    except ValueError as exc:
        _write_json(out / "certificate.json", {"passed": False, "error": str(exc)})
        return 1

    rows = io.StringIO()
    writer = csv.writer(rows)
    writer.writerow(["k", "degree", "c0_gap", "c3_gap", "bound"])
    for i, degree in enumerate(seq.degrees):
        has_gap = i < len(seq.gaps_c3)
        writer.writerow(
            [
                i,
                degree,
                repr(seq.gaps_c0[i]) if has_gap else "",
                repr(seq.gaps_c3[i]) if has_gap else "",
                repr(seq.bound(i)) if has_gap else "",
            ]
        )
    (out / "gaps.csv").write_text(rows.getvalue())

    for i, approx in enumerate(seq.history.get("bernstein", [])):
        _write_json(
            out / f"approximant_{i}.json",
            {
                "degrees": list(approx.degrees),
                "box": {
                    "lo": list(approx.box.lo),
                    "hi": list(approx.box.hi),
                    "periodic": [bool(p) for p in approx.box.periodic],
                },
                "coefficients": approx.coefficients.tolist(),
            },
        )
    _write_json(
        out / "certificate.json",
        {
            "passed": True,
            "analytic_input": analytic,
            "e0_rho": err.norm_rho.value,
            "anchor_index": seq.anchor_index,
            "degrees": list(seq.degrees),
            "gaps_c3": list(seq.gaps_c3),
            "gaps_c0": list(seq.gaps_c0),
            "a_const": seq.a_const,
            "l": l,
            "sigma": cfg.sigma,
        },
    )
    return 0


def cmd_run(args) -> int:
    cfg = _apply_overrides(parse_config(args.config), args)
    out = _prepare_out(cfg, args.out)
    H = cfg.load_hamiltonian()
    K0 = cfg.load_torus()
    res = run_scheme(H, K0, np.asarray(cfg.omega, dtype=float), cfg.run_params())

    stages_dir = out / "stages"
    stages_dir.mkdir(exist_ok=True)
    summaries = []
    for rec in res.stages:
        trace = rec.get("trace", [])
        with (stages_dir / f"stage_{rec['stage']}.jsonl").open("w") as fh:
            for step in trace:
                fh.write(json.dumps(_jsonable(step), sort_keys=True) + "\n")
        summaries.append({k: v for k, v in rec.items() if k != "trace"})

    cert = dict(res.certificate)
    cert["stages"] = summaries
    cert["seed"] = cfg.seed
    _write_json(out / "certificate.json", cert)
    (out / "torus_final.csv").write_text(res.torus.to_csv())
    (out / "torus_samples.csv").write_text(_samples_csv(res.torus))
    return 0 if res.converged else 1


# -- argument parsing ---------------------------------------------------------


def _add_config_flags(sub) -> None:
    sub.add_argument("--config", required=True, help="path to a JSON config file")
    sub.add_argument("--out", default=None, help="output directory (overrides config)")
    sub.add_argument("--hamiltonian", default=None, help="model file (overrides config)")
    sub.add_argument("--max-iter", dest="max_iter", type=int, default=None)
    sub.add_argument("--tol", type=float, default=None)
    sub.add_argument("--trunc", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kamtori",
        description="Invariant torus solver and a-posteriori verifier.",
        epilog="Set KAMTORI_THREADS to cap worker threads in frequency scans.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("solve", help="Newton iteration for one torus")
    _add_config_flags(sub)
    sub.set_defaults(func=cmd_solve)

    sub = subs.add_parser("verify", help="a-posteriori checks, no iteration")
    _add_config_flags(sub)
    sub.set_defaults(func=cmd_verify)

    sub = subs.add_parser("smooth", help="cutoff extension and approximant ladder")
    _add_config_flags(sub)
    sub.set_defaults(func=cmd_smooth)

    sub = subs.add_parser("diophantine", help="finite-horizon frequency scan")
    sub.add_argument("--omega", required=True, help="comma-separated frequencies")
    sub.add_argument("--sigma", type=float, default=1.1)
    sub.add_argument("--horizon", type=int, default=10000)
    sub.add_argument("--gamma", type=float, default=None)
    sub.set_defaults(func=cmd_diophantine)

    sub = subs.add_parser("run", help="full cascade with certificate")
    _add_config_flags(sub)
    sub.set_defaults(func=cmd_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for line in exc.violations:
            print(f"config error: {line}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
