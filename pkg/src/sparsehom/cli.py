"""Command-line driver: solves, convergence tables, DOF tables and MC comparisons.

Usage::

    sparsehom twoscale --coeff sin-cell --f one --levels 3:7 --mode sparse
    sparsehom dims --kinds const-periodic --levels 1:8
    sparsehom mc --model rank1 --level 6 --samples 4096 --seed 7

Every option can also come from a JSON file given with ``--config``; flags
override file values. Output goes to ``--out``, else ``$SPARSEHOM_OUTPUT_DIR``,
else the working directory. Exit codes: 0 success, 2 configuration error,
3 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from .errors import ConvergenceError, InconsistencyError, InvalidCoefficientError, InvalidRequestError, NumericalBreakdownError
from .hierarchy import DIRICHLET_HAT, PERIODIC_HAT, PIECEWISE_CONSTANT, gauss_rule
from .reference import corrector_gradient, error_norms, fe_solve, solve_fine, solve_homogenized
from .stochastic import (
    BUILTIN_MODELS,
    RandomSourceModel,
    assemble_correlation_operator,
    compare_with_mc,
    solve_correlation,
    solve_mean_field,
)
from .tensor_index import Mode, tensor_dimension
from .twoscale import (
    EpsilonProblem,
    SeparableCoefficient,
    assemble_two_scale,
    check_epsilon,
    constant_coefficient,
    sin_cell_coefficient,
    sin_cell_x_coefficient,
    solve_two_scale,
)

OUTPUT_ENV = "SPARSEHOM_OUTPUT_DIR"
CSV_HEADER = ["level", "dofs", "error_l2", "error_h1", "eoc", "iterations", "seconds"]
PROBLEMS = ("twoscale", "fine", "homogenized", "meanfield", "correlation", "mc", "dims")
MAX_REFERENCE_LEVEL = 14

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


# -- closed-form expression vocabulary ---------------------------------------

def parse_expression(spec, field_name: str = "expression"):
    """One-variable expression: a number, ``"one"``, or a dict with keys
    ``poly`` (ascending coefficients), ``sin``/``cos`` (lists of
    ``[k, amplitude]`` meaning ``amplitude * sin(2 pi k t)``) and
    ``reciprocal`` (take ``1 / value``).
    """
    if isinstance(spec, bool):
        raise ConfigError(field_name, "expected a number or an expression object")
    if isinstance(spec, (int, float)):
        return float(spec)
    if spec == "one":
        return 1.0
    if isinstance(spec, str):
        try:
            return float(spec)
        except ValueError:
            raise ConfigError(field_name, f"unknown expression {spec!r}") from None
    if not isinstance(spec, dict):
        raise ConfigError(field_name, "expected a number or an expression object")
    unknown = set(spec) - {"poly", "sin", "cos", "reciprocal"}
    if unknown:
        raise ConfigError(field_name, f"unknown keys {sorted(unknown)}")
    try:
        poly = [float(c) for c in spec.get("poly", [])]
        sin = [(float(k), float(a)) for k, a in spec.get("sin", [])]
        cos = [(float(k), float(a)) for k, a in spec.get("cos", [])]
    except (TypeError, ValueError):
        raise ConfigError(field_name, "malformed poly/sin/cos entries") from None
    reciprocal = bool(spec.get("reciprocal", False))

    def fn(t):
        t = np.asarray(t, dtype=float)
        v = np.polynomial.polynomial.polyval(t, poly) if poly else np.zeros(t.shape)
        for k, a in sin:
            v = v + a * np.sin(2 * np.pi * k * t)
        for k, a in cos:
            v = v + a * np.cos(2 * np.pi * k * t)
        return 1.0 / v if reciprocal else v

    return fn


BUILTIN_COEFFICIENTS = {
    "one": constant_coefficient,
    "sin-cell": sin_cell_coefficient,
    "sin-cell-x": sin_cell_x_coefficient,
}


def parse_coefficient(spec) -> SeparableCoefficient:
    """Builtin name, or ``{"terms": [{"x": expr, "y": expr}, ...], "alpha": a}``.

    Without ``alpha`` the ellipticity constant is estimated on a sample grid.
    """
    if isinstance(spec, str):
        if spec not in BUILTIN_COEFFICIENTS:
            raise ConfigError("coeff", f"unknown builtin {spec!r}; choose from {sorted(BUILTIN_COEFFICIENTS)}")
        return BUILTIN_COEFFICIENTS[spec]()
    if not isinstance(spec, dict) or not isinstance(spec.get("terms"), list):
        raise ConfigError("coeff", "expected a builtin name or an object with a 'terms' list")
    terms = tuple(
        (parse_expression(t.get("x", 1.0), "coeff.x"), parse_expression(t.get("y", 1.0), "coeff.y"))
        for t in spec["terms"]
    )
    alpha = spec.get("alpha")
    try:
        if alpha is None:
            probe = SeparableCoefficient(terms, 1e-300)
            s = np.linspace(0.0, 1.0, 257)
            values = probe.grid(s, s)
            if values.min() <= 0:
                raise ConfigError("coeff", "coefficient is not positive")
            alpha = min(values.min(), 1.0 / values.max(), 1.0)
        return SeparableCoefficient(terms, float(alpha))
    except InvalidCoefficientError as exc:
        raise ConfigError("coeff", str(exc)) from None


def parse_model(spec) -> RandomSourceModel:
    if isinstance(spec, str):
        if spec not in BUILTIN_MODELS:
            raise ConfigError("model", f"unknown builtin {spec!r}; choose from {sorted(BUILTIN_MODELS)}")
        return BUILTIN_MODELS[spec]()
    if not isinstance(spec, dict):
        raise ConfigError("model", "expected a builtin name or an object with 'mean' and 'modes'")
    mean = parse_expression(spec.get("mean", 0.0), "model.mean")
    modes = tuple(parse_expression(m, "model.modes") for m in spec.get("modes", []))
    return RandomSourceModel(mean, modes)


def parse_levels(spec) -> tuple[int, int]:
    if isinstance(spec, int):
        lo = hi = spec
    elif isinstance(spec, (list, tuple)) and len(spec) == 2:
        lo, hi = spec
    elif isinstance(spec, str):
        parts = spec.split(":")
        try:
            if len(parts) == 1:
                lo = hi = int(parts[0])
            elif len(parts) == 2:
                lo, hi = int(parts[0]), int(parts[1])
            else:
                raise ValueError
        except ValueError:
            raise ConfigError("levels", f"expected N or A:B, got {spec!r}") from None
    else:
        raise ConfigError("levels", f"expected N or A:B, got {spec!r}")
    if not (isinstance(lo, int) and isinstance(hi, int)) or not 1 <= lo <= hi <= 12:
        raise ConfigError("levels", f"levels must satisfy 1 <= A <= B <= 12, got {lo}:{hi}")
    return lo, hi


# -- configuration ------------------------------------------------------------

@dataclass
class RunConfig:
    problem: str
    coeff: object = "sin-cell"
    source: object = "one"
    diffusion: object = "one"
    model: object = "rank1"
    levels: object = "4"
    mode: str = "sparse"
    epsilon: Optional[float] = None
    tol: float = 1e-10
    seed: int = 0
    samples: int = 4096
    kinds: str = "const-periodic"
    output: Optional[str] = None
    timings: bool = False

    def validate(self) -> None:
        if self.problem not in PROBLEMS:
            raise ConfigError("problem", f"unknown problem {self.problem!r}")
        parse_levels(self.levels)
        try:
            Mode.parse(self.mode)
        except ValueError:
            raise ConfigError("mode", f"expected 'full' or 'sparse', got {self.mode!r}") from None
        if not (isinstance(self.tol, (int, float)) and self.tol > 0):
            raise ConfigError("tol", f"must be positive, got {self.tol!r}")
        if self.problem == "fine":
            if self.epsilon is None:
                raise ConfigError("epsilon", "required for the fine problem")
        if self.epsilon is not None:
            try:
                check_epsilon(float(self.epsilon))
            except (InvalidRequestError, TypeError, ValueError):
                raise ConfigError("epsilon", f"must be an inverse power of two, got {self.epsilon!r}") from None
        if self.problem == "mc" and (not isinstance(self.samples, int) or self.samples < 100):
            raise ConfigError("samples", f"at least 100 samples are required, got {self.samples!r}")
        if self.kinds not in KIND_PAIRS:
            raise ConfigError("kinds", f"choose from {sorted(KIND_PAIRS)}")


KIND_PAIRS = {
    "const-periodic": (PIECEWISE_CONSTANT, PERIODIC_HAT),
    "dirichlet-dirichlet": (DIRICHLET_HAT, DIRICHLET_HAT),
}


def _output_dir(cfg: RunConfig) -> str:
    return cfg.output or os.environ.get(OUTPUT_ENV) or os.getcwd()


def _write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _floats(a) -> list:
    return [float(v) for v in np.ravel(a)]


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _convergence_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    prev = None
    for r in rows:
        eoc = math.log2(prev / r["error_h1"]) if prev and r["error_h1"] > 0 else None
        prev = r["error_h1"]
        w.writerow([_fmt(r["level"]), _fmt(r["dofs"]), _fmt(r["error_l2"]), _fmt(r["error_h1"]),
                    _fmt(eoc), _fmt(r["iterations"]), _fmt(r["seconds"])])
    return buf.getvalue()


# -- problem drivers ----------------------------------------------------------
# each returns (rows, payload) where rows feed convergence.csv

def _reference_level(hi: int, extra: int = 4) -> int:
    return min(hi + extra, MAX_REFERENCE_LEVEL)


def _run_twoscale(cfg, lo, hi):
    coeff = parse_coefficient(cfg.coeff)
    f = parse_expression(cfg.source, "source")
    u_ref = solve_homogenized(coeff, f, _reference_level(hi))
    q = hi + 2
    x, w = gauss_rule(q)
    phi_y_ref = u_ref.derivative(x)[:, None] * corrector_gradient(coeff, x, x)
    rows, payload = [], None
    for L in range(lo, hi + 1):
        t0 = time.perf_counter()
        sol = solve_two_scale(assemble_two_scale(coeff, f, L, cfg.mode), tol=cfg.tol)
        secs = time.perf_counter() - t0
        eu = error_norms(sol.u, u_ref, q)
        ephi = float(np.sqrt(w @ (phi_y_ref - sol.phi_grid(x, x, dy=True)) ** 2 @ w))
        rows.append(dict(level=L, dofs=sol.dofs, error_l2=eu.l2, error_h1=eu.h1 + ephi,
                         iterations=sol.iterations, seconds=secs))
        payload = {
            "dofs": {"u": int(sol.u.coeffs.size), "phi": int(sol.phi.size), "total": int(sol.dofs)},
            "iterations": sol.iterations,
            "residual": sol.residual,
            "coefficients": {
                "u_nodal": _floats(sol.u.coeffs),
                "phi_detail": _floats(sol.phi),
                "phi_blocks": [[l, m, int(o)] for (l, m), o in sol.dof_map.offsets.items()],
            },
        }
    return rows, payload


def _run_single_scale(cfg, lo, hi, solve):
    ref = solve(_reference_level(hi))
    rows, payload = [], None
    for L in range(lo, hi + 1):
        t0 = time.perf_counter()
        u = solve(L)
        secs = time.perf_counter() - t0
        e = error_norms(u, ref, min(_reference_level(hi), L + 4))
        rows.append(dict(level=L, dofs=int(u.coeffs.size), error_l2=e.l2, error_h1=e.h1,
                         iterations=None, seconds=secs))
        payload = {"dofs": {"u": int(u.coeffs.size), "total": int(u.coeffs.size)},
                   "iterations": None, "residual": None,
                   "coefficients": {"u_nodal": _floats(u.coeffs)}}
    return rows, payload


def _run_fine(cfg, lo, hi):
    coeff = parse_coefficient(cfg.coeff)
    prob = EpsilonProblem(float(cfg.epsilon), coeff, parse_expression(cfg.source, "source"))
    k = check_epsilon(prob.epsilon)
    if lo < k + 3:
        raise ConfigError("levels", f"level {lo} under-resolves epsilon = {prob.epsilon}; use levels >= {k + 3}")
    return _run_single_scale(cfg, lo, hi, lambda L: solve_fine(prob, L))


def _run_homogenized(cfg, lo, hi):
    coeff = parse_coefficient(cfg.coeff)
    f = parse_expression(cfg.source, "source")
    return _run_single_scale(cfg, lo, hi, lambda L: solve_homogenized(coeff, f, L))


def _run_meanfield(cfg, lo, hi):
    A = parse_expression(cfg.diffusion, "diffusion")
    model = parse_model(cfg.model)
    return _run_single_scale(cfg, lo, hi, lambda L: solve_mean_field(A, model.mean, L))


def _run_correlation(cfg, lo, hi):
    A = parse_expression(cfg.diffusion, "diffusion")
    model = parse_model(cfg.model)
    ref_level = _reference_level(hi)
    factors = [fe_solve(A, g, ref_level) for g in model.modes]
    q = hi + 2
    x, w = gauss_rule(q)
    vals = [(u(x), u.derivative(x)) for u in factors]
    rows, payload = [], None
    for L in range(lo, hi + 1):
        t0 = time.perf_counter()
        sol = solve_correlation(assemble_correlation_operator(A, L, cfg.mode), model, cfg.tol)
        secs = time.perf_counter() - t0
        sq = {}
        for dx in (0, 1):
            for dy in (0, 1):
                exact = sum(np.outer(v[dx], v[dy]) for v in vals) if vals else 0.0
                sq[(dx, dy)] = float(w @ (exact - sol.grid(x, x, dx, dy)) ** 2 @ w)
        rows.append(dict(level=L, dofs=sol.dof_map.total, error_l2=math.sqrt(sq[(0, 0)]),
                         error_h1=math.sqrt(sum(sq.values())), iterations=sol.iterations, seconds=secs))
        payload = {
            "dofs": {"correlation": int(sol.dof_map.total), "total": int(sol.dof_map.total)},
            "iterations": sol.iterations,
            "residual": sol.residual,
            "coefficients": {
                "covariance_detail": _floats(sol.coeffs),
                "blocks": [[l, m, int(o)] for (l, m), o in sol.dof_map.offsets.items()],
            },
        }
    return rows, payload


DRIVERS = {
    "twoscale": _run_twoscale,
    "fine": _run_fine,
    "homogenized": _run_homogenized,
    "meanfield": _run_meanfield,
    "correlation": _run_correlation,
}


def _dims_csv(cfg, lo, hi) -> str:
    kinds = KIND_PAIRS[cfg.kinds]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["level", "dim_sparse", "dim_full", "ratio"])
    for L in range(lo, hi + 1):
        ds = tensor_dimension(kinds, L, Mode.SPARSE)
        df = tensor_dimension(kinds, L, Mode.FULL)
        w.writerow([L, ds, df, repr(ds / (L * 2**L))])
    return buf.getvalue()


def run(cfg: RunConfig) -> int:
    """Execute one configuration and write its output files.

    Returns the process exit code.
    """
    try:
        cfg.validate()
        lo, hi = parse_levels(cfg.levels)
        out = _output_dir(cfg)
        if cfg.problem == "dims":
            _write_atomic(os.path.join(out, "dims.csv"), _dims_csv(cfg, lo, hi))
            return EXIT_OK
        if cfg.problem == "mc":
            return compare_mc(cfg)
        t0 = time.perf_counter()
        rows, payload = DRIVERS[cfg.problem](cfg, lo, hi)
        wall = time.perf_counter() - t0
    except ConfigError as exc:
        print(f"configuration error in field '{exc.field}': {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvalidRequestError, InvalidCoefficientError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, NumericalBreakdownError, InconsistencyError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    if not cfg.timings:
        for r in rows:
            r["seconds"] = None
    meta = {
        "problem": cfg.problem,
        "mode": Mode.parse(cfg.mode).value,
        "level": hi,
        "wall_time": wall if cfg.timings else None,
        "config": _config_record(cfg),
    }
    meta.update(payload)
    _write_atomic(os.path.join(out, "solution.json"), _json_text(meta))
    if hi > lo:
        _write_atomic(os.path.join(out, "convergence.csv"), _convergence_csv(rows))
    return EXIT_OK


def _config_record(cfg: RunConfig) -> dict:
    rec = asdict(cfg)
    rec.pop("output")
    return rec


def compare_mc(cfg: RunConfig) -> int:
    """Deterministic versus Monte Carlo second moments; writes ``mc_report.json``."""
    try:
        cfg.validate()
        lo, hi = parse_levels(cfg.levels)
        if lo != hi:
            raise ConfigError("levels", "mc runs take a single level")
        A = parse_expression(cfg.diffusion, "diffusion")
        model = parse_model(cfg.model)
        t0 = time.perf_counter()
        report = compare_with_mc(model, A, hi, cfg.samples, int(cfg.seed), cfg.mode, tol=cfg.tol)
        wall = time.perf_counter() - t0
    except ConfigError as exc:
        print(f"configuration error in field '{exc.field}': {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvalidRequestError, InvalidCoefficientError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, NumericalBreakdownError, InconsistencyError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    report["wall_time"] = wall if cfg.timings else None
    report["config"] = _config_record(cfg)
    _write_atomic(os.path.join(_output_dir(cfg), "mc_report.json"), _json_text(report))
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------

def _json_or_str(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparsehom", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="problem", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with RunConfig fields")
    common.add_argument("--out", dest="output", help=f"output directory (default ${OUTPUT_ENV} or cwd)")
    common.add_argument("--levels", help="level N or range A:B")
    common.add_argument("--timings", action="store_true", default=None,
                        help="record wall times (outputs are then not reproducible byte for byte)")
    solve = argparse.ArgumentParser(add_help=False)
    solve.add_argument("--mode", choices=["full", "sparse"])
    solve.add_argument("--tol", type=float)

    p = sub.add_parser("twoscale", parents=[common, solve], help="unfolded two-scale problem")
    p.add_argument("--coeff", type=_json_or_str)
    p.add_argument("--f", dest="source", type=_json_or_str)
    p = sub.add_parser("fine", parents=[common], help="resolved oscillating problem")
    p.add_argument("--coeff", type=_json_or_str)
    p.add_argument("--f", dest="source", type=_json_or_str)
    p.add_argument("--epsilon", type=_json_or_str)
    p = sub.add_parser("homogenized", parents=[common], help="homogenized problem")
    p.add_argument("--coeff", type=_json_or_str)
    p.add_argument("--f", dest="source", type=_json_or_str)
    for name, helptext in [("meanfield", "mean field of the random solution"),
                           ("correlation", "covariance of the random solution")]:
        p = sub.add_parser(name, parents=[common, solve], help=helptext)
        p.add_argument("--A", dest="diffusion", type=_json_or_str)
        p.add_argument("--model", type=_json_or_str)
    p = sub.add_parser("mc", parents=[common, solve], help="Monte Carlo versus deterministic moments")
    p.add_argument("--A", dest="diffusion", type=_json_or_str)
    p.add_argument("--model", type=_json_or_str)
    p.add_argument("--level", dest="levels")
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p = sub.add_parser("dims", parents=[common], help="sparse and full tensor dimensions")
    p.add_argument("--kinds", choices=sorted(KIND_PAIRS))
    return parser


def config_from_args(argv=None) -> RunConfig:
    args = build_parser().parse_args(argv)
    values = {}
    if args.config:
        try:
            with open(args.config) as fh:
                values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("config", f"cannot read {args.config}: {exc}") from None
        if not isinstance(values, dict):
            raise ConfigError("config", "top level must be an object")
        known = {f.name for f in fields(RunConfig)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError("config", f"unknown fields {sorted(unknown)}")
    for key, value in vars(args).items():
        if key != "config" and value is not None:
            values[key] = value
    values["problem"] = args.problem
    return RunConfig(**values)


def main(argv=None) -> int:
    try:
        cfg = config_from_args(argv)
    except ConfigError as exc:
        print(f"configuration error in field '{exc.field}': {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
