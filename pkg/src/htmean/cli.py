"""Command-line front end.

Commands bind INI-style run configs to the library:

  estimate   CSV dataset -> mean estimate JSON
  generate   distribution spec -> dataset CSV
  benchmark  Monte Carlo grid -> per-trial CSV + JSON summary (+ fits)
  verify     numerical bound suites -> pass/fail table
  solve-mt   test-program instance JSON -> solution JSON

Every command is reproducible from (config file, seed): reruns produce
byte-identical outputs (CSV wall times are zeroed unless timing is
requested).  Output files are written atomically (temp file + rename).

Exit codes: 0 ok, 2 config error, 3 IO error, 4 numerical
non-convergence, 5 estimator failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys

import numpy as np

from . import harness, verify
from .core import SolverConfig, desk_profile, paper_profile
from .distributions import distribution_from_spec, sample_iid
from .estimator import EstimatorError, estimate_mean_detailed
from .harness import GridPoint, write_text_atomic
from .sdp import (
    NonConvergence,
    SdpError,
    instance_from_json,
    solution_to_json,
    solve_mt,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NONCONVERGENCE = 4
EXIT_ESTIMATOR = 5


class ConfigError(Exception):
    """Config file failed to parse or validate; message carries the position."""


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf"
    return format(float(x), ".17g")


def _json_text(doc) -> str:
    return json.dumps(doc, indent=2) + "\n"


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------


def _parse_ini(path: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, "r", encoding="utf-8") as handle:
            parser.read_file(handle, source=path)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parser


def _get(parser, section: str, key: str, kind, *, required: bool = False, default=None):
    if not parser.has_option(section, key):
        if required:
            raise ConfigError(f"{section}.{key}: required key is missing")
        return default
    raw = parser.get(section, key)
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError("expected a boolean")
        if kind is list:
            return [item.strip() for item in raw.split(",") if item.strip()]
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: {exc} (got {raw!r})") from exc


def _get_floats(parser, section: str, key: str, *, required: bool = False, default=None):
    items = _get(parser, section, key, list, required=required)
    if items is None:
        return default
    try:
        return [float(v) for v in items]
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from exc


def _get_ints(parser, section: str, key: str, *, required: bool = False, default=None):
    items = _get(parser, section, key, list, required=required)
    if items is None:
        return default
    try:
        return [int(v) for v in items]
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from exc


def _solver_config(parser) -> SolverConfig:
    if not parser.has_section("solver"):
        return SolverConfig()
    try:
        return SolverConfig(
            max_iterations=_get(parser, "solver", "max_iterations", int, default=20000),
            primal_tolerance=_get(parser, "solver", "primal_tolerance", float, default=1e-6),
            dual_tolerance=_get(parser, "solver", "dual_tolerance", float, default=1e-6),
            value_tolerance=_get(parser, "solver", "value_tolerance", float, default=1e-3),
        )
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from exc


def _distribution_spec(parser) -> dict:
    if not parser.has_section("distribution"):
        raise ConfigError("distribution: section is missing")
    spec: dict = {}
    for key in parser.options("distribution"):
        raw = parser.get("distribution", key)
        if key in ("type",):
            spec[key] = raw.strip()
        elif key in ("atoms", "probs", "center", "point", "s"):
            try:
                spec["S" if key == "s" else key] = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"distribution.{key}: invalid JSON list: {exc}") from exc
        elif key in ("n", "d"):
            spec[key] = _get(parser, "distribution", key, int)
        else:
            spec[key] = _get(parser, "distribution", key, float)
    if "type" not in spec:
        raise ConfigError("distribution.type: required key is missing")
    return spec


def _estimator_overrides(parser) -> dict:
    overrides: dict = {}
    if parser.has_section("estimator"):
        for key in ("bucket_constant", "prune_constant"):
            value = _get(parser, "estimator", key, float)
            if value is not None:
                overrides[key] = value
        cap = _get(parser, "estimator", "iteration_cap", int)
        if cap is not None:
            overrides["iteration_cap"] = cap
    if parser.has_section("solver"):
        overrides["solver"] = _solver_config(parser)
    return overrides


# ---------------------------------------------------------------------------
# Dataset CSV
# ---------------------------------------------------------------------------


def _dataset_to_csv(points: np.ndarray) -> str:
    d = points.shape[1]
    lines = [",".join(f"x{j}" for j in range(d))]
    for row in points:
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def _dataset_from_csv(path: str) -> np.ndarray:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            lines = [line.strip() for line in handle if line.strip()]
    except OSError as exc:
        raise OSError(f"{path}: cannot read dataset: {exc.strerror}") from exc
    if not lines:
        raise ValueError(f"{path}: dataset is empty")
    header = lines[0].split(",")
    d = len(header)
    expected = [f"x{j}" for j in range(d)]
    if header != expected:
        raise ValueError(f"{path}:1: header must be {','.join(expected)}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != d:
            raise ValueError(f"{path}:{lineno}: expected {d} fields, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return np.asarray(rows, dtype=np.float64)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _profile_config(profile: str, delta: float, n: int, d: int, seed: int,
                    solver: SolverConfig, overrides: dict):
    if profile == "paper":
        return paper_profile(delta, n, d, seed=seed, solver=solver)
    kwargs = {k: v for k, v in overrides.items() if k != "solver"}
    return desk_profile(delta, n, d, seed=seed, solver=solver, **kwargs)


def cmd_estimate(args) -> int:
    parser = _parse_ini(args.config)
    data_path = _get(parser, "estimate", "data", str, required=True)
    delta = _get(parser, "estimate", "delta", float, required=True)
    alpha = _get(parser, "estimate", "alpha", float, required=True)
    want_trace = _get(parser, "estimate", "trace", bool, default=False)
    seed = args.seed if args.seed is not None else _get(parser, "estimate", "seed", int, default=0)
    points = _dataset_from_csv(data_path)
    from .core import Sample

    sample = Sample(points=points, alpha=alpha)
    overrides = _estimator_overrides(parser)
    solver = overrides.pop("solver", _solver_config(parser))
    cfg = _profile_config(args.profile, delta, sample.n, sample.d, seed, solver, overrides)
    estimate, trace = estimate_mean_detailed(sample, cfg)
    doc = {
        "estimate": [float(v) for v in estimate.mean],
        "initial_point": [float(v) for v in estimate.initial_point],
        "pruned_count": estimate.pruned_count,
        "bucket_count": estimate.bucket_count,
        "iterations_used": estimate.iterations_used,
        "final_distance_estimate": estimate.final_distance_estimate,
    }
    if want_trace:
        doc["trace"] = {
            "iterates": [[float(v) for v in it] for it in trace.iterates],
            "distance_estimates": [float(v) for v in trace.distance_estimates],
            "best_index": trace.best_index,
        }
    write_text_atomic(args.out, _json_text(doc))
    return EXIT_OK


def cmd_generate(args) -> int:
    parser = _parse_ini(args.config)
    n = _get(parser, "generate", "n", int, required=True)
    if n < 1:
        raise ConfigError("generate.n: must be >= 1")
    seed = args.seed if args.seed is not None else _get(parser, "generate", "seed", int, default=0)
    spec = _distribution_spec(parser)
    dist = _build_distribution(spec, n=n)
    from .core import make_rng

    sample = sample_iid(dist, n, make_rng(seed))
    write_text_atomic(args.out, _dataset_to_csv(sample.points))
    return EXIT_OK


def _build_distribution(spec: dict, *, n=None, d=None, alpha=None):
    try:
        return distribution_from_spec(spec, n=n, d=d, alpha=alpha)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"distribution: {exc}") from exc


def cmd_benchmark(args) -> int:
    parser = _parse_ini(args.config)
    estimator = _get(parser, "benchmark", "estimator", str, default="pipeline")
    trials = _get(parser, "benchmark", "trials", int, required=True)
    if trials < 1:
        raise ConfigError("benchmark.trials: must be >= 1")
    seed = args.seed if args.seed is not None else _get(parser, "benchmark", "seed", int, default=0)
    timing = _get(parser, "benchmark", "timing", bool, default=False)
    fit_axis = _get(parser, "benchmark", "fit_axis", str)
    ns = _get_ints(parser, "grid", "n", required=True)
    ds = _get_ints(parser, "grid", "d", required=True)
    alphas = _get_floats(parser, "grid", "alpha", required=True)
    deltas = _get_floats(parser, "grid", "delta", required=True)
    etas = _get_floats(parser, "grid", "eta", default=[0.0])
    try:
        grid = [
            GridPoint(n=n, d=d, alpha=a, delta=dl, eta=e)
            for n in ns for d in ds for a in alphas for dl in deltas for e in etas
        ]
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from exc
    spec = _distribution_spec(parser)
    overrides = _estimator_overrides(parser)
    if estimator not in harness.ESTIMATORS:
        raise ConfigError(
            f"benchmark.estimator: unknown estimator {estimator!r}; "
            f"available: {sorted(harness.ESTIMATORS)}"
        )
    reports = harness.run_grid(
        estimator, spec, grid, trials, seed, jobs=args.jobs, config_overrides=overrides
    )
    fits = None
    if fit_axis:
        try:
            fits = [harness.fit_exponent(reports, fit_axis)]
        except harness.DegenerateGrid as exc:
            raise ConfigError(f"benchmark.fit_axis: {exc}") from exc
    write_text_atomic(args.out, harness.reports_to_csv(reports, timing=timing))
    summary_path = os.path.splitext(args.out)[0] + ".summary.json"
    write_text_atomic(summary_path, _json_text(harness.reports_summary(reports, fits)))
    return EXIT_OK


def cmd_verify(args) -> int:
    parser = _parse_ini(args.config)
    names = _get(parser, "verify", "suites", list, default=None)
    seed = args.seed if args.seed is not None else _get(parser, "verify", "seed", int, default=None)
    try:
        rows = verify.run_suites(names, seed=seed)
    except ValueError as exc:
        raise ConfigError(f"verify.suites: {exc}") from exc
    width = max(len(r["suite"] + " " + r["check"]) for r in rows)
    for r in rows:
        label = f"{r['suite']} {r['check']}".ljust(width)
        status = "PASS" if r["passed"] else "FAIL"
        print(f"{label}  measured={r['measured']:.6g}  bound={r['bound']:.6g}  {status}")
    if args.out:
        write_text_atomic(args.out, _json_text({"checks": rows}))
    return EXIT_OK if all(r["passed"] for r in rows) else 1


def cmd_solve_mt(args) -> int:
    parser = _parse_ini(args.config)
    instance_path = _get(parser, "solve-mt", "instance", str, required=True)
    solver = _solver_config(parser)
    try:
        with open(instance_path, "r", encoding="utf-8") as handle:
            instance = instance_from_json(handle.read())
    except OSError as exc:
        raise OSError(f"{instance_path}: cannot read instance: {exc.strerror}") from exc
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{instance_path}: invalid instance JSON: {exc}") from exc
    solution = solve_mt(instance, solver)
    write_text_atomic(args.out, solution_to_json(instance, solution) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


_COMMANDS = {
    "estimate": (cmd_estimate, True),
    "generate": (cmd_generate, True),
    "benchmark": (cmd_benchmark, True),
    "verify": (cmd_verify, False),
    "solve-mt": (cmd_solve_mt, True),
}


def _error_json(code: int, kind: str, message: str) -> None:
    sys.stdout.write(json.dumps({"error": {"code": code, "kind": kind, "message": message}}))
    sys.stdout.write("\n")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="htmean",
        description="Heavy-tailed mean estimation: estimator, benchmarks, verification",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_fn, out_required) in _COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI run config")
        p.add_argument("--out", required=out_required, default=None, help="output path")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                       help="worker processes for Monte Carlo trials")
        p.add_argument("--profile", choices=("desk", "paper"), default="desk")
        p.add_argument("--dump-sdp", action="store_true",
                       help="dump solver instances/solutions where supported")
    args = ap.parse_args(argv)

    fn, _ = _COMMANDS[args.command]
    try:
        return fn(args)
    except ConfigError as exc:
        _error_json(EXIT_CONFIG, "config", str(exc))
        return EXIT_CONFIG
    except NonConvergence as exc:
        _error_json(EXIT_NONCONVERGENCE, "nonconvergence", str(exc))
        return EXIT_NONCONVERGENCE
    except SdpError as exc:
        _error_json(EXIT_NONCONVERGENCE, "solver", str(exc))
        return EXIT_NONCONVERGENCE
    except EstimatorError as exc:
        _error_json(EXIT_ESTIMATOR, "estimator", str(exc))
        return EXIT_ESTIMATOR
    except OSError as exc:
        _error_json(EXIT_IO, "io", str(exc))
        return EXIT_IO
    except ValueError as exc:
        _error_json(EXIT_CONFIG, "config", str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
