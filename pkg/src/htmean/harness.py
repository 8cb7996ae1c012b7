"""Monte Carlo experiment engine.

Runs named estimators over (n, d, alpha, delta, eta) grids, records
per-trial errors against the true distribution mean, summarizes them as
conservative order-statistic quantiles, fits error-scaling exponents by
log-log least squares, and runs the hidden-subset failure experiment
that lower-bounds what any estimator can achieve on the sparse-spike
family.

Reproducibility: every trial derives its own random stream from
(seed, grid index, trial index), so reports are bit-identical across
runs and across worker counts.  Trials that raise an estimator or
solver error count as infinite error; failures must not silently
improve quantiles.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import EstimatorConfig, Sample, child_seed, desk_profile, make_rng
from .distributions import (
    CorruptionModel,
    corrupt,
    distribution_from_spec,
    lower_bound_family,
    sample_iid,
)
from .estimator import EstimatorError, bucket_means, estimate_mean
from .sdp import SdpError

__all__ = [
    "GridPoint",
    "TrialReport",
    "ScalingFit",
    "DegenerateGrid",
    "ESTIMATORS",
    "estimate_with",
    "run_grid",
    "fit_exponent",
    "minimax_radius",
    "minimax_failure_experiment",
    "reports_to_csv",
    "reports_summary",
    "write_text_atomic",
]


class DegenerateGrid(ValueError):
    """The grid does not support the requested exponent fit."""


@dataclass(frozen=True)
class GridPoint:
    n: int
    d: int
    alpha: float
    delta: float
    eta: float = 0.0

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be >= 1")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must be in (0, 1)")
        if not 0.0 <= self.eta < 1.0:
            raise ValueError("eta must be in [0, 1)")


@dataclass
class TrialReport:
    """Per-trial errors and summaries for one grid point and estimator."""

    grid: GridPoint
    estimator: str
    errors: np.ndarray
    quantile: float
    failure_radius: float | None = None
    failure_frequency: float | None = None
    wall_times: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        errors = np.asarray(self.errors, dtype=np.float64)
        if np.any(errors < 0):
            raise ValueError("errors must be nonnegative")
        object.__setattr__(self, "errors", errors)


@dataclass(frozen=True)
class ScalingFit:
    axis: str
    fitted_exponent: float
    stderr: float
    grid: tuple[float, ...]


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


def _pipeline(sample: Sample, cfg: EstimatorConfig) -> np.ndarray:
    return estimate_mean(sample, cfg).mean


def _sample_mean(sample: Sample, cfg: EstimatorConfig) -> np.ndarray:
    return sample.points.mean(axis=0)


def _coordinate_median_of_means(sample: Sample, cfg: EstimatorConfig) -> np.ndarray:
    buckets = bucket_means(sample, cfg)
    return np.median(buckets.means, axis=0)


def _geometric_median(sample: Sample, cfg: EstimatorConfig) -> np.ndarray:
    """Weiszfeld iteration on the bucket means."""
    Z = bucket_means(sample, cfg).means
    y = Z.mean(axis=0)
    scale = float(np.max(np.linalg.norm(Z - y, axis=1)))
    if scale == 0.0:
        return y
    eps = 1e-12 * scale
    for _ in range(200):
        dist = np.maximum(np.linalg.norm(Z - y, axis=1), eps)
        w = 1.0 / dist
        y_new = (w @ Z) / w.sum()
        if float(np.linalg.norm(y_new - y)) <= 1e-10 * scale:
            return y_new
        y = y_new
    return y


def _zero(sample: Sample, cfg: EstimatorConfig) -> np.ndarray:
    return np.zeros(sample.d)


ESTIMATORS = {
    "pipeline": _pipeline,
    "sample_mean": _sample_mean,
    "coordinate_median_of_means": _coordinate_median_of_means,
    "geometric_median": _geometric_median,
    "zero": _zero,
}


def estimate_with(name: str, sample: Sample, cfg: EstimatorConfig) -> np.ndarray:
    try:
        fn = ESTIMATORS[name]
    except KeyError:
        raise ValueError(f"unknown estimator {name!r}; available: {sorted(ESTIMATORS)}") from None
    return fn(sample, cfg)


# ---------------------------------------------------------------------------
# Grid runner
# ---------------------------------------------------------------------------


def _default_config(point: GridPoint, overrides: dict | None) -> EstimatorConfig:
    kwargs = dict(overrides or {})
    return desk_profile(point.delta, point.n, point.d, **kwargs)


def _one_trial(args) -> tuple[float, float]:
    (estimator, spec, point, seed, point_index, trial, overrides) = args
    rng = make_rng(child_seed(seed, point_index, trial))
    start = time.perf_counter()
    try:
        dist = distribution_from_spec(spec, n=point.n, d=point.d, alpha=point.alpha)
        sample = sample_iid(dist, point.n, rng)
        truth = dist.mean()
        if point.eta > 0.0:
            model = CorruptionModel(eta=point.eta, adversary="replace_with_point")
            target = truth + 100.0 * np.eye(point.d)[0]
            sample = corrupt(sample, model, target, rng)
        cfg = _default_config(point, overrides)
        estimate = estimate_with(estimator, sample, cfg)
        error = float(np.linalg.norm(estimate - truth))
    except (EstimatorError, SdpError):
        error = math.inf
    return error, time.perf_counter() - start


def _order_statistic_quantile(errors: np.ndarray, delta: float) -> float:
    """Conservative (1-delta)-quantile: the order statistic at index
    ceil((1-delta) * trials), no interpolation."""
    trials = errors.shape[0]
    rank = min(max(math.ceil((1.0 - delta) * trials), 1), trials)
    return float(np.sort(errors)[rank - 1])


def run_grid(
    estimator: str,
    dist_spec: dict,
    grid,
    trials: int,
    seed: int,
    *,
    jobs: int = 1,
    failure_radius=None,
    config_overrides: dict | None = None,
) -> list[TrialReport]:
    """Run `trials` independent trials of `estimator` at every grid point.

    `failure_radius` may be a constant or a callable GridPoint -> float;
    when given, each report includes the frequency of errors at or above
    it.  `config_overrides` are keyword overrides passed to the desk
    profile (e.g. iteration_cap, bucket_constant, solver).
    Deterministic for fixed (grid, trials, seed), regardless of `jobs`.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}; available: {sorted(ESTIMATORS)}")
    points = [p if isinstance(p, GridPoint) else GridPoint(**p) for p in grid]
    reports = []
    for index, point in enumerate(points):
        tasks = [
            (estimator, dist_spec, point, seed, index, t, config_overrides)
            for t in range(trials)
        ]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                outcomes = list(pool.map(_one_trial, tasks, chunksize=max(1, trials // (4 * jobs))))
        else:
            outcomes = [_one_trial(t) for t in tasks]
        errors = np.array([e for e, _ in outcomes])
        walls = np.array([w for _, w in outcomes])
        radius = failure_radius(point) if callable(failure_radius) else failure_radius
        frequency = None if radius is None else float(np.mean(errors >= radius))
        reports.append(
            TrialReport(
                grid=point,
                estimator=estimator,
                errors=errors,
                quantile=_order_statistic_quantile(errors, point.delta),
                failure_radius=None if radius is None else float(radius),
                failure_frequency=frequency,
                wall_times=walls,
            )
        )
    return reports


_AXES = ("n", "d", "log_inv_delta")


def _axis_value(point: GridPoint, axis: str) -> float:
    if axis == "n":
        return float(point.n)
    if axis == "d":
        return float(point.d)
    return math.log(1.0 / point.delta)


def fit_exponent(reports: list[TrialReport], axis: str) -> ScalingFit:
    """OLS slope of log(quantile) against log(axis value).

    Requires at least 4 grid points that vary only along `axis` and have
    finite positive quantiles.
    """
    if axis not in _AXES:
        raise ValueError(f"axis must be one of {_AXES}")
    if len(reports) < 4:
        raise DegenerateGrid(f"need >= 4 grid points, got {len(reports)}")
    others = {
        (r.grid.n if axis != "n" else None,
         r.grid.d if axis != "d" else None,
         r.grid.delta if axis != "log_inv_delta" else None,
         r.grid.alpha, r.grid.eta, r.estimator)
        for r in reports
    }
    if len(others) != 1:
        raise DegenerateGrid("grid points must vary only along the fit axis")
    xs = np.array([_axis_value(r.grid, axis) for r in reports])
    ys = np.array([r.quantile for r in reports])
    if len(set(xs.tolist())) < 4:
        raise DegenerateGrid("need >= 4 distinct axis values")
    if np.any(~np.isfinite(ys)) or np.any(ys <= 0):
        raise DegenerateGrid("quantiles must be finite and positive for a log-log fit")
    lx, ly = np.log(xs), np.log(ys)
    lx_c = lx - lx.mean()
    slope = float((lx_c @ (ly - ly.mean())) / (lx_c @ lx_c))
    intercept = float(ly.mean() - slope * lx.mean())
    resid = ly - (intercept + slope * lx)
    dof = len(xs) - 2
    stderr = float(math.sqrt((resid @ resid) / dof / (lx_c @ lx_c))) if dof > 0 else 0.0
    return ScalingFit(axis=axis, fitted_exponent=slope, stderr=stderr, grid=tuple(xs.tolist()))


# ---------------------------------------------------------------------------
# Hidden-subset failure experiment
# ---------------------------------------------------------------------------


def minimax_radius(n: int, d: int, alpha: float) -> float:
    """(1/24) * (d/n)^(alpha/(1+alpha)), the radius no estimator beats with
    probability 3/4 on the sparse-spike family."""
    return (d / n) ** (alpha / (1.0 + alpha)) / 24.0


def _one_minimax_trial(args) -> bool:
    (estimator, n, d, alpha, delta, seed, trial, overrides, radius) = args
    rng = make_rng(child_seed(seed, trial))
    S = np.sort(rng.choice(d, size=d // 2, replace=False))
    dist = lower_bound_family(S.tolist(), n, alpha)
    sample = sample_iid(dist, n, rng)
    truth = dist.mean()
    cfg = _default_config(GridPoint(n=n, d=d, alpha=alpha, delta=delta), overrides)
    try:
        estimate = estimate_with(estimator, sample, cfg)
        error = float(np.linalg.norm(estimate - truth))
    except (EstimatorError, SdpError):
        error = math.inf
    return error >= radius


def minimax_failure_experiment(
    n: int,
    d: int,
    alpha: float,
    trials: int,
    estimator: str,
    seed: int,
    *,
    delta: float = 0.1,
    jobs: int = 1,
    config_overrides: dict | None = None,
) -> float:
    """Frequency of errors >= minimax_radius(n, d, alpha) when the spike
    subset S is drawn uniformly per trial; every estimator lands at or
    above 1/4 asymptotically."""
    if d % 2 != 0:
        raise ValueError("d must be even")
    if d > 8 * n:
        raise ValueError("need d <= 8n for the spike masses to fit")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    radius = minimax_radius(n, d, alpha)
    tasks = [
        (estimator, n, d, alpha, delta, seed, t, config_overrides, radius)
        for t in range(trials)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_one_minimax_trial, tasks, chunksize=max(1, trials // (4 * jobs))))
    else:
        outcomes = [_one_minimax_trial(t) for t in tasks]
    return float(np.mean(outcomes))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf"
    return format(x, ".17g")


def reports_to_csv(reports: list[TrialReport], *, timing: bool = False) -> str:
    """One row per trial.  Wall times are written as 0 unless `timing` is
    set, so that identical (grid, seed) runs emit byte-identical files."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["n", "d", "alpha", "delta", "eta", "estimator", "trial", "error", "wall_time"])
    for report in reports:
        g = report.grid
        for t, err in enumerate(report.errors):
            wall = report.wall_times[t] if timing and t < len(report.wall_times) else 0.0
            writer.writerow(
                [g.n, g.d, _fmt(g.alpha), _fmt(g.delta), _fmt(g.eta),
                 report.estimator, t, _fmt(float(err)), _fmt(float(wall))]
            )
    return out.getvalue()


def reports_summary(reports: list[TrialReport], fits: list[ScalingFit] | None = None) -> dict:
    """JSON-ready summary: one entry per grid point plus optional fits."""
    entries = []
    for report in reports:
        g = report.grid
        finite = report.errors[np.isfinite(report.errors)]
        entry = {
            "n": g.n,
            "d": g.d,
            "alpha": g.alpha,
            "delta": g.delta,
            "eta": g.eta,
            "estimator": report.estimator,
            "trials": int(report.errors.shape[0]),
            "quantile": report.quantile,
            "error_count": int(np.sum(~np.isfinite(report.errors))),
            "median_error": float(np.median(finite)) if finite.size else None,
        }
        if report.failure_radius is not None:
            entry["failure_radius"] = report.failure_radius
            entry["failure_frequency"] = report.failure_frequency
        entries.append(entry)
    doc: dict = {"reports": entries}
    if fits:
        doc["fits"] = [
            {"axis": f.axis, "fitted_exponent": f.fitted_exponent, "stderr": f.stderr,
             "grid": list(f.grid)}
            for f in fits
        ]
    return doc


def write_text_atomic(path: str, text: str) -> None:
    """Write via a temp file and rename; no partial files on failure."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp = os.path.join(directory, f".{os.path.basename(path)}.tmp{os.getpid()}")
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
