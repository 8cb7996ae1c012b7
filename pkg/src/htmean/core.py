"""Shared domain types, configuration profiles, and deterministic randomness.

Every randomized routine in this package takes an explicit
``numpy.random.Generator``; there is no hidden global state.  Generators
are built from integer seeds through ``SeedSequence`` so that identical
seeds give identical streams across runs and platforms, and parallel
workers derive independent streams by seed-splitting (``child_seed``).

Two configuration profiles are provided.  The ``paper`` profile keeps the
analysis constants of the method (bucket constant 4000, prune constant
100, iteration budget ``1e6 * ln(d * n)``).  The ``desk`` profile scales
the constants down so the full pipeline runs in seconds at sample sizes
up to ~1e4 while evaluating exactly the same formulas; the formula
identifiers recorded in the config make that assertable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "FORMULA_IDS",
    "Sample",
    "SolverConfig",
    "EstimatorConfig",
    "Estimate",
    "make_rng",
    "child_seed",
    "categorical",
    "desk_profile",
    "paper_profile",
]


# Symbolic identifiers of every formula the estimator evaluates.  Profiles
# may change constant factors only, never the formula set, so both
# profiles carry this exact tuple.
FORMULA_IDS: tuple[tuple[str, str], ...] = (
    ("bucket_count", "clamp(ceil(bucket_constant*ln(1/delta)), 1, floor(m/2))"),
    (
        "prune_radius",
        "max(prune_constant*n^(1/(1+alpha))*d^(-(1-alpha)/(2*(1+alpha))),"
        " prune_constant*sqrt(d))",
    ),
    ("initial_radius_count", "ceil(0.6*n)"),
    ("descent_step", "x(t) + step_factor*d(t)*g(t)"),
    ("iteration_budget", "min(iteration_cap, ceil(1e6*ln(d*n)))"),
    ("distance_threshold", "sdp_threshold_high*k - value_tolerance*k"),
    ("critical_threshold", "sdp_threshold_low*k + value_tolerance*k"),
)


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """Deterministic random stream from a 64-bit seed.

    Identical seeds yield identical uniform/Gaussian/categorical draws on
    every platform (PCG64 keyed through ``SeedSequence``).
    """
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def child_seed(seed: int, *key: int) -> np.random.SeedSequence:
    """Derive an independent child seed, e.g. one per Monte Carlo trial.

    ``child_seed(s, i)`` equals the i-th element of ``SeedSequence(s).spawn``
    without materializing the earlier children, so workers can be seeded
    out of order while reproducing the sequential run bit for bit.
    """
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(i) for i in key))


def categorical(probabilities: Sequence[float], rng: np.random.Generator, size: int | None = None):
    """Sample indices from a finite distribution given by `probabilities`."""
    p = np.asarray(probabilities, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("probabilities must be a nonempty 1-d sequence")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("probabilities must be nonnegative and sum to 1")
    return rng.choice(p.size, size=size, p=p / p.sum())


@dataclass(frozen=True)
class Sample:
    """A collection of n data vectors in R^d with its assumed moment exponent.

    `alpha` is the exponent of the weak moment condition the data is
    assumed to satisfy: sup over unit v of E|<v, X - mu>|^(1+alpha) <= 1,
    with alpha in [0, 1].
    """

    points: np.ndarray
    alpha: float

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if pts.ndim != 2:
            raise ValueError(f"points must be a 2-d array, got shape {pts.shape}")
        if pts.shape[1] < 1:
            raise ValueError("points must have dimension d >= 1")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and iteration budget of the semidefinite solver.

    `value_tolerance` is the absolute slack, per unit of k, applied when
    comparing program values against k-scaled thresholds.
    """

    max_iterations: int = 20_000
    primal_tolerance: float = 1e-6
    dual_tolerance: float = 1e-6
    value_tolerance: float = 1e-3

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        for name in ("primal_tolerance", "dual_tolerance", "value_tolerance"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class EstimatorConfig:
    """All constants of the estimation pipeline.

    The defaults correspond to the desk profile; use `paper_profile` for
    the analysis constants.
    """

    delta: float
    bucket_constant: float = 10.0
    prune_constant: float = 3.0
    sdp_threshold_high: float = 0.9
    sdp_threshold_low: float = 0.05
    step_factor: float = 1.0 / 20.0
    iteration_cap: int = 60
    solver: SolverConfig = field(default_factory=SolverConfig)
    seed: int = 0
    formulas: tuple[tuple[str, str], ...] = FORMULA_IDS

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must be strictly inside (0, 1), got {self.delta}")
        if self.bucket_constant <= 0 or self.prune_constant <= 0:
            raise ValueError("bucket_constant and prune_constant must be > 0")
        if not 0.0 < self.sdp_threshold_low < self.sdp_threshold_high < 1.0:
            raise ValueError(
                "thresholds must satisfy 0 < low < high < 1, got "
                f"low={self.sdp_threshold_low} high={self.sdp_threshold_high}"
            )
        if self.iteration_cap < 1:
            raise ValueError("iteration_cap must be a positive integer")

    def bucket_count(self, m: int) -> int:
        """Number of buckets for m retained points: ceil(c * ln(1/delta)),
        clamped to [1, floor(m/2)] so that every bucket holds >= 2 points."""
        if m < 1:
            raise ValueError("m must be >= 1")
        raw = math.ceil(self.bucket_constant * math.log(1.0 / self.delta) - 1e-12)
        return int(min(max(raw, 1), max(m // 2, 1)))


@dataclass(frozen=True)
class Estimate:
    """Result of the full pipeline: the estimate plus run diagnostics.

    `pruned_count` is the number of points removed by the prune stage,
    `iterations_used` the number of descent iterates that were evaluated.
    """

    mean: np.ndarray
    initial_point: np.ndarray
    pruned_count: int
    bucket_count: int
    iterations_used: int
    final_distance_estimate: float

    def __post_init__(self):
        if self.bucket_count < 1:
            raise ValueError("bucket_count must be >= 1")
        if self.pruned_count < 0:
            raise ValueError("pruned_count must be >= 0")
        if self.final_distance_estimate < 0:
            raise ValueError("final_distance_estimate must be >= 0")


def _validate_profile_args(delta: float, n: int, d: int) -> None:
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be strictly inside (0, 1), got {delta}")
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")


def desk_profile(
    delta: float,
    n: int,
    d: int,
    *,
    seed: int = 0,
    solver: SolverConfig | None = None,
    bucket_constant: float = 10.0,
    prune_constant: float = 3.0,
    iteration_cap: int = 60,
) -> EstimatorConfig:
    """Desk-scale config: same formulas, constants reduced so k <= n/4.

    The bucket constant is lowered when necessary so that the bucket count
    never exceeds n/4, keeping the pipeline runnable for n up to ~1e4.
    """
    _validate_profile_args(delta, n, d)
    ln_inv = math.log(1.0 / delta)
    k_cap = max(1, n // 4)
    bc = bucket_constant
    if math.ceil(bc * ln_inv) > k_cap:
        bc = (k_cap - 1e-9) / ln_inv
    return EstimatorConfig(
        delta=delta,
        bucket_constant=bc,
        prune_constant=prune_constant,
        iteration_cap=iteration_cap,
        solver=solver if solver is not None else SolverConfig(),
        seed=seed,
    )


def paper_profile(
    delta: float,
    n: int,
    d: int,
    *,
    seed: int = 0,
    solver: SolverConfig | None = None,
) -> EstimatorConfig:
    """Analysis constants: bucket constant 4000, prune constant 100, and an
    iteration budget of ceil(1e6 * ln(d * n))."""
    _validate_profile_args(delta, n, d)
    return EstimatorConfig(
        delta=delta,
        bucket_constant=4000.0,
        prune_constant=100.0,
        iteration_cap=int(math.ceil(1e6 * math.log(d * n))),
        solver=solver if solver is not None else SolverConfig(),
        seed=seed,
    )
