"""The mean-estimation pipeline.

Stages, in order: a crude initial estimate (the data point whose
0.6-quantile neighborhood radius is smallest), a prune step that drops
points far from that estimate, bucketing of the survivors into k groups
whose means are better-behaved proxies, and a descent loop that walks a
candidate point toward the bucket-mean center using the semidefinite
test program of `htmean.sdp` both as a distance meter and as a compass.

Distance estimation finds the largest radius at which at least a 0.9
fraction of buckets still clear the margin (bisection over the monotone
program value); gradient estimation extracts the top eigenvector of the
v-block of the optimal moment matrix at that radius, signed so that it
points from the candidate toward the bucket majority.

All stages are deterministic and operate on differences of points, so
the pipeline is translation equivariant (the prune radius depends only
on n, d, alpha).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import EstimatorConfig, Estimate, Sample, SolverConfig
from .sdp import SdpSolution, TestingProgramInstance, _admm, _AdmmState

__all__ = [
    "EstimatorError",
    "EmptySample",
    "EmptyAfterPrune",
    "BucketSet",
    "DescentTrace",
    "initial_mean_estimate",
    "prune_radius",
    "prune",
    "bucket_means",
    "estimate_distance",
    "estimate_gradient",
    "gradient_descent",
    "estimate_mean",
    "critical_radius",
]


class EstimatorError(Exception):
    """Base class for pipeline failures."""


class EmptySample(EstimatorError):
    """Not enough data for the requested stage."""


class EmptyAfterPrune(EstimatorError):
    """The prune step removed every point; the prune radius or config is
    pathological for this data."""


@dataclass(frozen=True)
class BucketSet:
    """k bucket means with their sizes and the retained-point count m."""

    means: np.ndarray
    bucket_sizes: np.ndarray
    source_count: int

    def __post_init__(self):
        means = np.ascontiguousarray(np.asarray(self.means, dtype=np.float64))
        sizes = np.asarray(self.bucket_sizes, dtype=np.int64)
        if means.ndim != 2 or sizes.ndim != 1 or means.shape[0] != sizes.shape[0]:
            raise ValueError("means must be (k, d) and bucket_sizes (k,)")
        if np.any(sizes < 1):
            raise ValueError("every bucket must hold at least one point")
        if int(sizes.sum()) != self.source_count:
            raise ValueError("bucket sizes must add up to the source count")
        if sizes.shape[0] > self.source_count:
            raise ValueError("cannot have more buckets than points")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "bucket_sizes", sizes)

    @property
    def k(self) -> int:
        return self.means.shape[0]


@dataclass(frozen=True)
class DescentTrace:
    """Evaluated iterates, their distance estimates, and the best index."""

    iterates: list[np.ndarray]
    distance_estimates: list[float]
    best_index: int

    def __post_init__(self):
        if len(self.iterates) != len(self.distance_estimates):
            raise ValueError("iterates and distance_estimates must align")
        if self.iterates:
            best = min(self.distance_estimates)
            if self.distance_estimates[self.best_index] != best:
                raise ValueError("best_index must point at the minimal estimate")


def initial_mean_estimate(sample: Sample) -> np.ndarray:
    """The data point minimizing the radius that captures ceil(0.6 n) points.

    Exact O(n^2 d) computation (blocked to bound memory); ties broken by
    the lowest index.  The count includes the point itself.
    """
    X = sample.points
    n = X.shape[0]
    if n == 0:
        raise EmptySample("cannot form an initial estimate from an empty sample")
    q = math.ceil(0.6 * n)
    sq = np.einsum("ij,ij->i", X, X)
    block = max(1, int(2**22 // max(n, 1)))
    best_i = -1
    best_r2 = math.inf
    for start in range(0, n, block):
        stop = min(start + block, n)
        D2 = sq[start:stop, None] + sq[None, :] - 2.0 * (X[start:stop] @ X.T)
        np.clip(D2, 0.0, None, out=D2)
        radii2 = np.partition(D2, q - 1, axis=1)[:, q - 1]
        j = int(np.argmin(radii2))
        if radii2[j] < best_r2:
            best_r2 = float(radii2[j])
            best_i = start + j
    return X[best_i].copy()


def prune_radius(n: int, d: int, alpha: float, prune_constant: float) -> float:
    """Truncation radius max(c * n^(1/(1+a)) * d^(-(1-a)/(2(1+a))), c * sqrt(d))."""
    a = float(alpha)
    grow = float(n) ** (1.0 / (1.0 + a)) * float(d) ** (-(1.0 - a) / (2.0 * (1.0 + a)))
    return max(prune_constant * grow, prune_constant * math.sqrt(d))


def prune(sample: Sample, x_dagger: np.ndarray, cfg: EstimatorConfig) -> Sample:
    """Keep the points within the truncation radius of x_dagger, in order."""
    x_dagger = np.asarray(x_dagger, dtype=np.float64)
    if x_dagger.shape != (sample.d,):
        raise ValueError(f"x_dagger must have shape ({sample.d},), got {x_dagger.shape}")
    tau = prune_radius(sample.n, sample.d, sample.alpha, cfg.prune_constant)
    diffs = sample.points - x_dagger[None, :]
    keep = np.einsum("ij,ij->i", diffs, diffs) <= tau * tau
    return Sample(points=sample.points[keep], alpha=sample.alpha)


def bucket_means(sample: Sample, cfg: EstimatorConfig) -> BucketSet:
    """Split the points, in input order, into k contiguous buckets and average.

    k = ceil(bucket_constant * ln(1/delta)) clamped to [1, floor(m/2)]; the
    remainder of m/k is spread one point each over the first buckets so no
    point is dropped.
    """
    m = sample.n
    if m == 0:
        raise EmptySample("cannot bucket an empty sample")
    k = cfg.bucket_count(m)
    base, rem = divmod(m, k)
    sizes = np.full(k, base, dtype=np.int64)
    sizes[:rem] += 1
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    sums = np.add.reduceat(sample.points, starts, axis=0)
    means = sums / sizes[:, None]
    return BucketSet(means=means, bucket_sizes=sizes, source_count=m)


# ---------------------------------------------------------------------------
# Distance and gradient estimation
# ---------------------------------------------------------------------------


def _count_bound_directions(W: np.ndarray) -> list[np.ndarray]:
    """Cheap candidate unit directions for the combinatorial lower bound."""
    dirs = []
    mean = W.mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm > 0.0:
        dirs.append(mean / norm)
    imax = int(np.argmax(np.einsum("ij,ij->i", W, W)))
    norm = float(np.linalg.norm(W[imax]))
    if norm > 0.0:
        dirs.append(W[imax] / norm)
    return dirs


class _DistanceSearch:
    """Bisection for the largest radius keeping the program value above a
    threshold, with certificate shortcuts.

    A probe at radius r is resolved without a semidefinite solve whenever
    possible: counting buckets beyond margin r along a cheap candidate
    direction lower-bounds the value (integral solutions are feasible),
    and sum_i min(1, ||w_i||^2 / r^2) upper-bounds it (PSD row-norm
    bound).  Otherwise the splitting solver runs in threshold mode,
    warm-started from the previous probe.
    """

    def __init__(self, Z: np.ndarray, x: np.ndarray, cfg: EstimatorConfig,
                 solver: SolverConfig | None = None, rel_tol: float = 0.01,
                 state=None):
        self.Z = Z
        self.x = np.asarray(x, dtype=np.float64)
        self.cfg = cfg
        self.solver = solver if solver is not None else cfg.solver
        self.rel_tol = rel_tol
        self.k = Z.shape[0]
        self.theta = cfg.sdp_threshold_high * self.k - self.solver.value_tolerance * self.k
        self.W = Z - self.x[None, :]
        self.norms2 = np.einsum("ij,ij->i", self.W, self.W)
        self.radius_cap = math.sqrt(float(np.max(self.norms2)))
        self.dirs = _count_bound_directions(self.W)
        self.margins = [self.W @ u for u in self.dirs]
        self.state = state
        self.solution_at: tuple[float, SdpSolution] | None = None

    def _solve(self, r: float, decide: bool) -> SdpSolution:
        instance = TestingProgramInstance(x=self.x, r=r, bucket_means=self.Z)
        self.state, solution, _ = _admm(
            instance,
            self.solver,
            state=self.state,
            decide_threshold=self.theta if decide else None,
        )
        return solution

    def probe(self, r: float) -> tuple[bool, float]:
        """Decide whether the program value at radius r clears the threshold.

        Returns the decision and a value estimate usable for secant steps
        (a bound when a certificate decided, the solver value otherwise).
        """
        for margin in self.margins:
            count = int(np.count_nonzero(margin >= r))
            if count >= self.theta:
                return True, float(count)
        upper = float(np.sum(np.minimum(1.0, self.norms2 / (r * r))))
        if upper < self.theta:
            return False, upper
        value = self._solve(r, decide=True).value
        return value >= self.theta, value

    def run(self, hint: tuple[float, float] | None = None) -> float:
        if self.radius_cap <= 0.0:
            return 0.0
        lo, hi = 0.0, self.radius_cap
        v_lo, v_hi = float(self.k), -math.inf
        ok, v = self.probe(hi)
        if ok:
            return hi
        v_hi = v
        if hint is not None:
            a = min(max(hint[0], 0.0), self.radius_cap)
            b = min(max(hint[1], a), self.radius_cap)
            if b > a:
                ok_b, v_b = self.probe(b)
                if not ok_b:
                    hi, v_hi = b, v_b
                    ok_a, v_a = self.probe(a)
                    if ok_a:
                        lo, v_lo = a, v_a
        floor = self.radius_cap * 1e-6
        while hi - lo > self.rel_tol * lo and hi > floor:
            # Secant step on the value curve when both endpoint values are
            # informative, clipped away from the endpoints; else midpoint.
            mid = 0.5 * (lo + hi)
            if v_hi < v_lo and math.isfinite(v_hi):
                sec = lo + (v_lo - self.theta) * (hi - lo) / (v_lo - v_hi)
                width = hi - lo
                mid = min(max(sec, lo + 0.15 * width), hi - 0.15 * width)
            ok, v = self.probe(mid)
            if ok:
                lo, v_lo = mid, v
            else:
                hi, v_hi = mid, v
        return lo

    def solution(self, r: float) -> SdpSolution:
        """Fully-converged solve at radius r (reuses the warm state)."""
        if self.solution_at is not None and self.solution_at[0] == r:
            return self.solution_at[1]
        sol = self._solve(r, decide=False)
        self.solution_at = (r, sol)
        return sol


def estimate_distance(
    bucket_means: np.ndarray,
    x: np.ndarray,
    cfg: EstimatorConfig,
) -> float:
    """Largest radius (relative tolerance 1e-2) at which the test value
    stays above sdp_threshold_high * k, minus the value slack.

    Bisection over [0, max_i ||Z_i - x||], justified by monotonicity of
    the value in r; returns the lower, confirmed endpoint, and 0 when no
    positive radius qualifies.
    """
    Z = np.asarray(bucket_means, dtype=np.float64)
    return _DistanceSearch(Z, x, cfg).run()


def _top_eigenvector(A: np.ndarray, tol: float = 1e-8, max_rounds: int = 5000) -> np.ndarray:
    """Power iteration with a deterministic start (e_1, perturbed if the
    start is orthogonal to the range)."""
    d = A.shape[0]
    y = np.zeros(d)
    y[0] = 1.0
    z = A @ y
    if float(np.linalg.norm(z)) <= 1e-14 * max(1.0, float(np.abs(A).max(initial=0.0))):
        y = np.ones(d) / math.sqrt(d)
        z = A @ y
        if float(np.linalg.norm(z)) <= 1e-300:
            out = np.zeros(d)
            out[0] = 1.0
            return out
    for _ in range(max_rounds):
        norm = float(np.linalg.norm(z))
        if norm <= 1e-300:
            break
        y_new = z / norm
        z = A @ y_new
        lam = float(y_new @ z)
        if float(np.linalg.norm(z - lam * y_new)) <= tol * max(abs(lam), 1e-12):
            y = y_new
            break
        y = y_new
    return y


def _signed_gradient(solution: SdpSolution, W: np.ndarray) -> np.ndarray:
    """Top eigenvector of the v-block, signed toward the bucket majority.

    The sign s maximizes #{i : <w_i, s*y> > 0}; ties resolve to +1.
    """
    y = _top_eigenvector(solution.v_block)
    margins = W @ y
    positive = int(np.count_nonzero(margins > 0.0))
    negative = int(np.count_nonzero(margins < 0.0))
    sign = 1.0 if positive >= negative else -1.0
    g = sign * y
    norm = float(np.linalg.norm(g))
    return g / norm if norm > 0 else g


def estimate_gradient(
    bucket_means: np.ndarray,
    x: np.ndarray,
    cfg: EstimatorConfig,
) -> np.ndarray:
    """Unit descent direction at x: solve the test program at the estimated
    distance and extract the signed top eigenvector of the v-block."""
    Z = np.asarray(bucket_means, dtype=np.float64)
    search = _DistanceSearch(Z, x, cfg)
    r = search.run()
    solution = search.solution(r)
    return _signed_gradient(solution, search.W)


def _relaxed_solver(solver: SolverConfig) -> SolverConfig:
    # Descent-internal solves run at a relaxed residual tolerance; the
    # guarantee margins (0.9k vs 0.05k thresholds) absorb the extra slack.
    return replace(
        solver,
        primal_tolerance=min(1e-3, 50.0 * solver.primal_tolerance),
        dual_tolerance=min(1e-3, 50.0 * solver.dual_tolerance),
    )


def gradient_descent(
    bucket_means: np.ndarray,
    x_dagger: np.ndarray,
    T: int,
    cfg: EstimatorConfig,
) -> tuple[np.ndarray, DescentTrace]:
    """Distance-scaled descent from x_dagger, returning the best iterate.

    Evaluates iterates x(0).. x(T): at each one estimates the distance
    d(t) and direction g(t), tracks the iterate with the smallest
    estimate, and steps x(t+1) = x(t) + step_factor * d(t) * g(t).  When a
    step leaves the iterate bitwise unchanged every later evaluation would
    repeat, so the loop exits early.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    Z = np.asarray(bucket_means, dtype=np.float64)
    x_t = np.asarray(x_dagger, dtype=np.float64).copy()
    relaxed = _relaxed_solver(cfg.solver)

    iterates: list[np.ndarray] = []
    dists: list[float] = []
    best_index = 0
    best_d = math.inf
    hint: tuple[float, float] | None = None
    carry = None  # solver state travels across iterations; x moves slowly

    for _t in range(T + 1):
        # Coarser bisection than the public distance op: the step size only
        # needs sandwich-level accuracy.
        search = _DistanceSearch(Z, x_t, cfg, solver=relaxed, rel_tol=0.04, state=carry)
        d_t = search.run(hint=hint)
        carry = search.state
        iterates.append(x_t.copy())
        dists.append(d_t)
        if d_t < best_d:
            best_d = d_t
            best_index = len(dists) - 1
        if d_t == 0.0:
            break  # zero step: all later iterates coincide with this one
        g_t = _signed_gradient(search.solution(d_t), search.W)
        x_next = x_t + cfg.step_factor * d_t * g_t
        if np.array_equal(x_next, x_t):
            break
        x_t = x_next
        hint = (0.6 * d_t, 1.5 * d_t)

    return iterates[best_index].copy(), DescentTrace(
        iterates=iterates, distance_estimates=dists, best_index=best_index
    )


def estimate_mean(sample: Sample, cfg: EstimatorConfig) -> Estimate:
    """Full pipeline over a sample: initial estimate on the first half,
    prune/bucket/descend on the second half."""
    est, _ = estimate_mean_detailed(sample, cfg)
    return est


def estimate_mean_detailed(sample: Sample, cfg: EstimatorConfig) -> tuple[Estimate, DescentTrace]:
    """Like `estimate_mean` but also returns the descent trace."""
    n = sample.n
    if n < 4:
        raise EmptySample(f"need at least 4 points, got {n}")
    first = Sample(points=sample.points[: n // 2], alpha=sample.alpha)
    second = Sample(points=sample.points[n // 2 :], alpha=sample.alpha)

    x_dagger = initial_mean_estimate(first)
    retained = prune(second, x_dagger, cfg)
    if retained.n == 0:
        raise EmptyAfterPrune(
            f"prune removed all {second.n} points (radius "
            f"{prune_radius(second.n, second.d, second.alpha, cfg.prune_constant):.4g})"
        )
    buckets = bucket_means(retained, cfg)
    T = min(cfg.iteration_cap, math.ceil(1e6 * math.log(sample.d * n)))
    x_star, trace = gradient_descent(buckets.means, x_dagger, T, cfg)
    estimate = Estimate(
        mean=x_star,
        initial_point=x_dagger,
        pruned_count=second.n - retained.n,
        bucket_count=buckets.k,
        iterations_used=len(trace.iterates),
        final_distance_estimate=trace.distance_estimates[trace.best_index],
    )
    return estimate, trace


def critical_radius(
    bucket_means: np.ndarray,
    center: np.ndarray,
    cfg: EstimatorConfig,
) -> float:
    """Smallest radius (relative tolerance 1e-2) at which the test value at
    `center` drops to sdp_threshold_low * k, plus the value slack.

    Evaluated by bisection on the monotone value curve; the returned
    (upper, confirmed) endpoint governs the accuracy attainable by the
    descent around `center`.  Fixture-oriented: `center` is the known
    bucket-mean expectation in tests.
    """
    Z = np.asarray(bucket_means, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    k = Z.shape[0]
    theta_low = cfg.sdp_threshold_low * k + cfg.solver.value_tolerance * k

    W = Z - center[None, :]
    norms2 = np.einsum("ij,ij->i", W, W)
    cap = math.sqrt(float(np.max(norms2)))
    if cap <= 0.0:
        return 0.0

    state = None

    def value(r: float) -> float:
        nonlocal state
        instance = TestingProgramInstance(x=center, r=r, bucket_means=Z)
        state, solution, _ = _admm(instance, cfg.solver, state=state, decide_threshold=theta_low)
        return solution.value

    hi = cap
    for _ in range(60):
        if value(hi) <= theta_low:
            break
        hi *= 2.0
    else:
        raise EstimatorError("no radius found with value below the low threshold")
    lo = 0.0
    while hi - lo > 0.01 * hi:
        mid = 0.5 * (lo + hi)
        if value(mid) <= theta_low:
            hi = mid
        else:
            lo = mid
    return hi
