"""The semidefinite bucket-test program and its brute-force counterpart.

Given bucket vectors Z in R^{k x d}, a candidate point x and a radius r,
the combinatorial program asks how many buckets sit at margin >= r from x
along some common unit direction:

    maximize   sum_i b_i
    subject to b_i^2 = b_i,  ||v||^2 = 1,
               b_i * (<v, Z_i - x> - r) >= 0          for all i.

`solve_mte_bruteforce` evaluates it exactly by enumerating support
patterns (guarded to k <= 16).  Its semidefinite relaxation optimizes a
PSD moment matrix X of order N = 1 + k + d, symbolically indexed by
(1, b_1..b_k, v_1..v_d):

    maximize   sum_i X[1,b_i]
    subject to X[1,b_i] = X[b_i,b_i],   sum_j X[v_j,v_j] = 1,
               <v_{b_i}, Z_i - x> >= X[b_i,b_i] * r,   X[1,1] = 1,
               X PSD,

where v_{b_i} = (X[b_i,v_1], ..., X[b_i,v_d]).  The relaxed value is
monotone nonincreasing in r, changes by at most 1 under single-row
replacement of Z, and upper-bounds the combinatorial value.

Solver
------
`solve_mt` runs a two-block operator-splitting (ADMM) scheme on the pair
(X, s) where s holds one nonnegative slack per margin inequality:

  * affine step -- exact least-squares projection onto the equality set
    {X[1,1]=1, X[1,b_i]=X[b_i,b_i], trace of v-block = 1,
     <v_{b_i}, w_i> - r X[b_i,b_i] - s_i = 0}, shifted by the objective.
    The Gram matrix of the constraint functionals is block diagonal with
    2x2 blocks, so the projection is closed form and O(k d) per sweep.
  * cone step -- eigendecomposition of the symmetrized iterate with
    negative eigenvalues clamped to zero, and s clamped to s >= 0.

Instances are solved in a normalized frame (x at the origin, data scaled
by max(max_i ||Z_i - x||, r)); the feasible set of X is invariant under
that scaling, so the reported solution is unchanged.  All updates are
deterministic: two solves of the same instance with the same config
return bit-identical results.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .core import SolverConfig

__all__ = [
    "TestingProgramInstance",
    "SdpSolution",
    "SdpError",
    "NonConvergence",
    "DimensionGuard",
    "EnumerationGuard",
    "solve_mt",
    "solve_mte_bruteforce",
    "mt_value_curve",
    "instance_to_json",
    "instance_from_json",
    "solution_to_json",
]

# Hard cap on the moment-matrix order for the dense eigendecomposition path.
DIMENSION_CAP = 2000

# Brute-force enumeration guard.
ENUMERATION_CAP = 16

# Penalty rebalancing threshold: adapt rho when one residual exceeds the
# other by this factor.
_ADAPT_RATIO = 8.0


class SdpError(Exception):
    """Base class for solver failures."""


class NonConvergence(SdpError):
    """Residuals were still above tolerance at max_iterations."""

    def __init__(self, iterations: int, primal: float, dual: float):
        self.iterations = iterations
        self.primal = primal
        self.dual = dual
        super().__init__(
            f"no convergence after {iterations} iterations "
            f"(primal residual {primal:.3e}, dual residual {dual:.3e}); "
            "retry with a larger max_iterations"
        )


class DimensionGuard(SdpError):
    """Moment matrix too large for the dense solver."""


class EnumerationGuard(SdpError):
    """Too many buckets for exhaustive support enumeration."""


@dataclass(frozen=True)
class TestingProgramInstance:
    """One (x, r, Z) triple defining a bucket-test solve."""

    x: np.ndarray
    r: float
    bucket_means: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(np.asarray(self.x, dtype=np.float64))
        Z = np.ascontiguousarray(np.asarray(self.bucket_means, dtype=np.float64))
        if x.ndim != 1:
            raise ValueError(f"x must be a vector, got shape {x.shape}")
        if Z.ndim != 2 or Z.shape[1] != x.shape[0]:
            raise ValueError(
                f"bucket_means must be (k, d) with d = len(x); got {Z.shape} vs d={x.shape[0]}"
            )
        if Z.shape[0] < 1 or x.shape[0] < 1:
            raise ValueError("need k >= 1 and d >= 1")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(Z))):
            raise ValueError("instance data must be finite")
        if not self.r >= 0.0:
            raise ValueError(f"r must be >= 0, got {self.r}")
        x.flags.writeable = False
        Z.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "bucket_means", Z)

    @property
    def k(self) -> int:
        return self.bucket_means.shape[0]

    @property
    def d(self) -> int:
        return self.bucket_means.shape[1]


@dataclass(frozen=True)
class SdpSolution:
    """Value and moment matrix of one relaxation solve.

    `moment_matrix` is the full (1+k+d) x (1+k+d) PSD iterate, indexed by
    (1, b_1..b_k, v_1..v_d); `b_diagonal` its k bucket-diagonal entries
    and `v_block` the trailing d x d block.  `residuals` holds the scaled
    (primal, dual) residual norms at exit.
    """

    value: float
    moment_matrix: np.ndarray
    b_diagonal: np.ndarray
    v_block: np.ndarray
    residuals: tuple[float, float]
    iterations: int


class _AdmmState:
    """Mutable solver state, reusable as a warm start across nearby solves."""

    __slots__ = ("Q", "q", "U", "u", "rho")

    def __init__(self, Q, q, U, u, rho):
        self.Q = Q
        self.q = q
        self.U = U
        self.u = u
        self.rho = rho


def _initial_state(k: int, d: int) -> _AdmmState:
    # Diagonal start: X[1,1] = 1, b-block 0, v-block I/d.  Feasible for the
    # equality constraints, PSD, and deterministic.
    N = 1 + k + d
    Q = np.zeros((N, N))
    Q[0, 0] = 1.0
    Q[np.arange(k + 1, N), np.arange(k + 1, N)] = 1.0 / d
    return _AdmmState(Q, np.zeros(k), np.zeros((N, N)), np.zeros(k), 0.4)


def _full_support_solution(Wn: np.ndarray, rv: np.ndarray):
    """Closed-form optimum when every bucket clears the margin jointly.

    If some beta with ||beta|| <= 1 satisfies <beta, w_i> >= r_i for all i
    (rows and margins may carry per-row scalings; the solution set is
    unchanged), then X = a a^T + diag(0, .., 0, gamma^2 I_d) with
    a = (1, 1..1, beta_1..beta_d) and gamma^2 = (1 - ||beta||^2)/d is
    feasible with value exactly k, which is the global maximum.  Returns
    (moment_matrix, slack) or None when no such beta exists (or the cheap
    search is inconclusive).
    """
    k, d = Wn.shape
    if np.all(rv <= 0.0):
        beta = np.zeros(d)
    else:
        norms2 = np.einsum("ij,ij->i", Wn, Wn)
        if np.any(norms2 < rv * rv):
            return None  # some bucket cannot reach the margin on its own
        try:
            norm_sq, beta = _min_norm_hildreth(Wn, rv, max_sweeps=2000)
        except ArithmeticError:
            return None
        if norm_sq is None or norm_sq > 1.0:
            return None
    N = 1 + k + d
    a = np.ones(N)
    a[k + 1 :] = beta
    Q = np.outer(a, a)
    gamma_sq = (1.0 - float(beta @ beta)) / d
    iv = np.arange(k + 1, N)
    Q[iv, iv] += gamma_sq
    slack = np.maximum(Wn @ beta - rv, 0.0)
    return Q, slack


def _admm(
    instance: TestingProgramInstance,
    cfg: SolverConfig,
    state: _AdmmState | None = None,
    decide_threshold: float | None = None,
    gamma: float = 1.7,
    adapt_limit_frac: float = 1.0,
):
    """Run the splitting scheme.  Returns (state, solution, decided).

    When `decide_threshold` is set, iteration may stop early once the
    running value is confidently on one side of the threshold (used by
    the monotone bisection in distance estimation, where only the sign of
    value - threshold matters).  `decided` reports whether that happened.
    """
    k, d = instance.k, instance.d
    N = 1 + k + d
    if N > DIMENSION_CAP:
        raise DimensionGuard(f"moment matrix order {N} exceeds cap {DIMENSION_CAP}")

    # Normalized frame: shift x to the origin and rescale each margin row
    # by its own magnitude (the moment-matrix variable is invariant under
    # per-row scaling, and uniform row norms condition the projection).
    # The scaling depends only on the rows, not on r, so warm starts stay
    # compatible across the radii of one monotone search.
    W = instance.bucket_means - instance.x[None, :]
    row_norms = np.linalg.norm(W, axis=1)
    floor = max(1e-12 * float(np.max(row_norms)), 1e-300)
    row_scale = np.maximum(row_norms, floor)
    Wn = W / row_scale[:, None]
    rv = np.full(k, instance.r) / row_scale
    wn2 = np.einsum("ij,ij->i", Wn, Wn)

    # Saturated instances (optimal value exactly k) have a closed-form
    # optimum; returning it skips the iteration entirely.
    closed = _full_support_solution(Wn, rv)
    if closed is not None:
        Q, slack = closed
        ib = np.arange(1, k + 1)
        solution = SdpSolution(
            value=float(k),
            moment_matrix=Q.copy(),
            b_diagonal=Q[ib, ib].copy(),
            v_block=Q[k + 1 :, k + 1 :].copy(),
            residuals=(0.0, 0.0),
            iterations=0,
        )
        fresh = _AdmmState(Q, slack, np.zeros((N, N)), np.zeros(k), 0.4)
        return fresh, solution, False

    # 2x2 Gram blocks of the paired constraints (X[1,b_i]=X[b_i,b_i] and the
    # i-th margin row): [[3/2, rv_i], [rv_i, ci_i]] with ci below.
    ci = 0.5 * wn2 + rv * rv + 1.0
    det = 1.5 * ci - rv * rv

    if state is None:
        state = _initial_state(k, d)
    Q, q, U, u = state.Q.copy(), state.q.copy(), state.U.copy(), state.u.copy()
    rho = state.rho
    # Warm-started duals may be stale for this instance; cap their size
    # relative to the primal so a poisoned start cannot dominate the run.
    dual_norm = math.sqrt(float(np.sum(U * U)) + float(u @ u))
    dual_cap = 1.0 + math.sqrt(float(np.sum(Q * Q)) + float(q @ q))
    if dual_norm > dual_cap:
        U *= dual_cap / dual_norm
        u *= dual_cap / dual_norm

    ib = np.arange(1, k + 1)
    iv = np.arange(k + 1, N)

    # Scratch buffers; the loop allocates nothing of size N^2.
    P = np.empty_like(Q)
    M = np.empty_like(Q)
    scaled = np.empty_like(Q)
    diff = np.empty_like(Q)

    check_every = 10
    # Early decisions require residuals at or below this looser gate.
    decide_primal = max(cfg.primal_tolerance, 2e-3)
    decide_dual = max(cfg.dual_tolerance, 2e-3)
    decide_band = 10.0
    prev_value = None
    value_drift = math.inf
    primal = dual = math.inf
    decided = False
    flips = 0
    last_direction = 0
    it = 0

    for it in range(1, cfg.max_iterations + 1):
        # --- affine projection (objective-shifted least squares) ---
        np.subtract(Q, U, out=P)
        half_shift = 0.5 / rho
        P[0, ib] += half_shift
        P[ib, 0] += half_shift
        p = q - u

        diag_b = P[ib, ib]
        e0 = P[0, 0] - 1.0
        eb = P[0, ib] - diag_b
        et = np.sum(P[iv, iv]) - 1.0
        eq = np.einsum("ij,ij->i", Wn, P[1 : k + 1, k + 1 :]) - rv * diag_b - p

        lb = (ci * eb - rv * eq) / det
        lq = (1.5 * eq - rv * eb) / det
        lt = et / d

        P[0, 0] -= e0
        P[0, ib] -= 0.5 * lb
        P[ib, 0] -= 0.5 * lb
        P[ib, ib] += lb + rv * lq
        P[iv, iv] -= lt
        corr = (0.5 * lq)[:, None] * Wn
        P[1 : k + 1, k + 1 :] -= corr
        P[k + 1 :, 1 : k + 1] -= corr.T
        p += lq

        # --- over-relaxation, cone projection, dual update ---
        # PR = gamma*P + (1-gamma)*Q overwrites P; pr likewise.
        P *= gamma
        np.multiply(Q, 1.0 - gamma, out=scaled)
        P += scaled
        p *= gamma
        p += (1.0 - gamma) * q

        np.add(P, U, out=M)
        np.add(M, M.T, out=scaled)
        scaled *= 0.5
        evals, evecs = np.linalg.eigh(scaled)
        np.clip(evals, 0.0, None, out=evals)
        np.matmul(evecs * evals, evecs.T, out=M)
        np.add(M, M.T, out=diff)
        diff *= 0.5
        Q_new = diff  # symmetrized PSD projection
        q_new = np.maximum(p + u, 0.0)

        U += P
        U -= Q_new
        u += p - q_new

        checking = it % check_every == 0 or it == cfg.max_iterations
        if checking:
            np.subtract(P, Q_new, out=scaled)
            prim_sq = float(np.einsum("ij,ij->", scaled, scaled)) + float(
                np.sum((p - q_new) ** 2)
            )
            np.subtract(Q_new, Q, out=scaled)
            dual_sq = float(np.einsum("ij,ij->", scaled, scaled)) + float(
                np.sum((q_new - q) ** 2)
            )
        Q, diff = Q_new, Q  # recycle the old Q as next scratch
        q = q_new

        if checking:
            norm_scale = 1.0 + math.sqrt(float(np.einsum("ij,ij->", Q, Q)) + float(q @ q))
            primal = math.sqrt(prim_sq) / norm_scale
            dual = rho * math.sqrt(dual_sq) / norm_scale
            if primal <= cfg.primal_tolerance and dual <= cfg.dual_tolerance:
                break

            value = float(np.sum(Q[0, ib]))
            if prev_value is not None:
                value_drift = abs(value - prev_value)
            prev_value = value
            if (
                decide_threshold is not None
                and primal <= decide_primal
                and dual <= decide_dual
                and abs(value - decide_threshold)
                > decide_band * value_drift + 0.02 * max(1.0, k * 0.05)
            ):
                decided = True
                break

            # Residual balancing: double or halve rho toward the side with
            # the larger residual.  Each adjustment rescales the duals, so
            # once the direction has flip-flopped a few times adaptation
            # freezes -- unbounded flapping would pump the duals.
            if (
                it % 100 == 0
                and it < adapt_limit_frac * cfg.max_iterations
                and flips < 3
            ):
                direction = 0
                if primal > _ADAPT_RATIO * dual and rho < 1e3:
                    direction = 1
                elif dual > _ADAPT_RATIO * primal and rho > 1e-3:
                    direction = -1
                if direction != 0:
                    if last_direction != 0 and direction != last_direction:
                        flips += 1
                    last_direction = direction
                    if direction > 0:
                        rho *= 2.0
                        U *= 0.5
                        u *= 0.5
                    else:
                        rho *= 0.5
                        U *= 2.0
                        u *= 2.0

    if not decided and (primal > cfg.primal_tolerance or dual > cfg.dual_tolerance):
        raise NonConvergence(it, primal, dual)

    value = float(np.sum(Q[0, ib]))
    solution = SdpSolution(
        value=value,
        moment_matrix=Q.copy(),
        b_diagonal=Q[ib, ib].copy(),
        v_block=Q[k + 1 :, k + 1 :].copy(),
        residuals=(primal, dual),
        iterations=it,
    )
    return _AdmmState(Q, q, U, u, rho), solution, decided


def solve_mt(instance: TestingProgramInstance, cfg: SolverConfig | None = None) -> SdpSolution:
    """Solve the semidefinite relaxation for one (x, r, Z) instance.

    Returns a feasible-within-tolerance maximizer; the reported value is
    accurate to roughly value_tolerance * k once the residual criteria
    hold.  Deterministic for identical inputs and config.

    Raises NonConvergence if the residuals are still above tolerance at
    max_iterations, DimensionGuard if 1 + k + d exceeds the dense cap.
    """
    if cfg is None:
        cfg = SolverConfig()
    _, solution, _ = _admm(instance, cfg)
    return solution


def mt_value_curve(
    x: np.ndarray,
    bucket_means: np.ndarray,
    radii,
    cfg: SolverConfig | None = None,
) -> list[float]:
    """Relaxation values over an ascending list of radii.

    Successive solves share solver state (the feasible set shrinks with
    r, so the previous iterate is a good start); the first solve starts
    cold and therefore matches a standalone `solve_mt` bit for bit.
    Values are nonincreasing up to 2 * value_tolerance * k.
    """
    if cfg is None:
        cfg = SolverConfig()
    radii = [float(r) for r in radii]
    if any(b < a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be sorted ascending")
    values: list[float] = []
    state = None
    for r in radii:
        state, solution, _ = _admm(
            TestingProgramInstance(x=x, r=r, bucket_means=bucket_means), cfg, state=state
        )
        values.append(solution.value)
    return values


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------


def _min_norm_hildreth(W: np.ndarray, rhs, max_sweeps: int = 100_000, tol: float = 1e-9):
    """Min-norm point of {v : W v >= rhs} by cyclic projection onto
    half-spaces (dual coordinate ascent); rhs may be a scalar or one value
    per row.  Returns (norm_sq, v), or (None, None) when the dual value
    certifies norm_sq > 1 (pattern unusable for a unit vector), or raises
    ArithmeticError when sweeps are exhausted undecided."""
    s = W.shape[0]
    b = np.broadcast_to(np.asarray(rhs, dtype=float), (s,))
    norms2 = np.einsum("ij,ij->i", W, W)
    lam = np.zeros(s)
    v = np.zeros(W.shape[1])
    b_scale = max(1.0, float(np.max(np.abs(b))))
    for _ in range(max_sweeps):
        max_change = 0.0
        for i in range(s):
            step = (b[i] - float(W[i] @ v)) / norms2[i]
            new = lam[i] + step
            if new < 0.0:
                new = 0.0
            change = new - lam[i]
            if change != 0.0:
                v = v + change * W[i]
                lam[i] = new
                max_change = max(max_change, abs(change) * math.sqrt(norms2[i]))
        # Weak duality: any feasible dual point lower-bounds 0.5*||v*||^2.
        dual_value = float(b @ lam) - 0.5 * float(v @ v)
        if dual_value > 0.5 + 1e-12:
            return None, None
        if max_change <= tol * b_scale:
            return float(v @ v), v
    raise ArithmeticError("cyclic projection undecided")


def _min_norm_active_set(W: np.ndarray, r: float):
    """Exhaustive KKT enumeration for the same QP (s <= 8 constraints)."""
    s = W.shape[0]
    best_sq, best_v = None, None
    if r <= 0.0:
        zero = np.zeros(W.shape[1])
        if np.all(W @ zero >= r - 1e-12):
            return 0.0, zero
    for size in range(1, s + 1):
        for active in itertools.combinations(range(s), size):
            A = W[list(active)]
            G = A @ A.T
            try:
                lam = np.linalg.lstsq(G, np.full(size, r), rcond=None)[0]
            except np.linalg.LinAlgError:  # pragma: no cover - lstsq rarely fails
                continue
            if np.any(lam < -1e-10):
                continue
            v = A.T @ np.clip(lam, 0.0, None)
            if np.all(W @ v >= r - 1e-9 * max(1.0, abs(r))):
                nsq = float(v @ v)
                if best_sq is None or nsq < best_sq:
                    best_sq, best_v = nsq, v
    return best_sq, best_v


def _pattern_feasible(W: np.ndarray, r: float):
    """Does a unit vector v exist with <v, w_i> >= r for all rows of W?

    For r > 0 this holds iff the min-norm point of the half-space
    intersection has norm <= 1 (scaling up preserves the margins).  A
    margin of exactly zero is resolved with a 1e-12 slack, so patterns
    feasible only through exactly-zero margins may be missed at r = 0.
    Returns (feasible, v_unit_or_None).
    """
    r_eff = max(r, 1e-12)
    nonzero = np.einsum("ij,ij->i", W, W) > 0.0
    if not np.all(nonzero):
        return False, None  # a zero row can never reach a positive margin
    try:
        norm_sq, v = _min_norm_hildreth(W, r_eff)
    except ArithmeticError:
        if W.shape[0] > 8:
            raise
        norm_sq, v = _min_norm_active_set(W, r_eff)
    if norm_sq is None or norm_sq > 1.0 + 1e-9:
        return False, None
    nv = math.sqrt(norm_sq)
    if nv <= 1e-15:
        return False, None
    return True, v / nv


def solve_mte_bruteforce(instance: TestingProgramInstance):
    """Exact combinatorial value by support-pattern enumeration (k <= 16).

    Returns (value, b, v): the largest number of buckets reachable at
    margin >= r along one unit direction, an indicator vector of a
    maximizing support, and a certifying unit vector (e_1 when the value
    is zero).
    """
    k, d = instance.k, instance.d
    if k > ENUMERATION_CAP:
        raise EnumerationGuard(f"k={k} exceeds enumeration cap {ENUMERATION_CAP}")
    W = instance.bucket_means - instance.x[None, :]
    r = float(instance.r)

    # A bucket can only join a support if its own length reaches the margin.
    norms = np.linalg.norm(W, axis=1)
    eligible = [i for i in range(k) if norms[i] >= max(r, 1e-12) - 1e-12]

    default_v = np.zeros(d)
    default_v[0] = 1.0
    for size in range(len(eligible), 0, -1):
        for subset in itertools.combinations(eligible, size):
            ok, v = _pattern_feasible(W[list(subset)], r)
            if ok:
                b = np.zeros(k, dtype=np.int64)
                b[list(subset)] = 1
                return size, b, v
    return 0, np.zeros(k, dtype=np.int64), default_v


# ---------------------------------------------------------------------------
# JSON debug dumps
# ---------------------------------------------------------------------------


def instance_to_json(instance: TestingProgramInstance, solution: SdpSolution | None = None) -> str:
    """Serialize an instance (and optionally its solution) to JSON."""
    doc = {
        "k": instance.k,
        "d": instance.d,
        "r": instance.r,
        "x": instance.x.tolist(),
        "Z": instance.bucket_means.tolist(),
    }
    if solution is not None:
        doc["value"] = solution.value
        doc["X"] = solution.moment_matrix.tolist()
    return json.dumps(doc)


def instance_from_json(text: str) -> TestingProgramInstance:
    doc = json.loads(text)
    instance = TestingProgramInstance(
        x=np.asarray(doc["x"], dtype=float),
        r=float(doc["r"]),
        bucket_means=np.asarray(doc["Z"], dtype=float),
    )
    if instance.k != int(doc.get("k", instance.k)) or instance.d != int(doc.get("d", instance.d)):
        raise ValueError("k/d fields disagree with the Z matrix shape")
    return instance


def solution_to_json(instance: TestingProgramInstance, solution: SdpSolution) -> str:
    return instance_to_json(instance, solution)
