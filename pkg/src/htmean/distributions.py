"""Test distributions with certified weak-moment normalization.

Families here expose a declared exponent `alpha` and are scaled so that
sup over unit directions v of E|<v, X - mu>|^(1+alpha) is at most 1:

  * spherical Student-t with nu degrees of freedom (requires 1+alpha < nu);
    every unit direction has exactly the law scale * t_nu, so the
    directional moment is constant and the normalizing scale is closed
    form;
  * spherical Gaussian, normalized the same way (alpha = 1 recovers a
    unit covariance bound);
  * a product of symmetric Pareto coordinates, normalized through the
    von Bahr-Esseen bound E|sum v_j X_j|^p <= 2 d^(1-p/2) E|X_1|^p for
    p in [1, 2] (conservative: the true directional supremum may be
    smaller);
  * finite discrete distributions, whose directional moments are exact
    finite sums.

The module also builds the two discrete hard instances used by the
benchmark harness: a family of sparse axis-spike distributions indexed
by half-coordinate subsets S (mass 1 - d/(8n) at the origin and
1/(4n) on a spike along each e_i, i in S), and a one-dimensional
two-point pair whose total-variation distance eta/4 limits what any
estimator can do under eta-corruption.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Sample, categorical

__all__ = [
    "DiscreteDistribution",
    "SphericalStudentT",
    "SphericalGaussian",
    "SymmetricParetoProduct",
    "CorruptionModel",
    "point_mass",
    "lower_bound_family",
    "spike_magnitude",
    "corruption_pair",
    "sample_iid",
    "corrupt",
    "check_weak_moment",
    "student_t_abs_moment",
    "gaussian_abs_moment",
    "distribution_from_spec",
    "distribution_to_spec",
    "MassOverflow",
]


class MassOverflow(ValueError):
    """Atom probabilities would exceed total mass 1."""


def student_t_abs_moment(p: float, nu: float) -> float:
    """E|T|^p for T Student-t with nu degrees of freedom, p < nu."""
    if not 0 < p < nu:
        raise ValueError(f"need 0 < p < nu, got p={p}, nu={nu}")
    log_m = (
        0.5 * p * math.log(nu)
        + math.lgamma(0.5 * (p + 1.0))
        + math.lgamma(0.5 * (nu - p))
        - 0.5 * math.log(math.pi)
        - math.lgamma(0.5 * nu)
    )
    return math.exp(log_m)


def gaussian_abs_moment(p: float) -> float:
    """E|Z|^p for Z standard normal (p = 1 gives sqrt(2/pi))."""
    if p <= 0:
        raise ValueError("p must be positive")
    return math.exp(0.5 * p * math.log(2.0) + math.lgamma(0.5 * (p + 1.0)) - 0.5 * math.log(math.pi))


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finitely supported distribution with exact directional moments.

    `alpha` is the declared weak-moment exponent carried into samples.
    """

    atoms: np.ndarray
    probabilities: np.ndarray
    alpha: float = 1.0

    def __post_init__(self):
        atoms = np.ascontiguousarray(np.asarray(self.atoms, dtype=np.float64))
        probs = np.ascontiguousarray(np.asarray(self.probabilities, dtype=np.float64))
        if atoms.ndim != 2 or probs.ndim != 1 or atoms.shape[0] != probs.shape[0]:
            raise ValueError("atoms must be (m, d) and probabilities (m,)")
        if atoms.shape[0] == 0:
            raise ValueError("need at least one atom")
        if np.any(probs < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(float(probs.sum()) - 1.0) > 1e-12:
            raise ValueError(f"probabilities must sum to 1, got {probs.sum()!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        atoms.flags.writeable = False
        probs.flags.writeable = False
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probabilities", probs)

    @property
    def d(self) -> int:
        return self.atoms.shape[1]

    def mean(self) -> np.ndarray:
        return self.probabilities @ self.atoms

    def directional_moment(self, v: np.ndarray, alpha: float) -> float:
        """Exact E|<v, X - mu>|^(1+alpha) for one direction (finite sum)."""
        centered = (self.atoms - self.mean()) @ np.asarray(v, dtype=np.float64)
        return float(self.probabilities @ np.abs(centered) ** (1.0 + alpha))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = categorical(self.probabilities, rng, size=n)
        return self.atoms[idx]


@dataclass(frozen=True)
class SphericalStudentT:
    """Multivariate Student-t with identity shape, scaled so that every
    unit direction has (1+alpha)-moment exactly 1."""

    nu: float
    d: int
    alpha: float
    center: np.ndarray | None = None
    scale: float | None = None

    def __post_init__(self):
        if self.nu <= 1.0 + self.alpha:
            raise ValueError(f"need nu > 1 + alpha, got nu={self.nu}, alpha={self.alpha}")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        center = np.zeros(self.d) if self.center is None else np.asarray(self.center, float)
        if center.shape != (self.d,):
            raise ValueError("center must have shape (d,)")
        scale = self.scale
        if scale is None:
            scale = student_t_abs_moment(1.0 + self.alpha, self.nu) ** (-1.0 / (1.0 + self.alpha))
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "scale", float(scale))

    def mean(self) -> np.ndarray:
        return self.center.copy()

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((n, self.d))
        w = rng.chisquare(self.nu, size=n)
        return self.center[None, :] + self.scale * z * np.sqrt(self.nu / w)[:, None]


@dataclass(frozen=True)
class SphericalGaussian:
    """Isotropic Gaussian scaled so every unit direction has
    (1+alpha)-moment exactly 1 (scale=1 gives the standard Gaussian)."""

    d: int
    alpha: float = 1.0
    center: np.ndarray | None = None
    scale: float | None = None

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        center = np.zeros(self.d) if self.center is None else np.asarray(self.center, float)
        if center.shape != (self.d,):
            raise ValueError("center must have shape (d,)")
        scale = self.scale
        if scale is None:
            scale = gaussian_abs_moment(1.0 + self.alpha) ** (-1.0 / (1.0 + self.alpha))
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "scale", float(scale))

    def mean(self) -> np.ndarray:
        return self.center.copy()

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.center[None, :] + self.scale * rng.standard_normal((n, self.d))


@dataclass(frozen=True)
class SymmetricParetoProduct:
    """Independent coordinates, each a symmetric Pareto variable with tail
    index `tail`, scaled so the von Bahr-Esseen bound certifies the
    declared weak moment (conservative normalization)."""

    tail: float
    d: int
    alpha: float
    center: np.ndarray | None = None
    scale: float | None = None

    def __post_init__(self):
        p = 1.0 + self.alpha
        if self.tail <= p:
            raise ValueError(f"need tail > 1 + alpha, got tail={self.tail}")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        center = np.zeros(self.d) if self.center is None else np.asarray(self.center, float)
        if center.shape != (self.d,):
            raise ValueError("center must have shape (d,)")
        scale = self.scale
        if scale is None:
            coord_moment = self.tail / (self.tail - p)  # E|X_1|^p at unit floor
            bound = 2.0 * self.d ** (1.0 - 0.5 * p) * coord_moment
            scale = bound ** (-1.0 / p)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "scale", float(scale))

    def mean(self) -> np.ndarray:
        return self.center.copy()

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        magnitude = 1.0 + rng.pareto(self.tail, size=(n, self.d))
        signs = rng.integers(0, 2, size=(n, self.d)) * 2 - 1
        return self.center[None, :] + self.scale * signs * magnitude


def point_mass(point, alpha: float = 1.0) -> DiscreteDistribution:
    pt = np.atleast_1d(np.asarray(point, dtype=np.float64))
    return DiscreteDistribution(atoms=pt[None, :], probabilities=np.array([1.0]), alpha=alpha)


def spike_magnitude(n: int, d: int, alpha: float) -> float:
    """n^(1/(1+a)) * d^(-(1-a)/(2(1+a))), the axis-spike length of the hard
    family (the d-exponent vanishes at alpha = 1)."""
    a = float(alpha)
    return float(n) ** (1.0 / (1.0 + a)) * float(d) ** (-(1.0 - a) / (2.0 * (1.0 + a)))


def lower_bound_family(S, n: int, alpha: float) -> DiscreteDistribution:
    """Hard sparse-spike distribution for a half-coordinate subset S.

    With d = 2|S| (S holds 0-based coordinate indices in [0, d)), the
    distribution puts mass 1 - d/(8n) at the origin and mass 1/(4n) on a
    spike of length `spike_magnitude(n, d, alpha)` along e_i for each
    i in S.  Mean entries are spike/(4n) on S and 0 elsewhere.
    """
    S = sorted(int(i) for i in S)
    if len(set(S)) != len(S) or not S:
        raise ValueError("S must be a nonempty set of distinct coordinate indices")
    d = 2 * len(S)
    if any(i < 0 or i >= d for i in S):
        raise ValueError(f"S must be a subset of [0, {d}) with |S| = d/2")
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    if d > 8 * n:
        raise MassOverflow(f"d/(8n) = {d}/{8 * n} exceeds 1: spike mass overflows")
    spike = spike_magnitude(n, d, alpha)
    m = len(S) + 1
    atoms = np.zeros((m, d))
    probs = np.empty(m)
    probs[0] = 1.0 - d / (8.0 * n)
    for row, i in enumerate(S, start=1):
        atoms[row, i] = spike
        probs[row] = 1.0 / (4.0 * n)
    return DiscreteDistribution(atoms=atoms, probabilities=probs, alpha=alpha)


def corruption_pair(eta: float, alpha: float) -> tuple[DiscreteDistribution, DiscreteDistribution]:
    """One-dimensional pair indistinguishable under eta-corruption.

    D1 is a point mass at 0; D2 moves mass eta/4 from 0 to the point
    (1/eta)^(1/(1+alpha)).  Their total-variation distance is exactly
    eta/4, the means differ by exactly (1/4) * eta^(alpha/(1+alpha)), and
    both satisfy the centered (1+alpha)-moment bound 1.

    Stated for alpha in (0, 1); alpha = 1 is allowed by continuity.
    """
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must be in (0, 1), got {eta}")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    d1 = point_mass([0.0], alpha=alpha)
    spike = (1.0 / eta) ** (1.0 / (1.0 + alpha))
    d2 = DiscreteDistribution(
        atoms=np.array([[0.0], [spike]]),
        probabilities=np.array([1.0 - eta / 4.0, eta / 4.0]),
        alpha=alpha,
    )
    return d1, d2


def sample_iid(dist, n: int, rng: np.random.Generator) -> Sample:
    """n independent draws from any of the distribution families."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return Sample(points=dist.sample(n, rng), alpha=dist.alpha)


@dataclass(frozen=True)
class CorruptionModel:
    """Adversary replacing a fraction eta of the sample."""

    eta: float
    adversary: str = "replace_with_point"

    _POLICIES = ("replace_with_point", "mirror_about_estimate", "none")

    def __post_init__(self):
        if not 0.0 <= self.eta < 1.0:
            raise ValueError(f"eta must be in [0, 1), got {self.eta}")
        if self.adversary not in self._POLICIES:
            raise ValueError(f"adversary must be one of {self._POLICIES}")


def corrupt(sample: Sample, model: CorruptionModel, target, rng: np.random.Generator) -> Sample:
    """Replace ceil(eta * n) uniformly chosen points per the adversary policy.

    `replace_with_point` moves them to `target`; `mirror_about_estimate`
    reflects them through `target`.
    """
    count = math.ceil(model.eta * sample.n)
    if count == 0 or model.adversary == "none":
        return sample
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (sample.d,):
        raise ValueError(f"target must have shape ({sample.d},)")
    idx = rng.choice(sample.n, size=count, replace=False)
    points = sample.points.copy()
    if model.adversary == "replace_with_point":
        points[idx] = target
    else:  # mirror_about_estimate
        points[idx] = 2.0 * target[None, :] - points[idx]
    return Sample(points=points, alpha=sample.alpha)


def check_weak_moment(
    dist: DiscreteDistribution,
    alpha: float,
    trials: int,
    rng: np.random.Generator,
) -> float:
    """Certified lower bound on sup over unit v of E|<v, X - mu>|^(1+alpha).

    Per-direction moments are exact finite sums over the atoms; the
    supremum is approached by maximizing over `trials` random directions
    (plus the coordinate axes and atom-difference directions) followed by
    coordinate ascent with step halving (50 sweeps).  The reported value
    is attained by an explicit direction, hence never exceeds the truth.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not isinstance(dist, DiscreteDistribution):
        raise TypeError("exact directional moments require a DiscreteDistribution")
    d = dist.d
    centered = dist.atoms - dist.mean()
    probs = dist.probabilities
    p = 1.0 + alpha

    def f_many(V: np.ndarray) -> np.ndarray:
        return probs @ np.abs(centered @ V.T) ** p

    dirs = [np.eye(d)]
    raw = rng.standard_normal((trials, d))
    norms = np.linalg.norm(raw, axis=1)
    dirs.append(raw[norms > 0] / norms[norms > 0][:, None])
    nz = centered[np.linalg.norm(centered, axis=1) > 0]
    if nz.size:
        dirs.append(nz / np.linalg.norm(nz, axis=1)[:, None])
    V = np.vstack(dirs)
    values = f_many(V)
    best_idx = int(np.argmax(values))
    v = V[best_idx].copy()
    best = float(values[best_idx])

    step = 0.5
    for _sweep in range(50):
        improved = False
        for j in range(d):
            for s in (1.0, -1.0):
                w = v.copy()
                w[j] += s * step
                norm = float(np.linalg.norm(w))
                if norm == 0.0:
                    continue
                w /= norm
                val = float(probs @ np.abs(centered @ w) ** p)
                if val > best:
                    best, v = val, w
                    improved = True
        if not improved:
            step *= 0.5
            if step < 1e-12:
                break
    return best


# ---------------------------------------------------------------------------
# JSON specs
# ---------------------------------------------------------------------------

_FAMILIES = ("discrete", "student_t", "gaussian", "pareto_product", "point_mass", "lower_bound")


def distribution_from_spec(spec: dict, *, n: int | None = None, d: int | None = None,
                           alpha: float | None = None):
    """Build a distribution from a JSON-style spec dict.

    Grid parameters (n, d, alpha) fill in any the spec leaves out, so one
    template spec can serve a whole benchmark grid.
    """
    kind = spec.get("type")
    if kind not in _FAMILIES:
        raise ValueError(f"unknown distribution type {kind!r}; expected one of {_FAMILIES}")
    a = spec.get("alpha", alpha)
    if a is None:
        raise ValueError("spec needs an alpha (explicit or from the grid)")
    if kind == "discrete":
        return DiscreteDistribution(
            atoms=np.asarray(spec["atoms"], dtype=float),
            probabilities=np.asarray(spec["probs"], dtype=float),
            alpha=float(a),
        )
    if kind == "point_mass":
        return point_mass(np.asarray(spec["point"], dtype=float), alpha=float(a))
    if kind == "lower_bound":
        nn = int(spec.get("n", n)) if (spec.get("n", n) is not None) else None
        if nn is None:
            raise ValueError("lower_bound spec needs n")
        if "S" in spec:
            S = [int(i) for i in spec["S"]]
        else:
            dd = spec.get("d", d)
            if dd is None:
                raise ValueError("lower_bound spec needs S or d")
            S = list(range(int(dd) // 2))
        return lower_bound_family(S, nn, float(a))
    dd = spec.get("d", d)
    if dd is None:
        raise ValueError(f"{kind} spec needs d")
    dd = int(dd)
    center = np.asarray(spec["center"], dtype=float) if "center" in spec else None
    scale = float(spec["scale"]) if "scale" in spec else None
    if kind == "student_t":
        return SphericalStudentT(nu=float(spec["nu"]), d=dd, alpha=float(a),
                                 center=center, scale=scale)
    if kind == "gaussian":
        return SphericalGaussian(d=dd, alpha=float(a), center=center, scale=scale)
    return SymmetricParetoProduct(tail=float(spec["tail"]), d=dd, alpha=float(a),
                                  center=center, scale=scale)


def distribution_to_spec(dist) -> dict:
    """Inverse of `distribution_from_spec` (modulo parameter defaults)."""
    if isinstance(dist, DiscreteDistribution):
        return {
            "type": "discrete",
            "atoms": dist.atoms.tolist(),
            "probs": dist.probabilities.tolist(),
            "alpha": dist.alpha,
        }
    if isinstance(dist, SphericalStudentT):
        return {"type": "student_t", "nu": dist.nu, "d": dist.d, "alpha": dist.alpha,
                "center": dist.center.tolist(), "scale": dist.scale}
    if isinstance(dist, SphericalGaussian):
        return {"type": "gaussian", "d": dist.d, "alpha": dist.alpha,
                "center": dist.center.tolist(), "scale": dist.scale}
    if isinstance(dist, SymmetricParetoProduct):
        return {"type": "pareto_product", "tail": dist.tail, "d": dist.d, "alpha": dist.alpha,
                "center": dist.center.tolist(), "scale": dist.scale}
    raise TypeError(f"unsupported distribution {type(dist).__name__}")
