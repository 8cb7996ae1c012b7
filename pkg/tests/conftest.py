import numpy as np
import pytest

from htmean.core import desk_profile, make_rng
from htmean.estimator import critical_radius


def unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def cluster_instance(seed: int, k: int = 30, d: int = 4, noise: float = 1.0,
                     outliers: int = 2, ratio: float = 25.0):
    """A bucket-mean cloud with a known center, its critical radius, and a
    query point at `ratio` critical radii from the center.

    The outlier rows model corrupted buckets; `ratio` >= 20.5 keeps the
    query safely inside the regime where the distance and gradient
    guarantees apply.
    """
    rng = make_rng(seed)
    center = rng.normal(size=d) * 2.0
    Z = center + noise * rng.standard_normal((k, d))
    for j in range(outliers):
        Z[j] = center + noise * 20.0 * unit(rng.normal(size=d))
    cfg = desk_profile(0.05, 1000, d)
    rstar = critical_radius(Z, center, cfg)
    x = center + ratio * rstar * unit(rng.normal(size=d))
    return Z, center, rstar, x, cfg


@pytest.fixture(scope="session")
def cluster_fixtures():
    """The 20 seeded instances shared by the distance/gradient/descent
    acceptance criteria."""
    specs = []
    for i in range(20):
        ratio = (20.5, 25.0, 30.0, 40.0)[i % 4]
        outliers = (0, 1, 2)[i % 3]
        d = (2, 3, 4, 6)[i % 4]
        specs.append(cluster_instance(1000 + i, k=30, d=d, outliers=outliers, ratio=ratio))
    return specs
