"""Monte Carlo estimates of the cross-cell attenuation-ratio moments.

For a user uniformly placed in cell ``l``, ``mu1[j, l]`` is the mean of
``d_j(z) / d_l(z)`` and ``mu2[j, l]`` the mean of its square. These two matrices
are the whole geometric footprint of a deployment in the closed-form utilities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError
from .geometry import Deployment, attenuation_matrix, sample_user_position

DEFAULT_MU_SAMPLES = 10_000


@dataclass(frozen=True, eq=False)
class PropagationStats:
    mu1: np.ndarray
    mu2: np.ndarray
    n_samples: int
    mu1_se: np.ndarray | None = None
    mu2_se: np.ndarray | None = None

    @property
    def L(self) -> int:
        return self.mu1.shape[0]

    def permuted(self, perm) -> "PropagationStats":
        """Stats for the deployment with cells relabeled so new cell ``i`` is old ``perm[i]``."""
        p = np.asarray(perm)
        ix = np.ix_(p, p)
        se1 = None if self.mu1_se is None else self.mu1_se[ix]
        se2 = None if self.mu2_se is None else self.mu2_se[ix]
        return PropagationStats(self.mu1[ix], self.mu2[ix], self.n_samples, se1, se2)


def cell_seeds(rng, L):
    """Per-cell generators derived from one draw of ``rng`` and the cell index."""
    base = int(np.random.default_rng(rng).integers(2**63))
    return [np.random.default_rng([base, l]) for l in range(L)]


def _ratio_samples(deployment: Deployment, l, n_samples, gen):
    z = sample_user_position(deployment, l, gen, size=n_samples)
    d = attenuation_matrix(deployment, z)  # (L, n)
    return d / d[l]


def _moments(deployment, n_samples, rng):
    if int(n_samples) != n_samples or n_samples < 1:
        raise InvalidParameterError("n_samples must be a positive integer")
    n = int(n_samples)
    L = deployment.L
    mu1 = np.empty((L, L))
    mu2 = np.empty((L, L))
    se1 = np.zeros((L, L))
    se2 = np.zeros((L, L))
    for l, gen in enumerate(cell_seeds(rng, L)):
        r = _ratio_samples(deployment, l, n, gen)
        mu1[:, l] = r.mean(axis=1)
        mu2[:, l] = (r**2).mean(axis=1)
        if n > 1:
            se1[:, l] = r.std(axis=1, ddof=1) / np.sqrt(n)
            se2[:, l] = (r**2).std(axis=1, ddof=1) / np.sqrt(n)
    np.fill_diagonal(mu1, 1.0)
    np.fill_diagonal(mu2, 1.0)
    np.fill_diagonal(se1, 0.0)
    np.fill_diagonal(se2, 0.0)
    return mu1, mu2, se1, se2


def estimate_mu(deployment: Deployment, n_samples=DEFAULT_MU_SAMPLES, rng=None) -> PropagationStats:
    """Sample ``n_samples`` user positions per cell and average the attenuation ratios.

    Each cell gets its own generator derived from ``rng`` and the cell index, so
    the result does not depend on the order cells are processed in.
    """
    mu1, mu2, se1, se2 = _moments(deployment, n_samples, rng)
    return PropagationStats(mu1, mu2, int(n_samples), se1, se2)


def mu_standard_errors(deployment: Deployment, n_samples=DEFAULT_MU_SAMPLES, rng=None) -> np.ndarray:
    """Standard error of each ``mu1`` entry (sample std of the ratio over sqrt(n))."""
    return _moments(deployment, n_samples, rng)[2]


def stats_from_matrices(mu1, mu2, n_samples=0) -> PropagationStats:
    """Wrap given moment matrices (synthetic instances, tests)."""
    mu1 = np.array(mu1, dtype=float)
    mu2 = np.array(mu2, dtype=float)
    if mu1.shape != mu2.shape or mu1.ndim != 2 or mu1.shape[0] != mu1.shape[1]:
        raise InvalidParameterError("mu1 and mu2 must be equal-sized square matrices")
    return PropagationStats(mu1, mu2, int(n_samples))
