"""Reference pilot-reuse schemes and the exhaustive optimum for small networks."""

from __future__ import annotations

import math
from typing import Iterator, NamedTuple

import numpy as np

from .errors import InvalidParameterError, LimitExceededError, ZFInfeasibleError
from .game import CoalitionStructure
from .utility import (
    CombiningScheme,
    _interference,
    coalition_layout,
    schedule,
    se_from_interference,
    utility_vector,
)

ENUMERATION_LIMIT = 12


def singleton_structure(L) -> CoalitionStructure:
    """No pilot reuse: every cell keeps its own pilots."""
    return CoalitionStructure.singletons(L)


def random_target_size(L) -> int:
    return math.ceil(math.sqrt(L))


def random_structure(L, target_avg_size, rng) -> CoalitionStructure:
    """Throw the cells into ``ceil(L / target)`` bins uniformly; empty bins vanish."""
    if not 1 <= target_avg_size <= L:
        raise InvalidParameterError(f"target size must lie in [1, {L}], got {target_avg_size}")
    n_bins = math.ceil(L / target_avg_size)
    return CoalitionStructure(tuple(int(x) for x in rng.integers(n_bins, size=L)))


def enumerate_partitions(L, limit=ENUMERATION_LIMIT) -> Iterator[CoalitionStructure]:
    """Every set partition of ``range(L)`` exactly once, in restricted-growth-string order.

    A restricted growth string has ``a[0] = 0`` and ``a[i] <= 1 + max(a[:i])``;
    these strings are in bijection with partitions.
    """
    if L > limit:
        raise LimitExceededError(f"L={L} exceeds the enumeration limit {limit}")
    if L == 0:
        yield CoalitionStructure(())
        return
    a = [0] * L
    m = [0] * L  # m[i] = max(a[:i+1])
    while True:
        yield CoalitionStructure(tuple(a))
        i = L - 1
        while i > 0 and a[i] > m[i - 1]:
            i -= 1
        if i == 0:
            return
        a[i] += 1
        m[i] = max(m[i - 1], a[i])
        for k in range(i + 1, L):
            a[k] = 0
            m[k] = m[i]


class Optimum(NamedTuple):
    structure: CoalitionStructure
    total: float
    n_skipped: int


def exhaustive_optimum(L, stats, params, scheme, limit=ENUMERATION_LIMIT) -> Optimum:
    """Structure maximizing the sum of cell utilities.

    Structures with a ZF-infeasible cell are skipped and counted. Ties keep the
    first structure in enumeration order.
    """
    best, best_val, skipped = None, -math.inf, 0
    for C in enumerate_partitions(L, limit):
        mask, sizes = coalition_layout(C)
        K = schedule(sizes, params.B_cell, np.asarray(params.K_max))
        I = _interference(mask, sizes * params.B_cell, K, stats.mu1, stats.mu2, params,
                          CombiningScheme.parse(scheme))
        if np.any(np.isnan(I)) or np.any(I <= 0):
            skipped += 1
            continue
        val = float(se_from_interference(I, K, params).sum())
        if val > best_val:
            best, best_val = C, val
    return Optimum(best, best_val, skipped)


def full_reuse_utilities(K, stats, params, scheme) -> np.ndarray:
    """Per-cell SE when every cell shares all ``B`` pilots but schedules ``K[j]`` users."""
    K = np.asarray(K)
    L = params.L
    if K.shape != (L,) or np.any(K < 1) or np.any(K > params.B):
        raise InvalidParameterError("K must hold L entries in [1, B]")
    mask = ~np.eye(L, dtype=bool)
    pool = np.full(L, params.B)
    u = utility_vector(None, stats, params, scheme, K=K, mask=mask, pool=pool)
    if np.any(np.isnan(u)):
        raise ZFInfeasibleError(f"ZF needs M > K_j, got M={params.M}, max K={int(K.max())}")
    return u
