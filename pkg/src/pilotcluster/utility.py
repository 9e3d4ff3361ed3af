"""Per-cell scheduling and closed-form average sum spectral efficiency.

A cell ``j`` in a coalition of size ``n`` shares a pool of ``n * B_cell`` pilots
and schedules ``min(n * B_cell, K_max[j])`` users. Its utility is

    U_j = (1 - B/S) * K_j * log2(1 + 1/I_j)

where ``I_j`` is the normalized interference-plus-noise term for MRC or ZFC.
All functions here are vectorized over cells; the scalar entry points just
index the result.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError, NumericalDomainError, ZFInfeasibleError

DEFAULT_S = 400
DEFAULT_ALPHA = 0.5
DEFAULT_SNR_DB = 5.0


class CombiningScheme(str, enum.Enum):
    MRC = "mrc"
    ZFC = "zfc"

    @classmethod
    def parse(cls, value) -> "CombiningScheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise InvalidParameterError(f"unknown combining scheme {value!r}") from None


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True)
class SystemParams:
    """Frame, array and load parameters shared by all cells.

    ``snr`` is the linear ratio rho / sigma^2. ``K_max`` holds one user cap per
    cell. Pilot counts are derived: ``B_cell = floor(alpha * S / L)`` and
    ``B = L * B_cell``.
    """

    L: int
    M: int
    S: int = DEFAULT_S
    alpha: float = DEFAULT_ALPHA
    snr: float = field(default_factory=lambda: db_to_linear(DEFAULT_SNR_DB))
    K_max: tuple = ()

    def __post_init__(self):
        if self.L < 1 or self.M < 1 or self.S < 1:
            raise InvalidParameterError("L, M and S must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidParameterError("alpha must lie in (0, 1)")
        if not self.snr > 0:
            raise InvalidParameterError("snr must be positive")
        if self.B_cell < 1:
            raise InvalidParameterError(
                f"floor(alpha*S/L) = 0 for alpha={self.alpha}, S={self.S}, L={self.L}")
        kmax = self.K_max
        if np.isscalar(kmax):
            kmax = (kmax,) * self.L
        elif len(kmax) == 0:
            kmax = (self.B,) * self.L
        kmax = tuple(int(k) for k in kmax)
        if len(kmax) != self.L or min(kmax) < 1:
            raise InvalidParameterError("K_max needs L entries, each >= 1")
        object.__setattr__(self, "K_max", kmax)

    @property
    def B_cell(self) -> int:
        # guard against alpha*S landing a hair under an integer
        return int(math.floor(self.alpha * self.S / self.L + 1e-9))

    @property
    def B(self) -> int:
        return self.L * self.B_cell

    @property
    def prelog(self) -> float:
        return 1.0 - self.B / self.S

    @classmethod
    def create(cls, L, M, S=DEFAULT_S, alpha=DEFAULT_ALPHA, snr_db=DEFAULT_SNR_DB, K_max=None):
        """Build params with the SNR given in dB. ``K_max=None`` means ``L * B_cell``."""
        return cls(L=int(L), M=int(M), S=int(S), alpha=float(alpha),
                   snr=db_to_linear(snr_db), K_max=() if K_max is None else K_max)

    def with_(self, **changes) -> "SystemParams":
        from dataclasses import replace
        return replace(self, **changes)


def schedule(coalition_size, B_cell, K_max_j):
    """Number of users a cell serves when its coalition has ``coalition_size`` members."""
    return np.minimum(np.asarray(coalition_size) * B_cell, K_max_j)


def _labels(C):
    return np.asarray(getattr(C, "assignment", C))


def coalition_layout(C):
    """Return ``(co_member_mask, coalition_sizes)`` for a structure or label sequence.

    ``mask[j, l]`` is True when ``l`` shares ``j``'s coalition and ``l != j``.
    """
    a = _labels(C)
    same = a[:, None] == a[None, :]
    sizes = same.sum(axis=1)
    np.fill_diagonal(same, False)
    return same, sizes


def scheduled_users(C, params: SystemParams) -> np.ndarray:
    _, sizes = coalition_layout(C)
    return schedule(sizes, params.B_cell, np.asarray(params.K_max))


def _interference(mask, pool, K, mu1, mu2, params, scheme):
    """Interference terms for all cells; NaN where ZF is infeasible.

    ``mask`` marks pilot-sharing co-members, ``pool`` is each cell's pilot pool
    size and ``K`` the scheduled users per cell.
    """
    M = float(params.M)
    inv_snr = 1.0 / params.snr
    K = np.asarray(K, dtype=float)
    w = mask * (K[None, :] / np.asarray(pool, dtype=float)[:, None])  # K_l / (|Phi_j| B_cell)
    A = 1.0 + (w * mu1).sum(axis=1) + inv_snr / params.B
    load = (K[None, :] * mu1).sum(axis=1)  # sum over every cell, own cell included
    if scheme is CombiningScheme.MRC:
        contam = (w * (mu2 + (mu2 - mu1**2) / M)).sum(axis=1)
        return contam + (load / M + inv_snr / M) * A
    dof = M - K
    out = np.full(K.shape, np.nan)
    ok = dof > 0
    if np.any(ok):
        d = dof[ok][:, None]
        contam = (w[ok] * (mu2[ok] + (mu2[ok] - (K[None, :] + 1.0) * mu1[ok] ** 2) / d)).sum(axis=1)
        out[ok] = contam - K[ok] / dof[ok] + (load[ok] + inv_snr) / dof[ok] * A[ok]
    return out


def interference_vector(C, stats, params: SystemParams, scheme) -> np.ndarray:
    """Interference term of every cell under structure ``C`` (NaN if ZF-infeasible)."""
    scheme = CombiningScheme.parse(scheme)
    mask, sizes = coalition_layout(C)
    K = schedule(sizes, params.B_cell, np.asarray(params.K_max))
    return _interference(mask, sizes * params.B_cell, K, stats.mu1, stats.mu2, params, scheme)


def _checked(I, j, K_j, M):
    if np.isnan(I):
        raise ZFInfeasibleError(f"cell {j}: ZF needs M > K_j, got M={M}, K_j={K_j}")
    if not I > 0:
        raise NumericalDomainError(f"cell {j}: interference term {I!r} is not positive")
    return float(I)


def interference_mrc(j, C, stats, params: SystemParams) -> float:
    I = interference_vector(C, stats, params, CombiningScheme.MRC)
    return _checked(I[j], j, None, params.M)


def interference_zfc(j, C, stats, params: SystemParams) -> float:
    I = interference_vector(C, stats, params, CombiningScheme.ZFC)
    return _checked(I[j], j, int(scheduled_users(C, params)[j]), params.M)


def se_from_interference(I, K, params: SystemParams):
    """Pilot-overhead prefactor times ``K log2(1 + 1/I)``; NaN entries propagate."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return params.prelog * np.asarray(K) * np.log2(1.0 + 1.0 / np.asarray(I))


def utility_vector(C, stats, params: SystemParams, scheme, K=None, mask=None, pool=None) -> np.ndarray:
    """Per-cell utilities without raising: NaN marks ZF-infeasible cells.

    ``K``, ``mask`` and ``pool`` override the values implied by ``C``; this is
    how the full-reuse baseline pairs grand-coalition contamination with
    externally chosen scheduling.
    """
    scheme = CombiningScheme.parse(scheme)
    if mask is None or pool is None or K is None:
        m, sizes = coalition_layout(C)
        mask = m if mask is None else mask
        pool = sizes * params.B_cell if pool is None else pool
        K = schedule(sizes, params.B_cell, np.asarray(params.K_max)) if K is None else K
    I = _interference(mask, pool, K, stats.mu1, stats.mu2, params, scheme)
    bad = ~np.isnan(I) & ~(I > 0)
    if np.any(bad):
        j = int(np.flatnonzero(bad)[0])
        raise NumericalDomainError(f"cell {j}: interference term {I[j]!r} is not positive")
    return se_from_interference(I, K, params)


def cell_utility(j, C, stats, params: SystemParams, scheme) -> float:
    """Average sum SE of cell ``j`` in bit/symbol."""
    u = utility_vector(C, stats, params, scheme)
    if np.isnan(u[j]):
        K_j = int(scheduled_users(C, params)[j])
        raise ZFInfeasibleError(f"cell {j}: ZF needs M > K_j, got M={params.M}, K_j={K_j}")
    return float(u[j])


def structure_utilities(C, stats, params: SystemParams, scheme):
    """All cell utilities and their sum (the social objective)."""
    u = utility_vector(C, stats, params, scheme)
    if np.any(np.isnan(u)):
        j = int(np.flatnonzero(np.isnan(u))[0])
        K_j = int(scheduled_users(C, params)[j])
        raise ZFInfeasibleError(f"cell {j}: ZF needs M > K_j, got M={params.M}, K_j={K_j}")
    return u, float(u.sum())
