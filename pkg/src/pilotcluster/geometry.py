"""Random base-station deployments on a wrap-around square.

Cells are the Voronoi regions of the BS positions under the torus metric, and
the large-scale attenuation follows a clamped power law.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InvalidParameterError

DEFAULT_DENSITY = 25.0  # BS per km^2
DEFAULT_GAMMA = 3.0
DEFAULT_D_MIN = 10.0  # meters


@dataclass(frozen=True, eq=False)
class Deployment:
    """BS layout on a torus of side ``side`` meters.

    ``bs_positions`` has shape ``(L, 2)``; all coordinates lie in ``[0, side)``.
    """

    bs_positions: np.ndarray
    side: float
    density: float = DEFAULT_DENSITY
    pathloss_exponent: float = DEFAULT_GAMMA
    min_distance: float = DEFAULT_D_MIN

    def __post_init__(self):
        pos = np.asarray(self.bs_positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 1:
            raise InvalidParameterError("bs_positions must have shape (L, 2) with L >= 1")
        if np.any(pos < 0) or np.any(pos >= self.side):
            raise InvalidParameterError("BS coordinates must lie in [0, side)")
        pos.setflags(write=False)
        object.__setattr__(self, "bs_positions", pos)

    @property
    def L(self) -> int:
        return self.bs_positions.shape[0]

    @cached_property
    def cell_radii(self) -> np.ndarray:
        """Upper bound on the distance from each BS to any point of its cell."""
        return cell_radii(self)


def side_length(L: int, density: float) -> float:
    """Square side in meters holding ``L`` BSs at ``density`` BS/km^2."""
    return float(np.sqrt(L / density) * 1000.0)


def generate_deployment(L, density=DEFAULT_DENSITY, gamma=DEFAULT_GAMMA,
                        d_min=DEFAULT_D_MIN, rng=None) -> Deployment:
    """Drop ``L`` BSs independently and uniformly on the square."""
    if int(L) != L or L < 1:
        raise InvalidParameterError(f"L must be a positive integer, got {L!r}")
    if not density > 0:
        raise InvalidParameterError("density must be positive")
    if not gamma > 2:
        raise InvalidParameterError("pathloss exponent must exceed 2")
    if not d_min > 0:
        raise InvalidParameterError("d_min must be positive")
    rng = np.random.default_rng(rng)
    side = side_length(int(L), density)
    pos = rng.uniform(0.0, side, size=(int(L), 2))
    # uniform() can return the upper bound after rounding
    pos = np.where(pos >= side, 0.0, pos)
    return Deployment(pos, side, float(density), float(gamma), float(d_min))


def torus_distance(a, b, side):
    """Nearest-image Euclidean distance; broadcasts over leading axes."""
    delta = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
    delta = np.minimum(delta, side - delta)
    return np.hypot(delta[..., 0], delta[..., 1])


def distances(deployment: Deployment, z) -> np.ndarray:
    """Distances from every BS to each point of ``z``: shape ``(L,) + z.shape[:-1]``."""
    z = np.asarray(z, dtype=float)
    bs = deployment.bs_positions.reshape((deployment.L,) + (1,) * (z.ndim - 1) + (2,))
    return torus_distance(bs, z[None, ...], deployment.side)


def serving_cell(deployment: Deployment, z):
    """Index of the nearest BS (lowest index on ties)."""
    d = distances(deployment, z)
    idx = np.argmin(d, axis=0)
    return int(idx) if np.ndim(idx) == 0 else idx


def cell_radii(deployment: Deployment) -> np.ndarray:
    """Farthest Voronoi vertex of each cell, from the BS positions tiled 3x3.

    Falls back to the half-diagonal of the square (always a valid bound) when
    the diagram is degenerate.
    """
    from scipy.spatial import QhullError, Voronoi

    L, side = deployment.L, deployment.side
    limit = side / np.sqrt(2.0)
    out = np.full(L, limit)
    if L < 2:
        return out
    shifts = np.array([(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)]) * side
    tiled = (deployment.bs_positions[None, :, :] + shifts[:, None, :]).reshape(-1, 2)
    try:
        vor = Voronoi(tiled)
    except QhullError:
        return out
    centre = 4 * L  # index of the unshifted copy
    for j in range(L):
        region = vor.regions[vor.point_region[centre + j]]
        if not region or -1 in region:
            continue
        r = np.max(np.hypot(*(vor.vertices[region] - tiled[centre + j]).T))
        out[j] = min(limit, r * (1 + 1e-9) + 1e-6)
    return out


def _in_cell(deployment: Deployment, j, cand, radius=None):
    """Boolean mask of candidate points whose serving cell is ``j``.

    Compares against the other BSs nearest-first and drops candidates as soon as
    they are beaten, which is much cheaper than a full argmin. With ``radius``
    (a bound on the cell's extent) points beyond it are dropped up front and
    BSs farther than twice it are skipped, since they cannot win any point.
    """
    bs = deployment.bs_positions
    side = deployment.side

    def sq_dist(p, pts):
        d = np.abs(pts - p)
        d = np.minimum(d, side - d)
        return d[:, 0] ** 2 + d[:, 1] ** 2

    own = sq_dist(bs[j], cand)
    alive = np.arange(len(cand))
    spacing = torus_distance(bs[j], bs, side)
    order = np.argsort(spacing, kind="stable")
    if radius is not None:
        alive = alive[own <= radius**2]
        order = order[spacing[order] <= 2 * radius]
    for k in order:
        if k == j or alive.size == 0:
            continue
        other = sq_dist(bs[k], cand[alive])
        # ties go to the lower index
        keep = own[alive] < other if k < j else own[alive] <= other
        alive = alive[keep]
    mask = np.zeros(len(cand), dtype=bool)
    mask[alive] = True
    return mask


def sample_user_position(deployment: Deployment, j, rng, size=None):
    """Uniform position(s) inside cell ``j``.

    Candidates are drawn uniformly from a square around BS ``j`` that contains
    its whole cell, then filtered by nearest-BS membership.

    With ``size=None`` a single ``(2,)`` point is returned, otherwise an array of
    shape ``(size, 2)``.
    """
    if not 0 <= j < deployment.L:
        raise InvalidParameterError(f"cell index {j} out of range")
    n = 1 if size is None else int(size)
    out = np.empty((n, 2))
    filled = 0
    side = deployment.side
    half = deployment.cell_radii[j]
    local = 2 * half < side
    box = (2 * half) ** 2 if local else side**2
    # cell areas average side^2 / L, which sets the expected acceptance rate
    batch = max(64, int(1.5 * n * box * deployment.L / side**2))
    while filled < n:
        if local:
            cand = (deployment.bs_positions[j] + rng.uniform(-half, half, size=(batch, 2))) % side
        else:
            cand = rng.uniform(0.0, side, size=(batch, 2))
        keep = cand[_in_cell(deployment, j, cand, half if local else None)]
        take = min(len(keep), n - filled)
        out[filled:filled + take] = keep[:take]
        filled += take
    return out[0] if size is None else out


def attenuation(deployment: Deployment, j, z):
    """Channel variance ``max(dist, d_min) ** -gamma`` from point(s) ``z`` to BS ``j``."""
    dist = torus_distance(deployment.bs_positions[j], z, deployment.side)
    return np.maximum(dist, deployment.min_distance) ** (-deployment.pathloss_exponent)


def attenuation_matrix(deployment: Deployment, z) -> np.ndarray:
    """Attenuation from every BS to every point: shape ``(L, n)`` for ``z`` of shape ``(n, 2)``."""
    d = distances(deployment, z)
    return np.maximum(d, deployment.min_distance) ** (-deployment.pathloss_exponent)
