"""Channel-level Monte Carlo of the ergodic SE lower bound.

The closed-form utilities come from pushing the user-position average inside
the SINR. Here the SINR of every user is instead built from sample averages
over pilot assignments, Rayleigh channels and noise at fixed positions, and
``log2(1 + SINR)`` is then averaged over position draws. The closed form must
not exceed this estimate (up to sampling error) and should sit close to it.

Two estimators are provided:

* ``method="explicit"`` draws every channel vector and the pilot-phase noise,
  forms the received pilot signals and the MMSE estimates from them, and
  evaluates ``|g^H h|^2`` for every user in the network.
* ``method="conditional"`` (default) draws pilot assignments and, per user,
  the exact distribution of the estimate statistics the SINR terms depend on
  (a Gamma-distributed squared norm for MRC, the Gamma-distributed inverse
  diagonal of the Gram inverse for ZFC). Estimation errors, channels of users
  not sharing a pilot, and zero-mean cross terms are independent of these and
  integrated exactly given the draw. Same expectations, far less work.

Powers are normalized so the noise variance is 1 and ``rho = snr``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InvalidParameterError, RankDeficientError, ZFInfeasibleError
from .game import CoalitionStructure
from .geometry import Deployment, attenuation_matrix, sample_user_position
from .propagation import estimate_mu
from .utility import CombiningScheme, SystemParams, scheduled_users, structure_utilities

DEFAULT_POSITION_DRAWS = 200
DEFAULT_CHANNEL_DRAWS = 500
DEFAULT_TOLERANCE = 0.05
# the closed form is compared per cell at sub-percent precision, so the
# attenuation moments need far more samples than the formation runs use
VALIDATION_MU_SAMPLES = 200_000


def complex_normal(rng, shape, variance=1.0):
    """Circularly symmetric complex Gaussian samples, variance split over re/im."""
    scale = np.sqrt(np.asarray(variance) / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@dataclass(frozen=True, eq=False)
class UserLayout:
    """Positions of the scheduled users and their attenuation to every BS."""

    positions: list  # per cell, (K_l, 2)
    cell_of: np.ndarray  # (U,)
    offsets: np.ndarray  # (L + 1,) slice bounds of each cell's users
    d: np.ndarray  # (L, U) attenuation from BS j to user u

    @property
    def ratio(self) -> np.ndarray:
        """``d_j(z_u) / d_serving(z_u)``, shape (L, U)."""
        return self.d / self.serving

    @property
    def serving(self) -> np.ndarray:
        return self.d[self.cell_of, np.arange(self.cell_of.size)]

    def users(self, l) -> slice:
        return slice(int(self.offsets[l]), int(self.offsets[l + 1]))


def sample_layout(deployment: Deployment, K, rng, positions=None) -> UserLayout:
    if positions is None:
        positions = [sample_user_position(deployment, l, rng, size=int(k)) for l, k in enumerate(K)]
    positions = [np.asarray(p, dtype=float).reshape(-1, 2) for p in positions]
    counts = np.array([len(p) for p in positions])
    offsets = np.concatenate([[0], np.cumsum(counts)])
    cell_of = np.repeat(np.arange(len(positions)), counts)
    d = attenuation_matrix(deployment, np.concatenate(positions))
    return UserLayout(positions, cell_of, offsets, d)


def sample_pilot_assignment(K_members, pool_size, rng):
    """Each cell independently takes a uniform ordered ``K_l``-subset of the pool."""
    out = []
    for k in K_members:
        if k > pool_size or k < 0:
            raise InvalidParameterError(f"cannot assign {k} distinct pilots from a pool of {pool_size}")
        out.append(rng.permutation(pool_size)[:k])
    return out


def _batched_assignment(k, pool, n, rng):
    """``n`` independent ordered ``k``-subsets of ``range(pool)``: shape (n, k)."""
    return np.argsort(rng.random((n, pool)), axis=1)[:, :k]


@dataclass(frozen=True, eq=False)
class Realization:
    """One joint draw of pilots, channels and pilot-phase noise at fixed positions.

    ``channels[j]`` is ``(M, U)``: column ``u`` is the channel from user ``u`` to
    BS ``j``. ``pilot_noise[j]`` is ``(M, pool_j)``, one effective noise vector
    per pilot of BS ``j``'s coalition pool. Data-phase noise only enters the
    SINR through its variance, so it is not sampled.
    """

    layout: UserLayout
    structure: CoalitionStructure
    pilot_ids: list  # per cell, (K_l,)
    pools: np.ndarray  # per cell pool size
    channels: np.ndarray  # (L, M, U)
    pilot_noise: list


def sample_realization(deployment, C, params: SystemParams, rng, layout=None) -> Realization:
    K = scheduled_users(C, params)
    layout = layout or sample_layout(deployment, K, rng)
    sizes = C.sizes()
    pools = sizes * params.B_cell
    pilot_ids = [sample_pilot_assignment([K[l]], pools[l], rng)[0] for l in range(C.L)]
    U = layout.cell_of.size
    channels = complex_normal(rng, (C.L, params.M, U), layout.d[:, None, :])
    noise = [complex_normal(rng, (params.M, int(pools[j]))) for j in range(C.L)]
    return Realization(layout, C, pilot_ids, pools, channels, noise)


def _colliders(real: Realization, j, k):
    """Users in other cells of ``j``'s coalition on the same pilot as user ``k`` of cell ``j``."""
    p = real.pilot_ids[j][k]
    lab = real.structure.assignment[j]
    out = []
    for l, other in enumerate(real.structure.assignment):
        if other != lab or l == j:
            continue
        hit = np.flatnonzero(real.pilot_ids[l] == p)
        out.extend(real.layout.offsets[l] + hit)
    return np.asarray(out, dtype=int)


def mmse_estimate(j, k, real: Realization, params: SystemParams):
    """MMSE estimate of the channel of user ``k`` in cell ``j`` at BS ``j`` and its variance."""
    rho, B = params.snr, params.B
    lay = real.layout
    u = lay.offsets[j] + k
    col = _colliders(real, j, k)
    users = np.concatenate([[u], col])
    amp = np.sqrt(rho * B / lay.serving[users])
    y = real.channels[j][:, users] @ amp + real.pilot_noise[j][:, real.pilot_ids[j][k]]
    denom = rho * B * (1.0 + lay.ratio[j, col].sum()) + 1.0
    d_own = lay.d[j, u]
    return np.sqrt(rho * d_own * B) / denom * y, rho * d_own * B / denom


def cross_estimate(j, l, m, k, real: Realization, h_hat_jjk):
    """Estimate of user ``m`` of cell ``l``'s channel at BS ``j`` from a pilot it shares with ``(j, k)``."""
    if real.pilot_ids[l][m] != real.pilot_ids[j][k] or \
            real.structure.assignment[l] != real.structure.assignment[j]:
        raise InvalidParameterError("the two users do not share a pilot")
    lay = real.layout
    u_lm = lay.offsets[l] + m
    u_jk = lay.offsets[j] + k
    scale = lay.d[j, u_lm] / np.sqrt(lay.d[j, u_jk] * lay.d[l, u_lm])
    return scale * h_hat_jjk


def combiners(j, estimates, deltas, scheme, M=None):
    """Combining vectors (columns) for the users of one cell.

    MRC scales each estimate by ``1 / (M delta_k)``; ZFC uses the pseudo-inverse
    ``H (H^H H)^-1`` via a Cholesky solve.
    """
    scheme = CombiningScheme.parse(scheme)
    H = np.asarray(estimates)
    M = H.shape[0] if M is None else M
    if scheme is CombiningScheme.MRC:
        return H / (M * np.asarray(deltas))[None, :]
    if H.shape[1] >= H.shape[0]:
        raise RankDeficientError(f"cell {j}: ZF needs more antennas than users")
    gram = H.conj().T @ H
    try:
        factor = scipy.linalg.cho_factor(gram)
    except np.linalg.LinAlgError as exc:
        raise RankDeficientError(f"cell {j}: estimate Gram matrix is not positive definite") from exc
    G = H @ scipy.linalg.cho_solve(factor, np.eye(H.shape[1]))
    if not np.all(np.isfinite(G)):
        raise RankDeficientError(f"cell {j}: non-finite ZF combiner")
    return G


@dataclass(frozen=True)
class MCResult:
    se: np.ndarray  # per-cell mean SE, bit/symbol
    std_err: np.ndarray
    samples: np.ndarray  # (n_position_draws, L) per-draw cell SE

    @property
    def total(self) -> float:
        return float(self.se.sum())


def _sinr(signal, interference, noise, gain):
    """SINR from the three averaged expectations; ``gain`` is rho / d_j(z_jk)."""
    s = gain * np.abs(signal) ** 2
    return s / (interference - s + noise)


def _position_draw_explicit(deployment, C, params, scheme, layout, n_draws, rng):
    K = scheduled_users(C, params)
    rho = params.snr
    L = C.L
    sig = [np.zeros(K[j], complex) for j in range(L)]
    inter = [np.zeros(K[j]) for j in range(L)]
    nrm = [np.zeros(K[j]) for j in range(L)]
    tx_power = rho / layout.serving  # per user
    for _ in range(n_draws):
        real = sample_realization(deployment, C, params, rng, layout=layout)
        for j in range(L):
            if K[j] == 0:
                continue
            est = [mmse_estimate(j, k, real, params) for k in range(K[j])]
            H = np.stack([e[0] for e in est], axis=1)
            delta = np.array([e[1] for e in est])
            G = combiners(j, H, delta, scheme, params.M)
            proj = G.conj().T @ real.channels[j]  # (K_j, U)
            own = layout.offsets[j] + np.arange(K[j])
            sig[j] += proj[np.arange(K[j]), own]
            inter[j] += (np.abs(proj) ** 2) @ tx_power
            nrm[j] += np.sum(np.abs(G) ** 2, axis=0)
    out = np.zeros(L)
    for j in range(L):
        gain = rho / layout.d[j, layout.users(j)]
        sinr = _sinr(sig[j] / n_draws, inter[j] / n_draws, nrm[j] / n_draws, gain)
        out[j] = params.prelog * np.sum(np.log2(1.0 + sinr))
    return out


def _position_draw_conditional(C, params, scheme, layout, n_draws, rng, batch):
    K = scheduled_users(C, params)
    rho, B, M = params.snr, params.B, params.M
    L = C.L
    labels = np.asarray(C.assignment)
    pools = C.sizes() * params.B_cell
    ratio = layout.ratio
    load = ratio.sum(axis=1)  # sum of d_j/d_serving over every user, per BS j
    out_sig = [np.zeros(K[j]) for j in range(L)]
    out_int = [np.zeros(K[j]) for j in range(L)]
    out_nrm = [np.zeros(K[j]) for j in range(L)]
    done = 0
    while done < n_draws:
        n = min(batch, n_draws - done)
        done += n
        # pilot assignment per cell and its inverse (pilot -> global user id or -1)
        pilots, owner = [], []
        for l in range(L):
            p = _batched_assignment(int(K[l]), int(pools[l]), n, rng)
            inv = np.full((n, int(pools[l])), -1)
            np.put_along_axis(inv, p, layout.offsets[l] + np.arange(K[l])[None, :], axis=1)
            pilots.append(p)
            owner.append(inv)
        for j in range(L):
            kj = int(K[j])
            own_users = layout.users(j)
            d_own = layout.d[j, own_users]
            v = np.zeros((n, kj))
            w = np.zeros((n, kj))
            for l in np.flatnonzero(labels == labels[j]):
                if l == j:
                    continue
                hit = np.take_along_axis(owner[l], pilots[j], axis=1)
                r = np.where(hit >= 0, ratio[j, np.maximum(hit, 0)], 0.0)
                v += r
                w += r**2
            delta = rho * d_own * B / (rho * B * (1.0 + v) + 1.0)
            c = (1.0 + w) / d_own[None, :]
            if scheme is CombiningScheme.MRC:
                # |h_hat_k|^2 / delta_k; the cross products with other estimates
                # are zero-mean given this norm and are integrated out
                x = rng.gamma(M, size=(n, kj))
                a = x / M
                nk = x / (M**2 * delta)
                corr = c * (x**2 / M**2 - delta * nk)
            else:
                # 1 / [(H^H H)^-1]_kk is delta_k times a Gamma(M - K + 1) variate
                nk = 1.0 / (delta * rng.gamma(M - kj + 1, size=(n, kj)))
                a = np.ones((n, kj))
                corr = c - nk * np.sum(c * delta, axis=1)[:, None]
            T = rho * (nk * load[j] + corr)
            out_sig[j] += a.sum(axis=0)
            out_int[j] += T.sum(axis=0)
            out_nrm[j] += nk.sum(axis=0)
    res = np.zeros(L)
    for j in range(L):
        gain = rho / layout.d[j, layout.users(j)]
        sinr = _sinr(out_sig[j] / n_draws, out_int[j] / n_draws, out_nrm[j] / n_draws, gain)
        res[j] = params.prelog * np.sum(np.log2(1.0 + sinr))
    return res


def monte_carlo_se(C, params: SystemParams, deployment: Deployment, scheme,
                   n_position_draws=DEFAULT_POSITION_DRAWS, n_channel_draws=DEFAULT_CHANNEL_DRAWS,
                   rng=None, method="conditional", batch=500) -> MCResult:
    """Per-cell SE averaged over user positions, with standard errors across position draws.

    Position draw ``i`` uses its own generator derived from ``rng`` and ``i``.
    """
    scheme = CombiningScheme.parse(scheme)
    C = C if isinstance(C, CoalitionStructure) else CoalitionStructure(tuple(C))
    if C.L != params.L or deployment.L != params.L:
        raise InvalidParameterError("structure, params and deployment disagree on L")
    if n_position_draws < 1 or n_channel_draws < 1:
        raise InvalidParameterError("draw counts must be positive")
    K = scheduled_users(C, params)
    if scheme is CombiningScheme.ZFC and np.any(K >= params.M):
        raise ZFInfeasibleError(f"ZF needs M > K_j, got M={params.M}, max K={int(K.max())}")
    base = int(np.random.default_rng(rng).integers(2**63))
    samples = np.empty((n_position_draws, C.L))
    for i in range(n_position_draws):
        gen = np.random.default_rng([base, i])
        layout = sample_layout(deployment, K, gen)
        if method == "explicit":
            samples[i] = _position_draw_explicit(deployment, C, params, scheme, layout,
                                                 n_channel_draws, gen)
        elif method == "conditional":
            samples[i] = _position_draw_conditional(C, params, scheme, layout, n_channel_draws,
                                                    gen, batch)
        else:
            raise InvalidParameterError(f"unknown method {method!r}")
    se = samples.mean(axis=0)
    err = samples.std(axis=0, ddof=1) / np.sqrt(n_position_draws) if n_position_draws > 1 \
        else np.full(C.L, np.inf)
    return MCResult(se, err, samples)


VALIDATION_HEADER = ["cell", "scheme", "closed_form", "mc", "std_err", "gap"]


@dataclass(frozen=True)
class ValidationReport:
    scheme: str
    closed_form: np.ndarray
    mc: np.ndarray
    std_err: np.ndarray
    tolerance: float

    @property
    def gap(self) -> np.ndarray:
        """Relative shortfall of the closed form, ``(mc - closed) / mc``."""
        return (self.mc - self.closed_form) / self.mc

    @property
    def lower_bound_ok(self) -> np.ndarray:
        return self.closed_form <= self.mc + 2.0 * self.std_err

    @property
    def max_gap(self) -> float:
        return float(np.max(np.abs(self.gap)))

    @property
    def passed(self) -> bool:
        return bool(np.all(self.lower_bound_ok)) and self.max_gap <= self.tolerance

    def rows(self):
        for j in range(self.closed_form.size):
            yield [j, self.scheme, f"{self.closed_form[j]:.10g}", f"{self.mc[j]:.10g}",
                   f"{self.std_err[j]:.10g}", f"{self.gap[j]:.10g}"]


def compare(closed_form, mc: MCResult, scheme, tolerance=DEFAULT_TOLERANCE) -> ValidationReport:
    return ValidationReport(CombiningScheme.parse(scheme).value, np.asarray(closed_form, float),
                            mc.se, mc.std_err, float(tolerance))


def validate(C, params: SystemParams, deployment: Deployment, scheme, tolerance=DEFAULT_TOLERANCE,
             n_position_draws=DEFAULT_POSITION_DRAWS, n_channel_draws=DEFAULT_CHANNEL_DRAWS,
             mu_samples=VALIDATION_MU_SAMPLES, rng=None, stats=None, method="conditional") -> ValidationReport:
    """Closed-form utilities against the Monte Carlo estimate on one deployment."""
    rng = np.random.default_rng(rng)
    mu_rng, mc_rng = rng.spawn(2)
    stats = stats if stats is not None else estimate_mu(deployment, mu_samples, mu_rng)
    closed, _ = structure_utilities(C, stats, params, scheme)
    mc = monte_carlo_se(C, params, deployment, scheme, n_position_draws, n_channel_draws, mc_rng,
                        method=method)
    return compare(closed, mc, scheme, tolerance)
