"""Coalition structures and the budgeted partition-form pilot-sharing game.

A structure is stored as a canonical label sequence: cell ``j`` belongs to
coalition ``assignment[j]`` and labels are numbered by first occurrence, so two
assignments describing the same partition are equal.

Deviation targets are frozensets of cells; the empty frozenset ``EMPTY`` means
"leave and form a new singleton".
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidDeviationError, InvalidParameterError, ZFInfeasibleError
from .utility import utility_vector

EMPTY: frozenset = frozenset()
EPS_REL = 1e-9


def canonical_labels(labels) -> tuple:
    seen = {}
    return tuple(seen.setdefault(int(x), len(seen)) for x in labels)


@dataclass(frozen=True)
class CoalitionStructure:
    assignment: tuple

    def __post_init__(self):
        object.__setattr__(self, "assignment", canonical_labels(self.assignment))

    @classmethod
    def from_blocks(cls, blocks, L=None) -> "CoalitionStructure":
        blocks = [sorted(int(c) for c in b) for b in blocks if len(b)]
        n = sum(len(b) for b in blocks)
        L = n if L is None else L
        labels = [-1] * L
        for i, b in enumerate(blocks):
            for c in b:
                if not 0 <= c < L or labels[c] != -1:
                    raise InvalidParameterError(f"blocks do not partition range({L})")
                labels[c] = i
        if n != L or -1 in labels:
            raise InvalidParameterError(f"blocks do not partition range({L})")
        return cls(tuple(labels))

    @classmethod
    def singletons(cls, L) -> "CoalitionStructure":
        return cls(tuple(range(L)))

    @classmethod
    def grand(cls, L) -> "CoalitionStructure":
        return cls((0,) * L)

    @classmethod
    def parse(cls, text: str) -> "CoalitionStructure":
        """Inverse of ``str()``: ``"{0,2}{1}{3}"``."""
        blocks = re.findall(r"\{([^}]*)\}", text)
        if not blocks or re.sub(r"\{[^}]*\}", "", text).strip():
            raise InvalidParameterError(f"cannot parse structure {text!r}")
        return cls.from_blocks([[int(x) for x in b.split(",") if x.strip()] for b in blocks])

    @property
    def L(self) -> int:
        return len(self.assignment)

    @property
    def n_coalitions(self) -> int:
        return max(self.assignment) + 1 if self.assignment else 0

    def __len__(self):
        return self.n_coalitions

    def blocks(self) -> list:
        out = [[] for _ in range(self.n_coalitions)]
        for cell, lab in enumerate(self.assignment):
            out[lab].append(cell)
        return [frozenset(b) for b in out]

    def coalition_of(self, j) -> frozenset:
        lab = self.assignment[j]
        return frozenset(c for c, x in enumerate(self.assignment) if x == lab)

    def sizes(self) -> np.ndarray:
        """Coalition size seen by each cell."""
        a = np.asarray(self.assignment)
        return np.bincount(a)[a] if a.size else a

    def __str__(self):
        return "".join("{" + ",".join(map(str, sorted(b))) + "}"
                       for b in sorted(self.blocks(), key=min))


def coalition_of(C: CoalitionStructure, j) -> frozenset:
    return C.coalition_of(j)


def deviation_targets(C: CoalitionStructure, j) -> list:
    """Every feasible target for ``j``: other coalitions, then EMPTY if ``j`` is not alone."""
    own = C.assignment[j]
    targets = [b for lab, b in enumerate(C.blocks()) if lab != own]
    if C.sizes()[j] > 1:
        targets.append(EMPTY)
    return targets


def apply_deviation(C: CoalitionStructure, j, S) -> CoalitionStructure:
    """Move cell ``j`` into coalition ``S`` (or into a new singleton when ``S`` is EMPTY)."""
    S = frozenset(S)
    labels = list(C.assignment)
    if j in S:
        raise InvalidDeviationError(f"cell {j} is already in the target coalition")
    if not S:
        if C.sizes()[j] == 1:
            raise InvalidDeviationError(f"cell {j} is already a singleton")
        labels[j] = max(labels) + 1
        return CoalitionStructure(tuple(labels))
    target_labels = {labels[c] for c in S}
    if len(target_labels) != 1 or C.coalition_of(next(iter(S))) != S:
        raise InvalidDeviationError(f"{sorted(S)} is not a coalition of {C}")
    labels[j] = target_labels.pop()
    return CoalitionStructure(tuple(labels))


def deviation_bound(C: CoalitionStructure, j) -> int:
    """Upper bound on the targets ``j`` has to examine."""
    n = C.n_coalitions
    return n if C.sizes()[j] > 1 else n - 1


@dataclass
class GameState:
    """Packets sent so far (``eta``) and budgets (``q``, may be ``math.inf``)."""

    eta: list
    q: list

    @classmethod
    def fresh(cls, L, q=math.inf) -> "GameState":
        qs = list(q) if np.iterable(q) else [q] * L
        if len(qs) != L:
            raise InvalidParameterError("need one budget per cell")
        if any(x < 0 for x in qs):
            raise InvalidParameterError("budgets must be non-negative")
        return cls([0] * L, qs)

    def within_budget(self, j) -> bool:
        return self.eta[j] <= self.q[j]

    def can_send(self, j) -> bool:
        return self.eta[j] + 1 <= self.q[j]

    def send(self, j):
        self.eta[j] += 1


def _restricted(u, state, cells):
    return np.array([u[c] if state.within_budget(c) else 0.0 for c in cells])


def restricted_utility(j, C, state: GameState, stats, params, scheme) -> float:
    """Cell utility if ``j`` is within budget, else 0."""
    if not state.within_budget(j):
        return 0.0
    u = utility_vector(C, stats, params, scheme)
    if np.isnan(u[j]):
        raise ZFInfeasibleError(f"cell {j}: ZF needs M > K_j under {C}")
    return float(u[j])


def strictly_improves(new, old, eps_rel=EPS_REL) -> bool:
    return new > old * (1.0 + eps_rel)


def does_not_decrease(new, old, eps_rel=EPS_REL) -> bool:
    return new >= old * (1.0 - eps_rel)


@dataclass
class UtilityCache:
    """Memoizes per-structure utility vectors for one game instance."""

    stats: object
    params: object
    scheme: object
    store: dict = field(default_factory=dict)

    def __call__(self, C: CoalitionStructure) -> np.ndarray:
        u = self.store.get(C.assignment)
        if u is None:
            u = utility_vector(C, self.stats, self.params, self.scheme)
            self.store[C.assignment] = u
        return u


def _current(u, C, cells):
    if np.any(np.isnan(u[list(cells)])):
        bad = [c for c in cells if np.isnan(u[c])]
        raise ZFInfeasibleError(f"cells {bad}: ZF needs M > K_j under {C}")
    return u


def _evaluate(C, j, S, state, utilities, eps_rel):
    """(deviator improves, all members of S accept) for the deviation of j to S.

    A target that would leave the deviator or a member ZF-infeasible counts as
    not improving / not accepting.
    """
    members = sorted(S)
    u_old = _current(utilities(C), C, [j] + members)
    C_new = apply_deviation(C, j, S)
    u_new = utilities(C_new)
    cells = [j] + members
    if np.isnan(u_new[j]):
        return False, False, C_new
    old = _restricted(u_old, state, cells)
    new = _restricted(u_new, state, cells)
    improves = strictly_improves(new[0], old[0], eps_rel)
    # a NaN (infeasible) member utility fails the comparison, i.e. rejects
    accepts = all(does_not_decrease(n, o, eps_rel) for n, o in zip(new[1:], old[1:]))
    return improves, accepts, C_new


def is_admissible(C, j, S, state, stats, params, scheme, eps_rel=EPS_REL, utilities=None) -> bool:
    """Deviator strictly gains and no member of the target coalition loses."""
    utilities = utilities or UtilityCache(stats, params, scheme)
    improves, accepts, _ = _evaluate(C, j, frozenset(S), state, utilities, eps_rel)
    return improves and accepts


def is_individually_stable(C, state, stats, params, scheme, eps_rel=EPS_REL, utilities=None):
    """Return ``(True, None)`` or ``(False, (j, S))`` with the first admissible deviation."""
    utilities = utilities or UtilityCache(stats, params, scheme)
    for j in range(C.L):
        for S in deviation_targets(C, j):
            improves, accepts, _ = _evaluate(C, j, S, state, utilities, eps_rel)
            if improves and accepts:
                return False, (j, S)
    return True, None
