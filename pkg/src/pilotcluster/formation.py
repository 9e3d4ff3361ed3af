"""Distributed coalition formation under per-BS message budgets.

Every sweep visits the BSs in a fresh random order. A visited BS lists the
coalitions it would strictly profit from joining, tries them in random order,
and for each one sends a join request. Members that would not lose reply with
an accept; if everybody accepts, the BS moves and broadcasts the new structure.

Packet accounting: request and broadcast cost the deviator one packet each, an
accept costs the member one packet, and a rejection costs nothing. A packet is
only sent if it keeps the sender within its budget, so ``eta[j] <= q[j]``
holds at all times.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError
from .game import (
    EPS_REL,
    CoalitionStructure,
    GameState,
    UtilityCache,
    _evaluate,
    deviation_targets,
)
from .utility import CombiningScheme


@dataclass(frozen=True)
class Deviation:
    t: int
    j: int
    source: frozenset
    target: frozenset
    before: CoalitionStructure
    after: CoalitionStructure
    utilities_before: tuple
    utilities_after: tuple


@dataclass(frozen=True)
class Attempt:
    """One visit of BS ``j``: how many targets it examined and found acceptable."""

    j: int
    structure: CoalitionStructure
    n_candidates: int
    n_acceptable: int
    requests: int


@dataclass
class FormationResult:
    final_structure: CoalitionStructure
    messages: list
    deviations: list
    rounds: int
    converged: bool
    attempts: list = field(default_factory=list)
    budgets: list = field(default_factory=list)

    @property
    def candidate_evaluations(self) -> list:
        return [a.n_candidates for a in self.attempts]

    @property
    def join_requests(self) -> int:
        return sum(a.requests for a in self.attempts)

    @property
    def budget_exhausted(self) -> bool:
        return any(m + 1 > q for m, q in zip(self.messages, self.budgets))


def acceptable_coalitions(j, C, state, stats, params, scheme, eps_rel=EPS_REL, utilities=None):
    """Targets under which ``j``'s restricted utility strictly improves.

    Returns ``(targets, n_examined)``; the list keeps ``deviation_targets`` order.
    """
    utilities = utilities or UtilityCache(stats, params, scheme)
    found = []
    targets = deviation_targets(C, j)
    for S in targets:
        improves, _, _ = _evaluate(C, j, S, state, utilities, eps_rel)
        if improves:
            found.append(S)
    return found, len(targets)


def run_formation(initial, budgets, params, stats, scheme, rng=None, max_rounds=None,
                  eps_rel=EPS_REL) -> FormationResult:
    """Run sweeps until one passes without a deviation or ``max_rounds`` is hit.

    ``budgets`` is a scalar or per-BS sequence (``math.inf`` for unbounded).
    ``max_rounds=None`` means ``100 * L``.
    """
    scheme = CombiningScheme.parse(scheme)
    C = initial if isinstance(initial, CoalitionStructure) else CoalitionStructure(tuple(initial))
    L = C.L
    if L != params.L or stats.L != L:
        raise InvalidParameterError("structure, params and stats disagree on L")
    max_rounds = 100 * L if max_rounds is None else int(max_rounds)
    if max_rounds < 1:
        raise InvalidParameterError("max_rounds must be >= 1")
    rng = np.random.default_rng(rng)
    state = GameState.fresh(L, budgets)
    utilities = UtilityCache(stats, params, scheme)

    deviations, attempts = [], []
    t = 0
    rounds = 0
    converged = False
    while rounds < max_rounds:
        rounds += 1
        moved = False
        for j in rng.permutation(L):
            j = int(j)
            C_visit = C
            cands, n_examined = acceptable_coalitions(j, C, state, stats, params, scheme,
                                                      eps_rel, utilities)
            requests = 0
            for idx in rng.permutation(len(cands)):
                S = cands[int(idx)]
                if not state.can_send(j):
                    break
                state.send(j)
                requests += 1
                improves, _, C_new = _evaluate(C, j, S, state, utilities, eps_rel)
                u_old, u_new = utilities(C), utilities(C_new)
                all_accept = True
                for k in sorted(S):
                    if u_new[k] >= u_old[k] * (1.0 - eps_rel) and state.can_send(k):
                        state.send(k)
                    else:
                        all_accept = False
                # no budget left for the broadcast: the move cannot be announced
                if not (all_accept and improves and state.can_send(j)):
                    continue
                state.send(j)
                deviations.append(Deviation(t, j, C.coalition_of(j), frozenset(S), C, C_new,
                                            tuple(u_old), tuple(u_new)))
                t += 1
                C = C_new
                moved = True
                break
            attempts.append(Attempt(j, C_visit, n_examined, len(cands), requests))
        if not moved:
            converged = True
            break
    return FormationResult(C, list(state.eta), deviations, rounds, converged, attempts,
                           list(state.q))


def message_counts(result: FormationResult):
    """Per-BS packet counts and their total."""
    m = np.asarray(result.messages, dtype=int)
    return m, int(m.sum())


def replay_consistent(result: FormationResult, stats, params, scheme, eps_rel=EPS_REL) -> bool:
    """Check each traced deviation was admissible against its pre-state (infinite budgets)."""
    from .game import is_admissible

    L = result.final_structure.L
    state = GameState.fresh(L)
    return all(is_admissible(d.before, d.j, d.target, state, stats, params, scheme, eps_rel)
               for d in result.deviations)


TRACE_HEADER = ["t", "bs", "source", "target", "structure_before", "structure_after",
                "utilities_before", "utilities_after"]


def _block_text(S):
    return "{" + ",".join(map(str, sorted(S))) + "}" if S else "{}"


def trace_rows(result: FormationResult):
    for d in result.deviations:
        yield [d.t, d.j, _block_text(d.source), _block_text(d.target), str(d.before), str(d.after),
               ";".join(f"{x:.12g}" for x in d.utilities_before),
               ";".join(f"{x:.12g}" for x in d.utilities_after)]


def write_trace(result: FormationResult, fh=None) -> str | None:
    """Write the deviation trace as CSV to ``fh`` (or return it as a string)."""
    own = fh is None
    fh = io.StringIO() if own else fh
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    w.writerows(trace_rows(result))
    return fh.getvalue() if own else None

