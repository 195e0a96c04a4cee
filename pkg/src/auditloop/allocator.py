"""Budgeted unit selection.

Greedy density knapsack with a replacement-hysteresis guard for the online
loop, a guard-free final re-solve (density greedy, best singleton, then
best-improvement single swaps), and an exhaustive oracle for tests.

All budget checks sum costs over the gate mask in ascending-id order so that
every module agrees bit-for-bit on feasibility.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParams, LengthMismatch, NonPositiveCost, TooLarge


@dataclass(frozen=True)
class AllocatorParams:
    """Budget as a backbone-parameter fraction and the replacement margin."""

    p_max: float = 0.002
    mu_eff: float = 0.02

    def __post_init__(self) -> None:
        if not 0.0 < self.p_max <= 1.0:
            raise InvalidParams("p_max must lie in (0, 1]")
        if self.mu_eff < 0.0:
            raise InvalidParams("mu_eff must be non-negative")


@dataclass(frozen=True, eq=False)
class AllocationProposal:
    gates: np.ndarray
    total_cost: float
    total_score: float


def gate_cost(gates: np.ndarray, costs: np.ndarray) -> float:
    """Canonical cost of a gate vector (ascending-id summation order)."""
    return float(costs[np.asarray(gates, dtype=bool)].sum())


def _validate(scores, costs, eligible) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=float)
    costs = np.asarray(costs, dtype=float)
    eligible = np.asarray(eligible, dtype=bool)
    if not (scores.shape == costs.shape == eligible.shape) or scores.ndim != 1:
        raise LengthMismatch("scores, costs and eligible must be 1-D vectors of equal length")
    if np.any(costs <= 0.0):
        raise NonPositiveCost("all unit costs must be positive")
    if not np.all(np.isfinite(scores[eligible])):
        raise InvalidParams("eligible units must have finite scores")
    return scores, costs, eligible


def _density_order(ids: np.ndarray, scores: np.ndarray, costs: np.ndarray) -> np.ndarray:
    """Descending score density; ties to lower cost, then lower id."""
    if ids.size == 0:
        return ids
    dens = scores[ids] / costs[ids]
    return ids[np.lexsort((ids, costs[ids], -dens))]


def _proposal(gates: np.ndarray, scores: np.ndarray, costs: np.ndarray) -> AllocationProposal:
    return AllocationProposal(
        gates=gates,
        total_cost=gate_cost(gates, costs),
        total_score=float(scores[gates].sum()),
    )


def greedy_allocate(scores, costs, eligible, p_max: float) -> AllocationProposal:
    """Activate eligible units in descending density while they fit the budget.

    Units with non-positive scores are never activated, even under slack:
    measured utilities can be negative and a harmful unit never helps the
    objective.
    """
    scores, costs, eligible = _validate(scores, costs, eligible)
    n = scores.size
    gates = np.zeros(n, dtype=bool)
    candidates = np.flatnonzero(eligible & (scores > 0.0))
    for i in _density_order(candidates, scores, costs):
        gates[i] = True
        if gate_cost(gates, costs) > p_max:
            gates[i] = False
    return _proposal(gates, scores, costs)


def apply_hysteresis(
    current,
    proposal: AllocationProposal,
    scores,
    costs,
    p_max: float,
    mu_eff: float,
) -> np.ndarray:
    """Filter a fresh proposal against the currently committed gates.

    Activations that fit the budget without evicting anyone pass through, as
    do deactivations of units with non-positive scores. An activation that
    needs budget freed by dropping active units is a replacement: it is kept
    only when the newcomer's score beats the sum of the displaced scores by
    more than mu_eff, otherwise the incumbents are retained and the newcomer
    discarded.
    """
    scores, costs, _ = _validate(scores, costs, np.ones_like(np.asarray(costs), dtype=bool))
    current = np.asarray(current, dtype=bool)
    prop = np.asarray(proposal.gates, dtype=bool)
    if current.shape != prop.shape or current.shape != scores.shape:
        raise LengthMismatch("gate vectors must match the score vector length")

    gates = current.copy()
    drops = np.flatnonzero(current & ~prop)
    adds = np.flatnonzero(prop & ~current)

    # Worthless or harmful drops deactivate unconditionally.
    evictable: list[int] = []
    for j in drops:
        if scores[j] <= 0.0:
            gates[j] = False
        else:
            evictable.append(int(j))
    evictable.sort(key=lambda j: (scores[j], j))

    def fits(mask: np.ndarray) -> bool:
        return gate_cost(mask, costs) <= p_max

    for k in _density_order(adds, scores, costs):
        trial = gates.copy()
        trial[k] = True
        if fits(trial):
            gates = trial
            continue
        needed: list[int] = []
        for j in evictable:
            needed.append(j)
            trial[j] = False
            if fits(trial):
                break
        if not fits(trial):
            continue  # infeasible even after every allowed eviction
        if scores[k] - sum(scores[j] for j in needed) > mu_eff:
            gates = trial
            for j in needed:
                evictable.remove(j)
    return gates


def final_resolve(scores, costs, eligible, p_max: float) -> AllocationProposal:
    """Guard-free re-solve: density greedy vs. best feasible singleton, then
    best-improvement single-swap passes until no swap raises the score."""
    scores, costs, eligible = _validate(scores, costs, eligible)
    best = greedy_allocate(scores, costs, eligible, p_max)

    singles = np.flatnonzero(eligible & (scores > 0.0) & (costs <= p_max))
    if singles.size:
        order = np.lexsort((singles, costs[singles], -scores[singles]))
        s = int(singles[order[0]])
        single_gates = np.zeros_like(best.gates)
        single_gates[s] = True
        single = _proposal(single_gates, scores, costs)
        if single.total_score > best.total_score:
            best = single

    gates = best.gates.copy()
    while True:
        selected = np.flatnonzero(gates)
        outside = np.flatnonzero(eligible & ~gates)
        best_gain = 0.0
        best_pair: tuple[int, int] | None = None
        for s in selected:
            for u in outside:
                gain = scores[u] - scores[s]
                if gain <= best_gain:
                    continue
                trial = gates.copy()
                trial[s] = False
                trial[u] = True
                if gate_cost(trial, costs) <= p_max:
                    best_gain = gain
                    best_pair = (int(s), int(u))
        if best_pair is None:
            break
        gates[best_pair[0]] = False
        gates[best_pair[1]] = True
    return _proposal(gates, scores, costs)


def brute_force_optimum(scores, costs, eligible, p_max: float) -> AllocationProposal:
    """Exhaustive maximum of the selected-score sum under the budget.

    Ties break to lower total cost, then to the lexicographically smallest
    gate tuple. Capped at 20 eligible units.
    """
    scores, costs, eligible = _validate(scores, costs, eligible)
    idx = np.flatnonzero(eligible)
    if idx.size > 20:
        raise TooLarge(f"{idx.size} eligible units exceed the 2^20 enumeration cap")

    m = idx.size
    n_sub = 1 << m
    sub_scores = np.zeros(n_sub)
    sub_costs = np.zeros(n_sub)
    for b in range(m):
        step = 1 << (b + 1)
        half = 1 << b
        sub_scores.reshape(-1, step)[:, half:] += scores[idx[b]]
        sub_costs.reshape(-1, step)[:, half:] += costs[idx[b]]

    feasible = np.flatnonzero(sub_costs <= p_max)  # always non-empty: the empty set
    best_score = sub_scores[feasible].max()
    cand = feasible[sub_scores[feasible] >= best_score - 0.0]
    cand = cand[sub_scores[cand] == sub_scores[cand].max()]
    cand = cand[sub_costs[cand] == sub_costs[cand].min()]

    def to_gates(mask_int: int) -> np.ndarray:
        g = np.zeros(scores.size, dtype=bool)
        for b in range(m):
            if mask_int >> b & 1:
                g[idx[b]] = True
        return g

    winner = min((tuple(to_gates(int(c))) for c in cand))
    gates = np.array(winner, dtype=bool)
    return _proposal(gates, scores, costs)
