"""Audit mini-batch selection: epsilon exploration plus active/inactive strata."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParams


@dataclass(frozen=True)
class SamplerParams:
    """Batch size M, active-stratum share, and exploration rate.

    epsilon = 0 is rejected: without exploration, initially inactive units
    are never audited and the coverage guarantee is void.
    """

    batch_size: int
    active_fraction: float = 0.3
    epsilon: float = 0.3

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise InvalidParams("batch_size must be at least 1")
        if not 0.0 <= self.active_fraction <= 1.0:
            raise InvalidParams("active_fraction must lie in [0, 1]")
        if not 0.0 < self.epsilon <= 1.0:
            raise InvalidParams("epsilon must lie in (0, 1]")


def coverage_lower_bound(n_units: int, batch_size: int, epsilon: float) -> float:
    """Guaranteed minimum per-cycle audit probability of any unit: eps*M/N."""
    if not (n_units >= batch_size >= 1):
        raise InvalidParams("need n_units >= batch_size >= 1")
    if not 0.0 < epsilon <= 1.0:
        raise InvalidParams("epsilon must lie in (0, 1]")
    return epsilon * batch_size / n_units


def least_probed_quartile(probe_counts: np.ndarray) -> np.ndarray:
    """Ids of the least-probed quarter of units, ties broken by id."""
    probe_counts = np.asarray(probe_counts)
    n = probe_counts.size
    q = max(1, -(-n // 4))
    order = np.lexsort((np.arange(n), probe_counts))
    return order[:q]


def stratified_fill(
    k: int,
    active_fraction: float,
    active_pool: list[int],
    inactive_pool: list[int],
    rng: np.random.Generator,
) -> list[int]:
    """Draw k ids without replacement: round(active_fraction*k) from the active
    pool and the rest from the inactive pool, spilling over when a stratum is
    short."""
    if k <= 0:
        return []
    n_active = min(len(active_pool), int(round(active_fraction * k)))
    n_inactive = min(len(inactive_pool), k - n_active)
    n_active = min(len(active_pool), k - n_inactive)
    picks: list[int] = []
    if n_active:
        picks.extend(int(i) for i in rng.choice(active_pool, size=n_active, replace=False))
    if n_inactive:
        picks.extend(int(i) for i in rng.choice(inactive_pool, size=n_inactive, replace=False))
    return picks


def sample_audit_batch(
    gates: np.ndarray,
    probe_counts: np.ndarray,
    params: SamplerParams,
    rng: np.random.Generator,
) -> tuple[list[int], list[int]]:
    """Select the audit batch for one cycle.

    Each of the M slots explores with probability epsilon, drawing uniformly
    from the least-probed quartile; remaining slots are split between active
    and inactive strata. Returns (sorted batch ids, sorted exploration ids);
    the batch has no duplicates and size min(M, N).
    """
    gates = np.asarray(gates, dtype=bool)
    probe_counts = np.asarray(probe_counts)
    n = gates.size
    if n < 1:
        raise InvalidParams("need at least one unit")
    if probe_counts.size != n:
        raise InvalidParams("gates and probe_counts must have equal length")

    target = min(params.batch_size, n)
    chosen: list[int] = []
    chosen_set: set[int] = set()
    exploration: list[int] = []
    quartile = [int(i) for i in least_probed_quartile(probe_counts)]

    for _ in range(params.batch_size):
        if len(chosen) >= target:
            break
        if rng.random() < params.epsilon:
            pool = [u for u in quartile if u not in chosen_set]
            if pool:
                pick = pool[int(rng.integers(len(pool)))]
                chosen.append(pick)
                chosen_set.add(pick)
                exploration.append(pick)

    k = target - len(chosen)
    if k > 0:
        active_pool = [i for i in range(n) if gates[i] and i not in chosen_set]
        inactive_pool = [i for i in range(n) if not gates[i] and i not in chosen_set]
        chosen.extend(stratified_fill(k, params.active_fraction, active_pool, inactive_pool, rng))

    return sorted(chosen), sorted(exploration)
