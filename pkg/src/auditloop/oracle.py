"""Evaluation environments standing in for validation-score feedback.

The synthetic oracle maps a gate vector to a scalar score in [0, 1] built
from per-unit saturating learning curves, concave redundancy groups, and
seeded Gaussian evaluation noise. A replay oracle serves scores recorded
from a previous run, and an exhaustive optimum supports regret accounting on
small spaces.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    InactiveUnit,
    InvalidParams,
    LengthMismatch,
    MalformedTrace,
    TooLarge,
    UnknownConfiguration,
)

_NOISE_TAG = 0x0E11
_DRIFT_TAG = 0xD21F

# Nested-power scale for SeedSequence streams; keeps noise, drift and caller
# streams statistically independent for any non-negative tag/index pair.


@dataclass(frozen=True)
class OracleSpec:
    """Ground-truth utility surface for a unit library.

    Each unit i approaches `mu_inf[i]` as its accumulated training steps grow
    (63% after `kappa[i]` steps); `warm_floor` is the untrained fraction of
    the asymptote already visible at zero steps. Units inside one redundancy
    group aggregate concavely with that group's gamma; gamma = 1 is purely
    additive. `drift` bounds an optional per-training-call random walk on the
    asymptotes, and `sigma_val` is the evaluation noise scale.
    """

    base_score: float
    mu_inf: tuple[float, ...]
    kappa: tuple[float, ...]
    drift: float = 0.0
    sigma_val: float = 0.0
    groups: tuple[tuple[int, ...], ...] = ()
    gammas: tuple[float, ...] = ()
    warm_floor: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "mu_inf", tuple(float(m) for m in self.mu_inf))
        object.__setattr__(self, "kappa", tuple(float(k) for k in self.kappa))
        object.__setattr__(self, "groups", tuple(tuple(int(i) for i in g) for g in self.groups))
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        n = len(self.mu_inf)
        if n < 1:
            raise InvalidParams("need at least one unit")
        if not 0.0 <= self.base_score <= 1.0:
            raise InvalidParams("base_score must lie in [0, 1]")
        if len(self.kappa) != n:
            raise InvalidParams("kappa must match mu_inf length")
        if any(k <= 0.0 for k in self.kappa):
            raise InvalidParams("learning rates kappa must be positive")
        if self.drift < 0.0 or self.sigma_val < 0.0:
            raise InvalidParams("drift and sigma_val must be non-negative")
        if not 0.0 <= self.warm_floor <= 1.0:
            raise InvalidParams("warm_floor must lie in [0, 1]")
        if len(self.gammas) != len(self.groups):
            raise InvalidParams("one gamma per group")
        if any(not 0.0 < g <= 1.0 for g in self.gammas):
            raise InvalidParams("group gammas must lie in (0, 1]")
        seen: set[int] = set()
        for g in self.groups:
            for i in g:
                if i in seen or not 0 <= i < n:
                    raise InvalidParams("groups must partition unit ids without repeats")
                seen.add(i)

    @property
    def n_units(self) -> int:
        return len(self.mu_inf)

    def full_groups(self) -> list[tuple[tuple[int, ...], float]]:
        """Listed groups plus implicit additive singletons for uncovered ids."""
        covered = {i for g in self.groups for i in g}
        out = [(g, gamma) for g, gamma in zip(self.groups, self.gammas)]
        out.extend(((i,), 1.0) for i in range(self.n_units) if i not in covered)
        return out

    @classmethod
    def from_json(cls, doc: dict | str | Path) -> "OracleSpec":
        if not isinstance(doc, dict):
            doc = json.loads(Path(doc).read_text())
        try:
            return cls(
                base_score=float(doc["base_score"]),
                mu_inf=tuple(doc["mu_inf"]),
                kappa=tuple(doc["kappa"]),
                drift=float(doc.get("drift", 0.0)),
                sigma_val=float(doc.get("sigma_val", 0.0)),
                groups=tuple(tuple(g) for g in doc.get("groups", ())),
                gammas=tuple(doc.get("gammas", ())),
                warm_floor=float(doc.get("warm_floor", 0.0)),
                seed=int(doc.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidParams(f"malformed oracle spec: {exc}") from exc

    def to_json(self) -> dict:
        return {
            "base_score": self.base_score,
            "mu_inf": list(self.mu_inf),
            "kappa": list(self.kappa),
            "drift": self.drift,
            "sigma_val": self.sigma_val,
            "groups": [list(g) for g in self.groups],
            "gammas": list(self.gammas),
            "warm_floor": self.warm_floor,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class TrainingState:
    """Accumulated training steps per unit plus the drift-walk offsets."""

    steps: np.ndarray
    drift_offsets: np.ndarray
    n_train_calls: int = 0

    @classmethod
    def fresh(cls, n_units: int) -> "TrainingState":
        return cls(
            steps=np.zeros(n_units, dtype=float),
            drift_offsets=np.zeros(n_units, dtype=float),
            n_train_calls=0,
        )


class SyntheticOracle:
    """Noise-seeded synthetic evaluation environment for one OracleSpec."""

    def __init__(self, spec: OracleSpec):
        self.spec = spec
        self.calls = 0
        self._lock = threading.Lock()
        self._mu_inf = np.array(spec.mu_inf, dtype=float)
        self._kappa = np.array(spec.kappa, dtype=float)
        self._groups = spec.full_groups()
        # Group capacity: positive asymptote mass, the value a fully trained
        # group realizes exactly under its concave aggregation.
        self._capacity = [float(np.maximum(self._mu_inf[list(g)], 0.0).sum()) for g, _ in self._groups]

    @property
    def n_units(self) -> int:
        return self.spec.n_units

    def fresh_state(self) -> TrainingState:
        return TrainingState.fresh(self.n_units)

    def _unit_utilities(self, state: TrainingState) -> np.ndarray:
        learned = 1.0 - np.exp(-state.steps / self._kappa)
        learned = np.maximum(learned, self.spec.warm_floor)
        return (self._mu_inf + state.drift_offsets) * learned

    def true_value(self, state: TrainingState, gates) -> float:
        """Noise-free score of a configuration; does not count as an evaluation."""
        gates = np.asarray(gates, dtype=bool)
        if gates.size != self.n_units:
            raise LengthMismatch("gate vector length must match the unit count")
        mu = self._unit_utilities(state)
        total = self.spec.base_score
        for (members, gamma), cap in zip(self._groups, self._capacity):
            s = float(mu[[i for i in members if gates[i]]].sum()) if members else 0.0
            total += _group_value(s, gamma, cap)
        return float(min(1.0, max(0.0, total)))

    def evaluate(self, state: TrainingState, gates, call_index: int | None = None) -> float:
        """Noisy evaluation: true value plus Gaussian noise, clamped to [0, 1].

        Noise is drawn from a stream seeded by (spec.seed, call_index), so a
        fixed call-index assignment reproduces identical scores under any
        execution schedule.
        """
        with self._lock:
            if call_index is None:
                call_index = self.calls
            self.calls += 1
        v = self.true_value(state, gates)
        if self.spec.sigma_val > 0.0:
            rng = np.random.default_rng([self.spec.seed, _NOISE_TAG, int(call_index)])
            v += self.spec.sigma_val * rng.standard_normal()
        return float(min(1.0, max(0.0, v)))

    def train_step(self, state: TrainingState, gates, k: int) -> TrainingState:
        """Advance active units by k steps; inactive units are untouched."""
        if k < 1:
            raise InvalidParams("k must be at least 1")
        gates = np.asarray(gates, dtype=bool)
        if gates.size != self.n_units:
            raise LengthMismatch("gate vector length must match the unit count")
        steps = state.steps.copy()
        steps[gates] += float(k)
        offsets = state.drift_offsets
        if self.spec.drift > 0.0:
            rng = np.random.default_rng([self.spec.seed, _DRIFT_TAG, state.n_train_calls])
            offsets = offsets + rng.uniform(-self.spec.drift, self.spec.drift, self.n_units)
        return TrainingState(steps=steps, drift_offsets=offsets, n_train_calls=state.n_train_calls + 1)

    def true_marginal(self, state: TrainingState, gates, unit_id: int) -> float:
        """Noise-free value change from toggling an active unit off."""
        gates = np.asarray(gates, dtype=bool)
        if not gates[unit_id]:
            raise InactiveUnit(f"unit {unit_id} is inactive; its toggle-off marginal is undefined")
        without = gates.copy()
        without[unit_id] = False
        return self.true_value(state, gates) - self.true_value(state, without)

    def oracle_optimum(self, state: TrainingState, costs, p_max: float) -> tuple[np.ndarray, float]:
        """Exact budget-constrained maximizer of the noise-free value (N <= 20)."""
        n = self.n_units
        if n > 20:
            raise TooLarge(f"{n} units exceed the exhaustive cap of 20")
        costs = np.asarray(costs, dtype=float)
        if costs.size != n:
            raise LengthMismatch("cost vector length must match the unit count")

        n_sub = 1 << n
        sub_cost = np.zeros(n_sub)
        for b in range(n):
            sub_cost.reshape(-1, 1 << (b + 1))[:, (1 << b):] += costs[b]

        mu = self._unit_utilities(state)
        values = np.full(n_sub, self.spec.base_score)
        group_sum = np.empty(n_sub)
        for (members, gamma), cap in zip(self._groups, self._capacity):
            group_sum[:] = 0.0
            for i in members:
                group_sum.reshape(-1, 1 << (i + 1))[:, (1 << i):] += mu[i]
            values += _group_value_array(group_sum, gamma, cap)
        np.clip(values, 0.0, 1.0, out=values)

        feasible = np.flatnonzero(sub_cost <= p_max)
        best_value = values[feasible].max()
        cand = feasible[values[feasible] == best_value]
        cand = cand[sub_cost[cand] == sub_cost[cand].min()]

        def to_gates(mask_int: int) -> np.ndarray:
            g = np.zeros(n, dtype=bool)
            for b in range(n):
                if mask_int >> b & 1:
                    g[b] = True
            return g

        winner = min(tuple(to_gates(int(c))) for c in cand)
        gates = np.array(winner, dtype=bool)
        return gates, float(best_value)


def _group_value(s: float, gamma: float, cap: float) -> float:
    """Capacity-scaled concave aggregation of one group's active utility mass.

    Additive at gamma = 1 and for non-positive sums; otherwise
    cap^(1-gamma) * s^gamma, which realizes exactly `cap` when the whole
    group is active and fully trained.
    """
    if gamma >= 1.0 or cap <= 0.0 or s <= 0.0:
        return s
    return cap ** (1.0 - gamma) * s**gamma


def _group_value_array(s: np.ndarray, gamma: float, cap: float) -> np.ndarray:
    if gamma >= 1.0 or cap <= 0.0:
        return s
    out = s.copy()
    pos = s > 0.0
    out[pos] = cap ** (1.0 - gamma) * np.power(s[pos], gamma)
    return out


def gates_to_bits(gates) -> str:
    return "".join("1" if g else "0" for g in np.asarray(gates, dtype=bool))


class TraceRecordingOracle:
    """Wraps an oracle and appends every query to a JSONL trace.

    Noisy evaluations record their call index under `noise_seed`; noise-free
    value queries record noise_seed = -1 so that a replay can serve both
    streams and reproduce the original event log exactly.
    """

    def __init__(self, inner, path: str | Path):
        self.inner = inner
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w")

    @property
    def n_units(self) -> int:
        return self.inner.n_units

    @property
    def calls(self) -> int:
        return self.inner.calls

    def fresh_state(self) -> TrainingState:
        return self.inner.fresh_state()

    def _record(self, gates, score: float, noise_seed: int) -> None:
        rec = {"gates": gates_to_bits(gates), "score": score, "noise_seed": noise_seed}
        self._fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def evaluate(self, state, gates, call_index: int | None = None) -> float:
        score = self.inner.evaluate(state, gates, call_index)
        self._record(gates, score, int(call_index) if call_index is not None else self.inner.calls - 1)
        return score

    def true_value(self, state, gates) -> float:
        score = self.inner.true_value(state, gates)
        self._record(gates, score, -1)
        return score

    def train_step(self, state, gates, k: int):
        return self.inner.train_step(state, gates, k)

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "TraceRecordingOracle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class ReplayOracle:
    """Serves recorded (gates -> score) pairs in first-recorded order.

    Each configuration keeps separate FIFO queues for noisy evaluations and
    noise-free value queries; querying an unrecorded configuration, or more
    often than it was recorded, raises UnknownConfiguration.
    """

    def __init__(self, noisy: dict[str, list[float]], true: dict[str, list[float]], n_units: int):
        self._noisy = {k: list(v) for k, v in noisy.items()}
        self._true = {k: list(v) for k, v in true.items()}
        self._n_units = n_units
        self.calls = 0
        self._lock = threading.Lock()

    @property
    def n_units(self) -> int:
        return self._n_units

    def fresh_state(self) -> TrainingState:
        return TrainingState.fresh(self._n_units)

    def _pop(self, table: dict[str, list[float]], gates, what: str) -> float:
        key = gates_to_bits(gates)
        if len(key) != self._n_units:
            raise LengthMismatch("gate vector length must match the trace unit count")
        queue = table.get(key)
        if not queue:
            raise UnknownConfiguration(f"no remaining recorded {what} for gates {key}")
        return queue.pop(0)

    def evaluate(self, state, gates, call_index: int | None = None) -> float:
        with self._lock:
            self.calls += 1
            return self._pop(self._noisy, gates, "evaluation")

    def true_value(self, state, gates) -> float:
        with self._lock:
            return self._pop(self._true, gates, "value query")

    def train_step(self, state, gates, k: int) -> TrainingState:
        return state  # training dynamics live behind the recorded scores


def replay_trace(path: str | Path) -> ReplayOracle:
    """Build a replay oracle from a JSONL trace of {gates, score, noise_seed}."""
    path = Path(path)
    noisy: dict[str, list[float]] = {}
    true: dict[str, list[float]] = {}
    n_units: int | None = None
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise MalformedTrace(f"cannot read trace {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            bits = rec["gates"]
            score = float(rec["score"])
            noise_seed = int(rec["noise_seed"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise MalformedTrace(f"{path}:{lineno}: {exc}") from exc
        if not isinstance(bits, str) or set(bits) - {"0", "1"}:
            raise MalformedTrace(f"{path}:{lineno}: gates must be a 0/1 bitstring")
        if n_units is None:
            n_units = len(bits)
        elif len(bits) != n_units:
            raise MalformedTrace(f"{path}:{lineno}: inconsistent gate vector length")
        table = true if noise_seed < 0 else noisy
        table.setdefault(bits, []).append(score)
    if n_units is None:
        raise MalformedTrace(f"{path}: trace contains no records")
    return ReplayOracle(noisy, true, n_units)
