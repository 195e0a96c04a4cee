"""Per-unit utility smoothing: EMA of raw audits plus a windowed robust score."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParams, NeverAudited, NonFiniteUtility


@dataclass(frozen=True)
class SmoothingParams:
    """EMA decay and IQR shrinkage weight for the two-stage utility filter."""

    beta: float = 0.9
    lambda_s: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.beta < 1.0:
            raise InvalidParams("beta must lie in (0, 1)")
        if self.lambda_s < 0.0:
            raise InvalidParams("lambda_s must be non-negative")


class UtilityTracker:
    """Smoothed utility state for one unit.

    The history window stores the last `window` smoothed values (not raw
    audits); the robust score is median(history) - lambda_s * IQR(history)
    with linearly interpolated quartiles.
    """

    __slots__ = ("unit_id", "window", "ema", "history", "probe_count", "last_audit_cycle")

    def __init__(self, unit_id: int, window: int = 5):
        if not 3 <= window <= 5:
            raise InvalidParams("history window must lie in [3, 5]")
        self.unit_id = unit_id
        self.window = window
        self.ema = math.nan
        self.history: deque[float] = deque(maxlen=window)
        self.probe_count = 0
        self.last_audit_cycle = -1

    def record_audit(self, u_raw: float, params: SmoothingParams, cycle: int) -> None:
        """Fold one raw audit utility into the EMA and history window.

        The first observation seeds the EMA directly (no zero-init bias).
        """
        u = float(u_raw)
        if not math.isfinite(u):
            raise NonFiniteUtility(f"unit {self.unit_id}: raw utility {u_raw!r} is not finite")
        if self.probe_count == 0:
            self.ema = u
        else:
            self.ema = (1.0 - params.beta) * u + params.beta * self.ema
        self.history.append(self.ema)
        self.probe_count += 1
        self.last_audit_cycle = cycle

    def robust_score(self, params: SmoothingParams) -> float:
        if self.probe_count == 0:
            raise NeverAudited(f"unit {self.unit_id} has no audits; treat as score-unknown")
        h = np.array(self.history, dtype=float)
        if h.size == 1:
            return float(h[0])
        med = float(np.median(h))
        q25, q75 = np.quantile(h, [0.25, 0.75])  # linear interpolation between order stats
        return med - params.lambda_s * float(q75 - q25)

    def event(self, u_raw: float, params: SmoothingParams, cycle: int) -> dict:
        """Log record for one audit: {cycle, unit_id, u_raw, ema, score, probe_count}."""
        return {
            "cycle": cycle,
            "unit_id": self.unit_id,
            "u_raw": float(u_raw),
            "ema": self.ema,
            "score": self.robust_score(params),
            "probe_count": self.probe_count,
        }
