import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from auditloop import SmoothingParams, UtilityTracker
from auditloop.errors import InvalidParams, NeverAudited, NonFiniteUtility

P = SmoothingParams()


def make_tracker(values, params=P, window=5):
    tr = UtilityTracker(0, window=window)
    for t, v in enumerate(values):
        tr.record_audit(v, params, t)
    return tr


def test_first_audit_seeds_ema():
    tr = make_tracker([0.8])
    assert tr.ema == 0.8
    assert list(tr.history) == [0.8]
    assert tr.probe_count == 1


def test_ema_recursion():
    tr = UtilityTracker(0)
    tr.record_audit(0.5, P, 0)
    tr.record_audit(1.0, P, 1)
    assert math.isclose(tr.ema, 0.1 * 1.0 + 0.9 * 0.5)


def test_history_fifo_eviction():
    tr = make_tracker([1, 2, 3, 4, 5, 6])
    assert len(tr.history) == 5
    first = make_tracker([1, 2, 3, 4, 5]).history[1]
    assert tr.history[0] == first  # oldest smoothed value evicted


def test_nonfinite_rejected():
    tr = UtilityTracker(0)
    with pytest.raises(NonFiniteUtility):
        tr.record_audit(float("nan"), P, 0)
    with pytest.raises(NonFiniteUtility):
        tr.record_audit(float("inf"), P, 0)


def test_never_audited_is_an_error_not_zero():
    tr = UtilityTracker(0)
    with pytest.raises(NeverAudited):
        tr.robust_score(P)


def test_window_bounds():
    with pytest.raises(InvalidParams):
        UtilityTracker(0, window=2)
    with pytest.raises(InvalidParams):
        UtilityTracker(0, window=6)


def test_smoothing_param_bounds():
    with pytest.raises(InvalidParams):
        SmoothingParams(beta=1.0)
    with pytest.raises(InvalidParams):
        SmoothingParams(beta=0.0)
    with pytest.raises(InvalidParams):
        SmoothingParams(lambda_s=-0.1)


def test_robust_score_hand_computed():
    # history [0.5, 0.7, 0.9]: median 0.7, q25 0.6, q75 0.8, iqr 0.2
    tr = UtilityTracker(0)
    tr.history.extend([0.5, 0.7, 0.9])
    tr.probe_count = 3
    assert math.isclose(tr.robust_score(SmoothingParams(lambda_s=0.5)), 0.7 - 0.1)


def test_robust_score_single_sample():
    tr = make_tracker([0.4], SmoothingParams(lambda_s=7.0))
    assert tr.robust_score(SmoothingParams(lambda_s=7.0)) == 0.4


def test_robust_score_constant_history():
    tr = UtilityTracker(0)
    tr.history.extend([0.3, 0.3, 0.3, 0.3])
    tr.probe_count = 4
    assert math.isclose(tr.robust_score(SmoothingParams(lambda_s=3.0)), 0.3)


vals = st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=12)


@given(vals)
def test_score_never_exceeds_median(values):
    tr = make_tracker(values)
    score = tr.robust_score(P)
    assert score <= np.median(np.array(tr.history)) + 1e-12


@given(vals, st.floats(-50, 50, allow_nan=False))
def test_shift_equivariance(values, k):
    base = make_tracker(values)
    shifted = make_tracker([v + k for v in values])
    assert math.isclose(shifted.ema, base.ema + k, abs_tol=1e-9)
    assert math.isclose(shifted.robust_score(P), base.robust_score(P) + k, abs_tol=1e-9)


@given(vals, st.floats(0.01, 50))
def test_scale_equivariance(values, t):
    base = make_tracker(values)
    scaled = make_tracker([v * t for v in values])
    assert math.isclose(scaled.ema, base.ema * t, rel_tol=1e-9, abs_tol=1e-9)
    assert math.isclose(scaled.robust_score(P), base.robust_score(P) * t, rel_tol=1e-9, abs_tol=1e-9)


@settings(deadline=None)
@given(st.floats(0.2, 0.95), st.integers(0, 2**31 - 1))
def test_variance_shrinks_below_raw_noise(beta, seed):
    params = SmoothingParams(beta=beta)
    rng = np.random.default_rng(seed)
    tr = UtilityTracker(0)
    for t, v in enumerate(rng.standard_normal(50)):
        tr.record_audit(v, params, t)
    assert math.isfinite(tr.ema)


def test_ema_variance_bound_quick():
    # stationary unit-variance noise: Var(ema) <= 1.1 * (1-b)/(1+b)
    beta = 0.9
    replicas, audits = 3000, 150
    rng = np.random.default_rng(7)
    noise = rng.standard_normal((replicas, audits))
    ema = noise[:, 0].copy()
    for t in range(1, audits):
        ema = (1 - beta) * noise[:, t] + beta * ema
    assert ema.var() <= 1.1 * (1 - beta) / (1 + beta)


def test_drift_bias_bound_quick():
    beta, delta = 0.9, 0.01
    params = SmoothingParams(beta=beta)
    tr = UtilityTracker(0)
    mu = 0.0
    for t in range(400):
        mu = delta * t
        tr.record_audit(mu, params, t)
    assert abs(tr.ema - mu) <= 1.05 * delta * beta / (1 - beta)


def test_event_record_shape():
    tr = UtilityTracker(3)
    tr.record_audit(1.5, P, 9)
    ev = tr.event(1.5, P, 9)
    assert ev == {
        "cycle": 9,
        "unit_id": 3,
        "u_raw": 1.5,
        "ema": 1.5,
        "score": 1.5,
        "probe_count": 1,
    }
