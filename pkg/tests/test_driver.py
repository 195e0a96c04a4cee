import json
import math
import os
from dataclasses import replace

import numpy as np
import pytest

from auditloop import (
    AllocatorParams,
    FsmParams,
    LoopDriver,
    OracleSpec,
    RunConfig,
    SamplerParams,
    SmoothingParams,
    SyntheticOracle,
    TraceRecordingOracle,
    compute_diagnostics,
    default_run_config,
    replay_trace,
    run_full,
    run_random_baseline,
    write_diagnostics_csv,
)
from auditloop.driver import DIAGNOSTIC_COLUMNS, default_oracle_spec
from auditloop.errors import InvalidParams, MalformedLog
from auditloop.space import AuditSpace, BackboneDesc, Family, Slot, Template


def tiny_config(**overrides):
    """12-unit space with an additive synthetic surface, quick to run."""
    from auditloop.space import Topology

    backbone = BackboneDesc(1, (16,), 200_000)
    templates = [
        Template(Family.LORA, topo, r, Slot.ATTENTION)
        for topo in (Topology.SA, Topology.PA)
        for r in (2, 4, 8)
    ] + [
        Template(Family.ADAPTFORMER, topo, d, Slot.FEEDFORWARD)
        for topo in (Topology.SA, Topology.PA)
        for d in (4, 8, 16)
    ]
    space = AuditSpace.build(backbone, templates)
    rng = np.random.default_rng(11)
    spec = OracleSpec(
        base_score=0.4,
        mu_inf=tuple(rng.uniform(-0.02, 0.08, space.n_units)),
        kappa=tuple(rng.uniform(100.0, 400.0, space.n_units)),
        sigma_val=0.02,
        warm_floor=0.3,
        seed=5,
    )
    base = dict(
        space=space,
        oracle_spec=spec,
        sampler=SamplerParams(batch_size=4),
        smoothing=SmoothingParams(),
        allocator=AllocatorParams(p_max=0.002, mu_eff=0.02),
        fsm=FsmParams(),
        cycles=25,
        steps_per_cycle=80,
        refinetune_steps=2000,
        shots=1,
        run_seed=3,
    )
    base.update(overrides)
    return RunConfig(**base)


def test_eval_count_is_one_plus_batch_per_cycle():
    cfg = tiny_config()
    report, driver = run_full(cfg)
    assert report.eval_count == cfg.cycles * (1 + cfg.sampler.batch_size)
    assert driver.oracle.calls == report.eval_count


def test_budget_safety_every_cycle():
    cfg = tiny_config()
    _, driver = run_full(cfg)
    for rec in driver.records:
        if rec["kind"] == "cycle":
            assert rec["allocate"]["total_cost"] <= cfg.allocator.p_max


def test_determinism_same_seed_byte_identical(tmp_path):
    cfg = tiny_config()
    _, d1 = run_full(cfg)
    _, d2 = run_full(cfg)
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    d1.write_events(p1)
    d2.write_events(p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_different_seeds_differ():
    r1, _ = run_full(tiny_config(run_seed=1))
    r2, _ = run_full(tiny_config(run_seed=2))
    assert r1.value_curve != r2.value_curve


def test_parallel_schedule_byte_identical(tmp_path):
    cfg = tiny_config()
    os.environ.pop("SEA_ALLOC_THREADS", None)
    _, serial = run_full(cfg)
    os.environ["SEA_ALLOC_THREADS"] = "8"
    try:
        _, parallel = run_full(cfg)
    finally:
        del os.environ["SEA_ALLOC_THREADS"]
    ps, pp = tmp_path / "s.jsonl", tmp_path / "p.jsonl"
    serial.write_events(ps)
    parallel.write_events(pp)
    assert ps.read_bytes() == pp.read_bytes()


def test_audit_utility_sign_conventions():
    # full config 0.80, toggled 0.75, cost 0.002: utility 25.0
    cfg = tiny_config()
    driver = LoopDriver(cfg)
    c = driver.space.costs[0]
    assert math.isclose((0.80 - 0.75) / 0.002, 25.0)
    driver.gates[:] = False
    _, utils = driver._audit_utilities([0])
    # inactive unit: activation marginal, positive when turning it on helps
    spec = cfg.oracle_spec
    assert (utils[0] > 0) == (spec.mu_inf[0] * spec.warm_floor > 0)


def test_chatter_bound_on_run():
    cfg = tiny_config(cycles=30)
    report, _ = run_full(cfg)
    assert report.max_unit_flips <= 30 // cfg.fsm.tau_act


def test_no_commit_cycle_leaves_gates_and_tc():
    cfg = tiny_config()
    driver = LoopDriver(cfg)
    rec0 = driver.run_cycle(0)
    # vote threshold 3 means the first cycle can never commit
    assert rec0["fsm"]["commits"] == []
    assert rec0["fsm"]["t_c"] == 0
    assert not driver.gates.any()


def test_infeasible_budget_yields_empty_selection():
    cfg = tiny_config(allocator=AllocatorParams(p_max=1e-6, mu_eff=0.0), cycles=6)
    report, _ = run_full(cfg)
    assert not report.final_gates.any()
    assert report.final_value == cfg.oracle_spec.base_score


def test_two_phase_purity():
    # the final value depends only on the selected set and refinetune budget
    cfg = tiny_config()
    report, driver = run_full(cfg)
    oracle = SyntheticOracle(cfg.oracle_spec)
    state = oracle.fresh_state()
    state = oracle.train_step(state, report.final_gates, cfg.refinetune_steps)
    assert math.isclose(report.final_value, oracle.true_value(state, report.final_gates), abs_tol=1e-12)


def test_eligibility_requires_an_audit():
    cfg = tiny_config(cycles=1)
    _, driver = run_full(cfg)
    audited = {u for r in driver.records if r["kind"] == "cycle" for u in r["audit"]["batch"]}
    final = driver.records[-1]
    assert set(final["final_on_ids"]) <= audited


def test_regret_curve_present_for_small_space():
    cfg = tiny_config()
    report, _ = run_full(cfg)
    assert report.regret_curve is not None
    assert len(report.regret_curve) == cfg.cycles
    assert all(r >= -1e-9 for r in report.regret_curve)


def test_regret_shrinks_over_the_run_median_over_seeds():
    diffs = []
    for seed in range(5):
        report, _ = run_full(tiny_config(run_seed=seed))
        diffs.append(report.regret_curve[-1] - report.regret_curve[0])
    assert np.median(diffs) <= 0.0


def test_global_chatter_count_stays_within_bound_at_90_cycles():
    cfg = tiny_config(cycles=90)
    report, _ = run_full(cfg)
    assert report.t_c <= 90 // cfg.fsm.tau_act


def test_random_baseline_respects_budget_and_determinism():
    cfg = tiny_config()
    v1 = run_random_baseline(cfg, 8)
    v2 = run_random_baseline(cfg, 8)
    assert np.array_equal(v1, v2)
    assert v1.shape == (8,)


def test_random_baseline_degenerate_budget():
    cfg = tiny_config(allocator=AllocatorParams(p_max=1e-6, mu_eff=0.0))
    vals = run_random_baseline(cfg, 5)
    assert np.allclose(vals, cfg.oracle_spec.base_score)


def test_random_baseline_single_feasible_unit():
    cfg = tiny_config()
    cheapest = int(np.argmin(cfg.space.costs))
    p_max = float(cfg.space.costs[cheapest] * 1.05)
    if np.sort(cfg.space.costs)[1] > p_max:  # only one unit affordable
        cfg = tiny_config(allocator=AllocatorParams(p_max=p_max, mu_eff=0.0))
        vals = run_random_baseline(cfg, 6)
        assert len(set(np.round(vals, 12))) == 1


# -- diagnostics ---------------------------------------------------------------


def test_diagnostics_roundtrip(tmp_path):
    cfg = tiny_config()
    report, driver = run_full(cfg)
    path = driver.write_events(tmp_path / "events.jsonl")
    diag = compute_diagnostics(path, n_units=cfg.space.n_units)
    assert diag["eval_count"] == report.eval_count
    assert diag["t_c"] == report.t_c
    assert np.array_equal(diag["coverage"], report.probe_counts)
    assert int(diag["coverage"].sum()) == cfg.cycles * cfg.sampler.batch_size
    csv_path = write_diagnostics_csv(diag, tmp_path / "diag.csv")
    header = csv_path.read_text().splitlines()[0]
    assert header == ",".join(DIAGNOSTIC_COLUMNS)
    assert len(csv_path.read_text().splitlines()) == cfg.cycles + 1


def test_diagnostics_malformed_log(tmp_path):
    bad = tmp_path / "events.jsonl"
    bad.write_text("{}\n")
    with pytest.raises(MalformedLog):
        compute_diagnostics(bad)
    with pytest.raises(MalformedLog):
        compute_diagnostics([{"kind": "cycle", "cycle": 0}])


def test_record_and_replay_identical_event_log(tmp_path):
    cfg = tiny_config(cycles=10)
    inner = SyntheticOracle(cfg.oracle_spec)
    with TraceRecordingOracle(inner, tmp_path / "trace.jsonl") as rec:
        _, original = run_full(cfg, oracle=rec)
    _, replayed = run_full(cfg, oracle=replay_trace(tmp_path / "trace.jsonl"))
    p1, p2 = tmp_path / "orig.jsonl", tmp_path / "replay.jsonl"
    original.write_events(p1)
    replayed.write_events(p2)
    assert p1.read_bytes() == p2.read_bytes()


# -- config plumbing -----------------------------------------------------------


def test_config_validation():
    with pytest.raises(InvalidParams):
        tiny_config(cycles=0)
    cfg = tiny_config()
    with pytest.raises(InvalidParams):
        replace(cfg, oracle_spec=default_oracle_spec(AuditSpace.build(
            BackboneDesc(1, (8,), 10_000),
            [Template(Family.AFFINE_LN, __import__("auditloop").Topology.NONE, 0, Slot.NORM)],
        )))


def test_config_json_roundtrip():
    cfg = default_run_config(shots=1, run_seed=4)
    doc = cfg.to_json()
    loaded = RunConfig.from_json(doc)
    assert loaded.run_seed == 4
    assert loaded.space.n_units == cfg.space.n_units
    assert loaded.oracle_spec == cfg.oracle_spec
    r1, _ = run_full(cfg)
    r2, _ = run_full(loaded)
    assert r1.final_value == r2.final_value


def test_default_config_shots_mapping():
    for shots, steps in ((1, 6000), (5, 8000), (10, 12000)):
        cfg = default_run_config(shots=shots)
        assert cfg.cycles * cfg.steps_per_cycle == steps
    with pytest.raises(InvalidParams):
        default_run_config(shots=3)
