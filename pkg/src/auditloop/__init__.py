"""Online budget-constrained adapter selection from noisy on/off audits.

The engine repeatedly trains the active adapter set, audits sampled units by
toggling their gates against a validation oracle, smooths the noisy
utilities, and re-solves a density-greedy knapsack under a parameter budget,
with vote-counter hysteresis suppressing configuration chatter. A final
guard-free re-solve picks the configuration that is re-finetuned from
scratch.
"""

__version__ = "0.1.0"

from . import errors
from .allocator import (
    AllocationProposal,
    AllocatorParams,
    apply_hysteresis,
    brute_force_optimum,
    final_resolve,
    gate_cost,
    greedy_allocate,
)
from .driver import (
    LoopDriver,
    RunConfig,
    RunReport,
    compute_diagnostics,
    default_oracle_spec,
    default_run_config,
    run_full,
    run_random_baseline,
    write_diagnostics_csv,
)
from .fsm import FsmParams, FsmStabilizer
from .oracle import (
    OracleSpec,
    ReplayOracle,
    SyntheticOracle,
    TraceRecordingOracle,
    TrainingState,
    gates_to_bits,
    replay_trace,
)
from .sampler import SamplerParams, coverage_lower_bound, sample_audit_batch
from .space import (
    AdapterKind,
    AdapterUnit,
    AuditSpace,
    BackboneDesc,
    Family,
    Slot,
    Template,
    Topology,
    adapter_forward,
    build_audit_space,
    default_backbone,
    default_space,
    default_templates,
    raw_param_count,
)
from .tracker import SmoothingParams, UtilityTracker

__all__ = [
    "AdapterKind",
    "AdapterUnit",
    "AllocationProposal",
    "AllocatorParams",
    "AuditSpace",
    "BackboneDesc",
    "Family",
    "FsmParams",
    "FsmStabilizer",
    "LoopDriver",
    "OracleSpec",
    "ReplayOracle",
    "RunConfig",
    "RunReport",
    "SamplerParams",
    "Slot",
    "SmoothingParams",
    "SyntheticOracle",
    "Template",
    "Topology",
    "TraceRecordingOracle",
    "TrainingState",
    "UtilityTracker",
    "adapter_forward",
    "apply_hysteresis",
    "brute_force_optimum",
    "build_audit_space",
    "compute_diagnostics",
    "coverage_lower_bound",
    "default_backbone",
    "default_oracle_spec",
    "default_run_config",
    "default_space",
    "default_templates",
    "errors",
    "final_resolve",
    "gate_cost",
    "gates_to_bits",
    "greedy_allocate",
    "raw_param_count",
    "replay_trace",
    "run_full",
    "run_random_baseline",
    "sample_audit_batch",
    "write_diagnostics_csv",
]
