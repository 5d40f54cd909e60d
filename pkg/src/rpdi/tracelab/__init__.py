"""Offline trace tooling: schema, replay, sweeps, analytics, synthesis."""
from rpdi.tracelab.analytics import BinReport, entropy_contribution_bins, top_contributor_tokens
from rpdi.tracelab.baseline import BudgetTable, fixed_budget_policy
from rpdi.tracelab.replay import ReplayResult, replay, replay_outcome
from rpdi.tracelab.schema import (
    SCHEMA_VERSION,
    Trace,
    TraceError,
    TraceRecord,
    load_trace,
    load_traces,
    loads_trace,
)
from rpdi.tracelab.sweep import SweepCell, SweepResult, sweep
from rpdi.tracelab.synth import PROFILE_NAMES, SpikeRegion, SynthProfile, builtin_profile, synth_trace

__all__ = [
    "BinReport",
    "BudgetTable",
    "PROFILE_NAMES",
    "ReplayResult",
    "SCHEMA_VERSION",
    "SpikeRegion",
    "SweepCell",
    "SweepResult",
    "SynthProfile",
    "Trace",
    "TraceError",
    "TraceRecord",
    "builtin_profile",
    "entropy_contribution_bins",
    "fixed_budget_policy",
    "load_trace",
    "load_traces",
    "loads_trace",
    "replay",
    "replay_outcome",
    "sweep",
    "synth_trace",
    "top_contributor_tokens",
]
