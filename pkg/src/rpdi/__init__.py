"""Entropy-based overthinking monitor for reasoning language models.

Tracks per-token entropy during the thinking phase and signals an early
exit when the recent mean entropy rises well above the running mean.
"""
from rpdi.entropy import (
    ProbDistribution,
    TailPolicy,
    TokenObservation,
    decode_observation,
    entropy_from_topk_logprobs,
    shannon_entropy,
)
from rpdi.monitor import Monitor, PyMonitor, monitor_new
from rpdi.policy import DecisionKind, ExitDecision, PolicyConfig, Variant, is_boundary
from rpdi.session import Outcome, Session, SessionAction, SessionOutcome, session_start

__version__ = "0.1.0"

__all__ = [
    "DecisionKind",
    "ExitDecision",
    "Monitor",
    "Outcome",
    "PolicyConfig",
    "ProbDistribution",
    "PyMonitor",
    "Session",
    "SessionAction",
    "SessionOutcome",
    "TailPolicy",
    "TokenObservation",
    "Variant",
    "decode_observation",
    "entropy_from_topk_logprobs",
    "is_boundary",
    "monitor_new",
    "session_start",
    "shannon_entropy",
]
