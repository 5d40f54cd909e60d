"""Offline replay of the early-exit policy over a recorded trace.

The replay mirrors what the gateway does against an upstream that serves the
trace: the first request streams at most ``budget`` records; an exit cancels
it and a continuation request streams the trace's answer-phase records, at
most ``budget - exit_step`` of them.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from rpdi.entropy import TokenObservation
from rpdi.monitor import Monitor
from rpdi.policy import PolicyConfig
from rpdi.session import ActionKind, Session, SessionOutcome
from rpdi.tracelab.schema import Trace


@dataclass
class ReplayResult:
    trace_name: str
    outcome: SessionOutcome
    answer_budget: int
    transcript: str
    continuation_requests: int
    # per observed thinking step; empty when replayed with record_series=False
    steps: list[int] = field(default_factory=list)
    entropy: list[float] = field(default_factory=list)
    ltf: list[float] = field(default_factory=list)
    gtf: list[float] = field(default_factory=list)
    rpdi: list[float | None] = field(default_factory=list)
    decisions: list[str] = field(default_factory=list)

    def outcome_tuple(self) -> tuple[str, int | None, float | None]:
        return self.outcome.as_tuple()

    def series_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "entropy_nats", "ltf", "gtf", "rpdi", "decision"])
        for row in zip(self.steps, self.entropy, self.ltf, self.gtf, self.rpdi, self.decisions):
            w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in row])
        return buf.getvalue()


def replay(
    trace: Trace,
    config: PolicyConfig | None = None,
    *,
    record_series: bool = True,
    monitor_factory=Monitor,
) -> ReplayResult:
    config = config if config is not None else PolicyConfig()
    session = Session(trace.prompt, config, monitor_factory)
    monitor = session.monitor
    entropies = trace.entropies(config.tail_policy)
    records = trace.records
    out: list[str] = []
    result = ReplayResult(trace.name, session.outcome, 0, "", 0)
    first_stream = min(len(records), config.budget)

    for idx in range(first_stream):
        rec = records[idx]
        if session.outcome.terminal:
            # ended naturally: the rest of the first stream is the answer
            session.feed_answer(rec.token_text)
            out.append(rec.token_text)
            continue
        action = session.feed(TokenObservation(rec.step, rec.token_id, rec.token_text, entropies[idx]))
        out.append(rec.token_text)
        if record_series and monitor.step == rec.step:
            result.steps.append(rec.step)
            result.entropy.append(entropies[idx])
            result.ltf.append(monitor.ltf())
            result.gtf.append(monitor.gtf())
            result.rpdi.append(monitor.rpdi())
            result.decisions.append(
                action.decision.kind.value if action.decision is not None else "continue"
            )
        if action.kind is ActionKind.ENACT_EXIT:
            out.append(config.termination_marker)
            result.continuation_requests = 1
            for ans in trace.answer_records()[: action.answer_budget]:
                session.feed_answer(ans.token_text)
                out.append(ans.token_text)
            break
    else:
        session.end_of_stream()

    result.outcome = session.outcome
    result.answer_budget = session.answer_budget
    result.transcript = "".join(out)
    return result


def replay_outcome(trace: Trace, config: PolicyConfig) -> SessionOutcome:
    """Decision-only replay used by sweeps."""
    return replay(trace, config, record_series=False).outcome
