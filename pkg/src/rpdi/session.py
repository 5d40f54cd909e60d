"""Two-phase generation lifecycle around a :class:`~rpdi.monitor.Monitor`.

A session watches thinking-phase tokens until one of three things happens:
the model writes the termination marker itself, the monitor signals a
deviation, or the thinking budget runs out. In the last two cases the caller
is told to stop the stream and continue from ``prompt + reasoning + marker``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

from rpdi.entropy import TokenObservation
from rpdi.monitor import Monitor
from rpdi.policy import DecisionKind, ExitDecision, PolicyConfig


class SessionError(RuntimeError):
    pass


class Outcome(str, enum.Enum):
    PENDING = "pending"
    EXITED_EARLY = "exited-early"
    ENDED_NATURALLY = "ended-naturally"
    BUDGET_EXHAUSTED = "budget-exhausted"
    # upstream stopped before any marker, exit or budget
    STREAM_ENDED = "stream-ended"


@dataclass(frozen=True)
class SessionOutcome:
    kind: Outcome = Outcome.PENDING
    step: int | None = None
    rpdi: float | None = None

    def as_tuple(self) -> tuple[str, int | None, float | None]:
        return (self.kind.value, self.step, self.rpdi)

    @property
    def terminal(self) -> bool:
        return self.kind is not Outcome.PENDING


class ActionKind(str, enum.Enum):
    KEEP_STREAMING = "keep-streaming"
    ENACT_EXIT = "enact-exit"
    FINISH = "finish"


@dataclass(frozen=True)
class SessionAction:
    kind: ActionKind
    decision: ExitDecision | None = None
    continuation_prefix: str | None = None
    answer_budget: int | None = None
    zero_remaining: bool = False


KEEP_STREAMING = SessionAction(ActionKind.KEEP_STREAMING)


def detect_marker(window_text: str, marker: str) -> bool:
    return marker in window_text


class Session:
    """One prompt's trajectory. Not thread-safe; feed it from one task."""

    def __init__(
        self,
        prompt: str,
        config: PolicyConfig | None = None,
        monitor_factory: Callable[[PolicyConfig], object] = Monitor,
    ) -> None:
        self.prompt = prompt
        self.config = config if config is not None else PolicyConfig()
        self.config.validate()
        self.monitor = monitor_factory(self.config)
        self.outcome = SessionOutcome()
        self.tokens_consumed = 0
        self.thinking_steps = 0
        self._parts: list[str] = []
        self._answer_parts: list[str] = []
        self._marker = self.config.termination_marker
        # marker can straddle tokens, so keep the last len(marker)-1 chars around
        self._tail = ""

    @property
    def reasoning(self) -> str:
        return "".join(self._parts)

    @property
    def answer(self) -> str:
        return "".join(self._answer_parts)

    @property
    def answer_budget(self) -> int:
        """Tokens left for the answer once thinking has stopped."""
        if self.outcome.step is None:
            return self.config.budget - self.tokens_consumed
        return self.config.budget - self.outcome.step

    def continuation_prefix(self) -> str:
        return self.prompt + self.reasoning + self._marker

    def feed(self, obs: TokenObservation) -> SessionAction:
        if self.outcome.terminal:
            raise SessionError(f"session already ended: {self.outcome.kind.value}")
        if not isinstance(obs, TokenObservation):
            raise SessionError(f"expected TokenObservation, got {type(obs).__name__}")
        if obs.step != self.thinking_steps + 1:
            raise SessionError(f"expected step {self.thinking_steps + 1}, got {obs.step}")

        text = obs.token_text
        self._parts.append(text)
        self.thinking_steps = obs.step
        self.tokens_consumed += 1

        window = self._tail + text
        keep = len(self._marker) - 1
        self._tail = window[-keep:] if keep else ""
        if detect_marker(window, self._marker):
            self.monitor.finish()
            self.outcome = SessionOutcome(Outcome.ENDED_NATURALLY, obs.step)
            return SessionAction(
                ActionKind.FINISH,
                decision=ExitDecision(DecisionKind.NATURAL_END, obs.step),
                answer_budget=self.config.budget - obs.step,
            )

        decision = self.monitor.observe(obs)
        kind = decision.kind
        if kind is DecisionKind.CONTINUE:
            return KEEP_STREAMING
        if kind is DecisionKind.EARLY_EXIT:
            self.outcome = SessionOutcome(Outcome.EXITED_EARLY, decision.at_step, decision.rpdi)
        else:
            self.outcome = SessionOutcome(Outcome.BUDGET_EXHAUSTED, decision.at_step)
        remaining = self.config.budget - decision.at_step
        return SessionAction(
            ActionKind.ENACT_EXIT,
            decision=decision,
            continuation_prefix=self.continuation_prefix(),
            answer_budget=remaining,
            zero_remaining=remaining == 0,
        )

    def feed_answer(self, text: str) -> bool:
        """Count one answer-phase token. Returns False once the budget is spent."""
        if not self.outcome.terminal:
            raise SessionError("answer tokens before thinking ended")
        if self.tokens_consumed >= self.config.budget:
            return False
        self._answer_parts.append(text)
        self.tokens_consumed += 1
        return True

    def end_of_stream(self) -> SessionOutcome:
        """Upstream stopped. A still-pending session becomes ``stream-ended``."""
        if not self.outcome.terminal:
            self.monitor.finish()
            self.outcome = SessionOutcome(Outcome.STREAM_ENDED, self.thinking_steps)
        return self.outcome


def session_start(prompt: str, config: PolicyConfig | None = None) -> Session:
    return Session(prompt, config)
