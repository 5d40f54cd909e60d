"""Policy configuration, decision types, and boundary matching for the monitor."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import AbstractSet, Iterable, NamedTuple

from rpdi.entropy import TailPolicy

DEFAULT_WINDOW = 512
DEFAULT_THRESHOLD = 2.0
DEFAULT_BUDGET = 16384
EXTENDED_BUDGET = 32768
DEFAULT_ANSWER_RESERVE = 256
DEFAULT_GTF_EPSILON = 1e-9
DEFAULT_REBUILD_INTERVAL = 1 << 16
DEFAULT_MARKER = "</think>"
DEFAULT_BOUNDARY_SET = frozenset({"\n\n", ".\n\n", ". ", ".", "?", "!", ";"})

BOUNDARY_CACHE_LIMIT = 1 << 16


class ConfigError(ValueError):
    """Raised for an invalid :class:`PolicyConfig`."""


class MonitorError(RuntimeError):
    """Raised when observations arrive out of order or after the thinking phase."""


class Variant(str, enum.Enum):
    STANDARD = "standard"
    NO_GTF = "no-gtf"
    NO_LTF = "no-ltf"
    NO_BTM = "no-btm"


class Phase(str, enum.Enum):
    THINKING = "thinking"
    ANSWERING = "answering"
    TERMINATED = "terminated"


class DecisionKind(str, enum.Enum):
    CONTINUE = "continue"
    EARLY_EXIT = "early-exit"
    NATURAL_END = "natural-end"
    BUDGET_EXHAUSTED = "budget-exhausted"


class ExitDecision(NamedTuple):
    kind: DecisionKind
    at_step: int
    rpdi: float | None = None


@dataclass(frozen=True)
class PolicyConfig:
    """Early-exit policy parameters.

    ``budget`` is the total token budget for thinking plus answer.
    Thinking stops at ``budget - answer_reserve`` if no early exit fires, so
    an exhausted session still has ``answer_reserve`` tokens to answer with.
    A reserve of 0 stops at the budget itself with nothing left to answer.
    """

    window: int = DEFAULT_WINDOW
    threshold: float = DEFAULT_THRESHOLD
    boundary_set: AbstractSet[str] = field(default=DEFAULT_BOUNDARY_SET)
    budget: int = DEFAULT_BUDGET
    gtf_epsilon: float = DEFAULT_GTF_EPSILON
    variant: Variant = Variant.STANDARD
    tail_policy: TailPolicy = TailPolicy.RENORMALIZE
    termination_marker: str = DEFAULT_MARKER
    answer_reserve: int = DEFAULT_ANSWER_RESERVE
    rebuild_interval: int = DEFAULT_REBUILD_INTERVAL

    def __post_init__(self) -> None:
        object.__setattr__(self, "boundary_set", frozenset(self.boundary_set))
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "tail_policy", TailPolicy(self.tail_policy))
        self.validate()

    def validate(self) -> None:
        if isinstance(self.window, bool) or not isinstance(self.window, int) or self.window < 1:
            raise ConfigError(f"window must be a positive integer, got {self.window!r}")
        if not self.threshold > 0:
            raise ConfigError(f"threshold must be > 0, got {self.threshold!r}")
        if not isinstance(self.budget, int) or self.budget < 1:
            raise ConfigError(f"budget must be a positive integer, got {self.budget!r}")
        if not self.gtf_epsilon > 0:
            raise ConfigError(f"gtf_epsilon must be > 0, got {self.gtf_epsilon!r}")
        if not isinstance(self.answer_reserve, int) or not 0 <= self.answer_reserve < self.budget:
            raise ConfigError(
                f"answer_reserve must be in [0, budget={self.budget}), got {self.answer_reserve!r}; "
                "lower answer_reserve for small budgets"
            )
        if self.variant is Variant.STANDARD and self.budget <= self.window:
            raise ConfigError(f"budget ({self.budget}) must exceed window ({self.window})")
        if not self.termination_marker:
            raise ConfigError("termination_marker must be non-empty")
        if any(not isinstance(b, str) or b == "" for b in self.boundary_set):
            raise ConfigError("boundary_set members must be non-empty strings")
        if not isinstance(self.rebuild_interval, int) or self.rebuild_interval < 0:
            raise ConfigError("rebuild_interval must be a non-negative integer (0 disables)")

    @property
    def effective_window(self) -> int:
        return 1 if self.variant is Variant.NO_LTF else self.window

    @property
    def thinking_limit(self) -> int:
        return self.budget - self.answer_reserve

    @classmethod
    def extended(cls, **overrides) -> "PolicyConfig":
        """Profile for long-reasoning models (32k token budget)."""
        overrides.setdefault("budget", EXTENDED_BUDGET)
        return cls(**overrides)

    def with_(self, **changes) -> "PolicyConfig":
        return replace(self, **changes)


def is_boundary(token_text: str, boundary_set: Iterable[str]) -> bool:
    """True if ``token_text`` equals or ends with a boundary symbol.

    Matching is tried on the raw text and on the text with trailing
    whitespace stripped, so ``".\\n\\n"`` matches ``"."`` and ``"\\n\\n"``.
    """
    stripped = token_text.rstrip()
    for b in boundary_set:
        if token_text.endswith(b) or (stripped and stripped.endswith(b)):
            return True
    return False
