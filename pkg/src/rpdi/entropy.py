"""Shannon entropy of next-token distributions, in nats.

Accepts either a full probability distribution or the truncated top-k
logprob lists that serving APIs stream back.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

# Above this many entries, summation switches to math.fsum (exactly rounded).
COMPENSATED_THRESHOLD = 1024

SUM_TOLERANCE = 1e-6
LOGPROB_TOLERANCE = 1e-6


class EntropyError(ValueError):
    """Raised for malformed probability evidence."""


class TailPolicy(str, enum.Enum):
    IGNORE_TAIL = "ignore-tail"
    RENORMALIZE = "renormalize"


class DistKind(str, enum.Enum):
    FULL = "full"
    TOP_K = "top-k"


@dataclass(frozen=True)
class ProbDistribution:
    """A next-token distribution as ``(token_id, probability)`` pairs."""

    entries: Tuple[Tuple[int, float], ...]
    kind: DistKind = DistKind.FULL

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple((int(t), float(p)) for t, p in self.entries))
        object.__setattr__(self, "kind", DistKind(self.kind))
        _check_probs([p for _, p in self.entries], self.kind)

    @classmethod
    def from_probs(cls, probs: Sequence[float], kind: DistKind | str = DistKind.FULL) -> "ProbDistribution":
        return cls(tuple(enumerate(probs)), DistKind(kind))

    @property
    def probs(self) -> list[float]:
        return [p for _, p in self.entries]


def _check_probs(probs: Sequence[float], kind: DistKind) -> None:
    if len(probs) == 0:
        raise EntropyError("distribution has no entries")
    for p in probs:
        if not p >= 0.0:  # also catches NaN
            raise EntropyError(f"negative or NaN probability: {p!r}")
    total = math.fsum(probs)
    if kind is DistKind.FULL and abs(total - 1.0) > SUM_TOLERANCE:
        raise EntropyError(f"full distribution sums to {total!r}, expected 1")
    if kind is DistKind.TOP_K and total > 1.0 + SUM_TOLERANCE:
        raise EntropyError(f"top-k distribution sums to {total!r} > 1")


def _neg_plogp_sum(probs: Sequence[float]) -> float:
    terms = [p * math.log(p) for p in probs if p > 0.0]
    s = math.fsum(terms) if len(probs) > COMPENSATED_THRESHOLD else sum(terms)
    # p slightly above 1 (within tolerance) can push the sum a hair negative
    return max(0.0, -s)


def shannon_entropy(dist: ProbDistribution) -> float:
    """Entropy ``-sum p ln p`` of ``dist``; zero-probability entries contribute 0."""
    return _neg_plogp_sum(dist.probs)


def entropy_of_probs(probs: Sequence[float], kind: DistKind | str = DistKind.FULL) -> float:
    """Validate a bare probability vector and return its entropy."""
    probs = [float(p) for p in probs]
    _check_probs(probs, DistKind(kind))
    return _neg_plogp_sum(probs)


def entropy_from_topk_logprobs(
    logprobs: Sequence[float],
    tail_policy: TailPolicy | str = TailPolicy.RENORMALIZE,
) -> float:
    """Entropy from a truncated list of natural-log probabilities.

    ``ignore-tail`` sums ``-p ln p`` over the listed terms only, which
    understates entropy by whatever the missing mass would contribute.
    ``renormalize`` rescales the listed probabilities to sum to one first.
    """
    policy = TailPolicy(tail_policy)
    if len(logprobs) == 0:
        raise EntropyError("empty logprob list")
    lps = []
    for lp in logprobs:
        lp = float(lp)
        if math.isnan(lp) or lp > LOGPROB_TOLERANCE:
            raise EntropyError(f"logprob must be <= 0, got {lp!r}")
        lps.append(min(lp, 0.0))

    if policy is TailPolicy.IGNORE_TAIL:
        terms = [-math.exp(lp) * lp for lp in lps if lp != -math.inf]
        s = math.fsum(terms) if len(terms) > COMPENSATED_THRESHOLD else sum(terms)
        return max(0.0, s)

    top = max(lps)
    if top == -math.inf:
        raise EntropyError("all logprobs are -inf")
    shifted = [lp - top for lp in lps if lp != -math.inf]
    weights = [math.exp(x) for x in shifted]
    z = math.fsum(weights)
    log_z = math.log(z)
    # H = -sum q ln q with ln q = x - ln z and q = e^x / z
    inner = [w * x for w, x in zip(weights, shifted)]
    s = math.fsum(inner) if len(inner) > COMPENSATED_THRESHOLD else sum(inner)
    return max(0.0, log_z - s / z)


@dataclass(frozen=True, slots=True)
class TokenObservation:
    """One generated token and the entropy of the distribution it came from."""

    step: int
    token_id: int | None
    token_text: str
    entropy_nats: float

    def __post_init__(self) -> None:
        if self.step < 1:
            raise EntropyError(f"step must be >= 1, got {self.step}")
        if not self.entropy_nats >= 0.0 or math.isinf(self.entropy_nats):
            raise EntropyError(f"entropy must be finite and >= 0, got {self.entropy_nats!r}")


Evidence = Union[ProbDistribution, Sequence[float]]


def decode_observation(
    step: int,
    token_id: int | None,
    token_text: str,
    evidence: Evidence,
    tail_policy: TailPolicy | str = TailPolicy.RENORMALIZE,
) -> TokenObservation:
    """Build a :class:`TokenObservation`, computing entropy from ``evidence``.

    ``evidence`` is either a :class:`ProbDistribution` or a top-k logprob list.
    """
    if isinstance(evidence, ProbDistribution):
        h = shannon_entropy(evidence)
    else:
        h = entropy_from_topk_logprobs(evidence, tail_policy)
    return TokenObservation(step, token_id, token_text, h)
