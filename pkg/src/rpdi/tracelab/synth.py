"""Deterministic synthetic reasoning traces for fixtures and fuzzing.

A trace is a stream of filler words at a low baseline entropy, with boundary
tokens at a fixed spacing, optional high-entropy regions made of transition
words ("Wait", "But", ...), an optional naturally written termination marker
(split across two tokens), and a short answer.
"""
from __future__ import annotations

import functools
import math
import random
from dataclasses import asdict, dataclass, replace

from rpdi.entropy import TailPolicy, entropy_from_topk_logprobs
from rpdi.tracelab.schema import SCHEMA_VERSION, Trace, TraceRecord

FILLER = (
    " the", " so", " we", " have", " then", " this", " is", " a", " value", " of",
    " x", " y", " and", " to", " get", " term", " sum", " it", " that", " each",
    " two", " three", " times", " plus", " minus", " equals", " first", " next", " step", " now",
    " case", " number", " side", " root", " since", " let", " us", " check", " factor", " both",
)
TRANSITIONS = (" Wait", " But", " Wait", " But", " Alternatively", " Hmm")
BOUNDARIES = (".", ".\n\n", "?")
ANSWER = ("\n\n", "The", " answer", " is", " ", "4", "2", ".")
LOGPROB_DECIMALS = 6
# targets are quantised so the bisection below can be memoised
TARGET_DECIMALS = 4


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class SpikeRegion:
    start: int
    end: int  # inclusive
    entropy: float
    every: int = 1


@dataclass(frozen=True)
class SynthProfile:
    name: str = "custom"
    seed: int = 0
    length: int = 1000
    baseline: float = 0.3
    jitter: float = 0.05
    spikes: tuple[SpikeRegion, ...] = ()
    boundary_every: int = 16
    natural_end: bool = True
    answer_length: int = 8
    top_k: int = 8
    tail_mass: float = 1.0
    emit_logprobs: bool = True
    marker: str = "</think>"
    prompt: str = "Question: what is six times seven?\n<think>\n"
    model: str = "synthetic"
    # chance that a filler token becomes a transition word at transition_entropy
    transition_rate: float = 0.0
    transition_entropy: float = 1.5

    def validate(self) -> None:
        if self.length < 1:
            raise ProfileError("length must be >= 1")
        if self.baseline < 0 or not 0 <= self.jitter <= self.baseline:
            raise ProfileError("need baseline >= 0 and 0 <= jitter <= baseline")
        if self.boundary_every < 0:
            raise ProfileError("boundary_every must be >= 0 (0 disables)")
        if not 0 < self.tail_mass <= 1:
            raise ProfileError("tail_mass must be in (0, 1]")
        if self.top_k < 1:
            raise ProfileError("top_k must be >= 1")
        if not 0 <= self.transition_rate <= 1:
            raise ProfileError("transition_rate must be in [0, 1]")
        if self.answer_length < 0:
            raise ProfileError("answer_length must be >= 0")
        for r in self.spikes:
            if not 1 <= r.start <= r.end <= self.length or r.every < 1 or r.entropy < 0:
                raise ProfileError(f"bad spike region {r}")
        if self.emit_logprobs:
            cap = math.log(self.top_k)
            peaks = [self.baseline + self.jitter, self.transition_entropy] + [r.entropy for r in self.spikes]
            if max(peaks) >= cap:
                raise ProfileError(
                    f"entropy {max(peaks):.3f} not representable with top_k={self.top_k} (< {cap:.3f})"
                )


def _family_entropy(beta: float, k: int) -> float:
    w = [math.exp(-beta * j) for j in range(k)]
    z = math.fsum(w)
    return -math.fsum((x / z) * (-beta * j - math.log(z)) for j, x in enumerate(w))


@functools.lru_cache(maxsize=1 << 14)
def _logprobs_for(target: float, k: int, tail_mass: float) -> tuple[float, ...]:
    """Top-k logprobs from ``-beta * rank`` logits, with ``beta`` solved by bisection."""
    if k == 1:
        lps = [0.0]
    else:
        lo, hi = 0.0, 60.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if _family_entropy(mid, k) > target:
                lo = mid
            else:
                hi = mid
        beta = 0.5 * (lo + hi)
        logits = [-beta * j for j in range(k)]
        log_z = math.log(math.fsum(math.exp(x) for x in logits))
        lps = [x - log_z for x in logits]
    shift = math.log(tail_mass)
    return tuple(round(min(lp + shift, 0.0), LOGPROB_DECIMALS) for lp in lps)


def synth_trace(profile: SynthProfile) -> Trace:
    profile.validate()
    rng = random.Random(profile.seed)
    spike_at: dict[int, float] = {}
    for region in profile.spikes:
        for s in range(region.start, region.end + 1, region.every):
            spike_at[s] = region.entropy

    plan: list[tuple[str, float, str]] = []
    for step in range(1, profile.length + 1):
        if profile.boundary_every and step % profile.boundary_every == 0:
            text = rng.choice(BOUNDARIES)
            h = profile.baseline + rng.uniform(-profile.jitter, profile.jitter)
        elif step in spike_at:
            text = rng.choice(TRANSITIONS)
            h = spike_at[step]
        elif profile.transition_rate and rng.random() < profile.transition_rate:
            text = rng.choice(TRANSITIONS)
            h = profile.transition_entropy
        else:
            text = rng.choice(FILLER)
            h = profile.baseline + rng.uniform(-profile.jitter, profile.jitter)
        plan.append((text, round(max(h, 0.0), TARGET_DECIMALS), "thinking"))

    if profile.natural_end:
        cut = max(1, len(profile.marker) // 2)
        for piece in (profile.marker[:cut], profile.marker[cut:]):
            plan.append((piece, profile.baseline, "thinking"))
    answer = (ANSWER * (profile.answer_length // len(ANSWER) + 1))[: profile.answer_length]
    for text in answer:
        plan.append((text, profile.baseline, "answer"))

    vocab = {t: i for i, t in enumerate(FILLER + TRANSITIONS + BOUNDARIES + ANSWER)}
    records = []
    for step, (text, h, phase) in enumerate(plan, start=1):
        token_id = vocab.get(text)
        if profile.emit_logprobs:
            lps = _logprobs_for(h, profile.top_k, profile.tail_mass)
            alts = [text] + [f"<alt{j}>" for j in range(1, profile.top_k)]
            top = list(zip(alts, lps))
            entropy = round(entropy_from_topk_logprobs(lps, TailPolicy.RENORMALIZE), 12)
            records.append(TraceRecord(step, text, token_id, entropy, top, phase))
        else:
            records.append(TraceRecord(step, text, token_id, round(h, 12), None, phase))

    profile_meta = asdict(profile)
    profile_meta["spikes"] = [asdict(r) for r in profile.spikes]
    meta = {
        "schema": SCHEMA_VERSION,
        "model": profile.model,
        "tail_policy": TailPolicy.RENORMALIZE.value,
        "tokenizer": "synthetic-words",
        "prompt": profile.prompt,
        "profile": profile_meta,
        "planted_spikes": [[r.start, r.end] for r in profile.spikes],
    }
    return Trace(records, meta, f"{profile.name}-s{profile.seed}")


_PRESETS: dict[str, dict] = {
    "flat": dict(length=2000),
    "natural": dict(length=700),
    "spike": dict(length=3000, spikes=(SpikeRegion(1500, 2300, 1.9),)),
    "overthink": dict(length=3000, transition_rate=0.02, spikes=(SpikeRegion(1800, 2600, 1.9),)),
    "budget": dict(length=17000),
    "truncated": dict(length=1500, natural_end=False, answer_length=0),
    "longtail": dict(
        length=10000,
        baseline=0.01,
        jitter=0.0,
        transition_rate=0.05,
        transition_entropy=5.0,
        boundary_every=0,
        natural_end=False,
        answer_length=0,
        emit_logprobs=False,
    ),
}
PROFILE_NAMES = tuple(_PRESETS)


def builtin_profile(name: str, seed: int = 0, **overrides) -> SynthProfile:
    """Named presets, sized for the default policy (W=512, 16k budget)."""
    if name not in _PRESETS:
        raise ProfileError(f"unknown profile {name!r}; choose from {', '.join(PROFILE_NAMES)}")
    fields = {"name": name, "seed": seed, **_PRESETS[name], **overrides}
    return SynthProfile(**fields)


def with_seed(profile: SynthProfile, seed: int) -> SynthProfile:
    return replace(profile, seed=seed)
