"""JSONL trace format.

One JSON object per line, one line per generated token::

    {"step": 1, "token_text": " So", "token_id": 812, "entropy_nats": 0.31,
     "top_logprobs": [[" So", -0.05], [" Well", -3.1]], "phase": "thinking",
     "meta": {"schema": "rpdi-trace/1", "model": "...", "tail_policy": "renormalize"}}

``meta`` appears on the first record only. Every record carries
``entropy_nats``, ``top_logprobs`` or both; when both are present they must
agree within 1e-6 under the trace's tail policy, and ``top_logprobs`` is
what replay uses.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator

from rpdi.entropy import EntropyError, TailPolicy, TokenObservation, entropy_from_topk_logprobs

SCHEMA_VERSION = "rpdi-trace/1"
AGREEMENT_TOLERANCE = 1e-6
PHASES = ("thinking", "answer")
_FIELDS = {"step", "token_text", "token_id", "entropy_nats", "top_logprobs", "phase", "meta"}


class TraceError(ValueError):
    """Malformed trace. ``record`` is the 1-based line number, when known."""

    def __init__(self, message: str, record: int | None = None, source: str | None = None):
        self.message = message
        self.record = record
        self.source = source
        where = f"{source or 'trace'}:{record}: " if record is not None else ""
        super().__init__(where + message)


@dataclass(slots=True)
class TraceRecord:
    step: int
    token_text: str
    token_id: int | None = None
    entropy_nats: float | None = None
    top_logprobs: list[tuple[str, float]] | None = None
    phase: str = "thinking"

    def entropy(self, tail_policy: TailPolicy | str = TailPolicy.RENORMALIZE) -> float:
        if self.top_logprobs:
            return entropy_from_topk_logprobs([lp for _, lp in self.top_logprobs], tail_policy)
        assert self.entropy_nats is not None
        return self.entropy_nats

    def to_json(self, meta: dict | None = None) -> dict:
        out: dict = {"step": self.step, "token_text": self.token_text}
        if self.token_id is not None:
            out["token_id"] = self.token_id
        if self.entropy_nats is not None:
            out["entropy_nats"] = self.entropy_nats
        if self.top_logprobs is not None:
            out["top_logprobs"] = [[t, lp] for t, lp in self.top_logprobs]
        out["phase"] = self.phase
        if meta is not None:
            out["meta"] = meta
        return out


@dataclass
class Trace:
    records: list[TraceRecord]
    meta: dict = field(default_factory=dict)
    name: str = ""
    _entropy_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def tail_policy(self) -> TailPolicy:
        return TailPolicy(self.meta.get("tail_policy", TailPolicy.RENORMALIZE.value))

    @property
    def prompt(self) -> str:
        return self.meta.get("prompt", "")

    def __len__(self) -> int:
        return len(self.records)

    def entropies(self, tail_policy: TailPolicy | str | None = None) -> list[float]:
        policy = TailPolicy(tail_policy) if tail_policy is not None else self.tail_policy
        cached = self._entropy_cache.get(policy)
        if cached is None:
            cached = [r.entropy(policy) for r in self.records]
            self._entropy_cache[policy] = cached
        return cached

    @property
    def thinking_length(self) -> int:
        return sum(1 for r in self.records if r.phase == "thinking")

    def answer_records(self) -> list[TraceRecord]:
        return [r for r in self.records if r.phase == "answer"]

    def observations(self, tail_policy: TailPolicy | str | None = None) -> Iterator[TokenObservation]:
        for rec, h in zip(self.records, self.entropies(tail_policy)):
            yield TokenObservation(rec.step, rec.token_id, rec.token_text, h)

    def to_jsonl(self) -> str:
        buf = io.StringIO()
        write_trace(self, buf)
        return buf.getvalue()

    def dump(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            write_trace(self, fh)


def _num(value, what: str, lineno: int) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TraceError(f"{what} must be a number, got {value!r}", lineno)
    value = float(value)
    if math.isnan(value):
        raise TraceError(f"{what} is NaN", lineno)
    return value


def parse_record(obj: object, lineno: int, expected_step: int, tail_policy: TailPolicy) -> TraceRecord:
    if not isinstance(obj, dict):
        raise TraceError("record is not a JSON object", lineno)
    unknown = set(obj) - _FIELDS
    if unknown:
        raise TraceError(f"unknown field(s): {', '.join(sorted(unknown))}", lineno)
    step = obj.get("step")
    if isinstance(step, bool) or not isinstance(step, int):
        raise TraceError(f"step must be an integer, got {step!r}", lineno)
    if step != expected_step:
        raise TraceError(f"step gap: expected {expected_step}, got {step}", lineno)
    text = obj.get("token_text")
    if not isinstance(text, str):
        raise TraceError("token_text must be a string", lineno)
    token_id = obj.get("token_id")
    if token_id is not None and (isinstance(token_id, bool) or not isinstance(token_id, int)):
        raise TraceError(f"token_id must be an integer, got {token_id!r}", lineno)
    phase = obj.get("phase", "thinking")
    if phase not in PHASES:
        raise TraceError(f"phase must be one of {PHASES}, got {phase!r}", lineno)

    entropy = obj.get("entropy_nats")
    if entropy is not None:
        entropy = _num(entropy, "entropy_nats", lineno)
        if entropy < 0 or math.isinf(entropy):
            raise TraceError(f"entropy_nats must be finite and >= 0, got {entropy!r}", lineno)

    top = obj.get("top_logprobs")
    if top is not None:
        if not isinstance(top, list) or not top:
            raise TraceError("top_logprobs must be a non-empty list", lineno)
        pairs = []
        for item in top:
            if not isinstance(item, (list, tuple)) or len(item) != 2 or not isinstance(item[0], str):
                raise TraceError("top_logprobs entries must be [token_text, logprob]", lineno)
            pairs.append((item[0], _num(item[1], "logprob", lineno)))
        top = pairs

    if entropy is None and top is None:
        raise TraceError("record needs entropy_nats or top_logprobs", lineno)

    rec = TraceRecord(step, text, token_id, entropy, top, phase)
    if top is not None:
        try:
            derived = rec.entropy(tail_policy)
        except EntropyError as exc:
            raise TraceError(str(exc), lineno) from None
        if entropy is not None and abs(derived - entropy) > AGREEMENT_TOLERANCE:
            raise TraceError(
                f"entropy_nats {entropy!r} disagrees with top_logprobs ({derived!r}) "
                f"under {tail_policy.value}",
                lineno,
            )
    return rec


def read_trace(lines: Iterable[str], name: str = "") -> Trace:
    records: list[TraceRecord] = []
    meta: dict = {}
    tail_policy = TailPolicy.RENORMALIZE
    seen_answer = False
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            raise TraceError("blank line", lineno, name or None)
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceError(f"invalid JSON: {exc.msg}", lineno, name or None) from None
        try:
            if lineno == 1 and isinstance(obj, dict) and "meta" in obj:
                meta = obj["meta"]
                if not isinstance(meta, dict):
                    raise TraceError("meta must be an object", lineno)
                schema = meta.get("schema", SCHEMA_VERSION)
                if schema != SCHEMA_VERSION:
                    raise TraceError(f"unsupported schema {schema!r}", lineno)
                try:
                    tail_policy = TailPolicy(meta.get("tail_policy", tail_policy.value))
                except ValueError:
                    raise TraceError(f"unknown tail_policy {meta.get('tail_policy')!r}", lineno) from None
            elif isinstance(obj, dict) and "meta" in obj:
                raise TraceError("meta is only allowed on the first record", lineno)
            rec = parse_record(obj, lineno, len(records) + 1, tail_policy)
        except TraceError as exc:
            if exc.source is None and name:
                raise TraceError(exc.message, exc.record, name) from None
            raise
        if rec.phase == "answer":
            seen_answer = True
        elif seen_answer:
            raise TraceError("thinking record after answer phase began", lineno, name or None)
        records.append(rec)
    if not records:
        raise TraceError("trace is empty", None, name or None)
    return Trace(records, meta, name)


def load_trace(path: str | Path) -> Trace:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        trace = read_trace(fh, path.name)
    # errors cite the file name; the trace itself is named by the stem
    trace.name = path.stem
    return trace


def loads_trace(text: str, name: str = "") -> Trace:
    return read_trace(text.splitlines(), name)


def write_trace(trace: Trace, fh: IO[str]) -> None:
    meta = dict(trace.meta)
    meta.setdefault("schema", SCHEMA_VERSION)
    for i, rec in enumerate(trace.records):
        obj = rec.to_json(meta if i == 0 else None)
        fh.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")))
        fh.write("\n")


def load_traces(paths: Iterable[str | Path]) -> list[Trace]:
    """Load traces from files and directories (``*.jsonl``, sorted by name)."""
    out = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            out.extend(load_trace(f) for f in sorted(p.glob("*.jsonl")))
        else:
            out.append(load_trace(p))
    return out
