"""Chat/completions streaming wire format: SSE framing and token extraction."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Any, AsyncIterator

DONE = "[DONE]"


class MissingLogprobs(ValueError):
    """Upstream chunk carried content but not the logprob field we asked for."""

    def __init__(self, field: str):
        self.field = field
        super().__init__(f"upstream response is missing {field}")


class ProtocolError(ValueError):
    pass


@dataclass(slots=True)
class UpstreamToken:
    text: str
    logprob: float | None
    top_logprobs: list[float] | None
    raw: Any = None  # the per-token logprob object, relayed to clients that asked for it


@dataclass(slots=True)
class ParsedChunk:
    tokens: list[UpstreamToken]
    finish_reason: str | None
    id: str | None
    model: str | None
    created: int | None


def sse_data(payload: Any) -> bytes:
    if isinstance(payload, str):
        body = payload
    else:
        body = json.dumps(payload, ensure_ascii=False, separators=(",", ":"))
    return f"data: {body}\n\n".encode()


async def iter_sse_data(lines: AsyncIterator[str]) -> AsyncIterator[str]:
    """Yield the ``data`` payload of each server-sent event."""
    buf: list[str] = []
    async for line in lines:
        if line == "":
            if buf:
                yield "\n".join(buf)
                buf = []
            continue
        if line.startswith(":"):
            continue
        name, _, value = line.partition(":")
        if name == "data":
            buf.append(value[1:] if value.startswith(" ") else value)
    if buf:
        yield "\n".join(buf)


def parse_chunk(data: str, style: str, require_logprobs: bool) -> ParsedChunk:
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"upstream sent invalid JSON: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise ProtocolError("upstream chunk is not an object")
    if "error" in obj:
        raise ProtocolError(f"upstream error: {obj['error']}")
    choices = obj.get("choices") or []
    tokens: list[UpstreamToken] = []
    finish = None
    if choices:
        choice = choices[0]
        finish = choice.get("finish_reason")
        if style == "chat":
            tokens = _chat_tokens(choice, require_logprobs)
        else:
            tokens = _completion_tokens(choice, require_logprobs)
    return ParsedChunk(tokens, finish, obj.get("id"), obj.get("model"), obj.get("created"))


def _chat_tokens(choice: dict, require_logprobs: bool) -> list[UpstreamToken]:
    content = (choice.get("delta") or {}).get("content")
    if not content:
        return []
    lp = choice.get("logprobs")
    entries = lp.get("content") if isinstance(lp, dict) else None
    if not entries:
        if require_logprobs:
            raise MissingLogprobs("choices[0].logprobs.content")
        return [UpstreamToken(content, None, None)]
    out = []
    for e in entries:
        top = e.get("top_logprobs")
        if require_logprobs and not top:
            raise MissingLogprobs("choices[0].logprobs.content[].top_logprobs")
        out.append(
            UpstreamToken(
                e.get("token", ""),
                e.get("logprob"),
                [float(t["logprob"]) for t in top] if top else None,
                e,
            )
        )
    return out


def _completion_tokens(choice: dict, require_logprobs: bool) -> list[UpstreamToken]:
    text = choice.get("text")
    if not text:
        return []
    lp = choice.get("logprobs")
    if not isinstance(lp, dict) or not lp.get("tokens"):
        if require_logprobs:
            raise MissingLogprobs("choices[0].logprobs")
        return [UpstreamToken(text, None, None)]
    toks = lp["tokens"]
    token_lps = lp.get("token_logprobs") or [None] * len(toks)
    tops = lp.get("top_logprobs")
    if require_logprobs and (not tops or len(tops) != len(toks) or not all(tops)):
        raise MissingLogprobs("choices[0].logprobs.top_logprobs")
    out = []
    for i, t in enumerate(toks):
        top = tops[i] if tops else None
        raw = {"token": t, "logprob": token_lps[i], "top_logprobs": top}
        out.append(UpstreamToken(t, token_lps[i], [float(v) for v in top.values()] if top else None, raw))
    return out


class ChunkWriter:
    """Builds client-facing chunks in the same dialect as the upstream."""

    def __init__(self, style: str, id: str | None = None, model: str | None = None):
        self.style = style
        self.id = id or f"rpdi-{int(time.time() * 1000)}"
        self.model = model or "unknown"
        self.created = int(time.time())

    def adopt(self, chunk: ParsedChunk) -> None:
        if chunk.id:
            self.id = chunk.id
        if chunk.model:
            self.model = chunk.model
        if chunk.created:
            self.created = chunk.created

    def token(self, text: str, logprobs: Any = None, annotation: dict | None = None) -> dict:
        if self.style == "chat":
            choice: dict[str, Any] = {"index": 0, "delta": {"content": text}, "finish_reason": None}
            if logprobs is not None:
                choice["logprobs"] = {"content": [logprobs]}
            obj = {"id": self.id, "object": "chat.completion.chunk", "created": self.created,
                   "model": self.model, "choices": [choice]}
        else:
            choice = {"index": 0, "text": text, "finish_reason": None}
            if logprobs is not None:
                choice["logprobs"] = {
                    "tokens": [logprobs["token"]],
                    "token_logprobs": [logprobs["logprob"]],
                    "top_logprobs": [logprobs["top_logprobs"]],
                }
            obj = {"id": self.id, "object": "text_completion", "created": self.created,
                   "model": self.model, "choices": [choice]}
        if annotation is not None:
            obj["rpdi"] = annotation
        return obj

    def finish(self, reason: str) -> dict:
        if self.style == "chat":
            choice: dict[str, Any] = {"index": 0, "delta": {}, "finish_reason": reason}
            kind = "chat.completion.chunk"
        else:
            choice = {"index": 0, "text": "", "finish_reason": reason}
            kind = "text_completion"
        return {"id": self.id, "object": kind, "created": self.created, "model": self.model,
                "choices": [choice]}

    def event(self, **fields: Any) -> dict:
        return {"id": self.id, "object": "rpdi.event", "created": self.created, "model": self.model,
                "choices": [], "rpdi_event": fields}

    def completion(self, text: str, reason: str, extra: dict | None = None) -> dict:
        """Non-streaming response body."""
        if self.style == "chat":
            choice: dict[str, Any] = {"index": 0, "message": {"role": "assistant", "content": text},
                                      "finish_reason": reason}
            kind = "chat.completion"
        else:
            choice = {"index": 0, "text": text, "finish_reason": reason}
            kind = "text_completion"
        obj = {"id": self.id, "object": kind, "created": self.created, "model": self.model,
               "choices": [choice]}
        if extra:
            obj.update(extra)
        return obj


def error_body(kind: str, message: str, **details: Any) -> dict:
    err: dict[str, Any] = {"type": kind, "message": message}
    err.update(details)
    return {"error": err}
