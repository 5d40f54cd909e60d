"""Scripted upstream that streams recorded traces over the chat/completions API.

Routing: the request's ``model`` names a trace. A first request streams the
trace from the start (at most ``max_tokens`` records). A continuation (raw
prompt longer than the trace prompt, or a chat request ending in an assistant
message) streams the trace's answer-phase records.

Every request, completion and client disconnect is appended to ``log`` so
tests can count cancels and continuations.
"""
from __future__ import annotations

import asyncio
import threading
import time
from typing import Any, Sequence

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, StreamingResponse

from rpdi.gateway.protocol import DONE, error_body, sse_data
from rpdi.tracelab.schema import Trace, TraceRecord


class MockUpstream:
    def __init__(
        self,
        traces: Sequence[Trace],
        *,
        token_delay: float = 0.0,
        omit_logprobs: bool = False,
        reject_continuations: bool = False,
    ) -> None:
        self.traces = {t.name: t for t in traces}
        self.token_delay = token_delay
        self.omit_logprobs = omit_logprobs
        self.reject_continuations = reject_continuations
        self.log: list[dict[str, Any]] = []
        self._lock = threading.Lock()
        self.app = self._build_app()

    def _record(self, **event: Any) -> None:
        event["t"] = time.monotonic()
        with self._lock:
            self.log.append(event)

    def events(self, kind: str, trace: str | None = None) -> list[dict[str, Any]]:
        with self._lock:
            return [e for e in self.log if e["kind"] == kind and (trace is None or e["trace"] == trace)]

    def clear_log(self) -> None:
        with self._lock:
            self.log.clear()

    def _find(self, body: dict) -> Trace | None:
        return self.traces.get(body.get("model", ""))

    def _build_app(self) -> FastAPI:
        app = FastAPI(title="rpdi mock upstream")

        @app.get("/v1/models")
        async def models() -> dict:
            return {"object": "list", "data": [{"id": n, "object": "model"} for n in sorted(self.traces)]}

        @app.get("/health")
        async def health() -> dict:
            return {"status": "ok"}

        @app.post("/v1/chat/completions")
        async def chat(request: Request):
            body = await request.json()
            msgs = body.get("messages") or []
            continuation = bool(msgs) and msgs[-1].get("role") == "assistant"
            return self._respond(body, "chat", continuation)

        @app.post("/v1/completions")
        async def completions(request: Request):
            body = await request.json()
            trace = self._find(body)
            prompt = body.get("prompt", "")
            continuation = trace is not None and isinstance(prompt, str) and len(prompt) > len(trace.prompt)
            return self._respond(body, "raw-completion", continuation)

        return app

    def _respond(self, body: dict, style: str, continuation: bool):
        trace = self._find(body)
        if trace is None:
            return JSONResponse(error_body("model_not_found", f"no trace named {body.get('model')!r}"), 404)
        max_tokens = int(body.get("max_tokens") or len(trace.records))
        kind = "continuation" if continuation else "request"
        self._record(kind=kind, trace=trace.name, max_tokens=max_tokens, style=style, body=body)
        if continuation and self.reject_continuations:
            return JSONResponse(error_body("rejected", "continuation rejected by mock"), 400)
        available = trace.answer_records() if continuation else trace.records
        records = available[:max_tokens]
        finish = "length" if len(available) > max_tokens else "stop"
        if style == "chat":
            k = int(body.get("top_logprobs") or 0) if body.get("logprobs") else 0
        else:
            k = int(body.get("logprobs") or 0)
        if not body.get("stream"):
            text = "".join(r.token_text for r in records)
            self._record(kind="complete", trace=trace.name, tokens=len(records))
            return JSONResponse(_full_response(trace, style, text, finish))
        return StreamingResponse(
            self._stream(trace, records, style, k, finish, kind),
            media_type="text/event-stream",
        )

    async def _stream(self, trace: Trace, records: list[TraceRecord], style: str, k: int, finish: str, kind: str):
        sent = 0
        done = False
        try:
            for rec in records:
                yield sse_data(_token_chunk(trace, rec, style, 0 if self.omit_logprobs else k))
                sent += 1
                await asyncio.sleep(self.token_delay)
            yield sse_data(_finish_chunk(trace, style, finish))
            yield sse_data(DONE)
            done = True
        finally:
            self._record(kind="complete" if done else "cancel", trace=trace.name, stream=kind, tokens=sent)


def _top(rec: TraceRecord, k: int) -> list[tuple[str, float]]:
    if not rec.top_logprobs:
        raise ValueError(f"trace record {rec.step} has no top_logprobs to serve")
    return rec.top_logprobs[:k]


def _token_chunk(trace: Trace, rec: TraceRecord, style: str, k: int) -> dict:
    base = {"id": f"mock-{trace.name}", "created": 0, "model": trace.name}
    if style == "chat":
        choice: dict[str, Any] = {"index": 0, "delta": {"content": rec.token_text}, "finish_reason": None}
        if k:
            top = _top(rec, k)
            lp = dict(top).get(rec.token_text, top[0][1])
            choice["logprobs"] = {"content": [{
                "token": rec.token_text,
                "logprob": lp,
                "top_logprobs": [{"token": t, "logprob": v} for t, v in top],
            }]}
        return {**base, "object": "chat.completion.chunk", "choices": [choice]}
    choice = {"index": 0, "text": rec.token_text, "finish_reason": None}
    if k:
        top = _top(rec, k)
        lp = dict(top).get(rec.token_text, top[0][1])
        choice["logprobs"] = {
            "tokens": [rec.token_text],
            "token_logprobs": [lp],
            "top_logprobs": [dict(top)],
        }
    return {**base, "object": "text_completion", "choices": [choice]}


def _finish_chunk(trace: Trace, style: str, reason: str) -> dict:
    base = {"id": f"mock-{trace.name}", "created": 0, "model": trace.name}
    if style == "chat":
        return {**base, "object": "chat.completion.chunk",
                "choices": [{"index": 0, "delta": {}, "finish_reason": reason}]}
    return {**base, "object": "text_completion", "choices": [{"index": 0, "text": "", "finish_reason": reason}]}


def _full_response(trace: Trace, style: str, text: str, reason: str) -> dict:
    base = {"id": f"mock-{trace.name}", "created": 0, "model": trace.name}
    if style == "chat":
        return {**base, "object": "chat.completion",
                "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": reason}]}
    return {**base, "object": "text_completion", "choices": [{"index": 0, "text": text, "finish_reason": reason}]}
