"""Monitoring proxy in front of a chat/completions server.

Each client request gets its own :class:`~rpdi.session.Session`. Thinking
tokens are relayed as they arrive while their top-k logprobs feed the
monitor. When the monitor fires (or the thinking budget runs out) the
upstream stream is closed and a single continuation request is sent whose
prompt is the original prompt, the reasoning so far and the termination
marker. Its tokens are relayed as the answer.

Clients opt into per-token annotations with the ``X-RPDI-Annotate: 1``
header or ``"rpdi_annotate": true`` in the body. Annotated token chunks carry
an ``rpdi`` object; decision events arrive as chunks with
``"object": "rpdi.event"``.
"""
from __future__ import annotations

import contextlib
import json
import logging
from typing import Any, AsyncIterator

import httpx
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, StreamingResponse
from starlette.background import BackgroundTask

from rpdi.config import Settings
from rpdi.entropy import EntropyError, TokenObservation, entropy_from_topk_logprobs
from rpdi.gateway.protocol import (
    DONE,
    ChunkWriter,
    MissingLogprobs,
    ParsedChunk,
    ProtocolError,
    error_body,
    iter_sse_data,
    parse_chunk,
    sse_data,
)
from rpdi.session import ActionKind, Session, SessionAction

log = logging.getLogger("rpdi.gateway")

ANNOTATE_HEADER = "x-rpdi-annotate"
ANNOTATE_FIELD = "rpdi_annotate"
# request headers relayed upstream; credentials pass straight through
FORWARD_HEADERS = ("authorization", "openai-organization", "openai-project")


def _truthy(value: Any) -> bool:
    if isinstance(value, str):
        return value.strip().lower() in ("1", "true", "yes", "on")
    return bool(value)


def _error(status: int, kind: str, message: str, **details: Any) -> JSONResponse:
    return JSONResponse(error_body(kind, message, **details), status_code=status)


class _UpstreamFailure(Exception):
    def __init__(self, status: int, kind: str, message: str, **details: Any):
        super().__init__(message)
        self.status = status
        self.kind = kind
        self.details = details

    def response(self) -> JSONResponse:
        return _error(self.status, self.kind, str(self), **self.details)


class _Upstream:
    """One open upstream stream, read chunk by chunk."""

    def __init__(self, response: httpx.Response, style: str):
        self.response = response
        self.style = style
        self._data = iter_sse_data(response.aiter_lines())

    async def next_chunk(self, require_logprobs: bool) -> ParsedChunk | None:
        async for data in self._data:
            if data.strip() == DONE:
                return None
            return parse_chunk(data, self.style, require_logprobs)
        return None

    async def close(self) -> None:
        await self.response.aclose()


class _Run:
    """Per-request state: session, writer and the live upstream stream."""

    def __init__(self, gateway: "Gateway", body: dict, headers: dict[str, str], annotate: bool, prompt: str):
        self.gw = gateway
        self.body = body
        self.headers = headers
        self.annotate = annotate
        self.style = gateway.settings.upstream.completion_style
        self.policy = gateway.settings.policy
        self.session = Session(prompt, self.policy)
        self.writer = ChunkWriter(self.style, model=body.get("model"))
        self.want_logprobs = bool(body.get("logprobs"))
        self.upstream: _Upstream | None = None
        self._first: ParsedChunk | None = None
        self.continuations = 0

    # -- upstream requests -------------------------------------------------

    def _first_body(self) -> dict:
        body = dict(self.body)
        body["stream"] = True
        body["max_tokens"] = self.policy.budget
        body.pop("max_completion_tokens", None)
        body.pop("stream_options", None)
        k = self.gw.settings.upstream.logprobs_top_k
        if self.style == "chat":
            body["logprobs"] = True
            body["top_logprobs"] = k
        else:
            body["logprobs"] = k
        return body

    def _continuation_body(self, answer_budget: int) -> dict:
        body = dict(self.body)
        body["stream"] = True
        body["max_tokens"] = answer_budget
        body.pop("max_completion_tokens", None)
        body.pop("stream_options", None)
        k = self.gw.settings.upstream.logprobs_top_k
        if self.style == "chat":
            assistant = self.session.reasoning + self.policy.termination_marker
            body["messages"] = list(self.body["messages"]) + [{"role": "assistant", "content": assistant}]
            body["continue_final_message"] = True
            body["add_generation_prompt"] = False
            if self.want_logprobs:
                body["logprobs"] = True
                body["top_logprobs"] = self.body.get("top_logprobs") or k
            else:
                body.pop("logprobs", None)
                body.pop("top_logprobs", None)
        else:
            body["prompt"] = self.session.continuation_prefix()
            if not self.want_logprobs:
                body.pop("logprobs", None)
        return body

    async def _open(self, body: dict) -> _Upstream:
        client = self.gw.client
        url = self.gw.settings.upstream.endpoint
        try:
            resp = await client.send(client.build_request("POST", url, json=body, headers=self.headers), stream=True)
        except httpx.HTTPError as exc:
            raise _UpstreamFailure(502, "upstream_unreachable", f"cannot reach upstream at {url}: {exc}") from None
        if resp.status_code != 200:
            raw = await resp.aread()
            await resp.aclose()
            try:
                detail: Any = json.loads(raw)
            except ValueError:
                detail = raw.decode("utf-8", "replace")
            raise _UpstreamFailure(502, "upstream_error", f"upstream returned HTTP {resp.status_code}",
                                   upstream_status=resp.status_code, upstream_body=detail)
        return _Upstream(resp, self.style)

    async def start(self) -> None:
        """Open the thinking stream and read up to the first chunk, so that
        connection problems and missing logprobs become a plain 502."""
        self.upstream = await self._open(self._first_body())
        try:
            self._first = await self.upstream.next_chunk(require_logprobs=True)
        except MissingLogprobs as exc:
            await self.upstream.close()
            raise _UpstreamFailure(502, "missing_logprobs", str(exc), field=exc.field) from None
        except ProtocolError as exc:
            await self.upstream.close()
            raise _UpstreamFailure(502, "upstream_protocol", str(exc)) from None
        except httpx.HTTPError as exc:
            await self.upstream.close()
            raise _UpstreamFailure(502, "upstream_unreachable", f"upstream stream failed: {exc}") from None

    # -- streaming ---------------------------------------------------------

    def _annotation(self, step: int, entropy: float, action: SessionAction) -> dict:
        mon = self.session.monitor
        ann: dict[str, Any] = {"step": step, "entropy": entropy}
        if mon.step == step:
            ann["ltf"] = mon.ltf()
            ann["gtf"] = mon.gtf()
            ann["rpdi"] = mon.rpdi()
        if action.decision is not None:
            ann["decision"] = action.decision.kind.value
        return ann

    def _outcome_event(self) -> dict:
        o = self.session.outcome
        return self.writer.event(event="outcome", kind=o.kind.value, step=o.step, rpdi=o.rpdi,
                                 tokens=self.session.tokens_consumed)

    async def _chunks(self) -> AsyncIterator[ParsedChunk]:
        assert self.upstream is not None
        if self._first is not None:
            first, self._first = self._first, None
            yield first
        while True:
            chunk = await self.upstream.next_chunk(require_logprobs=not self.session.outcome.terminal)
            if chunk is None:
                return
            yield chunk

    async def events(self) -> AsyncIterator[Any]:
        """Client-facing payloads: chunk dicts, then ``[DONE]``."""
        finish = "stop"
        try:
            try:
                async for chunk in self._chunks():
                    self.writer.adopt(chunk)
                    for tok in chunk.tokens:
                        if self.session.outcome.terminal:
                            if not self.session.feed_answer(tok.text):
                                finish = "length"
                                break
                            yield self.writer.token(tok.text, tok.raw if self.want_logprobs else None)
                            continue
                        h = entropy_from_topk_logprobs(tok.top_logprobs, self.policy.tail_policy)
                        step = self.session.thinking_steps + 1
                        action = self.session.feed(TokenObservation(step, None, tok.text, h))
                        ann = self._annotation(step, h, action) if self.annotate else None
                        yield self.writer.token(tok.text, tok.raw if self.want_logprobs else None, ann)
                        if action.kind is ActionKind.ENACT_EXIT:
                            await self.upstream.close()
                            async for item in self._enact_exit(action):
                                yield item
                            return
                    else:
                        if chunk.finish_reason:
                            finish = chunk.finish_reason
                        continue
                    break
            except (MissingLogprobs, ProtocolError, EntropyError, httpx.HTTPError) as exc:
                field = getattr(exc, "field", None)
                kind = "missing_logprobs" if field else "upstream_protocol"
                yield error_body(kind, str(exc), **({"field": field} if field else {}),
                                 partial_reasoning=self.session.reasoning)
                yield DONE
                return
            self.session.end_of_stream()
            if self.annotate:
                yield self._outcome_event()
            yield self.writer.finish(finish)
            yield DONE
        finally:
            if self.upstream is not None:
                await self.upstream.close()

    async def _enact_exit(self, action: SessionAction) -> AsyncIterator[Any]:
        decision = action.decision
        assert decision is not None and action.answer_budget is not None
        if self.annotate:
            yield self.writer.event(
                event=decision.kind.value, step=decision.at_step, rpdi=decision.rpdi,
                answer_budget=action.answer_budget, zero_remaining=action.zero_remaining,
                top_k=self.gw.settings.upstream.logprobs_top_k, tail_policy=self.policy.tail_policy.value,
            )
        yield self.writer.token(self.policy.termination_marker)
        if action.zero_remaining:
            if self.annotate:
                yield self._outcome_event()
            yield self.writer.finish("length")
            yield DONE
            return
        self.continuations += 1
        try:
            self.upstream = await self._open(self._continuation_body(action.answer_budget))
        except _UpstreamFailure as exc:
            yield error_body("continuation_failed", str(exc), partial_reasoning=self.session.reasoning,
                             exit_step=decision.at_step, **exc.details)
            yield DONE
            return
        finish = "stop"
        async for chunk in self._chunks():
            for tok in chunk.tokens:
                if not self.session.feed_answer(tok.text):
                    finish = "length"
                    break
                yield self.writer.token(tok.text, tok.raw if self.want_logprobs else None)
            else:
                if chunk.finish_reason:
                    finish = chunk.finish_reason
                continue
            break
        if self.annotate:
            yield self._outcome_event()
        yield self.writer.finish(finish)
        yield DONE


async def _encode(items: AsyncIterator[Any]) -> AsyncIterator[bytes]:
    async for item in items:
        yield sse_data(item)


class Gateway:
    """The proxy application. ``client`` may be injected (tests pass one
    bound to an in-process mock); otherwise it is created at startup."""

    def __init__(self, settings: Settings, client: httpx.AsyncClient | None = None):
        self.settings = settings
        self._own_client = client is None
        self.client: httpx.AsyncClient = client  # type: ignore[assignment]
        self.active = 0
        self.app = self._build()

    async def _startup(self) -> None:
        if self.client is None:
            up = self.settings.upstream
            self.client = httpx.AsyncClient(
                timeout=httpx.Timeout(up.request_timeout),
                limits=httpx.Limits(max_connections=None, max_keepalive_connections=64),
            )
        if self.settings.gateway.health_check:
            url = self.settings.upstream.base_url.rstrip("/") + "/v1/models"
            try:
                resp = await self.client.get(url)
            except httpx.HTTPError as exc:
                raise RuntimeError(f"upstream health check failed: {url}: {exc}") from None
            if resp.status_code != 200:
                raise RuntimeError(f"upstream health check failed: {url}: HTTP {resp.status_code}")

    async def _shutdown(self) -> None:
        if self._own_client and self.client is not None:
            await self.client.aclose()

    def _build(self) -> FastAPI:
        @contextlib.asynccontextmanager
        async def lifespan(app: FastAPI):
            await self._startup()
            yield
            await self._shutdown()

        app = FastAPI(title="rpdi gateway", lifespan=lifespan)

        @app.get("/health")
        async def health() -> dict:
            return {"status": "ok", "monitoring": self.settings.gateway.monitoring, "active": self.active}

        @app.get("/v1/models")
        async def models(request: Request):
            return await self._passthrough_get(request, "/v1/models")

        @app.post("/v1/chat/completions")
        async def chat(request: Request):
            return await self._handle(request, "chat")

        @app.post("/v1/completions")
        async def completions(request: Request):
            return await self._handle(request, "raw-completion")

        return app

    def _forward_headers(self, request: Request) -> dict[str, str]:
        return {k: v for k, v in request.headers.items() if k.lower() in FORWARD_HEADERS}

    async def _passthrough_get(self, request: Request, path: str):
        url = self.settings.upstream.base_url.rstrip("/") + path
        try:
            resp = await self.client.get(url, headers=self._forward_headers(request))
        except httpx.HTTPError as exc:
            return _error(502, "upstream_unreachable", f"cannot reach upstream at {url}: {exc}")
        return JSONResponse(resp.json(), status_code=resp.status_code)

    async def _passthrough(self, request: Request) -> Any:
        """Monitoring disabled: relay request and response bytes untouched."""
        url = self.settings.upstream.endpoint
        headers = self._forward_headers(request)
        headers["content-type"] = request.headers.get("content-type", "application/json")
        req = self.client.build_request("POST", url, content=await request.body(), headers=headers)
        try:
            resp = await self.client.send(req, stream=True)
        except httpx.HTTPError as exc:
            return _error(502, "upstream_unreachable", f"cannot reach upstream at {url}: {exc}")
        return StreamingResponse(
            resp.aiter_raw(),
            status_code=resp.status_code,
            media_type=resp.headers.get("content-type"),
            background=BackgroundTask(resp.aclose),
        )

    async def _handle(self, request: Request, style: str):
        expected = self.settings.upstream.completion_style
        if style != expected:
            return _error(400, "wrong_endpoint", f"gateway is configured for completion_style={expected!r}")
        if not self.settings.gateway.monitoring:
            return await self._passthrough(request)
        try:
            body = await request.json()
        except ValueError:
            return _error(400, "invalid_request", "request body is not valid JSON")
        if not isinstance(body, dict):
            return _error(400, "invalid_request", "request body must be a JSON object")
        annotate = _truthy(request.headers.get(ANNOTATE_HEADER, "")) or _truthy(body.pop(ANNOTATE_FIELD, False))
        if style == "chat":
            msgs = body.get("messages")
            if not isinstance(msgs, list) or not msgs:
                return _error(400, "invalid_request", "messages must be a non-empty list")
            prompt = ""
        else:
            prompt = body.get("prompt")
            if not isinstance(prompt, str):
                return _error(400, "invalid_request", "prompt must be a string")
        if body.get("n", 1) != 1:
            return _error(400, "invalid_request", "only n=1 is supported")

        run = _Run(self, body, self._forward_headers(request), annotate, prompt)
        try:
            await run.start()
        except _UpstreamFailure as exc:
            return exc.response()

        if body.get("stream"):
            self.active += 1
            return StreamingResponse(_encode(self._track(run)), media_type="text/event-stream")
        return await self._collect(run)

    async def _track(self, run: _Run) -> AsyncIterator[Any]:
        try:
            async for item in run.events():
                yield item
        finally:
            self.active -= 1

    async def _collect(self, run: _Run):
        """Non-streaming request: run the same flow and assemble one body."""
        parts: list[str] = []
        events: list[dict] = []
        finish = "stop"
        async for item in run.events():
            if item == DONE:
                break
            if "error" in item:
                return JSONResponse(item, status_code=502)
            if "rpdi_event" in item:
                events.append(item["rpdi_event"])
                continue
            choice = item["choices"][0]
            if choice.get("finish_reason"):
                finish = choice["finish_reason"]
            text = choice["delta"].get("content") if "delta" in choice else choice.get("text")
            if text:
                parts.append(text)
        extra = {"rpdi_events": events} if run.annotate else None
        return JSONResponse(run.writer.completion("".join(parts), finish, extra))


def create_app(settings: Settings, client: httpx.AsyncClient | None = None) -> FastAPI:
    return Gateway(settings, client).app
