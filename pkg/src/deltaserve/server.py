"""OpenAI-compatible HTTP facade.

Endpoints:

- POST /v1/chat/completions: chat with tools, optional SSE streaming, usage
  extensions exposing the request's delta accounting. The response cache is
  consulted after render+tokenize but before any sequence acquisition; hits
  return the stored body byte-identically with an x-cache-hit header.
- POST /v1/sessions, DELETE /v1/sessions/{id}: bind / release a session-pool
  sequence for the stateful path.
- GET /metrics, GET /metrics/turns.csv: counters snapshot and per-request log.
- POST /admin/config: feature-flag toggles (baseline mode); /admin/reset
  clears caches, counters and the radix.

Response bodies are deterministic: ids derive from the prompt and sampling
fingerprint, the created timestamp is fixed at server start, so identical
prompts produce identical bytes whether generated or cached.
"""

from __future__ import annotations

import json
import logging
import queue
import time
import uuid
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from threading import Lock

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse, Response, StreamingResponse
from pydantic import BaseModel, ConfigDict, Field

from ._kernels import fnv1a64_tokens
from .caches import ResponseCacheKey, prompt_seed, tool_digest
from .config import FEATURE_FLAGS, ServerConfig
from .engine import RenderError
from .metrics import TurnMetrics
from .pool import SESSION, AcquireTimeout
from .scheduler import GenerationRequest, InferenceCore, RequestHandle, SessionHandle

logger = logging.getLogger(__name__)


class ChatMessage(BaseModel):
    model_config = ConfigDict(extra="allow")
    role: str
    content: str | None = None


class ChatRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    model: str | None = None
    messages: list[ChatMessage] = Field(min_length=1)
    tools: list[dict] | None = None
    max_tokens: int | None = Field(default=None, ge=1)
    temperature: float = Field(default=0.0, ge=0.0)
    stream: bool = False
    seed: int | None = None
    session_id: str | None = None
    fail_after_tokens: int | None = None  # honored only with allow_fault_injection


@dataclass
class SessionRegistry:
    sessions: dict[str, SessionHandle] = field(default_factory=dict)
    lock: Lock = field(default_factory=Lock)

    def get(self, session_id: str) -> SessionHandle | None:
        with self.lock:
            return self.sessions.get(session_id)

    def add(self, handle: SessionHandle) -> None:
        with self.lock:
            self.sessions[handle.session_id] = handle

    def pop(self, session_id: str) -> SessionHandle | None:
        with self.lock:
            return self.sessions.pop(session_id, None)

    def drain(self) -> list[SessionHandle]:
        with self.lock:
            out = list(self.sessions.values())
            self.sessions.clear()
            return out


def _declared_names(tools) -> frozenset:
    names = set()
    for t in tools or ():
        fn = t.get("function") if isinstance(t, dict) else None
        name = (fn or {}).get("name") if isinstance(fn, dict) else None
        if name is None and isinstance(t, dict):
            name = t.get("name")
        if isinstance(name, str):
            names.add(name)
    return frozenset(names)


def create_app(config: ServerConfig | None = None) -> FastAPI:
    config = config or ServerConfig()
    core = InferenceCore(config)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        core.start()
        yield
        for sess in app.state.sessions.drain():
            core.kv.release_sequence(sess.guard.seq)
            sess.guard.release()
        core.stop()

    app = FastAPI(title="deltaserve", lifespan=lifespan)
    app.state.core = core
    app.state.config = config
    app.state.sessions = SessionRegistry()
    app.state.created = int(time.time())
    app.state.http_served = 0

    @app.exception_handler(RequestValidationError)
    async def validation_400(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": {"type": "invalid_request", "detail": exc.errors()}})

    def error(status: int, type_: str, message: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"error": {"type": type_, "message": message}})

    # -- chat completions ---------------------------------------------------------

    def build_body(req: ChatRequest, result, request_id: str, n_t: int) -> dict:
        fin = result.finalize
        tool_calls = None
        content: str | None = result.text
        if fin.kind == "tool_calls":
            content = None
            tool_calls = [
                {
                    "id": f"call_{request_id[-12:]}_{i}",
                    "type": "function",
                    "function": {
                        "name": call.name,
                        "arguments": json.dumps(call.parameters, separators=(",", ":")),
                    },
                }
                for i, call in enumerate(fin.calls)
            ]
        elif fin.kind == "rejected":
            content = json.dumps(
                {"error": {"type": "tool_call_rejected", "reason": fin.reason}}
            )
        message: dict = {"role": "assistant", "content": content}
        if tool_calls:
            message["tool_calls"] = tool_calls
        return {
            "id": request_id,
            "object": "chat.completion",
            "created": app.state.created,
            "model": req.model or config.model_name,
            "choices": [
                {"index": 0, "message": message, "finish_reason": result.finish_reason}
            ],
            "usage": {
                "prompt_tokens": n_t,
                "completion_tokens": len(result.generated),
                "total_tokens": n_t + len(result.generated),
                "cached_prompt_tokens": result.cached_prompt_tokens,
                "processed_prompt_tokens": result.prefill_tokens,
                "rejected_speculative_tokens": result.spec_rejected,
                "decode_passes": result.decode_passes,
                "simulated_ms": result.simulated_ms,
                "cache_hit": False,
            },
        }

    def _store_in_cache(req: ChatRequest, key: ResponseCacheKey, body: dict, raw: bytes) -> None:
        if not core.flags["response_cache_enabled"] or req.session_id is not None:
            return
        core.response_cache.put(
            key,
            {
                "body": raw,
                "n_t": body["usage"]["prompt_tokens"],
                "usage": body["usage"],
                "finish_reason": body["choices"][0]["finish_reason"],
            },
        )

    def sse_stream(handle: RequestHandle, req: ChatRequest, key: ResponseCacheKey, request_id: str, n_t: int):
        deadline = time.monotonic() + config.request_deadline_s
        head = {
            "id": request_id,
            "object": "chat.completion.chunk",
            "created": app.state.created,
            "model": req.model or config.model_name,
        }
        yield _sse_chunk({**head, "choices": [{"index": 0, "delta": {"role": "assistant"}, "finish_reason": None}]})
        while True:
            try:
                piece = handle.pieces.get(timeout=max(0.05, deadline - time.monotonic()))
            except queue.Empty:
                handle.cancelled = True
                yield _sse_chunk({**head, "error": {"type": "deadline_exceeded"}})
                yield "data: [DONE]\n\n"
                return
            if piece is None:
                break
            yield _sse_chunk({**head, "choices": [{"index": 0, "delta": {"content": piece}, "finish_reason": None}]})
        if handle.error is not None:
            yield _sse_chunk({**head, "error": {"type": "generation_failed", "message": str(handle.error)}})
            yield "data: [DONE]\n\n"
            return
        body = build_body(req, handle.result, request_id, n_t)
        final_delta: dict = {}
        message = body["choices"][0]["message"]
        if message.get("tool_calls"):
            final_delta["tool_calls"] = message["tool_calls"]
        yield _sse_chunk(
            {
                **head,
                "choices": [{"index": 0, "delta": final_delta, "finish_reason": body["choices"][0]["finish_reason"]}],
                "usage": body["usage"],
            }
        )
        yield "data: [DONE]\n\n"
        _store_in_cache(req, key, body, json.dumps(body, separators=(",", ":")).encode("utf-8"))

    def _sse_chunk(obj: dict) -> str:
        return f"data: {json.dumps(obj, separators=(',', ':'))}\n\n"

    def _cache_key(tokens, req: ChatRequest, seed: int) -> ResponseCacheKey:
        return ResponseCacheKey(
            prompt_hash=fnv1a64_tokens(tokens),
            token_count=len(tokens),
            temperature=req.temperature,
            max_tokens=req.max_tokens or config.default_max_tokens,
            tool_digest=tool_digest(req.tools),
            seed=seed,
        )

    @app.post("/v1/chat/completions")
    def chat_completions(req: ChatRequest):
        t0 = time.monotonic()
        messages = [{"role": m.role, "content": m.content} for m in req.messages]
        max_tokens = req.max_tokens or config.default_max_tokens
        try:
            rendered, tokens, pieces = core.prepare_prompt(messages, req.tools)
        except RenderError as exc:
            return error(400, "invalid_request", str(exc))
        try:
            core.validate_size(len(tokens), max_tokens)
        except ValueError as exc:
            return error(400, "request_too_large", str(exc))

        seed = req.seed if req.seed is not None else prompt_seed(tokens)
        key = _cache_key(tokens, req, seed)

        session = None
        if req.session_id is not None:
            session = app.state.sessions.get(req.session_id)
            if session is None:
                return error(404, "unknown_session", f"no session {req.session_id!r}")

        if core.flags["response_cache_enabled"] and session is None:
            hit = core.response_cache.get(key)
            if hit is not None:
                if config.realtime_factor > 0:
                    time.sleep(core.cost.http_ms / 1000.0 * config.realtime_factor)
                core.metrics.add("response_cache_served")
                core.metrics.record_turn(
                    TurnMetrics(
                        request_id=f"hit-{uuid.uuid4().hex[:8]}",
                        n_t=hit["n_t"],
                        delta_t=0,
                        prefill_tokens=0,
                        forward_passes=0,
                        decode_passes=0,
                        spec_proposed=0,
                        spec_accepted=0,
                        aliased_cells=0,
                        generated_tokens=0,
                        early_stop=False,
                        cache_hit=True,
                        simulated_ms=core.cost.http_ms,
                        wall_ms=(time.monotonic() - t0) * 1000.0,
                    )
                )
                if req.stream:
                    return StreamingResponse(
                        _replay_stream(hit),
                        media_type="text/event-stream",
                        headers={"x-cache-hit": "1"},
                    )
                return Response(
                    content=hit["body"],
                    media_type="application/json",
                    headers={"x-cache-hit": "1"},
                )

        guard = None
        if session is None:
            try:
                guard = core.pool.acquire("transient", timeout=config.acquire_timeout_s)
            except AcquireTimeout as exc:
                return error(503, "overloaded", str(exc))

        request_id = f"chatcmpl-{key.prompt_hash:016x}{seed:08x}"
        gen_req = GenerationRequest(
            request_id=request_id,
            prompt_tokens=tokens,
            prompt_pieces=pieces,
            max_tokens=max_tokens,
            temperature=req.temperature,
            seed=seed,
            declared_tools=_declared_names(req.tools),
            stream=req.stream,
            guard=guard,
            session=session,
            fail_after_tokens=req.fail_after_tokens if config.allow_fault_injection else None,
        )
        handle = RequestHandle(gen_req)
        core.submit(handle)
        app.state.http_served += 1

        if req.stream:
            return StreamingResponse(
                sse_stream(handle, req, key, request_id, len(tokens)),
                media_type="text/event-stream",
            )

        if not handle.wait(timeout=config.request_deadline_s):
            handle.cancelled = True
            return error(503, "deadline_exceeded", "request was not scheduled in time")
        if handle.error is not None:
            return error(500, "generation_failed", str(handle.error))
        body = build_body(req, handle.result, request_id, len(tokens))
        raw = json.dumps(body, separators=(",", ":")).encode("utf-8")
        _store_in_cache(req, key, body, raw)
        return Response(content=raw, media_type="application/json", headers={"x-cache-hit": "0"})

    def _replay_stream(hit: dict):
        body = json.loads(hit["body"])
        head = {
            "id": body["id"],
            "object": "chat.completion.chunk",
            "created": body["created"],
            "model": body["model"],
        }
        yield _sse_chunk({**head, "choices": [{"index": 0, "delta": {"role": "assistant"}, "finish_reason": None}]})
        content = body["choices"][0]["message"].get("content")
        if content:
            yield _sse_chunk({**head, "choices": [{"index": 0, "delta": {"content": content}, "finish_reason": None}]})
        final_delta: dict = {}
        if body["choices"][0]["message"].get("tool_calls"):
            final_delta["tool_calls"] = body["choices"][0]["message"]["tool_calls"]
        yield _sse_chunk(
            {
                **head,
                "choices": [{"index": 0, "delta": final_delta, "finish_reason": body["choices"][0]["finish_reason"]}],
                "usage": body["usage"],
            }
        )
        yield "data: [DONE]\n\n"

    # -- sessions -------------------------------------------------------------------

    @app.post("/v1/sessions")
    def create_session():
        try:
            guard = core.pool.acquire(SESSION, timeout=0.0)
        except AcquireTimeout:
            return error(409, "session_pool_exhausted", "no free session sequence")
        session_id = f"sess-{uuid.uuid4().hex[:12]}"
        app.state.sessions.add(SessionHandle(session_id=session_id, guard=guard))
        return {"id": session_id, "object": "session"}

    @app.delete("/v1/sessions/{session_id}")
    def delete_session(session_id: str):
        session = app.state.sessions.get(session_id)
        if session is None:
            return error(404, "unknown_session", f"no session {session_id!r}")
        if session.busy:
            return error(409, "session_busy", "session has an active request")
        app.state.sessions.pop(session_id)
        core.kv.release_sequence(session.guard.seq)
        session.guard.release()
        return {"id": session_id, "deleted": True}

    # -- metrics & admin ---------------------------------------------------------------

    @app.get("/metrics")
    def metrics():
        snap = core.snapshot_metrics()
        snap["http_requests"] = app.state.http_served
        return snap

    @app.get("/metrics/turns.csv")
    def turns_csv():
        return PlainTextResponse(core.metrics.turns_csv(), media_type="text/csv")

    @app.post("/admin/config")
    def admin_config(body: dict):
        unknown = [k for k in body if k not in FEATURE_FLAGS]
        if unknown:
            return error(400, "unknown_flag", f"unknown flags: {unknown}")
        for k, v in body.items():
            if not isinstance(v, bool):
                return error(400, "invalid_flag_value", f"{k} must be boolean")
            core.set_flag(k, v)
        return {"flags": dict(core.flags)}

    @app.post("/admin/reset")
    def admin_reset():
        core.reset_state()
        return {"reset": True}

    return app
