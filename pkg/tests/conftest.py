"""Shared fixtures and helpers for the deltaserve test suite."""

from __future__ import annotations

import pytest

from deltaserve.caches import prompt_seed
from deltaserve.config import ServerConfig
from deltaserve.scheduler import GenerationRequest, InferenceCore, RequestHandle


def make_core(**overrides) -> InferenceCore:
    """Core with no background loop; tests drive step() directly."""
    return InferenceCore(ServerConfig(**overrides))


def submit_tokens(
    core: InferenceCore,
    tokens: list[int],
    *,
    max_tokens: int = 16,
    temperature: float = 0.0,
    request_id: str = "req",
    tools: frozenset = frozenset(),
    pieces: list[str] | None = None,
    fail_after: int | None = None,
    stream: bool = False,
) -> RequestHandle:
    guard = core.pool.acquire("transient", timeout=1.0)
    req = GenerationRequest(
        request_id=request_id,
        prompt_tokens=list(tokens),
        prompt_pieces=pieces if pieces is not None else [f" w{t}" for t in tokens],
        max_tokens=max_tokens,
        temperature=temperature,
        seed=prompt_seed(tokens),
        declared_tools=tools,
        stream=stream,
        guard=guard,
        fail_after_tokens=fail_after,
    )
    handle = RequestHandle(req)
    core.submit(handle)
    return handle


def run_until_done(core: InferenceCore, handles, max_iters: int = 20_000) -> None:
    pending = list(handles)
    for _ in range(max_iters):
        pending = [h for h in pending if not h.wait(timeout=0)]
        if not pending:
            return
        core.step()
    raise AssertionError(f"{len(pending)} requests unfinished after {max_iters} iterations")


@pytest.fixture
def core() -> InferenceCore:
    return make_core()
