"""HTTP client for the inference server, with response-shape validation.

The shape checks stand in for a stock OpenAI client: every completion must
carry the fields and types that such a client would deserialize.
"""

from __future__ import annotations

from typing import Any

import httpx


class ServerError(RuntimeError):
    """Non-2xx response from the server; aborts the scenario with diagnostics."""


class WireShapeError(RuntimeError):
    """Response body does not match the OpenAI chat-completion shape."""


def validate_completion_shape(data: dict) -> None:
    try:
        assert isinstance(data["id"], str) and data["id"]
        assert data["object"] == "chat.completion"
        assert isinstance(data["created"], int)
        assert isinstance(data["model"], str)
        choices = data["choices"]
        assert isinstance(choices, list) and choices
        for choice in choices:
            assert isinstance(choice["index"], int)
            assert choice["finish_reason"] in ("stop", "length", "tool_calls")
            message = choice["message"]
            assert message["role"] == "assistant"
            assert message["content"] is None or isinstance(message["content"], str)
            for call in message.get("tool_calls", []):
                assert isinstance(call["id"], str)
                assert call["type"] == "function"
                assert isinstance(call["function"]["name"], str)
                assert isinstance(call["function"]["arguments"], str)
        usage = data["usage"]
        for key in ("prompt_tokens", "completion_tokens", "total_tokens"):
            assert isinstance(usage[key], int)
    except (KeyError, AssertionError, TypeError) as exc:
        raise WireShapeError(f"malformed completion body: {exc!r}") from exc


class ServerClient:
    def __init__(self, endpoint: str, timeout: float = 120.0):
        self.endpoint = endpoint.rstrip("/")
        self._http = httpx.Client(base_url=self.endpoint, timeout=timeout)

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "ServerClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def chat(self, body: dict) -> tuple[dict, bool]:
        """POST a completion; returns (body, cache_hit). Raises on non-2xx."""
        resp = self._http.post("/v1/chat/completions", json=body)
        if resp.status_code // 100 != 2:
            raise ServerError(
                f"chat completion failed: HTTP {resp.status_code}: {resp.text[:500]}"
            )
        data = resp.json()
        validate_completion_shape(data)
        return data, resp.headers.get("x-cache-hit") == "1"

    def metrics(self) -> dict[str, Any]:
        resp = self._http.get("/metrics")
        if resp.status_code != 200:
            raise ServerError(f"metrics failed: HTTP {resp.status_code}")
        return resp.json()

    def set_flags(self, **flags: bool) -> None:
        resp = self._http.post("/admin/config", json=flags)
        if resp.status_code != 200:
            raise ServerError(f"admin/config failed: HTTP {resp.status_code}: {resp.text}")

    def reset(self) -> None:
        resp = self._http.post("/admin/reset")
        if resp.status_code != 200:
            raise ServerError(f"admin/reset failed: HTTP {resp.status_code}")

    def apply_mode(self, mode: str) -> None:
        if mode == "stateful":
            self.set_flags(
                radix_enabled=True,
                speculation_enabled=True,
                response_cache_enabled=True,
                grouping_enabled=True,
            )
        elif mode == "baseline":
            self.set_flags(
                radix_enabled=False,
                speculation_enabled=False,
                response_cache_enabled=False,
                grouping_enabled=False,
            )
        else:
            raise ValueError(f"unknown mode: {mode!r}")
