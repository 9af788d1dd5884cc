"""Analytic per-turn latency model and run-time counters.

The predictor collapses a turn into three regimes: conventional full
re-prefill, delta-only processing over a restored prefix with speculative
decode batching, and a response-cache hit that costs only HTTP handling. The
registry collects global counters plus one row per completed request so the
harness can compare predicted against measured cost and compute speedups.
"""

from __future__ import annotations

import csv
import io
import math
import threading
from dataclasses import dataclass, field, fields

REGIMES = ("conventional", "radix_pld", "cache_hit")


@dataclass(frozen=True)
class CostParams:
    """Per-component costs in milliseconds.

    Defaults are calibrated so the simulated 6-turn agentic scenario lands
    near a 2x stateful:stateless ratio, not measured from hardware.
    """

    prefill_ms_per_token: float = 0.5
    restore_ms: float = 0.5
    decode_ms: float = 25.0
    http_ms: float = 1.0

    def __post_init__(self):
        if min(self.prefill_ms_per_token, self.restore_ms, self.decode_ms, self.http_ms) < 0:
            raise ValueError("cost parameters must be non-negative")


def predict_turn(
    regime: str,
    params: CostParams,
    *,
    n_t: int = 0,
    delta_t: int = 0,
    m: int = 0,
    k: int = 0,
) -> float:
    """Predicted turn latency (ms) for generating m tokens.

    conventional: full prefill of n_t plus one decode per token.
    radix_pld:    constant-time restore, delta-only prefill, and
                  ceil(m / (k+1)) batched decodes at draft length k.
    cache_hit:    HTTP handling only.
    """
    if regime == "conventional":
        return n_t * params.prefill_ms_per_token + m * params.decode_ms
    if regime == "radix_pld":
        decodes = math.ceil(m / (k + 1)) if m else 0
        return params.restore_ms + delta_t * params.prefill_ms_per_token + decodes * params.decode_ms
    if regime == "cache_hit":
        return params.http_ms
    raise ValueError(f"unknown regime: {regime!r}")


def speedup(n_t: int, n_prev: int) -> float:
    """Per-turn speedup bound from prefix reuse: n_t / (n_t - n_prev)."""
    if n_t <= n_prev:
        raise ValueError(f"speedup undefined for n_t={n_t} <= n_prev={n_prev}")
    return n_t / (n_t - n_prev)


def totals(prompt_lengths) -> tuple[int, int]:
    """(full re-prefill total, delta-only total) over a conversation's prompt lengths."""
    ns = list(prompt_lengths)
    if not ns:
        raise ValueError("at least one turn required")
    standard = sum(ns)
    cached = ns[0] + sum(ns[t] - ns[t - 1] for t in range(1, len(ns)))
    return standard, cached


@dataclass
class TurnMetrics:
    """Measured counters for one completed request."""

    request_id: str
    n_t: int
    delta_t: int
    prefill_tokens: int
    forward_passes: int
    decode_passes: int
    spec_proposed: int
    spec_accepted: int
    aliased_cells: int
    generated_tokens: int
    early_stop: bool
    cache_hit: bool
    simulated_ms: float
    wall_ms: float


class MetricsRegistry:
    """Counter map plus the per-request turn log; snapshots are consistent."""

    def __init__(self):
        self._lock = threading.Lock()
        self._counters: dict[str, float] = {}
        self._turns: list[TurnMetrics] = []

    def add(self, name: str, value: float = 1) -> None:
        with self._lock:
            self._counters[name] = self._counters.get(name, 0) + value

    def record_turn(self, turn: TurnMetrics) -> None:
        with self._lock:
            self._turns.append(turn)

    def counters(self) -> dict[str, float]:
        with self._lock:
            return dict(self._counters)

    def turns(self) -> list[TurnMetrics]:
        with self._lock:
            return list(self._turns)

    def reset(self) -> None:
        with self._lock:
            self._counters.clear()
            self._turns.clear()

    def turns_csv(self) -> str:
        cols = [f.name for f in fields(TurnMetrics)]
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(cols)
        for t in self.turns():
            writer.writerow([getattr(t, c) for c in cols])
        return buf.getvalue()
