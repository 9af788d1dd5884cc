"""Prompt-lookup speculative decoding.

Proposals come from the slot's own recent token buffer: the longest suffix of
the trailing context (at least min_match tokens) that recurs earlier in the
buffer, continuing with up to max_lookahead tokens from the most recent such
occurrence. Verification runs one batched forward pass over the last emitted
token plus the proposal, accepts the prefix that matches the model's greedy
choice, commits one bonus token from the model's own logits at the first
mismatch (so every verify commits at least one token), and trims the KV cache
back so no rejected cells remain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ._kernels import longest_suffix_match
from .engine import Logits, MockEngine
from .kvcache import UnifiedKvCache


@dataclass
class SpecConfig:
    buffer_tokens: int = 2048
    min_match: int = 3
    max_lookahead: int = 16
    ema_init: float = 0.5
    ema_decay: float = 0.9


@dataclass
class SpecState:
    """Per-slot speculation state: acceptance EMA plus running totals."""

    config: SpecConfig = field(default_factory=SpecConfig)
    ema: float = -1.0
    proposed_total: int = 0
    accepted_total: int = 0

    def __post_init__(self):
        if self.ema < 0:
            self.ema = self.config.ema_init


@dataclass(frozen=True)
class SpecOutcome:
    proposed: int
    accepted: int
    forward_passes_used: int = 1


def lookup_ngram(ring, tail, min_match: int, max_tokens: int) -> list[int]:
    """Continuation of the longest suffix-anchored match of tail inside ring.

    Returns up to max_tokens tokens following the most recent, longest
    occurrence (length >= min_match) that has at least one token after it;
    empty when no such match exists. Pure; safe on worker threads.
    """
    if max_tokens <= 0:
        return []
    e, length = longest_suffix_match(ring, tail, min_match)
    if e < 0 or length < min_match:
        return []
    take = min(max_tokens, len(ring) - e)
    return [int(t) for t in ring[e : e + take]]


def update_acceptance(state: SpecState, outcome: SpecOutcome) -> None:
    if outcome.proposed < 1:
        raise ValueError("update_acceptance requires proposed >= 1")
    lam = state.config.ema_decay
    state.ema = lam * state.ema + (1.0 - lam) * (outcome.accepted / outcome.proposed)
    state.proposed_total += outcome.proposed
    state.accepted_total += outcome.accepted


def verify(
    engine: MockEngine,
    kv: UnifiedKvCache,
    seq: int,
    tokens,
    predicted: list[int],
) -> tuple[SpecOutcome, list[tuple[int, int | None]], Logits]:
    """Verify a proposal in ONE forward pass.

    tokens is the slot's full committed sequence (its last element is the
    emitted-but-unprocessed token). Appends k+1 cells, decodes the batch
    [last, predicted...], accepts greedy-matching predictions, then trims the
    KV back to the last accepted position so exactly the accepted tokens plus
    the previously pending one remain resident.

    Returns (outcome, accepted list of (token, copy_source), bonus logits).
    The caller commits the accepted tokens, samples the bonus from the
    returned logits, and owns EMA/ledger updates.
    """
    k = len(predicted)
    if k < 1:
        raise ValueError("predicted must be non-empty")
    kv_before = kv.seq_len(seq)
    batch = [tokens[-1], *predicted]
    kv.append_cells(seq, k + 1)
    logits = engine.forward(tokens[:-1], batch)
    accepted: list[tuple[int, int | None]] = []
    for s in range(k):
        lg = logits[s]
        if lg.argmax_id != predicted[s]:
            bonus = lg
            break
        accepted.append((predicted[s], lg.copy_source))
    else:
        bonus = logits[k]
    kv.trim(seq, kv_before + len(accepted) + 1)
    return SpecOutcome(proposed=k, accepted=len(accepted)), accepted, bonus
