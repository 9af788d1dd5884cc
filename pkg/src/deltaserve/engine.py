"""Deterministic stand-in for the GPU model.

Provides the four engine primitives the rest of the stack is built on:

- a prefix-stable tokenizer (whitespace/word/punctuation pieces hashed into
  the vocabulary),
- a prefix-stable chat-template renderer,
- a forward pass whose greedy choice follows a copy-model rule (repeat the
  continuation of the most recent earlier occurrence of the trailing n-gram,
  else a hash of the whole preceding sequence), and
- a seeded sampler.

forward and sample are pure functions of their arguments; the only mutable
state is the cost ledger, which is updated atomically. The copy-model rule is
what makes speculation acceptance realistic: generation that re-enters text
present earlier in the sequence reproduces it span-for-span.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass

import numpy as np

from ._kernels import copy_continuation, fnv1a64_bytes, fnv1a64_tokens

CHAT_ROLES = ("system", "user", "assistant", "tool")

# Margin added to the designated top logit. Base noise is uniform in [0, 1),
# so the argmax is unambiguous while softmax at moderate temperatures still
# concentrates on it.
_TOP_LOGIT_BUMP = 10.0

_PIECE_RE = re.compile(r"\s+|\w+|[^\w\s]")
_WORD_RE = re.compile(r"\w")
_SPACE_RE = re.compile(r"\s")


class RenderError(ValueError):
    """Raised for message lists the chat template cannot render."""


@dataclass(frozen=True)
class ModelConfig:
    """Shape parameters of the mock model.

    layers/hidden only affect the analytic memory estimate; vocab bounds
    token ids; copy_min_match is the n-gram length of the copy rule.
    """

    layers: int = 32
    hidden: int = 4096
    vocab: int = 32768
    copy_min_match: int = 3
    bytes_per_value: int = 2

    def __post_init__(self):
        if self.layers <= 0 or self.hidden <= 0 or self.vocab <= 1:
            raise ValueError("layers, hidden must be positive and vocab >= 2")
        if self.copy_min_match <= 0:
            raise ValueError("copy_min_match must be positive")

    @property
    def sentinel_id(self) -> int:
        """Reserved tool-call sentinel token; never produced by the tokenizer."""
        return self.vocab - 1


class CostLedger:
    """Monotonic forward-pass counters, safe for concurrent updates."""

    def __init__(self):
        self._lock = threading.Lock()
        self.prefill_tokens = 0
        self.decode_passes = 0
        self.forward_calls = 0
        self.batch_tokens = 0

    def count_forward(self, batch_size: int) -> None:
        with self._lock:
            self.forward_calls += 1
            self.batch_tokens += batch_size

    def charge_prefill(self, n: int) -> None:
        with self._lock:
            self.prefill_tokens += n

    def charge_decode(self) -> None:
        with self._lock:
            self.decode_passes += 1

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "prefill_tokens": self.prefill_tokens,
                "decode_passes": self.decode_passes,
                "forward_calls": self.forward_calls,
                "batch_tokens": self.batch_tokens,
            }


def split_pieces(text: str) -> list[str]:
    """Split text into tokenizer pieces (whitespace runs, word runs, single punctuation)."""
    return _PIECE_RE.findall(text)


def is_piece_boundary(text: str, idx: int) -> bool:
    """True when no tokenizer piece spans position idx.

    Word runs and whitespace runs are the only multi-character pieces, so a
    position is a boundary unless both neighbours are word characters or both
    are whitespace.
    """
    if idx <= 0 or idx >= len(text):
        return True
    a, b = text[idx - 1], text[idx]
    if _WORD_RE.match(a) and _WORD_RE.match(b):
        return False
    if _SPACE_RE.match(a) and _SPACE_RE.match(b):
        return False
    return True


class Logits:
    """Length-V score vector for one position.

    Materialization is lazy: the vector is uniform noise in [0, 1) drawn from
    a PCG64 generator seeded by the hash of the preceding sequence, with a
    fixed bump at the designated argmax index. Tests may instead construct
    explicit vectors via from_values().
    """

    __slots__ = ("vocab", "_argmax", "copy_source", "_seed_fn", "_values")

    def __init__(self, vocab: int, argmax_id: int, copy_source: int | None, seed_fn):
        self.vocab = vocab
        self._argmax = argmax_id
        self.copy_source = copy_source
        self._seed_fn = seed_fn
        self._values: np.ndarray | None = None

    @classmethod
    def from_values(cls, values) -> "Logits":
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("logits must be one-dimensional")
        if not np.all(np.isfinite(arr)):
            raise ValueError("logits must be finite")
        obj = cls(len(arr), int(np.argmax(arr)), None, None)
        obj._values = arr
        return obj

    @property
    def argmax_id(self) -> int:
        """Greedy choice with lowest-id tie-break."""
        return self._argmax

    @property
    def values(self) -> np.ndarray:
        if self._values is None:
            rng = np.random.Generator(np.random.PCG64(self._seed_fn()))
            vals = rng.random(self.vocab, dtype=np.float64)
            vals[self._argmax] += _TOP_LOGIT_BUMP
            self._values = vals
        return self._values


class LogitsBatch:
    """Per-position logits for one forward call, evaluated on demand."""

    def __init__(self, full: np.ndarray, context_len: int, config: ModelConfig):
        self._full = full
        self._context_len = context_len
        self._config = config
        self._cache: dict[int, Logits] = {}
        # Incremental FNV-1a state over the preceding sequence, extended as
        # later positions ask for their hash.
        self._hash_len = 0
        self._hash_state: int | None = None

    def __len__(self) -> int:
        return len(self._full) - self._context_len

    def _preceding_hash(self, upto: int) -> int:
        if self._hash_state is None or upto < self._hash_len:
            self._hash_state = fnv1a64_tokens(self._full[:upto])
            self._hash_len = upto
        elif upto > self._hash_len:
            self._hash_state = fnv1a64_tokens(self._full[self._hash_len : upto], self._hash_state)
            self._hash_len = upto
        return self._hash_state

    def __getitem__(self, i: int) -> Logits:
        n = len(self)
        if i < 0:
            i += n
        if not 0 <= i < n:
            raise IndexError(i)
        hit = self._cache.get(i)
        if hit is not None:
            return hit
        upto = self._context_len + i + 1
        preceding = self._full[:upto]
        e = copy_continuation(preceding, self._config.copy_min_match)
        if e >= 0:
            argmax = int(self._full[e])
            source: int | None = e
        else:
            argmax = self._preceding_hash(upto) % self._config.vocab
            source = None
        logits = Logits(self._config.vocab, argmax, source, lambda u=upto: self._preceding_hash(u))
        self._cache[i] = logits
        return logits


class MockEngine:
    """Tokenizer, renderer, forward pass and sampler sharing one config and ledger."""

    def __init__(self, config: ModelConfig | None = None):
        self.config = config or ModelConfig()
        self.ledger = CostLedger()

    # -- tokenizer ----------------------------------------------------------

    def piece_to_id(self, piece: str) -> int:
        # vocab-1 keeps the sentinel id out of the tokenizer's range
        return fnv1a64_bytes(piece.encode("utf-8")) % (self.config.vocab - 1)

    def tokenize(self, text: str) -> list[int]:
        return [self.piece_to_id(p) for p in split_pieces(text)]

    def tokenize_with_pieces(self, text: str) -> tuple[list[int], list[str]]:
        pieces = split_pieces(text)
        return [self.piece_to_id(p) for p in pieces], pieces

    def synthetic_piece(self, token_id: int) -> str:
        """Decoded text for a token id with no known source piece."""
        if token_id == self.config.sentinel_id:
            return ""
        return f" w{token_id}"

    # -- chat template ------------------------------------------------------

    def render_chat(self, messages, tools=None) -> str:
        """Render a conversation; each message appends one block, so the
        render of a conversation is a strict prefix of any extension of it."""
        if not messages:
            raise RenderError("messages must be non-empty")
        parts = []
        if tools:
            schema_lines = "\n".join(
                json.dumps(t, sort_keys=True, separators=(",", ":")) for t in tools
            )
            parts.append(f"<|tools|>\n{schema_lines}\n<|end|>\n")
        for msg in messages:
            role = msg.get("role")
            if role not in CHAT_ROLES:
                raise RenderError(f"unknown role: {role!r}")
            content = msg.get("content") or ""
            parts.append(f"<|{role}|>\n{content}<|end|>\n")
        return "".join(parts)

    # -- forward / sample ---------------------------------------------------

    def forward(self, context, batch) -> LogitsBatch:
        """One forward pass over `batch` given `context` already resident.

        Returns logits for every batch position; increments forward_calls.
        Prefill vs decode attribution is the caller's job (charge_prefill /
        charge_decode on the ledger).
        """
        if len(batch) == 0:
            raise ValueError("batch must be non-empty")
        ctx = np.asarray(context, dtype=np.int32)
        bat = np.asarray(batch, dtype=np.int32)
        full = np.concatenate([ctx, bat]) if len(ctx) else bat.copy()
        self.ledger.count_forward(len(bat))
        return LogitsBatch(full, len(ctx), self.config)

    def sample(self, logits: Logits, temperature: float, seed: int) -> int:
        """Greedy at temperature 0; otherwise a deterministic function of
        (logits, temperature, seed) via Gumbel-max over a PCG64 stream."""
        if temperature < 0:
            raise ValueError("temperature must be >= 0")
        if temperature == 0:
            return logits.argmax_id
        rng = np.random.Generator(np.random.PCG64(seed & 0xFFFFFFFF))
        u = rng.random(logits.vocab)
        gumbel = -np.log(-np.log(u + 1e-12) + 1e-12)
        return int(np.argmax(logits.values / temperature + gumbel))
