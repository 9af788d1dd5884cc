"""CPU-side caches above the radix, plus the prompt-seed function.

Three LRU caches: full responses keyed by a prompt hash with a token-count
collision guard and a sampling fingerprint; chat-template renders keyed by a
structural digest of the message list; tokenizations keyed by the rendered
string. The tokenize cache additionally serves prefix hits: because the
renderer is prefix-stable, a new render that extends a cached one only needs
the suffix tokenized.
"""

from __future__ import annotations

import json
import threading
from collections import OrderedDict
from dataclasses import dataclass

from ._kernels import fnv1a32_tokens, fnv1a64_bytes
from .engine import is_piece_boundary


def prompt_seed(tokens) -> int:
    """Deterministic sampler seed: 32-bit FNV-1a over the serialized prompt."""
    return fnv1a32_tokens(tokens)


def tool_digest(tools) -> int:
    if not tools:
        return 0
    blob = json.dumps(tools, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return fnv1a64_bytes(blob)


def structural_digest(messages, tools) -> int:
    blob = json.dumps(
        [[m.get("role"), m.get("content") or ""] for m in messages],
        ensure_ascii=False,
        separators=(",", ":"),
    ).encode("utf-8")
    h = fnv1a64_bytes(blob)
    return h ^ tool_digest(tools)


@dataclass(frozen=True)
class ResponseCacheKey:
    prompt_hash: int
    token_count: int
    temperature: float
    max_tokens: int
    tool_digest: int
    seed: int


@dataclass(frozen=True)
class CacheConfig:
    response_entries: int = 1024
    render_entries: int = 256
    tokenize_entries: int = 64

    def __post_init__(self):
        if min(self.response_entries, self.render_entries, self.tokenize_entries) <= 0:
            raise ValueError("cache capacities must be positive")


class LruCache:
    """Thread-safe LRU map; eviction order is exactly least-recent access."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._data: OrderedDict = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, key, default=None):
        with self._lock:
            if key in self._data:
                self._data.move_to_end(key)
                self.hits += 1
                return self._data[key]
            self.misses += 1
            return default

    def put(self, key, value) -> None:
        with self._lock:
            if key in self._data:
                self._data.move_to_end(key)
            self._data[key] = value
            while len(self._data) > self.capacity:
                self._data.popitem(last=False)

    def __len__(self) -> int:
        with self._lock:
            return len(self._data)

    def __contains__(self, key) -> bool:
        with self._lock:
            return key in self._data

    def clear(self) -> None:
        with self._lock:
            self._data.clear()

    def stats(self) -> dict:
        with self._lock:
            return {"hits": self.hits, "misses": self.misses, "entries": len(self._data)}


class RenderCache:
    """Structural-digest keyed render cache; hits skip the template entirely."""

    def __init__(self, capacity: int):
        self._lru = LruCache(capacity)

    def get_or_render(self, messages, tools, render_fn) -> tuple[str, bool]:
        key = structural_digest(messages, tools)
        hit = self._lru.get(key)
        if hit is not None:
            return hit, True
        rendered = render_fn(messages, tools)
        self._lru.put(key, rendered)
        return rendered, False

    def stats(self) -> dict:
        return self._lru.stats()

    def clear(self) -> None:
        self._lru.clear()


class TokenizeCache:
    """Rendered-string keyed tokenize cache with prefix-delta hits.

    On a miss, the longest cached entry that is a prefix of the new render
    (ending on a piece boundary) supplies its tokens and only the remaining
    suffix is tokenized. pieces_tokenized counts what actually went through
    the tokenizer.
    """

    def __init__(self, capacity: int):
        self._lru = LruCache(capacity)
        self._lock = threading.Lock()
        self.pieces_tokenized = 0

    def get_or_tokenize(self, rendered: str, tokenize_fn) -> tuple[list[int], list[str], bool]:
        cached = self._lru.get(rendered)
        if cached is not None:
            ids, pieces = cached
            return list(ids), list(pieces), True

        prefix_ids: tuple[int, ...] = ()
        prefix_pieces: tuple[str, ...] = ()
        best = 0
        with self._lru._lock:
            candidates = list(self._lru._data.items())
        for key, (ids, pieces) in candidates:
            if len(key) > best and len(key) < len(rendered) and rendered.startswith(key):
                if is_piece_boundary(rendered, len(key)):
                    best = len(key)
                    prefix_ids, prefix_pieces = ids, pieces

        suffix_ids, suffix_pieces = tokenize_fn(rendered[best:])
        with self._lock:
            self.pieces_tokenized += len(suffix_pieces)
        ids = list(prefix_ids) + list(suffix_ids)
        pieces = list(prefix_pieces) + list(suffix_pieces)
        self._lru.put(rendered, (tuple(ids), tuple(pieces)))
        return ids, pieces, False

    def stats(self) -> dict:
        out = self._lru.stats()
        out["pieces_tokenized"] = self.pieces_tokenized
        return out

    def clear(self) -> None:
        self._lru.clear()
