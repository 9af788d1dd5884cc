"""Pure-Python implementations of the hot kernels.

Selected at import time by deltaserve._kernels when the compiled extension is
unavailable or DELTASERVE_PURE_PYTHON is set. Semantics must match
_native.pyx exactly; tests/test_kernels.py cross-checks both backends.
"""

from __future__ import annotations

FNV32_OFFSET = 0x811C9DC5
FNV32_PRIME = 0x01000193
FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3

_MASK32 = 0xFFFFFFFF
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a32_bytes(data: bytes) -> int:
    h = FNV32_OFFSET
    for b in data:
        h = ((h ^ b) * FNV32_PRIME) & _MASK32
    return h


def fnv1a64_bytes(data: bytes) -> int:
    h = FNV64_OFFSET
    for b in data:
        h = ((h ^ b) * FNV64_PRIME) & _MASK64
    return h


def fnv1a32_tokens(tokens, state: int = FNV32_OFFSET) -> int:
    """FNV-1a (32-bit) over token ids serialized as 4 little-endian bytes each."""
    h = state
    for t in tokens:
        t = int(t)
        h = ((h ^ (t & 0xFF)) * FNV32_PRIME) & _MASK32
        h = ((h ^ ((t >> 8) & 0xFF)) * FNV32_PRIME) & _MASK32
        h = ((h ^ ((t >> 16) & 0xFF)) * FNV32_PRIME) & _MASK32
        h = ((h ^ ((t >> 24) & 0xFF)) * FNV32_PRIME) & _MASK32
    return h


def fnv1a64_tokens(tokens, state: int = FNV64_OFFSET) -> int:
    """FNV-1a (64-bit) over token ids serialized as 4 little-endian bytes each."""
    h = state
    for t in tokens:
        t = int(t)
        h = ((h ^ (t & 0xFF)) * FNV64_PRIME) & _MASK64
        h = ((h ^ ((t >> 8) & 0xFF)) * FNV64_PRIME) & _MASK64
        h = ((h ^ ((t >> 16) & 0xFF)) * FNV64_PRIME) & _MASK64
        h = ((h ^ ((t >> 24) & 0xFF)) * FNV64_PRIME) & _MASK64
    return h


def copy_continuation(tokens, min_match: int) -> int:
    """Most recent earlier occurrence of the trailing min_match-gram.

    Returns the index e of the token that followed the most recent earlier
    occurrence of tokens[n-min_match:n] (i.e. tokens[e-min_match:e] equals
    the trailing gram and e <= n-1), or -1 when no earlier occurrence exists.
    """
    n = len(tokens)
    if n <= min_match or min_match <= 0:
        return -1
    gram = tokens[n - min_match : n]
    first = gram[0]
    # Scan right to left; the most recent occurrence is usually near the end.
    for start in range(n - min_match - 1, -1, -1):
        if tokens[start] != first:
            continue
        ok = True
        for j in range(1, min_match):
            if tokens[start + j] != gram[j]:
                ok = False
                break
        if ok:
            return start + min_match
    return -1


def longest_suffix_match(ring, tail, min_len: int) -> tuple[int, int]:
    """Longest suffix of `tail` (length >= min_len) occurring in `ring`.

    An occurrence ends at index e (exclusive) and must leave at least one
    following token (e <= len(ring)-1). Among occurrences, the longest match
    wins; ties break to the most recent (largest e). Returns (e, length) or
    (-1, 0) when no qualifying match exists.
    """
    n = len(ring)
    t = len(tail)
    if t < min_len or n <= min_len or min_len <= 0:
        return (-1, 0)
    gram = tail[t - min_len : t]
    first = gram[0]
    best_e = -1
    best_len = 0
    for start in range(n - min_len - 1, -1, -1):
        if ring[start] != first:
            continue
        ok = True
        for j in range(1, min_len):
            if ring[start + j] != gram[j]:
                ok = False
                break
        if not ok:
            continue
        e = start + min_len
        # Extend the match backwards beyond the seed gram.
        length = min_len
        max_len = min(t, e)
        while length < max_len and ring[e - length - 1] == tail[t - length - 1]:
            length += 1
        if length > best_len:
            best_len = length
            best_e = e
        # Matches are scanned most-recent-first, so an equal-length later
        # candidate can never displace the current best.
    return (best_e, best_len) if best_e >= 0 else (-1, 0)
