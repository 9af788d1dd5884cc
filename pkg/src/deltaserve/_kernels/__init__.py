"""Kernel backend selection.

The compiled extension (_native, built from _native.pyx) is preferred; the
pure-Python fallback is used when the extension is missing or when
DELTASERVE_PURE_PYTHON is set in the environment. Both backends implement the
same functions with identical semantics.

The compiled backend requires token sequences as C-contiguous int32 numpy
arrays; the wrappers here normalize plain lists so callers don't have to
care which backend is active.
"""

from __future__ import annotations

import os

import numpy as np

from . import fallback

FNV32_OFFSET = fallback.FNV32_OFFSET
FNV32_PRIME = fallback.FNV32_PRIME
FNV64_OFFSET = fallback.FNV64_OFFSET
FNV64_PRIME = fallback.FNV64_PRIME

if os.environ.get("DELTASERVE_PURE_PYTHON"):
    _impl = fallback
    BACKEND = "python"
else:
    try:
        from . import _native as _impl  # type: ignore[attr-defined]

        BACKEND = "native"
    except ImportError:
        _impl = fallback
        BACKEND = "python"

_NEEDS_ARRAY = BACKEND == "native"


def _as_i32(tokens) -> np.ndarray:
    if isinstance(tokens, np.ndarray) and tokens.dtype == np.int32 and tokens.flags["C_CONTIGUOUS"]:
        return tokens
    return np.ascontiguousarray(tokens, dtype=np.int32)


fnv1a32_bytes = _impl.fnv1a32_bytes
fnv1a64_bytes = _impl.fnv1a64_bytes


def fnv1a32_tokens(tokens, state: int | None = None) -> int:
    if _NEEDS_ARRAY:
        return int(_impl.fnv1a32_tokens(_as_i32(tokens), state))
    return fallback.fnv1a32_tokens(tokens, FNV32_OFFSET if state is None else state)


def fnv1a64_tokens(tokens, state: int | None = None) -> int:
    if _NEEDS_ARRAY:
        return int(_impl.fnv1a64_tokens(_as_i32(tokens), state))
    return fallback.fnv1a64_tokens(tokens, FNV64_OFFSET if state is None else state)


def copy_continuation(tokens, min_match: int) -> int:
    if _NEEDS_ARRAY:
        return int(_impl.copy_continuation(_as_i32(tokens), min_match))
    return fallback.copy_continuation(tokens, min_match)


def longest_suffix_match(ring, tail, min_len: int) -> tuple[int, int]:
    if _NEEDS_ARRAY:
        e, ln = _impl.longest_suffix_match(_as_i32(ring), _as_i32(tail), min_len)
        return int(e), int(ln)
    return fallback.longest_suffix_match(ring, tail, min_len)
