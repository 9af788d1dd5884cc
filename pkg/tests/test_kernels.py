"""Backend equivalence and oracle checks for the hot kernels.

The compiled extension and the pure-Python fallback must agree bit-for-bit;
both are additionally checked against brute-force reference implementations.
"""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deltaserve import _kernels
from deltaserve._kernels import fallback

native = pytest.importorskip(
    "deltaserve._kernels._native", reason="compiled kernels not built"
)


def _ref_fnv(data: bytes, offset: int, prime: int, mask: int) -> int:
    # independent formulation: functional fold, distinct from the kernels
    from functools import reduce

    return reduce(lambda h, b: ((h ^ b) * prime) & mask, data, offset)


def _token_bytes(tokens) -> bytes:
    return b"".join(int(t).to_bytes(4, "little") for t in tokens)


def _brute_copy_continuation(tokens, mm):
    n = len(tokens)
    if n <= mm:
        return -1
    gram = list(tokens[n - mm : n])
    for e in range(n - 1, mm - 1, -1):
        if list(tokens[e - mm : e]) == gram:
            return e
    return -1


def _brute_longest_suffix_match(ring, tail, lmin):
    best = (-1, 0)
    n, t = len(ring), len(tail)
    for length in range(lmin, min(t, n) + 1):
        suffix = list(tail[t - length :])
        for e in range(n - 1, length - 1, -1):
            if list(ring[e - length : e]) == suffix:
                if length > best[1]:
                    best = (e, length)
                break
    return best


tokens_st = st.lists(st.integers(0, 7), min_size=0, max_size=40)


class TestFnv:
    def test_reference_vectors(self):
        assert _kernels.fnv1a32_bytes(b"") == 2166136261
        assert _kernels.fnv1a64_bytes(b"") == 0xCBF29CE484222325
        for data in (b"a", b"hello world", bytes(range(256))):
            assert _kernels.fnv1a32_bytes(data) == _ref_fnv(data, 2166136261, 16777619, 0xFFFFFFFF)
            assert _kernels.fnv1a64_bytes(data) == _ref_fnv(
                data, 0xCBF29CE484222325, 0x100000001B3, (1 << 64) - 1
            )

    @given(tokens_st)
    def test_token_hash_is_4byte_le_serialization(self, tokens):
        data = _token_bytes(tokens)
        assert _kernels.fnv1a32_tokens(tokens) == _ref_fnv(data, 2166136261, 16777619, 0xFFFFFFFF)
        assert _kernels.fnv1a64_tokens(tokens) == _ref_fnv(
            data, 0xCBF29CE484222325, 0x100000001B3, (1 << 64) - 1
        )

    @given(tokens_st, tokens_st)
    def test_incremental_state_matches_full(self, a, b):
        full = _kernels.fnv1a64_tokens(a + b)
        assert _kernels.fnv1a64_tokens(b, _kernels.fnv1a64_tokens(a)) == full


class TestBackendEquivalence:
    @given(tokens_st, st.integers(1, 5))
    @settings(max_examples=200)
    def test_copy_continuation(self, tokens, mm):
        arr = np.asarray(tokens, dtype=np.int32)
        got_native = native.copy_continuation(arr, mm)
        got_py = fallback.copy_continuation(tokens, mm)
        assert got_native == got_py == _brute_copy_continuation(tokens, mm)

    @given(tokens_st, st.integers(1, 4))
    @settings(max_examples=200)
    def test_longest_suffix_match_self(self, ring, lmin):
        arr = np.asarray(ring, dtype=np.int32)
        got_native = tuple(native.longest_suffix_match(arr, arr, lmin))
        got_py = fallback.longest_suffix_match(ring, ring, lmin)
        assert got_native == got_py == _brute_longest_suffix_match(ring, ring, lmin)

    @given(tokens_st, tokens_st, st.integers(1, 4))
    @settings(max_examples=200)
    def test_longest_suffix_match_separate_tail(self, ring, tail, lmin):
        r = np.asarray(ring, dtype=np.int32)
        t = np.asarray(tail, dtype=np.int32)
        got_native = tuple(native.longest_suffix_match(r, t, lmin))
        got_py = fallback.longest_suffix_match(ring, tail, lmin)
        assert got_native == got_py == _brute_longest_suffix_match(ring, tail, lmin)

    @given(tokens_st)
    def test_hashes(self, tokens):
        arr = np.asarray(tokens, dtype=np.int32)
        assert int(native.fnv1a64_tokens(arr)) == fallback.fnv1a64_tokens(tokens)
        assert int(native.fnv1a32_tokens(arr)) == fallback.fnv1a32_tokens(tokens)


def test_wrapper_accepts_lists_and_arrays():
    tokens = [5, 6, 7, 5, 6]
    assert _kernels.copy_continuation(tokens, 2) == 2
    assert _kernels.copy_continuation(np.asarray(tokens, dtype=np.int32), 2) == 2
