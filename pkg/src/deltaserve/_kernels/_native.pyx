# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: FNV-1a hashing, copy-model continuation scan, n-gram
suffix matching. Mirrors fallback.py; keep both in sync."""

from libc.stdint cimport int32_t, int64_t, uint8_t, uint32_t, uint64_t

FNV32_OFFSET = 0x811C9DC5
FNV32_PRIME = 0x01000193
FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3

cdef uint32_t _FNV32_OFFSET = 0x811C9DC5u
cdef uint32_t _FNV32_PRIME = 0x01000193u
cdef uint64_t _FNV64_OFFSET = 0xCBF29CE484222325u
cdef uint64_t _FNV64_PRIME = 0x100000001B3u


def fnv1a32_bytes(bytes data):
    cdef uint32_t h = _FNV32_OFFSET
    cdef const uint8_t* p = data
    cdef Py_ssize_t i, n = len(data)
    for i in range(n):
        h = (h ^ p[i]) * _FNV32_PRIME
    return h


def fnv1a64_bytes(bytes data):
    cdef uint64_t h = _FNV64_OFFSET
    cdef const uint8_t* p = data
    cdef Py_ssize_t i, n = len(data)
    for i in range(n):
        h = (h ^ p[i]) * _FNV64_PRIME
    return h


def fnv1a32_tokens(const int32_t[::1] tokens, state=None):
    cdef uint32_t h = _FNV32_OFFSET if state is None else <uint32_t>state
    cdef Py_ssize_t i, n = tokens.shape[0]
    cdef uint32_t t
    for i in range(n):
        t = <uint32_t>tokens[i]
        h = (h ^ (t & 0xFFu)) * _FNV32_PRIME
        h = (h ^ ((t >> 8) & 0xFFu)) * _FNV32_PRIME
        h = (h ^ ((t >> 16) & 0xFFu)) * _FNV32_PRIME
        h = (h ^ ((t >> 24) & 0xFFu)) * _FNV32_PRIME
    return h


def fnv1a64_tokens(const int32_t[::1] tokens, state=None):
    cdef uint64_t h = _FNV64_OFFSET if state is None else <uint64_t>state
    cdef Py_ssize_t i, n = tokens.shape[0]
    cdef uint64_t t
    for i in range(n):
        t = <uint64_t>(<uint32_t>tokens[i])
        h = (h ^ (t & 0xFFu)) * _FNV64_PRIME
        h = (h ^ ((t >> 8) & 0xFFu)) * _FNV64_PRIME
        h = (h ^ ((t >> 16) & 0xFFu)) * _FNV64_PRIME
        h = (h ^ ((t >> 24) & 0xFFu)) * _FNV64_PRIME
    return h


def copy_continuation(const int32_t[::1] tokens, int min_match):
    """Index after the most recent earlier occurrence of the trailing gram, or -1."""
    cdef Py_ssize_t n = tokens.shape[0]
    if n <= min_match or min_match <= 0:
        return -1
    cdef Py_ssize_t g = n - min_match
    cdef int32_t first = tokens[g]
    cdef Py_ssize_t start, j
    cdef bint ok
    for start in range(n - min_match - 1, -1, -1):
        if tokens[start] != first:
            continue
        ok = True
        for j in range(1, min_match):
            if tokens[start + j] != tokens[g + j]:
                ok = False
                break
        if ok:
            return start + min_match
    return -1


def longest_suffix_match(const int32_t[::1] ring, const int32_t[::1] tail, int min_len):
    """Longest (then most recent) occurrence of a suffix of tail inside ring.

    Returns (e, length) where ring[e-length:e] == tail[-length:] and e <=
    len(ring)-1, or (-1, 0).
    """
    cdef Py_ssize_t n = ring.shape[0]
    cdef Py_ssize_t t = tail.shape[0]
    if t < min_len or n <= min_len or min_len <= 0:
        return (-1, 0)
    cdef Py_ssize_t gs = t - min_len
    cdef int32_t first = tail[gs]
    cdef Py_ssize_t best_e = -1, best_len = 0
    cdef Py_ssize_t start, j, e, length, max_len
    cdef bint ok
    for start in range(n - min_len - 1, -1, -1):
        if ring[start] != first:
            continue
        ok = True
        for j in range(1, min_len):
            if ring[start + j] != tail[gs + j]:
                ok = False
                break
        if not ok:
            continue
        e = start + min_len
        length = min_len
        max_len = t if t < e else e
        while length < max_len and ring[e - length - 1] == tail[t - length - 1]:
            length += 1
        if length > best_len:
            best_len = length
            best_e = e
    if best_e >= 0:
        return (best_e, best_len)
    return (-1, 0)
