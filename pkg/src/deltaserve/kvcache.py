"""Unified cell store shared by every sequence.

Cells are accounted one per token position; the per-layer factor of real KV
memory appears only in estimate_bytes. Each live sequence has a page table of
spans mapping contiguous logical positions to physical cell runs. Aliasing a
prefix from a donor inserts exactly one span into the destination table
regardless of prefix length; sharing is tracked with per-cell reference
counts so cells outlive the sequence that produced them for as long as any
page table or radix node still points at them.
"""

from __future__ import annotations

import bisect
import threading
from dataclasses import dataclass

import numpy as np

Run = tuple[int, int]  # (first physical cell, length)


class CapacityExhausted(RuntimeError):
    """No free cells remain for the requested append."""


class DonorRangeInvalid(ValueError):
    """Donor sequence does not cover the requested alias range."""


@dataclass(frozen=True)
class Span:
    """One page-table entry: a run list backing [logical_start, logical_start+length)."""

    logical_start: int
    length: int
    runs: tuple[Run, ...]
    owned: bool


def slice_runs(runs, offset: int, length: int) -> list[Run]:
    """Sub-runs covering [offset, offset+length) of the concatenated runs."""
    out: list[Run] = []
    pos = 0
    end = offset + length
    for start, ln in runs:
        if pos + ln <= offset:
            pos += ln
            continue
        if pos >= end:
            break
        lo = max(offset - pos, 0)
        hi = min(ln, end - pos)
        if hi > lo:
            out.append((start + lo, hi - lo))
        pos += ln
    return out


def run_cells(runs) -> int:
    return sum(ln for _, ln in runs)


def estimate_bytes(layers: int, hidden: int, n_tokens: int, bytes_per_value: int) -> int:
    """KV bytes for n cached tokens: 2 (K and V) * layers * hidden * n * width."""
    if min(layers, hidden, n_tokens, bytes_per_value) <= 0:
        raise ValueError("all inputs must be positive")
    return 2 * layers * hidden * n_tokens * bytes_per_value


class UnifiedKvCache:
    """Refcounted cell pool with per-sequence span page tables.

    All mutation is expected to come from the scheduler's coordination
    context; the internal lock additionally makes occupancy reads from
    request threads consistent.
    """

    def __init__(self, capacity_cells: int):
        if capacity_cells <= 0:
            raise ValueError("capacity_cells must be positive")
        self.capacity_cells = capacity_cells
        self._refcnt = np.zeros(capacity_cells, dtype=np.int32)
        self._free_runs: list[list[int]] = [[0, capacity_cells]]  # sorted [start, len]
        self._free_count = capacity_cells
        self._tables: dict[int, list[Span]] = {}
        self._lock = threading.RLock()

    # -- occupancy ------------------------------------------------------------

    @property
    def free_cells(self) -> int:
        with self._lock:
            return self._free_count

    @property
    def occupancy(self) -> int:
        """Live physical cells, each counted once however many spans alias it."""
        with self._lock:
            return self.capacity_cells - self._free_count

    def seq_len(self, seq: int) -> int:
        with self._lock:
            table = self._tables.get(seq)
            if not table:
                return 0
            last = table[-1]
            return last.logical_start + last.length

    def span_count(self, seq: int) -> int:
        with self._lock:
            return len(self._tables.get(seq, ()))

    # -- allocator ------------------------------------------------------------

    def _allocate(self, n: int) -> list[Run]:
        if n > self._free_count:
            raise CapacityExhausted(f"need {n} cells, {self._free_count} free")
        out: list[Run] = []
        need = n
        while need > 0:
            start, ln = self._free_runs[0]
            take = min(ln, need)
            out.append((start, take))
            if take == ln:
                self._free_runs.pop(0)
            else:
                self._free_runs[0] = [start + take, ln - take]
            need -= take
        self._free_count -= n
        return out

    def _free_run(self, start: int, length: int) -> None:
        starts = [r[0] for r in self._free_runs]
        i = bisect.bisect_left(starts, start)
        self._free_runs.insert(i, [start, length])
        # coalesce with neighbours
        if i + 1 < len(self._free_runs):
            cur, nxt = self._free_runs[i], self._free_runs[i + 1]
            if cur[0] + cur[1] == nxt[0]:
                cur[1] += nxt[1]
                self._free_runs.pop(i + 1)
        if i > 0:
            prv, cur = self._free_runs[i - 1], self._free_runs[i]
            if prv[0] + prv[1] == cur[0]:
                prv[1] += cur[1]
                self._free_runs.pop(i)
        self._free_count += length

    # -- refcounting ------------------------------------------------------------

    def incref_runs(self, runs) -> None:
        with self._lock:
            for start, ln in runs:
                seg = self._refcnt[start : start + ln]
                if seg.min(initial=1) < 1:
                    raise ValueError("incref of a dead cell")
                seg += 1

    def decref_runs(self, runs) -> int:
        """Drop one reference from every cell in runs; returns cells freed to the pool."""
        with self._lock:
            return self._decref_locked(runs)

    def _decref_locked(self, runs) -> int:
        freed = 0
        for start, ln in runs:
            seg = self._refcnt[start : start + ln]
            if seg.min(initial=1) < 1:
                raise ValueError("refcount underflow")
            seg -= 1
            zero = np.flatnonzero(seg == 0)
            if len(zero):
                # group consecutive zero indices into runs
                breaks = np.flatnonzero(np.diff(zero) > 1)
                begin = 0
                for b in list(breaks) + [len(zero) - 1]:
                    s = int(zero[begin])
                    e = int(zero[b])
                    self._free_run(start + s, e - s + 1)
                    freed += e - s + 1
                    begin = b + 1
        return freed

    def refcount(self, cell: int) -> int:
        with self._lock:
            return int(self._refcnt[cell])

    # -- sequence operations ----------------------------------------------------

    def append_cells(self, seq: int, n: int) -> tuple[int, int]:
        """Extend seq by n owned cells; returns the logical range [p, p+n)."""
        if n <= 0:
            raise ValueError("n must be positive")
        with self._lock:
            runs = self._allocate(n)
            for start, ln in runs:
                self._refcnt[start : start + ln] = 1
            table = self._tables.setdefault(seq, [])
            p = table[-1].logical_start + table[-1].length if table else 0
            table.append(Span(p, n, tuple(runs), owned=True))
            return (p, p + n)

    def resolve_runs(self, seq: int, start: int, end: int) -> list[Run]:
        """Physical runs backing logical positions [start, end) of seq."""
        with self._lock:
            if start >= end:
                return []
            if self.seq_len(seq) < end:
                raise DonorRangeInvalid(f"seq {seq} covers {self.seq_len(seq)} < {end}")
            out: list[Run] = []
            for span in self._tables[seq]:
                s0, s1 = span.logical_start, span.logical_start + span.length
                if s1 <= start or s0 >= end:
                    continue
                out.extend(slice_runs(span.runs, max(start - s0, 0), min(s1, end) - max(start, s0)))
            return out

    def seq_alias(self, donor: int, dest: int, start: int, end: int) -> None:
        """Metadata-only prefix share: dest gains one alias span over donor's
        cells for [start, end). Cell contents are never copied and the number
        of page-table entries written does not depend on end - start."""
        if start >= end:
            raise ValueError("empty alias range")
        with self._lock:
            if self.seq_len(donor) < end:
                raise DonorRangeInvalid(
                    f"donor {donor} covers {self.seq_len(donor)} < {end}"
                )
            if self.seq_len(dest) != start:
                raise ValueError(
                    f"dest {dest} must hold exactly [0, {start}) before aliasing"
                )
            runs = tuple(self.resolve_runs(donor, start, end))
            for s, ln in runs:
                self._refcnt[s : s + ln] += 1
            self._tables.setdefault(dest, []).append(
                Span(start, end - start, runs, owned=False)
            )

    def alias_runs(self, dest: int, runs) -> None:
        """Alias explicit physical runs (radix restore path); one span inserted."""
        runs = tuple(runs)
        n = run_cells(runs)
        if n == 0:
            return
        with self._lock:
            for s, ln in runs:
                seg = self._refcnt[s : s + ln]
                if seg.min(initial=1) < 1:
                    raise ValueError("alias of a dead cell")
                seg += 1
            table = self._tables.setdefault(dest, [])
            p = table[-1].logical_start + table[-1].length if table else 0
            table.append(Span(p, n, runs, owned=False))

    def trim(self, seq: int, from_pos: int) -> int:
        """Drop positions >= from_pos; returns cells returned to the free pool."""
        with self._lock:
            table = self._tables.get(seq, [])
            length = self.seq_len(seq)
            if from_pos > length:
                raise ValueError(f"trim beyond length ({from_pos} > {length})")
            freed = 0
            while table:
                span = table[-1]
                if span.logical_start >= from_pos:
                    freed += self._decref_locked(span.runs)
                    table.pop()
                elif span.logical_start + span.length > from_pos:
                    keep = from_pos - span.logical_start
                    kept = tuple(slice_runs(span.runs, 0, keep))
                    dropped = slice_runs(span.runs, keep, span.length - keep)
                    freed += self._decref_locked(dropped)
                    table[-1] = Span(span.logical_start, keep, kept, span.owned)
                    break
                else:
                    break
            return freed

    def release_sequence(self, seq: int) -> int:
        """Trim everything and drop the page table."""
        with self._lock:
            freed = self.trim(seq, 0) if seq in self._tables else 0
            self._tables.pop(seq, None)
            return freed

    def cell_ids(self, seq: int, start: int, end: int) -> list[int]:
        """Physical identity of each position (tests: alias transparency)."""
        out: list[int] = []
        for s, ln in self.resolve_runs(seq, start, end):
            out.extend(range(s, s + ln))
        return out
