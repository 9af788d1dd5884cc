"""Unified KV cache: spans, aliasing, refcounts, occupancy."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deltaserve.kvcache import (
    CapacityExhausted,
    DonorRangeInvalid,
    UnifiedKvCache,
    estimate_bytes,
    slice_runs,
)


class TestAppend:
    def test_fresh_sequence_positions(self):
        kv = UnifiedKvCache(64)
        assert kv.append_cells(1, 10) == (0, 10)

    def test_consecutive_appends(self):
        kv = UnifiedKvCache(64)
        assert kv.append_cells(1, 5) == (0, 5)
        assert kv.append_cells(1, 5) == (5, 10)

    def test_capacity_exhausted(self):
        kv = UnifiedKvCache(8)
        with pytest.raises(CapacityExhausted):
            kv.append_cells(1, 10)
        assert kv.occupancy == 0  # failed append must not leak

    def test_occupancy_counts(self):
        kv = UnifiedKvCache(64)
        kv.append_cells(1, 10)
        kv.append_cells(2, 7)
        assert kv.occupancy == 17
        assert kv.free_cells == 47


class TestAlias:
    def test_alias_is_one_span_regardless_of_length(self):
        kv = UnifiedKvCache(30_000)
        kv.append_cells(1, 10_000)
        kv.seq_alias(1, 2, 0, 100)
        assert kv.span_count(2) == 1
        kv.seq_alias(1, 3, 0, 10_000)
        assert kv.span_count(3) == 1

    def test_alias_transparency_cell_identities(self):
        kv = UnifiedKvCache(64)
        kv.append_cells(1, 5)
        kv.seq_alias(1, 2, 0, 5)
        assert kv.cell_ids(2, 0, 5) == kv.cell_ids(1, 0, 5)

    def test_alias_no_new_occupancy(self):
        kv = UnifiedKvCache(64)
        kv.append_cells(1, 20)
        before = kv.occupancy
        kv.seq_alias(1, 2, 0, 20)
        assert kv.occupancy == before

    def test_donor_too_short(self):
        kv = UnifiedKvCache(64)
        kv.append_cells(1, 5)
        with pytest.raises(DonorRangeInvalid):
            kv.seq_alias(1, 2, 0, 9)

    def test_dest_must_hold_nothing_at_or_beyond_start(self):
        kv = UnifiedKvCache(64)
        kv.append_cells(1, 10)
        kv.append_cells(2, 4)
        with pytest.raises(ValueError):
            kv.seq_alias(1, 2, 0, 8)

    def test_alias_survives_donor_release(self):
        kv = UnifiedKvCache(64)
        kv.append_cells(1, 6)
        cells = kv.cell_ids(1, 0, 6)
        kv.seq_alias(1, 2, 0, 6)
        kv.release_sequence(1)
        assert kv.cell_ids(2, 0, 6) == cells
        assert kv.occupancy == 6

    def test_alias_of_alias_resolves_to_physical(self):
        kv = UnifiedKvCache(64)
        kv.append_cells(1, 8)
        kv.seq_alias(1, 2, 0, 8)
        kv.append_cells(2, 2)
        kv.seq_alias(2, 3, 0, 10)
        assert kv.cell_ids(3, 0, 8) == kv.cell_ids(1, 0, 8)
        assert kv.span_count(3) == 1


class TestTrim:
    def test_release_tail(self):
        kv = UnifiedKvCache(64)
        kv.append_cells(1, 12)
        assert kv.trim(1, 10) == 2
        assert kv.seq_len(1) == 10
        assert kv.occupancy == 10

    def test_trim_to_length_is_noop(self):
        kv = UnifiedKvCache(64)
        kv.append_cells(1, 12)
        assert kv.trim(1, 12) == 0

    def test_trim_beyond_length_rejected(self):
        kv = UnifiedKvCache(64)
        kv.append_cells(1, 4)
        with pytest.raises(ValueError):
            kv.trim(1, 5)

    def test_trim_through_alias_and_owned(self):
        kv = UnifiedKvCache(64)
        kv.append_cells(1, 8)
        kv.seq_alias(1, 2, 0, 8)
        kv.append_cells(2, 4)  # seq 2: alias [0,8) + owned [8,12)
        shared = kv.cell_ids(1, 0, 8)
        freed = kv.trim(2, 4)
        # the 4 owned cells were exclusively seq 2's: they return to the pool;
        # the aliased tail [4,8) only drops a reference
        assert freed == 4
        assert kv.seq_len(2) == 4
        assert all(kv.refcount(c) == 1 for c in shared[4:8])
        assert all(kv.refcount(c) == 2 for c in shared[:4])

    def test_trim_frees_aliased_cells_when_last_ref(self):
        kv = UnifiedKvCache(64)
        kv.append_cells(1, 8)
        kv.seq_alias(1, 2, 0, 8)
        kv.release_sequence(1)
        assert kv.occupancy == 8
        assert kv.trim(2, 0) == 8
        assert kv.occupancy == 0


class TestEstimateBytes:
    def test_paper_shape(self):
        assert estimate_bytes(32, 4096, 1000, 2) == 524_288_000

    def test_unit(self):
        assert estimate_bytes(1, 1, 1, 1) == 2

    def test_derived(self):
        assert estimate_bytes(32, 4096, 950, 2) == 498_073_600

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            estimate_bytes(0, 4096, 1000, 2)


def test_slice_runs():
    runs = [(0, 4), (10, 3), (20, 5)]
    assert slice_runs(runs, 0, 4) == [(0, 4)]
    assert slice_runs(runs, 2, 4) == [(2, 2), (10, 2)]
    assert slice_runs(runs, 4, 8) == [(10, 3), (20, 5)]
    assert slice_runs(runs, 5, 1) == [(11, 1)]


@given(
    st.lists(
        st.one_of(
            st.tuples(st.just("append"), st.integers(0, 3), st.integers(1, 6)),
            st.tuples(st.just("trim"), st.integers(0, 3), st.integers(0, 10)),
            st.tuples(st.just("alias"), st.integers(0, 3), st.integers(4, 7)),
            st.tuples(st.just("release"), st.integers(0, 7), st.integers(0, 1)),
        ),
        max_size=40,
    )
)
@settings(max_examples=150, deadline=None)
def test_random_ops_maintain_invariants(ops):
    kv = UnifiedKvCache(128)
    for op, seq, arg in ops:
        try:
            if op == "append":
                kv.append_cells(seq, arg)
            elif op == "trim":
                kv.trim(seq, min(arg, kv.seq_len(seq)))
            elif op == "alias":
                if kv.seq_len(seq) >= 2 and kv.seq_len(arg) == 0 and arg != seq:
                    kv.seq_alias(seq, arg, 0, kv.seq_len(seq))
            else:
                kv.release_sequence(seq)
        except CapacityExhausted:
            pass
        assert 0 <= kv.occupancy <= 128
        assert kv.free_cells + kv.occupancy == 128
        assert kv._refcnt.min() >= 0
    for s in range(8):
        kv.release_sequence(s)
    assert kv.occupancy == 0
