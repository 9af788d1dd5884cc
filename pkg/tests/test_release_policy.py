"""KV state policy on sequence release: transient trim vs session retention."""

from __future__ import annotations

from conftest import make_core


def test_transient_release_trims_uncommitted_cells():
    core = make_core()
    guard = core.pool.acquire("transient")
    core.kv.append_cells(guard.seq, 50)
    before = core.kv.occupancy
    guard.release()
    assert before - core.kv.occupancy == 50
    assert core.kv.seq_len(guard.seq) == 0


def test_transient_release_spares_radix_committed_cells():
    core = make_core()
    guard = core.pool.acquire("transient")
    tokens = list(range(40))
    core.kv.append_cells(guard.seq, 40)
    core.radix.save(tokens, guard.seq, 0)
    guard.release()
    assert core.kv.occupancy == 40  # still referenced by the trie
    assert core.radix.longest_prefix(tokens).length == 40


def test_session_release_retains_state():
    core = make_core()
    guard = core.pool.acquire("session")
    core.kv.append_cells(guard.seq, 30)
    before = core.kv.occupancy
    guard.release()
    assert core.kv.occupancy == before  # retention is the caller's policy
    core.kv.release_sequence(guard.seq)
