"""Sequence pool: regions, blocking acquisition, guard-based release."""

from __future__ import annotations

import random
import threading

import pytest

from deltaserve.pool import AcquireTimeout, PoolConfig, SequencePool


def test_regions_are_disjoint():
    pool = SequencePool(PoolConfig(6, 2))
    g = pool.acquire("transient")
    assert 0 <= g.seq < 6
    s = pool.acquire("session")
    assert 6 <= s.seq < 8
    g.release()
    s.release()


def test_exhausted_region_times_out():
    pool = SequencePool(PoolConfig(6, 2))
    guards = [pool.acquire("transient") for _ in range(6)]
    with pytest.raises(AcquireTimeout):
        pool.acquire("transient", timeout=0.05)
    for g in guards:
        g.release()


def test_release_unblocks_waiter():
    pool = SequencePool(PoolConfig(1, 1))
    g = pool.acquire("transient")
    got = []

    def waiter():
        got.append(pool.acquire("transient", timeout=2.0).seq)

    t = threading.Thread(target=waiter)
    t.start()
    g.release()
    t.join(timeout=3.0)
    assert got == [g.seq]


def test_guard_releases_on_error_path():
    pool = SequencePool(PoolConfig(6, 2))
    with pytest.raises(RuntimeError):
        with pool.acquire("transient"):
            raise RuntimeError("mid-request failure")
    assert pool.free_counts() == {"transient": 6, "session": 2}


def test_double_release_is_noop():
    pool = SequencePool(PoolConfig(2, 1))
    g = pool.acquire("transient")
    g.release()
    g.release()
    assert pool.free_counts()["transient"] == 2


def test_release_hook_runs_before_reuse():
    seen = []
    pool = SequencePool(PoolConfig(2, 1), release_hook=lambda seq, kind: seen.append((seq, kind)))
    g = pool.acquire("transient")
    g.release()
    assert seen == [(g.seq, "transient")]


def test_unknown_region_rejected():
    pool = SequencePool(PoolConfig(1, 1))
    with pytest.raises(ValueError):
        pool.acquire("mystery")


def test_conservation_under_concurrent_stress():
    pool = SequencePool(PoolConfig(4, 2))
    rng = random.Random(11)
    errors = []

    def worker(wid: int):
        r = random.Random(wid)
        for _ in range(200):
            kind = "transient" if r.random() < 0.8 else "session"
            try:
                guard = pool.acquire(kind, timeout=2.0)
            except AcquireTimeout:
                continue
            try:
                if r.random() < 0.1:
                    raise RuntimeError("injected")
            except RuntimeError:
                pass
            finally:
                guard.release()

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=30)
        assert not t.is_alive()
    assert not errors
    assert pool.free_counts() == {"transient": 4, "session": 2}
