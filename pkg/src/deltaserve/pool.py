"""Fixed pool of named sequence ids with guard-based release.

Ids are split into a transient region (stateless requests) and a session
region (long-lived stateful sessions). Acquisition blocks with a timeout when
a region is empty; a SlotGuard returns the id to its region's free list on
every exit path, including error unwinds, via context-manager use or an
explicit release() call.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass

TRANSIENT = "transient"
SESSION = "session"


class AcquireTimeout(TimeoutError):
    """No sequence became free within the timeout; signals backpressure."""


@dataclass(frozen=True)
class PoolConfig:
    transient_count: int = 12
    session_count: int = 4
    acquire_timeout: float = 5.0

    def __post_init__(self):
        if self.transient_count <= 0 or self.session_count <= 0:
            raise ValueError("both pool regions must be non-empty")

    @property
    def total(self) -> int:
        return self.transient_count + self.session_count


class SlotGuard:
    """Holds one sequence id; release is idempotent and runs the pool's
    release hook (KV cleanup policy) exactly once."""

    __slots__ = ("seq", "kind", "_pool", "_released")

    def __init__(self, pool: "SequencePool", seq: int, kind: str):
        self._pool = pool
        self.seq = seq
        self.kind = kind
        self._released = False

    @property
    def released(self) -> bool:
        return self._released

    def release(self) -> None:
        if self._released:
            return
        self._released = True
        self._pool._return(self)

    def __enter__(self) -> "SlotGuard":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.release()

    def __repr__(self) -> str:
        state = "released" if self._released else "live"
        return f"SlotGuard(seq={self.seq}, kind={self.kind}, {state})"


class SequencePool:
    """Thread-safe two-region free list.

    release_hook(seq, kind), when given, runs on every release before the id
    re-enters the free list; the transient policy (trim uncommitted KV state)
    is wired there by the engine core.
    """

    def __init__(self, config: PoolConfig | None = None, release_hook=None):
        self.config = config or PoolConfig()
        self._release_hook = release_hook
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        t = self.config.transient_count
        self._free: dict[str, deque[int]] = {
            TRANSIENT: deque(range(t)),
            SESSION: deque(range(t, t + self.config.session_count)),
        }

    def region_of(self, seq: int) -> str:
        return TRANSIENT if seq < self.config.transient_count else SESSION

    def acquire(self, kind: str = TRANSIENT, timeout: float | None = None) -> SlotGuard:
        if kind not in (TRANSIENT, SESSION):
            raise ValueError(f"unknown pool region: {kind}")
        if timeout is None:
            timeout = self.config.acquire_timeout
        with self._cond:
            if not self._cond.wait_for(lambda: self._free[kind], timeout=timeout):
                raise AcquireTimeout(f"no free {kind} sequence within {timeout}s")
            seq = self._free[kind].popleft()
        return SlotGuard(self, seq, kind)

    def _return(self, guard: SlotGuard) -> None:
        try:
            if self._release_hook is not None:
                self._release_hook(guard.seq, guard.kind)
        finally:
            with self._cond:
                self._free[guard.kind].append(guard.seq)
                self._cond.notify_all()

    def free_counts(self) -> dict[str, int]:
        with self._lock:
            return {k: len(v) for k, v in self._free.items()}
