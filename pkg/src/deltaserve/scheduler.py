"""Admit-many/run-few continuous-batching core.

One coordination context (the step loop) owns all engine, KV-cache and radix
mutation. Request handlers render, tokenize and acquire a pool sequence on
their own threads, then submit a GenerationRequest and block on its handle.

Each iteration:
  1. admits pending requests FIFO against the cell budget (charging only the
     prompt delta past the radix / session match, plus max_tokens),
  2. plans a heterogeneous batch: one decode or verify entry per decoding
     slot, then workload-adaptive prefill chunks, grouping byte-identical
     prefixes into leader/follower entries so a shared preamble is computed
     once and aliased to followers,
  3. executes the plan against the mock engine and KV cache, feeding every
     committed piece to the slot's streaming validator, committing finished
     sequences to the radix, and releasing pool guards on every exit path.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

from ._kernels import fnv1a64_tokens
from .caches import LruCache, RenderCache, TokenizeCache
from .config import FEATURE_FLAGS, ServerConfig
from .engine import Logits, MockEngine, ModelConfig
from .kvcache import UnifiedKvCache, slice_runs
from .metrics import CostParams, MetricsRegistry, TurnMetrics
from .pool import PoolConfig, SequencePool, SlotGuard, TRANSIENT
from .radix import BudgetExceeded, RadixTrie
from .speculator import SpecConfig, SpecState, lookup_ngram, update_acceptance, verify
from .validator import FinalizeResult, PieceAction, ValidatorState, finalize, on_piece

logger = logging.getLogger(__name__)


class InjectedFault(RuntimeError):
    """Deliberate mid-request failure used by the leak-freedom stress tests."""


@dataclass(frozen=True)
class SchedulerConfig:
    n_batch: int = 4096
    chunk_min: int = 128
    chunk_max: int = 4096
    fair_chunk: int = 1024
    high_water: float = 0.95
    group_window: int = 8
    cell_budget: int = 16384
    latency_sensitive_max_tokens: int = 32
    spec_base_cap: int = 16
    spec_d0: int = 4
    spec_gate_threshold: float = 0.30
    spec_floor_cap: int = 2

    def __post_init__(self):
        if not (self.chunk_min <= self.fair_chunk <= self.chunk_max <= self.n_batch):
            raise ValueError("require chunk_min <= fair_chunk <= chunk_max <= n_batch")


def chunk_for(cfg: SchedulerConfig, n_prefill: int, latency_sensitive_present: bool) -> int:
    """Per-iteration prefill chunk: clamp(n_batch/N, chunk_min, chunk_max),
    narrowed to the fair chunk when a latency-sensitive slot is co-resident
    under contention."""
    chunk = min(max(cfg.n_batch // max(1, n_prefill), cfg.chunk_min), cfg.chunk_max)
    if n_prefill >= 2 and latency_sensitive_present:
        chunk = min(chunk, cfg.fair_chunk)
    return chunk


def spec_cap(active_decoders: int, slot_ema: float, cfg: SchedulerConfig) -> int:
    """Max draft length as a joint function of decoder count and acceptance.

    Below the confidence gate the cap drops to the floor; above it the base
    cap halves once per doubling of active decoders beyond D0.
    """
    if slot_ema < cfg.spec_gate_threshold:
        return cfg.spec_floor_cap
    active = max(1, active_decoders)
    halvings = 0
    while (cfg.spec_d0 << halvings) < active:
        halvings += 1
    return max(1, cfg.spec_base_cap // (1 << halvings))


@dataclass
class SessionHandle:
    """A session-pool sequence bound to a long-lived conversation."""

    session_id: str
    guard: SlotGuard
    tokens: list[int] = field(default_factory=list)
    busy: bool = False


@dataclass
class GenerationRequest:
    request_id: str
    prompt_tokens: list[int]
    prompt_pieces: list[str]
    max_tokens: int
    temperature: float
    seed: int
    declared_tools: frozenset = frozenset()
    stream: bool = False
    guard: SlotGuard | None = None
    session: SessionHandle | None = None
    fail_after_tokens: int | None = None


@dataclass
class GenerationResult:
    request_id: str
    generated: list[int]
    text: str
    finish_reason: str
    finalize: FinalizeResult
    n_t: int
    cached_prompt_tokens: int
    prefill_tokens: int
    decode_passes: int
    spec_proposed: int
    spec_accepted: int
    spec_rejected: int
    aliased_cells: int
    early_stopped: bool
    simulated_ms: float
    wall_ms: float


class RequestHandle:
    """Completion signal plus (for streaming) the per-request piece queue."""

    def __init__(self, request: GenerationRequest):
        self.request = request
        self.result: GenerationResult | None = None
        self.error: Exception | None = None
        self.cancelled = False
        self.pieces: queue.Queue | None = queue.Queue() if request.stream else None
        self.submitted_at = time.monotonic()
        self.deferred_noted = False
        self._event = threading.Event()

    def complete(self, result: GenerationResult) -> None:
        self.result = result
        self._event.set()
        if self.pieces is not None:
            self.pieces.put(None)

    def fail(self, exc: Exception) -> None:
        self.error = exc
        self._event.set()
        if self.pieces is not None:
            self.pieces.put(None)

    def wait(self, timeout: float | None = None) -> bool:
        return self._event.wait(timeout)


class EntryKind(str, Enum):
    PREFILL_LEADER = "prefill-leader"
    PREFILL_FOLLOWER = "prefill-follower-alias"
    DECODE = "decode"
    SPEC_VERIFY = "spec-verify"


@dataclass
class PlanEntry:
    kind: EntryKind
    slot: "Slot"
    length: int = 0
    leader: "Slot | None" = None
    predicted: list[int] | None = None


@dataclass
class BatchPlan:
    entries: list[PlanEntry]
    prefill_tokens: int
    decode_entries: int


class Slot:
    """Full scheduling state of one admitted request."""

    __slots__ = (
        "handle",
        "request",
        "seq",
        "tokens",
        "pieces",
        "prompt_len",
        "cursor",
        "generated",
        "text",
        "validator",
        "spec",
        "latency_sensitive",
        "cached_prefix",
        "prefix_hash",
        "counters",
        "sim_ms",
        "finished",
        "early_stopped",
        "budget_charge",
    )

    def __init__(
        self,
        handle: RequestHandle,
        seq: int,
        cursor: int,
        spec_state: SpecState,
        validator_state: ValidatorState,
        latency_threshold: int,
    ):
        self.handle = handle
        self.request = handle.request
        self.seq = seq
        self.tokens: list[int] = list(self.request.prompt_tokens)
        self.pieces: list[str] = list(self.request.prompt_pieces)
        self.prompt_len = len(self.tokens)
        self.cursor = cursor
        self.generated: list[int] = []
        self.text: list[str] = []
        self.validator = validator_state
        self.spec = spec_state
        self.latency_sensitive = self.request.max_tokens <= latency_threshold
        self.cached_prefix = cursor
        self.prefix_hash = fnv1a64_tokens(self.tokens[:cursor])
        self.counters = {
            "prefill": 0,
            "prefill_chunks": 0,
            "decode_passes": 0,
            "proposed": 0,
            "accepted": 0,
            "rejected": 0,
            "aliased": 0,
        }
        self.sim_ms = 0.0
        self.finished = False
        self.early_stopped = False
        # Cells this request may occupy: prompt delta plus generation budget.
        # Charged in full until completion; charging only remaining work would
        # let admissions oversubscribe cells that are still resident.
        self.budget_charge = (self.prompt_len - cursor) + self.request.max_tokens

    @property
    def in_decode(self) -> bool:
        return self.cursor >= self.prompt_len


def _common_len(a, b) -> int:
    n = min(len(a), len(b))
    i = 0
    while i < n and a[i] == b[i]:
        i += 1
    return i


class InferenceCore:
    """Engine, caches, pool and scheduler wired together behind submit()/step()."""

    def __init__(self, config: ServerConfig | None = None):
        self.config = config or ServerConfig()
        cfg = self.config
        self.engine = MockEngine(
            ModelConfig(
                layers=cfg.layers,
                hidden=cfg.hidden,
                vocab=cfg.vocab,
                copy_min_match=cfg.copy_min_match,
                bytes_per_value=cfg.bytes_per_value,
            )
        )
        self.kv = UnifiedKvCache(cfg.capacity_cells)
        self.pool = SequencePool(
            PoolConfig(cfg.pool_transient, cfg.pool_session, cfg.acquire_timeout_s),
            release_hook=self._release_hook,
        )
        self.sched = SchedulerConfig(
            n_batch=cfg.n_batch,
            chunk_min=cfg.chunk_min,
            chunk_max=cfg.chunk_max,
            fair_chunk=cfg.fair_chunk,
            high_water=cfg.high_water,
            group_window=cfg.group_window,
            cell_budget=cfg.capacity_cells // 2,
            latency_sensitive_max_tokens=cfg.latency_sensitive_max_tokens,
            spec_base_cap=cfg.spec_base_cap,
            spec_d0=cfg.spec_d0,
            spec_gate_threshold=cfg.spec_gate_threshold,
            spec_floor_cap=cfg.spec_floor_cap,
        )
        self.radix = RadixTrie(self.kv, cell_budget=cfg.capacity_cells // 2)
        self.spec_cfg = SpecConfig(
            buffer_tokens=cfg.spec_buffer,
            min_match=cfg.spec_min_match,
            max_lookahead=cfg.spec_max_lookahead,
            ema_decay=cfg.spec_ema_decay,
        )
        self.cost = CostParams(
            prefill_ms_per_token=cfg.prefill_ms_per_token,
            restore_ms=cfg.restore_ms,
            decode_ms=cfg.decode_ms,
            http_ms=cfg.http_ms,
        )
        self.metrics = MetricsRegistry()
        self.flags = {name: getattr(cfg, name) for name in FEATURE_FLAGS}
        self.render_cache = RenderCache(cfg.render_cache_entries)
        self.tokenize_cache = TokenizeCache(cfg.tokenize_cache_entries)
        self.response_cache = LruCache(cfg.response_cache_entries)

        self._lock = threading.RLock()
        self._wake = threading.Condition(self._lock)
        self._pending: deque[RequestHandle] = deque()
        self._slots: list[Slot] = []
        self._running = False
        self._thread: threading.Thread | None = None
        self._spec_pool = (
            ThreadPoolExecutor(max_workers=cfg.spec_workers, thread_name_prefix="spec")
            if cfg.spec_workers > 0
            else None
        )
        self.iterations = 0

    # -- request-thread API -----------------------------------------------------

    def _release_hook(self, seq: int, kind: str) -> None:
        if kind == TRANSIENT:
            self.kv.release_sequence(seq)

    def prepare_prompt(self, messages, tools) -> tuple[str, list[int], list[str]]:
        """Render (render cache) then tokenize (tokenize cache, delta-aware)."""
        rendered, _ = self.render_cache.get_or_render(messages, tools, self.engine.render_chat)
        ids, pieces, _ = self.tokenize_cache.get_or_tokenize(
            rendered, self.engine.tokenize_with_pieces
        )
        return rendered, ids, pieces

    def validate_size(self, prompt_tokens: int, max_tokens: int) -> None:
        """Reject requests that could never fit the admission budget even cold."""
        if prompt_tokens + max_tokens > self.sched.cell_budget:
            raise ValueError(
                f"request needs up to {prompt_tokens + max_tokens} cells; "
                f"budget is {self.sched.cell_budget}"
            )

    def submit(self, handle: RequestHandle) -> None:
        with self._wake:
            self._pending.append(handle)
            self._wake.notify_all()

    # -- lifecycle ----------------------------------------------------------------

    def start(self) -> None:
        with self._lock:
            if self._running:
                return
            self._running = True
        self._thread = threading.Thread(target=self._loop, daemon=True, name="deltaserve-core")
        self._thread.start()

    def stop(self) -> None:
        with self._wake:
            self._running = False
            self._wake.notify_all()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None
        with self._lock:
            while self._pending:
                handle = self._pending.popleft()
                self._cleanup_unadmitted(handle)
                handle.fail(RuntimeError("server shutting down"))
            for slot in list(self._slots):
                self._fail_slot(slot, RuntimeError("server shutting down"), [])
        if self._spec_pool is not None:
            self._spec_pool.shutdown(wait=False)

    def _loop(self) -> None:
        logger.info("coordination loop started")
        while True:
            with self._wake:
                if not self._running:
                    break
                if not self._pending and not self._slots:
                    self._wake.wait(timeout=0.05)
                    if not self._running:
                        break
                    if not self._pending and not self._slots:
                        continue
                progressed = bool(self._step_locked())
            if not progressed:
                time.sleep(0.001)  # fully deferred; yield until budget frees
        logger.info("coordination loop stopped")

    # -- iteration ------------------------------------------------------------------

    def step(self) -> list[dict]:
        """Run one scheduler iteration; returns per-slot progress events."""
        with self._lock:
            return self._step_locked()

    def _step_locked(self) -> list[dict]:
        self.iterations += 1
        events: list[dict] = []
        self._admit(events)
        plan = self.plan_iteration()
        self._execute(plan, events)
        return events

    # -- admission -------------------------------------------------------------------

    def _admit(self, events: list[dict]) -> None:
        while self._pending:
            handle = self._pending[0]
            if handle.cancelled:
                self._pending.popleft()
                self._cleanup_unadmitted(handle)
                continue
            req = handle.request
            session = req.session
            if session is not None and session.busy:
                break
            n_p = len(req.prompt_tokens)
            match_runs = []
            if session is not None:
                m = min(_common_len(session.tokens, req.prompt_tokens), n_p - 1)
            elif self.flags["radix_enabled"]:
                match = self.radix.longest_prefix(req.prompt_tokens)
                m = min(match.length, n_p - 1)
                if m:
                    match_runs = slice_runs(match.runs, 0, m)
            else:
                m = 0
            charge = (n_p - m) + req.max_tokens
            projected = sum(s.budget_charge for s in self._slots if not s.finished)
            if projected + charge > self.sched.cell_budget:
                if not handle.deferred_noted:
                    handle.deferred_noted = True
                    self.metrics.add("requests_deferred")
                break

            self._pending.popleft()
            if session is not None:
                seq = session.guard.seq
                if self.kv.seq_len(seq) > m:
                    self.kv.trim(seq, m)
                del session.tokens[m:]
                session.busy = True
                restored = False
            else:
                seq = req.guard.seq
                restored = m > 0
                if restored:
                    self.kv.alias_runs(seq, match_runs)

            slot = Slot(
                handle,
                seq,
                cursor=m,
                spec_state=SpecState(self.spec_cfg),
                validator_state=ValidatorState(grace_pieces=self.config.validator_grace_pieces),
                latency_threshold=self.sched.latency_sensitive_max_tokens,
            )
            if restored:
                slot.counters["aliased"] = m
                self.metrics.add("aliased_cells", m)
                self._charge_time(slot, self.cost.restore_ms)
            self._slots.append(slot)
            self.metrics.add("requests_admitted")
            events.append({"event": "admitted", "request": req.request_id, "cached_prefix": m})

    def _cleanup_unadmitted(self, handle: RequestHandle) -> None:
        req = handle.request
        if req.guard is not None and not req.guard.released:
            req.guard.release()

    # -- planning -------------------------------------------------------------------

    def _window_hash(self, window) -> int:
        return fnv1a64_tokens(window)

    def group_prefills(self, slots: list[Slot]) -> list[list[Slot]]:
        """Group slots whose processed prefix and next-K window are byte-identical.

        The FNV window hash nominates candidates; byte comparison confirms
        them, so a hash collision can never merge divergent prompts.
        """
        k = self.sched.group_window
        buckets: dict[tuple, list[list[Slot]]] = {}
        groups: list[list[Slot]] = []
        for s in slots:
            window = s.tokens[s.cursor : s.cursor + k]
            key = (s.cursor, s.prefix_hash, self._window_hash(window))
            placed = False
            for group in buckets.setdefault(key, []):
                leader = group[0]
                if (
                    leader.tokens[leader.cursor : leader.cursor + k] == window
                    and leader.tokens[: leader.cursor] == s.tokens[: s.cursor]
                ):
                    group.append(s)
                    placed = True
                    break
            if not placed:
                group = [s]
                buckets[key].append(group)
                groups.append(group)
        return groups

    def _propose(self, slot: Slot, active_decoders: int) -> list[int] | None:
        remaining = slot.request.max_tokens - len(slot.generated)
        if remaining <= 1:
            return None
        cap = min(
            self.spec_cfg.max_lookahead,
            spec_cap(active_decoders, slot.spec.ema, self.sched),
            remaining - 1,
        )
        if cap < 1:
            return None
        ring = slot.tokens[-self.spec_cfg.buffer_tokens :]
        predicted = lookup_ngram(ring, ring, self.spec_cfg.min_match, cap)
        return predicted or None

    def plan_iteration(self) -> BatchPlan:
        active = [s for s in self._slots if not s.finished]
        decode_slots = [s for s in active if s.in_decode]
        prefill_slots = [s for s in active if not s.in_decode]
        entries: list[PlanEntry] = []

        if self.flags["speculation_enabled"] and decode_slots:
            n_dec = len(decode_slots)
            if self._spec_pool is not None:
                proposals = list(
                    self._spec_pool.map(lambda s: self._propose(s, n_dec), decode_slots)
                )
            else:
                proposals = [self._propose(s, n_dec) for s in decode_slots]
        else:
            proposals = [None] * len(decode_slots)
        for slot, predicted in zip(decode_slots, proposals):
            kind = EntryKind.SPEC_VERIFY if predicted else EntryKind.DECODE
            entries.append(PlanEntry(kind, slot, predicted=predicted))
        decode_entries = len(entries)

        budget = self.sched.n_batch - decode_entries
        prefill_tokens = 0
        over_high_water = (
            self.kv.occupancy >= self.sched.high_water * self.kv.capacity_cells
        )
        # High-water backpressure defers prefill chunks while decode keeps
        # running; with no decoder to protect, deferral would only livelock.
        if prefill_slots and budget > 0 and not (over_high_water and decode_slots):
            n = len(prefill_slots)
            chunk = chunk_for(self.sched, n, any(s.latency_sensitive for s in active))
            if self.flags["grouping_enabled"] and n >= 2:
                groups = self.group_prefills(prefill_slots)
            else:
                groups = [[s] for s in prefill_slots]
            for group in groups:
                if budget <= 0:
                    break  # chunk-granularity deferral: remaining groups wait
                leader = group[0]
                length = min(chunk, leader.prompt_len - leader.cursor, budget)
                if length <= 0:
                    continue
                entries.append(PlanEntry(EntryKind.PREFILL_LEADER, leader, length=length))
                prefill_tokens += length
                budget -= length
                for follower in group[1:]:
                    run = self._common_run(leader, follower, length)
                    if run > 0:
                        entries.append(
                            PlanEntry(
                                EntryKind.PREFILL_FOLLOWER, follower, length=run, leader=leader
                            )
                        )
        return BatchPlan(entries, prefill_tokens, decode_entries)

    def _common_run(self, leader: Slot, follower: Slot, length: int) -> int:
        start = leader.cursor
        # keep at least one token for the follower's own final forward pass
        max_run = min(length, follower.prompt_len - follower.cursor - 1)
        run = 0
        lt, ft = leader.tokens, follower.tokens
        while run < max_run and lt[start + run] == ft[start + run]:
            run += 1
        return run

    # -- execution --------------------------------------------------------------------

    def _ensure_capacity(self, n: int) -> bool:
        if self.kv.free_cells >= n:
            return True
        self.radix.evict(n - self.kv.free_cells)
        return self.kv.free_cells >= n

    def _charge_time(self, slot: Slot, ms: float) -> None:
        slot.sim_ms += ms
        if self.config.realtime_factor > 0:
            time.sleep(ms / 1000.0 * self.config.realtime_factor)

    def _per_token_seed(self, slot: Slot) -> int:
        return (slot.request.seed + 0x9E3779B9 * (len(slot.generated) + 1)) & 0xFFFFFFFF

    def _sample_from(self, slot: Slot, lg: Logits) -> tuple[int, int | None]:
        if slot.request.temperature == 0:
            return lg.argmax_id, lg.copy_source
        tok = self.engine.sample(lg, slot.request.temperature, self._per_token_seed(slot))
        return tok, (lg.copy_source if tok == lg.argmax_id else None)

    def _commit_token(self, slot: Slot, tok: int, src: int | None, events: list[dict]) -> bool:
        """Append one committed token; returns True when the slot finished."""
        piece = slot.pieces[src] if src is not None else self.engine.synthetic_piece(tok)
        slot.tokens.append(tok)
        slot.pieces.append(piece)
        slot.generated.append(tok)
        slot.text.append(piece)
        req = slot.request
        if (
            req.fail_after_tokens is not None
            and len(slot.generated) >= req.fail_after_tokens
        ):
            raise InjectedFault(req.request_id)
        action = PieceAction.CONTINUE
        if self.flags["validator_enabled"]:
            action = on_piece(
                slot.validator, piece, is_sentinel=(tok == self.engine.config.sentinel_id)
            )
        if slot.handle.pieces is not None:
            slot.handle.pieces.put(piece)
        if action is PieceAction.EARLY_STOP:
            slot.early_stopped = True
            self.metrics.add("early_stops")
            self._finish_slot(slot, "stop", events)
            return True
        if len(slot.generated) >= req.max_tokens:
            self._finish_slot(slot, "length", events)
            return True
        return False

    def _execute(self, plan: BatchPlan, events: list[dict]) -> None:
        # prefill first: a slot finishing its prompt this iteration starts
        # decoding next iteration
        for entry in plan.entries:
            if entry.kind in (EntryKind.PREFILL_LEADER, EntryKind.PREFILL_FOLLOWER):
                self._run_guarded(self._run_prefill_entry, entry, events)
        for entry in plan.entries:
            if entry.kind in (EntryKind.DECODE, EntryKind.SPEC_VERIFY):
                self._run_guarded(self._run_decode_entry, entry, events)

    def _run_guarded(self, fn, entry: PlanEntry, events: list[dict]) -> None:
        slot = entry.slot
        if slot.finished:
            return
        try:
            fn(entry, events)
        except InjectedFault as exc:
            self._fail_slot(slot, exc, events)
        except Exception as exc:  # pragma: no cover - defensive
            logger.exception("slot %s failed", slot.request.request_id)
            self._fail_slot(slot, exc, events)

    def _run_prefill_entry(self, entry: PlanEntry, events: list[dict]) -> None:
        slot = entry.slot
        if entry.kind is EntryKind.PREFILL_FOLLOWER:
            leader = entry.leader
            run = entry.length
            end = slot.cursor + run
            # Skip when the leader's chunk was deferred, or the leader already
            # finished and released its table; the follower then prefills the
            # region itself on a later iteration.
            if leader is None or leader.cursor < end or self.kv.seq_len(leader.seq) < end:
                return
            self.kv.seq_alias(leader.seq, slot.seq, slot.cursor, end)
            batch = slot.tokens[slot.cursor : slot.cursor + run]
            slot.prefix_hash = fnv1a64_tokens(batch, slot.prefix_hash)
            slot.cursor += run
            slot.counters["aliased"] += run
            self.metrics.add("aliased_cells", run)
            self.metrics.add("grouped_follower_tokens", run)
            events.append(
                {
                    "event": "prefill-alias",
                    "request": slot.request.request_id,
                    "tokens": run,
                    "leader": leader.request.request_id,
                }
            )
            return

        length = entry.length
        if not self._ensure_capacity(length):
            events.append(
                {"event": "chunk-deferred", "request": slot.request.request_id, "tokens": length}
            )
            return
        self.kv.append_cells(slot.seq, length)
        ctx = slot.tokens[: slot.cursor]
        batch = slot.tokens[slot.cursor : slot.cursor + length]
        logits = self.engine.forward(ctx, batch)
        self.engine.ledger.charge_prefill(length)
        slot.counters["prefill"] += length
        slot.counters["prefill_chunks"] += 1
        slot.prefix_hash = fnv1a64_tokens(batch, slot.prefix_hash)
        slot.cursor += length
        self._charge_time(slot, length * self.cost.prefill_ms_per_token)
        events.append(
            {"event": "prefill", "request": slot.request.request_id, "tokens": length}
        )
        if slot.cursor >= slot.prompt_len:
            tok, src = self._sample_from(slot, logits[length - 1])
            self._commit_token(slot, tok, src, events)

    def _run_decode_entry(self, entry: PlanEntry, events: list[dict]) -> None:
        slot = entry.slot
        if entry.kind is EntryKind.SPEC_VERIFY:
            predicted = entry.predicted or []
            if not self._ensure_capacity(len(predicted) + 1):
                events.append({"event": "decode-deferred", "request": slot.request.request_id})
                return
            outcome, accepted, bonus = verify(
                self.engine, self.kv, slot.seq, slot.tokens, predicted
            )
            self.engine.ledger.charge_decode()
            slot.counters["decode_passes"] += 1
            slot.counters["proposed"] += outcome.proposed
            slot.counters["accepted"] += outcome.accepted
            slot.counters["rejected"] += outcome.proposed - outcome.accepted
            self.metrics.add("spec_proposed", outcome.proposed)
            self.metrics.add("spec_accepted", outcome.accepted)
            update_acceptance(slot.spec, outcome)
            self._charge_time(slot, self.cost.decode_ms)
            events.append(
                {
                    "event": "spec-verify",
                    "request": slot.request.request_id,
                    "proposed": outcome.proposed,
                    "accepted": outcome.accepted,
                }
            )
            done = False
            for tok, src in accepted:
                done = self._commit_token(slot, tok, src, events)
                if done:
                    break
            if not done:
                tok, src = self._sample_from(slot, bonus)
                self._commit_token(slot, tok, src, events)
            return

        if not self._ensure_capacity(1):
            events.append({"event": "decode-deferred", "request": slot.request.request_id})
            return
        self.kv.append_cells(slot.seq, 1)
        logits = self.engine.forward(slot.tokens[:-1], [slot.tokens[-1]])
        self.engine.ledger.charge_decode()
        slot.counters["decode_passes"] += 1
        self._charge_time(slot, self.cost.decode_ms)
        events.append({"event": "decode", "request": slot.request.request_id})
        tok, src = self._sample_from(slot, logits[0])
        self._commit_token(slot, tok, src, events)

    # -- completion ---------------------------------------------------------------------

    def _finish_slot(self, slot: Slot, reason: str, events: list[dict]) -> None:
        req = slot.request
        processed = len(slot.tokens) - 1
        if self.kv.seq_len(slot.seq) > processed:
            self.kv.trim(slot.seq, processed)

        if self.flags["radix_enabled"] and (
            req.session is None or self.config.radix_commit_sessions
        ):
            try:
                self.radix.save(slot.tokens[:processed], slot.seq, n_past=slot.cached_prefix)
            except BudgetExceeded:
                self.metrics.add("radix_save_skipped")

        if req.session is not None:
            req.session.tokens = list(slot.tokens[:processed])
            req.session.busy = False
        else:
            req.guard.release()

        raw_text = "".join(slot.text)
        if self.flags["validator_enabled"]:
            fin = finalize(slot.validator, set(req.declared_tools), raw_text)
        else:
            fin = FinalizeResult("text", [], None, raw_text)
        if fin.kind == "tool_calls":
            finish_reason = "tool_calls"
        elif reason == "length":
            finish_reason = "length"
        else:
            finish_reason = "stop"

        result = GenerationResult(
            request_id=req.request_id,
            generated=list(slot.generated),
            text=raw_text,
            finish_reason=finish_reason,
            finalize=fin,
            n_t=slot.prompt_len,
            cached_prompt_tokens=slot.cached_prefix,
            prefill_tokens=slot.counters["prefill"],
            decode_passes=slot.counters["decode_passes"],
            spec_proposed=slot.counters["proposed"],
            spec_accepted=slot.counters["accepted"],
            spec_rejected=slot.counters["rejected"],
            aliased_cells=slot.counters["aliased"],
            early_stopped=slot.early_stopped,
            simulated_ms=slot.sim_ms,
            wall_ms=(time.monotonic() - slot.handle.submitted_at) * 1000.0,
        )
        slot.finished = True
        if slot in self._slots:
            self._slots.remove(slot)
        self.metrics.add("requests_completed")
        self.metrics.record_turn(
            TurnMetrics(
                request_id=req.request_id,
                n_t=slot.prompt_len,
                delta_t=slot.prompt_len - slot.cached_prefix,
                prefill_tokens=slot.counters["prefill"],
                forward_passes=slot.counters["prefill_chunks"] + slot.counters["decode_passes"],
                decode_passes=slot.counters["decode_passes"],
                spec_proposed=slot.counters["proposed"],
                spec_accepted=slot.counters["accepted"],
                aliased_cells=slot.counters["aliased"],
                generated_tokens=len(slot.generated),
                early_stop=slot.early_stopped,
                cache_hit=False,
                simulated_ms=slot.sim_ms,
                wall_ms=result.wall_ms,
            )
        )
        events.append(
            {"event": "completed", "request": req.request_id, "finish_reason": finish_reason}
        )
        slot.handle.complete(result)

    def _fail_slot(self, slot: Slot, exc: Exception, events: list[dict]) -> None:
        req = slot.request
        slot.finished = True
        if slot in self._slots:
            self._slots.remove(slot)
        if req.session is not None:
            keep = len(req.session.tokens)
            if self.kv.seq_len(slot.seq) > keep:
                self.kv.trim(slot.seq, keep)
            req.session.busy = False
        elif req.guard is not None:
            req.guard.release()
        self.metrics.add("requests_failed")
        events.append({"event": "failed", "request": req.request_id, "error": str(exc)})
        slot.handle.fail(exc)

    # -- introspection ---------------------------------------------------------------------

    def set_flag(self, name: str, value: bool) -> None:
        if name not in self.flags:
            raise KeyError(name)
        with self._lock:
            self.flags[name] = bool(value)

    def reset_state(self) -> None:
        """Clear caches, counters and the radix (admin/reset; not request state)."""
        with self._lock:
            self.radix.clear()
            self.response_cache.clear()
            self.render_cache.clear()
            self.tokenize_cache.clear()
            self.metrics.reset()

    def snapshot_metrics(self) -> dict:
        snap = {
            "iterations": self.iterations,
            "engine": self.engine.ledger.snapshot(),
            "scheduler": self.metrics.counters(),
            "kv": {
                "capacity_cells": self.kv.capacity_cells,
                "occupancy": self.kv.occupancy,
                "free_cells": self.kv.free_cells,
            },
            "radix": {
                "cells": self.radix.total_cells,
                "nodes": self.radix.node_count(),
                "evicted_cells_total": self.radix.evicted_cells_total,
                "dump": self.radix.dump(),
            },
            "pool": self.pool.free_counts(),
            "caches": {
                "response": self.response_cache.stats(),
                "render": self.render_cache.stats(),
                "tokenize": self.tokenize_cache.stats(),
            },
            "flags": dict(self.flags),
        }
        return snap
