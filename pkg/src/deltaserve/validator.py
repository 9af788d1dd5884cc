"""Streaming tool-call validation.

A per-slot state machine is fed each decoded text piece as it is produced.
It watches for a tool-call trigger (the reserved sentinel token, or the
literal text '{"name"' appearing in the response), then tracks JSON brace
depth with full string/escape awareness. When depth returns to zero the
object is captured and a grace countdown starts; once it expires the
validator signals early-stop so generation halts instead of emitting
trailing prose. Finalization parses the captured objects and filters them
against the request's declared tool names.

Every character of every piece is inspected exactly once; there is no
re-scan of accumulated text.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any

TRIGGER = '{"name"'


def _prefix_function(pattern: str) -> list[int]:
    pi = [0] * len(pattern)
    k = 0
    for i in range(1, len(pattern)):
        while k and pattern[i] != pattern[k]:
            k = pi[k - 1]
        if pattern[i] == pattern[k]:
            k += 1
        pi[i] = k
    return pi


_TRIGGER_PI = _prefix_function(TRIGGER)


class PieceAction(enum.Enum):
    CONTINUE = "continue"
    EARLY_STOP = "early-stop"


class Phase(enum.Enum):
    IDLE = "idle"
    TRACKING = "tracking"
    CLOSED = "closed"


@dataclass(frozen=True)
class ToolCall:
    name: str
    parameters: Any


@dataclass
class FinalizeResult:
    kind: str  # "tool_calls" | "text" | "rejected"
    calls: list[ToolCall]
    reason: str | None
    text: str


@dataclass
class ValidatorState:
    grace_pieces: int = 2
    phase: Phase = Phase.IDLE
    depth: int = 0
    in_string: bool = False
    escape: bool = False
    grace_remaining: int = 0
    closed_objects: list[str] = field(default_factory=list)
    stopped: bool = False
    chars_scanned: int = 0
    _buf: list[str] = field(default_factory=list)
    _trig: int = 0  # KMP state over TRIGGER
    _awaiting_open: bool = False  # sentinel seen, object not yet opened


def on_piece(state: ValidatorState, piece: str, is_sentinel: bool = False) -> PieceAction:
    """Feed one decoded piece; returns EARLY_STOP when generation should halt."""
    if state.stopped:
        return PieceAction.EARLY_STOP

    if is_sentinel and state.phase is Phase.IDLE:
        state.phase = Phase.TRACKING
        state._awaiting_open = True

    closed_now = False
    for ch in piece:
        state.chars_scanned += 1
        if state.phase is Phase.TRACKING and not state._awaiting_open:
            state._buf.append(ch)
            if state.in_string:
                if state.escape:
                    state.escape = False
                elif ch == "\\":
                    state.escape = True
                elif ch == '"':
                    state.in_string = False
            elif ch == '"':
                state.in_string = True
            elif ch == "{":
                state.depth += 1
            elif ch == "}":
                state.depth -= 1
                if state.depth == 0:
                    state.closed_objects.append("".join(state._buf))
                    state._buf.clear()
                    state.phase = Phase.CLOSED
                    state.grace_remaining = state.grace_pieces
                    closed_now = True
                    state._trig = 0
        elif state.phase is Phase.TRACKING:  # sentinel path: waiting for '{'
            if ch == "{":
                state._awaiting_open = False
                state._buf.append(ch)
                state.depth = 1
                state.in_string = False
                state.escape = False
        else:  # IDLE or CLOSED: advance the trigger matcher
            k = state._trig
            while k and ch != TRIGGER[k]:
                k = _TRIGGER_PI[k - 1]
            if ch == TRIGGER[k]:
                k += 1
            if k == len(TRIGGER):
                # '{"name"' fully seen: object is open, the quoted key closed
                state.phase = Phase.TRACKING
                state._awaiting_open = False
                state._buf = list(TRIGGER)
                state.depth = 1
                state.in_string = False
                state.escape = False
                state._trig = 0
            else:
                state._trig = k

    if state.phase is Phase.CLOSED:
        if closed_now:
            if state.grace_pieces == 0:
                state.stopped = True
                return PieceAction.EARLY_STOP
        else:
            state.grace_remaining -= 1
            if state.grace_remaining <= 0:
                state.stopped = True
                return PieceAction.EARLY_STOP
    return PieceAction.CONTINUE


def finalize(state: ValidatorState, declared: set[str], raw_text: str) -> FinalizeResult:
    """Parse captured objects and apply the declared-tool filter.

    No closed object at all means the response is plain text. Objects with a
    declared name become ToolCalls (in emission order); unknown names and
    unparseable objects are dropped, and when nothing valid remains the
    response is rejected with the first failure reason.
    """
    if not state.closed_objects:
        return FinalizeResult("text", [], None, raw_text)
    calls: list[ToolCall] = []
    reasons: list[str] = []
    for obj_text in state.closed_objects:
        try:
            obj = json.loads(obj_text)
        except (ValueError, RecursionError):
            reasons.append("malformed")
            continue
        if not isinstance(obj, dict):
            reasons.append("malformed")
            continue
        name = obj.get("name")
        if not isinstance(name, str) or name not in declared:
            reasons.append("unknown-tool")
            continue
        calls.append(ToolCall(name, obj.get("parameters", {})))
    if calls:
        return FinalizeResult("tool_calls", calls, None, raw_text)
    return FinalizeResult("rejected", [], reasons[0] if reasons else "malformed", raw_text)
