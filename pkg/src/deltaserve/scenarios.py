"""Scripted multi-agent tool-calling scenarios and a conversation driver.

Scenario text is built so the mock engine behaves like a cooperative tool
caller: each user message embeds the tool-call JSON the agent is asked to
make, and the copy-model picks it up verbatim when generation begins. To keep
the copy locked to the current instruction, every user message is internally
trigram-unique (salted filler words, numeric tool arguments, exactly one
string-valued JSON field), and message content never contains the render
markers.

The driver grows conversations as strict prefix extensions: each turn appends
the previous assistant response, a scripted tool result, and the next user
message, then posts the whole list.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from ._kernels import fnv1a32_bytes
from .engine import split_pieces


def make_tool(name: str, params: dict) -> dict:
    return {"type": "function", "function": {"name": name, "parameters": params}}


TRAVEL_TOOLS = [
    make_tool("get_weather", {"city_id": "int"}),
    make_tool("search_flights", {"route_id": "int"}),
    make_tool("book_hotel", {"hotel_id": "int", "nights": "int"}),
    make_tool("search_restaurants", {"area_id": "int"}),
    make_tool("create_itinerary", {"trip_id": "int"}),
]
REVIEW_TOOLS = [
    make_tool("analyze_code", {"file_id": "int"}),
    make_tool("run_tests", {"suite_id": "int"}),
    make_tool("check_coverage", {"target_id": "int"}),
    make_tool("lint_code", {"path_id": "int"}),
    make_tool("review_pr", {"pr_id": "int"}),
]
DATA_TOOLS = [
    make_tool("query_db", {"table_id": "int"}),
    make_tool("create_chart", {"series_id": "int"}),
    make_tool("export_data", {"sink_id": "int"}),
    make_tool("run_pipeline", {"job_id": "int"}),
    make_tool("compute_stats", {"metric_id": "int"}),
]
CODING_TOOLS = [
    make_tool("read_file", {"file_id": "int"}),
    make_tool("search_code", {"query_id": "int"}),
    make_tool("write_file", {"file_id": "int", "rev": "int"}),
    make_tool("run_command", {"cmd_id": "int"}),
    make_tool("get_diagnostics", {"scope_id": "int"}),
]

AGENT_TOOLSETS = {
    "travel": TRAVEL_TOOLS,
    "review": REVIEW_TOOLS,
    "data": DATA_TOOLS,
    "coding": CODING_TOOLS,
}


def tool_call_text(name: str, params: dict) -> str:
    """Canonical JSON for an expected tool call (matches driver reconstruction)."""
    return json.dumps({"name": name, "parameters": params}, separators=(",", ":"))


def _salt_base(salt: str) -> int:
    return fnv1a32_bytes(salt.encode("utf-8")) % 9000 + 1000


def pad_to_pieces(text: str, salt: str, tag: str, target: int) -> str:
    """Append salted filler words until the text tokenizes to >= target pieces."""
    i = 0
    while len(split_pieces(text)) < target:
        text += f" {tag}{salt}{i}"
        i += 1
    return text


def turn_user_text(
    salt: str,
    turn: int,
    tool_name: str,
    params: dict,
    lead_pieces: int = 22,
    total_pieces: int = 62,
) -> str:
    lead = pad_to_pieces(f"Task {salt}q{turn} apply {tool_name} on", salt, f"m{turn}l", lead_pieces)
    body = f"{lead} {tool_call_text(tool_name, params)}"
    return pad_to_pieces(body, salt, f"m{turn}t", total_pieces)


def turn_tool_result(salt: str, turn: int, pieces: int = 26) -> str:
    return pad_to_pieces(f"result {salt}r{turn} status 0 rows {turn + 3}", salt, f"m{turn}r", pieces)


@dataclass
class Scenario:
    name: str
    system: str
    tools: list
    user_texts: list[str]
    tool_results: list[str]
    max_tokens: int = 80
    temperature: float = 0.0

    @property
    def turn_count(self) -> int:
        return len(self.user_texts)


def _system_prompt(role_line: str, salt: str, target_pieces: int = 36) -> str:
    # together with the rendered tool schemas this lands near a 200-token preamble
    return pad_to_pieces(role_line, salt, "sys", target_pieces)


def agent_scenario(kind: str, salt: str, turns: int = 5) -> Scenario:
    """One agent of the three-agent workload (travel / review / data)."""
    tools = AGENT_TOOLSETS[kind]
    base = _salt_base(salt + kind)
    system = _system_prompt(
        f"You are the {kind} agent {salt}. Use the declared tools to make progress each turn.",
        salt + kind,
    )
    user_texts, tool_results = [], []
    for t in range(turns):
        tool = tools[t % len(tools)]["function"]
        keys = list(tool["parameters"])
        params = {k: base * 100 + t * 10 + j for j, k in enumerate(keys)}
        user_texts.append(turn_user_text(salt + kind, t, tool["name"], params))
        tool_results.append(turn_tool_result(salt + kind, t))
    return Scenario(f"{kind}-{salt}", system, tools, user_texts, tool_results)


def agentic_6turn(salt: str) -> Scenario:
    """Six-turn bug-fix workflow: five tool calls then a plain-text summary."""
    base = _salt_base(salt)
    system = _system_prompt(
        f"You are coding agent {salt}. Fix the reported bug with the declared tools.", salt
    )
    order = ["read_file", "search_code", "write_file", "run_command", "get_diagnostics"]
    by_name = {t["function"]["name"]: t["function"] for t in CODING_TOOLS}
    user_texts, tool_results = [], []
    for t, name in enumerate(order):
        keys = list(by_name[name]["parameters"])
        params = {k: base * 100 + t * 10 + j for j, k in enumerate(keys)}
        user_texts.append(turn_user_text(salt, t, name, params))
        tool_results.append(turn_tool_result(salt, t))
    user_texts.append(
        pad_to_pieces(f"Summarize the fix {salt}q5 in plain words", salt, "m5t", 48)
    )
    tool_results.append(turn_tool_result(salt, 5))
    return Scenario(f"agentic6-{salt}", system, CODING_TOOLS, user_texts, tool_results)


def deep_workflow(salt: str, turns: int = 35) -> Scenario:
    """Single agent incrementally building an app; the prompt grows every turn."""
    base = _salt_base(salt)
    system = _system_prompt(
        f"You are builder agent {salt}. Construct the web application step by step.", salt
    )
    cycle = ["write_file", "run_command", "read_file", "search_code", "get_diagnostics"]
    by_name = {t["function"]["name"]: t["function"] for t in CODING_TOOLS}
    user_texts, tool_results = [], []
    for t in range(turns):
        name = cycle[t % len(cycle)]
        keys = list(by_name[name]["parameters"])
        params = {k: base * 100 + t * 10 + j for j, k in enumerate(keys)}
        user_texts.append(turn_user_text(salt, t, name, params))
        tool_results.append(turn_tool_result(salt, t))
    return Scenario(f"deep{turns}-{salt}", system, CODING_TOOLS, user_texts, tool_results)


def burst_prompts(salt: str, width: int = 8) -> tuple[str, list, list[str]]:
    """Shared schema preamble plus `width` unique single-turn requests."""
    system = _system_prompt(
        f"You are dispatch agent {salt}. Execute exactly the requested call.", salt
    )
    base = _salt_base(salt)
    texts = [
        turn_user_text(salt, w, "run_command", {"cmd_id": base * 100 + w})
        for w in range(width)
    ]
    return system, CODING_TOOLS, texts


@dataclass
class TurnRecord:
    turn: int
    status_code: int
    body: dict
    usage: dict
    finish_reason: str
    assistant_content: str
    prefill_delta: int | None = None
    wall_ms: float = 0.0


class ConversationDriver:
    """Runs a Scenario against a chat-completions client turn by turn.

    `client` needs httpx-style post/get returning objects with .status_code
    and .json(). Each turn appends [assistant, tool-result, user] to the
    running message list, making every prompt a strict prefix extension of
    the previous one.
    """

    def __init__(self, client, scenario: Scenario, session_id: str | None = None,
                 track_prefill: bool = False):
        self.client = client
        self.scenario = scenario
        self.session_id = session_id
        self.track_prefill = track_prefill
        self.messages: list[dict] = [{"role": "system", "content": scenario.system}]
        self.records: list[TurnRecord] = []

    def _prefill_counter(self) -> int:
        resp = self.client.get("/metrics")
        return resp.json()["engine"]["prefill_tokens"]

    def request_body(self) -> dict:
        body = {
            "messages": list(self.messages),
            "tools": self.scenario.tools,
            "max_tokens": self.scenario.max_tokens,
            "temperature": self.scenario.temperature,
        }
        if self.session_id is not None:
            body["session_id"] = self.session_id
        return body

    def run_turn(self, turn: int) -> TurnRecord:
        import time as _time

        self.messages.append({"role": "user", "content": self.scenario.user_texts[turn]})
        before = self._prefill_counter() if self.track_prefill else None
        t0 = _time.monotonic()
        resp = self.client.post("/v1/chat/completions", json=self.request_body())
        wall_ms = (_time.monotonic() - t0) * 1000.0
        if resp.status_code != 200:
            raise RuntimeError(
                f"turn {turn} failed: HTTP {resp.status_code}: {resp.text[:500]}"
            )
        data = resp.json()
        after = self._prefill_counter() if self.track_prefill else None
        message = data["choices"][0]["message"]
        assistant_content = message.get("content")
        if assistant_content is None:
            parts = []
            for call in message.get("tool_calls", ()):
                fn = call["function"]
                parts.append(
                    json.dumps(
                        {"name": fn["name"], "parameters": json.loads(fn["arguments"])},
                        separators=(",", ":"),
                    )
                )
            assistant_content = "\n".join(parts)
        self.messages.append({"role": "assistant", "content": assistant_content})
        if turn < len(self.scenario.tool_results):
            self.messages.append(
                {"role": "tool", "content": self.scenario.tool_results[turn]}
            )
        record = TurnRecord(
            turn=turn,
            status_code=resp.status_code,
            body=data,
            usage=data["usage"],
            finish_reason=data["choices"][0]["finish_reason"],
            assistant_content=assistant_content,
            prefill_delta=(after - before) if self.track_prefill else None,
            wall_ms=wall_ms,
        )
        self.records.append(record)
        return record

    def run(self) -> list[TurnRecord]:
        for t in range(self.scenario.turn_count):
            self.run_turn(t)
        return self.records


def run_core_scenario(core, scenario: Scenario, max_iters_per_turn: int = 10_000):
    """Drive a scenario directly against an InferenceCore (no HTTP, no loop
    thread); returns the per-turn GenerationResults. Used by tests that need
    deterministic stepping."""
    from .caches import prompt_seed
    from .scheduler import GenerationRequest, RequestHandle

    messages = [{"role": "system", "content": scenario.system}]
    results = []
    declared = frozenset(
        t["function"]["name"] for t in scenario.tools if "function" in t
    )
    for t in range(scenario.turn_count):
        messages.append({"role": "user", "content": scenario.user_texts[t]})
        _, tokens, pieces = core.prepare_prompt(messages, scenario.tools)
        guard = core.pool.acquire("transient", timeout=1.0)
        req = GenerationRequest(
            request_id=f"{scenario.name}-t{t}",
            prompt_tokens=tokens,
            prompt_pieces=pieces,
            max_tokens=scenario.max_tokens,
            temperature=scenario.temperature,
            seed=prompt_seed(tokens),
            declared_tools=declared,
            guard=guard,
        )
        handle = RequestHandle(req)
        core.submit(handle)
        iters = 0
        while not handle.wait(timeout=0):
            core.step()
            iters += 1
            if iters > max_iters_per_turn:
                raise RuntimeError(f"turn {t} did not complete in {iters} iterations")
        if handle.error is not None:
            raise handle.error
        result = handle.result
        results.append(result)
        fin = result.finalize
        if fin.kind == "tool_calls":
            content = "\n".join(
                json.dumps({"name": c.name, "parameters": c.parameters}, separators=(",", ":"))
                for c in fin.calls
            )
        else:
            content = result.text
        messages.append({"role": "assistant", "content": content})
        if t < len(scenario.tool_results):
            messages.append({"role": "tool", "content": scenario.tool_results[t]})
    return results
