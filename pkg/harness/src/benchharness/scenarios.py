"""Scripted workload definitions.

Each scenario describes one or more agents with a system prompt, tool
schemas, per-turn user instructions (each embedding the tool call the agent
is asked to make) and scripted tool results. Salts keep every conversation's
prompts unique so the novel scenarios never hit the response cache.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

DISPATCH_ORDERS = ("sequential", "interleaved", "round_robin", "burst")


def make_tool(name: str, params: dict) -> dict:
    return {"type": "function", "function": {"name": name, "parameters": params}}


TOOLSETS = {
    "travel": [
        make_tool("get_weather", {"city_id": "int"}),
        make_tool("search_flights", {"route_id": "int"}),
        make_tool("book_hotel", {"hotel_id": "int", "nights": "int"}),
        make_tool("search_restaurants", {"area_id": "int"}),
        make_tool("create_itinerary", {"trip_id": "int"}),
    ],
    "review": [
        make_tool("analyze_code", {"file_id": "int"}),
        make_tool("run_tests", {"suite_id": "int"}),
        make_tool("check_coverage", {"target_id": "int"}),
        make_tool("lint_code", {"path_id": "int"}),
        make_tool("review_pr", {"pr_id": "int"}),
    ],
    "data": [
        make_tool("query_db", {"table_id": "int"}),
        make_tool("create_chart", {"series_id": "int"}),
        make_tool("export_data", {"sink_id": "int"}),
        make_tool("run_pipeline", {"job_id": "int"}),
        make_tool("compute_stats", {"metric_id": "int"}),
    ],
    "coding": [
        make_tool("read_file", {"file_id": "int"}),
        make_tool("search_code", {"query_id": "int"}),
        make_tool("write_file", {"file_id": "int", "rev": "int"}),
        make_tool("run_command", {"cmd_id": "int"}),
        make_tool("get_diagnostics", {"scope_id": "int"}),
    ],
}


def _filler(salt: str, tag: str, n: int) -> str:
    return " ".join(f"{tag}{salt}{i}" for i in range(n))


def _stable_int(salt: str) -> int:
    h = 2166136261
    for b in salt.encode("utf-8"):
        h = ((h ^ b) * 16777619) % (1 << 32)
    return h % 9000 + 1000


def call_json(name: str, params: dict) -> str:
    return json.dumps({"name": name, "parameters": params}, separators=(",", ":"))


def user_text(salt: str, turn: int, tool: dict, arg_base: int) -> str:
    fn = tool["function"]
    params = {k: arg_base + turn * 10 + j for j, k in enumerate(fn["parameters"])}
    lead = f"Task {salt}q{turn} apply {fn['name']} on {_filler(salt, f'm{turn}l', 7)}"
    trail = _filler(salt, f"m{turn}t", 8)
    return f"{lead} {call_json(fn['name'], params)} {trail}"


def tool_result(salt: str, turn: int) -> str:
    return f"result {salt}r{turn} status 0 rows {turn + 3} {_filler(salt, f'm{turn}r', 6)}"


@dataclass
class AgentScript:
    name: str
    system: str
    tools: list
    user_texts: list[str]
    tool_results: list[str]

    @property
    def turns(self) -> int:
        return len(self.user_texts)


@dataclass
class Scenario:
    name: str
    agents: list[AgentScript]
    dispatch: str = "sequential"
    iterations: int = 5
    warmup: int = 1
    burst_width: int = 0
    salt: str = "s"
    max_tokens: int = 80
    temperature: float = 0.0
    novel_per_iteration: bool = False  # fresh salts each iteration: zero cache hits


def build_agent(kind: str, salt: str, turns: int) -> AgentScript:
    tools = TOOLSETS[kind]
    base = _stable_int(salt + kind)
    system = (
        f"You are the {kind} agent {salt}. Use the declared tools to make progress. "
        + _filler(salt + kind, "sys", 12)
    )
    texts, results = [], []
    for t in range(turns):
        texts.append(user_text(salt + kind, t, tools[t % len(tools)], base * 100))
        results.append(tool_result(salt + kind, t))
    return AgentScript(f"{kind}-{salt}", system, tools, texts, results)


def multi_agent(dispatch: str, salt: str, iterations: int = 5, warmup: int = 1) -> Scenario:
    """Three agents, five turns each; identical prompts re-issued per iteration."""
    agents = [build_agent(kind, salt, 5) for kind in ("travel", "review", "data")]
    return Scenario(
        name=f"multi-agent-{dispatch}",
        agents=agents,
        dispatch=dispatch,
        iterations=iterations,
        warmup=warmup,
        salt=salt,
    )


def agentic_6turn(salt: str, iterations: int = 5, warmup: int = 1) -> Scenario:
    """Novel 6-turn bug-fix workflow; unique salts per iteration."""
    return Scenario(
        name="agentic-6turn",
        agents=[build_agent("coding", salt, 6)],
        dispatch="sequential",
        iterations=iterations,
        warmup=warmup,
        salt=salt,
        novel_per_iteration=True,
    )


def deep_coding(salt: str, turns: int = 35, iterations: int = 1, warmup: int = 0) -> Scenario:
    """Novel 35-turn deep workflow; reports end-to-end wall time."""
    return Scenario(
        name=f"deep-coding-{turns}",
        agents=[build_agent("coding", salt, turns)],
        dispatch="sequential",
        iterations=iterations,
        warmup=warmup,
        salt=salt,
        novel_per_iteration=True,
    )


def burst(salt: str, width: int = 8, iterations: int = 5, warmup: int = 0) -> Scenario:
    """width-way concurrent single-turn fan-out sharing a schema preamble."""
    agent = build_agent("coding", salt, 1)
    return Scenario(
        name=f"burst-{width}way",
        agents=[agent],
        dispatch="burst",
        iterations=iterations,
        warmup=warmup,
        burst_width=width,
        salt=salt,
        novel_per_iteration=True,
    )


FAMILIES = {
    "multi-sequential": lambda salt, it, wu: multi_agent("sequential", salt, it, wu),
    "multi-interleaved": lambda salt, it, wu: multi_agent("interleaved", salt, it, wu),
    "multi-round-robin": lambda salt, it, wu: multi_agent("round_robin", salt, it, wu),
    "agentic-6turn": lambda salt, it, wu: agentic_6turn(salt, it, wu),
    "deep-35turn": lambda salt, it, wu: deep_coding(salt, 35, max(1, it), 0),
    "burst-8way": lambda salt, it, wu: burst(salt, 8, it, 0),
}
