"""Scenario execution and reporting.

Conversations grow as strict prefix extensions: every turn appends the
previous assistant response, the scripted tool result, and the next user
message before posting the full list. Repeated-prompt scenarios build the
transcript once during warmup and re-issue byte-identical bodies on each
measured iteration; novel scenarios rebuild with a fresh salt per iteration
so no prompt ever repeats.
"""

from __future__ import annotations

import csv
import json
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .client import ServerClient
from .scenarios import AgentScript, Scenario, build_agent, call_json, user_text

MODES = ("stateful", "baseline")


@dataclass
class TurnSample:
    iteration: int
    agent: str
    turn: int
    wall_ms: float
    simulated_ms: float
    cache_hit: bool
    prompt_tokens: int
    cached_prompt_tokens: int
    processed_prompt_tokens: int
    completion_tokens: int
    finish_reason: str


@dataclass
class RunReport:
    scenario: str
    dispatch: str
    mode: str
    samples: list[TurnSample] = field(default_factory=list)
    wall_time_s: float = 0.0
    counters: dict = field(default_factory=dict)

    def median_wall_ms(self) -> float:
        return statistics.median(s.wall_ms for s in self.samples)

    def median_simulated_ms(self) -> float:
        return statistics.median(s.simulated_ms for s in self.samples)

    def p99_wall_ms(self) -> float:
        walls = sorted(s.wall_ms for s in self.samples)
        idx = min(len(walls) - 1, int(round(0.99 * (len(walls) - 1))))
        return walls[idx]

    def cache_hits(self) -> int:
        return sum(1 for s in self.samples if s.cache_hit)

    def to_json(self, path: str | Path) -> None:
        payload = {
            "scenario": self.scenario,
            "dispatch": self.dispatch,
            "mode": self.mode,
            "wall_time_s": self.wall_time_s,
            "counters": self.counters,
            "summary": {
                "requests": len(self.samples),
                "median_wall_ms": self.median_wall_ms(),
                "median_simulated_ms": self.median_simulated_ms(),
                "p99_wall_ms": self.p99_wall_ms(),
                "cache_hits": self.cache_hits(),
            },
            "samples": [asdict(s) for s in self.samples],
        }
        Path(path).write_text(json.dumps(payload, indent=2))

    @classmethod
    def from_json(cls, path: str | Path) -> "RunReport":
        payload = json.loads(Path(path).read_text())
        report = cls(
            scenario=payload["scenario"],
            dispatch=payload["dispatch"],
            mode=payload["mode"],
            wall_time_s=payload["wall_time_s"],
            counters=payload.get("counters", {}),
        )
        report.samples = [TurnSample(**s) for s in payload["samples"]]
        return report

    def to_csv(self, path: str | Path) -> None:
        cols = [
            "scenario", "dispatch", "mode", "iteration", "agent", "turn",
            "wall_ms", "simulated_ms", "cache_hit", "prompt_tokens",
            "cached_prompt_tokens", "processed_prompt_tokens",
            "completion_tokens", "finish_reason",
        ]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for s in self.samples:
                writer.writerow(
                    [self.scenario, self.dispatch, self.mode, s.iteration, s.agent,
                     s.turn, f"{s.wall_ms:.3f}", f"{s.simulated_ms:.3f}",
                     int(s.cache_hit), s.prompt_tokens, s.cached_prompt_tokens,
                     s.processed_prompt_tokens, s.completion_tokens, s.finish_reason]
                )


class ConversationState:
    """One agent's growing message list (strict prefix extension per turn)."""

    def __init__(self, script: AgentScript, max_tokens: int, temperature: float):
        self.script = script
        self.max_tokens = max_tokens
        self.temperature = temperature
        self.messages: list[dict] = [{"role": "system", "content": script.system}]
        self.turn = 0

    def next_body(self) -> dict:
        self.messages.append({"role": "user", "content": self.script.user_texts[self.turn]})
        return {
            "messages": list(self.messages),
            "tools": self.script.tools,
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
        }

    def absorb(self, response: dict) -> None:
        message = response["choices"][0]["message"]
        content = message.get("content")
        if content is None:
            content = "\n".join(
                call_json(c["function"]["name"], json.loads(c["function"]["arguments"]))
                for c in message.get("tool_calls", [])
            )
        self.messages.append({"role": "assistant", "content": content})
        if self.turn < len(self.script.tool_results):
            self.messages.append(
                {"role": "tool", "content": self.script.tool_results[self.turn]}
            )
        self.turn += 1


def dispatch_sequence(n_agents: int, turns: int, dispatch: str) -> list[tuple[int, int]]:
    """(agent, turn) order for one full pass over every conversation."""
    if dispatch == "sequential":
        return [(a, t) for a in range(n_agents) for t in range(turns)]
    if dispatch == "interleaved":
        return [(a, t) for t in range(turns) for a in range(n_agents)]
    if dispatch == "round_robin":
        order = []
        for t in range(turns):
            start = t % n_agents
            for k in range(n_agents):
                order.append(((start + k) % n_agents, t))
        return order
    raise ValueError(f"unknown dispatch order: {dispatch!r}")


def _sample(iteration: int, agent: str, turn: int, data: dict, hit: bool, wall_ms: float) -> TurnSample:
    usage = data["usage"]
    return TurnSample(
        iteration=iteration,
        agent=agent,
        turn=turn,
        wall_ms=wall_ms,
        simulated_ms=float(usage.get("simulated_ms", 0.0)),
        cache_hit=hit,
        prompt_tokens=usage["prompt_tokens"],
        cached_prompt_tokens=usage.get("cached_prompt_tokens", 0),
        processed_prompt_tokens=usage.get("processed_prompt_tokens", usage["prompt_tokens"]),
        completion_tokens=usage["completion_tokens"],
        finish_reason=data["choices"][0]["finish_reason"],
    )


def _post(client: ServerClient, body: dict) -> tuple[dict, bool, float]:
    t0 = time.perf_counter()
    data, hit = client.chat(body)
    return data, hit, (time.perf_counter() - t0) * 1000.0


def _run_repeated_prompt(scenario: Scenario, client: ServerClient, report: RunReport) -> None:
    turns = scenario.agents[0].turns
    order = dispatch_sequence(len(scenario.agents), turns, scenario.dispatch)
    states = [
        ConversationState(a, scenario.max_tokens, scenario.temperature)
        for a in scenario.agents
    ]
    # warmup pass: drive the conversations once, freezing each turn's body
    frozen: dict[tuple[int, int], dict] = {}
    for a, t in order:
        state = states[a]
        assert state.turn == t, "dispatch order must visit each turn exactly once"
        body = state.next_body()
        frozen[(a, t)] = body
        data, _, _ = _post(client, body)
        state.absorb(data)
    for extra in range(scenario.warmup - 1):
        for a, t in order:
            _post(client, frozen[(a, t)])
    t_start = time.monotonic()
    for iteration in range(scenario.iterations):
        for a, t in order:
            data, hit, wall = _post(client, frozen[(a, t)])
            report.samples.append(
                _sample(iteration, scenario.agents[a].name, t, data, hit, wall)
            )
    report.wall_time_s = time.monotonic() - t_start


def _run_novel(scenario: Scenario, client: ServerClient, report: RunReport) -> None:
    kind = scenario.agents[0].name.split("-")[0]
    turns = scenario.agents[0].turns
    for w in range(scenario.warmup):
        state = ConversationState(
            build_agent(kind, f"{scenario.salt}w{w}", turns),
            scenario.max_tokens,
            scenario.temperature,
        )
        for _ in range(turns):
            data, _, _ = _post(client, state.next_body())
            state.absorb(data)
    t_start = time.monotonic()
    for iteration in range(scenario.iterations):
        script = build_agent(kind, f"{scenario.salt}i{iteration}", turns)
        state = ConversationState(script, scenario.max_tokens, scenario.temperature)
        for t in range(turns):
            data, hit, wall = _post(client, state.next_body())
            state.absorb(data)
            report.samples.append(_sample(iteration, script.name, t, data, hit, wall))
    report.wall_time_s = time.monotonic() - t_start


def _run_burst(scenario: Scenario, client: ServerClient, report: RunReport) -> None:
    script = scenario.agents[0]
    width = scenario.burst_width
    t_start = time.monotonic()
    for iteration in range(scenario.iterations):
        bodies = []
        for slot in range(width):
            salt = f"{scenario.salt}i{iteration}s{slot}"
            text = user_text(salt, 0, script.tools[slot % len(script.tools)], 7000 + slot)
            bodies.append(
                {
                    "messages": [
                        {"role": "system", "content": script.system},
                        {"role": "user", "content": text},
                    ],
                    "tools": script.tools,
                    "max_tokens": scenario.max_tokens,
                    "temperature": scenario.temperature,
                }
            )
        with ThreadPoolExecutor(max_workers=width) as pool:
            results = list(pool.map(lambda b: _post(client, b), bodies))
        for slot, (data, hit, wall) in enumerate(results):
            report.samples.append(
                _sample(iteration, f"{script.name}-w{slot}", 0, data, hit, wall)
            )
    report.wall_time_s = time.monotonic() - t_start


def run_scenario(
    scenario: Scenario,
    endpoint: str,
    mode: str = "stateful",
    out_dir: str | Path | None = None,
) -> RunReport:
    """Execute a scenario against a live server; optionally write CSV+JSON."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    report = RunReport(scenario=scenario.name, dispatch=scenario.dispatch, mode=mode)
    with ServerClient(endpoint) as client:
        client.apply_mode(mode)
        client.reset()
        before = client.metrics()
        if scenario.dispatch == "burst":
            _run_burst(scenario, client, report)
        elif scenario.novel_per_iteration:
            _run_novel(scenario, client, report)
        else:
            _run_repeated_prompt(scenario, client, report)
        after = client.metrics()
        client.apply_mode("stateful")  # leave the server in its default state
    report.counters = {
        "prefill_tokens": after["engine"]["prefill_tokens"] - before["engine"]["prefill_tokens"],
        "forward_calls": after["engine"]["forward_calls"] - before["engine"]["forward_calls"],
        "decode_passes": after["engine"]["decode_passes"] - before["engine"]["decode_passes"],
        "response_cache_hits": after["caches"]["response"]["hits"]
        - before["caches"]["response"]["hits"],
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"{scenario.name}-{mode}"
        report.to_csv(out / f"{stem}.csv")
        report.to_json(out / f"{stem}.json")
    return report
