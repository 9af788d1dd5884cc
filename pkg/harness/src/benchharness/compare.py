"""Stateful-vs-baseline comparison: speedup table and cumulative wall curves."""

from __future__ import annotations

import csv
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path

from .runner import RunReport


@dataclass
class CompareReport:
    scenario: str
    rows: list[dict] = field(default_factory=list)  # one per aligned sample
    median_speedup_simulated: float = 0.0
    median_speedup_wall: float = 0.0
    wall_time_ratio: float = 0.0

    def to_csv(self, path: str | Path) -> None:
        cols = [
            "iteration", "agent", "turn",
            "stateful_simulated_ms", "baseline_simulated_ms", "speedup_simulated",
            "stateful_wall_ms", "baseline_wall_ms", "speedup_wall",
            "cum_stateful_wall_ms", "cum_baseline_wall_ms",
        ]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            writer.writerows(self.rows)

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(
                {
                    "scenario": self.scenario,
                    "median_speedup_simulated": self.median_speedup_simulated,
                    "median_speedup_wall": self.median_speedup_wall,
                    "wall_time_ratio": self.wall_time_ratio,
                    "rows": self.rows,
                },
                indent=2,
            )
        )


def compare(stateful: RunReport, baseline: RunReport) -> CompareReport:
    """Per-turn and median speedups plus cumulative wall-time curve data.

    Samples are aligned by (iteration, agent, turn); a scenario or shape
    mismatch aborts.
    """
    if stateful.scenario != baseline.scenario or stateful.dispatch != baseline.dispatch:
        raise ValueError(
            f"scenario mismatch: {stateful.scenario}/{stateful.dispatch} vs "
            f"{baseline.scenario}/{baseline.dispatch}"
        )
    if {s.mode for s in (stateful, baseline)} != {"stateful", "baseline"}:
        raise ValueError("compare() needs one stateful and one baseline report")
    key = lambda s: (s.iteration, s.agent, s.turn)
    base_by_key = {key(s): s for s in baseline.samples}
    if set(map(key, stateful.samples)) != set(base_by_key):
        raise ValueError("reports do not cover the same turns")

    report = CompareReport(scenario=stateful.scenario)
    cum_s = cum_b = 0.0
    sim_speedups, wall_speedups = [], []
    for s in stateful.samples:
        b = base_by_key[key(s)]
        sim = b.simulated_ms / s.simulated_ms if s.simulated_ms > 0 else 1.0
        wall = b.wall_ms / s.wall_ms if s.wall_ms > 0 else 1.0
        sim_speedups.append(sim)
        wall_speedups.append(wall)
        cum_s += s.wall_ms
        cum_b += b.wall_ms
        report.rows.append(
            {
                "iteration": s.iteration,
                "agent": s.agent,
                "turn": s.turn,
                "stateful_simulated_ms": round(s.simulated_ms, 3),
                "baseline_simulated_ms": round(b.simulated_ms, 3),
                "speedup_simulated": round(sim, 3),
                "stateful_wall_ms": round(s.wall_ms, 3),
                "baseline_wall_ms": round(b.wall_ms, 3),
                "speedup_wall": round(wall, 3),
                "cum_stateful_wall_ms": round(cum_s, 3),
                "cum_baseline_wall_ms": round(cum_b, 3),
            }
        )
    report.median_speedup_simulated = statistics.median(sim_speedups)
    report.median_speedup_wall = statistics.median(wall_speedups)
    report.wall_time_ratio = (
        baseline.wall_time_s / stateful.wall_time_s if stateful.wall_time_s else 1.0
    )
    return report
