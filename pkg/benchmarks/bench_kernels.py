"""Benchmark the compiled kernels against the pure-Python fallback.

Measures the three hot paths (copy-model continuation scan, FNV-1a token
hashing, n-gram suffix matching) at context lengths typical of the deep
scenario, plus an end-to-end 12-turn conversation on each backend.

Usage: python benchmarks/bench_kernels.py [--turns 12]
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np


def bench(fn, *args, repeats: int = 7, inner: int = 20) -> float:
    """Median seconds per call."""
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn(*args)
        times.append((time.perf_counter() - t0) / inner)
    return statistics.median(times)


def make_sequence(n: int, span: int = 48) -> np.ndarray:
    rng = np.random.default_rng(5)
    body = rng.integers(0, 30_000, size=n - span, dtype=np.int32)
    tail = body[100 : 100 + span]  # embed a recurring span near the end
    return np.concatenate([body, tail]).astype(np.int32)


def kernel_rows(n: int) -> list[tuple[str, float, float]]:
    from deltaserve._kernels import _native, fallback  # type: ignore[attr-defined]

    seq = make_sequence(n)
    seq_list = seq.tolist()
    ring = seq[-2048:]
    ring_list = seq_list[-2048:]
    rows = []
    rows.append(
        (
            f"copy_continuation n={n}",
            bench(_native.copy_continuation, seq, 3),
            bench(fallback.copy_continuation, seq_list, 3, inner=3),
        )
    )
    rows.append(
        (
            f"fnv1a64_tokens    n={n}",
            bench(_native.fnv1a64_tokens, seq),
            bench(fallback.fnv1a64_tokens, seq_list, inner=3),
        )
    )
    rows.append(
        (
            "suffix_match   ring=2048",
            bench(_native.longest_suffix_match, ring, ring, 3),
            bench(fallback.longest_suffix_match, ring_list, ring_list, 3, inner=3),
        )
    )
    return rows


def scenario_seconds(turns: int, pure: bool) -> float:
    import os
    import subprocess
    import sys

    code = (
        "import time\n"
        "from deltaserve.config import ServerConfig\n"
        "from deltaserve.scheduler import InferenceCore\n"
        "from deltaserve.scenarios import deep_workflow, run_core_scenario\n"
        "import deltaserve\n"
        f"core = InferenceCore(ServerConfig())\n"
        f"sc = deep_workflow('bench', turns={turns})\n"
        "t0 = time.monotonic()\n"
        "run_core_scenario(core, sc)\n"
        "print(deltaserve.KERNEL_BACKEND, time.monotonic() - t0)\n"
    )
    env = dict(os.environ)
    if pure:
        env["DELTASERVE_PURE_PYTHON"] = "1"
    else:
        env.pop("DELTASERVE_PURE_PYTHON", None)
    out = subprocess.check_output([sys.executable, "-c", code], env=env, text=True)
    backend, seconds = out.split()
    expected = "python" if pure else "native"
    if backend != expected:
        raise RuntimeError(f"expected {expected} backend, got {backend}")
    return float(seconds)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--turns", type=int, default=12, help="scenario turns for the end-to-end row")
    args = parser.parse_args()

    try:
        from deltaserve._kernels import _native  # noqa: F401
    except ImportError:
        raise SystemExit("compiled kernels not built; run pip install -e . first")

    print(f"{'kernel':<28} {'native':>12} {'python':>12} {'speedup':>9}")
    print("-" * 64)
    for n in (1_000, 6_000):
        for name, t_native, t_py in kernel_rows(n):
            print(f"{name:<28} {t_native * 1e6:>10.1f}us {t_py * 1e6:>10.1f}us {t_py / t_native:>8.1f}x")

    t_native = scenario_seconds(args.turns, pure=False)
    t_py = scenario_seconds(args.turns, pure=True)
    name = f"deep scenario ({args.turns} turns)"
    print(f"{name:<28} {t_native * 1e3:>10.1f}ms {t_py * 1e3:>10.1f}ms {t_py / t_native:>8.1f}x")


if __name__ == "__main__":
    main()
