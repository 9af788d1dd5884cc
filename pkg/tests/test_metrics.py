"""Cost model: per-turn prediction, speedup factor, conversation totals."""

from __future__ import annotations

import math

import pytest

from deltaserve.metrics import (
    CostParams,
    MetricsRegistry,
    TurnMetrics,
    predict_turn,
    speedup,
    totals,
)

P = CostParams()  # 0.5 ms/token prefill, 0.5 ms restore, 25 ms decode, 1 ms http


class TestPredictTurn:
    def test_conventional(self):
        assert predict_turn("conventional", P, n_t=1000, m=10) == pytest.approx(
            1000 * 0.5 + 10 * 25.0
        )

    def test_radix_pld_decode_batching(self):
        # 20 tokens with 11-token drafts: ceil(20/12) = 2 batched decodes
        got = predict_turn("radix_pld", P, delta_t=150, m=20, k=11)
        assert got == pytest.approx(0.5 + 150 * 0.5 + 2 * 25.0)

    def test_degenerate_radix_equals_conventional_plus_restore(self):
        n = 640
        conv = predict_turn("conventional", P, n_t=n, m=12)
        degenerate = predict_turn("radix_pld", P, delta_t=n, m=12, k=0)
        assert degenerate == pytest.approx(conv + P.restore_ms)

    def test_cache_hit_ignores_size(self):
        assert predict_turn("cache_hit", P, n_t=10**6) == P.http_ms

    def test_unknown_regime(self):
        with pytest.raises(ValueError):
            predict_turn("warp", P)


class TestSpeedup:
    def test_paper_ratio(self):
        assert speedup(950, 800) == pytest.approx(6.33, abs=0.01)

    def test_simple(self):
        assert speedup(200, 100) == 2.0

    def test_first_turn_no_reuse(self):
        assert speedup(300, 0) == 1.0

    def test_undefined_when_not_growing(self):
        with pytest.raises(ValueError):
            speedup(100, 100)
        with pytest.raises(ValueError):
            speedup(100, 150)


class TestTotals:
    def test_five_turns(self):
        assert totals([200, 350, 500, 650, 800]) == (2500, 800)

    def test_single_turn(self):
        assert totals([321]) == (321, 321)

    def test_monotonic_cached_total_is_final_length(self):
        ns = [100, 130, 190, 400, 555]
        _, cached = totals(ns)
        assert cached == ns[-1]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            totals([])


def _turn(i: int) -> TurnMetrics:
    return TurnMetrics(
        request_id=f"r{i}",
        n_t=100 + i,
        delta_t=10,
        prefill_tokens=10,
        forward_passes=3,
        decode_passes=2,
        spec_proposed=8,
        spec_accepted=6,
        aliased_cells=90,
        generated_tokens=12,
        early_stop=True,
        cache_hit=False,
        simulated_ms=55.0,
        wall_ms=1.5,
    )


class TestRegistry:
    def test_counters_accumulate(self):
        reg = MetricsRegistry()
        reg.add("x")
        reg.add("x", 4)
        assert reg.counters()["x"] == 5

    def test_csv_roundtrip(self):
        import csv
        import io

        reg = MetricsRegistry()
        reg.record_turn(_turn(0))
        reg.record_turn(_turn(1))
        rows = list(csv.DictReader(io.StringIO(reg.turns_csv())))
        assert len(rows) == 2
        assert rows[0]["request_id"] == "r0"
        assert int(rows[1]["n_t"]) == 101

    def test_reset(self):
        reg = MetricsRegistry()
        reg.add("x")
        reg.record_turn(_turn(0))
        reg.reset()
        assert reg.counters() == {}
        assert reg.turns() == []


def test_forward_pass_bound_formula():
    # decodes to generate m tokens is ceil(m/(k+1)) under full acceptance
    for m in (1, 5, 20, 128):
        for k in (0, 3, 11):
            decodes = math.ceil(m / (k + 1))
            got = predict_turn("radix_pld", P, delta_t=0, m=m, k=k)
            assert got == pytest.approx(P.restore_ms + decodes * P.decode_ms)
