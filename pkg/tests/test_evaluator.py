from __future__ import annotations

import math
import sys
import time
from pathlib import Path

import pytest

from evocell.compiler import compile_network
from evocell.evaluator import (
    EvalBudget,
    EvalCache,
    EvalResult,
    ExternalBackend,
    SurrogateBackend,
    SurrogateSpec,
    evaluate_batch,
    surrogate_accuracy,
)
from evocell.genome import BlockKind, canonical_digest
from evocell.rng import RngStream

from conftest import kinds_genome, varied_genome

I, R, B, C = BlockKind.INVR, BlockKind.RES, BlockKind.BOT, BlockKind.CRLU

PLUGINS = Path(__file__).parent / "plugins"


def plugin_cmd(name, *args):
    return [sys.executable, str(PLUGINS / name), *args]


def describe(genome):
    return compile_network(genome, head_widths=(16,), num_classes=2, input_size=(32, 32))


def fast_budget(time_limit=2.0):
    return EvalBudget(epochs=1, time_limit=time_limit, max_params=10**9)


class CountingBackend:
    """Wraps a backend and counts evaluate calls."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0
        self.name = inner.name

    def evaluate(self, genome, budget):
        self.calls += 1
        return self.inner.evaluate(genome, budget)


class TestSurrogate:
    def test_alternating_planted_pair(self):
        spec = SurrogateSpec(planted_pair=(I, B), target_depth=7, noise_sigma=0.0)
        g = kinds_genome([I, B, I, B, I, B, I])
        expected = spec.base + spec.pair_weight * math.ceil(6 / 2) / 6
        assert surrogate_accuracy(g, spec) == pytest.approx(expected, abs=1e-12)

    def test_zero_pairs_scores_base(self):
        spec = SurrogateSpec(planted_pair=(I, B), target_depth=4, noise_sigma=0.0)
        g = kinds_genome([R, R, R, R])
        assert surrogate_accuracy(g, spec) == pytest.approx(spec.base, abs=1e-12)

    def test_noise_is_digest_seeded(self):
        spec = SurrogateSpec(noise_sigma=0.05, seed=3)
        g = kinds_genome([I, I, R])
        assert surrogate_accuracy(g, spec) == surrogate_accuracy(g, spec)

    def test_depth_penalty(self):
        spec = SurrogateSpec(planted_pair=(I, B), target_depth=3, noise_sigma=0.0)
        g = kinds_genome([R, R, R, R, R])
        assert surrogate_accuracy(g, spec) == pytest.approx(spec.base - 2 * spec.depth_penalty)

    def test_monotone_in_planted_pair_count(self):
        spec = SurrogateSpec(planted_pair=(I, I), target_depth=6, noise_sigma=0.0)
        # Fixed length 6, increasing counts of the planted adjacency.
        sequences = [
            [R, R, R, R, R, R],
            [I, I, R, R, R, R],
            [I, I, I, R, R, R],
            [I, I, I, I, I, I],
        ]
        scores = [surrogate_accuracy(kinds_genome(s), spec) for s in sequences]
        assert scores == sorted(scores)
        assert len(set(scores)) == len(scores)

    def test_clamped_to_unit_interval(self):
        rng = RngStream("clamp")
        spec = SurrogateSpec(pair_weight=0.7, noise_sigma=0.05)
        for _ in range(200):
            value = surrogate_accuracy(varied_genome(rng), spec)
            assert 0.0 <= value <= 1.0

    def test_vacuous_clamp_rejected(self):
        with pytest.raises(ValueError):
            SurrogateSpec(base=0.5, pair_weight=0.6)


class TestCacheAndBatch:
    def test_second_evaluation_hits_cache(self):
        g = kinds_genome([I, I, R])
        backend = CountingBackend(SurrogateBackend(SurrogateSpec(), describe))
        cache = EvalCache()
        first = evaluate_batch([g], backend, fast_budget(), cache)[0]
        second = evaluate_batch([g], backend, fast_budget(), cache)[0]
        assert backend.calls == 1
        assert second.source == "cache"
        assert second.accuracy == first.accuracy  # bit-for-bit

    def test_batch_with_cache_hits_calls_backend_for_misses_only(self):
        rng = RngStream("batch-hits")
        genomes = [varied_genome(rng, max_depth=6) for _ in range(8)]
        backend = CountingBackend(SurrogateBackend(SurrogateSpec(), describe))
        cache = EvalCache()
        evaluate_batch(genomes[:3], backend, fast_budget(), cache)
        assert backend.calls == 3
        evaluate_batch(genomes, backend, fast_budget(), cache)
        assert backend.calls == 8  # exactly 5 new calls

    def test_duplicate_genome_single_call(self):
        g = kinds_genome([B, C])
        backend = CountingBackend(SurrogateBackend(SurrogateSpec(), describe))
        results = evaluate_batch([g, g], backend, fast_budget(), EvalCache())
        assert backend.calls == 1
        assert results[0] == results[1]

    def test_parallelism_levels_agree(self):
        rng = RngStream("par")
        genomes = [varied_genome(rng, max_depth=6) for _ in range(16)]
        backend = SurrogateBackend(SurrogateSpec(), describe)
        serial = evaluate_batch(genomes, backend, fast_budget(), None, parallelism=1)
        threaded = evaluate_batch(genomes, backend, fast_budget(), None, parallelism=8)
        assert serial == threaded

    def test_order_restored_with_slow_backend(self):
        genomes = [kinds_genome([R] * n) for n in (5, 4, 3, 2, 1)]

        class SlowBackend:
            name = "slow"

            def evaluate(self, genome, budget):
                time.sleep(0.02 * len(genome))  # later inputs finish first
                return EvalResult(digest=canonical_digest(genome),
                                  accuracy=len(genome) / 10, params=1, source=self.name)

        results = evaluate_batch(genomes, SlowBackend(), fast_budget(), None, parallelism=5)
        assert [r.digest for r in results] == [canonical_digest(g) for g in genomes]

    def test_journal_persists_across_instances(self, tmp_path):
        journal = tmp_path / "cache.jsonl"
        g = kinds_genome([I, R, B])
        backend = CountingBackend(SurrogateBackend(SurrogateSpec(), describe))
        first = evaluate_batch([g], backend, fast_budget(), EvalCache(journal))[0]
        reloaded = EvalCache(journal)
        hit = evaluate_batch([g], backend, fast_budget(), reloaded)[0]
        assert backend.calls == 1
        assert hit.source == "cache"
        assert hit.accuracy == first.accuracy


class TestExternalProtocol:
    def test_echo_roundtrip(self):
        backend = ExternalBackend(plugin_cmd("echo_plugin.py", "0.5"), describe)
        try:
            g = kinds_genome([I, B])
            result = backend.evaluate(g, fast_budget())
            assert result.accuracy == 0.5
            assert result.source == "external"
            assert result.params == describe(g).param_count
        finally:
            backend.close()

    def test_malformed_line_is_protocol_error_naming_line(self):
        backend = ExternalBackend(plugin_cmd("malformed_plugin.py"), describe)
        try:
            g = kinds_genome([I, B])
            results = evaluate_batch([g], backend, fast_budget(), None)
            assert results[0].accuracy == 0.0
            assert not results[0].ok
            assert "line 2" in results[0].note
        finally:
            backend.close()

    def test_out_of_order_ids_rematched(self):
        # Two in-flight requests on one plugin process; it replies to ids 2, 1.
        from concurrent.futures import ThreadPoolExecutor

        from evocell.evaluator import PluginClient

        client = PluginClient(plugin_cmd("out_of_order_plugin.py"))
        try:
            g1, g2 = kinds_genome([I, B]), kinds_genome([R, C])

            def ask(request_id, genome):
                from evocell.genome import to_doc

                return client.roundtrip(request_id, to_doc(genome),
                                        describe(genome).to_doc(),
                                        fast_budget(), canonical_digest(genome))

            with ThreadPoolExecutor(max_workers=2) as pool:
                f1 = pool.submit(ask, 1, g1)
                f2 = pool.submit(ask, 2, g2)
                r1, r2 = f1.result(timeout=10), f2.result(timeout=10)
            assert r1["id"] == 1 and r1["accuracy"] == pytest.approx(0.1)
            assert r2["id"] == 2 and r2["accuracy"] == pytest.approx(0.2)
        finally:
            client.shutdown()

    def test_timeout_scores_zero_and_run_continues(self):
        backend = ExternalBackend(plugin_cmd("slow_plugin.py"), describe, grace_s=0.2)
        try:
            g = kinds_genome([I, B])
            results = evaluate_batch([g], backend, fast_budget(time_limit=0.2), None)
            assert results[0].accuracy == 0.0
            assert not results[0].ok
            assert "timeout" in results[0].note
        finally:
            backend.close()

    def test_error_response_scores_zero_and_plugin_survives(self):
        backend = ExternalBackend(plugin_cmd("error_plugin.py"), describe)
        try:
            g1, g2 = kinds_genome([I, B]), kinds_genome([R, C])
            first = backend.evaluate(g1, fast_budget())
            second = backend.evaluate(g2, fast_budget())
            for result in (first, second):
                assert result.accuracy == 0.0
                assert not result.ok
                assert "synthetic failure" in result.note
        finally:
            backend.close()
