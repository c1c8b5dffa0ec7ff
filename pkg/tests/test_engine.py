from __future__ import annotations

import json
from pathlib import Path

import pytest

from evocell.engine import (
    EngineState,
    Individual,
    Intervention,
    RunConfig,
    ScriptedInterventions,
    apply_intervention,
    build_report,
    init_run,
    latest_checkpoint,
    load_checkpoint,
    load_run,
    run,
    run_generations,
    run_state,
    save_checkpoint,
    step_generation,
)
from evocell.errors import (
    ConfigError,
    CorruptCheckpoint,
    FormatVersionMismatch,
    InvalidPhaseTransition,
    UnknownDigest,
)
from evocell.genome import validate


def small_config(**overrides) -> RunConfig:
    defaults = dict(population_size=8, max_generations=5, phase2_generations=3, seed=11)
    defaults.update(overrides)
    return RunConfig(**defaults)


class TestInitRun:
    def test_seeded_runs_identical(self):
        a = init_run(RunConfig(seed=7))
        b = init_run(RunConfig(seed=7))
        assert [i.digest for i in a.population] == [i.digest for i in b.population]

    def test_population_size_one(self):
        state = init_run(RunConfig(population_size=1, survivors_k=1, seed=3))
        run_generations(state, 3)
        assert len(state.population) == 1
        assert len(state.history) == 3

    def test_phase1_uniform_width(self):
        state = init_run(RunConfig(seed=5))
        for ind in state.population:
            assert ind.genome.stem_out == 32
            assert all(g.out_ch == 32 for g in ind.genome.layers)
            assert 3 <= len(ind.genome) <= 9
            assert validate(ind.genome).ok

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            RunConfig(population_size=0)
        with pytest.raises(ConfigError):
            RunConfig(population_size=4, survivors_k=5)
        with pytest.raises(ConfigError):
            RunConfig(survivors_k=2, elitism=3)
        with pytest.raises(ConfigError):
            RunConfig(backend="external")


class TestStepGeneration:
    def test_population_size_conserved(self):
        state = init_run(small_config())
        for _ in range(4):
            step_generation(state)
            assert len(state.population) == 8

    def test_best_fitness_monotone(self):
        state = init_run(small_config(seed=19))
        run_generations(state, 8)
        bests = [row.best for row in state.history]
        assert bests == sorted(bests)

    def test_completed_generation_fully_evaluated(self):
        state = init_run(small_config())
        step_generation(state)
        survivors = state.population[: state.config.survivors_k]
        assert all(ind.fitness is not None for ind in survivors)

    def test_first_checkpoint_bytes_reproducible(self, tmp_path):
        pa, pb = tmp_path / "a", tmp_path / "b"
        for p in (pa, pb):
            state = init_run(small_config(), p)
            step_generation(state)
        assert (pa / "gen_0001.json").read_bytes() == (pb / "gen_0001.json").read_bytes()

    def test_tables_grow_only_from_new_evaluations(self):
        state = init_run(small_config())
        step_generation(state)
        n_after_first = state.tables.presence[next(iter(state.tables.presence))].n_obs
        assert n_after_first == 8  # whole initial population
        step_generation(state)
        n_after_second = state.tables.presence[next(iter(state.tables.presence))].n_obs
        assert n_after_second == 8 + 4  # only the new offspring


class TestCheckpoints:
    def test_save_load_identity(self, tmp_path):
        state = init_run(small_config(), tmp_path)
        run_generations(state, 2)
        path = state.checkpoint_path()
        loaded = load_checkpoint(path)
        resaved = tmp_path / "resaved.json"
        save_checkpoint(loaded, resaved)
        assert resaved.read_bytes() == path.read_bytes()

    def test_version_mismatch(self, tmp_path):
        state = init_run(small_config(), tmp_path)
        doc = json.loads(state.checkpoint_path().read_text())
        doc["format_version"] = 99
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(doc))
        with pytest.raises(FormatVersionMismatch):
            load_checkpoint(bad)

    def test_truncated_file_is_corrupt(self, tmp_path):
        state = init_run(small_config(), tmp_path)
        path = state.checkpoint_path()
        path.write_text(path.read_text()[: 100])
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(path)

    def test_resume_matches_uninterrupted(self, tmp_path):
        straight = tmp_path / "straight"
        state = init_run(small_config(seed=23), straight)
        run_generations(state, 6)

        resumed_dir = tmp_path / "resumed"
        state2 = init_run(small_config(seed=23), resumed_dir)
        run_generations(state2, 3)
        state3 = load_run(resumed_dir)
        run_generations(state3, 3)
        assert (straight / "gen_0006.json").read_bytes() == \
            (resumed_dir / "gen_0006.json").read_bytes()

    def test_latest_checkpoint_picks_highest_generation(self, tmp_path):
        state = init_run(small_config(), tmp_path)
        run_generations(state, 3)
        assert latest_checkpoint(tmp_path).name == "gen_0003.json"


class TestInterventions:
    def evolved_state(self, tmp_path=None, gens=3, **overrides):
        state = init_run(small_config(**overrides), tmp_path)
        run_generations(state, gens)
        return state

    def test_pause_resume_toggle_only_flag(self):
        state = self.evolved_state()
        before = [ind.digest for ind in state.population]
        apply_intervention(state, Intervention("Pause"))
        assert state.paused
        apply_intervention(state, Intervention("Resume"))
        assert not state.paused
        assert [ind.digest for ind in state.population] == before

    def test_stop_halts_run_generations(self):
        state = init_run(small_config(max_generations=10))
        source = ScriptedInterventions([(3, Intervention("Stop"))])
        done = run_generations(state, 10, source)
        assert done == 3
        assert len(state.history) == 3

    def test_handpick_reschedule_enters_phase2(self):
        state = self.evolved_state()
        picks = tuple(ind.digest for ind in state.archive[:4])
        apply_intervention(state, Intervention("HandPick", picks, reschedule_channels=True))
        assert state.phase == 2
        assert len(state.population) == 8
        rescheduled = state.population[:4]
        for ind, src in zip(rescheduled, picks):
            assert ind.op_trace == "handpick"
            assert ind.parent_digests == (src,)
            assert ind.fitness is None
            assert ind.genome.stem_out == 16
            assert ind.genome.layers[0].out_ch == 24
        # Continuing works and records phase-2 history rows.
        step_generation(state)
        assert state.history[-1].phase == 2

    def test_handpick_without_reschedule_keeps_fitness_and_phase(self):
        state = self.evolved_state()
        pick = state.archive[0]
        apply_intervention(state, Intervention("HandPick", (pick.digest,)))
        assert state.phase == 1
        assert state.population[0].digest == pick.digest
        assert state.population[0].fitness == pick.fitness
        assert state.population[0].op_trace == "handpick"

    def test_handpick_unknown_digest_leaves_state_unchanged(self):
        state = self.evolved_state()
        before = [ind.digest for ind in state.population]
        with pytest.raises(UnknownDigest):
            apply_intervention(state, Intervention("HandPick", ("deadbeef",)))
        assert [ind.digest for ind in state.population] == before
        assert state.phase == 1

    def test_second_reschedule_rejected(self):
        state = self.evolved_state()
        picks = tuple(ind.digest for ind in state.archive[:2])
        apply_intervention(state, Intervention("HandPick", picks, reschedule_channels=True))
        step_generation(state)
        picks2 = tuple(ind.digest for ind in state.archive[:2])
        with pytest.raises(InvalidPhaseTransition):
            apply_intervention(state, Intervention("HandPick", picks2, reschedule_channels=True))


class TestRun:
    def test_default_run_produces_full_history(self):
        report = run(RunConfig(population_size=8, max_generations=6, seed=2))
        assert len(report.history) == 6
        assert report.best.fitness == max(row.best for row in report.history)
        assert report.phase == 1

    def test_scripted_two_phase_schedule(self):
        config = RunConfig(population_size=8, max_generations=6, phase2_generations=4, seed=9)

        class PickTopFour:
            def __init__(self):
                self.fired = False

            def __call__(self, state):
                if not self.fired and state.generation == 6:
                    self.fired = True
                    picks = tuple(ind.digest for ind in state.archive[:4])
                    return Intervention("HandPick", picks, reschedule_channels=True)
                return None

        report = run(config, PickTopFour())
        assert len(report.history) == 10
        assert [row.phase for row in report.history] == [1] * 6 + [2] * 4
        assert report.phase == 2

    def test_report_written_to_run_dir(self, tmp_path):
        run(RunConfig(population_size=6, max_generations=2, seed=4), run_dir=tmp_path)
        doc = json.loads((tmp_path / "report.json").read_text())
        assert doc["generations"] == 2
        assert len(doc["history"]) == 2
        assert doc["best"]["fitness"] is not None
