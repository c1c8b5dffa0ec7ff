"""Generation loop: population lifecycle, control updates, two-phase schedule, replayable checkpoints.

One coordinating thread owns the engine state. Each generation evaluates the
unevaluated cohort, folds the results into the control tables, truncates to
the top-k survivors, breeds offspring back up to the population size, and
writes an atomic checkpoint. Interventions (pause/resume/stop/hand-pick) are
consumed only at generation boundaries, from a pluggable source; the on-disk
mailbox implementation gives the CLI and the HTTP API one shared control path.

Replay contract: a fixed config and seed with the surrogate backend determine
every checkpoint byte, and resuming from any checkpoint reproduces the
uninterrupted run exactly.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .compiler import (
    ChannelSchedule,
    NetworkDescription,
    compile_network,
    schedule_channels,
)
from .control import ControlTables, update_tables
from .errors import (
    CheckpointWriteError,
    ConfigError,
    CorruptCheckpoint,
    EvoCellError,
    FormatVersionMismatch,
    InvalidPhaseTransition,
    UnknownDigest,
)
from .evaluator import (
    EvalBudget,
    EvalCache,
    ExternalBackend,
    SurrogateBackend,
    SurrogateSpec,
    evaluate_batch,
)
from .genome import (
    KIND_ORDER,
    BlockKind,
    Genome,
    LayerGene,
    canonical_digest,
    from_doc as genome_from_doc,
    repair_channels,
    to_doc as genome_to_doc,
)
from .operators import OperatorConfig, WidthPolicy, make_offspring, select_survivors
from .rng import RngStream

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
ARCHIVE_CAP = 50
MAILBOX_NAME = "control.mailbox"


@dataclass
class Individual:
    genome: Genome
    digest: str
    params: int
    fitness: float | None = None
    born_gen: int = 0
    parent_digests: tuple[str, ...] = ()
    op_trace: str = "init"  # init | crossover | mutation | clone | handpick

    def to_doc(self) -> dict:
        return {
            "genome": genome_to_doc(self.genome),
            "digest": self.digest,
            "params": self.params,
            "fitness": self.fitness,
            "born_gen": self.born_gen,
            "parent_digests": list(self.parent_digests),
            "op_trace": self.op_trace,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Individual":
        genome, _ = genome_from_doc(doc["genome"])
        return cls(
            genome=genome,
            digest=doc["digest"],
            params=doc["params"],
            fitness=doc["fitness"],
            born_gen=doc["born_gen"],
            parent_digests=tuple(doc["parent_digests"]),
            op_trace=doc["op_trace"],
        )


@dataclass(frozen=True)
class HistoryRow:
    generation: int
    phase: int
    best: float
    mean: float
    worst: float

    def to_doc(self) -> dict:
        return {"generation": self.generation, "phase": self.phase,
                "best": self.best, "mean": self.mean, "worst": self.worst}

    @classmethod
    def from_doc(cls, doc: dict) -> "HistoryRow":
        return cls(**doc)


@dataclass
class RunConfig:
    population_size: int = 12
    max_generations: int = 15
    phase2_generations: int = 10
    elitism: int = 1
    survivors_k: int | None = None
    operators: OperatorConfig = field(default_factory=OperatorConfig)
    phase1_width: int = 32
    schedule: ChannelSchedule = field(default_factory=ChannelSchedule)
    backend: str = "surrogate"
    plugin_command: tuple[str, ...] | None = None
    surrogate: SurrogateSpec = field(default_factory=SurrogateSpec)
    budget: EvalBudget = field(default_factory=EvalBudget)
    seed: int = 0
    num_classes: int = 5
    head_widths: tuple[int, ...] = (640, 64)
    input_size: tuple[int, int] = (224, 224)
    init_depth: tuple[int, int] = (3, 9)
    parallelism: int = 1
    reset_tables_on_phase2: bool = False
    plugin_grace_s: float = 30.0

    def __post_init__(self):
        if self.survivors_k is None:
            self.survivors_k = max(1, self.population_size // 2)
        if self.population_size < 1:
            raise ConfigError("population_size must be >= 1")
        if not 1 <= self.survivors_k <= self.population_size:
            raise ConfigError("survivors_k must be within [1, population_size]")
        if self.elitism > self.survivors_k:
            raise ConfigError("elitism cannot exceed survivors_k")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.phase1_width < 1:
            raise ConfigError("phase1_width must be >= 1")
        if self.backend not in ("surrogate", "external"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.backend == "external" and not self.plugin_command:
            raise ConfigError("external backend requires plugin_command")
        if self.init_depth[0] < 1 or self.init_depth[1] < self.init_depth[0]:
            raise ConfigError("init_depth must be an increasing positive range")
        if self.init_depth[1] > self.operators.max_depth:
            raise ConfigError("init_depth exceeds max_depth")

    def to_doc(self) -> dict:
        return {
            "population_size": self.population_size,
            "max_generations": self.max_generations,
            "phase2_generations": self.phase2_generations,
            "elitism": self.elitism,
            "survivors_k": self.survivors_k,
            "operators": self.operators.to_doc(),
            "phase1_width": self.phase1_width,
            "schedule": list(self.schedule.anchors),
            "backend": self.backend,
            "plugin_command": list(self.plugin_command) if self.plugin_command else None,
            "surrogate": self.surrogate.to_doc(),
            "budget": self.budget.to_doc(),
            "seed": self.seed,
            "num_classes": self.num_classes,
            "head_widths": list(self.head_widths),
            "input_size": list(self.input_size),
            "init_depth": list(self.init_depth),
            "parallelism": self.parallelism,
            "reset_tables_on_phase2": self.reset_tables_on_phase2,
            "plugin_grace_s": self.plugin_grace_s,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "RunConfig":
        return cls(
            population_size=doc["population_size"],
            max_generations=doc["max_generations"],
            phase2_generations=doc["phase2_generations"],
            elitism=doc["elitism"],
            survivors_k=doc["survivors_k"],
            operators=OperatorConfig.from_doc(doc["operators"]),
            phase1_width=doc["phase1_width"],
            schedule=ChannelSchedule(tuple(doc["schedule"])),
            backend=doc["backend"],
            plugin_command=tuple(doc["plugin_command"]) if doc.get("plugin_command") else None,
            surrogate=SurrogateSpec.from_doc(doc["surrogate"]),
            budget=EvalBudget.from_doc(doc["budget"]),
            seed=doc["seed"],
            num_classes=doc["num_classes"],
            head_widths=tuple(doc["head_widths"]),
            input_size=tuple(doc["input_size"]),
            init_depth=tuple(doc["init_depth"]),
            parallelism=doc["parallelism"],
            reset_tables_on_phase2=doc["reset_tables_on_phase2"],
            plugin_grace_s=doc.get("plugin_grace_s", 30.0),
        )


@dataclass(frozen=True)
class Intervention:
    type: str  # Pause | Resume | Stop | HandPick
    digests: tuple[str, ...] = ()
    reschedule_channels: bool = False

    def to_doc(self) -> dict:
        doc: dict = {"type": self.type}
        if self.type == "HandPick":
            doc["digests"] = list(self.digests)
            doc["reschedule_channels"] = self.reschedule_channels
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "Intervention":
        kind = doc.get("type")
        if kind not in ("Pause", "Resume", "Stop", "HandPick"):
            raise ValueError(f"unknown intervention type {kind!r}")
        return cls(
            type=kind,
            digests=tuple(doc.get("digests", ())),
            reschedule_channels=bool(doc.get("reschedule_channels", False)),
        )


@dataclass
class EngineState:
    config: RunConfig
    generation: int
    phase: int
    population: list[Individual]
    tables: ControlTables
    rng: RngStream
    history: list[HistoryRow] = field(default_factory=list)
    archive: list[Individual] = field(default_factory=list)
    paused: bool = False
    stopped: bool = False
    run_dir: Path | None = None
    backend: object | None = None
    cache: EvalCache | None = None

    def describe(self, genome: Genome) -> NetworkDescription:
        return compile_network(
            genome,
            head_widths=self.config.head_widths,
            num_classes=self.config.num_classes,
            input_size=self.config.input_size,
        )

    def width_policy(self) -> WidthPolicy:
        if self.phase == 1:
            width = self.config.phase1_width
            return lambda _pos: width
        return self.config.schedule.width_at

    def best(self) -> Individual | None:
        return self.archive[0] if self.archive else None

    def checkpoint_path(self) -> Path | None:
        if self.run_dir is None:
            return None
        return self.run_dir / f"gen_{self.generation:04d}.json"


def _make_backend(state: EngineState):
    cfg = state.config
    if cfg.backend == "surrogate":
        return SurrogateBackend(cfg.surrogate, state.describe)
    return ExternalBackend(list(cfg.plugin_command), state.describe,
                           max_processes=cfg.parallelism, grace_s=cfg.plugin_grace_s)


def ensure_backend(state: EngineState):
    if state.backend is None:
        state.backend = _make_backend(state)
    if state.cache is None:
        journal = state.run_dir / "cache.jsonl" if state.run_dir else None
        state.cache = EvalCache(journal)
    return state.backend


def random_genome(rng: RngStream, depth_range: tuple[int, int] = (3, 9),
                  width: int = 32) -> Genome:
    """Uniform random chain: depth in depth_range, kinds uniform, all widths equal."""
    depth = rng.randint(depth_range[0], depth_range[1])
    genes = []
    for _ in range(depth):
        kind = rng.choice(KIND_ORDER)
        expand = rng.choice((1, 6)) if kind is BlockKind.INVR else 1
        genes.append(LayerGene(kind=kind, in_ch=width, out_ch=width, stride=1, expand=expand))
    return repair_channels(Genome(layers=tuple(genes), stem_out=width))


def _new_individual(state: EngineState, genome: Genome, born_gen: int,
                    parents: tuple[str, ...], op_trace: str) -> Individual:
    return Individual(
        genome=genome,
        digest=canonical_digest(genome),
        params=state.describe(genome).param_count,
        fitness=None,
        born_gen=born_gen,
        parent_digests=parents,
        op_trace=op_trace,
    )


def init_run(config: RunConfig, run_dir: str | Path | None = None) -> EngineState:
    """Seed the generation-0 population and (when a run directory is given) persist it."""
    rng = RngStream(config.seed)
    state = EngineState(
        config=config,
        generation=0,
        phase=1,
        population=[],
        tables=ControlTables(),
        rng=rng,
        run_dir=Path(run_dir) if run_dir else None,
    )
    for _ in range(config.population_size):
        genome = random_genome(rng, config.init_depth, config.phase1_width)
        state.population.append(_new_individual(state, genome, 0, (), "init"))
    if state.run_dir:
        state.run_dir.mkdir(parents=True, exist_ok=True)
        config_path = state.run_dir / "config.json"
        config_path.write_text(json.dumps(config.to_doc(), sort_keys=True, indent=2) + "\n",
                               encoding="utf-8")
        save_checkpoint(state, state.checkpoint_path())
    return state


def checkpoint_doc(state: EngineState) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "generation": state.generation,
        "phase": state.phase,
        "paused": state.paused,
        "stopped": state.stopped,
        "population": [ind.to_doc() for ind in state.population],
        "archive": [ind.to_doc() for ind in state.archive],
        "tables": state.tables.to_doc(),
        "rng": state.rng.state_doc(),
        "history": [row.to_doc() for row in state.history],
        "config": state.config.to_doc(),
    }


def _render_checkpoint(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def save_checkpoint(state: EngineState, path: str | Path) -> None:
    """Write the checkpoint via temp-file + atomic rename; readers never see partial docs."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(_render_checkpoint(checkpoint_doc(state)), encoding="utf-8")
        os.replace(tmp, path)
    except OSError as exc:
        raise CheckpointWriteError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: str | Path) -> EngineState:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise CorruptCheckpoint(f"checkpoint {path} is missing format_version")
    if doc["format_version"] != FORMAT_VERSION:
        raise FormatVersionMismatch(
            f"checkpoint format {doc['format_version']} unsupported, expected {FORMAT_VERSION}"
        )
    try:
        state = EngineState(
            config=RunConfig.from_doc(doc["config"]),
            generation=doc["generation"],
            phase=doc["phase"],
            population=[Individual.from_doc(d) for d in doc["population"]],
            tables=ControlTables.from_doc(doc["tables"]),
            rng=RngStream.from_state_doc(doc["rng"]),
            history=[HistoryRow.from_doc(d) for d in doc["history"]],
            archive=[Individual.from_doc(d) for d in doc["archive"]],
            paused=doc["paused"],
            stopped=doc["stopped"],
            run_dir=path.parent,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"checkpoint {path} has malformed fields: {exc}") from exc
    return state


def latest_checkpoint(run_dir: str | Path) -> Path:
    run_dir = Path(run_dir)
    candidates = sorted(run_dir.glob("gen_*.json"))
    if not candidates:
        raise CorruptCheckpoint(f"no checkpoints found in {run_dir}")
    return candidates[-1]


def load_run(run_dir: str | Path) -> EngineState:
    return load_checkpoint(latest_checkpoint(run_dir))


def _merge_archive(archive: list[Individual], fresh: Sequence[Individual]) -> list[Individual]:
    by_digest = {ind.digest: ind for ind in archive}
    for ind in fresh:
        by_digest.setdefault(ind.digest, ind)
    merged = sorted(by_digest.values(), key=lambda i: (-i.fitness, i.params, i.digest))
    return merged[:ARCHIVE_CAP]


def step_generation(state: EngineState) -> EngineState:
    """Advance one generation: evaluate, update tables, select, breed, checkpoint."""
    if state.stopped:
        raise EvoCellError("engine is stopped")
    cfg = state.config
    backend = ensure_backend(state)

    newly = [ind for ind in state.population if ind.fitness is None]
    results = evaluate_batch(
        [ind.genome for ind in newly], backend, cfg.budget,
        cache=state.cache, parallelism=cfg.parallelism,
    )
    for ind, result in zip(newly, results):
        ind.fitness = result.accuracy

    new_tables = update_tables(state.tables, [(ind.genome, ind.fitness) for ind in newly])
    new_archive = _merge_archive(state.archive, newly)

    fitnesses = [ind.fitness for ind in state.population]
    row = HistoryRow(
        generation=state.generation + 1,
        phase=state.phase,
        best=max(fitnesses),
        mean=math.fsum(fitnesses) / len(fitnesses),
        worst=min(fitnesses),
    )

    survivors = select_survivors(state.population, cfg.survivors_k)
    # Breed on a cloned stream so a failed checkpoint write leaves state untouched.
    rng = RngStream.from_state_doc(state.rng.state_doc())
    offspring = make_offspring(survivors, cfg.population_size, new_tables,
                               cfg.operators, rng, state.width_policy())
    next_pop = list(survivors) + [
        _new_individual(state, o.genome, state.generation + 1, o.parent_digests, o.op_trace)
        for o in offspring
    ]

    staged = EngineState(
        config=cfg,
        generation=state.generation + 1,
        phase=state.phase,
        population=next_pop,
        tables=new_tables,
        rng=rng,
        history=state.history + [row],
        archive=new_archive,
        paused=state.paused,
        stopped=state.stopped,
        run_dir=state.run_dir,
    )
    if state.run_dir:
        save_checkpoint(staged, staged.checkpoint_path())

    state.generation = staged.generation
    state.population = staged.population
    state.tables = staged.tables
    state.rng = rng
    state.history = staged.history
    state.archive = staged.archive
    return state


def apply_intervention(state: EngineState, intervention: Intervention) -> EngineState:
    """Apply one control action; invalid actions raise without mutating state."""
    cfg = state.config
    if intervention.type == "Pause":
        state.paused = True
    elif intervention.type == "Resume":
        state.paused = False
    elif intervention.type == "Stop":
        state.stopped = True
    elif intervention.type == "HandPick":
        if not intervention.digests:
            raise UnknownDigest("HandPick requires at least one digest")
        if intervention.reschedule_channels and state.phase == 2:
            raise InvalidPhaseTransition("channel rescheduling is allowed only once, entering phase 2")
        lookup = {ind.digest: ind for ind in state.population}
        lookup.update({ind.digest: ind for ind in state.archive})
        missing = [d for d in intervention.digests if d not in lookup]
        if missing:
            raise UnknownDigest(f"digests not found in population or top-list: {missing}")

        picked_src = [lookup[d] for d in intervention.digests]
        if intervention.reschedule_channels:
            state.phase = 2
            if cfg.reset_tables_on_phase2:
                state.tables = ControlTables()
            picked = [
                _new_individual(state, schedule_channels(ind.genome, cfg.schedule),
                                state.generation, (ind.digest,), "handpick")
                for ind in picked_src
            ]
        else:
            picked = [
                Individual(genome=ind.genome, digest=ind.digest, params=ind.params,
                           fitness=ind.fitness, born_gen=ind.born_gen,
                           parent_digests=ind.parent_digests, op_trace="handpick")
                for ind in picked_src
            ]
        picked = picked[: cfg.population_size]
        offspring = make_offspring(picked, cfg.population_size, state.tables,
                                   cfg.operators, state.rng, state.width_policy())
        state.population = picked + [
            _new_individual(state, o.genome, state.generation, o.parent_digests, o.op_trace)
            for o in offspring
        ]
    else:
        raise ValueError(f"unknown intervention type {intervention.type!r}")

    if state.run_dir:
        save_checkpoint(state, state.checkpoint_path())
    return state


# --- intervention sources -------------------------------------------------

def mailbox_path(run_dir: str | Path) -> Path:
    return Path(run_dir) / MAILBOX_NAME


def write_mailbox(run_dir: str | Path, intervention: Intervention) -> Path:
    """Queue an intervention for the engine; at most one is pending at a time."""
    target = mailbox_path(run_dir)
    tmp = target.with_name(target.name + ".tmp")
    tmp.write_text(json.dumps(intervention.to_doc(), sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, target)
    return target


class MailboxSource:
    """Reads and atomically consumes the run directory's control mailbox."""

    blocking = True

    def __init__(self, run_dir: str | Path):
        self.run_dir = Path(run_dir)

    def __call__(self, state: EngineState) -> Intervention | None:
        target = mailbox_path(self.run_dir)
        if not target.exists():
            return None
        claimed = target.with_name(target.name + ".consuming")
        try:
            os.replace(target, claimed)
        except OSError:
            return None
        try:
            doc = json.loads(claimed.read_text(encoding="utf-8"))
            return Intervention.from_doc(doc)
        except (json.JSONDecodeError, ValueError) as exc:
            logger.warning("discarding malformed mailbox document: %s", exc)
            return None
        finally:
            claimed.unlink(missing_ok=True)


class ScriptedInterventions:
    """Test/automation source: (after_generation, intervention) pairs, delivered in order."""

    blocking = False

    def __init__(self, script: Sequence[tuple[int, Intervention]]):
        self.pending = list(script)

    def __call__(self, state: EngineState) -> Intervention | None:
        if self.pending and self.pending[0][0] == state.generation:
            return self.pending.pop(0)[1]
        return None


InterventionSource = Callable[[EngineState], "Intervention | None"]


def consume_interventions(state: EngineState, source: InterventionSource | None) -> None:
    if source is None:
        return
    while not state.stopped:
        intervention = source(state)
        if intervention is None:
            return
        try:
            apply_intervention(state, intervention)
        except EvoCellError as exc:
            logger.warning("ignoring invalid intervention %s: %s", intervention.type, exc)


# --- run loops --------------------------------------------------------------


def run_generations(state: EngineState, generations: int,
                    source: InterventionSource | None = None,
                    poll_wait: float = 0.0) -> int:
    """Step up to `generations` times, honoring interventions at each boundary."""
    done = 0
    while done < generations and not state.stopped:
        consume_interventions(state, source)
        if state.stopped:
            break
        if state.paused:
            if poll_wait > 0:
                time.sleep(poll_wait)
                continue
            break
        step_generation(state)
        done += 1
    return done


@dataclass
class RunReport:
    best: Individual | None
    history: list[HistoryRow]
    generations: int
    phase: int
    checkpoint: str | None

    def to_doc(self) -> dict:
        return {
            "best": self.best.to_doc() if self.best else None,
            "history": [row.to_doc() for row in self.history],
            "generations": self.generations,
            "phase": self.phase,
            "checkpoint": self.checkpoint,
        }


def _rows_in_phase(state: EngineState, phase: int) -> int:
    return sum(1 for row in state.history if row.phase == phase)


def build_report(state: EngineState) -> RunReport:
    path = state.checkpoint_path()
    report = RunReport(
        best=state.best(),
        history=list(state.history),
        generations=state.generation,
        phase=state.phase,
        checkpoint=str(path) if path else None,
    )
    if state.run_dir:
        report_path = state.run_dir / "report.json"
        report_path.write_text(json.dumps(report.to_doc(), sort_keys=True, indent=2) + "\n",
                               encoding="utf-8")
    return report


def run_state(state: EngineState, source: InterventionSource | None = None,
              poll_wait: float = 0.0) -> RunReport:
    """Drive the two-phase schedule: phase 1 to its budget, hand-pick moment, then phase 2."""
    cfg = state.config
    while (not state.stopped and state.phase == 1
           and _rows_in_phase(state, 1) < cfg.max_generations):
        consume_interventions(state, source)
        if state.stopped or state.phase != 1:
            break
        if state.paused:
            if poll_wait > 0:
                time.sleep(poll_wait)
                continue
            break
        if _rows_in_phase(state, 1) >= cfg.max_generations:
            break
        step_generation(state)

    if not state.stopped:
        consume_interventions(state, source)  # the hand-pick moment

    while (not state.stopped and state.phase == 2
           and _rows_in_phase(state, 2) < cfg.phase2_generations):
        consume_interventions(state, source)
        if state.stopped or state.phase != 2:
            break
        if state.paused:
            if poll_wait > 0:
                time.sleep(poll_wait)
                continue
            break
        step_generation(state)

    return build_report(state)


def run(config: RunConfig, intervention_source: InterventionSource | None = None,
        run_dir: str | Path | None = None, poll_wait: float = 0.0) -> RunReport:
    state = init_run(config, run_dir)
    return run_state(state, intervention_source, poll_wait)
