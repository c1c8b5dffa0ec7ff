"""Genetic operators: torque-guided crossover, presence-guided mutation, truncation selection.

Crossover fires 40% of the time; when it fires, half the time (and only when
the parents share at least one adjacent-pair set) the split point is placed
inside the shared set with the highest torque, otherwise both parents are cut
at independent uniform interior points. Mutation fires 60% of the time and
picks uniformly between four actions: insert the highest-presence kind,
remove the lowest-presence kind, insert a random kind, remove a random gene.
Every emitted genome is channel-repaired, depth-clamped, and valid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

from .control import ControlTables, argmax_presence, argmin_presence, genome_sets, max_torque_among
from .errors import EmptyTables, UnevaluatedIndividual
from .genome import (
    KIND_ORDER,
    MAX_DEPTH_DEFAULT,
    BlockKind,
    Genome,
    LayerGene,
    canonical_digest,
    repair_channels,
)
from .rng import RngStream

# Maps an insertion depth (0-based index the new gene will occupy) to its output width.
WidthPolicy = Callable[[int], int]


@dataclass
class OperatorConfig:
    p_crossover: float = 0.4
    p_torque_guided: float = 0.5
    p_mutation: float = 0.6
    # "lowest" follows the reward rationale; "highest" replays the alternate removal rule.
    mutation_remove: str = "lowest"
    max_depth: int = MAX_DEPTH_DEFAULT

    def __post_init__(self):
        for name in ("p_crossover", "p_torque_guided", "p_mutation"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if self.mutation_remove not in ("lowest", "highest"):
            raise ValueError(f"mutation_remove must be 'lowest' or 'highest', got {self.mutation_remove!r}")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")

    def to_doc(self) -> dict:
        return {
            "p_crossover": self.p_crossover,
            "p_torque_guided": self.p_torque_guided,
            "p_mutation": self.p_mutation,
            "mutation_remove": self.mutation_remove,
            "max_depth": self.max_depth,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "OperatorConfig":
        return cls(**doc)


@dataclass(frozen=True)
class Offspring:
    """A new genome plus the lineage metadata the engine records on its individual."""

    genome: Genome
    parent_digests: tuple[str, ...]
    op_trace: str  # crossover | mutation | clone


def _finish(layers: Sequence[LayerGene], stem_out: int, max_depth: int) -> Genome:
    """Depth-clamp (truncate the tail) and re-chain channels."""
    clamped = tuple(layers[:max_depth])
    return repair_channels(Genome(layers=clamped, stem_out=stem_out))


def _first_pair_index(genome: Genome, pair) -> int:
    kinds = genome.kinds()
    for i in range(len(kinds) - 1):
        if (kinds[i], kinds[i + 1]) == pair:
            return i
    raise ValueError(f"pair {pair} does not occur in genome")


def crossover(a: Genome, b: Genome, tables: ControlTables,
              cfg: OperatorConfig, rng: RngStream) -> tuple[Genome, Genome]:
    """Exchange head/tail segments between two parents; returns two offspring.

    Identical parents are returned unchanged (no draws consumed). The guided
    branch cuts each parent independently, immediately after the first
    occurrence of the highest-torque shared set's leading block.
    """
    if a == b:
        return a, b

    shared = set(genome_sets(a)) & set(genome_sets(b))
    # The branch draw is consumed unconditionally to keep replay alignment
    # independent of whether the parents happen to share a set.
    guided = rng.random() < cfg.p_torque_guided and bool(shared)

    if guided:
        pair = max_torque_among(tables, shared)
        cut_a = _first_pair_index(a, pair) + 1
        cut_b = _first_pair_index(b, pair) + 1
    else:
        cut_a = rng.randint(1, len(a) - 1) if len(a) > 1 else 1
        cut_b = rng.randint(1, len(b) - 1) if len(b) > 1 else 1

    child_a = _finish(a.layers[:cut_a] + b.layers[cut_b:], a.stem_out, cfg.max_depth)
    child_b = _finish(b.layers[:cut_b] + a.layers[cut_a:], b.stem_out, cfg.max_depth)
    return child_a, child_b


def _insert_gene(g: Genome, kind: BlockKind, cfg: OperatorConfig,
                 rng: RngStream, width_policy: WidthPolicy) -> Genome:
    pos = rng.randint(0, len(g))
    expand = rng.choice((1, 6)) if kind is BlockKind.INVR else 1
    gene = LayerGene(kind=kind, in_ch=1, out_ch=width_policy(pos), stride=1, expand=expand)
    layers = list(g.layers)
    layers.insert(pos, gene)
    return _finish(layers, g.stem_out, cfg.max_depth)


def _remove_index(g: Genome, index: int, cfg: OperatorConfig) -> Genome:
    layers = list(g.layers)
    del layers[index]
    return _finish(layers, g.stem_out, cfg.max_depth)


def mutate(g: Genome, tables: ControlTables, cfg: OperatorConfig,
           rng: RngStream, width_policy: WidthPolicy) -> Genome:
    """Apply one of the four mutation actions, chosen uniformly.

    Fallback rules keep the result within [1, max_depth] layers: removals on a
    single-layer genome become random insertions, insertions at max depth
    become random removals, table-guided actions degrade to their random
    counterparts when the tables are empty, and a guided removal whose target
    kind is absent removes a random gene instead.
    """
    action = rng.randint(1, 4)
    can_remove = len(g) > 1
    can_insert = len(g) < cfg.max_depth

    if action in (1, 3) and not can_insert:
        action = 4
    if action in (2, 4) and not can_remove:
        action = 3
        if not can_insert:  # max_depth == 1: nothing legal to do
            return g

    if action == 1:
        try:
            kind = argmax_presence(tables)
        except EmptyTables:
            return _insert_gene(g, rng.choice(KIND_ORDER), cfg, rng, width_policy)
        return _insert_gene(g, kind, cfg, rng, width_policy)

    if action == 2:
        try:
            picker = argmin_presence if cfg.mutation_remove == "lowest" else argmax_presence
            kind = picker(tables)
        except EmptyTables:
            return _remove_index(g, rng.randint(0, len(g) - 1), cfg)
        for i, gene in enumerate(g.layers):
            if gene.kind is kind:
                return _remove_index(g, i, cfg)
        # Target kind absent: fall back to removing a random gene.
        return _remove_index(g, rng.randint(0, len(g) - 1), cfg)

    if action == 3:
        return _insert_gene(g, rng.choice(KIND_ORDER), cfg, rng, width_policy)

    return _remove_index(g, rng.randint(0, len(g) - 1), cfg)


def select_survivors(pop: Sequence, k: int) -> list:
    """Top-k individuals by fitness, ties by fewer params then digest order.

    Accepts any records exposing .fitness, .params and .digest; the result is
    sorted best-first.
    """
    if not 1 <= k <= len(pop):
        raise ValueError(f"k must be in [1, {len(pop)}], got {k}")
    for ind in pop:
        if ind.fitness is None:
            raise UnevaluatedIndividual(f"individual {ind.digest} has no fitness")
    ranked = sorted(pop, key=lambda ind: (-ind.fitness, ind.params, ind.digest))
    return ranked[:k]


def make_offspring(survivors: Sequence, target_size: int, tables: ControlTables,
                   cfg: OperatorConfig, rng: RngStream,
                   width_policy: WidthPolicy) -> list[Offspring]:
    """Breed offspring from survivors until the next population reaches target_size.

    Parent pairs are drawn uniformly with replacement. Digest duplicates
    (against survivors and earlier offspring) trigger up to five forced
    mutations before the duplicate is accepted; a zero mutation rate disables
    the forced retries.
    """
    if not survivors:
        raise ValueError("survivors must be nonempty")
    need = target_size - len(survivors)
    out: list[Offspring] = []
    if need <= 0:
        return out

    seen = {ind.digest for ind in survivors}
    while len(out) < need:
        p1 = survivors[rng.randrange(len(survivors))]
        p2 = survivors[rng.randrange(len(survivors))]
        if rng.random() < cfg.p_crossover:
            g1, g2 = crossover(p1.genome, p2.genome, tables, cfg, rng)
            candidates = [
                (g1, (p1.digest, p2.digest), "crossover"),
                (g2, (p1.digest, p2.digest), "crossover"),
            ]
        else:
            candidates = [
                (p1.genome, (p1.digest,), "clone"),
                (p2.genome, (p2.digest,), "clone"),
            ]
        for genome, parents, op in candidates:
            if len(out) >= need:
                break
            if rng.random() < cfg.p_mutation:
                genome = mutate(genome, tables, cfg, rng, width_policy)
                op = "mutation"
            digest = canonical_digest(genome)
            if digest in seen and cfg.p_mutation > 0:
                for _ in range(5):
                    genome = mutate(genome, tables, cfg, rng, width_policy)
                    op = "mutation"
                    digest = canonical_digest(genome)
                    if digest not in seen:
                        break
            seen.add(digest)
            out.append(Offspring(genome=genome, parent_digests=parents, op_trace=op))
    return out
