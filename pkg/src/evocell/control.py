"""Search-steering statistics: per-kind block presence ratios and per-pair set torques.

A "set" is an ordered pair of adjacent blocks; with four kinds there are
exactly 16 possible sets. Both statistics are computed per evaluated model
(weighted by its validation accuracy) and accumulated as cumulative means over
every model evaluated since the start of the run. Models lacking a kind
contribute an explicit zero observation to that presence key; models lacking a
pair contribute nothing to that torque key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import EmptyTables
from .genome import KIND_ORDER, BlockKind, Genome, kind_rank

SetKey = tuple[BlockKind, BlockKind]

ALL_SET_KEYS: tuple[SetKey, ...] = tuple(
    (first, second) for first in KIND_ORDER for second in KIND_ORDER
)


def set_key_rank(key: SetKey) -> tuple[int, int]:
    """Lexicographic position of a set key under the fixed kind order."""
    return (kind_rank(key[0]), kind_rank(key[1]))


def set_key_name(key: SetKey) -> str:
    return f"{key[0].value}|{key[1].value}"


def set_key_from_name(name: str) -> SetKey:
    first, second = name.split("|")
    return (BlockKind(first), BlockKind(second))


@dataclass
class KeyStat:
    mean: float = 0.0
    n_obs: int = 0


@dataclass
class ControlTables:
    presence: dict[BlockKind, KeyStat] = field(default_factory=dict)
    torque: dict[SetKey, KeyStat] = field(default_factory=dict)

    def is_empty(self) -> bool:
        return not self.presence and not self.torque

    def copy(self) -> "ControlTables":
        return ControlTables(
            presence={k: KeyStat(s.mean, s.n_obs) for k, s in self.presence.items()},
            torque={k: KeyStat(s.mean, s.n_obs) for k, s in self.torque.items()},
        )

    def to_doc(self) -> dict:
        return {
            "presence": {
                kind.value: {"mean": stat.mean, "n_obs": stat.n_obs}
                for kind, stat in sorted(self.presence.items(), key=lambda kv: kind_rank(kv[0]))
            },
            "torque": {
                set_key_name(key): {"mean": stat.mean, "n_obs": stat.n_obs}
                for key, stat in sorted(self.torque.items(), key=lambda kv: set_key_rank(kv[0]))
            },
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ControlTables":
        return cls(
            presence={
                BlockKind(name): KeyStat(entry["mean"], entry["n_obs"])
                for name, entry in doc.get("presence", {}).items()
            },
            torque={
                set_key_from_name(name): KeyStat(entry["mean"], entry["n_obs"])
                for name, entry in doc.get("torque", {}).items()
            },
        )


def genome_sets(genome: Genome) -> list[SetKey]:
    """Ordered adjacent pairs of the genome's block kinds, in position order."""
    kinds = genome.kinds()
    return [(kinds[i], kinds[i + 1]) for i in range(len(kinds) - 1)]


def presence_ratios(genome: Genome, accuracy: float) -> dict[BlockKind, float]:
    """Per-kind share of the model's blocks, weighted by its accuracy.

    Every kind maps to a value; kinds absent from the genome map to 0. The
    values sum to `accuracy`.
    """
    total = len(genome.layers)
    counts = {kind: 0 for kind in KIND_ORDER}
    for gene in genome.layers:
        counts[gene.kind] += 1
    return {kind: counts[kind] / total * accuracy for kind in KIND_ORDER}


def set_torques(genome: Genome, accuracy: float) -> dict[SetKey, float]:
    """Occurrence count of each set present in the model, weighted by accuracy."""
    counts: dict[SetKey, int] = {}
    for key in genome_sets(genome):
        counts[key] = counts.get(key, 0) + 1
    return {key: count * accuracy for key, count in counts.items()}


def update_tables(tables: ControlTables, batch: list[tuple[Genome, float]]) -> ControlTables:
    """Fold a batch of evaluated models into the cumulative means.

    Pure: returns a new ControlTables. Within a batch the result is
    order-independent (contributions are combined with an exactly-rounded sum).
    """
    updated = tables.copy()
    if not batch:
        return updated

    presence_values: dict[BlockKind, list[float]] = {kind: [] for kind in KIND_ORDER}
    torque_values: dict[SetKey, list[float]] = {}
    for genome, accuracy in batch:
        ratios = presence_ratios(genome, accuracy)
        for kind in KIND_ORDER:
            presence_values[kind].append(ratios[kind])
        for key, value in set_torques(genome, accuracy).items():
            torque_values.setdefault(key, []).append(value)

    for kind, values in presence_values.items():
        stat = updated.presence.setdefault(kind, KeyStat())
        total = stat.mean * stat.n_obs + math.fsum(values)
        stat.n_obs += len(values)
        stat.mean = total / stat.n_obs
    for key, values in torque_values.items():
        stat = updated.torque.setdefault(key, KeyStat())
        total = stat.mean * stat.n_obs + math.fsum(values)
        stat.n_obs += len(values)
        stat.mean = total / stat.n_obs
    return updated


def _presence_mean(tables: ControlTables, kind: BlockKind) -> float:
    stat = tables.presence.get(kind)
    return stat.mean if stat is not None else 0.0


def argmax_presence(tables: ControlTables) -> BlockKind:
    """Kind with the highest presence mean; ties resolve to the earliest kind in KIND_ORDER."""
    if not tables.presence:
        raise EmptyTables("no presence observations yet")
    # max() keeps the first of equal keys, so iterating KIND_ORDER encodes the tie-break.
    return max(KIND_ORDER, key=lambda k: _presence_mean(tables, k))


def argmin_presence(tables: ControlTables) -> BlockKind:
    """Kind with the lowest presence mean; unobserved kinds count as 0."""
    if not tables.presence:
        raise EmptyTables("no presence observations yet")
    return min(KIND_ORDER, key=lambda k: _presence_mean(tables, k))


def max_torque_among(tables: ControlTables, candidates: set[SetKey]) -> SetKey:
    """The candidate set with the highest torque mean; unobserved candidates count as 0.

    Ties resolve to the lexicographically first key under the fixed kind order.
    """
    if not candidates:
        raise ValueError("candidates must be nonempty")

    def mean_of(key: SetKey) -> float:
        stat = tables.torque.get(key)
        return stat.mean if stat is not None else 0.0

    return max(sorted(candidates, key=set_key_rank), key=mean_of)
