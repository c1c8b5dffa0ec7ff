from __future__ import annotations

import pytest

from evocell.genome import BlockKind, Genome, LayerGene, repair_channels
from evocell.rng import RngStream

KINDS = (BlockKind.INVR, BlockKind.RES, BlockKind.BOT, BlockKind.CRLU)

TABLE1_CHANNELS = (16, 24, 32, 64, 96, 160, 320, 1280)
TABLE1_EXPANDS = (1, 1, 1, 6, 6, 6, 6)


def table1_layers() -> tuple[LayerGene, ...]:
    return tuple(
        LayerGene(BlockKind.INVR, TABLE1_CHANNELS[i], TABLE1_CHANNELS[i + 1], 1, TABLE1_EXPANDS[i])
        for i in range(7)
    )


@pytest.fixture
def table1_genome() -> Genome:
    return Genome(layers=table1_layers(), stem_out=16)


def varied_genome(rng: RngStream, max_depth: int = 16) -> Genome:
    """Random valid genome with varied widths, strides and expansion ratios."""
    depth = rng.randint(1, max_depth)
    stem_out = rng.randint(1, 64)
    genes = []
    for _ in range(depth):
        kind = rng.choice(KINDS)
        stride = rng.choice((1, 2)) if kind is BlockKind.INVR else 1
        expand = rng.choice((1, 6)) if kind is BlockKind.INVR else 1
        genes.append(LayerGene(kind, 1, rng.randint(1, 64), stride, expand))
    return repair_channels(Genome(layers=tuple(genes), stem_out=stem_out))


def kinds_genome(kinds, width: int = 8) -> Genome:
    """Uniform-width genome with the given kind sequence; handy for control-variable fixtures."""
    genes = tuple(LayerGene(k, width, width) for k in kinds)
    return repair_channels(Genome(layers=genes, stem_out=width))
