"""Cross-implementation consistency: built models must match the engine's exact param counts."""

from __future__ import annotations

import warnings

import torch

from evocell.compiler import compile_network
from evocell.genome import BlockKind, Genome, LayerGene, repair_channels
from evocell.rng import RngStream
from ref_trainer.model_builder import build_model, trainable_params

warnings.filterwarnings("ignore", message="Using padding='same'")

KINDS = tuple(BlockKind)


def varied_genome(rng: RngStream) -> Genome:
    depth = rng.randint(1, 8)
    genes = []
    for _ in range(depth):
        kind = rng.choice(KINDS)
        stride = rng.choice((1, 2)) if kind is BlockKind.INVR else 1
        expand = rng.choice((1, 6)) if kind is BlockKind.INVR else 1
        genes.append(LayerGene(kind, 1, rng.randint(2, 40), stride, expand))
    return repair_channels(Genome(tuple(genes), stem_out=rng.randint(2, 40)))


def test_param_count_parity_on_50_random_genomes():
    rng = RngStream("parity-suite")
    for _ in range(50):
        genome = varied_genome(rng)
        net = compile_network(genome, head_widths=(32, 16), num_classes=4, input_size=(64, 64))
        model = build_model(net.to_doc())
        assert trainable_params(model) == net.param_count


def test_single_crlu_forward_shape():
    genome = Genome((LayerGene(BlockKind.CRLU, 8, 8),), stem_out=8)
    net = compile_network(genome, head_widths=(), num_classes=2, input_size=(32, 32))
    model = build_model(net.to_doc())
    assert trainable_params(model) == net.param_count
    out = model(torch.randn(3, 3, 32, 32))
    assert tuple(out.shape) == (3, 2)


def test_residual_blocks_forward_cleanly():
    genome = repair_channels(Genome(
        (
            LayerGene(BlockKind.RES, 8, 8),
            LayerGene(BlockKind.BOT, 8, 12),
            LayerGene(BlockKind.INVR, 12, 12, 1, 6),
            LayerGene(BlockKind.INVR, 12, 16, 2, 6),
        ),
        stem_out=8,
    ))
    net = compile_network(genome, head_widths=(16,), num_classes=3, input_size=(32, 32))
    model = build_model(net.to_doc())
    assert trainable_params(model) == net.param_count
    assert tuple(model(torch.randn(2, 3, 32, 32)).shape) == (2, 3)
