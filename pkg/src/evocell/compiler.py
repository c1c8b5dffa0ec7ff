"""Genome-to-network compiler: primitive expansion, exact parameter counts, multiply-add totals.

The output is a neutral description (no framework types): a fixed 3x3 stride-2
stem, one expanded primitive list per block, a global average pool, and a
linear head. Parameter counts are exact sums over primitives; multiply-add
counts cover conv/linear primitives only, tracking spatial extent with
ceiling division at stride-2 layers.

Block internals (the search space only names the kinds):
  CrLU  one 2x2 convolution with bias, then ReLU.
  Res   3x3 conv + norm + ReLU + 3x3 conv + norm with identity skip;
        1x1 projection + norm on the skip when in != out.
  Bot   1x1 -> 3x3 -> 1x1 with mid = max(1, out // 4), norms throughout,
        projection skip as in Res.
  Invr  optional 1x1 expansion (ratio > 1), depthwise 3x3, 1x1 linear
        projection, norms after each conv; identity skip only when stride=1
        and in == out.
Normalization layers contribute 2*channels parameters; convolutions carry no
bias except CrLU's.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import SpatialUnderflow
from .genome import Genome, LayerGene, BlockKind, repair_channels

DEFAULT_ANCHORS: tuple[int, ...] = (16, 24, 32, 64, 96, 160, 320, 1280)
DEFAULT_HEAD_WIDTHS: tuple[int, ...] = (640, 64)
DEFAULT_INPUT_SIZE: tuple[int, int] = (224, 224)


@dataclass(frozen=True)
class ChannelSchedule:
    """Widening sequence of output channels applied when a run enters phase 2."""

    anchors: tuple[int, ...] = DEFAULT_ANCHORS

    def __post_init__(self):
        object.__setattr__(self, "anchors", tuple(self.anchors))
        if not self.anchors or any(a < 1 for a in self.anchors):
            raise ValueError("schedule anchors must be positive")

    def width_at(self, layer_index: int) -> int:
        """Anchor for the layer at 0-based depth `layer_index` (stem uses anchors[0])."""
        return self.anchors[min(layer_index + 1, len(self.anchors) - 1)]


@dataclass(frozen=True)
class Primitive:
    """One concrete layer of the compiled network."""

    op: str                     # conv | dwconv | norm | relu | add | avgpool | linear
    kernel: int
    stride: int
    in_ch: int
    out_ch: int
    params: int
    bias: bool = False
    path: str = "main"          # main | skip

    def doc(self, seg: str) -> dict:
        return {
            "op": self.op,
            "kernel": self.kernel,
            "stride": self.stride,
            "in": self.in_ch,
            "out": self.out_ch,
            "params": self.params,
            "bias": self.bias,
            "path": self.path,
            "seg": seg,
        }


def _conv(in_ch: int, out_ch: int, kernel: int, stride: int = 1,
          bias: bool = False, path: str = "main") -> Primitive:
    params = kernel * kernel * in_ch * out_ch + (out_ch if bias else 0)
    return Primitive("conv", kernel, stride, in_ch, out_ch, params, bias, path)


def _dwconv(channels: int, kernel: int = 3, stride: int = 1) -> Primitive:
    return Primitive("dwconv", kernel, stride, channels, channels,
                     kernel * kernel * channels)


def _norm(channels: int, path: str = "main") -> Primitive:
    return Primitive("norm", 0, 1, channels, channels, 2 * channels, path=path)


def _relu(channels: int) -> Primitive:
    return Primitive("relu", 0, 1, channels, channels, 0)


def _add(channels: int) -> Primitive:
    return Primitive("add", 0, 1, channels, channels, 0)


def _linear(in_ch: int, out_ch: int) -> Primitive:
    return Primitive("linear", 0, 1, in_ch, out_ch, in_ch * out_ch + out_ch, bias=True)


def _crlu_primitives(gene: LayerGene) -> list[Primitive]:
    return [
        _conv(gene.in_ch, gene.out_ch, kernel=2, bias=True),
        _relu(gene.out_ch),
    ]


def _res_primitives(gene: LayerGene) -> list[Primitive]:
    prims = [
        _conv(gene.in_ch, gene.out_ch, kernel=3),
        _norm(gene.out_ch),
        _relu(gene.out_ch),
        _conv(gene.out_ch, gene.out_ch, kernel=3),
        _norm(gene.out_ch),
    ]
    if gene.in_ch != gene.out_ch:
        prims.append(_conv(gene.in_ch, gene.out_ch, kernel=1, path="skip"))
        prims.append(_norm(gene.out_ch, path="skip"))
    prims.append(_add(gene.out_ch))
    prims.append(_relu(gene.out_ch))
    return prims


def _bot_primitives(gene: LayerGene) -> list[Primitive]:
    mid = max(1, gene.out_ch // 4)
    prims = [
        _conv(gene.in_ch, mid, kernel=1),
        _norm(mid),
        _relu(mid),
        _conv(mid, mid, kernel=3),
        _norm(mid),
        _relu(mid),
        _conv(mid, gene.out_ch, kernel=1),
        _norm(gene.out_ch),
    ]
    if gene.in_ch != gene.out_ch:
        prims.append(_conv(gene.in_ch, gene.out_ch, kernel=1, path="skip"))
        prims.append(_norm(gene.out_ch, path="skip"))
    prims.append(_add(gene.out_ch))
    prims.append(_relu(gene.out_ch))
    return prims


def _invr_primitives(gene: LayerGene) -> list[Primitive]:
    hidden = gene.in_ch * gene.expand
    prims: list[Primitive] = []
    if gene.expand > 1:
        prims.extend([_conv(gene.in_ch, hidden, kernel=1), _norm(hidden), _relu(hidden)])
    prims.extend([
        _dwconv(hidden, kernel=3, stride=gene.stride),
        _norm(hidden),
        _relu(hidden),
        _conv(hidden, gene.out_ch, kernel=1),
        _norm(gene.out_ch),
    ])
    if gene.stride == 1 and gene.in_ch == gene.out_ch:
        prims.append(_add(gene.out_ch))
    return prims


_BUILDERS = {
    BlockKind.CRLU: _crlu_primitives,
    BlockKind.RES: _res_primitives,
    BlockKind.BOT: _bot_primitives,
    BlockKind.INVR: _invr_primitives,
}


def block_primitives(gene: LayerGene) -> list[Primitive]:
    return _BUILDERS[gene.kind](gene)


def block_params(gene: LayerGene) -> int:
    """Exact trainable-parameter count of one block."""
    return sum(p.params for p in block_primitives(gene))


@dataclass(frozen=True)
class NetworkDescription:
    stem: tuple[Primitive, ...]
    blocks: tuple[tuple[Primitive, ...], ...]
    pool: tuple[Primitive, ...]
    head: tuple[Primitive, ...]
    param_count: int
    input_size: tuple[int, int]
    num_classes: int

    def segments(self):
        """(segment-name, primitives) pairs in execution order."""
        yield "stem", self.stem
        for i, block in enumerate(self.blocks):
            yield f"block:{i}", block
        yield "pool", self.pool
        yield "head", self.head

    def all_primitives(self) -> list[Primitive]:
        return [p for _, prims in self.segments() for p in prims]

    def to_doc(self) -> dict:
        """Export document consumed by evaluator plugins: flat primitive list in execution order."""
        return {
            "format": 1,
            "input_size": list(self.input_size),
            "num_classes": self.num_classes,
            "param_count": self.param_count,
            "primitives": [p.doc(seg) for seg, prims in self.segments() for p in prims],
        }


def compile_network(genome: Genome,
                    head_widths: tuple[int, ...] = DEFAULT_HEAD_WIDTHS,
                    num_classes: int = 5,
                    input_size: tuple[int, int] = DEFAULT_INPUT_SIZE) -> NetworkDescription:
    """Expand a valid genome into the full primitive-level network description."""
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    if input_size[0] < 1 or input_size[1] < 1:
        raise SpatialUnderflow(f"input size {input_size} has no spatial extent")

    stem = (
        _conv(3, genome.stem_out, kernel=3, stride=2),
        _norm(genome.stem_out),
        _relu(genome.stem_out),
    )
    blocks = tuple(tuple(block_primitives(gene)) for gene in genome.layers)
    last_ch = genome.layers[-1].out_ch
    pool = (Primitive("avgpool", 0, 1, last_ch, last_ch, 0),)

    head: list[Primitive] = []
    prev = last_ch
    for width in head_widths:
        head.append(_linear(prev, width))
        head.append(_relu(width))
        prev = width
    head.append(_linear(prev, num_classes))

    net = NetworkDescription(
        stem=stem,
        blocks=blocks,
        pool=pool,
        head=tuple(head),
        param_count=0,
        input_size=(int(input_size[0]), int(input_size[1])),
        num_classes=num_classes,
    )
    # Walk once to confirm the stride schedule never exhausts the spatial extent.
    _trace_spatial(net)
    total = sum(p.params for p in net.all_primitives())
    return replace(net, param_count=total)


def _trace_spatial(net: NetworkDescription) -> list[tuple[Primitive, int, int]]:
    """Output spatial extent after each primitive, applying strides in execution order.

    Projection-skip convolutions always have stride 1 in this block set, so a
    flat in-order walk is exact.
    """
    h, w = net.input_size
    if h < 1 or w < 1:
        raise SpatialUnderflow(f"input size {net.input_size} has no spatial extent")
    traced = []
    for prim in net.all_primitives():
        if prim.op in ("conv", "dwconv") and prim.stride > 1:
            h = math.ceil(h / prim.stride)
            w = math.ceil(w / prim.stride)
        elif prim.op == "avgpool":
            h, w = 1, 1
        if h < 1 or w < 1:
            raise SpatialUnderflow(f"spatial extent vanished at {prim.op}")
        traced.append((prim, h, w))
    return traced


def mac_count(net: NetworkDescription) -> int:
    """Multiply-adds over conv/linear primitives; norms and activations are free."""
    total = 0
    for prim, h, w in _trace_spatial(net):
        if prim.op == "conv":
            total += prim.kernel * prim.kernel * prim.in_ch * prim.out_ch * h * w
        elif prim.op == "dwconv":
            total += prim.kernel * prim.kernel * prim.out_ch * h * w
        elif prim.op == "linear":
            total += prim.in_ch * prim.out_ch
    return total


def schedule_channels(genome: Genome, schedule: ChannelSchedule | None = None) -> Genome:
    """Re-initialize every layer's output width from the schedule, then repair the chain."""
    schedule = schedule or ChannelSchedule()
    new_layers = [
        replace(gene, out_ch=schedule.width_at(i)) for i, gene in enumerate(genome.layers)
    ]
    return repair_channels(Genome(layers=tuple(new_layers), stem_out=schedule.anchors[0]))
