"""Builds a trainable torch model from a neutral network-description document.

The document is a flat primitive list in execution order; each primitive
carries (op, kernel, stride, in, out, params, bias, path, seg). Primitives are
grouped by segment: blocks with an `add` primitive become residual modules
whose skip branch is the block's `path == "skip"` projection (identity when
absent). The builder is a generic interpreter — it never looks at the genome,
only at primitives — so its trainable-parameter count must equal the
description's param_count exactly.
"""

from __future__ import annotations

import torch
from torch import nn


class UnsupportedPrimitive(Exception):
    pass


def _conv(prim: dict) -> nn.Module:
    stride = prim["stride"]
    kernel = prim["kernel"]
    if stride == 1:
        padding = "same"
    else:
        # ceil-division downsampling, matching the description's spatial accounting
        padding = kernel // 2
    return nn.Conv2d(prim["in"], prim["out"], kernel, stride=stride,
                     padding=padding, bias=bool(prim.get("bias", False)))


def _dwconv(prim: dict) -> nn.Module:
    stride = prim["stride"]
    kernel = prim["kernel"]
    padding = "same" if stride == 1 else kernel // 2
    return nn.Conv2d(prim["in"], prim["out"], kernel, stride=stride, padding=padding,
                     groups=prim["in"], bias=bool(prim.get("bias", False)))


def _layer(prim: dict) -> nn.Module:
    op = prim["op"]
    if op == "conv":
        return _conv(prim)
    if op == "dwconv":
        return _dwconv(prim)
    if op == "norm":
        return nn.BatchNorm2d(prim["out"])
    if op == "relu":
        return nn.ReLU(inplace=False)
    if op == "avgpool":
        return nn.Sequential(nn.AdaptiveAvgPool2d(1), nn.Flatten())
    if op == "linear":
        return nn.Linear(prim["in"], prim["out"], bias=True)
    raise UnsupportedPrimitive(f"unknown primitive op {op!r}")


class ResidualUnit(nn.Module):
    """Main path + skip path joined by the block's add primitive."""

    def __init__(self, pre: list[nn.Module], skip: list[nn.Module], post: list[nn.Module]):
        super().__init__()
        self.pre = nn.Sequential(*pre)
        self.skip = nn.Sequential(*skip)
        self.post = nn.Sequential(*post)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.post(self.pre(x) + self.skip(x))


def _build_segment(prims: list[dict]) -> nn.Module:
    main = [p for p in prims if p.get("path", "main") == "main"]
    skip = [p for p in prims if p.get("path") == "skip"]
    add_positions = [i for i, p in enumerate(main) if p["op"] == "add"]
    if not add_positions:
        if skip:
            raise UnsupportedPrimitive("skip-path primitives without an add primitive")
        return nn.Sequential(*[_layer(p) for p in main])
    if len(add_positions) > 1:
        raise UnsupportedPrimitive("multiple add primitives in one block")
    cut = add_positions[0]
    return ResidualUnit(
        pre=[_layer(p) for p in main[:cut]],
        skip=[_layer(p) for p in skip],
        post=[_layer(p) for p in main[cut + 1:]],
    )


def build_model(description: dict) -> nn.Module:
    """Construct the network; trainable parameters equal description['param_count']."""
    prims = description["primitives"]
    segments: dict[str, list[dict]] = {}
    order: list[str] = []
    for prim in prims:
        seg = prim.get("seg", "main")
        if seg not in segments:
            segments[seg] = []
            order.append(seg)
        segments[seg].append(prim)
    modules = [_build_segment(segments[seg]) for seg in order]
    return nn.Sequential(*modules)


def trainable_params(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
