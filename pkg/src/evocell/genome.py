"""Block-chain genome encoding: layer genes, validation, channel repair, digests, JSON round-trip.

A genome is an ordered chain of layer genes. Each gene names one of four
feature-extracting block kinds and its input/output channel widths; inverted
residual genes additionally carry a stride and an expansion ratio. All other
kinds store the normalized values stride=1, expand=1 so that equality and
digests are well defined.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable

from .errors import EmptyGenome, ParseError, ValidationFailure

MAX_DEPTH_DEFAULT = 16

# Defaults applied when a serialized Invr gene omits the field.
DEFAULT_STRIDE = 1
DEFAULT_EXPAND = 6

VALID_STRIDES = (1, 2)
VALID_EXPANDS = (1, 6)


class BlockKind(str, Enum):
    """The four block kinds the search arranges."""

    INVR = "Invr"
    RES = "Res"
    BOT = "Bot"
    CRLU = "CrLU"


# Fixed order used for deterministic tie-breaking everywhere.
KIND_ORDER: tuple[BlockKind, ...] = (
    BlockKind.INVR,
    BlockKind.RES,
    BlockKind.BOT,
    BlockKind.CRLU,
)

_KIND_RANK = {kind: i for i, kind in enumerate(KIND_ORDER)}


def kind_rank(kind: BlockKind) -> int:
    """Position of `kind` in the fixed tie-break order."""
    return _KIND_RANK[kind]


@dataclass(frozen=True)
class LayerGene:
    """One block in the chain. Non-Invr genes are normalized to stride=1, expand=1."""

    kind: BlockKind
    in_ch: int
    out_ch: int
    stride: int = 1
    expand: int = 1

    def __post_init__(self):
        if self.kind is not BlockKind.INVR:
            object.__setattr__(self, "stride", 1)
            object.__setattr__(self, "expand", 1)


@dataclass(frozen=True)
class Genome:
    """Ordered chain of layer genes plus the stem's output width."""

    layers: tuple[LayerGene, ...]
    stem_out: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    def __len__(self) -> int:
        return len(self.layers)

    def kinds(self) -> tuple[BlockKind, ...]:
        return tuple(g.kind for g in self.layers)


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    code: str | None = None
    index: int | None = None
    field: str | None = None
    message: str = ""

    @classmethod
    def passed(cls) -> "ValidationReport":
        return cls(ok=True)

    @classmethod
    def failed(cls, code: str, message: str, index: int | None = None,
               field: str | None = None) -> "ValidationReport":
        return cls(ok=False, code=code, index=index, field=field, message=message)


def assemble(genes: Iterable[LayerGene], stem_out: int | None = None) -> Genome:
    """Build a genome from genes without requiring a consistent channel chain.

    Intended to be followed by repair_channels. When stem_out is omitted it is
    taken from the first gene's in_ch (clamped to at least 1).
    """
    genes = tuple(genes)
    if not genes:
        raise EmptyGenome("cannot assemble a genome from zero genes")
    if stem_out is None:
        stem_out = max(1, genes[0].in_ch)
    return Genome(layers=genes, stem_out=stem_out)


def validate(genome: Genome, max_depth: int = MAX_DEPTH_DEFAULT) -> ValidationReport:
    """Check the encoding invariants, reporting the first violation found."""
    if len(genome.layers) == 0:
        return ValidationReport.failed("EmptyGenome", "genome has no layers")
    if len(genome.layers) > max_depth:
        return ValidationReport.failed(
            "DepthExceeded",
            f"genome has {len(genome.layers)} layers, max_depth is {max_depth}",
        )
    if genome.stem_out < 1:
        return ValidationReport.failed(
            "BadRange", f"stem_out must be >= 1, got {genome.stem_out}", field="stem_out"
        )
    prev_out = genome.stem_out
    for i, gene in enumerate(genome.layers):
        if gene.in_ch < 1:
            return ValidationReport.failed(
                "BadRange", f"layer {i}: in_ch must be >= 1, got {gene.in_ch}", i, "in_ch"
            )
        if gene.out_ch < 1:
            return ValidationReport.failed(
                "BadRange", f"layer {i}: out_ch must be >= 1, got {gene.out_ch}", i, "out_ch"
            )
        if gene.stride not in VALID_STRIDES:
            return ValidationReport.failed(
                "BadRange", f"layer {i}: stride must be 1 or 2, got {gene.stride}", i, "stride"
            )
        if gene.expand not in VALID_EXPANDS:
            return ValidationReport.failed(
                "BadRange", f"layer {i}: expand must be 1 or 6, got {gene.expand}", i, "expand"
            )
        if gene.in_ch != prev_out:
            return ValidationReport.failed(
                "ChannelMismatch",
                f"layer {i}: in_ch {gene.in_ch} does not match upstream width {prev_out}",
                i,
                "in_ch",
            )
        prev_out = gene.out_ch
    return ValidationReport.passed()


def repair_channels(genome: Genome) -> Genome:
    """Re-chain in_ch values from stem_out forward; kinds and out_ch are untouched."""
    if len(genome.layers) == 0:
        raise EmptyGenome("cannot repair an empty genome")
    repaired = []
    prev_out = genome.stem_out
    for gene in genome.layers:
        repaired.append(replace(gene, in_ch=prev_out))
        prev_out = gene.out_ch
    return Genome(layers=tuple(repaired), stem_out=genome.stem_out)


def to_doc(genome: Genome) -> dict:
    """The genome's wire document (the shape embedded in checkpoints and eval requests)."""
    return {
        "stem_out": genome.stem_out,
        "layers": [
            {
                "kind": gene.kind.value,
                "in": gene.in_ch,
                "out": gene.out_ch,
                "stride": gene.stride,
                "expand": gene.expand,
            }
            for gene in genome.layers
        ],
    }


def canonical_digest(genome: Genome) -> str:
    """Stable 16-hex-char identity of the normalized genome content."""
    payload = json.dumps(to_doc(genome), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def dumps(genome: Genome, indent: int | None = None) -> str:
    return json.dumps(to_doc(genome), sort_keys=True, indent=indent)


_KIND_BY_NAME = {kind.value: kind for kind in BlockKind}


def from_doc(doc: object) -> tuple[Genome, list[str]]:
    """Build a genome from a parsed document; returns (genome, defaulted-field warnings)."""
    if not isinstance(doc, dict):
        raise ParseError(f"genome document must be an object, got {type(doc).__name__}")
    warnings: list[str] = []
    try:
        stem_out = int(doc["stem_out"])
        raw_layers = doc["layers"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"genome document missing or malformed field: {exc}") from exc
    if not isinstance(raw_layers, list):
        raise ParseError("'layers' must be a list")
    genes = []
    for i, raw in enumerate(raw_layers):
        if not isinstance(raw, dict):
            raise ParseError(f"layer {i} must be an object")
        kind_name = raw.get("kind")
        if kind_name not in _KIND_BY_NAME:
            raise ParseError(f"layer {i}: unknown block kind {kind_name!r}")
        kind = _KIND_BY_NAME[kind_name]
        try:
            in_ch = int(raw["in"])
            out_ch = int(raw["out"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"layer {i}: missing or malformed channel field: {exc}") from exc
        stride = raw.get("stride")
        expand = raw.get("expand")
        if kind is BlockKind.INVR:
            if stride is None:
                stride = DEFAULT_STRIDE
                warnings.append(f"layer {i}: stride defaulted to {DEFAULT_STRIDE}")
            if expand is None:
                expand = DEFAULT_EXPAND
                warnings.append(f"layer {i}: expand defaulted to {DEFAULT_EXPAND}")
        else:
            stride = 1 if stride is None else stride
            expand = 1 if expand is None else expand
        genes.append(LayerGene(kind=kind, in_ch=in_ch, out_ch=out_ch,
                               stride=int(stride), expand=int(expand)))
    return Genome(layers=tuple(genes), stem_out=stem_out), warnings


def loads_with_warnings(text: str, max_depth: int = MAX_DEPTH_DEFAULT) -> tuple[Genome, list[str]]:
    """Parse and validate a genome document, surfacing defaulted-field warnings."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc), position=exc.pos) from exc
    genome, warnings = from_doc(doc)
    report = validate(genome, max_depth=max_depth)
    if not report.ok:
        raise ValidationFailure(report)
    return genome, warnings


def loads(text: str, max_depth: int = MAX_DEPTH_DEFAULT) -> Genome:
    genome, _ = loads_with_warnings(text, max_depth=max_depth)
    return genome
