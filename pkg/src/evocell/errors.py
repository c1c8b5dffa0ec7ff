"""Exception types shared across the engine."""


class EvoCellError(Exception):
    """Base class for every error raised by this package."""


class GenomeError(EvoCellError):
    pass


class EmptyGenome(GenomeError):
    pass


class ParseError(GenomeError):
    """Malformed genome document; `position` is the character offset when known."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message)
        self.position = position


class ValidationFailure(GenomeError):
    """A deserialized genome failed validation; carries the full report."""

    def __init__(self, report):
        super().__init__(report.message)
        self.report = report


class SpatialUnderflow(EvoCellError):
    """Accumulated strides reduced a spatial dimension below one pixel."""


class EmptyTables(EvoCellError):
    """Control tables hold no observations yet; callers must fall back to random choice."""


class UnevaluatedIndividual(EvoCellError):
    pass


class ConfigError(EvoCellError):
    pass


class UnknownDigest(EvoCellError):
    pass


class InvalidPhaseTransition(EvoCellError):
    pass


class CheckpointWriteError(EvoCellError):
    pass


class FormatVersionMismatch(EvoCellError):
    pass


class CorruptCheckpoint(EvoCellError):
    pass


class BackendUnavailable(EvoCellError):
    pass


class BackendTimeout(EvoCellError):
    """An evaluation exceeded its budget plus grace; carries the genome digest."""

    def __init__(self, digest: str, message: str = ""):
        super().__init__(message or f"evaluation timed out: {digest}")
        self.digest = digest


class ProtocolError(EvoCellError):
    pass
