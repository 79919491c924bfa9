"""Exception types shared across the pipeline.

Every error carries a short machine-parseable ``code`` so the CLI can emit
one-line diagnostics (``error: <code>: <message>``).
"""


class SigError(Exception):
    """Base class for all pipeline errors."""

    code = "error"

    def one_line(self) -> str:
        return f"{self.code}: {self}"


# --- name pool ---------------------------------------------------------

class PoolParseError(SigError):
    code = "pool-parse"


class DuplicateNameError(SigError):
    code = "pool-duplicate"


class ReservedCharacterError(SigError):
    code = "pool-reserved-char"


class CellExhaustedError(SigError):
    """All name triplets of a pool cell are already in use."""

    code = "cell-exhausted"


# --- templates / prompts ------------------------------------------------

class TemplateSyntaxError(SigError):
    """Unbalanced or malformed brace; ``offset`` is a byte offset."""

    code = "template-syntax"

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class UnknownPlaceholderError(SigError):
    code = "unknown-placeholder"


class UnresolvedPlaceholderError(SigError):
    code = "unresolved-placeholder"


class BlendGroupError(SigError):
    """Rendered prompt's blend group does not round-trip the name triplet."""

    code = "blend-group"


# --- configuration ------------------------------------------------------

class ConfigError(SigError):
    """Carries the full list of violations found during validation."""

    code = "config-invalid"

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class MissingInputError(SigError):
    """A pipeline stage ran before its input artifact exists."""

    code = "missing-input"


# --- wire protocol ------------------------------------------------------

class JobValidationError(SigError):
    code = "invalid-job"


class ProtocolError(SigError):
    """Backend response violates the wire protocol (malformed body/shape)."""

    code = "protocol"


class RequestFailedError(SigError):
    """Backend answered with an HTTP error status."""

    code = "http-error"

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class BackendUnreachableError(SigError):
    code = "backend-unreachable"


# --- PNG ----------------------------------------------------------------

class PngFormatError(SigError):
    code = "png-format"


class MissingChunkError(SigError):
    """Image lacks the metadata text chunks the oracle embedder needs."""

    code = "missing-chunk"


# --- embeddings ---------------------------------------------------------

class BadMagicError(SigError):
    code = "emb-bad-magic"


class TruncatedFileError(SigError):
    code = "emb-truncated"


class IndexMismatchError(SigError):
    code = "emb-index-mismatch"


class DimensionMismatchError(SigError):
    code = "dim-mismatch"


class MissingEmbeddingError(SigError):
    code = "missing-embedding"


class ZeroVectorError(SigError):
    code = "zero-vector"


# --- analysis -----------------------------------------------------------

class InsufficientDataError(SigError):
    code = "insufficient-data"


class EmptyInputError(SigError):
    code = "empty-input"


class EmptyCellError(SigError):
    code = "empty-cell"
