"""Exception hierarchy.

Every error carries a short machine-readable ``code`` that the CLI reports
on stderr.
"""

from __future__ import annotations


class MirTissueError(Exception):
    code = "error"


class InvariantError(MirTissueError, ValueError):
    code = "invalid-input"


class ScubeFormatError(MirTissueError, ValueError):
    code = "bad-scube"


class BadMagicError(ScubeFormatError):
    code = "bad-magic"


class UnsupportedVersionError(ScubeFormatError):
    code = "unsupported-version"


class LengthMismatchError(ScubeFormatError):
    code = "length-mismatch"


class CsvSchemaError(MirTissueError, ValueError):
    code = "bad-csv"


class DomainError(MirTissueError, ValueError):
    code = "domain"


class DegenerateSpectrumError(MirTissueError, ValueError):
    code = "degenerate-spectrum"


class EmptyMaskError(MirTissueError, ValueError):
    code = "empty-mask"


class DimensionMismatchError(MirTissueError, ValueError):
    code = "dimension-mismatch"


class SingleClassError(MirTissueError, ValueError):
    code = "single-class"


class InsufficientDataError(MirTissueError, ValueError):
    code = "insufficient-data"


class SingularCovarianceError(MirTissueError, ValueError):
    code = "singular-covariance"
