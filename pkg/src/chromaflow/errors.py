"""Exception hierarchy shared across the package."""


class ChromaflowError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(ChromaflowError, ValueError):
    """Input data violates a precondition (empty raster, missing planes, ...)."""


class DimensionError(ChromaflowError, ValueError):
    """Shapes of related inputs do not agree."""


class InvalidParameterError(ChromaflowError, ValueError):
    """A numeric or enum parameter is out of its allowed range."""


class NotFoundError(ChromaflowError, FileNotFoundError):
    """A required file or directory entry does not exist."""


class InconsistentSequenceError(ChromaflowError, ValueError):
    """Frames of one sequence disagree on dimensions."""


class FormatError(ChromaflowError, ValueError):
    """A binary file does not carry the expected magic/version header."""


class CorruptionError(ChromaflowError, ValueError):
    """A binary file header is valid but the payload is damaged."""


class ConfigurationError(ChromaflowError, ValueError):
    """The run configuration is contradictory or incomplete."""


class UndefinedRegionError(ChromaflowError, ValueError):
    """A metric region contains no pixels."""
