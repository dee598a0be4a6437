"""Exception hierarchy. Most errors are ``ValueError`` subclasses so callers
that only care about bad input can catch the builtin."""


class DPQFLError(Exception):
    """Base class for all package errors."""


class ZeroVectorError(DPQFLError, ValueError):
    pass


class DimensionTooLargeError(DPQFLError, ValueError):
    pass


class ShapeMismatchError(DPQFLError, ValueError):
    pass


class QubitIndexError(DPQFLError, IndexError):
    pass


class InvalidProbabilityError(DPQFLError, ValueError):
    pass


class EmptyShardError(DPQFLError, ValueError):
    pass


class ZeroSigmaError(DPQFLError, ValueError):
    """A noiseless mechanism cannot certify any finite epsilon."""


class UnachievableError(DPQFLError, ValueError):
    pass


class TooFewExamplesError(DPQFLError, ValueError):
    pass


class EmptyListError(DPQFLError, ValueError):
    pass


class DegenerateLabelsError(DPQFLError, ValueError):
    pass


class EmptyEvaluationSetError(DPQFLError, ValueError):
    pass


class IDXFormatError(DPQFLError, ValueError):
    pass


class BadMagicError(IDXFormatError):
    pass


class CountMismatchError(IDXFormatError):
    pass


class TruncatedFileError(IDXFormatError):
    pass


class MultiChannelUnsupportedError(DPQFLError, ValueError):
    pass


class ConfigError(DPQFLError, ValueError):
    """Invalid run configuration. ``field`` names the offending key."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class CheckpointMismatchError(DPQFLError, ValueError):
    pass
