"""Exception types shared across the engine."""


class CaptionEngineError(Exception):
    """Base class for every error raised by this package."""


class NonFiniteError(CaptionEngineError, ValueError):
    """A vector or matrix contains NaN or Inf."""


class ZeroVectorError(CaptionEngineError, ValueError):
    """A vector with (near-)zero norm where a direction is required."""


class DimMismatchError(CaptionEngineError, ValueError):
    """Operands disagree on embedding dimensionality."""


class NonPositiveTemperatureError(CaptionEngineError, ValueError):
    """Softmax temperature must be a positive finite number."""


class DegenerateSumError(CaptionEngineError, ArithmeticError):
    """The weighted combination collapsed to (near-)zero norm."""


class DuplicateIdError(CaptionEngineError, ValueError):
    """Two entries in one store share an id."""


class EmptyStoreError(CaptionEngineError, ValueError):
    """An operation requires at least one entry."""


class StoreFormatError(CaptionEngineError):
    """A persisted store violates the on-disk contract."""


class CorruptHeaderError(StoreFormatError):
    """Bad magic, version, or dimension in a store or mapper header."""


class CountMismatchError(StoreFormatError):
    """Header count disagrees with payload size or metadata rows."""


class NoSourceError(CaptionEngineError, ValueError):
    """The mock decoder has neither a datastore nor similar captions."""


class MissingGroundTruthError(CaptionEngineError, KeyError):
    """An evaluated item has no ground-truth pairing."""


class BackendError(CaptionEngineError):
    """Base class for generation-backend failures."""


class BackendUnavailableError(BackendError):
    """The backend did not produce a response within the retry budget."""


class MalformedResponseError(BackendError):
    """The backend answered with a body the client cannot interpret."""
