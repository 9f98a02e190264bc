"""Exception types shared across modules."""


class ParspeechError(Exception):
    """Base class; the CLI maps these to a nonzero exit status."""


class EmptyInputError(ParspeechError, ValueError):
    pass


class DimensionError(ParspeechError, ValueError):
    pass


class AlignmentError(ParspeechError, ValueError):
    pass


class TrainingError(ParspeechError, ValueError):
    pass


class FormatError(ParspeechError, ValueError):
    pass


class NetworkError(ParspeechError, ValueError):
    """Invalid recognition network: dangling state, epsilon cycle, unknown model."""


class DecodeError(ParspeechError):
    pass


class InsufficientSpeechError(ParspeechError, ValueError):
    pass


class BenchmarkDivergence(ParspeechError, AssertionError):
    """Task outputs differ between worker counts."""
