"""Exception hierarchy shared by all subpackages."""


class PpmltsError(Exception):
    pass


# model engine
class UnsupportedShape(PpmltsError):
    pass


class ShapeMismatch(PpmltsError, ValueError):
    pass


class NonFiniteValue(PpmltsError, ValueError):
    pass


class LabelOutOfRange(PpmltsError, ValueError):
    pass


class EmptyDataset(PpmltsError, ValueError):
    pass


# .ts / csv ingestion
class TsParseError(PpmltsError, ValueError):
    """Base class for dataset-file errors; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MalformedHeader(TsParseError):
    pass


class RaggedRecord(TsParseError):
    pass


class UnknownLabel(TsParseError):
    pass


class MissingValue(TsParseError):
    pass


class MalformedRecord(TsParseError):
    pass


class ClassTooSmall(PpmltsError, ValueError):
    pass


class TooManyClients(PpmltsError, ValueError):
    pass


# privacy accounting
class InvalidConfig(PpmltsError, ValueError):
    pass


class NumericalOverflow(PpmltsError, ArithmeticError):
    pass


# federated
class EmptySilo(PpmltsError, ValueError):
    pass


class ClassCountMismatch(PpmltsError, ValueError):
    pass


# secret sharing
class OutOfRange(PpmltsError, ValueError):
    pass


class MissingShare(PpmltsError, ValueError):
    pass


class PartyMismatch(PpmltsError, ValueError):
    pass


class TripleReuse(PpmltsError, RuntimeError):
    pass


class TransportError(PpmltsError, RuntimeError):
    pass


class SampleIdMismatch(PpmltsError, ValueError):
    pass


class UnsupportedLayer(PpmltsError, NotImplementedError):
    pass


# reporting / runner
class LengthMismatch(PpmltsError, ValueError):
    pass


class ConfigError(PpmltsError, ValueError):
    pass
