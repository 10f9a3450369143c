"""Exception hierarchy shared across the fuzzer."""


class MutaFuzzError(Exception):
    """Base class for all errors raised by mutafuzz."""


# mutation engine
class MutationError(MutaFuzzError, ValueError):
    pass


class EmptyInput(MutationError):
    pass


class PositionOutOfRange(MutationError, IndexError):
    pass


class InvalidParams(MutationError):
    pass


# corpus
class SizeMismatch(MutaFuzzError, ValueError):
    pass


class EmptyQueue(MutaFuzzError, LookupError):
    pass


# harness
class TargetSpawnFailure(MutaFuzzError, RuntimeError):
    pass


class InputTooLarge(MutaFuzzError, ValueError):
    pass


class UnknownTarget(MutaFuzzError, KeyError):
    pass


# oracle
class RemoteUnavailable(MutaFuzzError, ConnectionError):
    pass


class MalformedResponse(MutaFuzzError, ValueError):
    pass


class NoRecords(MutaFuzzError, ValueError):
    pass


# collector / metrics
class TooFewSamples(MutaFuzzError, ValueError):
    pass


class NotInstrumented(MutaFuzzError, ValueError):
    pass


# campaign
class InvalidConfig(MutaFuzzError, ValueError):
    pass
