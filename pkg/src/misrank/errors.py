"""Exception hierarchy.

Every error raised by the library derives from :class:`MisrankError`. The CLI
maps :class:`DataError` subclasses to exit code 2 and :class:`UsageError`
subclasses to exit code 1.
"""


class MisrankError(Exception):
    """Base class for all library errors."""


class DataError(MisrankError):
    """Input data violates a contract (bad rows, invariants, missing dates)."""


class UsageError(MisrankError):
    """Caller supplied invalid arguments or configuration."""


# panel-core
class DuplicateKey(DataError):
    def __init__(self, company, year):
        super().__init__(f"duplicate record for ({company}, {year})")
        self.company = company
        self.year = year


class InvalidLabel(DataError):
    pass


class RecordNotFound(DataError):
    pass


# ingest
class SchemaError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, row, column, detail=""):
        msg = f"row {row}, column {column!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.row = row
        self.column = column


class SectionNotFound(DataError):
    pass


class NotFound(DataError):
    pass


class RateLimited(DataError):
    pass


class NetworkError(DataError):
    pass


# features
class EmptyInput(DataError):
    pass


class EmptyCorpus(DataError):
    pass


class AlphaOutOfRange(UsageError):
    pass


# temporal evaluation
class InsufficientHistory(DataError):
    pass


class MissingRestatementDate(DataError):
    pass


class TooFewPositives(DataError):
    def __init__(self, k, available):
        super().__init__(f"need at least {k} positives for {k}-fold stratification, have {available}")
        self.k = k
        self.available = available


# models and metrics
class DimensionMismatch(DataError):
    pass


class SingleClassInput(DataError):
    pass


class NonFinite(MisrankError):
    def __init__(self, iteration):
        super().__init__(f"objective became non-finite at iteration {iteration}")
        self.iteration = iteration


class NonFiniteScore(DataError):
    pass


class NoPositives(DataError):
    pass


class KOutOfRange(UsageError):
    pass


# synth / cli
class InvalidParams(UsageError):
    pass


class ConfigError(UsageError):
    pass
