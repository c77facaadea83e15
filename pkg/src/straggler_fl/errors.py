"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`StragglerFLError`, and most also derive from ``ValueError`` so that
callers treating bad input generically keep working.
"""


class StragglerFLError(Exception):
    """Base class for all package errors."""


class InvalidMeasurementError(StragglerFLError, ValueError):
    """A training time was zero, negative or not finite."""


class DuplicateMissError(StragglerFLError, ValueError):
    """A round was recorded as missed twice for the same client."""


class EmptySeriesError(StragglerFLError, ValueError):
    """An EMA was requested over an empty series."""


class InvalidHistoryError(StragglerFLError, ValueError):
    """A missed-round history is unsorted or out of range."""


class NoHistoryError(StragglerFLError, ValueError):
    """Features were requested for a client that was never invoked."""


class EmptyInputError(StragglerFLError, ValueError):
    """Clustering was requested on an empty point set."""


class UndefinedIndexError(StragglerFLError, ValueError):
    """The Calinski-Harabasz index is undefined for this labeling."""


class InconsistentStateError(StragglerFLError, ValueError):
    """Cluster labels and client features disagree."""


class NoClientsError(StragglerFLError, ValueError):
    """Selection was requested on an empty population."""


class DuplicateUpdateError(StragglerFLError, ValueError):
    """A client pushed two updates for the same origin round."""


class EmptyAggregationError(StragglerFLError, ValueError):
    """No update survived to be aggregated."""


class PartitionError(StragglerFLError, ValueError):
    """The dataset cannot be split as requested."""


class DivergenceError(StragglerFLError, ArithmeticError):
    """Local training produced a non-finite loss."""


class EvaluationError(StragglerFLError, ValueError):
    """Evaluation was requested on empty test sets."""


class UndefinedRatioError(StragglerFLError, ValueError):
    """EUR was requested for a round that selected nobody."""


class ConfigError(StragglerFLError, ValueError):
    """A scenario config failed to parse or validate.

    ``line`` is the 1-based line of the offending key when known.
    """

    def __init__(self, message, *, field=None, line=None, path=None):
        self.field = field
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}:"
            if line is not None:
                where += f"{line}:"
            where += " "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(f"{where}{message}")
