"""Exception hierarchy shared across the package."""


class ClusterMioError(Exception):
    """Base class for all errors raised by clustermio."""


class DataError(ClusterMioError, ValueError):
    """Input data does not satisfy a precondition (CLI exit code 2)."""


class UnknownLabel(DataError):
    pass


class EmptyCluster(DataError):
    pass


class EmptyClusterWarning(UserWarning):
    pass


class MissingAuxiliary(DataError):
    pass


class LengthMismatch(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class RankDeficient(DataError):
    pass


class InvalidSplit(DataError):
    pass


class SchemaError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class EmptyAfterFiltering(DataError):
    pass


class UnknownProtein(DataError):
    pass


class UnexpectedColumnCount(DataError):
    pass


class SolverError(ClusterMioError):
    pass


class SingularSystem(SolverError):
    pass


class TooLarge(SolverError):
    pass


class NonConvergence(SolverError):
    pass


class BothZero(ClusterMioError, ValueError):
    pass


class DegenerateVariance(ClusterMioError, ValueError):
    pass


class DegenerateData(UserWarning):
    """Tree fit on rows that cannot be split although they carry several labels."""
