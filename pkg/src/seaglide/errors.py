"""Exception hierarchy.

Data problems (bad files, incomplete windows) derive from ``DataError``;
solver failures derive from ``NumericError``.  The CLI maps the two
families to distinct exit codes.
"""


class SeaglideError(Exception):
    """Base class for all package errors."""


class DataError(SeaglideError, ValueError):
    pass


class NumericError(SeaglideError, ArithmeticError):
    pass


# -- timeseries ---------------------------------------------------------------

class IncompleteMonth(DataError):
    pass


class IncompleteWindow(DataError):
    pass


# -- ingest -------------------------------------------------------------------

class MalformedRow(DataError):
    def __init__(self, lineno, line, reason=""):
        self.lineno = lineno
        self.line = line
        msg = f"line {lineno}: cannot parse {line!r}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)


class EmptyFile(DataError):
    pass


class GzipError(DataError):
    pass


class DayOfYearOutOfRange(DataError):
    pass


class MissingColumn(DataError):
    pass


class OutOfCoverage(DataError):
    pass


# -- features / linear --------------------------------------------------------

class DegenerateMatrix(NumericError):
    pass


class RankDeficient(NumericError):
    pass


class SingularSystem(NumericError):
    pass


class FeatureMismatch(DataError):
    pass


# -- mrf ----------------------------------------------------------------------

class NoValidSplit(SeaglideError):
    pass


class TooFewRows(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class NoOobCoverage(NumericError):
    pass


# -- evaluation ---------------------------------------------------------------

class EmptyErrors(DataError):
    pass


class MismatchedHorizons(DataError):
    pass


class MissingInput(DataError):
    pass
