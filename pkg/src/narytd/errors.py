"""Exception types shared across the package.

The CLI maps these onto exit codes: DataError -> 3, NumericError -> 4.
"""


class DataError(Exception):
    """Malformed or inconsistent input data (files, vocabularies, splits)."""


class ParseError(DataError):
    """Unparseable fact line; carries file/line context in the message."""

    def __init__(self, message: str, line_number: int | None = None, source: str | None = None):
        loc = ""
        if source is not None:
            loc += f"{source}:"
        if line_number is not None:
            loc += f"{line_number}: "
        super().__init__(loc + message)
        self.line_number = line_number
        self.source = source


class NumericError(Exception):
    """Numeric failure: diverged training, infeasible generation, bad values."""


class GenerationError(NumericError):
    """Synthetic data generation exhausted its draw budget."""
