"""Exception hierarchy shared across the toolkit.

Exit-code mapping used by the CLI: usage errors -> 1, DataError (and
subclasses) -> 2, CausalityViolation -> 3.
"""


class MafrgError(Exception):
    """Base class for all toolkit errors."""


class DataError(MafrgError):
    """Invalid data: schema violations, malformed files, missing entries."""


class SubmissionError(DataError):
    """A submission is incomplete or inconsistent with the manifest."""

    def __init__(self, message, missing_ids=()):
        super().__init__(message)
        self.missing_ids = tuple(missing_ids)


class GeneratorError(MafrgError):
    """A generator produced unusable output (wrong shape, bad values)."""


class GeneratorCrash(GeneratorError):
    """An external generator process exited abnormally."""


class GeneratorTimeout(GeneratorCrash):
    """An external generator process exceeded its time budget."""


class CausalityViolation(MafrgError):
    """An online generator used speaker frames beyond the current one."""
