"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: UsageError -> 1, DataError -> 2,
NumericError -> 3.
"""

from __future__ import annotations


class DocargError(Exception):
    pass


class UsageError(DocargError):
    """Bad flags, unknown formats, missing required inputs."""


class DataError(DocargError):
    """Malformed or invariant-violating input data."""


class NumericError(DocargError):
    """Non-finite losses or other numeric failures."""
