"""Exception hierarchy shared by the library, the CLI and the HTTP service.

Every class carries the process exit code the CLI uses for it.
"""


class QngError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(QngError, ValueError):
    """Run configuration or environment is invalid."""

    exit_code = 2


class DataError(QngError, ValueError):
    """Input data cannot be analysed."""

    exit_code = 3


class ParameterError(DataError):
    """A numeric argument is outside its physical range."""


class StreamFormatError(DataError):
    """A time-tag file or CSV is malformed."""


class NoHeraldsError(DataError):
    """A heralded estimate was requested but no herald clicked."""


class CriterionNotViolated(QngError):
    """The measured statistics do not certify the requested property.

    This is a valid scientific outcome, reported with its own exit code.
    """

    exit_code = 4


class DepthUndefinedError(CriterionNotViolated):
    """A depth was requested for statistics that do not violate the criterion at T=1."""
