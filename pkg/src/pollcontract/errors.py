"""Exception hierarchy shared by the library and the command line."""


class PollContractError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ModelInputError(PollContractError, ValueError):
    """Bad arguments: wrong dimensions, out-of-range values, malformed specs."""

    exit_code = 2


class ConfigError(ModelInputError):
    """A scenario file could not be parsed or failed validation."""

    exit_code = 2


class InfeasibleError(PollContractError):
    """No feasible production/flow plan was found."""

    exit_code = 3


class StabilityError(PollContractError):
    """The requested grid violates the explicit scheme's stability condition."""

    exit_code = 4


class ValidationError(PollContractError):
    """A run finished but failed a post-hoc validation check."""

    exit_code = 5


class RegimeError(PollContractError):
    """The closed-form solution was requested outside its validity regime."""

    exit_code = 6
