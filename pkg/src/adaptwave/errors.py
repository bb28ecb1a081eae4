class AdaptwaveError(RuntimeError):
    """Base class for errors raised by adaptwave."""


class InvalidParams(AdaptwaveError, ValueError):
    """Model parameters outside the range the formulas are defined on."""


class DegeneratePopulation(AdaptwaveError):
    """Every occupied type has fitness zero, so no parent can be chosen."""


class InvalidEvent(AdaptwaveError):
    """An event was applied to a type with no individuals."""


class InvalidGrid(AdaptwaveError, ValueError):
    """The quadrature step does not divide the unit interval."""


class QueryOutOfRange(AdaptwaveError):
    """A time query falls outside what a trajectory recorded."""


class InsufficientResolution(AdaptwaveError):
    """A diagnostic needs the dense event log, which was not recorded."""


class TooFewTypes(AdaptwaveError):
    """Not enough well-populated types to fit the wave profile."""


class ConfigError(AdaptwaveError, ValueError):
    """Bad or missing configuration value."""
