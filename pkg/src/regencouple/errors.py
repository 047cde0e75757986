"""Exception hierarchy.

Every error raised on purpose by this package derives from
:class:`RegenError`, so callers (the CLI in particular) can map them onto
exit codes without catching unrelated failures.
"""


class RegenError(Exception):
    """Base class for all package errors."""


class ConfigError(RegenError):
    """Malformed experiment configuration; ``field`` is a dotted path."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class NumericError(RegenError):
    """Base class for failures of numerical routines."""


# model_core
class DegenerateTau(NumericError):
    pass


class NonPSD(NumericError):
    pass


# cycle_sim
class HorizonOverflow(RegenError):
    pass


class InsufficientCycles(RegenError):
    pass


class OutOfHorizon(RegenError):
    pass


class NonPositiveTau(RegenError):
    pass


class TooFewSamples(RegenError):
    pass


# coupling
class UnsupportedLaw(RegenError):
    pass


class InsufficientResolution(RegenError):
    pass


class GridMismatch(RegenError):
    pass


class CouplerUnavailable(RegenError):
    pass


class MissingIntermediate(RegenError):
    pass


class ExpMomentScreenFailed(RegenError):
    """Empirical exponential moments of the cycle quantities are unstable or infinite."""


# birth_death
class PotentialOverflow(NumericError):
    pass


class NotSummable(NumericError):
    pass


class TailTooHeavy(NumericError):
    pass


class SingularSystem(NumericError):
    pass


class OracleDisagreement(NumericError):
    pass


class StateOverflow(RegenError):
    pass


class NoReturn(RegenError):
    pass


# verify
class InsufficientDesign(RegenError):
    pass


class InsufficientReplicates(RegenError):
    pass
