"""Exception hierarchy shared by all modules."""


class DFibrationError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(DFibrationError, ValueError):
    """Invalid user input (configuration, dimensions, preconditions)."""


class NumericalConsistencyError(DFibrationError):
    """Two independent numerical routes disagreed."""


# geometry
class NonUnitSpeed(ValidationError):
    pass


class StepTooLarge(NumericalConsistencyError):
    pass


class Trapped(DFibrationError):
    pass


class OutOfRange(ValidationError):
    pass


# fibration
class ChartDomain(ValidationError):
    pass


class RankDeficient(NumericalConsistencyError):
    pass


class NotIncident(ValidationError):
    pass


class ConsistencyFailure(NumericalConsistencyError):
    pass


class DependentLambda(ValidationError):
    pass


class OrthonormalizationFailure(NumericalConsistencyError):
    pass


# transform / normal
class UnsupportedSpec(ValidationError):
    pass


class PaddingTooSmall(ValidationError):
    pass


class ConjugateContamination(DFibrationError):
    pass


class NoArtifactFound(DFibrationError):
    pass


# calculus
class DimensionError(ValidationError):
    pass
