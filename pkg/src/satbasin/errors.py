"""Exception hierarchy shared by all modules."""


class SatBasinError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameterError(SatBasinError, ValueError):
    pass


class SingularControllabilityError(SatBasinError):
    pass


class GeneratorError(SatBasinError):
    pass


class DegenerateEquilibriumError(SatBasinError):
    pass


class UnsupportedConfigurationError(SatBasinError):
    pass


class ZeroOnSphereError(SatBasinError):
    """The field vanishes (numerically) on the sphere bounding the ball."""


class ResolutionError(SatBasinError):
    pass


class DegenerateValueError(SatBasinError):
    """No regular value with a clean preimage set was found."""


class SingularEquationError(SatBasinError):
    pass


class StiffnessError(SatBasinError):
    pass


class GeometryError(SatBasinError):
    """Bracket seeds along a ray do not carry the expected fates."""
