"""Exception types raised by the library."""


class OctupoleError(Exception):
    """Base class for all library errors."""


class InvalidGeometryError(OctupoleError, ValueError):
    """Electrode circles overlap or a layout is otherwise unusable."""


class DecompositionError(OctupoleError):
    """A layout could not be mapped onto the defect basis."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SolverError(OctupoleError):
    """The boundary solve did not reach its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class FlatFieldError(OctupoleError):
    """No local minimum was found in a pseudo-potential map."""


class PatternMismatchError(OctupoleError, ValueError):
    """Two minima patterns cannot be paired (different point counts)."""


class ModelViolationError(OctupoleError):
    """The analytic model produced more minima than it can support."""


class DiagnosisError(OctupoleError):
    """Coefficient search stalled above the accepted residual."""

    def __init__(self, message, coeffs=None, residual=None):
        super().__init__(message)
        self.coeffs = coeffs
        self.residual = residual


class CalibrationError(OctupoleError):
    """Voltage-map calibration landed outside its plausible range."""


class ConfigError(OctupoleError, ValueError):
    """Invalid experiment configuration."""
