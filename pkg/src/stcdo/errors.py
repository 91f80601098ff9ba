"""Exception types shared across the toolkit."""


class StcdoError(Exception):
    """Base class for all toolkit errors."""


class SingularParameterError(StcdoError, ValueError):
    """Mean-reversion speeds sit on (or too close to) a singular manifold
    of the closed-form moment denominators."""


class RiccatiExplosionError(StcdoError, ArithmeticError):
    """Coefficient ODE solution blew past the overflow guard."""

    def __init__(self, tau, which):
        self.tau = tau
        self.which = which
        super().__init__(f"{which} exceeded the overflow guard at tau={tau:.6f}")


class GridRangeError(StcdoError, ValueError):
    """Requested maturity lies outside the sampled coefficient grid."""


class WipedOutTrancheError(StcdoError, ValueError):
    """Operation undefined for a fully written-down (or expired) tranche."""


class UndefinedDistributionError(StcdoError, ValueError):
    """Jump-size law undefined because the arrival intensity is zero."""


class CalibrationError(StcdoError, RuntimeError):
    """No optimizer start produced a finite likelihood."""


class PanelFormatError(StcdoError, ValueError):
    """Malformed observation-panel file."""
