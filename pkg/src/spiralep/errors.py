"""Exception types shared across the solver modules."""


class SpiralEPError(Exception):
    """Base class for all solver errors."""


class InvalidParams(SpiralEPError):
    """Input data violates a documented precondition."""


class AdmissibilityViolated(SpiralEPError):
    """Background integration left the admissible supersonic window.

    Carries the radius at which the first invariant check failed.
    """

    def __init__(self, radius, reason):
        super().__init__(f"admissibility lost at r={radius:.12g}: {reason}")
        self.radius = radius
        self.reason = reason


class CavitationError(SpiralEPError):
    """Bernoulli bracket K + Phi - |u|^2/2 became nonpositive (vacuum)."""


class EllipticityLost(SpiralEPError):
    """Frozen coefficient A22 (or B22) lost positivity; iterate left the set."""


class BlowUp(SpiralEPError):
    """Riccati solution left (0, Q_max] before reaching the inner radius."""

    def __init__(self, radius):
        super().__init__(f"multiplier ODE blow-up at r={radius:.12g}")
        self.radius = radius


class SingularSystem(SpiralEPError):
    """Discrete mode-coupled boundary value operator is rank deficient."""


class NoContraction(SpiralEPError):
    """Fixed-point increments failed to decrease repeatedly."""


class LeftIterationSet(SpiralEPError):
    """An iterate exceeded the configured iteration-set radius."""


class MonotonicityLost(SpiralEPError):
    """Entrance stream-function profile is not strictly increasing."""


class TrajectoryExit(SpiralEPError):
    """A transport trajectory left the slab |z| < 1."""


class CoercivityLost(SpiralEPError):
    """Symmetric part of the assembled elliptic operator is not positive."""
