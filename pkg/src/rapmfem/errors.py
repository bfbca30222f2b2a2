"""Exception types raised by the pricing library."""


class ExistenceViolation(ValueError):
    """Model parameters admit no well-defined switching time.

    `condition` is "A" (risk premium too large relative to sigma^2*M*T)
    or "B" (risk premium times transaction cost measure >= pi/8).
    """

    def __init__(self, condition, message):
        self.condition = condition
        super().__init__(message)


class NonpositiveSpot(ValueError):
    """Spot price must be strictly positive for the log-moneyness map."""


class DegenerateSwitch(ValueError):
    """Switching-time profile requested but the switching time is degenerate
    (zero risk premium), so the raw payoff profile must be used instead."""


class InvalidSpacing(ValueError):
    """Mesh spacing must satisfy 0 < dx < 2R."""


class InvalidSize(ValueError):
    """Element size must be strictly positive."""


class OutOfRange(ValueError):
    """Local coordinate outside the reference element [0, 1]."""


class SpotOutOfDomain(ValueError):
    """Evaluation spot outside the truncated computational domain."""


class SingularMass(RuntimeError):
    """Mass matrix factorization failed (should not occur for valid meshes)."""


class LinearSolveFailure(RuntimeError):
    """Banded factorization hit a pivot below 1e-14 of the row scale.

    Usually a symptom of stability breakdown; `ratio` carries the
    dtau/dx^2 diagnostic of the run that produced the matrix.
    """

    def __init__(self, message, ratio=None):
        self.ratio = ratio
        super().__init__(message)


class NonFiniteState(RuntimeError):
    """Time stepping produced a non-finite nodal value.

    Carries the last finite state (`last_tau`, `last_u`) and the
    dtau/dx^2 ratio so the failure can be diagnosed after the abort.
    """

    def __init__(self, message, last_tau=None, last_u=None, ratio=None):
        self.last_tau = last_tau
        self.last_u = last_u
        self.ratio = ratio
        super().__init__(message)
