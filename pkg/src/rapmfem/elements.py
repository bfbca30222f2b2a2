"""Element-level matrices and the two treatments of the 4/3-power term.

All integrals of the Lagrange bases are closed forms on the reference
element; the physical element only contributes its size h (mass scales
with h, stiffness with 1/h, convection is size-free).
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSize
from .mesh import P1, P2

GROUP = "group"
QUADRATURE = "quadrature"

SIGNED = "signed"
CLAMPED = "clamped"

# exact reference-element integrals: mass[i,j] = int psi_j psi_i,
# stiff[i,j] = int psi_j' psi_i', conv[i,j] = int psi_j' psi_i (row = test fn)
_MASS_REF = {
    P1: np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0,
    P2: np.array([[4.0, 2.0, -1.0], [2.0, 16.0, 2.0], [-1.0, 2.0, 4.0]]) / 30.0,
}
_STIFF_REF = {
    P1: np.array([[1.0, -1.0], [-1.0, 1.0]]),
    P2: np.array([[7.0, -8.0, 1.0], [-8.0, 16.0, -8.0], [1.0, -8.0, 7.0]]) / 3.0,
}
_CONV_REF = {
    P1: np.array([[-1.0, 1.0], [-1.0, 1.0]]) / 2.0,
    P2: np.array([[-3.0, 4.0, -1.0], [-4.0, 0.0, 4.0], [1.0, -4.0, 3.0]]) / 6.0,
}
# quadrature rule weights for int psi_j v^{4/3}: trapezoid (P1), Simpson (P2)
_QUAD_WEIGHTS = {
    P1: np.array([0.5, 0.5]),
    P2: np.array([1.0, 4.0, 1.0]) / 6.0,
}


@dataclass(frozen=True)
class ElementMatrices:
    """Mass, stiffness and convection matrices of one element."""

    mass: np.ndarray
    stiff: np.ndarray
    conv: np.ndarray
    order: str
    h: float


def element_matrices(h, order) -> ElementMatrices:
    """Exact element matrices for an element of size h."""
    if h <= 0:
        raise InvalidSize(f"element size must be positive, got {h}")
    return ElementMatrices(
        mass=h * _MASS_REF[order],
        stiff=_STIFF_REF[order] / h,
        conv=_CONV_REF[order].copy(),
        order=order,
        h=float(h),
    )


def signed_power(v, power_mode=SIGNED):
    """g(v) = sign(v) |v|^{4/3} (signed) or max(v, 0)^{4/3} (clamped).

    The signed form uses the real cube root, g(v) = v * cbrt(v), so it
    stays real when the curvature proxy transiently dips negative.
    """
    v = np.asarray(v, dtype=float)
    if power_mode == CLAMPED:
        v = np.maximum(v, 0.0)
    out = v * np.cbrt(v)
    if out.ndim == 0:
        return float(out)
    return out


def cbrt_factor(v, power_mode=SIGNED):
    """Cube-root factor used for the one-shot linearization, chosen so
    that factor(v) * v == signed_power(v) in both power modes."""
    v = np.asarray(v, dtype=float)
    if power_mode == CLAMPED:
        v = np.maximum(v, 0.0)
    out = np.cbrt(v)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class NonlinearElementOp:
    """Element-level treatment of the 4/3-power term.

    GroupFE interpolates g(v) in the same basis as v, so the element
    action is the consistent mass matrix times nodal g(v).  The
    quadrature variant integrates psi_j * v^{4/3} by trapezoid (P1) or
    Simpson (P2), which collapses to diagonal nodal weights.
    """

    variant: str
    order: str
    power_mode: str = SIGNED

    def weight_matrix(self, h):
        """k x k matrix W with action(v) = W @ g(v)."""
        if h <= 0:
            raise InvalidSize(f"element size must be positive, got {h}")
        if self.variant == GROUP:
            return h * _MASS_REF[self.order]
        if self.variant == QUADRATURE:
            return h * np.diag(_QUAD_WEIGHTS[self.order])
        raise ValueError(f"variant must be '{GROUP}' or '{QUADRATURE}'")


def nonlinear_action(op: NonlinearElementOp, v_nodal, h):
    """Element contribution of the 4/3-power term for nodal values v_nodal."""
    g = signed_power(np.asarray(v_nodal, dtype=float), op.power_mode)
    return op.weight_matrix(h) @ g
