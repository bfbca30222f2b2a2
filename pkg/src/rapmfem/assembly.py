"""Global banded matrices over the interior nodes plus the boundary
lifting machinery that moves Dirichlet data to the right-hand side."""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as kb
from .elements import (
    GROUP,
    QUADRATURE,
    _CONV_REF,
    _MASS_REF,
    _STIFF_REF,
    NonlinearElementOp,
)
from .mesh import Mesh1D, NODES_PER_ELEMENT

MATRIX_NAMES = ("mass", "stiff", "conv", "nonlin")


@dataclass(frozen=True)
class GlobalSystem:
    """Assembled interior matrices in band storage plus lifting columns.

    mass/stiff/conv/nonlin are (2*bw+1, n) bands over the n interior
    nodes.  For each matrix, lifting_cols holds the (left, right)
    boundary columns so Dirichlet values can be folded into vectors.
    lumped_mass is the row-sum lumping of the full mass rows (boundary
    columns included).  Immutable and read-shareable after assembly.
    """

    mesh: Mesh1D
    variant: str
    d_coeff: float
    bw: int
    n: int
    mass: np.ndarray
    stiff: np.ndarray
    conv: np.ndarray
    nonlin: np.ndarray
    lifting_cols: dict
    lumped_mass: np.ndarray

    def band(self, name):
        return getattr(self, name)

    def matvec(self, name, x):
        return kb.banded_matvec(self.band(name), self.bw, x)

    def lifting_from_values(self, name, u_left, u_right):
        """Boundary-column combination u_left*col_L + u_right*col_R."""
        left, right = self.lifting_cols[name]
        return u_left * left + u_right * right

    def nonlinear_matvec(self, g_interior, g_left, g_right):
        """Apply the assembled 4/3-power weights to nodal g(v) values,
        boundary nodes included (their v is extrapolated by the caller)."""
        out = kb.banded_matvec(self.nonlin, self.bw, g_interior)
        left, right = self.lifting_cols["nonlin"]
        return out + g_left * left + g_right * right

    @property
    def nonlin_bw(self):
        """Effective half-width of the nonlinear weight matrix."""
        return self.bw if self.variant == GROUP else 0


def assemble(mesh: Mesh1D, variant, d_coeff) -> GlobalSystem:
    """Assemble mass/stiffness/convection and the 4/3-power weight matrix.

    Element contributions are scattered into full-node bands; interior
    rows/columns are then carved out and the columns that touch the two
    boundary nodes are retained as lifting templates.
    """
    if variant not in (GROUP, QUADRATURE):
        raise ValueError(f"variant must be '{GROUP}' or '{QUADRATURE}'")
    k = NODES_PER_ELEMENT[mesh.order]
    bw = k - 1
    h = mesh.element_sizes
    n_nodes = mesh.n_nodes
    nl_op = NonlinearElementOp(variant=variant, order=mesh.order)

    el = {
        "mass": h[:, None, None] * _MASS_REF[mesh.order],
        "stiff": (1.0 / h)[:, None, None] * _STIFF_REF[mesh.order],
        "conv": np.broadcast_to(_CONV_REF[mesh.order], (mesh.n_elements, k, k)),
        "nonlin": np.stack([nl_op.weight_matrix(hj) for hj in h]),
    }

    first = mesh.elements[:, 0]
    full = {}
    for name in MATRIX_NAMES:
        band = kb.band_zeros(bw, n_nodes)
        for a in range(k):
            for b in range(k):
                np.add.at(band[bw + b - a], first + a, el[name][:, a, b])
        full[name] = band

    lumped_full = full["mass"].sum(axis=0)

    n = n_nodes - 2
    interior = {}
    lifting = {}
    for name in MATRIX_NAMES:
        band = full[name][:, 1:-1].copy()
        left = np.zeros(n)
        right = np.zeros(n)
        # interior row j is global row j+1; slot kk references global
        # column (j+1) - bw + kk
        for j in range(min(bw, n)):
            kk = bw - (j + 1)
            if kk >= 0:
                left[j] = band[kk, j]
                band[kk, j] = 0.0
        for j in range(max(0, n - bw), n):
            kk = bw + n - j
            if kk <= 2 * bw:
                right[j] = band[kk, j]
                band[kk, j] = 0.0
        interior[name] = band
        lifting[name] = (left, right)

    return GlobalSystem(
        mesh=mesh,
        variant=variant,
        d_coeff=float(d_coeff),
        bw=bw,
        n=n,
        mass=interior["mass"],
        stiff=interior["stiff"],
        conv=interior["conv"],
        nonlin=interior["nonlin"],
        lifting_cols=lifting,
        lumped_mass=lumped_full[1:-1].copy(),
    )


@dataclass(frozen=True)
class BoundaryState:
    """Dirichlet data of the scaled problem on [-R, R].

    The left value is identically zero; the right value follows the
    far-field call behavior 1 - exp(-D tau - R).  The analytic time
    derivative of the right value is kept for diagnostics only (the
    stepper differences the lifting vectors between time levels).
    """

    d_coeff: float
    radius: float

    def u_left(self, tau):
        return 0.0

    def u_right(self, tau):
        return 1.0 - math.exp(-self.d_coeff * tau - self.radius)

    def du_right(self, tau):
        return self.d_coeff * math.exp(-self.d_coeff * tau - self.radius)


def lifting_vectors(sys: GlobalSystem, bstate: BoundaryState, tau):
    """(b_M, b_K, b_P) built from the boundary values at scaled time tau."""
    ul = bstate.u_left(tau)
    ur = bstate.u_right(tau)
    return (
        sys.lifting_from_values("mass", ul, ur),
        sys.lifting_from_values("stiff", ul, ur),
        sys.lifting_from_values("conv", ul, ur),
    )
