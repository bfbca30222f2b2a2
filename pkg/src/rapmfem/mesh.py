"""One-dimensional meshes on [-R, R] with linear (P1) and quadratic (P2)
Lagrange elements on the reference interval [0, 1]."""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpacing, OutOfRange

P1 = "p1"
P2 = "p2"
NODES_PER_ELEMENT = {P1: 2, P2: 3}


@dataclass(frozen=True)
class Mesh1D:
    """Nodes, element connectivity and per-element sizes.

    Nodes are strictly increasing with the domain endpoints first/last.
    P2 elements carry a midpoint node halfway between their endpoints.
    Immutable after construction.
    """

    nodes: np.ndarray
    elements: np.ndarray
    order: str
    element_sizes: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.order not in NODES_PER_ELEMENT:
            raise ValueError(f"order must be one of {sorted(NODES_PER_ELEMENT)}")
        nodes = np.asarray(self.nodes, dtype=float)
        elements = np.asarray(self.elements, dtype=np.int64)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("need at least two nodes")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be strictly increasing")
        if elements.shape[1] != NODES_PER_ELEMENT[self.order]:
            raise ValueError("element connectivity does not match order")
        sizes = nodes[elements[:, -1]] - nodes[elements[:, 0]]
        if self.order == P2:
            mids = 0.5 * (nodes[elements[:, 0]] + nodes[elements[:, -1]])
            if not np.allclose(nodes[elements[:, 1]], mids, rtol=0, atol=1e-12 * np.max(sizes)):
                raise ValueError("P2 midpoints must bisect their elements")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "element_sizes", sizes)

    @property
    def n_nodes(self):
        return self.nodes.size

    @property
    def n_elements(self):
        return self.elements.shape[0]

    @property
    def n_interior(self):
        return self.nodes.size - 2

    @property
    def radius(self):
        return float(self.nodes[-1])

    @property
    def dx_effective(self):
        """Largest element size (equals the spacing on uniform meshes)."""
        return float(np.max(self.element_sizes))


def uniform_mesh(radius, dx, order=P1) -> Mesh1D:
    """Uniform mesh on [-radius, radius] with target element size dx.

    If 2*radius/dx is not an integer the element count is rounded up and
    the effective spacing recomputed so the endpoints are exact.
    """
    if not (dx > 0 and dx < 2 * radius):
        raise InvalidSpacing(f"dx must satisfy 0 < dx < 2*radius, got dx={dx}, radius={radius}")
    ratio = 2.0 * radius / dx
    n_e = int(round(ratio)) if abs(ratio - round(ratio)) < 1e-9 else int(math.ceil(ratio))
    if order == P1:
        nodes = np.linspace(-radius, radius, n_e + 1)
        idx = np.arange(n_e, dtype=np.int64)
        elements = np.column_stack([idx, idx + 1])
    elif order == P2:
        nodes = np.linspace(-radius, radius, 2 * n_e + 1)
        idx = 2 * np.arange(n_e, dtype=np.int64)
        elements = np.column_stack([idx, idx + 1, idx + 2])
    else:
        raise ValueError(f"order must be one of {sorted(NODES_PER_ELEMENT)}")
    return Mesh1D(nodes=nodes, elements=elements, order=order)


def shape_eval(order, xi):
    """Shape function values and xi-derivatives on the reference element.

    Returns (vals, derivs), each of shape (k,) for scalar xi or (k, m)
    for an array of m local coordinates.  The functions satisfy the
    Kronecker property at the element nodes and sum to one everywhere.
    """
    xi_arr = np.asarray(xi, dtype=float)
    if np.any(xi_arr < 0.0) or np.any(xi_arr > 1.0):
        raise OutOfRange("local coordinate must lie in [0, 1]")
    one = np.ones_like(xi_arr)
    if order == P1:
        vals = np.stack([1.0 - xi_arr, xi_arr])
        derivs = np.stack([-one, one])
    elif order == P2:
        vals = np.stack([
            2.0 * (xi_arr - 0.5) * (xi_arr - 1.0),
            -4.0 * xi_arr * (xi_arr - 1.0),
            2.0 * xi_arr * (xi_arr - 0.5),
        ])
        derivs = np.stack([
            4.0 * xi_arr - 3.0,
            4.0 - 8.0 * xi_arr,
            4.0 * xi_arr - 1.0,
        ])
    else:
        raise ValueError(f"order must be one of {sorted(NODES_PER_ELEMENT)}")
    return vals, derivs
