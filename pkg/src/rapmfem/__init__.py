"""Finite element pricing of European calls under a nonlinear
Black-Scholes model with transaction costs and a risk premium."""

from ._kernels import NUMBA_ENABLED
from .assembly import BoundaryState, GlobalSystem, assemble, lifting_vectors
from .elements import (
    ElementMatrices,
    NonlinearElementOp,
    element_matrices,
    nonlinear_action,
    signed_power,
)
from .errors import (
    DegenerateSwitch,
    ExistenceViolation,
    InvalidSize,
    InvalidSpacing,
    LinearSolveFailure,
    NonFiniteState,
    NonpositiveSpot,
    OutOfRange,
    SingularMass,
    SpotOutOfDomain,
)
from .mesh import Mesh1D, shape_eval, uniform_mesh
from .model import (
    DerivedConstants,
    RapmParams,
    TruncatedDomain,
    bs_call_price,
    derive_constants,
    from_transformed,
    std_normal_cdf,
    switching_profile,
    to_transformed,
    transformed_payoff,
)
from .reference_fdm import FdmConfig, fdm_solve
from .solver import (
    SolutionSurface,
    SolverConfig,
    price_option,
    recover_v,
    rhs_F,
    solve_nonlinear_phase,
    step_linearized,
)

__version__ = "0.1.0"

__all__ = [
    "NUMBA_ENABLED",
    "BoundaryState", "GlobalSystem", "assemble", "lifting_vectors",
    "ElementMatrices", "NonlinearElementOp", "element_matrices",
    "nonlinear_action", "signed_power",
    "DegenerateSwitch", "ExistenceViolation", "InvalidSize", "InvalidSpacing",
    "LinearSolveFailure", "NonFiniteState", "NonpositiveSpot", "OutOfRange",
    "SingularMass", "SpotOutOfDomain",
    "Mesh1D", "shape_eval", "uniform_mesh",
    "DerivedConstants", "RapmParams", "TruncatedDomain", "bs_call_price",
    "derive_constants", "from_transformed", "std_normal_cdf",
    "switching_profile", "to_transformed", "transformed_payoff",
    "FdmConfig", "fdm_solve",
    "SolutionSurface", "SolverConfig", "price_option", "recover_v", "rhs_F",
    "solve_nonlinear_phase", "step_linearized",
]
