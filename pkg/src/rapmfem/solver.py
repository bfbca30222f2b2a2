"""Time integration of the assembled system: one-shot linearized
theta-scheme with backward-Euler startup substeps, auxiliary-variable
recovery, and price evaluation on the final surface.

A single march is sequential in time; independent solves share no
mutable state and can run concurrently.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kb
from .assembly import BoundaryState, GlobalSystem, assemble, lifting_vectors
from .elements import CLAMPED, GROUP, QUADRATURE, SIGNED, cbrt_factor, signed_power
from .errors import (
    LinearSolveFailure,
    NonFiniteState,
    SingularMass,
    SpotOutOfDomain,
)
from .mesh import P1, P2, Mesh1D, shape_eval
from .model import (
    RapmParams,
    bs_call_price,
    derive_constants,
    switching_profile,
    transformed_payoff,
)

LUMPED = "lumped"
CONSISTENT = "consistent"
BOUNDARY_COPY = "copy"
BOUNDARY_LINEAR = "linear"

# consistent inner-mass mode forms dense n x n operators; keep it at
# verification scale
_DENSE_LIMIT = 5000


@dataclass(frozen=True)
class SolverConfig:
    """Time-scheme and nonlinearity-treatment switches.

    theta = 1/2 is the trapezoidal scheme; 0 and 1 are explicit and
    implicit Euler.  rannacher_substeps backward-Euler substeps replace
    the first macro step to damp nonsmooth initial data.  mass_mode
    selects how the inner inverse mass is applied (row-sum lumping keeps
    the step matrix banded; consistent mode is for small-n verification).
    boundary_theta_weighting=True weights the Dirichlet source terms at
    both time levels (the algebraically consistent scheme); False keeps
    the one-sided compensation form.
    """

    dtau: float
    theta: float = 0.5
    rannacher_substeps: int = 4
    mass_mode: str = LUMPED
    nonlinearity: str = GROUP
    power_mode: str = SIGNED
    boundary_v: str = BOUNDARY_COPY
    boundary_theta_weighting: bool = True

    def __post_init__(self):
        if self.dtau <= 0:
            raise ValueError("dtau must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.rannacher_substeps < 0:
            raise ValueError("rannacher_substeps must be >= 0")
        if self.mass_mode not in (LUMPED, CONSISTENT):
            raise ValueError(f"mass_mode must be '{LUMPED}' or '{CONSISTENT}'")
        if self.nonlinearity not in (GROUP, QUADRATURE):
            raise ValueError(f"nonlinearity must be '{GROUP}' or '{QUADRATURE}'")
        if self.power_mode not in (SIGNED, CLAMPED):
            raise ValueError(f"power_mode must be '{SIGNED}' or '{CLAMPED}'")
        if self.boundary_v not in (BOUNDARY_COPY, BOUNDARY_LINEAR):
            raise ValueError(f"boundary_v must be '{BOUNDARY_COPY}' or '{BOUNDARY_LINEAR}'")


@dataclass(frozen=True)
class SolutionSurface:
    """Scaled-variable solution history plus run diagnostics.

    u_history[i] holds all nodal values (boundary included) at
    tau_grid[i]; v_history holds the recovered curvature proxy extended
    to the boundary nodes.  diagnostics records the effective step
    sizes, the dtau/dx^2 ratio and the largest |v| seen.
    """

    x: np.ndarray
    tau_grid: np.ndarray
    u_history: np.ndarray
    v_history: np.ndarray
    mesh: Mesh1D
    params: RapmParams
    config: SolverConfig
    diagnostics: dict = field(default_factory=dict)

    @property
    def final_u(self):
        return self.u_history[-1]

    def u_at(self, x_query, time_index=-1):
        return interpolate_nodal(self.mesh, self.u_history[time_index], x_query)

    def prices(self, spots, time_index=-1):
        """Back-transformed option values V = S * u at the given spots."""
        spots = np.asarray(spots, dtype=float)
        x_query = np.log(spots / self.params.strike)
        return spots * self.u_at(x_query, time_index)


def interpolate_nodal(mesh: Mesh1D, values, x_query):
    """Evaluate a nodal field inside its own element basis."""
    x_query = np.asarray(x_query, dtype=float)
    scalar = x_query.ndim == 0
    xq = np.atleast_1d(x_query)
    nodes = mesh.nodes
    if np.any(xq < nodes[0] - 1e-12) or np.any(xq > nodes[-1] + 1e-12):
        raise SpotOutOfDomain("query point outside the mesh")
    xq = np.clip(xq, nodes[0], nodes[-1])
    if mesh.order == P1:
        out = np.interp(xq, nodes, values)
    else:
        endpoints = nodes[::2]
        idx = np.clip(np.searchsorted(endpoints, xq, side="right") - 1, 0, mesh.n_elements - 1)
        h = endpoints[idx + 1] - endpoints[idx]
        xi = (xq - endpoints[idx]) / h
        psi, _ = shape_eval(P2, xi)
        conn = mesh.elements[idx]
        out = np.einsum("km,mk->m", psi, values[conn])
    return float(out[0]) if scalar else out


def extend_to_boundary(v, mode=BOUNDARY_COPY):
    """Boundary values of the recovered field (it carries no boundary
    condition of its own): copy the nearest interior value or
    extrapolate linearly."""
    if mode == BOUNDARY_LINEAR and v.size >= 2:
        return 2.0 * v[0] - v[1], 2.0 * v[-1] - v[-2]
    return float(v[0]), float(v[-1])


def closed_mass_band(sys: GlobalSystem, boundary_v=BOUNDARY_COPY):
    """Mass band with the edge equations closed by the boundary
    extrapolation of v (the proxy carries no boundary condition, so the
    boundary columns are folded back via the configured extrapolation).
    Row-sum lumping absorbs the boundary columns the same way."""
    band = sys.mass.copy()
    bw, n = sys.bw, sys.n
    col_l, col_r = sys.lifting_cols["mass"]
    linear = boundary_v == BOUNDARY_LINEAR and n >= 2
    for j in range(min(bw, n)):
        if col_l[j] != 0.0:
            if linear:
                band[bw - j, j] += 2.0 * col_l[j]
                band[bw + 1 - j, j] -= col_l[j]
            else:
                band[bw - j, j] += col_l[j]
    for j in range(max(0, n - bw), n):
        if col_r[j] != 0.0:
            if linear:
                band[bw + (n - 1 - j), j] += 2.0 * col_r[j]
                band[bw + (n - 2 - j), j] -= col_r[j]
            else:
                band[bw + (n - 1 - j), j] += col_r[j]
    return band


def recover_v(u, sys: GlobalSystem, b_k, b_p, mass_mode=LUMPED, mass_lu=None,
              boundary_v=BOUNDARY_COPY):
    """Solve M v = -K u + P u - b_K + b_P for the curvature proxy."""
    rhs = -sys.matvec("stiff", u) + sys.matvec("conv", u) - b_k + b_p
    if mass_mode == LUMPED:
        return rhs / sys.lumped_mass
    try:
        if mass_lu is None:
            mass_lu = kb.banded_factor(closed_mass_band(sys, boundary_v), sys.bw,
                                       context="mass matrix")
        return kb.banded_solve_factored(mass_lu, sys.bw, rhs)
    except LinearSolveFailure as exc:  # defensive: cannot occur for valid meshes
        raise SingularMass(str(exc)) from exc


def rhs_F(u, v, sys: GlobalSystem, b_k, b_p, d_coeff, c_r,
          power_mode=SIGNED, boundary_v=BOUNDARY_COPY):
    """F(u) = -K u + (1+D) P u + c_r * N g(v) - b_K + (1+D) b_P.

    v must be the recovered proxy consistent with u; its boundary values
    for the 4/3-power weights are extrapolated per boundary_v.
    """
    vl, vr = extend_to_boundary(v, boundary_v)
    lin = -sys.matvec("stiff", u) + (1.0 + d_coeff) * sys.matvec("conv", u)
    nl = sys.nonlinear_matvec(
        signed_power(v, power_mode),
        signed_power(vl, power_mode),
        signed_power(vr, power_mode),
    )
    return lin + c_r * nl - b_k + (1.0 + d_coeff) * b_p


class _Stepper:
    """Per-march context: precombined operator bands, boundary state and
    (in consistent mode) the dense inner-mass solves."""

    def __init__(self, sys: GlobalSystem, constants, cfg: SolverConfig, ratio=None):
        self.sys = sys
        self.dc = constants
        self.cfg = cfg
        self.ratio = ratio
        bw = sys.bw
        d = constants.d_coeff
        self.t_outer = -sys.stiff + (1.0 + d) * sys.conv
        self.t_inner = -sys.stiff + sys.conv
        self.nl_bw = sys.nonlin_bw
        # trim the stored band to the effective width of N (diagonal for
        # the quadrature variant)
        self.nl_band = sys.nonlin if self.nl_bw == bw else sys.nonlin[bw - self.nl_bw:bw + self.nl_bw + 1]
        self.bw_a = bw + self.nl_bw
        self.bstate = BoundaryState(d_coeff=d, radius=sys.mesh.radius)
        self.mass_lu = None
        self.dense = cfg.mass_mode == CONSISTENT
        if self.dense:
            if sys.n > _DENSE_LIMIT:
                raise ValueError(
                    f"consistent mass_mode forms dense operators; n = {sys.n} "
                    f"exceeds the verification-scale limit {_DENSE_LIMIT}"
                )
            closed = closed_mass_band(sys, cfg.boundary_v)
            self.mass_lu = kb.banded_factor(closed, bw, context="mass matrix")
            # inner inverse mass uses the same closed band as recover_v so
            # the linearization is exact at a fixed point
            self.m_dense = kb.band_to_dense(sys.mass, bw)
            self.mclosed_dense = kb.band_to_dense(closed, bw)
            self.tout_dense = kb.band_to_dense(self.t_outer, bw)
            self.n_dense = kb.band_to_dense(sys.nonlin, bw)
            self.minv_tin = np.linalg.solve(self.mclosed_dense, kb.band_to_dense(self.t_inner, bw))

    def lifting(self, tau):
        return lifting_vectors(self.sys, self.bstate, tau)

    def recover(self, u, tau):
        _, b_k, b_p = self.lifting(tau)
        return recover_v(u, self.sys, b_k, b_p, self.cfg.mass_mode, self.mass_lu)

    def step(self, u_n, v_n, tau_n, tau_np1, theta):
        sys, cfg, dc = self.sys, self.cfg, self.dc
        dt = tau_np1 - tau_n
        d = dc.d_coeff
        c_r = dc.c_r
        b_m_n, b_k_n, b_p_n = self.lifting(tau_n)
        b_m_b, b_k_b, b_p_b = self.lifting(tau_np1)

        vl, vr = extend_to_boundary(v_n, cfg.boundary_v)
        g_int = signed_power(v_n, cfg.power_mode)
        gl = signed_power(vl, cfg.power_mode)
        gr = signed_power(vr, cfg.power_mode)
        f_n = (
            kb.banded_matvec(self.t_outer, sys.bw, u_n)
            + c_r * sys.nonlinear_matvec(g_int, gl, gr)
            - b_k_n + (1.0 + d) * b_p_n
        )
        root = cbrt_factor(v_n, cfg.power_mode)
        rhs = (
            sys.matvec("mass", u_n)
            + (1.0 - theta) * dt * f_n
            - (b_m_b - b_m_n)
        )
        bvec_b = -b_k_b + b_p_b

        if not self.dense:
            q = c_r * root / sys.lumped_mass
            nq = kb.band_scale_cols(self.nl_band, self.nl_bw, q)
            if cfg.boundary_theta_weighting:
                left_n, right_n = sys.lifting_cols["nonlin"]
                rhs = rhs + theta * dt * (
                    -b_k_b + (1.0 + d) * b_p_b
                    + kb.banded_matvec(nq, self.nl_bw, bvec_b)
                    + c_r * (gl * left_n + gr * right_n)
                )
            else:
                ncomp = kb.band_scale_cols(self.nl_band, self.nl_bw, c_r * root)
                rhs = rhs - kb.banded_matvec(ncomp, self.nl_bw, bvec_b)
            a_band = kb.band_pad(sys.mass, sys.bw, self.bw_a) - theta * dt * (
                kb.band_pad(self.t_outer, sys.bw, self.bw_a)
                + kb.band_mul(nq, self.nl_bw, self.t_inner, sys.bw)
            )
            return kb.banded_solve(a_band, self.bw_a, rhs,
                                   context="time step", diag_ratio=self.ratio)

        nq_dense = c_r * self.n_dense * root[np.newaxis, :]
        if cfg.boundary_theta_weighting:
            left_n, right_n = sys.lifting_cols["nonlin"]
            minv_b = np.linalg.solve(self.mclosed_dense, bvec_b)
            rhs = rhs + theta * dt * (
                -b_k_b + (1.0 + d) * b_p_b
                + nq_dense @ minv_b
                + c_r * (gl * left_n + gr * right_n)
            )
        else:
            rhs = rhs - c_r * (self.n_dense * root[np.newaxis, :]) @ bvec_b
        a_dense = self.m_dense - theta * dt * (self.tout_dense + nq_dense @ self.minv_tin)
        try:
            return np.linalg.solve(a_dense, rhs)
        except np.linalg.LinAlgError as exc:
            raise LinearSolveFailure(f"time step (dense): {exc}", ratio=self.ratio) from exc


def step_linearized(u_n, v_n, tau_n, tau_np1, sys: GlobalSystem, constants,
                    cfg: SolverConfig, theta=None):
    """Advance one step of the linearized theta-scheme.

    The 4/3-power term is linearized about the current proxy via its
    cube-root factor, so the step reduces to one banded (or, in
    consistent mode, dense) linear solve.
    """
    stepper = _Stepper(sys, constants, cfg, ratio=_ratio(sys.mesh, tau_np1 - tau_n))
    return stepper.step(
        np.asarray(u_n, dtype=float),
        np.asarray(v_n, dtype=float),
        tau_n,
        tau_np1,
        cfg.theta if theta is None else theta,
    )


def _ratio(mesh, dtau):
    h_min = float(np.min(mesh.element_sizes))
    return dtau / h_min ** 2


def initial_profile(params: RapmParams, constants, x):
    """Initial data of the nonlinear phase: the switching-time profile,
    or the raw scaled payoff when the switching time is degenerate."""
    if constants.tau_star > 0:
        return switching_profile(x, params)
    return transformed_payoff(x, 0.0, constants.d_coeff)


def solve_nonlinear_phase(params: RapmParams, mesh: Mesh1D, cfg: SolverConfig) -> SolutionSurface:
    """March the scaled problem from the switching time to valuation date.

    The first macro step is replaced by cfg.rannacher_substeps
    backward-Euler substeps; the remaining steps use cfg.theta.  The
    step count is rounded so the macro step divides the span exactly.
    """
    dc = derive_constants(params)
    sys = assemble(mesh, cfg.nonlinearity, dc.d_coeff)
    tau_lo, tau_hi = dc.tau_star, dc.tau_max
    span = tau_hi - tau_lo
    steps = max(1, int(round(span / cfg.dtau)))
    dtau_eff = span / steps
    ratio = _ratio(mesh, dtau_eff)
    stepper = _Stepper(sys, dc, cfg, ratio=ratio)

    u_full0 = initial_profile(params, dc, mesh.nodes)
    u = np.array(u_full0[1:-1], dtype=float)
    v = stepper.recover(u, tau_lo)

    n_times = steps + 1
    tau_grid = tau_lo + dtau_eff * np.arange(n_times)
    tau_grid[-1] = tau_hi
    u_hist = np.empty((n_times, mesh.n_nodes))
    v_hist = np.empty((n_times, mesh.n_nodes))

    def pack(idx, tau, u_int, v_int):
        u_hist[idx, 0] = stepper.bstate.u_left(tau)
        u_hist[idx, -1] = stepper.bstate.u_right(tau)
        u_hist[idx, 1:-1] = u_int
        vl, vr = extend_to_boundary(v_int, cfg.boundary_v)
        v_hist[idx, 0] = vl
        v_hist[idx, -1] = vr
        v_hist[idx, 1:-1] = v_int

    pack(0, tau_lo, u, v)

    # overflow during a diverging run is expected and detected; keep it quiet
    with np.errstate(over="ignore", invalid="ignore"):
        _march(stepper, cfg, tau_grid, steps, u, v, pack, ratio, u_hist)

    max_abs_v = float(np.max(np.abs(v_hist)))
    diagnostics = {
        "dtau_effective": dtau_eff,
        "steps": steps,
        "rannacher_substeps": cfg.rannacher_substeps,
        "dtau_dx2_ratio": ratio,
        "max_abs_v": max_abs_v,
        "dx_effective": mesh.dx_effective,
    }
    return SolutionSurface(
        x=mesh.nodes,
        tau_grid=tau_grid,
        u_history=u_hist,
        v_history=v_hist,
        mesh=mesh,
        params=params,
        config=cfg,
        diagnostics=diagnostics,
    )


def _march(stepper, cfg, tau_grid, steps, u, v, pack, ratio, u_hist):
    for istep in range(steps):
        tau_a = tau_grid[istep]
        tau_b = tau_grid[istep + 1]
        if istep == 0 and cfg.rannacher_substeps > 0:
            n_r = cfg.rannacher_substeps
            dt_r = (tau_b - tau_a) / n_r
            for k in range(n_r):
                sub_a = tau_a + k * dt_r
                sub_b = tau_a + (k + 1) * dt_r if k < n_r - 1 else tau_b
                u_new = stepper.step(u, v, sub_a, sub_b, theta=1.0)
                _check_finite(u_new, tau_a, u_hist[istep], ratio)
                u = u_new
                v = stepper.recover(u, sub_b)
                _check_finite(v, tau_a, u_hist[istep], ratio, what="recovered v")
        else:
            u_new = stepper.step(u, v, tau_a, tau_b, theta=cfg.theta)
            _check_finite(u_new, tau_a, u_hist[istep], ratio)
            u = u_new
            v = stepper.recover(u, tau_b)
            _check_finite(v, tau_a, u_hist[istep], ratio, what="recovered v")
        pack(istep + 1, tau_b, u, v)


def _check_finite(vec, last_tau, last_u_full, ratio, what="state"):
    if not np.all(np.isfinite(vec)):
        raise NonFiniteState(
            f"non-finite {what} after tau = {last_tau:.8g} "
            f"(dtau/dx^2 = {ratio:.6g}); last finite state attached",
            last_tau=last_tau,
            last_u=last_u_full.copy(),
            ratio=ratio,
        )


def price_option(params: RapmParams, mesh: Mesh1D, cfg: SolverConfig, eval_spots, t=0.0):
    """Option values at the requested spots.

    At t = 0 the nonlinear-phase surface is solved and interpolated in
    the element basis; for t past the switching time the classical
    closed form applies.  Spots must lie inside [K e^{-R}, K e^{R}].
    """
    spots = np.atleast_1d(np.asarray(eval_spots, dtype=float))
    radius = mesh.radius
    lo = params.strike * math.exp(-radius)
    hi = params.strike * math.exp(radius)
    if np.any(spots < lo * (1 - 1e-12)) or np.any(spots > hi * (1 + 1e-12)):
        raise SpotOutOfDomain(
            f"spots must lie within [{lo:.6g}, {hi:.6g}] for radius {radius}"
        )
    dc = derive_constants(params)
    if t == 0.0:
        surface = solve_nonlinear_phase(params, mesh, cfg)
        values = surface.prices(spots)
    elif dc.t_star < t <= params.expiry:
        values = np.asarray(bs_call_price(spots, t, params), dtype=float)
        values = np.atleast_1d(values)
    else:
        raise ValueError(
            "only t = 0 or times past the switching time are supported"
        )
    return list(zip(spots.tolist(), values.tolist()))
