"""Independent finite-difference cross-check for the scaled problem.

Centered second-order differences on a uniform grid; the linear part is
advanced with the theta-scheme while the 4/3-power term is evaluated
explicitly and pointwise at the current level.  This deliberately
differs from the element-based path in its nonlinear treatment, so
agreement between the two is evidence of correctness rather than shared
bias.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as kb
from .elements import CLAMPED, SIGNED, signed_power
from .errors import NonFiniteState
from .mesh import P1, uniform_mesh
from .model import RapmParams, derive_constants
from .solver import SolutionSurface, initial_profile


@dataclass(frozen=True)
class FdmConfig:
    """Grid and scheme switches for the finite-difference oracle."""

    dx: float
    dtau: float
    radius: float = 3.0
    theta: float = 0.5
    power_mode: str = SIGNED
    rannacher_substeps: int = 4

    def __post_init__(self):
        if self.dx <= 0 or self.dtau <= 0:
            raise ValueError("dx and dtau must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.power_mode not in (SIGNED, CLAMPED):
            raise ValueError(f"power_mode must be '{SIGNED}' or '{CLAMPED}'")
        if self.rannacher_substeps < 0:
            raise ValueError("rannacher_substeps must be >= 0")


def _curvature(u_full, dx):
    """Centered stencil for u_xx + u_x on the interior nodes."""
    return (
        (u_full[2:] - 2.0 * u_full[1:-1] + u_full[:-2]) / dx ** 2
        + (u_full[2:] - u_full[:-2]) / (2.0 * dx)
    )


def _implicit_band(n, dx, d_coeff, theta_dt):
    """Tridiagonal band of I - theta*dt*(u_xx + (1+D) u_x)."""
    sub = 1.0 / dx ** 2 - (1.0 + d_coeff) / (2.0 * dx)
    sup = 1.0 / dx ** 2 + (1.0 + d_coeff) / (2.0 * dx)
    band = kb.band_zeros(1, n)
    band[0, 1:] = -theta_dt * sub
    band[1, :] = 1.0 + theta_dt * 2.0 / dx ** 2
    band[2, :-1] = -theta_dt * sup
    return band, sub, sup


def fdm_march(d_coeff, c_r, x, tau_lo, tau_hi, dtau, theta, n_rannacher,
              power_mode, u0_full, u_left, u_right):
    """Drive the finite-difference scheme with explicit boundary callables.

    Returns (tau_grid, u_history, w_history); the first macro step is
    replaced by n_rannacher implicit-Euler substeps like the element
    path.  Raises NonFiniteState on blow-up.
    """
    dx = float(x[1] - x[0])
    n = x.size - 2
    span = tau_hi - tau_lo
    steps = max(1, int(round(span / dtau)))
    dt = span / steps
    ratio = dt / dx ** 2

    tau_grid = tau_lo + dt * np.arange(steps + 1)
    tau_grid[-1] = tau_hi
    u_hist = np.empty((steps + 1, x.size))
    w_hist = np.empty((steps + 1, x.size))

    u_full = np.array(u0_full, dtype=float)
    u_hist[0] = u_full
    w = _curvature(u_full, dx)
    w_hist[0, 1:-1] = w
    w_hist[0, 0] = w[0]
    w_hist[0, -1] = w[-1]
    last_tau = tau_lo

    def sub_step(u_full, tau_a, tau_b, th):
        ddt = tau_b - tau_a
        band, sub, sup = _implicit_band(n, dx, d_coeff, th * ddt)
        w_n = _curvature(u_full, dx)
        lin_n = w_n + d_coeff * (u_full[2:] - u_full[:-2]) / (2.0 * dx)
        rhs = (
            u_full[1:-1]
            + ddt * ((1.0 - th) * lin_n + c_r * signed_power(w_n, power_mode))
        )
        rhs[0] += th * ddt * sub * u_left(tau_b)
        rhs[-1] += th * ddt * sup * u_right(tau_b)
        u_int = kb.banded_solve(band, 1, rhs, context="fd step", diag_ratio=ratio)
        out = np.empty_like(u_full)
        out[0] = u_left(tau_b)
        out[-1] = u_right(tau_b)
        out[1:-1] = u_int
        return out

    with np.errstate(over="ignore", invalid="ignore"):
        _fd_loop(steps, tau_grid, n_rannacher, theta, sub_step, u_hist, w_hist,
                 u_full, dx, last_tau, ratio)
    return tau_grid, u_hist, w_hist


def _fd_loop(steps, tau_grid, n_rannacher, theta, sub_step, u_hist, w_hist,
             u_full, dx, last_tau, ratio):
    for istep in range(steps):
        tau_a, tau_b = tau_grid[istep], tau_grid[istep + 1]
        if istep == 0 and n_rannacher > 0:
            dt_r = (tau_b - tau_a) / n_rannacher
            for kk in range(n_rannacher):
                sa = tau_a + kk * dt_r
                sb = tau_a + (kk + 1) * dt_r if kk < n_rannacher - 1 else tau_b
                u_new = sub_step(u_full, sa, sb, 1.0)
                if not np.all(np.isfinite(u_new)):
                    raise NonFiniteState(
                        f"non-finite state after tau = {last_tau:.8g} "
                        f"(dtau/dx^2 = {ratio:.6g}); last finite state attached",
                        last_tau=last_tau, last_u=u_full.copy(), ratio=ratio,
                    )
                u_full = u_new
                last_tau = sb
        else:
            u_new = sub_step(u_full, tau_a, tau_b, theta)
            if not np.all(np.isfinite(u_new)):
                raise NonFiniteState(
                    f"non-finite state after tau = {last_tau:.8g} "
                    f"(dtau/dx^2 = {ratio:.6g}); last finite state attached",
                    last_tau=last_tau, last_u=u_full.copy(), ratio=ratio,
                )
            u_full = u_new
            last_tau = tau_b
        u_hist[istep + 1] = u_full
        w = _curvature(u_full, dx)
        w_hist[istep + 1, 1:-1] = w
        w_hist[istep + 1, 0] = w[0]
        w_hist[istep + 1, -1] = w[-1]


def fdm_solve(params: RapmParams, cfg: FdmConfig) -> SolutionSurface:
    """Solve the scaled problem with the finite-difference scheme."""
    dc = derive_constants(params)
    mesh = uniform_mesh(cfg.radius, cfg.dx, P1)
    x = mesh.nodes
    u0 = initial_profile(params, dc, x)

    def u_left(tau):
        return 0.0

    def u_right(tau):
        return 1.0 - math.exp(-dc.d_coeff * tau - cfg.radius)

    tau_grid, u_hist, w_hist = fdm_march(
        dc.d_coeff, dc.c_r, x, dc.tau_star, dc.tau_max, cfg.dtau, cfg.theta,
        cfg.rannacher_substeps, cfg.power_mode, u0, u_left, u_right,
    )
    dx_eff = float(x[1] - x[0])
    diagnostics = {
        "dtau_effective": float(tau_grid[1] - tau_grid[0]),
        "steps": tau_grid.size - 1,
        "rannacher_substeps": cfg.rannacher_substeps,
        "dtau_dx2_ratio": float(tau_grid[1] - tau_grid[0]) / dx_eff ** 2,
        "max_abs_v": float(np.max(np.abs(w_hist))),
        "dx_effective": dx_eff,
    }
    return SolutionSurface(
        x=x,
        tau_grid=tau_grid,
        u_history=u_hist,
        v_history=w_hist,
        mesh=mesh,
        params=params,
        config=cfg,
        diagnostics=diagnostics,
    )
