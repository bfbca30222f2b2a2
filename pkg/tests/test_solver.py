import math
import types

import numpy as np
import pytest

from rapmfem import (
    NonFiniteState,
    RapmParams,
    SolverConfig,
    SpotOutOfDomain,
    assemble,
    bs_call_price,
    derive_constants,
    price_option,
    recover_v,
    rhs_F,
    solve_nonlinear_phase,
    step_linearized,
    switching_profile,
    uniform_mesh,
)
from rapmfem import _kernels as kb
from rapmfem.assembly import BoundaryState
from rapmfem.solver import _Stepper, interpolate_nodal


def lift(sys, name, ul, ur):
    return sys.lifting_from_values(name, ul, ur)


# ---------------------------------------------------------------- recover_v

def test_recover_v_zero():
    mesh = uniform_mesh(1.0, 0.25, "p1")
    sys = assemble(mesh, "group", 5.0)
    v = recover_v(np.zeros(sys.n), sys, np.zeros(sys.n), np.zeros(sys.n))
    assert np.all(v == 0.0)


@pytest.mark.parametrize("mass_mode", ["lumped", "consistent"])
def test_recover_v_exponential_second_order(mass_mode):
    # u = exp(-x) satisfies u_xx + u_x = 0, so v must vanish at O(dx^2)
    errs = []
    for dx in (0.02, 0.01, 0.005):
        mesh = uniform_mesh(1.0, dx, "p1")
        sys = assemble(mesh, "group", 0.0)
        u = np.exp(-mesh.nodes)
        b_k = lift(sys, "stiff", u[0], u[-1])
        b_p = lift(sys, "conv", u[0], u[-1])
        v = recover_v(u[1:-1], sys, b_k, b_p, mass_mode)
        errs.append(np.abs(v).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.9)


def test_recover_v_quadratic_lumped_exact():
    mesh = uniform_mesh(1.0, 0.1, "p1")
    sys = assemble(mesh, "group", 0.0)
    u = mesh.nodes ** 2
    b_k = lift(sys, "stiff", u[0], u[-1])
    b_p = lift(sys, "conv", u[0], u[-1])
    v = recover_v(u[1:-1], sys, b_k, b_p, "lumped")
    assert np.abs(v - (2.0 + 2.0 * mesh.nodes[1:-1])).max() < 1e-10


@pytest.mark.parametrize("order", ["p1", "p2"])
def test_recover_v_quadratic_consistent(order):
    # the linear boundary closure reproduces the linear proxy exactly;
    # the copy closure converges as the mesh is refined
    errs_copy = []
    for dx in (0.2, 0.1, 0.05):
        mesh = uniform_mesh(1.0, dx, order)
        sys = assemble(mesh, "group", 0.0)
        u = mesh.nodes ** 2
        b_k = lift(sys, "stiff", u[0], u[-1])
        b_p = lift(sys, "conv", u[0], u[-1])
        exact = 2.0 + 2.0 * mesh.nodes[1:-1]
        v_lin = recover_v(u[1:-1], sys, b_k, b_p, "consistent", boundary_v="linear")
        assert np.abs(v_lin - exact).max() < 1e-10
        v_copy = recover_v(u[1:-1], sys, b_k, b_p, "consistent", boundary_v="copy")
        errs_copy.append(np.abs(v_copy - exact).max())
    assert errs_copy[2] < errs_copy[1] < errs_copy[0]


# ------------------------------------------------------------------- rhs_F

def test_rhs_f_single_node_hand_value():
    # one interior node at x = 0, h = 1: M = [2/3], K = [2], P = [0]
    mesh = uniform_mesh(1.0, 1.0, "p1")
    sys = assemble(mesh, "group", 5.0)
    assert sys.n == 1
    u = np.array([0.3])
    ul, ur = 0.0, 0.9
    b_k = lift(sys, "stiff", ul, ur)
    b_p = lift(sys, "conv", ul, ur)
    assert b_k[0] == pytest.approx(-0.9)
    assert b_p[0] == pytest.approx(0.45)
    v = recover_v(u, sys, b_k, b_p, "lumped")
    # rhs = -2*0.3 + 0 + 0.9 + 0.45 = 0.75 over unit lumped mass
    assert v[0] == pytest.approx(0.75, rel=1e-14)
    c_r = 0.1
    f = rhs_F(u, v, sys, b_k, b_p, 5.0, c_r)
    g = 0.75 * np.cbrt(0.75)
    # group action spreads g over (1/6, 2/3, 1/6) incl. the copied boundary v
    expected = -2.0 * 0.3 + 0.9 + 6.0 * 0.45 + c_r * g
    assert f[0] == pytest.approx(expected, rel=1e-14)


def test_rhs_f_zero_state():
    mesh = uniform_mesh(1.0, 0.25, "p1")
    sys = assemble(mesh, "group", 5.0)
    z = np.zeros(sys.n)
    assert np.all(rhs_F(z, z, sys, z, z, 5.0, 0.1) == 0.0)


def test_rhs_f_linear_limit_matches_matrix_form(params5, rng):
    mesh = uniform_mesh(1.0, 0.1, "p1")
    dc = derive_constants(params5)
    sys = assemble(mesh, "group", dc.d_coeff)
    u = rng.uniform(0, 1, sys.n)
    b_k = lift(sys, "stiff", 0.0, 0.8)
    b_p = lift(sys, "conv", 0.0, 0.8)
    v = recover_v(u, sys, b_k, b_p)
    f = rhs_F(u, v, sys, b_k, b_p, dc.d_coeff, 0.0)
    dense = kb.band_to_dense(-sys.stiff + (1 + dc.d_coeff) * sys.conv, sys.bw)
    expected = dense @ u - b_k + (1 + dc.d_coeff) * b_p
    assert np.allclose(f, expected, atol=1e-13)


# ------------------------------------------------------------------- steps

def dense_backward_euler_step(sys, dc, u, tau_a, tau_b):
    """Independent dense-algebra oracle for one theta = 1 linear step."""
    d = dc.d_coeff
    bst = BoundaryState(d_coeff=d, radius=sys.mesh.radius)
    dt = tau_b - tau_a
    m = kb.band_to_dense(sys.mass, sys.bw)
    t_out = kb.band_to_dense(-sys.stiff + (1 + d) * sys.conv, sys.bw)
    bm = [sys.lifting_from_values("mass", bst.u_left(t), bst.u_right(t)) for t in (tau_a, tau_b)]
    bk_b = sys.lifting_from_values("stiff", bst.u_left(tau_b), bst.u_right(tau_b))
    bp_b = sys.lifting_from_values("conv", bst.u_left(tau_b), bst.u_right(tau_b))
    rhs = m @ u - (bm[1] - bm[0]) + dt * (-bk_b + (1 + d) * bp_b)
    return np.linalg.solve(m - dt * t_out, rhs)


def test_step_matches_dense_oracle(params5):
    # theta = 1, c_r = 0, n = 50
    p0 = RapmParams(r=0.1, sigma=0.2, strike=75.0, expiry=1.0,
                    risk_premium=0.0, txn_cost=2.0)
    dc = derive_constants(p0)
    mesh = uniform_mesh(1.0, 2.0 / 51.0, "p1")
    sys = assemble(mesh, "group", dc.d_coeff)
    assert sys.n == 50
    u0 = np.maximum(1.0 - np.exp(-mesh.nodes[1:-1]), 0.0)
    cfg = SolverConfig(dtau=1e-3, theta=1.0)
    b_k = lift(sys, "stiff", 0.0, BoundaryState(dc.d_coeff, 1.0).u_right(0.0))
    b_p = lift(sys, "conv", 0.0, BoundaryState(dc.d_coeff, 1.0).u_right(0.0))
    v0 = recover_v(u0, sys, b_k, b_p)
    u1 = step_linearized(u0, v0, 0.0, 1e-3, sys, dc, cfg)
    u1_ref = dense_backward_euler_step(sys, dc, u0, 0.0, 1e-3)
    assert np.abs(u1 - u1_ref).max() <= 1e-10


def test_step_consistency_in_dt(params5):
    dc = derive_constants(params5)
    mesh = uniform_mesh(1.0, 0.05, "p1")
    sys = assemble(mesh, "group", dc.d_coeff)
    u0 = switching_profile(mesh.nodes[1:-1], params5)
    stepper = _Stepper(sys, dc, SolverConfig(dtau=1e-3), ratio=0.0)
    v0 = stepper.recover(u0, dc.tau_star)
    deltas = []
    for dt in (2e-4, 1e-4):
        u1 = stepper.step(u0, v0, dc.tau_star, dc.tau_star + dt, theta=0.5)
        deltas.append(np.abs(u1 - u0).max())
    ratio = deltas[0] / deltas[1]
    assert 1.6 < ratio < 2.4


@pytest.mark.parametrize("mass_mode", ["lumped", "consistent"])
@pytest.mark.parametrize("nonlinearity", ["group", "quadrature"])
def test_stationary_state_is_fixed_point(params5, mass_mode, nonlinearity):
    # with static boundary data, a state with F(u) = 0 must not move
    dc = derive_constants(params5)
    mesh = uniform_mesh(1.0, 0.1, "p1")
    sys = assemble(mesh, nonlinearity, dc.d_coeff)
    cfg = SolverConfig(dtau=0.01, mass_mode=mass_mode, nonlinearity=nonlinearity)
    stepper = _Stepper(sys, dc, cfg, ratio=0.0)
    stepper.bstate = types.SimpleNamespace(
        u_left=lambda tau: 0.0, u_right=lambda tau: 0.9, du_right=lambda tau: 0.0)
    u = np.maximum(1.0 - np.exp(-mesh.nodes[1:-1]), 0.0) * 0.9
    v = stepper.recover(u, 0.0)
    # the semi-implicit iteration converges to the steady state
    for _ in range(400):
        u = stepper.step(u, v, 0.0, 0.01, theta=1.0)
        v = stepper.recover(u, 0.0)
    b_k = lift(sys, "stiff", 0.0, 0.9)
    b_p = lift(sys, "conv", 0.0, 0.9)
    resid = rhs_F(u, v, sys, b_k, b_p, dc.d_coeff, dc.c_r)
    assert np.abs(resid).max() < 1e-10
    u_next = stepper.step(u, v, 0.0, 0.01, theta=0.5)
    assert np.abs(u_next - u).max() < 1e-10


def test_linearized_matrix_reduces_at_zero_v(params5):
    # with v = 0 the step matrix must equal the linear one entrywise
    dc = derive_constants(params5)
    mesh = uniform_mesh(1.0, 0.25, "p1")
    sys = assemble(mesh, "group", dc.d_coeff)
    cfg = SolverConfig(dtau=1e-3)
    st = _Stepper(sys, dc, cfg, ratio=0.0)
    q = dc.c_r * np.cbrt(np.zeros(sys.n)) / sys.lumped_mass
    nq = kb.band_scale_cols(st.nl_band, st.nl_bw, q)
    theta_dt = 0.5 * 1e-3
    a_nl = kb.band_pad(sys.mass, sys.bw, st.bw_a) - theta_dt * (
        kb.band_pad(st.t_outer, sys.bw, st.bw_a)
        + kb.band_mul(nq, st.nl_bw, st.t_inner, sys.bw))
    a_lin = kb.band_pad(sys.mass, sys.bw, st.bw_a) - theta_dt * kb.band_pad(
        st.t_outer, sys.bw, st.bw_a)
    assert np.array_equal(a_nl, a_lin)


# ------------------------------------------------------------- full solves

def test_reference_run_completes(params5):
    mesh = uniform_mesh(3.0, 0.01, "p1")
    surf = solve_nonlinear_phase(params5, mesh, SolverConfig(dtau=0.0005))
    assert surf.diagnostics["steps"] == 35
    assert surf.tau_grid[0] == pytest.approx(0.0025)
    assert surf.tau_grid[-1] == pytest.approx(0.02)
    assert np.all(np.isfinite(surf.u_history))
    assert np.all(np.isfinite(surf.v_history))


def test_initial_data_is_switching_profile(params5):
    mesh = uniform_mesh(2.0, 0.05, "p1")
    surf = solve_nonlinear_phase(params5, mesh, SolverConfig(dtau=0.001))
    profile = switching_profile(mesh.nodes, params5)
    assert np.array_equal(surf.u_history[0][1:-1], profile[1:-1])
    assert np.allclose(surf.u_history[0][[0, -1]], profile[[0, -1]], atol=1e-14)


def test_linear_limit_matches_closed_form_coarse():
    p0 = RapmParams(r=0.1, sigma=0.2, strike=75.0, expiry=1.0,
                    risk_premium=0.0, txn_cost=2.0)
    mesh = uniform_mesh(3.0, 0.02, "p1")
    surf = solve_nonlinear_phase(p0, mesh, SolverConfig(dtau=0.001))
    spots = np.linspace(37.5, 150.0, 100)
    err = np.abs(surf.prices(spots) - bs_call_price(spots, 0.0, p0)).max()
    assert err < 0.02


def test_solution_positive_and_monotone(params5):
    mesh = uniform_mesh(3.0, 0.02, "p1")
    surf = solve_nonlinear_phase(params5, mesh, SolverConfig(dtau=0.001))
    u = surf.final_u
    assert np.all(u >= 0.0)
    assert np.min(np.diff(u)) >= -1e-8
    spots = params5.strike * np.exp(surf.x)
    assert np.all(spots * u >= 0.0)


def test_rannacher_damping_diagnostic(params5):
    # at a coarse step the startup substeps must not enlarge |v| near x=0
    mesh = uniform_mesh(3.0, 0.01, "p1")
    near = np.abs(mesh.nodes) < 0.2
    peaks = {}
    for n_r in (0, 4):
        surf = solve_nonlinear_phase(
            params5, mesh, SolverConfig(dtau=0.0025, rannacher_substeps=n_r))
        peaks[n_r] = np.abs(surf.v_history[:, near]).max()
    assert peaks[4] <= peaks[0] + 1e-9


def test_non_finite_state_carries_diagnostics(params5):
    mesh = uniform_mesh(3.0, 0.005, "p1")
    cfg = SolverConfig(dtau=0.00025, theta=0.0, rannacher_substeps=0)
    with pytest.raises(NonFiniteState) as exc:
        solve_nonlinear_phase(params5, mesh, cfg)
    err = exc.value
    assert err.ratio == pytest.approx(0.00025 / 0.005 ** 2, rel=1e-6)
    assert err.last_u is not None and np.all(np.isfinite(err.last_u))
    assert err.last_tau is not None
    assert "dtau/dx^2" in str(err)


# ------------------------------------------------------------ price_option

def test_price_reproduces_nodal_values(params5):
    mesh = uniform_mesh(3.0, 0.05, "p1")
    cfg = SolverConfig(dtau=0.001)
    surf = solve_nonlinear_phase(params5, mesh, cfg)
    i = 30
    s_node = params5.strike * math.exp(mesh.nodes[i])
    out = price_option(params5, mesh, cfg, [s_node])
    assert out[0][1] == pytest.approx(s_node * surf.final_u[i], rel=1e-12)


def test_price_left_boundary_is_zero(params5):
    mesh = uniform_mesh(3.0, 0.05, "p1")
    cfg = SolverConfig(dtau=0.001)
    s_left = params5.strike * math.exp(-3.0)
    out = price_option(params5, mesh, cfg, [s_left])
    assert abs(out[0][1]) < 1e-12


def test_price_out_of_domain(params5):
    mesh = uniform_mesh(3.0, 0.05, "p1")
    cfg = SolverConfig(dtau=0.001)
    with pytest.raises(SpotOutOfDomain):
        price_option(params5, mesh, cfg, [params5.strike * math.exp(-3.2)])


def test_price_classical_phase(params5):
    mesh = uniform_mesh(3.0, 0.05, "p1")
    cfg = SolverConfig(dtau=0.001)
    out = price_option(params5, mesh, cfg, [60.0, 75.0, 90.0], t=0.9)
    for s, v in out:
        assert v == pytest.approx(bs_call_price(s, 0.9, params5), rel=1e-14)


def test_price_mid_phase_unsupported(params5):
    mesh = uniform_mesh(3.0, 0.05, "p1")
    cfg = SolverConfig(dtau=0.001)
    with pytest.raises(ValueError):
        price_option(params5, mesh, cfg, [75.0], t=0.4)


def test_price_exceeds_linear_value_at_strike(params5):
    mesh = uniform_mesh(3.0, 0.02, "p1")
    cfg = SolverConfig(dtau=0.001)
    out = price_option(params5, mesh, cfg, [params5.strike])
    assert out[0][1] >= bs_call_price(params5.strike, 0.0, params5) + 0.05


# ---------------------------------------------------------- interpolation

@pytest.mark.parametrize("order", ["p1", "p2"])
def test_interpolation_exact_for_basis_polynomials(order):
    mesh = uniform_mesh(1.0, 0.25, order)
    deg = 1 if order == "p1" else 2
    values = mesh.nodes ** deg
    xq = np.linspace(-1.0, 1.0, 113)
    out = interpolate_nodal(mesh, values, xq)
    assert np.allclose(out, xq ** deg, atol=1e-13)


def test_p2_interpolation_is_quadratic_within_elements():
    mesh = uniform_mesh(1.0, 0.5, "p2")
    values = np.zeros(mesh.n_nodes)
    values[1] = 1.0  # midpoint bump of the first element
    xq = np.array([-0.75])
    # midpoint basis at xi = 0.5: -4 * 0.5 * (0.5 - 1) = 1
    assert interpolate_nodal(mesh, values, xq)[0] == pytest.approx(1.0, rel=1e-14)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(dtau=0.0)
    with pytest.raises(ValueError):
        SolverConfig(dtau=1e-3, theta=1.2)
    with pytest.raises(ValueError):
        SolverConfig(dtau=1e-3, rannacher_substeps=-1)
    with pytest.raises(ValueError):
        SolverConfig(dtau=1e-3, mass_mode="diag")
    with pytest.raises(ValueError):
        SolverConfig(dtau=1e-3, nonlinearity="petrov")
    with pytest.raises(ValueError):
        SolverConfig(dtau=1e-3, power_mode="abs")
    with pytest.raises(ValueError):
        SolverConfig(dtau=1e-3, boundary_v="quadratic")
