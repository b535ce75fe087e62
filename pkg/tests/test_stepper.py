import warnings

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from hypothesis import given
from hypothesis import strategies as st

from msrom.fem import FineDiscretization
from msrom.field import constant_field, generate_channelized
from msrom.grid import build_fine_mesh
from msrom.rom import ReducedOperator
from msrom.stepper import (
    EXPONENT_CLAMP,
    AllenCahn,
    FineIntegrator,
    NonlinearSolveError,
    Nonlinearity,
    PicardWarning,
    StepperConfig,
    etd_weight,
    linear,
    run,
    step_etd,
    step_etd_reduced,
    step_implicit_euler_fine,
    step_implicit_euler_reduced,
    zero,
)


@pytest.fixture(scope="module")
def disc():
    m = build_fine_mesh(10, 10)
    return FineDiscretization(m, generate_channelized(m, 20.0, 1))


def bump(d, a=0.5):
    return d.interpolate(lambda x, y: a * np.sin(np.pi * x) * np.sin(2 * np.pi * y))


def test_etd_with_zero_source_is_implicit_euler(disc):
    u0 = bump(disc)
    dt = 1e-2
    ie = step_implicit_euler_fine(u0, disc.A_in, disc.M_in, zero(), dt).value
    etd = step_etd(u0, disc.A_in, disc.M_in, zero(), dt).value
    assert np.allclose(etd, ie, rtol=0, atol=1e-10)
    direct = spla.spsolve(sp.csc_matrix(disc.M_in + dt * disc.A_in), disc.M_in @ u0)
    assert np.allclose(etd, direct, atol=1e-10)

    V = np.random.default_rng(0).normal(size=(disc.n_free, 7))
    ops = ReducedOperator(V, disc.A_in, disc.M_in)
    a = step_etd_reduced(u0, ops, zero(), dt).value
    b = step_implicit_euler_reduced(u0, ops, zero(), dt).value
    assert np.allclose(a, b, atol=1e-10)


@given(st.floats(-3, 3, allow_nan=False), st.floats(1e-4, 1e-2))
def test_etd_weight_moves_toward_stable_states(u, dt):
    w, _ = etd_weight(np.array([u]), AllenCahn(0.1, -1.0), dt)
    w = float(w[0])
    assert np.sign(w) == np.sign(u) or u == 0
    if abs(u) < 1:
        assert abs(w) >= abs(u)
    elif abs(u) > 1:
        assert abs(w) <= abs(u)
    else:
        assert w == pytest.approx(u)


def test_etd_weight_clamps_exponents():
    f = AllenCahn(1.0, 1.0)  # dt * S(u)/u = dt * (u^2 - 1)
    u = np.array([0.0, 0.5, 30.0, -40.0])
    w, clamped = etd_weight(u, f, 1.0)
    assert clamped == 2
    assert np.all(np.isfinite(w))
    assert w[2] == pytest.approx(np.exp(EXPONENT_CLAMP) * 30.0)
    assert w[1] == pytest.approx(np.exp(-0.75) * 0.5)


def test_picard_and_newton_agree(disc):
    u0 = bump(disc, 0.8)
    f = AllenCahn(0.3, -1.0)
    a = step_implicit_euler_fine(u0, disc.A_in, disc.M_in, f, 1e-3, picard_tol=1e-12)
    b = step_implicit_euler_fine(u0, disc.A_in, disc.M_in, f, 1e-3, picard_tol=1e-12, nonlinear_solver="newton")
    assert a.converged and b.converged
    assert b.iterations <= a.iterations
    assert np.allclose(a.value, b.value, atol=1e-10)


@pytest.mark.parametrize("c", [-3.0, 0.5, 2.0])
def test_linear_source_matches_direct_solve(disc, c):
    u0 = bump(disc)
    dt = 1e-3
    res = step_implicit_euler_fine(u0, disc.A_in, disc.M_in, linear(c), dt, picard_tol=1e-13, picard_max=200)
    K = disc.M_in / dt + disc.A_in - c * disc.M_in
    direct = spla.spsolve(sp.csc_matrix(K), disc.M_in @ u0 / dt)
    assert np.allclose(res.value, direct, atol=1e-10)


def test_guarded_ratio_at_zero():
    f = Nonlinearity(lambda u: np.sin(u))  # no analytic ratio; sin(u)/u -> 1 at 0
    q = f.ratio(np.array([0.0, 1e-14, 0.5]))
    assert q[0] == pytest.approx(1.0, rel=1e-6)
    assert q[1] == pytest.approx(1.0, rel=1e-6)
    assert q[2] == pytest.approx(np.sin(0.5) / 0.5)
    ac = AllenCahn(0.5, -1.0)
    assert np.allclose(ac.ratio(np.array([0.0])), ac.derivative(np.array([0.0])))


def test_stepper_config_validation():
    with pytest.raises(ValueError):
        StepperConfig(scheme="rk4")
    with pytest.raises(ValueError):
        StepperConfig(dt=0.0)
    with pytest.raises(ValueError):
        StepperConfig(dt=0.3, T=1.0)
    with pytest.raises(ValueError):
        StepperConfig(nonlinear_solver="bfgs")
    with pytest.raises(ValueError):
        StepperConfig(picard_max=0)
    assert StepperConfig(dt=1e-3, T=0.1).n_steps == 100
    with pytest.raises(ValueError):
        AllenCahn(0.0)
    with pytest.raises(ValueError):
        AllenCahn(0.1, sign=2.0)


def test_nonconvergence_warns_and_divergence_raises():
    m = build_fine_mesh(8, 8)
    d = FineDiscretization(m, constant_field(m))
    u0 = bump(d, 0.9)
    with pytest.warns(PicardWarning):
        step_implicit_euler_fine(u0, d.A_in, d.M_in, AllenCahn(0.05, -1.0), 1e-2, picard_tol=1e-14, picard_max=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        with pytest.raises(NonlinearSolveError):
            step_implicit_euler_fine(u0, d.A_in, d.M_in, AllenCahn(0.01, 1.0), 1e-3, picard_max=50)


@pytest.mark.parametrize("scheme", ["implicit_euler", "etd"])
def test_identity_basis_reproduces_fine(disc, scheme):
    cfg = StepperConfig(scheme, 1e-3, 2e-2, picard_tol=1e-12)
    f = AllenCahn(0.3, -1.0)
    u0 = bump(disc, 0.6)
    fine = run(None, disc.A_in, disc.M_in, f, cfg, u0)
    ops = ReducedOperator(sp.identity(disc.n_free, format="csc"), disc.A_in, disc.M_in)
    red = run(ops, disc.A_in, disc.M_in, f, cfg, u0)
    for n in fine.states:
        assert np.allclose(red.states[n], fine.states[n], atol=1e-9)


def test_run_records_errors_against_reference(disc):
    cfg = StepperConfig("implicit_euler", 1e-3, 5e-3)
    f = AllenCahn(0.5, 1.0)
    u0 = bump(disc)
    ref = run(None, disc.A_in, disc.M_in, f, cfg, u0)
    again = run(None, disc.A_in, disc.M_in, f, cfg, u0, reference=[ref.states[n] for n in sorted(ref.states)])
    assert len(again.records) == cfg.n_steps + 1
    assert all(r.e_a == 0 and r.e_2 == 0 for r in again.records)
    assert [r.n for r in again.records] == list(range(cfg.n_steps + 1))


def test_fine_integrator_reuses_factorization(disc):
    cfg = StepperConfig("implicit_euler", 1e-3, 1e-3)
    integ = FineIntegrator(disc.A_in, disc.M_in, zero(), cfg)
    u = bump(disc)
    a = integ.step(u).value
    b = integ.step(u).value
    assert np.array_equal(a, b)


def test_zero_steps_gives_projected_initial_state(disc):
    V = np.random.default_rng(3).normal(size=(disc.n_free, 5))
    ops = ReducedOperator(V, disc.A_in, disc.M_in)
    u0 = bump(disc)
    traj = run(ops, disc.A_in, disc.M_in, zero(), StepperConfig(dt=1e-3, T=0.0), u0)
    assert len(traj.records) == 1 and list(traj.states) == [0]
    assert np.allclose(traj.states[0], ops.reconstruct(ops.l2_projection(u0).coefficients))


def test_single_picard_iteration_lags_the_source(disc):
    u0 = bump(disc, 0.7)
    f = AllenCahn(0.5, -1.0)
    dt = 1e-3
    res = step_implicit_euler_fine(u0, disc.A_in, disc.M_in, f, dt, picard_max=1)
    K = disc.M_in / dt + disc.A_in
    lagged = spla.spsolve(sp.csc_matrix(K), disc.M_in @ (u0 / dt + f(u0)))
    assert np.allclose(res.value, lagged, atol=1e-12)
    V = np.random.default_rng(4).normal(size=(disc.n_free, 6))
    ops = ReducedOperator(V, disc.A_in, disc.M_in)
    c = step_implicit_euler_reduced(u0, ops, f, dt, picard_max=1).value
    assert np.allclose(c, np.linalg.solve(ops.M_r / dt + ops.A_r, ops.load(u0 / dt + f(u0))), atol=1e-10)


@pytest.mark.parametrize("solver", ["picard", "newton"])
def test_converged_iterate_has_small_residual(disc, solver):
    u0 = bump(disc, 0.9)
    f = AllenCahn(0.2, -1.0)
    dt, tol = 1e-3, 1e-8
    res = step_implicit_euler_fine(u0, disc.A_in, disc.M_in, f, dt, picard_tol=tol, nonlinear_solver=solver)
    u = res.value
    r = (disc.M_in / dt + disc.A_in) @ u - disc.M_in @ (u0 / dt + f(u))
    # residual measured in the M-norm of the M^{-1}-scaled vector, relative to (M/dt) u
    Minv_r = spla.spsolve(sp.csc_matrix(disc.M_in), r)
    rel = np.sqrt(Minv_r @ (disc.M_in @ Minv_r)) / np.sqrt(u @ (disc.M_in @ u)) * dt
    assert res.converged and rel <= 10 * tol
