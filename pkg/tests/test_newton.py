import numpy as np
import pytest
import scipy.sparse as sp

from pffrac import fespace as fe
from pffrac import material as mat
from pffrac import mesh as m
from pffrac import newton as nt
from pffrac import system as sys_


PARAMS = mat.MaterialParams(mu=8.077e4, lam=1.2115e5, g_c=2.7, kappa=1e-10,
                            epsilon=1.25)


def shear_setup(refines=1):
    space = fe.ScalarSpace(m.uniform_refine(m.coarse_mesh(), refines))
    state = sys_.TimeStepState(
        fe.VectorFeFunction(space, np.zeros(2 * space.ndof)),
        sys_.initial_phase(space), np.zeros(space.ndof), 0.0)
    return space, state


def test_config_validation():
    with pytest.raises(ValueError):
        nt.NewtonConfig(rho=1.5)
    with pytest.raises(ValueError):
        nt.NewtonConfig(tol_abs=0.0)


def test_linear_solve_identity_and_2x2():
    b = np.array([3.0, 3.0])
    assert np.allclose(nt.linear_solve(sp.eye(2, format="csc"), b), b)
    A = sp.csc_matrix(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert np.allclose(nt.linear_solve(A, b), [1.0, 1.0])


def test_linear_solve_random_spd_matches_dense():
    rng = np.random.default_rng(8)
    B = rng.normal(size=(50, 50))
    A = B @ B.T + 50 * np.eye(50)
    b = rng.normal(size=50)
    x = nt.linear_solve(sp.csc_matrix(A), b)
    assert np.abs(x - np.linalg.solve(A, b)).max() < 1e-10 * np.abs(x).max()


def test_linear_solve_singular_raises():
    A = sp.csc_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(nt.LinearSolveError):
        nt.linear_solve(A, np.ones(2))


def test_exact_initial_guess_returns_input():
    space, state = shear_setup()
    bc = fe.dirichlet_dofs(space, "shear", 0.0)
    out, log = nt.solve_timestep(state, sys_.initial_phase(space), PARAMS,
                                 nt.NewtonConfig(), bc)
    assert log.iterations == 0
    assert log.converged
    assert np.array_equal(out.phi.coeffs, state.phi.coeffs)


def test_linear_problem_single_full_step():
    # u locked at zero, inactive obstacle: the phase-field block is linear,
    # so Newton converges with one full step from a random start
    space, state = shear_setup()
    rng = np.random.default_rng(5)
    state.phi.coeffs[:] = rng.uniform(0.2, 0.8, size=space.ndof)
    huge = fe.FeFunction(space, np.full(space.ndof, 1e9))
    bc = fe.dirichlet_dofs(space, "shear", 0.0)
    out, log = nt.solve_timestep(state, huge, PARAMS, nt.NewtonConfig(), bc,
                                 lag=sys_.initial_phase(space))
    assert log.iterations == 1
    assert log.records[0].s == 1.0
    assert np.allclose(out.phi.coeffs, 1.0, atol=1e-10)


def test_one_dof_complementarity():
    c = 1.0

    def residual(x):
        arg = x[0] + c * (1.0 - x[0])
        return np.array([x[0] - max(0.0, arg)])

    def jacobian(x):
        arg = x[0] + c * (1.0 - x[0])
        d = 1.0 - (1.0 - c) if arg > 0 else 1.0
        return sp.csc_matrix([[d]])

    x, log = nt.newton_solve(residual, jacobian, np.zeros(1),
                             nt.NewtonConfig())
    assert x[0] == pytest.approx(1.0, abs=1e-12)
    assert log.iterations <= 2


def test_unconstrained_solve_has_zero_multiplier():
    space, state = shear_setup()
    t = 1e-3
    bc = fe.dirichlet_dofs(space, "shear", t)
    state.u.coeffs[:] = nt.impose_dirichlet(state.u.coeffs, bc)
    state.t = t
    huge = fe.FeFunction(space, np.full(space.ndof, 1e9))
    out, log = nt.solve_timestep(state, huge, PARAMS, nt.NewtonConfig(), bc,
                                 lag=sys_.initial_phase(space))
    assert log.converged
    assert np.all(out.lam == 0.0)
    assert out.phi.coeffs.min() < 1.0 - 1e-6  # load damages the field
    norms = [r.norm for r in log.records]
    assert all(b < a for a, b in zip(norms, norms[1:]))


def test_constrained_step_satisfies_kkt():
    space, state = shear_setup()
    cfg = nt.NewtonConfig()
    ob1 = sys_.initial_phase(space)
    t1 = 2e-3
    bc1 = fe.dirichlet_dofs(space, "shear", t1)
    state.u.coeffs[:] = nt.impose_dirichlet(state.u.coeffs, bc1)
    state.t = t1
    s1, _ = nt.solve_timestep(state, ob1, PARAMS, cfg, bc1)
    # second step with a *smaller* load: the unconstrained solution would
    # heal, so the interpolated previous field becomes a binding obstacle
    t2 = 1e-3
    ob2 = sys_.obstacle_from_previous(s1.phi, space)
    bc2 = fe.dirichlet_dofs(space, "shear", t2)
    guess = sys_.TimeStepState(
        fe.VectorFeFunction(space, nt.impose_dirichlet(s1.u.coeffs, bc2)),
        fe.FeFunction(space, ob2.coeffs.copy()), s1.lam.copy(), t2)
    s2, log = nt.solve_timestep(guess, ob2, PARAMS, cfg, bc2)
    assert log.converged
    neg, viol, comp = sys_.kkt_violations(s2, ob2)
    tol_kkt = 10 * cfg.tol_abs
    assert neg <= tol_kkt
    assert viol <= tol_kkt
    assert comp <= tol_kkt
    assert s2.lam.max() > 0  # something actually binds


def test_active_set_stable_at_convergence():
    space, state = shear_setup()
    cfg = nt.NewtonConfig()
    t = 2e-3
    bc = fe.dirichlet_dofs(space, "shear", t)
    state.u.coeffs[:] = nt.impose_dirichlet(state.u.coeffs, bc)
    s1, _ = nt.solve_timestep(state, sys_.initial_phase(space), PARAMS,
                              cfg, bc)
    ob2 = sys_.obstacle_from_previous(s1.phi, space)
    guess = sys_.TimeStepState(
        fe.VectorFeFunction(space, s1.u.coeffs.copy()),
        fe.FeFunction(space, ob2.coeffs.copy()), s1.lam.copy(), t)
    s2, log = nt.solve_timestep(guess, ob2, PARAMS, cfg, bc)
    c = PARAMS.g_c / PARAMS.epsilon
    system = sys_.StepSystem(space, ob2, PARAMS, c, bc)
    n_active = int(np.count_nonzero(system.active_set(s2.pack())))
    assert n_active == log.records[-1].n_active
