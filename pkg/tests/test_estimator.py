import numpy as np
import pytest

from pffrac import estimator as est
from pffrac import fespace as fe
from pffrac import material as mat
from pffrac import mesh as m
from pffrac import newton as nt
from pffrac import system as sys_


PARAMS = mat.MaterialParams(mu=8.077e4, lam=1.2115e5, g_c=2.7, kappa=1e-10,
                            epsilon=0.625)


@pytest.fixture(scope="module")
def uspace():
    return fe.ScalarSpace(m.uniform_refine(m.coarse_mesh(), 1))  # h = 1.25


def make_state(space, u=None, phi=None, lam=None):
    u = np.zeros(2 * space.ndof) if u is None else u
    phi = np.ones(space.ndof) if phi is None else phi
    lam = np.zeros(space.ndof) if lam is None else lam
    return sys_.TimeStepState(fe.VectorFeFunction(space, u),
                              fe.FeFunction(space, phi), lam, 0.0)


def interior_dof(space, x, y):
    xy = space.dof_coords()
    return int(np.flatnonzero((xy[:, 0] == x) & (xy[:, 1] == y))[0])


def test_element_residual_values(uspace):
    cell = int(uspace.mesh.active_cells[0])
    state = make_state(uspace)
    assert est.element_residual(state, PARAMS, cell, (0.3, 0.4)) == \
        pytest.approx(0.0, abs=1e-12)
    state.phi.coeffs[:] = 0.0
    assert est.element_residual(state, PARAMS, cell, (0.3, 0.4)) == \
        pytest.approx(PARAMS.g_c / PARAMS.epsilon)


def test_element_residual_with_strain(uspace):
    a = 1e-3
    xy = uspace.dof_coords()
    u = np.stack((a * xy[:, 0], a * xy[:, 1]), axis=1).reshape(-1)
    state = make_state(uspace, u=u)
    q = 4 * a ** 2 * (PARAMS.mu + PARAMS.lam)   # sigma+ : E for E = a*I
    cell = int(uspace.mesh.active_cells[5])
    r = est.element_residual(state, PARAMS, cell, (0.5, 0.5))
    assert r == pytest.approx(-(1 - PARAMS.kappa) * q, rel=1e-10)


def test_side_jump_linear_is_zero(uspace):
    xy = uspace.dof_coords()
    state = make_state(uspace, phi=0.01 * xy[:, 0] - 0.02 * xy[:, 1] + 0.5)
    for side in uspace.mesh.sides:
        if side.marker == m.INTERIOR and len(side.adj) == 2:
            a = uspace.mesh.verts[side.v_lo]
            b = uspace.mesh.verts[side.v_hi]
            mid = 0.5 * (a + b)
            assert est.side_jump(state, PARAMS, side, mid) == \
                pytest.approx(0.0, abs=1e-12)


def test_side_jump_hat_magnitude(uspace):
    h = 1.25
    p = interior_dof(uspace, 2.5, 2.5)
    phi = np.zeros(uspace.ndof)
    phi[p] = 1.0
    state = make_state(uspace, phi=phi)
    # side opposite p in the patch cell [2.5,5]x[2.5,3.75]: at its endpoint
    # on the patch boundary the one-sided hat gradient is 1/h
    target = None
    for side in uspace.mesh.sides:
        a = uspace.mesh.verts[side.v_lo]
        b = uspace.mesh.verts[side.v_hi]
        if (a[0] == 3.75 and b[0] == 3.75 and a[1] == 2.5 and b[1] == 3.75
                and side.marker == m.INTERIOR):
            target = side
    assert target is not None
    jump = est.side_jump(state, PARAMS, target, (3.75, 2.5))
    assert abs(jump) == pytest.approx(PARAMS.g_c * PARAMS.epsilon / h,
                                      rel=1e-12)


def test_side_jump_rejects_boundary(uspace):
    state = make_state(uspace)
    bside = next(s for s in uspace.mesh.sides if s.marker != m.INTERIOR)
    with pytest.raises(ValueError):
        est.side_jump(state, PARAMS, bside, uspace.mesh.verts[bside.v_lo])


def test_lumped_force(uspace):
    h = 1.25
    p = interior_dof(uspace, 5.0, 2.5)
    lam = np.zeros(uspace.ndof)
    lam[p] = h * h
    state = make_state(uspace, lam=lam)
    s_p = est.lumped_force(state, uspace)
    assert s_p[p] == pytest.approx(1.0)
    assert np.count_nonzero(s_p) == 1


def test_classify_all_free(uspace):
    state = make_state(uspace, phi=np.full(uspace.ndof, 0.5))
    ob = sys_.initial_phase(uspace)
    cls = est.classify_nodes(state, ob, uspace, PARAMS)
    assert np.all(cls == est.FREE)


def test_classify_all_full_contact(uspace):
    state = make_state(uspace, phi=np.full(uspace.ndof, 0.5))
    ob = fe.FeFunction(uspace, np.full(uspace.ndof, 0.5))
    cls = est.classify_nodes(state, ob, uspace, PARAMS)
    assert np.all(cls == est.FULL_CONTACT)


def test_classify_single_semi_contact(uspace):
    p = interior_dof(uspace, 2.5, 5.0)
    phi = np.full(uspace.ndof, 0.9)
    phi[p] = 1.0
    state = make_state(uspace, phi=phi)
    ob = sys_.initial_phase(uspace)
    cls = est.classify_nodes(state, ob, uspace, PARAMS)
    assert cls[p] == est.SEMI_CONTACT
    assert np.count_nonzero(cls == est.SEMI_CONTACT) == 1
    assert np.all(cls[np.arange(uspace.ndof) != p] == est.FREE)


def test_eta_zero_at_undamaged_equilibrium(uspace):
    state = make_state(uspace)
    ob = sys_.initial_phase(uspace)
    rep = est.estimate(state, ob, PARAMS, uspace)
    assert rep.eta == pytest.approx(0.0, abs=1e-10)
    assert np.all(rep.cell_indicators == 0.0)
    assert np.all(rep.nodes.node_class == est.FULL_CONTACT)


def test_eta1_free_node_formula(uspace):
    h = 1.25
    state = make_state(uspace, phi=np.zeros(uspace.ndof))
    ob = sys_.initial_phase(uspace)
    p = interior_dof(uspace, 2.5, 2.5)
    e1, e2, e3, e4 = est.eta_node(state, ob, PARAMS, p)
    gc, eps = PARAMS.g_c, PARAMS.epsilon
    h_p = 2 * np.sqrt(2) * h
    w_p = min(h_p / np.sqrt(gc * eps), (gc / eps) ** -0.5)
    assert e1 == pytest.approx(w_p * (gc / eps) * 2 * h, rel=1e-12)
    assert e2 == 0.0 and e3 == 0.0 and e4 == 0.0  # constant phi, free node


def test_eta4_zero_for_noncontact(uspace):
    state = make_state(uspace, phi=np.full(uspace.ndof, 0.5),
                       lam=np.full(uspace.ndof, 0.1))
    ob = sys_.initial_phase(uspace)
    rep = est.estimate(state, ob, PARAMS, uspace)
    assert np.all(rep.nodes.eta4 == 0.0)


def test_full_strip_kills_estimator(uspace):
    rng = np.random.default_rng(0)
    state = make_state(uspace, u=1e-3 * rng.normal(size=2 * uspace.ndof),
                       phi=rng.uniform(0.1, 0.9, uspace.ndof))
    ob = sys_.initial_phase(uspace)
    rep = est.estimate(state, ob, PARAMS, uspace, strip=10.0)
    assert rep.eta == 0.0
    assert np.all(rep.cell_indicators == 0.0)


def test_global_etas_aggregate_node_squares(uspace):
    rng = np.random.default_rng(5)
    state = make_state(uspace, u=1e-3 * rng.normal(size=2 * uspace.ndof),
                       phi=rng.uniform(0.3, 1.0, uspace.ndof))
    ob = sys_.initial_phase(uspace)
    rep = est.estimate(state, ob, PARAMS, uspace)
    n = rep.nodes
    assert rep.eta1 == pytest.approx(np.sqrt((n.eta1 ** 2).sum()))
    assert rep.eta4 == pytest.approx(np.sqrt((n.eta4 ** 2).sum()))
    assert rep.eta == pytest.approx(rep.eta1 + rep.eta2 + rep.eta3 + rep.eta4)
    assert np.all(n.alpha >= PARAMS.g_c / PARAMS.epsilon - 1e-12)


def test_indicators_match_definition(uspace):
    rng = np.random.default_rng(1)
    state = make_state(uspace, u=1e-3 * rng.normal(size=2 * uspace.ndof),
                       phi=rng.uniform(0.3, 1.0, uspace.ndof))
    ob = sys_.initial_phase(uspace)
    rep = est.estimate(state, ob, PARAMS, uspace)
    n = rep.nodes
    sq = n.eta1 ** 2 + n.eta2 ** 2 + n.eta3 ** 2 + n.eta4 ** 2
    mesh = uspace.mesh
    expect = np.zeros(len(mesh.active_cells))
    for i, c in enumerate(mesh.active_cells):
        for v in mesh.conn[c]:
            d = uspace.v2dof[v]
            if d >= 0:
                patch = len(mesh.patch_of(int(v)).cells)
                expect[i] += sq[d] / patch
    assert np.allclose(rep.cell_indicators, expect, rtol=1e-12, atol=1e-15)
    assert rep.cell_indicators.sum() == pytest.approx(sq.sum())


def test_node_group_invariants(uspace):
    # eta4 only at semi-contact nodes; full-contact nodes contribute nothing
    rng = np.random.default_rng(2)
    phi = rng.uniform(0.5, 1.0, uspace.ndof)
    phi[::3] = 1.0   # put a third of the nodes in contact
    state = make_state(uspace, u=1e-3 * rng.normal(size=2 * uspace.ndof),
                       phi=phi, lam=np.abs(rng.normal(size=uspace.ndof)))
    ob = sys_.initial_phase(uspace)
    rep = est.estimate(state, ob, PARAMS, uspace)
    n = rep.nodes
    not_semi = n.node_class != est.SEMI_CONTACT
    assert np.all(n.eta4[not_semi] == 0)
    full = n.node_class == est.FULL_CONTACT
    for arr in (n.eta1, n.eta2, n.eta3, n.eta4):
        assert np.all(arr[full] == 0)


def test_energy_norm_values():
    space = fe.ScalarSpace(m.uniform_refine(m.coarse_mesh(), 1))
    unit = mat.MaterialParams(mu=1.0, lam=1.0, g_c=1.0, kappa=1e-10,
                              epsilon=1.0)
    state = make_state(space)
    zero = fe.FeFunction(space, np.zeros(space.ndof))
    assert est.energy_norm(zero, state, unit) == 0.0
    one = fe.FeFunction(space, np.ones(space.ndof))
    assert est.energy_norm(one, state, PARAMS) == pytest.approx(
        np.sqrt(PARAMS.g_c / PARAMS.epsilon * 100), rel=1e-12)
    xy = space.dof_coords()
    fx = fe.FeFunction(space, xy[:, 0])
    assert est.energy_norm(fx, state, unit) == pytest.approx(
        np.sqrt(100 + 1e4 / 3), rel=1e-12)


def test_eta_scales_with_sqrt_gc():
    # common rescaling of G_c and the manufactured source leaves the
    # discrete solution unchanged and scales every eta by sqrt(factor)
    space = fe.ScalarSpace(m.uniform_refine(m.coarse_mesh(), 1))
    reports = []
    for factor in (1.0, 4.0):
        prm = mat.MaterialParams(mu=8.077e4, lam=1.2115e5, g_c=2.7 * factor,
                                 kappa=1e-10, epsilon=0.625)

        def source(x, y, _s=factor):
            return _s * 0.4 * np.cos(np.pi * x / 10)

        bc = fe.dirichlet_dofs(space, "shear", 0.0)
        huge = fe.FeFunction(space, np.full(space.ndof, 1e9))
        guess = make_state(space)
        guess.u.coeffs[:] = nt.impose_dirichlet(guess.u.coeffs, bc)
        out, _ = nt.solve_timestep(guess, huge, prm, nt.NewtonConfig(), bc,
                                   source=source, lag=sys_.initial_phase(space))
        reports.append(est.estimate(out, huge, prm, space, source=source))
    r1, r4 = reports
    assert r4.eta1 == pytest.approx(2 * r1.eta1, rel=1e-6)
    assert r4.eta2 == pytest.approx(2 * r1.eta2, rel=1e-6)
    assert r4.eta3 == pytest.approx(2 * r1.eta3, rel=1e-6)
