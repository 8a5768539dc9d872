"""Residual-type a posteriori estimator for the phase-field inequality.

Per non-hanging node the estimator collects

  * eta1: weighted element residual over the patch,
  * eta2: weighted gradient jumps over the interior patch skeleton,
  * eta3: weighted boundary flux (slit faces count as boundary),
  * eta4: the constraining-force term on the shrunken corner patch,

with nodes classified as free, semi-contact, or full-contact.  Full-contact
nodes contribute nothing; semi-contact nodes contribute only eta4.  Nodes in
a strip below the top boundary can be excluded so the loading singularity
does not dominate the marking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fespace as fe
from . import material as mat
from . import mesh as msh
from . import system as sys_

FREE = 0
SEMI_CONTACT = 1
FULL_CONTACT = 2

TOL_CONTACT = 1e-8
TOL_SIGN = 1e-10


@dataclass
class NodeEstimates:
    """Per-DoF estimator data (arrays indexed like the scalar space)."""

    node_class: np.ndarray
    alpha: np.ndarray
    s_p: np.ndarray
    eta1: np.ndarray
    eta2: np.ndarray
    eta3: np.ndarray
    eta4: np.ndarray
    excluded: np.ndarray


@dataclass
class EstimatorReport:
    nodes: NodeEstimates
    eta1: float
    eta2: float
    eta3: float
    eta4: float
    eta: float
    cell_indicators: np.ndarray   # per active cell

    def node_eta(self) -> np.ndarray:
        n = self.nodes
        return np.sqrt(n.eta1 ** 2 + n.eta2 ** 2 + n.eta3 ** 2 + n.eta4 ** 2)


class _Geometry:
    """Mesh-only estimator structures, cached on the space."""

    def __init__(self, space: fe.ScalarSpace):
        mesh = space.mesh
        nca = len(space.conn_u)
        cd = space.corner_dofs
        ok = cd.reshape(-1) >= 0
        self.inc_cell = np.repeat(np.arange(nca), 4)[ok]
        self.inc_corner = np.tile(np.arange(4), nca)[ok]
        self.inc_dof = cd.reshape(-1)[ok]

        self.patch_count = np.zeros(space.ndof, dtype=np.int64)
        np.add.at(self.patch_count, self.inc_dof, 1)

        # hat values of the incidence dof at the 4 corners of its cell:
        # 1 at its own corner, 1/2 at hanging corners it masters
        ni = len(self.inc_dof)
        self.inc_hat = np.zeros((ni, 4))
        self.inc_hat[np.arange(ni), self.inc_corner] = 1.0
        hanging = mesh.hanging
        if hanging:
            # incidences are cell-major, so each cell's rows are contiguous
            starts = np.searchsorted(self.inc_cell, np.arange(nca))
            ends = np.searchsorted(self.inc_cell, np.arange(nca), side="right")
            conn = mesh.conn[mesh.active_cells]
            for c, j in zip(*np.nonzero(cd < 0)):
                a, b = hanging[int(conn[c, j])]
                for master in (a, b):
                    mdof = space.v2dof[master]
                    for i in range(starts[c], ends[c]):
                        if self.inc_dof[i] == mdof:
                            self.inc_hat[i, j] = 0.5

        # patch diameters: max pairwise distance among patch-cell corners
        x0, y0, hx, hy = space.geom
        corners = np.stack([
            np.stack((x0, y0), axis=1), np.stack((x0 + hx, y0), axis=1),
            np.stack((x0 + hx, y0 + hy), axis=1),
            np.stack((x0, y0 + hy), axis=1)], axis=1)   # (nca, 4, 2)
        pts = np.full((space.ndof, 16, 2), np.nan)
        slot = np.zeros(space.ndof, dtype=np.int64)
        order = np.argsort(self.inc_dof, kind="stable")
        for i in order:
            d = self.inc_dof[i]
            pts[d, 4 * slot[d]:4 * slot[d] + 4] = corners[self.inc_cell[i]]
            slot[d] += 1
        first = pts[:, 0:1, :]
        pts = np.where(np.isnan(pts), first, pts)
        diff = pts[:, :, None, :] - pts[:, None, :, :]
        self.h_p = np.sqrt((diff ** 2).sum(axis=3).max(axis=(1, 2)))

        # boundary-node mask
        self.boundary_node = np.zeros(space.ndof, dtype=bool)
        for v in mesh.vertex_markers:
            d = space.v2dof[v]
            if d >= 0:
                self.boundary_node[d] = True

        rule = fe.side_rule()
        s = rule.points[:, 0]
        self.side_w = rule.weights

        int_sides, bnd_sides = [], []
        for side in mesh.sides:
            if side.marker == msh.INTERIOR and len(side.adj) == 2:
                int_sides.append(side)
            elif side.marker != msh.INTERIOR:
                bnd_sides.append(side)

        def side_len_axis(side):
            a = mesh.verts[side.v_lo]
            b = mesh.verts[side.v_hi]
            horizontal = a[1] == b[1]
            return float(np.hypot(*(b - a))), (0 if horizontal else 1), a, b

        nsi = len(int_sides)
        self.is_cells = np.zeros((nsi, 2), dtype=np.int64)
        self.is_len = np.zeros(nsi)
        self.is_axis = np.zeros(nsi, dtype=np.int64)
        self.is_sign = np.zeros(nsi)
        self.is_ref = np.zeros((nsi, 2, len(s), 2))
        self.is_dofs = np.full((nsi, 2), -1, dtype=np.int64)
        for i, side in enumerate(int_sides):
            length, axis, a, b = side_len_axis(side)
            self.is_len[i] = length
            self.is_axis[i] = axis
            cells = []
            for k in range(2):
                cell, ref = fe.side_cell_refcoords(side, k, s)
                self.is_cells[i, k] = mesh.active_index[cell]
                self.is_ref[i, k] = ref
                cells.append(cell)
            x0, y0, hx, hy = space.geom
            pos0 = mesh.active_index[cells[0]]
            if axis == 0:  # horizontal side, normal along y
                c0 = y0[pos0] + 0.5 * hy[pos0]
                self.is_sign[i] = 1.0 if c0 < a[1] else -1.0
            else:
                c0 = x0[pos0] + 0.5 * hx[pos0]
                self.is_sign[i] = 1.0 if c0 < a[0] else -1.0
            both = set(mesh.conn[cells[0]]) & set(mesh.conn[cells[1]])
            dofs = [int(space.v2dof[v]) for v in (side.v_lo, side.v_hi)
                    if int(v) in both and space.v2dof[v] >= 0]
            for k, d in enumerate(dofs[:2]):
                self.is_dofs[i, k] = d

        nsb = len(bnd_sides)
        self.bs_cell = np.zeros(nsb, dtype=np.int64)
        self.bs_len = np.zeros(nsb)
        self.bs_axis = np.zeros(nsb, dtype=np.int64)
        self.bs_ref = np.zeros((nsb, len(s), 2))
        self.bs_dofs = np.full((nsb, 4), -1, dtype=np.int64)
        for i, side in enumerate(bnd_sides):
            length, axis, a, b = side_len_axis(side)
            self.bs_len[i] = length
            self.bs_axis[i] = axis
            cell, ref = fe.side_cell_refcoords(side, 0, s)
            pos = mesh.active_index[cell]
            self.bs_cell[i] = pos
            self.bs_ref[i] = ref
            for d in space.corner_dofs[pos]:
                if d >= 0 and self.boundary_node[d]:
                    free_slot = np.argmax(self.bs_dofs[i] < 0)
                    self.bs_dofs[i, free_slot] = d

        # reference shape values on the four corner quarter sub-rectangles
        # (two red refinements) used by the eta4 integral
        cr = fe.cell_rule()
        offsets = np.array([(0.0, 0.0), (0.75, 0.0), (0.75, 0.75),
                            (0.0, 0.75)])
        self.sub_shape = np.stack([
            fe.shape_values(offsets[k] + 0.25 * cr.points) for k in range(4)])
        self.sub_w = cr.weights


def _geometry(space: fe.ScalarSpace) -> _Geometry:
    geo = getattr(space, "_estimator_geometry", None)
    if geo is None:
        geo = _Geometry(space)
        space._estimator_geometry = geo
    return geo


def _cell_state(state: sys_.TimeStepState, params: mat.MaterialParams,
                source=None):
    """Quadrature-point residual/weight data for every active cell."""
    space = state.space
    rule = fe.cell_rule()
    N = fe.shape_values(rule.points)
    G = fe.shape_grads(rule.points)
    _, _, hx, hy = space.geom
    gx = G[None, :, :, 0] / hx[:, None, None]
    gy = G[None, :, :, 1] / hy[:, None, None]
    w = rule.weights[None, :] * (hx * hy)[:, None]
    ucv = space.cell_values(state.u.components())
    exx = np.einsum("cqn,cn->cq", gx, ucv[:, :, 0])
    eyy = np.einsum("cqn,cn->cq", gy, ucv[:, :, 1])
    exy = 0.5 * (np.einsum("cqn,cn->cq", gy, ucv[:, :, 0])
                 + np.einsum("cqn,cn->cq", gx, ucv[:, :, 1]))
    drive_q = mat.drive_batch(exx, eyy, exy, params)

    # strains at the cell corners for the alpha_p sampling
    refc = np.array([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)])
    Gc = fe.shape_grads(refc)
    gxc = Gc[None, :, :, 0] / hx[:, None, None]
    gyc = Gc[None, :, :, 1] / hy[:, None, None]
    cxx = np.einsum("cqn,cn->cq", gxc, ucv[:, :, 0])
    cyy = np.einsum("cqn,cn->cq", gyc, ucv[:, :, 1])
    cxy = 0.5 * (np.einsum("cqn,cn->cq", gyc, ucv[:, :, 0])
                 + np.einsum("cqn,cn->cq", gxc, ucv[:, :, 1]))
    drive_c = mat.drive_batch(cxx, cyy, cxy, params)

    phicv = space.cell_values(state.phi.coeffs)
    phi_q = np.einsum("qn,cn->cq", N, phicv)
    gc, eps, kap = params.g_c, params.epsilon, params.kappa
    r_q = gc / eps - (gc / eps) * phi_q - (1 - kap) * drive_q * phi_q
    if source is not None:
        xy = space.qp_coords
        r_q = r_q - source(xy[..., 0], xy[..., 1])
    weight_q = gc / eps + (1 - kap) * drive_q
    weight_c = gc / eps + (1 - kap) * drive_c
    return w, r_q, weight_q, weight_c, phicv


def element_residual(state, params, cell, ref, source=None) -> float:
    """Interior residual of the phase-field equation at one point.

    The Laplacian term vanishes identically for Q1 on rectangles.
    """
    space = state.space
    pos = space.mesh.active_index[cell]
    E = 0.5 * (state.u.grad(cell, ref) + state.u.grad(cell, ref).T)
    drive = float(np.tensordot(mat.stress_plus(E, params), E))
    phi = state.phi.eval(cell, ref)
    gc, eps, kap = params.g_c, params.epsilon, params.kappa
    r = gc / eps - (gc / eps) * phi - (1 - kap) * drive * phi
    if source is not None:
        x0, y0, hx, hy = space.geom
        x = x0[pos] + ref[0] * hx[pos]
        y = y0[pos] + ref[1] * hy[pos]
        r -= float(source(np.asarray(x), np.asarray(y)))
    return float(r)


def side_jump(state, params, side: msh.Side, point) -> float:
    """G_c eps [grad phi] across an interior side at a physical point."""
    if side.marker != msh.INTERIOR or len(side.adj) != 2:
        raise ValueError("side_jump requires an interior side")
    mesh = state.space.mesh
    a = mesh.verts[side.v_lo]
    b = mesh.verts[side.v_hi]
    length = float(np.hypot(*(b - a)))
    s = float(np.hypot(*(np.asarray(point, dtype=float) - a))) / length
    grads = []
    for k in range(2):
        cell, ref = fe.side_cell_refcoords(side, k, np.asarray([s]))
        grads.append(np.asarray(state.phi.grad(cell, ref[0])))
    if a[1] == b[1]:
        x0, y0, hx, hy = state.space.geom
        pos0 = mesh.active_index[side.adj[0][0]]
        n = np.array([0.0, 1.0 if y0[pos0] + 0.5 * hy[pos0] < a[1] else -1.0])
    else:
        x0, y0, hx, hy = state.space.geom
        pos0 = mesh.active_index[side.adj[0][0]]
        n = np.array([1.0 if x0[pos0] + 0.5 * hx[pos0] < a[0] else -1.0, 0.0])
    return params.g_c * params.epsilon * float((grads[0] - grads[1]) @ n)


def lumped_force(state: sys_.TimeStepState, space: fe.ScalarSpace) -> np.ndarray:
    """s_p = Lambda_p / patch mass of the hat function."""
    return state.lam / space.hat_masses


def _side_jumps(state, geo: _Geometry):
    """Signed jumps (nsides, nq) over the interior sides."""
    space = state.space
    phicv = space.cell_values(state.phi.coeffs)
    _, _, hx, hy = space.geom
    nsi = len(geo.is_len)
    if nsi == 0:
        return np.zeros((0, 2))
    normal_comp = []
    for k in range(2):
        cells = geo.is_cells[:, k]
        ref = geo.is_ref[:, k].reshape(-1, 2)
        G = fe.shape_grads(ref).reshape(nsi, -1, 4, 2)
        vals = phicv[cells]
        gx = np.einsum("sqn,sn->sq", G[..., 0], vals) / hx[cells][:, None]
        gy = np.einsum("sqn,sn->sq", G[..., 1], vals) / hy[cells][:, None]
        comp = np.where(geo.is_axis[:, None] == 0, gy, gx)
        normal_comp.append(comp)
    return (normal_comp[0] - normal_comp[1]) * geo.is_sign[:, None]


def _boundary_flux(state, geo: _Geometry, full_gradient: bool):
    """(G_c eps)^2-weighted squared boundary gradient integrand."""
    space = state.space
    phicv = space.cell_values(state.phi.coeffs)
    _, _, hx, hy = space.geom
    nsb = len(geo.bs_len)
    if nsb == 0:
        return np.zeros((0, 2))
    cells = geo.bs_cell
    ref = geo.bs_ref.reshape(-1, 2)
    G = fe.shape_grads(ref).reshape(nsb, -1, 4, 2)
    vals = phicv[cells]
    gx = np.einsum("sqn,sn->sq", G[..., 0], vals) / hx[cells][:, None]
    gy = np.einsum("sqn,sn->sq", G[..., 1], vals) / hy[cells][:, None]
    if full_gradient:
        return gx * gx + gy * gy
    comp = np.where(geo.bs_axis[:, None] == 0, gy, gx)
    return comp * comp


def classify_nodes(state, obstacle, space, params, tol_contact=TOL_CONTACT,
                   tol_sign=TOL_SIGN, source=None) -> np.ndarray:
    """Free / semi-contact / full-contact classification per DoF."""
    geo = _geometry(space)
    _, r_q, _, _, _ = _cell_state(state, params, source)
    return _classify(state, obstacle, space, geo, r_q, params, tol_contact,
                     tol_sign, source)


def _classify(state, obstacle, space, geo, r_q, params, tol_contact,
              tol_sign, source):
    contact = (obstacle.coeffs - state.phi.coeffs) <= tol_contact

    # contact must hold at every non-hanging node of the patch closure
    cell_contact = np.ones(len(space.conn_u), dtype=bool)
    cd = space.corner_dofs
    for j in range(4):
        ok = cd[:, j] >= 0
        cell_contact[ok] &= contact[cd[ok, j]]
    patch_contact = np.ones(space.ndof, dtype=bool)
    np.logical_and.at(patch_contact, geo.inc_dof,
                      cell_contact[geo.inc_cell])

    # interior residual must be (numerically) nonnegative on the patch
    cell_min_r = r_q.min(axis=1)
    patch_min_r = np.full(space.ndof, np.inf)
    np.minimum.at(patch_min_r, geo.inc_dof, cell_min_r[geo.inc_cell])

    # gradient jumps must be (numerically) nonpositive on the patch skeleton:
    # the constraining-force distribution -G_c eps [grad phi] must not pull up
    jumps = _side_jumps(state, geo)
    max_jump = np.full(space.ndof, -np.inf)
    side_max = jumps.max(axis=1) if len(jumps) else np.zeros(0)
    for k in range(2):
        ok = geo.is_dofs[:, k] >= 0
        np.maximum.at(max_jump, geo.is_dofs[ok, k], side_max[ok])

    full = (contact & patch_contact & (patch_min_r >= -tol_sign)
            & (max_jump <= tol_sign))
    cls = np.where(full, FULL_CONTACT,
                   np.where(contact, SEMI_CONTACT, FREE))
    return cls.astype(np.int8)


def estimate(state: sys_.TimeStepState, obstacle: fe.FeFunction,
             params: mat.MaterialParams, space: fe.ScalarSpace,
             strip: float = 0.0, source=None, tol_contact=TOL_CONTACT,
             tol_sign=TOL_SIGN, full_gradient=False) -> EstimatorReport:
    """Evaluate the estimator for one converged step."""
    geo = _geometry(space)
    gc, eps = params.g_c, params.epsilon
    w, r_q, weight_q, weight_c, phicv = _cell_state(state, params, source)

    cls = _classify(state, obstacle, space, geo, r_q, params, tol_contact,
                    tol_sign, source)

    # alpha_p: minimum of the reaction weight over patch samples
    cell_min_w = np.minimum(weight_q.min(axis=1), weight_c.min(axis=1))
    alpha = np.full(space.ndof, np.inf)
    np.minimum.at(alpha, geo.inc_dof, cell_min_w[geo.inc_cell])

    # ||r||^2 over patches
    cell_r2 = (w * r_q * r_q).sum(axis=1)
    norm_r2 = np.zeros(space.ndof)
    np.add.at(norm_r2, geo.inc_dof, cell_r2[geo.inc_cell])

    # jump and boundary-flux norms per node
    jumps = _side_jumps(state, geo)
    jump2 = np.zeros(space.ndof)
    if len(jumps):
        side_int = (gc * eps) ** 2 * (geo.side_w[None, :] * jumps ** 2).sum(
            axis=1) * geo.is_len
        for k in range(2):
            ok = geo.is_dofs[:, k] >= 0
            np.add.at(jump2, geo.is_dofs[ok, k], side_int[ok])
    bnd2 = np.zeros(space.ndof)
    flux2 = _boundary_flux(state, geo, full_gradient)
    if len(flux2):
        side_int = (gc * eps) ** 2 * (geo.side_w[None, :] * flux2).sum(
            axis=1) * geo.bs_len
        for k in range(4):
            ok = geo.bs_dofs[:, k] >= 0
            np.add.at(bnd2, geo.bs_dofs[ok, k], side_int[ok])

    s_p = lumped_force(state, space)

    # eta4 radicand: integral of (obstacle - phi) hat_p over the shrunken
    # corner patch (two red refinements)
    diff_cv = space.cell_values(obstacle.coeffs - state.phi.coeffs)
    areas = space.areas
    i4 = np.zeros(space.ndof)
    dvals = diff_cv[geo.inc_cell]                       # (ni, 4)
    sub = geo.sub_shape[geo.inc_corner]                 # (ni, nq, 4)
    dq = np.einsum("iqn,in->iq", sub, dvals)
    hq = np.einsum("iqn,in->iq", sub, geo.inc_hat)
    inc_int = (areas[geo.inc_cell] / 16.0) * np.einsum(
        "q,iq->i", geo.sub_w, dq * hq)
    np.add.at(i4, geo.inc_dof, inc_int)

    w_p = np.minimum(geo.h_p / np.sqrt(gc * eps), alpha ** -0.5)
    not_full = cls != FULL_CONTACT
    semi = cls == SEMI_CONTACT
    interior = ~geo.boundary_node
    eta1 = np.where(not_full, w_p * np.sqrt(norm_r2), 0.0)
    eta2 = np.where(not_full & interior,
                    np.sqrt(w_p) * (gc * eps) ** -0.25 * np.sqrt(jump2), 0.0)
    eta3 = np.where(not_full & geo.boundary_node,
                    np.sqrt(w_p) * (gc * eps) ** -0.25 * np.sqrt(bnd2), 0.0)
    eta4 = np.where(semi, np.sqrt(np.maximum(s_p * i4, 0.0)), 0.0)

    coords = space.dof_coords()
    if strip > 0:
        excluded = coords[:, 1] >= msh.DOMAIN_SIZE - strip
    else:
        excluded = np.zeros(space.ndof, dtype=bool)
    for arr in (eta1, eta2, eta3, eta4):
        arr[excluded] = 0.0

    nodes = NodeEstimates(cls, alpha, s_p, eta1, eta2, eta3, eta4, excluded)
    g1 = float(np.sqrt((eta1 ** 2).sum()))
    g2 = float(np.sqrt((eta2 ** 2).sum()))
    g3 = float(np.sqrt((eta3 ** 2).sum()))
    g4 = float(np.sqrt((eta4 ** 2).sum()))

    node_sq = eta1 ** 2 + eta2 ** 2 + eta3 ** 2 + eta4 ** 2
    indicators = np.zeros(len(space.conn_u))
    np.add.at(indicators, geo.inc_cell,
              node_sq[geo.inc_dof] / geo.patch_count[geo.inc_dof])

    return EstimatorReport(nodes, g1, g2, g3, g4, g1 + g2 + g3 + g4,
                           indicators)


def eta_node(state, obstacle, params, node: int, strip: float = 0.0,
             source=None):
    """(eta1, eta2, eta3, eta4) contributions of one DoF."""
    rep = estimate(state, obstacle, params, state.space, strip, source)
    n = rep.nodes
    return (float(n.eta1[node]), float(n.eta2[node]),
            float(n.eta3[node]), float(n.eta4[node]))


def energy_norm(f: fe.FeFunction, state: sys_.TimeStepState,
                params: mat.MaterialParams) -> float:
    """|| f ||_eps with the reaction weight evaluated from the state's u."""
    space = f.space
    rule = fe.cell_rule()
    N = fe.shape_values(rule.points)
    G = fe.shape_grads(rule.points)
    _, _, hx, hy = space.geom
    gx = G[None, :, :, 0] / hx[:, None, None]
    gy = G[None, :, :, 1] / hy[:, None, None]
    w = rule.weights[None, :] * (hx * hy)[:, None]
    ucv = space.cell_values(state.u.components())
    exx = np.einsum("cqn,cn->cq", gx, ucv[:, :, 0])
    eyy = np.einsum("cqn,cn->cq", gy, ucv[:, :, 1])
    exy = 0.5 * (np.einsum("cqn,cn->cq", gy, ucv[:, :, 0])
                 + np.einsum("cqn,cn->cq", gx, ucv[:, :, 1]))
    weight = params.g_c / params.epsilon + (1 - params.kappa) * mat.drive_batch(
        exx, eyy, exy, params)
    fcv = space.cell_values(f.coeffs)
    fq = np.einsum("qn,cn->cq", N, fcv)
    fgx = np.einsum("cqn,cn->cq", gx, fcv)
    fgy = np.einsum("cqn,cn->cq", gy, fcv)
    val = (w * (params.g_c * params.epsilon * (fgx ** 2 + fgy ** 2)
                + weight * fq ** 2)).sum()
    return float(np.sqrt(val))
