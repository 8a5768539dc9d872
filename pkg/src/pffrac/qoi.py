"""Boundary load, bulk energy, and crack energy of a converged step."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fespace as fe
from . import material as mat
from . import mesh as msh
from . import system as sys_


@dataclass
class QoiRecord:
    t: float               # s
    displacement: float    # imposed boundary value, mm
    f_x: float             # N
    f_y: float
    f_x_deg: float         # degraded-stress variant
    f_y_deg: float
    e_bulk: float          # N mm
    e_crack: float
    dofs: int
    eta: float = 0.0


def _top_side_strains(state: sys_.TimeStepState):
    """Strain and phase values at the Gauss points of each top side."""
    space = state.space
    rule = fe.side_rule()
    s = rule.points[:, 0]
    u_comp = space.cell_values(state.u.components())
    phi_cv = space.cell_values(state.phi.coeffs)
    _, _, hx, hy = space.geom
    for side in space.mesh.sides:
        if side.marker != msh.TOP:
            continue
        a = space.mesh.verts[side.v_lo]
        b = space.mesh.verts[side.v_hi]
        length = float(np.hypot(*(b - a)))
        cell, ref = fe.side_cell_refcoords(side, 0, s)
        pos = space.mesh.active_index[cell]
        g = fe.shape_grads(ref)
        gx = g[:, :, 0] / hx[pos]
        gy = g[:, :, 1] / hy[pos]
        uc = u_comp[pos]
        exx = gx @ uc[:, 0]
        eyy = gy @ uc[:, 1]
        exy = 0.5 * (gy @ uc[:, 0] + gx @ uc[:, 1])
        phi = fe.shape_values(ref) @ phi_cv[pos]
        yield rule.weights * length, exx, eyy, exy, phi


def load(state: sys_.TimeStepState, params: mat.MaterialParams):
    """Reaction (F_x, F_y) on the top boundary with the undegraded stress."""
    fx = fy = 0.0
    for w, exx, eyy, exy, _ in _top_side_strains(state):
        tr = exx + eyy
        sxy = 2 * params.mu * exy
        syy = 2 * params.mu * eyy + params.lam * tr
        fx += float(w @ sxy)
        fy += float(w @ syy)
    return fx, fy


def load_degraded(state: sys_.TimeStepState, params: mat.MaterialParams):
    """Same traction integral with g(phi) sigma+ + sigma-."""
    fx = fy = 0.0
    for w, exx, eyy, exy, phi in _top_side_strains(state):
        (spx, spy, spxy), (smx, smy, smxy) = mat.stress_split_batch(
            exx, eyy, exy, params)
        g, _ = mat.degradation(phi, params.kappa)
        fx += float(w @ (g * spxy + smxy))
        fy += float(w @ (g * spy + smy))
    return fx, fy


def _cell_fields(state: sys_.TimeStepState):
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
    pcv = space.cell_values(state.phi.coeffs)
    phi = np.einsum("qn,cn->cq", N, pcv)
    gpx = np.einsum("cqn,cn->cq", gx, pcv)
    gpy = np.einsum("cqn,cn->cq", gy, pcv)
    return w, exx, eyy, exy, phi, gpx, gpy


def bulk_energy(state: sys_.TimeStepState, params: mat.MaterialParams) -> float:
    w, exx, eyy, exy, phi, _, _ = _cell_fields(state)
    g, _ = mat.degradation(phi, params.kappa)
    tr = exx + eyy
    tr_e2 = exx * exx + eyy * eyy + 2 * exy * exy
    dens = g * params.mu * tr_e2 + 0.5 * params.lam * tr * tr
    return float((w * dens).sum())


def crack_energy(state: sys_.TimeStepState, params: mat.MaterialParams) -> float:
    w, _, _, _, phi, gpx, gpy = _cell_fields(state)
    dens = ((phi - 1.0) ** 2 / params.epsilon
            + params.epsilon * (gpx * gpx + gpy * gpy))
    return float(0.5 * params.g_c * (w * dens).sum())


def elastic_energy_assembled(state: sys_.TimeStepState,
                             params: mat.MaterialParams) -> float:
    """Cross-check: 1/2 <sigma(u), E(u)> with the undegraded stress."""
    w, exx, eyy, exy, _, _, _ = _cell_fields(state)
    tr = exx + eyy
    dens = (params.mu * (exx * exx + eyy * eyy + 2 * exy * exy)
            + 0.5 * params.lam * tr * tr)
    return float((w * dens).sum())
