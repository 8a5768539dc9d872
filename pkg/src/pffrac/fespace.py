"""Q1 finite element spaces with hanging-node constraints.

Degrees of freedom live on the non-hanging vertices used by active cells.
A hanging vertex carries no DoF; its value is half the sum of the two edge
endpoints, folded into evaluation and assembly through a sparse constraint
matrix, so the discrete space is exactly conforming.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import mesh as msh

_G = 0.5 / np.sqrt(3.0)


@dataclass(frozen=True)
class QuadratureRule:
    """Points and weights on the reference square [0,1]^2 (or [0,1] line)."""

    points: np.ndarray
    weights: np.ndarray


def cell_rule() -> QuadratureRule:
    """Tensor 2x2 Gauss rule, exact for bi-cubic polynomials."""
    g = np.array([0.5 - _G, 0.5 + _G])
    pts = np.array([(x, y) for y in g for x in g])
    return QuadratureRule(pts, np.full(4, 0.25))


def side_rule() -> QuadratureRule:
    """Two-point Gauss rule on [0,1]."""
    g = np.array([[0.5 - _G], [0.5 + _G]])
    return QuadratureRule(g, np.full(2, 0.5))


def shape_values(ref: np.ndarray) -> np.ndarray:
    """Bilinear shape functions at reference points, (npts, 4)."""
    x, y = ref[:, 0], ref[:, 1]
    return np.stack(((1 - x) * (1 - y), x * (1 - y), x * y, (1 - x) * y),
                    axis=1)


def shape_grads(ref: np.ndarray) -> np.ndarray:
    """Reference gradients of the shape functions, (npts, 4, 2)."""
    x, y = ref[:, 0], ref[:, 1]
    out = np.empty((len(ref), 4, 2))
    out[:, 0, 0], out[:, 0, 1] = -(1 - y), -(1 - x)
    out[:, 1, 0], out[:, 1, 1] = (1 - y), -x
    out[:, 2, 0], out[:, 2, 1] = y, x
    out[:, 3, 0], out[:, 3, 1] = -y, 1 - x
    return out


class ScalarSpace:
    """Scalar Q1 space on a mesh; immutable, caches geometry lazily."""

    def __init__(self, mesh: msh.Mesh):
        self.mesh = mesh
        used = mesh.used_vertices
        self.vused = used
        self.v2u = np.full(mesh.n_vertices, -1, dtype=np.int64)
        self.v2u[used] = np.arange(len(used))
        hanging = mesh.hanging
        dof_vertex = np.asarray([v for v in used if int(v) not in hanging],
                                dtype=np.int64)
        self.dof_vertex = dof_vertex
        self.v2dof = np.full(mesh.n_vertices, -1, dtype=np.int64)
        self.v2dof[dof_vertex] = np.arange(len(dof_vertex))
        self.ndof = len(dof_vertex)

        rows, cols, vals = [], [], []
        for u_row, v in enumerate(used):
            v = int(v)
            if v in hanging:
                a, b = hanging[v]
                for master in (a, b):
                    if self.v2dof[master] < 0:
                        raise msh.MeshError(
                            "hanging vertex constrained by a hanging vertex")
                    rows.append(u_row)
                    cols.append(self.v2dof[master])
                    vals.append(0.5)
            else:
                rows.append(u_row)
                cols.append(self.v2dof[v])
                vals.append(1.0)
        self.C = sp.csr_matrix((vals, (rows, cols)),
                               shape=(len(used), self.ndof))
        self.Ct = self.C.T.tocsr()
        # active-cell connectivity in used-vertex rows
        self.conn_u = self.v2u[mesh.conn[mesh.active_cells]]

    # geometry ---------------------------------------------------------
    @cached_property
    def geom(self):
        return self.mesh.cell_geom

    @cached_property
    def areas(self) -> np.ndarray:
        _, _, hx, hy = self.geom
        return hx * hy

    @cached_property
    def qp_coords(self) -> np.ndarray:
        """Physical coordinates of the 2x2 Gauss points, (ncells, 4, 2)."""
        x0, y0, hx, hy = self.geom
        r = cell_rule().points
        xs = x0[:, None] + r[None, :, 0] * hx[:, None]
        ys = y0[:, None] + r[None, :, 1] * hy[:, None]
        return np.stack((xs, ys), axis=2)

    @cached_property
    def corner_dofs(self) -> np.ndarray:
        """DoF index per active-cell corner, -1 where the corner hangs."""
        return self.v2dof[self.mesh.conn[self.mesh.active_cells]]

    # values -----------------------------------------------------------
    def vertex_values(self, coeffs: np.ndarray) -> np.ndarray:
        """Values at all used vertices, hanging constraints applied."""
        return self.C @ coeffs

    def cell_values(self, coeffs: np.ndarray) -> np.ndarray:
        """Corner values per active cell, (ncells, 4) or (ncells, 4, k)."""
        return self.vertex_values(coeffs)[self.conn_u]

    @cached_property
    def hat_masses(self) -> np.ndarray:
        """Integral of each constrained hat function over its own patch."""
        nca = len(self.conn_u)
        R = self.C[self.conn_u.reshape(-1)]
        T = sp.csr_matrix(
            (np.ones(4 * nca), (np.repeat(np.arange(nca), 4),
                                np.arange(4 * nca))),
            shape=(nca, 4 * nca))
        S = T @ R  # S[c, p] = sum of hat p over the corners of cell c
        flat = self.corner_dofs.reshape(-1)
        ok = flat >= 0
        P = sp.csr_matrix(
            (np.ones(ok.sum()), (np.repeat(np.arange(nca), 4)[ok], flat[ok])),
            shape=(nca, self.ndof))
        P.data[:] = 1.0
        masses = (P.multiply(S)).T @ (self.areas / 4.0)
        return np.asarray(masses).ravel()

    def dof_coords(self) -> np.ndarray:
        return self.mesh.verts[self.dof_vertex]


@dataclass
class FeFunction:
    """Scalar Q1 field: one coefficient per DoF."""

    space: ScalarSpace
    coeffs: np.ndarray

    def eval(self, cell: int, ref) -> float:
        pos = self.space.mesh.active_index[cell]
        vals = self.space.cell_values(self.coeffs)[pos]
        n = shape_values(np.asarray([ref], dtype=float))[0]
        return float(n @ vals)

    def grad(self, cell: int, ref):
        pos = self.space.mesh.active_index[cell]
        vals = self.space.cell_values(self.coeffs)[pos]
        g = shape_grads(np.asarray([ref], dtype=float))[0]
        _, _, hx, hy = self.space.geom
        return (float(g[:, 0] @ vals) / hx[pos], float(g[:, 1] @ vals) / hy[pos])


@dataclass
class VectorFeFunction:
    """Displacement field; coefficients interleaved (x0, y0, x1, y1, ...)."""

    space: ScalarSpace
    coeffs: np.ndarray

    def components(self) -> np.ndarray:
        return self.coeffs.reshape(-1, 2)

    def eval(self, cell: int, ref) -> np.ndarray:
        pos = self.space.mesh.active_index[cell]
        vals = self.space.cell_values(self.components())[pos]
        n = shape_values(np.asarray([ref], dtype=float))[0]
        return n @ vals

    def grad(self, cell: int, ref) -> np.ndarray:
        """Jacobian du_i/dx_j as a (2, 2) array."""
        pos = self.space.mesh.active_index[cell]
        vals = self.space.cell_values(self.components())[pos]
        g = shape_grads(np.asarray([ref], dtype=float))[0]
        _, _, hx, hy = self.space.geom
        out = np.empty((2, 2))
        out[:, 0] = (vals * g[:, 0:1]).sum(axis=0) / hx[pos]
        out[:, 1] = (vals * g[:, 1:2]).sum(axis=0) / hy[pos]
        return out


def eval_at_points(f, points: np.ndarray, hints=None) -> np.ndarray:
    """Point evaluation of a (possibly vector) FE function, slit-aware."""
    space = f.space
    cells, ref = space.mesh.locate_many(points, hints)
    pos = space.mesh.active_index[cells]
    n = shape_values(ref)
    if isinstance(f, VectorFeFunction):
        vals = space.cell_values(f.components())[pos]
        return np.einsum("pk,pki->pi", n, vals)
    vals = space.cell_values(f.coeffs)[pos]
    return np.einsum("pk,pk->p", n, vals)


def interpolate_nodal(f, target: ScalarSpace):
    """Nodal interpolation onto another mesh of the same coarse family.

    Each target DoF takes the point value of the source at that vertex;
    vertices on a slit face evaluate on their own side of the slit.
    """
    if f.space is target or f.space.mesh is target.mesh:
        cls = VectorFeFunction if isinstance(f, VectorFeFunction) else FeFunction
        return cls(target, f.coeffs.copy())
    pts = target.dof_coords()
    hints = target.mesh.vert_face[target.dof_vertex]
    vals = eval_at_points(f, pts, hints)
    if isinstance(f, VectorFeFunction):
        return VectorFeFunction(target, vals.reshape(-1))
    return FeFunction(target, vals)


def dirichlet_dofs(space: ScalarSpace, scenario, t: float) -> dict:
    """Displacement boundary values at time t, as {2*dof + comp: value}.

    shear:   bottom clamped; top slides in x with speed 1 mm/s (u_y = 0);
             left, right and the lower slit face keep u_y = 0.
    tension: bottom holds u_y = 0; top holds u_x = 0 and pulls in y with
             speed 1 mm/s.
    """
    name = getattr(scenario, "name", scenario)
    markers = space.mesh.vertex_markers
    out: dict = {}

    def set_comp(dof, comp, val):
        out[2 * dof + comp] = val

    for dof, v in enumerate(space.dof_vertex):
        mk = markers.get(int(v))
        if not mk:
            continue
        if name == "shear":
            if msh.BOTTOM in mk:
                set_comp(dof, 0, 0.0)
                set_comp(dof, 1, 0.0)
            if msh.TOP in mk:
                set_comp(dof, 0, t * 1.0)
                set_comp(dof, 1, 0.0)
            if msh.LEFT in mk or msh.RIGHT in mk or msh.SLIT_LOWER in mk:
                out.setdefault(2 * dof + 1, 0.0)
        elif name == "tension":
            if msh.BOTTOM in mk:
                set_comp(dof, 1, 0.0)
            if msh.TOP in mk:
                set_comp(dof, 0, 0.0)
                set_comp(dof, 1, t * 1.0)
        else:
            raise msh.MeshError(f"unknown scenario {name!r}")
    return out


def mass_of_hat(space: ScalarSpace, dof: int) -> float:
    """Patch integral of one constrained hat function."""
    return float(space.hat_masses[dof])


def side_points(space: ScalarSpace, side: msh.Side, s: np.ndarray):
    """Physical coordinates of points at parameters ``s`` along a side."""
    a = space.mesh.verts[side.v_lo]
    b = space.mesh.verts[side.v_hi]
    return a[None, :] + s[:, None] * (b - a)[None, :]


def side_cell_refcoords(side: msh.Side, adj_index: int, s: np.ndarray):
    """Reference coordinates of side parameters inside an adjacent cell."""
    cell, ledge, t0, t1 = side.adj[adj_index]
    tt = t0 + s * (t1 - t0)
    if ledge == 0:
        ref = np.stack((tt, np.zeros_like(tt)), axis=1)
    elif ledge == 1:
        ref = np.stack((np.ones_like(tt), tt), axis=1)
    elif ledge == 2:
        ref = np.stack((tt, np.ones_like(tt)), axis=1)
    else:
        ref = np.stack((np.zeros_like(tt), tt), axis=1)
    return cell, ref
