"""Residual and semi-smooth Jacobian of one loading-step system.

Unknown layout: U = [u (interleaved x/y), phi, lambda], all indexed by the
scalar DoFs of one space.  The three residual blocks are

  * elasticity tested with vector hats, the degradation frozen at the
    interpolated previous phase field,
  * the phase-field equation tested with scalar hats plus the nodal
    multiplier, and optionally a manufactured volume source,
  * the nodal complementarity function  C_p = lam_p - max(0, lam_p +
    c (obstacle - phi)(p)).

Dirichlet displacement rows are replaced by u - u_D.  Assembly happens on
the vertex level and is folded through the hanging-node constraints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import fespace as fe
from . import material as mat


@dataclass
class TimeStepState:
    """Converged (or trial) unknowns of one loading step."""

    u: fe.VectorFeFunction
    phi: fe.FeFunction
    lam: np.ndarray
    t: float

    @property
    def space(self) -> fe.ScalarSpace:
        return self.phi.space

    @property
    def mesh(self):
        return self.phi.space.mesh

    def pack(self) -> np.ndarray:
        return np.concatenate((self.u.coeffs, self.phi.coeffs, self.lam))


def obstacle_from_previous(prev_phi: fe.FeFunction,
                           space: fe.ScalarSpace) -> fe.FeFunction:
    """Nodal interpolation of the previous phase field onto the current mesh."""
    return fe.interpolate_nodal(prev_phi, space)


def initial_phase(space: fe.ScalarSpace) -> fe.FeFunction:
    return fe.FeFunction(space, np.ones(space.ndof))


class StepSystem:
    """Assembler for A(U) and A'(U) on a fixed space/obstacle/time."""

    def __init__(self, space: fe.ScalarSpace, obstacle: fe.FeFunction,
                 params: mat.MaterialParams, c: float, bc: dict,
                 source=None, lag: fe.FeFunction = None):
        if obstacle.space is not space:
            raise ValueError("obstacle must live on the step's space")
        # the interpolated previous phase field doubles as the degradation
        # lag; tests may replace the obstacle by a large surrogate while
        # keeping a physical lag field
        if lag is None:
            lag = obstacle
        self.space = space
        self.obstacle = obstacle
        self.params = params
        self.c = c
        self.n = space.ndof
        self.size = 4 * space.ndof

        rule = fe.cell_rule()
        self.N = fe.shape_values(rule.points)            # (4q, 4n)
        G = fe.shape_grads(rule.points)                  # (4q, 4n, 2)
        _, _, hx, hy = space.geom
        self.gx = G[None, :, :, 0] / hx[:, None, None]   # (nc, q, n)
        self.gy = G[None, :, :, 1] / hy[:, None, None]
        self.wq = rule.weights[None, :] * (hx * hy)[:, None]

        # degradation from the time-lagged phase field, at quadrature points
        lag_cv = space.cell_values(lag.coeffs)
        lag_q = np.einsum("qn,cn->cq", self.N, lag_cv)
        self.g_q, _ = mat.degradation(lag_q, params.kappa)

        self.bc_idx = np.asarray(sorted(bc.keys()), dtype=np.int64)
        self.bc_val = np.asarray([bc[k] for k in self.bc_idx])

        self.f_q = None
        if source is not None:
            xy = space.qp_coords
            self.f_q = np.asarray(source(xy[..., 0], xy[..., 1]), dtype=float)

        # vector-valued constraint folding (interleaved components)
        self.C2 = sp.kron(space.C, sp.eye(2), format="csr")
        self.C2t = self.C2.T.tocsr()

        gc, eps = params.g_c, params.epsilon
        mass = self._assemble_scalar(np.einsum(
            "cq,qn,qm->cnm", self.wq, self.N, self.N))
        stiff = self._assemble_scalar(np.einsum(
            "cq,cqn,cqm->cnm", self.wq, self.gx, self.gx)
            + np.einsum("cq,cqn,cqm->cnm", self.wq, self.gy, self.gy))
        self._k_phiphi_const = (gc / eps) * mass + gc * eps * stiff
        ones_vert = np.zeros(len(space.vused))
        np.add.at(ones_vert, space.conn_u.reshape(-1),
                  np.einsum("cq,qn->cn", self.wq, self.N).reshape(-1))
        self._ones_vec = space.Ct @ ones_vert

    # ------------------------------------------------------------------
    def _assemble_scalar(self, local: np.ndarray) -> sp.csr_matrix:
        """Fold (ncells, 4, 4) local matrices into DoF space."""
        conn = self.space.conn_u
        nu = len(self.space.vused)
        rows = np.repeat(conn, 4, axis=1).reshape(-1)
        cols = np.tile(conn, (1, 4)).reshape(-1)
        K = sp.coo_matrix((local.reshape(-1), (rows, cols)),
                          shape=(nu, nu)).tocsr()
        return self.space.Ct @ K @ self.space.C

    def _assemble_vector(self, local: np.ndarray) -> sp.csr_matrix:
        """Fold (ncells, 8, 8) local matrices (vector x vector)."""
        conn = self.space.conn_u
        nu = len(self.space.vused)
        idx = np.empty((conn.shape[0], 8), dtype=np.int64)
        idx[:, 0::2] = 2 * conn
        idx[:, 1::2] = 2 * conn + 1
        rows = np.repeat(idx, 8, axis=1).reshape(-1)
        cols = np.tile(idx, (1, 8)).reshape(-1)
        K = sp.coo_matrix((local.reshape(-1), (rows, cols)),
                          shape=(2 * nu, 2 * nu)).tocsr()
        return self.C2t @ K @ self.C2

    def _assemble_mixed(self, local: np.ndarray) -> sp.csr_matrix:
        """Fold (ncells, 4, 8) local matrices (scalar rows, vector cols)."""
        conn = self.space.conn_u
        nu = len(self.space.vused)
        idx = np.empty((conn.shape[0], 8), dtype=np.int64)
        idx[:, 0::2] = 2 * conn
        idx[:, 1::2] = 2 * conn + 1
        rows = np.repeat(conn, 8, axis=1).reshape(-1)
        cols = np.tile(idx, (1, 4)).reshape(-1)
        K = sp.coo_matrix((local.reshape(-1), (rows, cols)),
                          shape=(nu, 2 * nu)).tocsr()
        return self.space.Ct @ K @ self.C2

    # ------------------------------------------------------------------
    def unpack(self, U: np.ndarray):
        n = self.n
        return U[:2 * n], U[2 * n:3 * n], U[3 * n:]

    def _strains(self, u_flat: np.ndarray):
        ucv = self.space.cell_values(u_flat.reshape(-1, 2))
        exx = np.einsum("cqn,cn->cq", self.gx, ucv[:, :, 0])
        eyy = np.einsum("cqn,cn->cq", self.gy, ucv[:, :, 1])
        exy = 0.5 * (np.einsum("cqn,cn->cq", self.gy, ucv[:, :, 0])
                     + np.einsum("cqn,cn->cq", self.gx, ucv[:, :, 1]))
        return exx, eyy, exy

    def residual(self, U: np.ndarray) -> np.ndarray:
        space, prm = self.space, self.params
        u_flat, phi, lam = self.unpack(U)
        exx, eyy, exy = self._strains(u_flat)
        (spx, spy, spxy), (smx, smy, smxy) = mat.stress_split_batch(
            exx, eyy, exy, prm)
        stx = self.g_q * spx + smx
        sty = self.g_q * spy + smy
        stxy = self.g_q * spxy + smxy

        nu = len(space.vused)
        contrib_x = (np.einsum("cq,cqn->cn", self.wq * stx, self.gx)
                     + np.einsum("cq,cqn->cn", self.wq * stxy, self.gy))
        contrib_y = (np.einsum("cq,cqn->cn", self.wq * stxy, self.gx)
                     + np.einsum("cq,cqn->cn", self.wq * sty, self.gy))
        r_vert = np.zeros((nu, 2))
        np.add.at(r_vert[:, 0], space.conn_u.reshape(-1), contrib_x.reshape(-1))
        np.add.at(r_vert[:, 1], space.conn_u.reshape(-1), contrib_y.reshape(-1))
        r_u = (space.Ct @ r_vert).reshape(-1)
        if len(self.bc_idx):
            r_u[self.bc_idx] = u_flat[self.bc_idx] - self.bc_val

        phicv = space.cell_values(phi)
        phiq = np.einsum("qn,cn->cq", self.N, phicv)
        gpx = np.einsum("cqn,cn->cq", self.gx, phicv)
        gpy = np.einsum("cqn,cn->cq", self.gy, phicv)
        drive = mat.drive_batch(exx, eyy, exy, prm)
        gc, eps, kap = prm.g_c, prm.epsilon, prm.kappa
        bulkterm = (1 - kap) * drive * phiq - (gc / eps) * (1 - phiq)
        if self.f_q is not None:
            bulkterm = bulkterm + self.f_q
        contrib = (np.einsum("cq,qn->cn", self.wq * bulkterm, self.N)
                   + gc * eps * (np.einsum("cq,cqn->cn", self.wq * gpx, self.gx)
                                 + np.einsum("cq,cqn->cn", self.wq * gpy, self.gy)))
        r_vert_s = np.zeros(nu)
        np.add.at(r_vert_s, space.conn_u.reshape(-1), contrib.reshape(-1))
        r_phi = space.Ct @ r_vert_s + lam

        # active-set argument in violation form: positive where the
        # constraint phi <= obstacle wants to bind
        arg = lam + self.c * (phi - self.obstacle.coeffs)
        r_c = lam - np.where(arg > 0.0, arg, 0.0)
        return np.concatenate((r_u, r_phi, r_c))

    def jacobian(self, U: np.ndarray) -> sp.csc_matrix:
        space, prm = self.space, self.params
        u_flat, phi, lam = self.unpack(U)
        exx, eyy, exy = self._strains(u_flat)
        gc, eps, kap = prm.g_c, prm.epsilon, prm.kappa
        mu, lmb = prm.mu, prm.lam

        Dp = mat.tangent_plus_batch(exx, eyy, exy)      # (nc, q, 3, 3)
        H = (exx + eyy > 0.0).astype(float)
        gm1 = self.g_q - 1.0
        Dtot = 2 * mu * (gm1[..., None, None] * Dp + np.eye(3))
        lam_eff = lmb * (gm1 * H + 1.0)
        Tl = np.zeros((3, 3))
        Tl[0, :2] = Tl[1, :2] = 1.0
        Dtot = Dtot + lam_eff[..., None, None] * Tl

        nc, nq = exx.shape
        dvec = np.zeros((nc, nq, 8, 3))
        tvec = np.zeros((nc, nq, 8, 3))
        dvec[:, :, 0::2, 0] = self.gx
        dvec[:, :, 0::2, 2] = 0.5 * self.gy
        dvec[:, :, 1::2, 1] = self.gy
        dvec[:, :, 1::2, 2] = 0.5 * self.gx
        tvec[:, :, 0::2, 0] = self.gx
        tvec[:, :, 0::2, 2] = self.gy
        tvec[:, :, 1::2, 1] = self.gy
        tvec[:, :, 1::2, 2] = self.gx
        k_uu_loc = np.einsum("cq,cqia,cqab,cqjb->cij", self.wq, tvec, Dtot,
                             dvec, optimize=True)
        K_uu = self._assemble_vector(k_uu_loc)

        (spx, spy, spxy), _ = mat.stress_split_batch(exx, eyy, exy, prm)
        rho = np.stack((spx, spy, 2 * spxy), axis=-1)   # sigma+ : (.)
        phicv = space.cell_values(phi)
        phiq = np.einsum("qn,cn->cq", self.N, phicv)
        coef = 2 * (1 - kap) * self.wq * phiq
        k_pu_loc = np.einsum("cq,qn,cqa,cqja->cnj", coef, self.N, rho, dvec,
                             optimize=True)
        K_pu = self._assemble_mixed(k_pu_loc)

        drive = mat.drive_batch(exx, eyy, exy, prm)
        react = (1 - kap) * drive
        k_pp_loc = np.einsum("cq,qn,qm->cnm", self.wq * react, self.N, self.N)
        K_pp = self._k_phiphi_const + self._assemble_scalar(k_pp_loc)

        active = (lam + self.c * (phi - self.obstacle.coeffs)) > 0.0
        K_cp = sp.diags(np.where(active, -self.c, 0.0))
        K_cl = sp.diags(np.where(active, 0.0, 1.0))

        if len(self.bc_idx):
            free = np.ones(2 * self.n)
            free[self.bc_idx] = 0.0
            pinned = np.zeros(2 * self.n)
            pinned[self.bc_idx] = 1.0
            K_uu = sp.diags(free) @ K_uu + sp.diags(pinned)

        eye = sp.eye(self.n, format="csr")
        A = sp.bmat([[K_uu, None, None],
                     [K_pu, K_pp, eye],
                     [None, K_cp, K_cl]], format="csc")
        return A

    def active_set(self, U: np.ndarray) -> np.ndarray:
        _, phi, lam = self.unpack(U)
        return (lam + self.c * (phi - self.obstacle.coeffs)) > 0.0


def kkt_violations(state: TimeStepState, obstacle: fe.FeFunction):
    """(multiplier negativity, constraint violation, complementarity gap)."""
    gap = obstacle.coeffs - state.phi.coeffs
    neg = float(max(0.0, -state.lam.min())) if len(state.lam) else 0.0
    viol = float(max(0.0, -gap.min()))
    comp = float(np.abs(state.lam * gap).max())
    return neg, viol, comp
