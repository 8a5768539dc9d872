"""Per-time-step meshes over the loading horizon: solve, estimate, mark,
refine, repeat.

Every step keeps its own mesh, all derived from the common coarse mesh.
One cycle sweeps the whole horizon: the obstacle of step n is the nodal
interpolation of the previous step's phase field onto step n's mesh, the
Newton guess is the previous state carried over with corrected boundary
values.  Between cycles every step's mesh is refined by Doerfler marking
of its own indicators; all states are then discarded and re-solved.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import estimator as est
from . import fespace as fe
from . import mesh as msh
from . import newton as nt
from . import qoi as qoi_
from . import scenarios as scn
from . import system as sys_


@dataclass
class StepRecord:
    state: sys_.TimeStepState
    report: Optional[est.EstimatorReport]
    log: nt.NewtonLog
    qoi: qoi_.QoiRecord
    kkt: tuple


@dataclass
class Horizon:
    config: scn.ScenarioConfig
    times: list
    meshes: list                      # per step 0..N
    steps: list = field(default_factory=list)   # StepRecord per step 1..N

    @classmethod
    def initial(cls, config: scn.ScenarioConfig,
                mesh: Optional[msh.Mesh] = None) -> "Horizon":
        if mesh is None:
            mesh = msh.uniform_refine(msh.coarse_mesh(config.name),
                                      config.pre_refinements)
        times = config.times()
        return cls(config, times, [mesh] * len(times))

    def space(self, n: int) -> fe.ScalarSpace:
        # cached on the mesh object so steps sharing a mesh share the space
        mesh = self.meshes[n]
        sp = getattr(mesh, "_space", None)
        if sp is None:
            sp = fe.ScalarSpace(mesh)
            mesh._space = sp
        return sp

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def max_dofs(self) -> int:
        return max(4 * self.space(n).ndof for n in range(1, self.n_steps + 1))


def run_cycle(horizon: Horizon, params, newton_cfg: nt.NewtonConfig,
              estimate_steps: bool = True, source=None) -> Horizon:
    """Solve every step of the horizon in order and attach estimates."""
    cfg = horizon.config
    horizon.steps = []
    prev_phi = sys_.initial_phase(horizon.space(0))
    prev_u = fe.VectorFeFunction(horizon.space(0),
                                 np.zeros(2 * horizon.space(0).ndof))
    prev_lam = fe.FeFunction(horizon.space(0),
                             np.zeros(horizon.space(0).ndof))
    for n in range(1, horizon.n_steps + 1):
        t = horizon.times[n]
        space = horizon.space(n)
        obstacle = sys_.obstacle_from_previous(prev_phi, space)
        bc = fe.dirichlet_dofs(space, cfg.name, t)
        u0 = fe.interpolate_nodal(prev_u, space)
        u0.coeffs = nt.impose_dirichlet(u0.coeffs, bc)
        lam0 = fe.interpolate_nodal(prev_lam, space)
        guess = sys_.TimeStepState(u0, fe.FeFunction(space,
                                                     obstacle.coeffs.copy()),
                                   lam0.coeffs, t)
        try:
            state, log = nt.solve_timestep(guess, obstacle, params,
                                           newton_cfg, bc, source=source)
        except nt.NewtonError as exc:
            raise nt.NewtonError(f"step {n} (t = {t:g}s): {exc}") from exc
        report = None
        if estimate_steps:
            report = est.estimate(state, obstacle, params, space,
                                  strip=cfg.strip, source=source)
        fx, fy = qoi_.load(state, params)
        fxd, fyd = qoi_.load_degraded(state, params)
        rec = qoi_.QoiRecord(
            t=t, displacement=t * 1.0, f_x=fx, f_y=fy, f_x_deg=fxd,
            f_y_deg=fyd, e_bulk=qoi_.bulk_energy(state, params),
            e_crack=qoi_.crack_energy(state, params),
            dofs=4 * space.ndof, eta=report.eta if report else 0.0)
        horizon.steps.append(StepRecord(state, report, log, rec,
                                        sys_.kkt_violations(state, obstacle)))
        prev_phi, prev_u = state.phi, state.u
        prev_lam = fe.FeFunction(space, state.lam)
    return horizon


def mark(indicators: np.ndarray, theta: float) -> np.ndarray:
    """Smallest set carrying a theta fraction of the total indicator.

    Cells are taken by descending indicator, ties broken by index; cells
    with zero indicator are never marked.
    """
    indicators = np.asarray(indicators, dtype=float)
    if np.any(indicators < 0):
        raise ValueError("indicators must be nonnegative")
    total = indicators.sum()
    if total <= 0.0 or len(indicators) == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((np.arange(len(indicators)), -indicators))
    csum = np.cumsum(indicators[order])
    k = int(np.searchsorted(csum, theta * total - 1e-14 * total)) + 1
    chosen = order[:k]
    return np.sort(chosen[indicators[chosen] > 0])


def adapt_step(horizon: Horizon, theta: Optional[float] = None) -> Horizon:
    """Refine each step's mesh by its marking; drops all solved states."""
    if theta is None:
        theta = horizon.config.theta
    cache: dict = {}
    new_meshes = [horizon.meshes[0]]
    for n in range(1, horizon.n_steps + 1):
        rec = horizon.steps[n - 1] if n - 1 < len(horizon.steps) else None
        if rec is None or rec.report is None:
            new_meshes.append(horizon.meshes[n])
            continue
        mesh = horizon.meshes[n]
        pos = mark(rec.report.cell_indicators, theta)
        cells = tuple(int(c) for c in mesh.active_cells[pos])
        key = (id(mesh), cells)
        refined = cache.get(key)
        if refined is None:
            refined = msh.refine(mesh, cells)
            cache[key] = refined
        new_meshes.append(refined)
    horizon.meshes = new_meshes
    horizon.steps = []
    return horizon


def _l2_transfer(prev_phi: fe.FeFunction, space: fe.ScalarSpace) -> float:
    """|| I_h^n phi^{n-1} - phi^{n-1} ||_L2 on the common refinement."""
    interp = fe.interpolate_nodal(prev_phi, space)
    mesh_a = prev_phi.space.mesh
    mesh_b = space.mesh
    vala = prev_phi.space.cell_values(prev_phi.coeffs)
    valb = space.cell_values(interp.coeffs)
    rule = fe.cell_rule()
    total = 0.0

    def leaf_value(mesh, vals, cell, rect):
        pos = mesh.active_index[cell]
        x0, y0 = mesh.verts[mesh.conn[cell, 0]]
        v2 = mesh.verts[mesh.conn[cell, 2]]
        hx, hy = v2[0] - x0, v2[1] - y0
        xs = rect[0] + rule.points[:, 0] * rect[2]
        ys = rect[1] + rule.points[:, 1] * rect[3]
        ref = np.stack(((xs - x0) / hx, (ys - y0) / hy), axis=1)
        return fe.shape_values(ref) @ vals[pos]

    def walk(ca, cb, rect):
        nonlocal total
        kids_a = mesh_a.children[ca, 0] >= 0
        kids_b = mesh_b.children[cb, 0] >= 0
        if kids_a or kids_b:
            x, y, w, h = rect
            quads = ((x, y), (x + w / 2, y), (x + w / 2, y + h / 2),
                     (x, y + h / 2))
            for i, (qx, qy) in enumerate(quads):
                na = mesh_a.children[ca, i] if kids_a else ca
                nb = mesh_b.children[cb, i] if kids_b else cb
                walk(na, nb, (qx, qy, w / 2, h / 2))
            return
        fa = leaf_value(mesh_a, vala, ca, rect)
        fb = leaf_value(mesh_b, valb, cb, rect)
        total += rect[2] * rect[3] * float(
            (rule.weights * (fa - fb) ** 2).sum())

    h0 = msh.DOMAIN_SIZE / msh.COARSE_DIVS
    for c in range(msh.COARSE_DIVS ** 2):
        x = (c % msh.COARSE_DIVS) * h0
        y = (c // msh.COARSE_DIVS) * h0
        walk(c, c, (x, y, h0, h0))
    return float(np.sqrt(total))


def stopping(horizon: Horizon, tol_eta: float, tol_transfer: float) -> bool:
    """True when the summed eta^2 and the mesh-transfer errors are small."""
    if not horizon.steps:
        raise ValueError("stopping requires a completed cycle")
    eta_sq = sum((rec.report.eta if rec.report else 0.0) ** 2
                 for rec in horizon.steps)
    if eta_sq > tol_eta ** 2:
        return False
    prev_phi = sys_.initial_phase(horizon.space(0))
    for n in range(1, horizon.n_steps + 1):
        if _l2_transfer(prev_phi, horizon.space(n)) > tol_transfer:
            return False
        prev_phi = horizon.steps[n - 1].state.phi
    return True


@dataclass
class StudyResult:
    config: scn.ScenarioConfig
    cycles: list          # list of per-cycle lists of StepRecord
    horizon: Horizon      # horizon of the final cycle

    def qoi_rows(self):
        for c, steps in enumerate(self.cycles):
            for k, rec in enumerate(steps):
                yield c, k + 1, rec.qoi

    def cycle_rows(self):
        for c, steps in enumerate(self.cycles):
            for k, rec in enumerate(steps):
                rep = rec.report
                yield (c, k + 1, rec.qoi.t, rec.qoi.dofs,
                       len(rec.state.mesh.active_cells),
                       rep.eta1 if rep else 0.0, rep.eta2 if rep else 0.0,
                       rep.eta3 if rep else 0.0, rep.eta4 if rep else 0.0,
                       rep.eta if rep else 0.0, rec.log.iterations)


def run_adaptive(config: scn.ScenarioConfig, newton_cfg=None,
                 keep_cycle_steps: bool = True) -> StudyResult:
    """`config.cycles` full sweeps with refinement between consecutive ones."""
    newton_cfg = newton_cfg or nt.NewtonConfig()
    params = config.material()
    horizon = Horizon.initial(config)
    cycles = []
    for c in range(config.cycles):
        run_cycle(horizon, params, newton_cfg)
        cycles.append(list(horizon.steps))
        if c + 1 < config.cycles:
            adapt_step(horizon)
    if not horizon.steps and cycles:
        horizon.steps = cycles[-1]
    if not keep_cycle_steps and len(cycles) > 1:
        cycles = cycles[-1:]
    return StudyResult(config, cycles, horizon)


def run_uniform(config: scn.ScenarioConfig, newton_cfg=None) -> StudyResult:
    """One sweep on a uniformly refined mesh, no estimation."""
    newton_cfg = newton_cfg or nt.NewtonConfig()
    params = config.material()
    levels = config.uniform_levels or 0
    mesh = msh.uniform_refine(msh.coarse_mesh(config.name), levels)
    horizon = Horizon.initial(config, mesh)
    run_cycle(horizon, params, newton_cfg, estimate_steps=False)
    return StudyResult(config, [list(horizon.steps)], horizon)
