"""Residual-based semi-smooth Newton with backtracking line search.

Each iteration solves A'(U) dU = -A(U) with a sparse direct factorization
and accepts the largest step s in {rho^l : l = 0..l_max} that strictly
decreases the max-norm of the residual.  The convergence test is
||A(U)||_inf <= max(tol_abs, tol_rel * ||A(U0)||_inf).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import fespace as fe
from . import material as mat
from . import system as sys_


class NewtonError(Exception):
    """Base class for solver failures."""


class LineSearchError(NewtonError):
    pass


class MaxIterationsError(NewtonError):
    pass


class LinearSolveError(NewtonError):
    pass


@dataclass(frozen=True)
class NewtonConfig:
    rho: float = 0.5
    l_max: int = 30
    tol_abs: float = 1e-8
    tol_rel: float = 1e-10
    max_iters: int = 50
    c: Optional[float] = None   # complementarity constant; default G_c/eps

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if self.tol_abs <= 0 or self.tol_rel <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class IterationRecord:
    step: int
    norm: float
    s: float
    n_active: int


@dataclass
class NewtonLog:
    records: list = field(default_factory=list)
    converged: bool = False
    final_norm: float = float("nan")

    @property
    def iterations(self) -> int:
        return len(self.records)

    def lines(self):
        return [f"it {r.step:3d}  |A| {r.norm:.6e}  s {r.s:.4g}  "
                f"active {r.n_active}" for r in self.records]


def linear_solve(matrix, rhs: np.ndarray) -> np.ndarray:
    """Direct sparse solve with a residual acceptance check."""
    A = sp.csc_matrix(matrix)
    if A.shape[0] != A.shape[1] or A.shape[0] != len(rhs):
        raise LinearSolveError("non-square system")
    try:
        lu = splu(A)
    except RuntimeError as exc:
        raise LinearSolveError(f"factorization failed: {exc}") from exc
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise LinearSolveError("singular system produced non-finite solution")
    norm_a = np.abs(A).sum(axis=1).max()
    res = np.abs(A @ x - rhs).max()
    bound = 1e-10 * (norm_a * np.abs(x).max() + np.abs(rhs).max())
    if res > max(bound, 1e-300):
        raise LinearSolveError(
            f"direct solve residual {res:.3e} exceeds {bound:.3e}")
    return x


def newton_solve(residual: Callable, jacobian: Callable, u0: np.ndarray,
                 cfg: NewtonConfig,
                 active_fn: Optional[Callable] = None):
    """Generic semi-smooth Newton loop; returns (solution, NewtonLog)."""
    log = NewtonLog()
    u = np.asarray(u0, dtype=float).copy()
    r = residual(u)
    norm = float(np.abs(r).max())
    tol = max(cfg.tol_abs, cfg.tol_rel * norm)
    for k in range(cfg.max_iters + 1):
        if norm <= tol:
            log.converged = True
            log.final_norm = norm
            return u, log
        if k == cfg.max_iters:
            raise MaxIterationsError(
                f"no convergence in {cfg.max_iters} iterations "
                f"(|A| = {norm:.3e}, tol = {tol:.3e})")
        du = linear_solve(jacobian(u), -r)
        s = 1.0
        accepted = None
        for _ in range(cfg.l_max + 1):
            trial = u + s * du
            r_trial = residual(trial)
            norm_trial = float(np.abs(r_trial).max())
            if norm_trial < norm:
                accepted = (trial, r_trial, norm_trial, s)
                break
            s *= cfg.rho
        if accepted is None:
            raise LineSearchError(
                f"line search failed at iteration {k} (|A| = {norm:.3e})")
        u, r, norm, s = accepted
        n_act = int(np.count_nonzero(active_fn(u))) if active_fn else 0
        log.records.append(IterationRecord(k + 1, norm, s, n_act))
    raise MaxIterationsError("unreachable")


def solve_timestep(initial: sys_.TimeStepState, obstacle: fe.FeFunction,
                   params: mat.MaterialParams, cfg: NewtonConfig, bc: dict,
                   source=None, lag: fe.FeFunction = None):
    """Solve one loading step; the initial guess must already carry the
    Dirichlet values of the current time."""
    space = initial.space
    c = cfg.c if cfg.c is not None else params.g_c / params.epsilon
    system = sys_.StepSystem(space, obstacle, params, c, bc, source=source,
                             lag=lag)
    U, log = newton_solve(system.residual, system.jacobian, initial.pack(),
                          cfg, active_fn=system.active_set)
    n = space.ndof
    state = sys_.TimeStepState(
        fe.VectorFeFunction(space, U[:2 * n]),
        fe.FeFunction(space, U[2 * n:3 * n]),
        U[3 * n:], initial.t)
    return state, log


def impose_dirichlet(u: np.ndarray, bc: dict) -> np.ndarray:
    """Copy of the displacement coefficients with boundary values set."""
    out = u.copy()
    for dof, val in bc.items():
        out[dof] = val
    return out
