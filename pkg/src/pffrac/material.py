"""Constitutive law for the degraded isotropic solid.

The strain is split into tensile and compressive parts through the
closed-form eigendecomposition of the symmetric 2x2 strain tensor; only the
tensile stress is degraded.  Batched variants operate on component arrays
(e_xx, e_yy, e_xy) so assembly can evaluate whole meshes at once.

Units are N, mm, s throughout: stresses in N/mm^2, G_c in N/mm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# eigenvalue gap below this fraction of |E| uses the degenerate tangent
TOL_EIG = 1e-12


@dataclass(frozen=True)
class MaterialParams:
    mu: float          # shear modulus, N/mm^2
    lam: float         # first Lame parameter, N/mm^2
    g_c: float         # critical energy release rate, N/mm
    kappa: float       # residual stiffness factor
    epsilon: float     # phase-field bandwidth, mm

    def __post_init__(self):
        if min(self.mu, self.lam, self.g_c, self.epsilon) <= 0:
            raise ValueError("material parameters must be positive")
        if not 0 < self.kappa < 1:
            raise ValueError("kappa must lie in (0, 1)")


def degradation(phi, kappa):
    """g(phi) = (1 - kappa) phi^2 + kappa and its derivative."""
    phi = np.asarray(phi, dtype=float)
    g = (1.0 - kappa) * phi * phi + kappa
    dg = 2.0 * (1.0 - kappa) * phi
    return g, dg


def _eig2(exx, eyy, exy):
    """Eigenvalues and rotation (cos 2t, sin 2t) of symmetric 2x2 batches."""
    mean = 0.5 * (exx + eyy)
    dev = 0.5 * (exx - eyy)
    radius = np.sqrt(dev * dev + exy * exy)
    scale = np.maximum.reduce([np.abs(exx), np.abs(eyy), np.abs(exy)])
    degen = radius <= TOL_EIG * np.maximum(scale, 1.0)
    safe = np.where(degen, 1.0, radius)
    return mean, radius, dev / safe, exy / safe, degen


def split_batch(exx, eyy, exy):
    """Tensile strain part E+ componentwise for batched strains."""
    mean, radius, c2, s2, degen = _eig2(exx, eyy, exy)
    l1, l2 = mean + radius, mean - radius
    p1, p2 = np.maximum(l1, 0.0), np.maximum(l2, 0.0)
    pxx = 0.5 * (1.0 + c2)
    pyy = 0.5 * (1.0 - c2)
    pxy = 0.5 * s2
    sxx = p1 * pxx + p2 * (1.0 - pxx)
    syy = p1 * pyy + p2 * (1.0 - pyy)
    sxy = (p1 - p2) * pxy
    dxx = np.maximum(mean, 0.0)
    return (np.where(degen, dxx, sxx), np.where(degen, dxx, syy),
            np.where(degen, 0.0, sxy))


def tangent_plus_batch(exx, eyy, exy):
    """Directional-derivative matrix of E -> E+ in component form.

    Returns D of shape (..., 3, 3) so that dE+ = D @ (dxx, dyy, dxy).
    Built from the eigenprojector derivative; at (numerically) equal
    eigenvalues the symmetrized-projector limit H(tr E / 2) * Id is used,
    which also makes the map vanish identically at E = 0.
    """
    mean, radius, c2, s2, degen = _eig2(exx, eyy, exy)
    l1, l2 = mean + radius, mean - radius
    f1 = (l1 > 0.0).astype(float)
    f2 = (l2 > 0.0).astype(float)
    gap = np.where(degen, 1.0, l1 - l2)
    d12 = np.where(degen, (mean > 0.0).astype(float),
                   (np.maximum(l1, 0.0) - np.maximum(l2, 0.0)) / gap)
    # orthonormal symmetric basis: the two eigenprojectors and the mixed dyad
    v1 = np.stack([0.5 * (1.0 + c2), 0.5 * (1.0 - c2), 0.5 * s2], axis=-1)
    v2 = np.stack([0.5 * (1.0 - c2), 0.5 * (1.0 + c2), -0.5 * s2], axis=-1)
    r = 1.0 / np.sqrt(2.0)
    v3 = np.stack([-s2 * r, s2 * r, c2 * r], axis=-1)
    w = np.array([1.0, 1.0, 2.0])
    D = (f1[..., None, None] * v1[..., :, None] * (v1 * w)[..., None, :]
         + f2[..., None, None] * v2[..., :, None] * (v2 * w)[..., None, :]
         + d12[..., None, None] * v3[..., :, None] * (v3 * w)[..., None, :])
    if np.any(degen):
        iso = (mean > 0.0).astype(float)[..., None, None] * np.eye(3)
        D = np.where(degen[..., None, None], iso, D)
    return D


def stress_split_batch(exx, eyy, exy, params: MaterialParams):
    """(sigma+, sigma-) component arrays for batched strains."""
    pxx, pyy, pxy = split_batch(exx, eyy, exy)
    tr = exx + eyy
    trp = np.maximum(tr, 0.0)
    mu, lam = params.mu, params.lam
    sp = (2 * mu * pxx + lam * trp, 2 * mu * pyy + lam * trp, 2 * mu * pxy)
    sm = (2 * mu * (exx - pxx) + lam * (tr - trp),
          2 * mu * (eyy - pyy) + lam * (tr - trp),
          2 * mu * (exy - pxy))
    return sp, sm


def drive_batch(exx, eyy, exy, params: MaterialParams):
    """sigma+(E) : E, the tensile energy driving the phase field (>= 0)."""
    pxx, pyy, pxy = split_batch(exx, eyy, exy)
    tr = exx + eyy
    trp = np.maximum(tr, 0.0)
    ep2 = pxx * pxx + pyy * pyy + 2 * pxy * pxy
    return 2 * params.mu * ep2 + params.lam * trp * tr


# ----------------------------------------------------------------------
# single-tensor interface
# ----------------------------------------------------------------------
def _comp(E):
    E = np.asarray(E, dtype=float)
    if E.shape != (2, 2) or abs(E[0, 1] - E[1, 0]) > 1e-12 * (1 + np.abs(E).max()):
        raise ValueError("expected a symmetric 2x2 tensor")
    return E[0, 0], E[1, 1], 0.5 * (E[0, 1] + E[1, 0])


def _mat(xx, yy, xy):
    return np.array([[xx, xy], [xy, yy]], dtype=float)


def spectral_split(E):
    """E = E+ + E- with positive-part eigenvalues in E+."""
    exx, eyy, exy = _comp(E)
    pxx, pyy, pxy = (float(v) for v in split_batch(
        np.asarray(exx), np.asarray(eyy), np.asarray(exy)))
    Ep = _mat(pxx, pyy, pxy)
    return Ep, np.asarray(E, dtype=float) - Ep


def stress_plus(E, params: MaterialParams):
    exx, eyy, exy = _comp(E)
    sp, _ = stress_split_batch(np.asarray(exx), np.asarray(eyy),
                               np.asarray(exy), params)
    return _mat(*(float(v) for v in sp))


def stress_minus(E, params: MaterialParams):
    exx, eyy, exy = _comp(E)
    _, sm = stress_split_batch(np.asarray(exx), np.asarray(eyy),
                               np.asarray(exy), params)
    return _mat(*(float(v) for v in sm))


def dstress_split(E, dE, params: MaterialParams):
    """Directional derivatives (d sigma+, d sigma-) at E in direction dE."""
    exx, eyy, exy = _comp(E)
    dxx, dyy, dxy = _comp(dE)
    D = tangent_plus_batch(np.asarray(exx), np.asarray(eyy), np.asarray(exy))
    dEp = D @ np.array([dxx, dyy, dxy])
    tr = exx + eyy
    h = 1.0 if tr > 0.0 else 0.0
    dtr = dxx + dyy
    mu, lam = params.mu, params.lam
    dsp = _mat(2 * mu * dEp[0] + lam * h * dtr,
               2 * mu * dEp[1] + lam * h * dtr,
               2 * mu * dEp[2])
    dsm = _mat(2 * mu * (dxx - dEp[0]) + lam * (1 - h) * dtr,
               2 * mu * (dyy - dEp[1]) + lam * (1 - h) * dtr,
               2 * mu * (dxy - dEp[2]))
    return dsp, dsm


def energy_densities(phi, E, grad_phi, params: MaterialParams):
    """(bulk, crack) energy densities in N/mm^2.

    The degradation multiplies only the shear part of the bulk density,
    and the caller supplies grad(phi).
    """
    exx, eyy, exy = _comp(E)
    g, _ = degradation(phi, params.kappa)
    tr_e2 = exx * exx + eyy * eyy + 2 * exy * exy
    bulk = g * params.mu * tr_e2 + 0.5 * params.lam * (exx + eyy) ** 2
    gx, gy = grad_phi
    crack = 0.5 * params.g_c * ((phi - 1.0) ** 2 / params.epsilon
                                + params.epsilon * (gx * gx + gy * gy))
    return float(bulk), float(crack)
