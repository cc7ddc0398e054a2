"""Vectorised numpy implementation of the per-face kernels.

Packed metric layout: a face metric ``[[a, b], [b, d]]`` is stored as the row
``(a, b, d)``; gradients with respect to it use the same layout, ``b`` being
the single shared off-diagonal entry.
"""

import numpy as np

DEGENERATE_RTOL = 1e-12


def face_geometry(pos, faces, inv_l1, cot_l1, inv_h):
    """Tangent vectors, packed metric, unit normals and cross-product norms."""
    q1 = pos[faces[:, 0]]
    q2 = pos[faces[:, 1]]
    q3 = pos[faces[:, 2]]
    e1 = q2 - q1
    e2 = q3 - q1
    fu = e1 * inv_l1[:, None]
    fv = -e1 * cot_l1[:, None] + e2 * inv_h[:, None]
    g = np.empty((len(faces), 3))
    g[:, 0] = np.einsum("ij,ij->i", fu, fu)
    g[:, 1] = np.einsum("ij,ij->i", fu, fv)
    g[:, 2] = np.einsum("ij,ij->i", fv, fv)
    cr = np.cross(e1, e2)
    crn = np.sqrt(np.einsum("ij,ij->i", cr, cr))
    with np.errstate(invalid="ignore", divide="ignore"):
        n = cr / crn[:, None]
    return fu, fv, g, n, crn


def _ratio_sin_sinh(theta, acq, kappa):
    # sin(theta) / sinh(acq) with its limit kappa at acq -> 0
    out = np.full_like(acq, kappa)
    big = acq > 1e-8
    out[big] = np.sin(theta[big]) / np.sinh(acq[big])
    return out


def metric_terms(gA, gB, lam, want_grad):
    """Pointwise squared metric distance for packed metrics, plus gradients."""
    aA, bA, dA = gA[:, 0], gA[:, 1], gA[:, 2]
    aB, bB, dB = gB[:, 0], gB[:, 1], gB[:, 2]
    DA = aA * dA - bA * bA
    DB = aB * dB - bB * bB
    degenerate = (DA <= DEGENERATE_RTOL * (aA + dA) ** 2) | (DB <= DEGENERATE_RTOL * (aB + dB) ** 2)
    DAc = np.maximum(DA, 0.0)
    DBc = np.maximum(DB, 0.0)
    sA = DAc ** 0.25
    sB = DBc ** 0.25
    kappa = 1.0 / (2.0 * np.sqrt(2.0 * lam))

    ok = ~degenerate
    root = np.sqrt(DAc * DBc)
    tau = aA * dB + dA * aB - 2.0 * bA * bB
    q = np.ones_like(DA)
    q[ok] = tau[ok] / (2.0 * root[ok])
    # acosh(q) = asinh(sqrt(q^2 - 1)); q^2 - 1 from a cancellation-free discriminant
    e0 = aA * dB - dA * aB
    disc = np.maximum(e0 * e0 + 4.0 * (aA * bB - bA * aB) * (dA * bB - bA * dB), 0.0)
    acq = np.zeros_like(DA)
    acq[ok] = np.arcsinh(np.sqrt(disc[ok]) / (2.0 * root[ok]))
    raw = kappa * acq
    theta = np.minimum(raw, np.pi)
    sh = np.sin(0.5 * theta)
    ds = sA - sB
    m = 16.0 * lam * (ds * ds + 4.0 * sA * sB * sh * sh)
    if not want_grad:
        return m, None, None

    dm_dsA = 16.0 * lam * (2.0 * ds + 4.0 * sB * sh * sh)
    dm_dsB = 16.0 * lam * (-2.0 * ds + 4.0 * sA * sh * sh)
    dm_dq = 32.0 * lam * sA * sB * kappa * _ratio_sin_sinh(theta, acq, kappa)
    dm_dq[degenerate | (raw >= np.pi)] = 0.0

    with np.errstate(divide="ignore", invalid="ignore"):
        dsA_dD = np.where(DA > 0, sA / (4.0 * DA), 0.0)
        dsB_dD = np.where(DB > 0, sB / (4.0 * DB), 0.0)
        GA = np.where(ok, dm_dsA * dsA_dD - dm_dq * q / (2.0 * DA), dm_dsA * dsA_dD)
        GB = np.where(ok, dm_dsB * dsB_dD - dm_dq * q / (2.0 * DB), dm_dsB * dsB_dD)
        Gq = np.where(ok, dm_dq / (2.0 * root), 0.0)

    dgA = np.empty_like(gA)
    dgA[:, 0] = GA * dA + Gq * dB
    dgA[:, 1] = -2.0 * (GA * bA + Gq * bB)
    dgA[:, 2] = GA * aA + Gq * aB
    dgB = np.empty_like(gB)
    dgB[:, 0] = GB * dB + Gq * dA
    dgB[:, 1] = -2.0 * (GB * bB + Gq * bA)
    dgB[:, 2] = GB * aB + Gq * aA
    return m, dgA, dgB


def normal_terms(nA, nB, want_grad):
    """Squared great-circle distance between unit normals, plus gradients."""
    x = np.einsum("ij,ij->i", nA, nB)
    cr = np.cross(nA, nB)
    sn = np.sqrt(np.einsum("ij,ij->i", cr, cr))
    ang = np.arctan2(sn, x)
    val = ang * ang
    if not want_grad:
        return val, None, None
    ratio = np.ones_like(ang)
    big = sn > 1e-12
    ratio[big] = ang[big] / sn[big]
    # antipodal normals: the gradient direction is undefined
    ratio[~big & (x < 0)] = 0.0
    w = -2.0 * ratio
    dnA = w[:, None] * (nB - x[:, None] * nA)
    dnB = w[:, None] * (nA - x[:, None] * nB)
    return val, dnA, dnB


def backprop(pos, faces, inv_l1, cot_l1, inv_h, fu, fv, n, crn, dg, dn):
    """Pull per-face metric/normal gradients back to vertex positions."""
    q1 = pos[faces[:, 0]]
    e1 = pos[faces[:, 1]] - q1
    e2 = pos[faces[:, 2]] - q1
    gfu = 2.0 * dg[:, 0:1] * fu + dg[:, 1:2] * fv
    gfv = dg[:, 1:2] * fu + 2.0 * dg[:, 2:3] * fv
    gcr = (dn - n * np.einsum("ij,ij->i", n, dn)[:, None]) / crn[:, None]
    t1 = np.cross(e2, gcr)
    t2 = np.cross(gcr, e1)
    c1 = -gfu * inv_l1[:, None] + gfv * (cot_l1 - inv_h)[:, None] - t1 - t2
    c2 = gfu * inv_l1[:, None] - gfv * cot_l1[:, None] + t1
    c3 = gfv * inv_h[:, None] + t2
    out = np.zeros_like(pos)
    nv = len(pos)
    for corner, grad in ((0, c1), (1, c2), (2, c3)):
        idx = faces[:, corner]
        for k in range(3):
            out[:, k] += np.bincount(idx, weights=grad[:, k], minlength=nv)
    return out
