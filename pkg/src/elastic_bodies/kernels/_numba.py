"""Numba implementation of the per-face kernels (same contracts as ``_numpy``)."""

import math
import os

import numba
import numpy as np
from numba import njit, prange

if "NUMBA_THREADING_LAYER" not in os.environ:
    # kernels are called concurrently from thread pools; prefer a thread-safe layer
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]

DEGENERATE_RTOL = 1e-12


@njit(cache=True, nogil=True, parallel=True)
def face_geometry(pos, faces, inv_l1, cot_l1, inv_h):
    nf = faces.shape[0]
    fu = np.empty((nf, 3))
    fv = np.empty((nf, 3))
    g = np.empty((nf, 3))
    n = np.empty((nf, 3))
    crn = np.empty(nf)
    for f in prange(nf):
        i1, i2, i3 = faces[f, 0], faces[f, 1], faces[f, 2]
        e1x = pos[i2, 0] - pos[i1, 0]
        e1y = pos[i2, 1] - pos[i1, 1]
        e1z = pos[i2, 2] - pos[i1, 2]
        e2x = pos[i3, 0] - pos[i1, 0]
        e2y = pos[i3, 1] - pos[i1, 1]
        e2z = pos[i3, 2] - pos[i1, 2]
        ux = e1x * inv_l1[f]
        uy = e1y * inv_l1[f]
        uz = e1z * inv_l1[f]
        vx = -e1x * cot_l1[f] + e2x * inv_h[f]
        vy = -e1y * cot_l1[f] + e2y * inv_h[f]
        vz = -e1z * cot_l1[f] + e2z * inv_h[f]
        fu[f, 0] = ux
        fu[f, 1] = uy
        fu[f, 2] = uz
        fv[f, 0] = vx
        fv[f, 1] = vy
        fv[f, 2] = vz
        g[f, 0] = ux * ux + uy * uy + uz * uz
        g[f, 1] = ux * vx + uy * vy + uz * vz
        g[f, 2] = vx * vx + vy * vy + vz * vz
        cx = e1y * e2z - e1z * e2y
        cy = e1z * e2x - e1x * e2z
        cz = e1x * e2y - e1y * e2x
        c = math.sqrt(cx * cx + cy * cy + cz * cz)
        crn[f] = c
        if c > 0.0:
            n[f, 0] = cx / c
            n[f, 1] = cy / c
            n[f, 2] = cz / c
        else:
            n[f, 0] = np.nan
            n[f, 1] = np.nan
            n[f, 2] = np.nan
    return fu, fv, g, n, crn


@njit(cache=True, nogil=True, parallel=True)
def metric_terms(gA, gB, lam, want_grad):
    nf = gA.shape[0]
    m = np.empty(nf)
    dgA = np.zeros((nf, 3))
    dgB = np.zeros((nf, 3))
    kappa = 1.0 / (2.0 * math.sqrt(2.0 * lam))
    for f in prange(nf):
        aA, bA, dA = gA[f, 0], gA[f, 1], gA[f, 2]
        aB, bB, dB = gB[f, 0], gB[f, 1], gB[f, 2]
        DA = aA * dA - bA * bA
        DB = aB * dB - bB * bB
        degenerate = (DA <= DEGENERATE_RTOL * (aA + dA) ** 2) or (DB <= DEGENERATE_RTOL * (aB + dB) ** 2)
        sA = max(DA, 0.0) ** 0.25
        sB = max(DB, 0.0) ** 0.25
        q = 1.0
        root = 0.0
        acq = 0.0
        if not degenerate:
            root = math.sqrt(DA * DB)
            q = (aA * dB + dA * aB - 2.0 * bA * bB) / (2.0 * root)
            # acosh(q) = asinh(sqrt(q^2 - 1)); q^2 - 1 from a cancellation-free discriminant
            e0 = aA * dB - dA * aB
            disc = e0 * e0 + 4.0 * (aA * bB - bA * aB) * (dA * bB - bA * dB)
            acq = math.asinh(math.sqrt(max(disc, 0.0)) / (2.0 * root))
        raw = kappa * acq
        theta = min(raw, math.pi)
        sh = math.sin(0.5 * theta)
        ds = sA - sB
        m[f] = 16.0 * lam * (ds * ds + 4.0 * sA * sB * sh * sh)
        if not want_grad:
            continue
        dm_dsA = 16.0 * lam * (2.0 * ds + 4.0 * sB * sh * sh)
        dm_dsB = 16.0 * lam * (-2.0 * ds + 4.0 * sA * sh * sh)
        dm_dq = 0.0
        if not degenerate and raw < math.pi:
            if acq > 1e-8:
                ratio = math.sin(theta) / math.sinh(acq)
            else:
                ratio = kappa
            dm_dq = 32.0 * lam * sA * sB * kappa * ratio
        dsA_dD = sA / (4.0 * DA) if DA > 0.0 else 0.0
        dsB_dD = sB / (4.0 * DB) if DB > 0.0 else 0.0
        GA = dm_dsA * dsA_dD
        GB = dm_dsB * dsB_dD
        Gq = 0.0
        if not degenerate:
            GA -= dm_dq * q / (2.0 * DA)
            GB -= dm_dq * q / (2.0 * DB)
            Gq = dm_dq / (2.0 * root)
        dgA[f, 0] = GA * dA + Gq * dB
        dgA[f, 1] = -2.0 * (GA * bA + Gq * bB)
        dgA[f, 2] = GA * aA + Gq * aB
        dgB[f, 0] = GB * dB + Gq * dA
        dgB[f, 1] = -2.0 * (GB * bB + Gq * bA)
        dgB[f, 2] = GB * aB + Gq * aA
    return m, dgA, dgB


@njit(cache=True, nogil=True, parallel=True)
def normal_terms(nA, nB, want_grad):
    nf = nA.shape[0]
    val = np.empty(nf)
    dnA = np.zeros((nf, 3))
    dnB = np.zeros((nf, 3))
    for f in prange(nf):
        ax, ay, az = nA[f, 0], nA[f, 1], nA[f, 2]
        bx, by, bz = nB[f, 0], nB[f, 1], nB[f, 2]
        x = ax * bx + ay * by + az * bz
        cx = ay * bz - az * by
        cy = az * bx - ax * bz
        cz = ax * by - ay * bx
        sn = math.sqrt(cx * cx + cy * cy + cz * cz)
        ang = math.atan2(sn, x)
        val[f] = ang * ang
        if not want_grad:
            continue
        if sn > 1e-12:
            ratio = ang / sn
        elif x < 0.0:
            ratio = 0.0
        else:
            ratio = 1.0
        w = -2.0 * ratio
        dnA[f, 0] = w * (bx - x * ax)
        dnA[f, 1] = w * (by - x * ay)
        dnA[f, 2] = w * (bz - x * az)
        dnB[f, 0] = w * (ax - x * bx)
        dnB[f, 1] = w * (ay - x * by)
        dnB[f, 2] = w * (az - x * bz)
    return val, dnA, dnB


@njit(cache=True, nogil=True)
def backprop(pos, faces, inv_l1, cot_l1, inv_h, fu, fv, n, crn, dg, dn):
    out = np.zeros_like(pos)
    nf = faces.shape[0]
    gfu = np.empty(3)
    gfv = np.empty(3)
    gcr = np.empty(3)
    e1 = np.empty(3)
    e2 = np.empty(3)
    for f in range(nf):
        i1, i2, i3 = faces[f, 0], faces[f, 1], faces[f, 2]
        ndn = n[f, 0] * dn[f, 0] + n[f, 1] * dn[f, 1] + n[f, 2] * dn[f, 2]
        for k in range(3):
            gfu[k] = 2.0 * dg[f, 0] * fu[f, k] + dg[f, 1] * fv[f, k]
            gfv[k] = dg[f, 1] * fu[f, k] + 2.0 * dg[f, 2] * fv[f, k]
            gcr[k] = (dn[f, k] - n[f, k] * ndn) / crn[f]
            e1[k] = pos[i2, k] - pos[i1, k]
            e2[k] = pos[i3, k] - pos[i1, k]
        # t1 = e2 x gcr, t2 = gcr x e1
        t1x = e2[1] * gcr[2] - e2[2] * gcr[1]
        t1y = e2[2] * gcr[0] - e2[0] * gcr[2]
        t1z = e2[0] * gcr[1] - e2[1] * gcr[0]
        t2x = gcr[1] * e1[2] - gcr[2] * e1[1]
        t2y = gcr[2] * e1[0] - gcr[0] * e1[2]
        t2z = gcr[0] * e1[1] - gcr[1] * e1[0]
        a = inv_l1[f]
        c = cot_l1[f]
        h = inv_h[f]
        out[i1, 0] += -gfu[0] * a + gfv[0] * (c - h) - t1x - t2x
        out[i1, 1] += -gfu[1] * a + gfv[1] * (c - h) - t1y - t2y
        out[i1, 2] += -gfu[2] * a + gfv[2] * (c - h) - t1z - t2z
        out[i2, 0] += gfu[0] * a - gfv[0] * c + t1x
        out[i2, 1] += gfu[1] * a - gfv[1] * c + t1y
        out[i2, 2] += gfu[2] * a - gfv[2] * c + t1z
        out[i3, 0] += gfv[0] * h + t2x
        out[i3, 1] += gfv[1] * h + t2y
        out[i3, 2] += gfv[2] * h + t2z
    return out
