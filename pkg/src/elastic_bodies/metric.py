"""Elastic ``(a, lambda, c)`` distances between registered bodies.

The squared distance between two bodies is

    a * sum_faces area * d_sym(g1, g2)^2  +  c * sum_faces area * angle(n1, n2)^2

where ``d_sym`` is the closed-form pointwise geodesic distance between two
2x2 SPD matrices under the Ebin metric with parameter ``lambda``:

    d_sym^2 = 16 lambda (s1^2 - 2 s1 s2 cos(theta) + s2^2),
    s_i = det(g_i)^(1/4),
    theta = min(pi, sqrt(tr(L0^2) / lambda) / 4),

with ``L0`` the traceless part of ``L = log(g1^-1 g2)``.

Two implementations of ``d_sym`` exist on purpose. The public
:func:`pointwise_metric_distance_sq` takes the matrix logarithm through an
eigendecomposition of ``g1^-1/2 g2 g1^-1/2``. The face kernels used for
whole bodies (and their gradients) use the equivalent 2x2 invariant form
``tr(L0^2) = 2 arccosh(q)^2`` with ``q = tr(adj(g1) g2) / (2 sqrt(det g1 det g2))``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from ._backend import get_threads
from .errors import ConfigError, NumericalError, TopologyMismatchError
from .mesh import DEGENERATE_METRIC_RTOL, extract_geometry, geometry_backprop
from .retrieval import LabeledDistanceMatrix


@dataclass(frozen=True)
class MetricParams:
    """Weights ``a`` (metric part), ``c`` (normal part) and Ebin ``lam``.

    ``lam`` only matters when ``a > 0``; with ``a == 0`` it may be given as 0
    (as in the ``(0, 0, 1)`` normal-only distance).
    """

    a: float
    lam: float
    c: float

    def __post_init__(self):
        for name in ("a", "lam", "c"):
            v = getattr(self, name)
            if not isinstance(v, (int, float, np.floating, np.integer)) or not math.isfinite(v):
                raise ConfigError(f"metric parameter {name} must be a finite number, got {v!r}")
            object.__setattr__(self, name, float(v))
        if self.a < 0 or self.c < 0:
            raise ConfigError(f"metric parameters a and c must be >= 0, got a={self.a}, c={self.c}")
        if self.a == 0 and self.c == 0:
            raise ConfigError("metric parameters a and c cannot both be 0")
        if self.lam < 0 or (self.lam == 0 and self.a > 0):
            raise ConfigError(f"lambda must be > 0 when a > 0, got {self.lam}")

    @classmethod
    def parse(cls, value):
        """Build from ``"a,lam,c"`` or a 3-sequence."""
        if isinstance(value, MetricParams):
            return value
        if isinstance(value, str):
            parts = [p for p in value.replace(" ", "").split(",") if p]
        else:
            parts = list(value)
        if len(parts) != 3:
            raise ConfigError(f"metric parameters need three values a,lambda,c; got {value!r}")
        try:
            return cls(*(float(p) for p in parts))
        except (TypeError, ValueError):
            raise ConfigError(f"cannot parse metric parameters {value!r}") from None

    def as_tuple(self):
        return (self.a, self.lam, self.c)

    def __str__(self):
        return f"({self.a:g}, {self.lam:g}, {self.c:g})"


@dataclass(frozen=True)
class PointwiseDistanceBreakdown:
    """Metric and normal parts of a body distance, integrated and per face.

    ``metric_part`` and ``normal_part`` are the area-weighted integrals; the
    per-face arrays are the unweighted pointwise squared distances.
    """

    metric_part: float
    normal_part: float
    params: MetricParams
    metric_per_face: np.ndarray
    normal_per_face: np.ndarray

    @property
    def total(self):
        return self.params.a * self.metric_part + self.params.c * self.normal_part

    @property
    def distance(self):
        return math.sqrt(max(self.total, 0.0))


def _sym_eig(g):
    w, v = np.linalg.eigh(g)
    return w, v


def pointwise_metric_distance_sq(g1, g2, lam):
    """Squared Ebin geodesic distance between SPD matrices (eigen route).

    Parameters
    ----------
    g1, g2 : array_like, shape (..., 2, 2)
        Symmetric matrices; broadcast against each other.
    lam : float
        Positive Ebin parameter.

    Returns
    -------
    float or ndarray
        ``d^2`` per matrix pair.

    Raises
    ------
    ValueError
        If an input is not symmetric or ``lam <= 0``.
    NumericalError
        If an input has a negative eigenvalue (no matrix logarithm exists).

    Notes
    -----
    If either matrix is degenerate (``det <= 1e-12 tr^2``) the logarithm term
    is dropped (``theta = 0``) and only the ``s`` terms contribute.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    g1 = np.asarray(g1, dtype=float)
    g2 = np.asarray(g2, dtype=float)
    g1, g2 = np.broadcast_arrays(g1, g2)
    for name, g in (("g1", g1), ("g2", g2)):
        asym = np.abs(g[..., 0, 1] - g[..., 1, 0])
        scale = np.maximum(np.abs(g).max(axis=(-2, -1)), np.finfo(float).tiny)
        if np.any(asym > 1e-12 * scale):
            raise ValueError(f"{name} is not symmetric")
    batch = g1.shape[:-2]
    g1 = g1.reshape(-1, 2, 2)
    g2 = g2.reshape(-1, 2, 2)

    w1, v1 = _sym_eig(g1)
    w2, _ = _sym_eig(g2)
    tr1 = w1.sum(-1)
    tr2 = w2.sum(-1)
    det1 = np.prod(w1, -1)
    det2 = np.prod(w2, -1)
    for name, w, tr in (("g1", w1, tr1), ("g2", w2, tr2)):
        if np.any(w[:, 0] < -DEGENERATE_METRIC_RTOL * np.abs(tr)):
            raise NumericalError(f"{name} has a negative eigenvalue; the matrix logarithm is undefined")
    degenerate = (det1 <= DEGENERATE_METRIC_RTOL * tr1 ** 2) | (det2 <= DEGENERATE_METRIC_RTOL * tr2 ** 2)
    s1 = np.maximum(det1, 0.0) ** 0.25
    s2 = np.maximum(det2, 0.0) ** 0.25

    trL0sq = np.zeros(len(g1))
    # identical inputs have L = 0 exactly; skip the rounding of the similarity transform
    ok = ~degenerate & ~np.all(g1 == g2, axis=(-2, -1))
    if ok.any():
        # g1^-1 g2 is similar to the SPD matrix g1^-1/2 g2 g1^-1/2
        isq = v1[ok] * (1.0 / np.sqrt(w1[ok]))[:, None, :] @ np.swapaxes(v1[ok], -1, -2)
        S = isq @ g2[ok] @ isq
        S = 0.5 * (S + np.swapaxes(S, -1, -2))
        mu = np.linalg.eigvalsh(S)
        if np.any(mu <= 0):
            raise NumericalError("g1^-1 g2 has a non-positive eigenvalue")
        logmu = np.log(mu)
        L0 = logmu - logmu.mean(-1, keepdims=True)
        trL0sq[ok] = (L0 ** 2).sum(-1)
    theta = np.minimum(np.pi, np.sqrt(trL0sq / lam) / 4.0)
    d2 = 16.0 * lam * ((s1 - s2) ** 2 + 4.0 * s1 * s2 * np.sin(0.5 * theta) ** 2)
    return float(d2[0]) if batch == () else d2.reshape(batch)


def normal_distance_sq(n1, n2):
    """Squared great-circle distance between (renormalised) unit vectors."""
    n1 = np.asarray(n1, dtype=float)
    n2 = np.asarray(n2, dtype=float)
    l1 = np.linalg.norm(n1, axis=-1, keepdims=True)
    l2 = np.linalg.norm(n2, axis=-1, keepdims=True)
    if np.any(l1 == 0) or np.any(l2 == 0):
        raise ValueError("zero vector has no direction")
    dot = np.clip(np.sum(n1 / l1 * (n2 / l2), axis=-1), -1.0, 1.0)
    out = np.arccos(dot) ** 2
    return float(out) if out.ndim == 0 else out


def _check_pair(A, B):
    if A.topology is not None and B.topology is not None and A.topology is not B.topology:
        raise TopologyMismatchError("geometries were extracted against different templates")
    if len(A) != len(B):
        raise TopologyMismatchError(f"face counts differ ({len(A)} vs {len(B)})")


def body_distance_sq(A, B, params):
    """Metric and normal parts of the squared distance between two bodies.

    Parameters
    ----------
    A, B : FaceGeometry
        Extracted against the same template.
    params : MetricParams

    Returns
    -------
    PointwiseDistanceBreakdown
    """
    params = MetricParams.parse(params)
    _check_pair(A, B)
    w = A.area_weight
    nf = len(A)
    # both parts are always reported; the metric part needs lam > 0
    if params.lam > 0:
        m, _, _ = kernels.metric_terms(A.packed, B.packed, params.lam, False)
    else:
        m = np.zeros(nf)
    nd, _, _ = kernels.normal_terms(A.n, B.n, False)
    return PointwiseDistanceBreakdown(
        metric_part=float(w @ m),
        normal_part=float(w @ nd),
        params=params,
        metric_per_face=m,
        normal_per_face=nd,
    )


def pair_value_and_grads(A, B, params, want_grad=True, weight=1.0):
    """``weight * d^2(A, B)`` and its gradients w.r.t. packed ``g`` and ``n``.

    Returns ``(value, (dgA, dnA), (dgB, dnB))``; gradients are ``None`` when
    ``want_grad`` is false.
    """
    w = A.area_weight
    nf = len(A)
    value = 0.0
    dgA = dgB = dnA = dnB = None
    if want_grad:
        dgA = np.zeros((nf, 3))
        dgB = np.zeros((nf, 3))
        dnA = np.zeros((nf, 3))
        dnB = np.zeros((nf, 3))
    if params.a > 0:
        m, ga, gb = kernels.metric_terms(A.packed, B.packed, params.lam, want_grad)
        value += weight * params.a * float(w @ m)
        if want_grad:
            s = (weight * params.a * w)[:, None]
            dgA += s * ga
            dgB += s * gb
    if params.c > 0:
        nd, na, nb = kernels.normal_terms(A.n, B.n, want_grad)
        value += weight * params.c * float(w @ nd)
        if want_grad:
            s = (weight * params.c * w)[:, None]
            dnA += s * na
            dnB += s * nb
    return value, (dgA, dnA), (dgB, dnB)


def mesh_distance_sq_and_grad(mesh_a, mesh_b, params):
    """``d^2`` between two meshes and its gradient w.r.t. both vertex arrays."""
    params = MetricParams.parse(params)
    A = extract_geometry(mesh_a)
    B = extract_geometry(mesh_b)
    value, (dgA, dnA), (dgB, dnB) = pair_value_and_grads(A, B, params)
    return value, geometry_backprop(mesh_a, A, dgA, dnA), geometry_backprop(mesh_b, B, dgB, dnB)


def distance(mesh_a, mesh_b, params):
    """Elastic distance between two registered meshes."""
    return body_distance_sq(extract_geometry(mesh_a), extract_geometry(mesh_b), params).distance


def distance_matrix(meshes, params, labels=None, names=None, threads=None):
    """Symmetric matrix of pairwise elastic distances.

    Pairs are evaluated on a thread pool (the kernels release the GIL);
    ``threads`` defaults to the process-wide setting.
    """
    params = MetricParams.parse(params)
    meshes = list(meshes)
    if not meshes:
        raise ValueError("need at least one mesh")
    topo = meshes[0].topology
    for m in meshes[1:]:
        if m.topology is not topo:
            raise TopologyMismatchError("all meshes must share one template topology")
    geoms = [extract_geometry(m) for m in meshes]
    n = len(meshes)
    D = np.zeros((n, n))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]

    def work(ij):
        i, j = ij
        return body_distance_sq(geoms[i], geoms[j], params).distance

    threads = threads or get_threads()
    if threads > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(work, pairs))
    else:
        values = [work(p) for p in pairs]
    for (i, j), v in zip(pairs, values):
        D[i, j] = D[j, i] = v
    return LabeledDistanceMatrix(D, labels=labels, names=names)


def write_distance_csv(path, matrix):
    """Full symmetric matrix, 17 significant digits, input row order."""
    n = len(matrix.D)
    names = matrix.names or [str(i) for i in range(n)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["name"] + (["label"] if matrix.labels is not None else []) + list(names)
        w.writerow(head)
        for i in range(n):
            row = [names[i]]
            if matrix.labels is not None:
                row.append(matrix.labels[i])
            row.extend("%.17g" % v for v in matrix.D[i])
            w.writerow(row)


def read_distance_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty distance file")
    head = rows[0]
    has_label = len(head) > 1 and head[1] == "label"
    off = 2 if has_label else 1
    names, labels, data = [], [], []
    try:
        for r in rows[1:]:
            names.append(r[0])
            if has_label:
                labels.append(r[1])
            data.append([float(x) for x in r[off:]])
        D = np.array(data, dtype=float)
    except (IndexError, ValueError):
        raise ConfigError(f"{path}: malformed distance matrix") from None
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ConfigError(f"{path}: distance matrix is not square")
    return LabeledDistanceMatrix(D, labels=labels if has_label else None, names=names)
