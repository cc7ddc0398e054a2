"""Deformation bases and discrete geodesic paths between registered bodies.

A path with ``T`` intervals has frames ``f(t_i)``, ``t_i = i / T``,

    f(t_i) = (1 - t_i) f0 + t_i f1 + sum_j alpha[i - 1, j] D_j,   i = 1 .. T-1,

with the endpoints pinned. Its energy is ``T * sum_i d(f(t_i), f(t_i+1))^2``
where ``d`` is the elastic distance; for a smooth path this converges to the
integral of the squared speed, so minimising it over ``alpha`` approximates a
geodesic.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateFaceError, InputError, MeshFormatError, TopologyMismatchError
from .mesh import RegisteredMesh, extract_geometry, geometry_backprop, write_obj
from .metric import MetricParams, pair_value_and_grads
from .optim import OptimConfig, OptimReport, minimize

DEFAULT_STEPS = 10
DEFAULT_BASIS_SIZE = 100


@dataclass(frozen=True, eq=False)
class DeformationBasis:
    """Orthonormal vertex-displacement fields, shape ``(N_D, V, 3)``."""

    basis: np.ndarray
    singular_values: np.ndarray
    mean_removed: bool = False

    def __post_init__(self):
        b = np.ascontiguousarray(self.basis, dtype=float)
        if b.ndim != 3 or b.shape[2] != 3 or b.shape[0] < 1:
            raise ValueError(f"basis must have shape (N_D, V, 3) with N_D >= 1, got {b.shape}")
        object.__setattr__(self, "basis", b)
        object.__setattr__(self, "singular_values", np.asarray(self.singular_values, dtype=float))

    @property
    def size(self):
        return self.basis.shape[0]

    @property
    def vertex_count(self):
        return self.basis.shape[1]

    @property
    def matrix(self):
        """Basis as an ``(N_D, 3V)`` matrix with orthonormal rows."""
        return self.basis.reshape(self.size, -1)

    def combine(self, coeffs):
        """``sum_j coeffs[..., j] D_j`` with shape ``(..., V, 3)``."""
        coeffs = np.asarray(coeffs, dtype=float)
        out = coeffs @ self.matrix
        return out.reshape(coeffs.shape[:-1] + (self.vertex_count, 3))

    def project(self, field_):
        """Coefficients of a ``(..., V, 3)`` field (or covector) on the basis."""
        field_ = np.asarray(field_, dtype=float)
        lead = field_.shape[:-2]
        return (field_.reshape(lead + (-1,)) @ self.matrix.T)

    def truncated(self, n):
        return DeformationBasis(self.basis[:n], self.singular_values[:n], self.mean_removed)


def displacement_samples(sequences, tau):
    """Lag-``tau`` differences ``m[k tau + tau] - m[k tau]`` from each sequence."""
    if tau < 1:
        raise ValueError("frame lag tau must be >= 1")
    samples = []
    topo = None
    for seq in sequences:
        seq = list(seq)
        if len(seq) <= tau:
            raise ValueError(f"sequence of length {len(seq)} is too short for lag tau={tau}")
        for m in seq:
            if topo is None:
                topo = m.topology
            elif m.topology is not topo and not m.topology.matches(topo.faces):
                raise TopologyMismatchError("sequences must share one template topology")
        for k in range(0, len(seq) - tau, tau):
            samples.append((seq[k + tau].positions - seq[k].positions).ravel())
    if not samples:
        raise ValueError("no displacement samples")
    return np.array(samples), topo


def build_basis(sequences, tau=10, n_components=DEFAULT_BASIS_SIZE, center=False, rank_tol=1e-10):
    """Principal deformation directions of lag-``tau`` motion differences.

    Parameters
    ----------
    sequences : list of list of RegisteredMesh
    tau : int
        Frame lag between the two meshes of a difference sample.
    n_components : int
        Number of basis fields ``N_D``.
    center : bool
        Subtract the sample mean before the decomposition. Off by default: a
        monotone motion (one joint bending one way) has its main direction in
        the mean, and centring would discard it.
    rank_tol : float
        Singular values below ``rank_tol * max(1, s_max)`` count as zero.

    Returns
    -------
    DeformationBasis
        Singular values in decreasing order.
    """
    X, topo = displacement_samples(sequences, tau)
    if n_components < 1:
        raise ValueError("n_components must be >= 1")
    if len(X) < n_components:
        raise ValueError(f"{len(X)} displacement samples are fewer than the {n_components} requested components")
    if center:
        X = X - X.mean(axis=0)
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    if s.size == 0 or s[0] <= rank_tol:
        raise ValueError("displacement samples have rank 0; cannot build a basis")
    s = np.where(s > rank_tol * max(1.0, s[0]), s, 0.0)
    rank = int(np.count_nonzero(s))
    if rank < n_components:
        warnings.warn(
            f"displacement samples have rank {rank}; the last {n_components - rank} of {n_components} "
            "basis fields are arbitrary orthonormal directions",
            RuntimeWarning,
            stacklevel=2,
        )
    V = topo.vertex_count
    return DeformationBasis(vt[:n_components].reshape(n_components, V, 3), s[:n_components], mean_removed=center)


def save_basis(path, basis):
    """One JSON header line, then the little-endian float64 fields."""
    header = {
        "format": "elastic-bodies-basis",
        "version": 1,
        "n_components": basis.size,
        "vertex_count": basis.vertex_count,
        "singular_values": [float(v) for v in basis.singular_values],
        "mean_removed": bool(basis.mean_removed),
        "dtype": "<f8",
        "order": "component, vertex, xyz",
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(basis.basis.astype("<f8").tobytes())


def load_basis(path):
    try:
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode("utf-8"))
            data = fh.read()
    except (OSError, ValueError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot read basis file {path}: {exc}") from exc
    try:
        n, v = int(header["n_components"]), int(header["vertex_count"])
        arr = np.frombuffer(data, dtype="<f8")
        if arr.size != n * v * 3:
            raise ValueError(f"expected {n * v * 3} values, found {arr.size}")
        return DeformationBasis(arr.reshape(n, v, 3).copy(), header["singular_values"], bool(header.get("mean_removed")))
    except (KeyError, ValueError) as exc:
        raise InputError(f"malformed basis file {path}: {exc}") from exc


@dataclass(eq=False)
class GeodesicPath:
    """Pinned endpoints plus interior coefficients ``alpha`` of shape ``(T-1, N_D)``."""

    f0: RegisteredMesh
    f1: RegisteredMesh
    basis: DeformationBasis
    steps: int
    alpha: np.ndarray
    report: OptimReport | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.steps < 2:
            raise ValueError("a path needs at least T = 2 steps")
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(self.steps - 1, self.basis.size)

    @property
    def times(self):
        return np.arange(self.steps + 1) / self.steps

    def frame_positions(self):
        """Positions of all ``T + 1`` frames, shape ``(T + 1, V, 3)``."""
        return _frame_positions(self.f0.positions, self.f1.positions, self.basis, self.alpha, self.steps)

    @property
    def frames(self):
        topo = self.f0.topology
        return [RegisteredMesh(topo, p) for p in self.frame_positions()]

    def energy(self, params):
        return path_energy(self, params)[0]


def _frame_positions(p0, p1, basis, alpha, T):
    t = (np.arange(1, T) / T)[:, None, None]
    out = np.empty((T + 1,) + p0.shape)
    out[0] = p0
    out[T] = p1
    # p0 + t (p1 - p0) == (1 - t) p0 + t p1, and stays exact when p1 == p0
    out[1:T] = p0 + t * (p1 - p0) + basis.combine(alpha)
    return out


class PathEnergy:
    """Energy of a path as a function of its flattened interior coefficients.

    Evaluation order: extract ``(g, n)`` for every frame, evaluate the pair
    terms of the ``T`` consecutive frame pairs, accumulate the per-face
    gradients on each interior frame, pull them back to vertex positions and
    project onto the basis.
    """

    def __init__(self, f0, f1, basis, params, steps=DEFAULT_STEPS):
        if f0.topology is not f1.topology and not f0.topology.matches(f1.topology.faces):
            raise TopologyMismatchError("path endpoints must share one template topology")
        if basis.vertex_count != f0.topology.vertex_count:
            raise TopologyMismatchError(
                f"basis has {basis.vertex_count} vertices, meshes have {f0.topology.vertex_count}"
            )
        self.f0, self.f1 = f0, f1
        self.basis = basis
        self.params = MetricParams.parse(params)
        self.steps = int(steps)
        if self.steps < 2:
            raise ValueError("a path needs at least T = 2 steps")
        self.topology = f0.topology
        self._g_end = (extract_geometry(f0, step=0), extract_geometry(f1, step=self.steps))

    @property
    def dimension(self):
        return (self.steps - 1) * self.basis.size

    def __call__(self, x, want_grad=True):
        T = self.steps
        alpha = np.asarray(x, dtype=float).reshape(T - 1, self.basis.size)
        pos = _frame_positions(self.f0.positions, self.f1.positions, self.basis, alpha, T)
        meshes = [None] + [RegisteredMesh(self.topology, pos[i]) for i in range(1, T)] + [None]
        geoms = [self._g_end[0]] + [extract_geometry(meshes[i], step=i) for i in range(1, T)] + [self._g_end[1]]
        nf = self.topology.face_count
        if want_grad:
            dg = np.zeros((T + 1, nf, 3))
            dn = np.zeros((T + 1, nf, 3))
        E = 0.0
        for i in range(T):
            v, (ga, na), (gb, nb) = pair_value_and_grads(geoms[i], geoms[i + 1], self.params, want_grad, weight=T)
            E += v
            if want_grad:
                if ga is not None:
                    dg[i] += ga
                    dg[i + 1] += gb
                    dn[i] += na
                    dn[i + 1] += nb
        if not want_grad:
            return E, None
        grad_pos = np.empty((T - 1,) + self.f0.positions.shape)
        for i in range(1, T):
            grad_pos[i - 1] = geometry_backprop(meshes[i], geoms[i], dg[i], dn[i])
        return E, self.basis.project(grad_pos)

    def objective(self, x):
        """Like ``__call__`` but returns ``inf`` for a path that collapses a face."""
        try:
            E, g = self(x)
        except DegenerateFaceError:
            return np.inf, np.full(self.dimension, np.nan)
        return E, g.ravel()


def path_energy(path, params):
    """Discrete path energy and its gradient w.r.t. ``alpha`` (shape ``(T-1, N_D)``)."""
    energy = PathEnergy(path.f0, path.f1, path.basis, params, path.steps)
    E, g = energy(path.alpha.ravel())
    return E, g


def compute_geodesic(f0, f1, basis, params, steps=DEFAULT_STEPS, config=None):
    """Minimise the path energy from the linear path (``alpha = 0``).

    Returns
    -------
    GeodesicPath
        With ``report`` set to the optimiser's :class:`OptimReport`.
    """
    energy = PathEnergy(f0, f1, basis, params, steps)
    x0 = np.zeros(energy.dimension)
    report = minimize(energy.objective, x0, config or OptimConfig())
    return GeodesicPath(f0, f1, basis, steps, report.final_point, report=report)


def export_path(path, directory):
    """Write ``frame_000.obj`` ... ``frame_T.obj`` and ``energy.csv``.

    ``energy.csv`` has one ``iteration,energy`` row per accepted optimiser
    step (row 0 is the linear path).
    """
    if not str(directory):
        raise MeshFormatError("output directory path is empty")
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise MeshFormatError(f"cannot create {directory}: {exc}") from exc
    faces = path.f0.topology.faces
    width = max(3, len(str(path.steps)))
    written = []
    for i, p in enumerate(path.frame_positions()):
        out = directory / f"frame_{i:0{width}d}.obj"
        write_obj(out, p, faces)
        written.append(out)
    history = path.report.value_history if path.report is not None else []
    with open(directory / "energy.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "energy"])
        for k, v in enumerate(history):
            w.writerow([k, "%.17g" % v])
    return written
