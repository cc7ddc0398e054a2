"""Registered triangle meshes and their per-face differential geometry.

Every mesh handled by this package is a set of vertex positions over one
shared :class:`TemplateTopology`. Correspondence is purely positional: face
``k`` of one body corresponds to face ``k`` of every other body, so face order
in input files is a hard contract.

The discrete geometry is piecewise constant per face. For each template face
an orthonormal in-plane frame is fixed once (origin at the first corner, the
``u`` axis along the first edge); the induced metric of an embedded face is
then the Gram matrix of the two tangent vectors ``f_u``, ``f_v`` expressed in
that frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DegenerateFaceError, MeshFormatError, TopologyMismatchError

DEGENERATE_LENGTH = 1e-12
DEGENERATE_METRIC_RTOL = 1e-12


@dataclass(frozen=True)
class FaceFrames:
    """Reference quantities of each template face.

    ``l1`` is the first edge length, ``height`` the distance of the third
    corner from the line through the first edge and ``theta`` the corner
    angle at the first vertex. ``u3`` is the projection of the second edge on
    the first; it carries the sign that ``theta`` alone loses for obtuse
    corners.
    """

    l1: np.ndarray
    height: np.ndarray
    theta: np.ndarray
    u3: np.ndarray

    @property
    def inv_l1(self):
        return 1.0 / self.l1

    @property
    def cot_over_l1(self):
        # u3 / (v3 * u2): coefficient of (q1 - q2) in f_v
        return self.u3 / (self.height * self.l1)

    @property
    def inv_height(self):
        return 1.0 / self.height


def face_frames(template_positions, faces):
    """Compute ``(l1, H, theta)`` for every face of the template.

    Parameters
    ----------
    template_positions : ndarray, shape (V, 3)
    faces : ndarray of int, shape (F, 3), or a TemplateTopology

    Returns
    -------
    FaceFrames

    Raises
    ------
    DegenerateFaceError
        If some face has ``l1`` or ``H`` below ``1e-12``.
    """
    p = np.asarray(template_positions, dtype=float)
    faces = np.asarray(getattr(faces, "faces", faces))
    e1 = p[faces[:, 1]] - p[faces[:, 0]]
    e2 = p[faces[:, 2]] - p[faces[:, 0]]
    l1 = np.linalg.norm(e1, axis=1)
    cross = np.linalg.norm(np.cross(e1, e2), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        height = cross / l1
        u3 = np.einsum("ij,ij->i", e1, e2) / l1
    bad = ~((l1 > DEGENERATE_LENGTH) & (height > DEGENERATE_LENGTH))
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise DegenerateFaceError(f"degenerate face {k} in template (l1={l1[k]:.3g}, H={height[k]:.3g})", face=k)
    theta = np.arctan2(height, u3)
    return FaceFrames(l1=l1, height=height, theta=theta, u3=u3)


@dataclass(frozen=True, eq=False)
class TemplateTopology:
    """Face list shared by all registered meshes, with its template frames.

    Instances are immutable and safe to share read-only across threads.
    """

    faces: np.ndarray
    vertex_count: int
    frames: FaceFrames
    face_area: np.ndarray
    rest_positions: np.ndarray = field(repr=False)

    @classmethod
    def from_template(cls, positions, faces):
        positions = np.array(positions, dtype=float)
        faces = np.array(faces, dtype=np.int64)
        if positions.ndim != 2 or positions.shape[1] != 3:
            raise MeshFormatError(f"positions must have shape (V, 3), got {positions.shape}")
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise MeshFormatError("non-triangular face")
        if len(faces) == 0:
            raise MeshFormatError("mesh has no faces")
        if faces.min() < 0 or faces.max() >= len(positions):
            raise MeshFormatError("face index out of range")
        frames = face_frames(positions, faces)
        area = 0.5 * frames.l1 * frames.height
        positions.flags.writeable = False
        faces.flags.writeable = False
        for arr in (frames.l1, frames.height, frames.theta, frames.u3, area):
            arr.flags.writeable = False
        return cls(faces=faces, vertex_count=len(positions), frames=frames, face_area=area, rest_positions=positions)

    @property
    def face_count(self):
        return len(self.faces)

    def matches(self, faces):
        faces = np.asarray(faces)
        return faces.shape == self.faces.shape and np.array_equal(faces, self.faces)

    def _kernel_frames(self):
        fr = self.frames
        return fr.inv_l1, fr.cot_over_l1, fr.inv_height


@dataclass(frozen=True, eq=False)
class RegisteredMesh:
    """Vertex positions over a shared template topology."""

    topology: TemplateTopology
    positions: np.ndarray

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=float)
        if pos.shape != (self.topology.vertex_count, 3):
            raise TopologyMismatchError(
                f"expected positions of shape ({self.topology.vertex_count}, 3), got {pos.shape}"
            )
        object.__setattr__(self, "positions", pos)

    def with_positions(self, positions):
        return RegisteredMesh(self.topology, positions)

    def translated(self, v):
        return self.with_positions(self.positions + np.asarray(v, dtype=float))

    def transformed(self, rotation, translation=(0.0, 0.0, 0.0)):
        R = np.asarray(rotation, dtype=float)
        return self.with_positions(self.positions @ R.T + np.asarray(translation, dtype=float))


@dataclass(frozen=True, eq=False)
class FaceGeometry:
    """Per-face induced metric ``g`` (F, 2, 2), unit normal ``n`` (F, 3) and
    template area weights (F,).

    The tangent vectors and cross-product norms are kept so that gradients can
    be pulled back to vertex positions without recomputing them.
    """

    g: np.ndarray
    n: np.ndarray
    area_weight: np.ndarray
    topology: TemplateTopology | None = field(default=None, repr=False)
    packed: np.ndarray | None = field(default=None, repr=False)
    fu: np.ndarray | None = field(default=None, repr=False)
    fv: np.ndarray | None = field(default=None, repr=False)
    cross_norm: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.packed is None:
            g = np.asarray(self.g, dtype=float)
            object.__setattr__(self, "packed", np.ascontiguousarray(np.stack([g[:, 0, 0], g[:, 0, 1], g[:, 1, 1]], axis=1)))

    def __len__(self):
        return len(self.area_weight)


def _unpack(g3):
    g = np.empty((len(g3), 2, 2))
    g[:, 0, 0] = g3[:, 0]
    g[:, 0, 1] = g[:, 1, 0] = g3[:, 1]
    g[:, 1, 1] = g3[:, 2]
    return g


def _raw_geometry(mesh):
    topo = mesh.topology
    return kernels.face_geometry(mesh.positions, topo.faces, *topo._kernel_frames())


def _check_metric(g3, step=None):
    det = g3[:, 0] * g3[:, 2] - g3[:, 1] ** 2
    tr = g3[:, 0] + g3[:, 2]
    bad = ~(det > DEGENERATE_METRIC_RTOL * tr * tr)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        where = f" at step {step}" if step is not None else ""
        raise DegenerateFaceError(f"degenerate embedded face {k}{where} (det g = {det[k]:.3g})", face=k, step=step)


def _check_normals(crn, step=None):
    bad = ~(crn > 0.0) | ~np.isfinite(crn)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        where = f" at step {step}" if step is not None else ""
        raise DegenerateFaceError(f"zero-area embedded face {k}{where}", face=k, step=step)


def first_fundamental_form(mesh):
    """Per-face first fundamental form in the template face frames.

    Returns
    -------
    ndarray, shape (F, 2, 2)
    """
    _, _, g3, _, _ = _raw_geometry(mesh)
    _check_metric(g3)
    return _unpack(g3)


def face_normals(mesh):
    """Per-face unit normals ``(q2 - q1) x (q3 - q1) / |.|``."""
    _, _, _, n, crn = _raw_geometry(mesh)
    _check_normals(crn)
    return n


def extract_geometry(mesh, step=None):
    """Map a registered mesh to its per-face ``(g, n)`` representation."""
    fu, fv, g3, n, crn = _raw_geometry(mesh)
    _check_normals(crn, step)
    _check_metric(g3, step)
    return FaceGeometry(
        g=_unpack(g3),
        n=n,
        area_weight=mesh.topology.face_area,
        topology=mesh.topology,
        packed=g3,
        fu=fu,
        fv=fv,
        cross_norm=crn,
    )


def geometry_backprop(mesh, geom, dg, dn):
    """Gradient w.r.t. vertex positions given gradients w.r.t. packed ``g`` and ``n``."""
    topo = mesh.topology
    return kernels.backprop(
        mesh.positions, topo.faces, *topo._kernel_frames(), geom.fu, geom.fv, geom.n, geom.cross_norm,
        np.ascontiguousarray(dg), np.ascontiguousarray(dn),
    )


# --------------------------------------------------------------------------
# file I/O

def _read_obj(path):
    verts, faces = [], []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            tag = parts[0]
            try:
                if tag == "v":
                    verts.append([float(x) for x in parts[1:4]])
                    if len(verts[-1]) != 3:
                        raise ValueError("vertex needs 3 coordinates")
                elif tag == "f":
                    idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                    if len(idx) != 3:
                        raise MeshFormatError(f"{path}:{lineno}: non-triangular face ({len(idx)} vertices)")
                    faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
            except ValueError as exc:
                raise MeshFormatError(f"{path}:{lineno}: cannot parse {line.strip()!r}: {exc}") from None
    return np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _read_ply(path):
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise MeshFormatError(f"{path}: missing 'ply' magic")
        fmt = None
        elements = []  # [name, count, [(prop, dtype) | (prop, count_dtype, item_dtype)]]
        while True:
            line = fh.readline()
            if not line:
                raise MeshFormatError(f"{path}: truncated header")
            tok = line.decode("ascii", "replace").split()
            if not tok or tok[0] in ("comment", "obj_info"):
                continue
            if tok[0] == "end_header":
                break
            try:
                if tok[0] == "format":
                    fmt = tok[1]
                elif tok[0] == "element":
                    elements.append([tok[1], int(tok[2]), []])
                elif tok[0] == "property":
                    if tok[1] == "list":
                        elements[-1][2].append((tok[4], _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]]))
                    else:
                        elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
            except (IndexError, KeyError, ValueError):
                raise MeshFormatError(f"{path}: bad header line {line!r}") from None
        body = fh.read()

    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise MeshFormatError(f"{path}: unsupported PLY format {fmt!r}")
    verts = faces = None
    if fmt == "ascii":
        tokens = body.split()
        pos = 0
        for name, count, props in elements:
            rows = []
            for _ in range(count):
                row = []
                for prop in props:
                    if len(prop) == 3:
                        k = int(tokens[pos])
                        row.append([float(t) for t in tokens[pos + 1:pos + 1 + k]])
                        pos += 1 + k
                    else:
                        row.append(float(tokens[pos]))
                        pos += 1
                rows.append(row)
            if name == "vertex":
                names = [p[0] for p in props]
                try:
                    cols = [names.index(c) for c in "xyz"]
                except ValueError:
                    raise MeshFormatError(f"{path}: vertex element lacks x/y/z") from None
                verts = np.array([[r[c] for c in cols] for r in rows], dtype=float).reshape(-1, 3)
            elif name == "face":
                li = [i for i, p in enumerate(props) if len(p) == 3][0]
                lists = [r[li] for r in rows]
                if any(len(f) != 3 for f in lists):
                    raise MeshFormatError(f"{path}: non-triangular face")
                faces = np.array(lists, dtype=np.int64).reshape(-1, 3)
    else:
        endian = "<" if fmt == "binary_little_endian" else ">"
        offset = 0
        for name, count, props in elements:
            if all(len(p) == 2 for p in props):
                dt = np.dtype([(p[0], endian + p[1]) for p in props])
                arr = np.frombuffer(body, dtype=dt, count=count, offset=offset)
                offset += dt.itemsize * count
                if name == "vertex":
                    verts = np.stack([arr[c].astype(float) for c in "xyz"], axis=1)
                continue
            # list properties: assume triangles and validate the counts
            fields = []
            for p in props:
                if len(p) == 3:
                    fields.append((p[0] + "_n", endian + p[1]))
                    fields.append((p[0], endian + p[2], (3,)))
                else:
                    fields.append((p[0], endian + p[1]))
            dt = np.dtype(fields)
            if offset + dt.itemsize * count > len(body):
                raise MeshFormatError(f"{path}: non-triangular face or truncated data")
            arr = np.frombuffer(body, dtype=dt, count=count, offset=offset)
            offset += dt.itemsize * count
            lname = [p[0] for p in props if len(p) == 3][0]
            if np.any(arr[lname + "_n"] != 3):
                raise MeshFormatError(f"{path}: non-triangular face")
            if name == "face":
                faces = arr[lname].astype(np.int64)
    if verts is None or faces is None:
        raise MeshFormatError(f"{path}: PLY needs vertex and face elements")
    return verts, faces


def read_mesh_arrays(path):
    """Read ``(positions, faces)`` from an OBJ or PLY file."""
    path = Path(path)
    suffix = path.suffix.lower()
    try:
        if suffix == ".obj":
            return _read_obj(path)
        if suffix == ".ply":
            return _read_ply(path)
    except OSError as exc:
        raise MeshFormatError(f"cannot read {path}: {exc}") from exc
    raise MeshFormatError(f"{path}: unsupported mesh format {suffix!r}")


def load_mesh(path, topology=None):
    """Load an OBJ/PLY file as a :class:`RegisteredMesh`.

    Without ``topology`` the file itself becomes the template. With a
    topology, the file's face list must be identical to it (same triples in
    the same order).
    """
    positions, faces = read_mesh_arrays(path)
    if topology is None:
        topology = TemplateTopology.from_template(positions, faces)
    else:
        if len(positions) != topology.vertex_count:
            raise TopologyMismatchError(
                f"{path}: vertex count {len(positions)} != template vertex count {topology.vertex_count}"
            )
        if len(faces) != topology.face_count:
            raise TopologyMismatchError(f"{path}: face count {len(faces)} != template face count {topology.face_count}")
        if not topology.matches(faces):
            raise TopologyMismatchError(f"{path}: face list differs from the template (ordering or indices)")
    return RegisteredMesh(topology, positions)


def write_obj(path, positions, faces, header=None):
    """Write an ASCII OBJ with coordinates at 9 significant digits."""
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    lines.extend("v %.9g %.9g %.9g" % tuple(p) for p in np.asarray(positions, dtype=float))
    lines.extend("f %d %d %d" % tuple(f + 1) for f in np.asarray(faces))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_mesh(path, mesh):
    write_obj(path, mesh.positions, mesh.topology.faces)


def list_mesh_files(directory):
    """Mesh files (OBJ/PLY) of a directory in sorted name order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise MeshFormatError(f"{directory} is not a directory")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in (".obj", ".ply") and p.is_file())


def load_meshes(paths, topology=None):
    """Load several files onto one topology (the first file by default)."""
    meshes = []
    for p in paths:
        m = load_mesh(p, topology)
        topology = m.topology
        meshes.append(m)
    return meshes
