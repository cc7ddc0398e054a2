"""Procedural registered corpora: tubes with one articulated joint.

Every generated body shares the topology of a canonical tube along ``z``.
An *identity* scales girth (x, y) and length (z); a *pose* bends the part of
the tube above the middle ring about the ``x`` axis through the joint centre.
Rings at least one ring above the joint turn rigidly, the joint ring turns by
half the angle, so faces two or more rings away from the joint are moved
rigidly and keep their induced metric.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .mesh import RegisteredMesh, TemplateTopology, extract_geometry, write_obj

BASE_SHAPES = ("cylinder", "capsule", "two-segment arm")
RADIUS = 0.5
LENGTH = 4.0
CAP_RINGS = 3


@dataclass
class SynthSpec:
    base_shape: str = "cylinder"
    rings: int = 21
    segments: int = 16
    shape_factors: list = field(default_factory=lambda: [[1.0, 1.0]])
    pose_factors: list = field(default_factory=lambda: [0.0])
    seed: int = 0
    noise: float = 0.0

    def __post_init__(self):
        if self.base_shape not in BASE_SHAPES:
            raise ConfigError(f"base_shape must be one of {BASE_SHAPES}, got {self.base_shape!r}")
        try:
            self.rings = int(self.rings)
            self.segments = int(self.segments)
        except (TypeError, ValueError):
            raise ConfigError("rings and segments must be integers") from None
        if self.rings < 5 or self.segments < 3:
            raise ConfigError("need rings >= 5 and segments >= 3")
        if not self.shape_factors or not self.pose_factors:
            raise ConfigError("shape_factors and pose_factors must be non-empty")
        sf = []
        for f in self.shape_factors:
            f = [f, f] if np.isscalar(f) else list(f)
            if len(f) != 2 or min(f) <= 0:
                raise ConfigError(f"shape factor must be a positive (girth, length) pair, got {f!r}")
            sf.append([float(f[0]), float(f[1])])
        self.shape_factors = sf
        self.pose_factors = [float(p) for p in self.pose_factors]
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")

    @classmethod
    def from_dict(cls, data):
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        try:
            return cls(**known)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self):
        return asdict(self)

    @property
    def joint_ring(self):
        return (self.rings - 1) // 2


def _radius_profile(spec, z):
    if spec.base_shape == "two-segment arm":
        # thicker upper segment tapering smoothly into the lower one
        zj = LENGTH * spec.joint_ring / (spec.rings - 1)
        t = np.clip((z - zj + 0.5) / 1.0, 0.0, 1.0)
        s = t * t * (3 - 2 * t)
        return RADIUS * (1.0 - 0.25 * s)
    return np.full_like(z, RADIUS)


def _canonical(spec):
    """Rest positions, faces and the ring index of every vertex."""
    R, S = spec.rings, spec.segments
    phi = 2 * np.pi * np.arange(S) / S
    z = LENGTH * np.arange(R) / (R - 1)
    r = _radius_profile(spec, z)
    pos = [np.stack([r[k] * np.cos(phi), r[k] * np.sin(phi), np.full(S, z[k])], axis=1) for k in range(R)]
    ring_of = [np.full(S, k) for k in range(R)]
    faces = []

    def ring_ids(k):
        return k * S + np.arange(S)

    for k in range(R - 1):
        a, b = ring_ids(k), ring_ids(k + 1)
        for j in range(S):
            j2 = (j + 1) % S
            faces.append([a[j], a[j2], b[j2]])
            faces.append([a[j], b[j2], b[j]])
    if spec.base_shape == "capsule":
        nv = R * S
        # caps: extra rings on hemispheres below ring 0 and above ring R-1, then a pole
        for end in (0, 1):
            prev = ring_ids(0) if end == 0 else ring_ids(R - 1)
            z0 = 0.0 if end == 0 else LENGTH
            sign = -1.0 if end == 0 else 1.0
            for c in range(1, CAP_RINGS + 1):
                ang = 0.5 * np.pi * c / (CAP_RINGS + 1)
                rr = RADIUS * np.cos(ang)
                zz = z0 + sign * RADIUS * np.sin(ang)
                pos.append(np.stack([rr * np.cos(phi), rr * np.sin(phi), np.full(S, zz)], axis=1))
                ring_of.append(np.full(S, -1 if end == 0 else R))
                cur = nv + np.arange(S)
                nv += S
                for j in range(S):
                    j2 = (j + 1) % S
                    if end == 0:
                        faces.append([prev[j], cur[j2], prev[j2]])
                        faces.append([prev[j], cur[j], cur[j2]])
                    else:
                        faces.append([prev[j], prev[j2], cur[j2]])
                        faces.append([prev[j], cur[j2], cur[j]])
                prev = cur
            pos.append(np.array([[0.0, 0.0, z0 + sign * RADIUS]]))
            ring_of.append(np.array([-1 if end == 0 else R]))
            pole = nv
            nv += 1
            for j in range(S):
                j2 = (j + 1) % S
                if end == 0:
                    faces.append([prev[j], pole, prev[j2]])
                else:
                    faces.append([prev[j], prev[j2], pole])
    return np.concatenate(pos), np.array(faces, dtype=np.int64), np.concatenate(ring_of)


def _bend_weights(spec, ring_of):
    kj = spec.joint_ring
    w = np.zeros(len(ring_of))
    w[ring_of == kj] = 0.5
    w[ring_of > kj] = 1.0
    return w


class Generator:
    """Shared topology and articulation data for one :class:`SynthSpec`."""

    def __init__(self, spec):
        self.spec = spec
        rest, faces, ring_of = _canonical(spec)
        self.topology = TemplateTopology.from_template(rest, faces)
        self.ring_of = ring_of
        self.weights = _bend_weights(spec, ring_of)
        self.joint_z = LENGTH * spec.joint_ring / (spec.rings - 1)

    def body(self, identity, angle_deg, noise_key=None):
        """Mesh for identity index ``identity`` bent by ``angle_deg`` degrees."""
        girth, length = self.spec.shape_factors[identity]
        p = np.array(self.topology.rest_positions)
        p[:, 0] *= girth
        p[:, 1] *= girth
        p[:, 2] *= length
        zj = self.joint_z * length
        ang = np.deg2rad(angle_deg) * self.weights
        c, s = np.cos(ang), np.sin(ang)
        y = p[:, 1].copy()
        z = p[:, 2] - zj
        p[:, 1] = c * y - s * z
        p[:, 2] = s * y + c * z + zj
        if self.spec.noise > 0 and noise_key is not None:
            rng = np.random.default_rng([self.spec.seed, *noise_key])
            p += self.spec.noise * rng.standard_normal(p.shape)
        mesh = RegisteredMesh(self.topology, p)
        extract_geometry(mesh)  # raises DegenerateFaceError for extreme factors
        return mesh


def generate_corpus(spec):
    """All identity x pose bodies, identity-major.

    Returns
    -------
    meshes : list of RegisteredMesh
    shape_labels, pose_labels : list of str
    names : list of str
    """
    gen = Generator(spec)
    meshes, shape_labels, pose_labels, names = [], [], [], []
    for i in range(len(spec.shape_factors)):
        for k, angle in enumerate(spec.pose_factors):
            meshes.append(gen.body(i, angle, noise_key=(i, k)))
            shape_labels.append(f"id{i}")
            pose_labels.append(f"pose{k}")
            names.append(f"s{i:02d}_p{k:02d}")
    return meshes, shape_labels, pose_labels, names


def generate_sequence(spec, identity, pose_start, pose_end, frames, generator=None):
    """``frames`` bodies with the bend angle linear from ``pose_start`` to ``pose_end``."""
    if frames < 1:
        raise ValueError("frames must be >= 1")
    gen = generator or Generator(spec)
    angles = np.linspace(pose_start, pose_end, frames) if frames > 1 else np.array([pose_start])
    return [gen.body(identity, a) for a in angles]


def write_corpus(out_dir, spec, sequences=()):
    """Write ``template.obj``, ``meshes/*.obj``, ``labels.csv`` and optional sequences.

    ``sequences`` items are dicts with ``identity``, ``pose_start``,
    ``pose_end`` and ``frames``; each becomes ``sequences/seq_NNN/frame_MMM.obj``.
    """
    out = Path(out_dir)
    (out / "meshes").mkdir(parents=True, exist_ok=True)
    gen = Generator(spec)
    faces = gen.topology.faces
    write_obj(out / "template.obj", gen.topology.rest_positions, faces)
    meshes, shapes, poses, names = generate_corpus(spec)
    with open(out / "labels.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file", "shape", "pose"])
        for m, name, s, p in zip(meshes, names, shapes, poses):
            write_obj(out / "meshes" / f"{name}.obj", m.positions, faces)
            w.writerow([f"{name}.obj", s, p])
    for q, seq in enumerate(sequences):
        d = out / "sequences" / f"seq_{q:03d}"
        d.mkdir(parents=True, exist_ok=True)
        frames = generate_sequence(spec, int(seq.get("identity", 0)), float(seq["pose_start"]),
                                   float(seq["pose_end"]), int(seq["frames"]), generator=gen)
        for k, m in enumerate(frames):
            write_obj(d / f"frame_{k:03d}.obj", m.positions, faces)
    (out / "synth_spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return names
