import csv

import numpy as np
import pytest

from elastic_bodies import (
    DegenerateFaceError,
    GeodesicPath,
    MeshFormatError,
    RegisteredMesh,
    TopologyMismatchError,
    build_basis,
    compute_geodesic,
    export_path,
    load_basis,
    load_mesh,
    path_energy,
    save_basis,
)
from elastic_bodies.geodesic import DeformationBasis, PathEnergy, displacement_samples
from elastic_bodies.optim import OptimConfig, check_gradient
from elastic_bodies.synth import Generator, SynthSpec, generate_sequence


@pytest.fixture(scope="module")
def bend():
    spec = SynthSpec(rings=11, segments=8)
    gen = Generator(spec)
    seq = generate_sequence(spec, 0, 0.0, 30.0, 11, generator=gen)
    basis = build_basis([seq], tau=1, n_components=4)
    return gen, seq, basis


def linear_sequence(topo, d, n):
    return [RegisteredMesh(topo, topo.rest_positions + k * d) for k in range(n)]


# --- basis -----------------------------------------------------------------------


def test_rank_one_sequence(small_gen, rng):
    topo = small_gen.topology
    d = rng.standard_normal((topo.vertex_count, 3))
    seq = linear_sequence(topo, 0.01 * d, 6)
    X, _ = displacement_samples([seq], 1)
    s_oracle = np.linalg.svd(X, compute_uv=False)
    with pytest.warns(RuntimeWarning, match="rank 1"):
        B = build_basis([seq], tau=1, n_components=3)
    cos = abs(B.basis[0].ravel() @ d.ravel()) / np.linalg.norm(d)
    assert cos >= 1 - 1e-8
    assert np.all(B.singular_values[1:] <= 1e-10)
    assert B.singular_values[0] == pytest.approx(s_oracle[0], rel=1e-12)


def test_orthonormal_and_sorted(bend):
    _, _, B = bend
    M = B.matrix
    assert np.allclose(M @ M.T, np.eye(B.size), atol=1e-8)
    assert np.all(np.diff(B.singular_values) <= 0)


def test_centering_option(small_gen, rng):
    topo = small_gen.topology
    seqs = [linear_sequence(topo, 0.01 * rng.standard_normal((topo.vertex_count, 3)), 4) for _ in range(3)]
    X, _ = displacement_samples(seqs, 1)
    B = build_basis(seqs, tau=1, n_components=2, center=True)
    assert B.mean_removed
    s = np.linalg.svd(X - X.mean(0), compute_uv=False)
    assert np.allclose(B.singular_values, s[:2], rtol=1e-10)


def test_basis_errors(small_gen, bend, rng):
    topo = small_gen.topology
    seq = linear_sequence(topo, 0.01 * rng.standard_normal((topo.vertex_count, 3)), 4)
    with pytest.raises(ValueError, match="too short"):
        build_basis([seq], tau=4, n_components=1)
    with pytest.raises(ValueError, match="fewer than"):
        build_basis([seq], tau=1, n_components=5)
    with pytest.raises(ValueError, match="rank 0"):
        build_basis([[seq[0]] * 4], tau=1, n_components=1)
    with pytest.raises(TopologyMismatchError):
        build_basis([seq, bend[1]], tau=1, n_components=2)


def test_basis_file_round_trip(bend, tmp_path):
    _, _, B = bend
    save_basis(tmp_path / "b.bin", B)
    back = load_basis(tmp_path / "b.bin")
    assert np.array_equal(back.basis, B.basis)
    assert np.array_equal(back.singular_values, B.singular_values)
    assert back.mean_removed == B.mean_removed


def test_combine_project_inverse(bend, rng):
    _, _, B = bend
    c = rng.standard_normal((4, B.size))
    assert np.allclose(B.project(B.combine(c)), c, atol=1e-12)


# --- energy ----------------------------------------------------------------------


def test_constant_path_energy_is_zero(bend):
    gen, seq, B = bend
    f = seq[3]
    path = GeodesicPath(f, f, B, 5, np.zeros((4, B.size)))
    E, grad = path_energy(path, (1, 1, 1))
    assert E == 0.0
    assert grad.shape == (4, B.size)


def test_translated_endpoint_energy(bend):
    _, seq, B = bend
    f = seq[3]
    path = GeodesicPath(f, f.translated([0.5, -2.0, 1.0]), B, 5, np.zeros((4, B.size)))
    assert path.energy((1, 1, 1)) <= 1e-20


def test_perturbed_constant_path_positive(bend, rng):
    _, seq, B = bend
    f = seq[3]
    path = GeodesicPath(f, f, B, 5, 0.01 * rng.standard_normal((4, B.size)))
    assert path.energy((1, 1, 1)) > 0


def test_energy_formula(bend):
    # oracle: T * sum of consecutive squared distances computed pair by pair
    from elastic_bodies import body_distance_sq, extract_geometry

    _, seq, B = bend
    alpha = 0.02 * np.arange(3 * B.size).reshape(3, B.size) / B.size
    path = GeodesicPath(seq[0], seq[-1], B, 4, alpha)
    frames = path.frames
    ref = 4 * sum(
        body_distance_sq(extract_geometry(a), extract_geometry(b), (1, 0.5, 2)).total for a, b in zip(frames, frames[1:])
    )
    assert path.energy((1, 0.5, 2)) == pytest.approx(ref, rel=1e-12)
    assert np.array_equal(frames[0].positions, seq[0].positions)
    assert np.array_equal(frames[-1].positions, seq[-1].positions)


@pytest.mark.parametrize("params", [(1, 1, 0), (0, 1, 1), (1, 0.1, 1)])
def test_energy_gradient(bend, rng, params):
    _, seq, B = bend
    E = PathEnergy(seq[0], seq[-1], B, params, steps=4)
    for _ in range(2):
        x = 0.05 * rng.standard_normal(E.dimension)
        assert check_gradient(lambda y: E(y), x, h=1e-6) <= 1e-4


def test_collapsing_frame_reports_step(bend):
    _, seq, _ = bend
    # a one-field basis that moves every vertex to the origin at coefficient |p|
    field = -seq[0].positions
    scale = np.linalg.norm(field)
    energy = PathEnergy(seq[0], seq[0], DeformationBasis(field[None] / scale, [1.0]), (1, 1, 1), 4)
    x = np.array([0.0, scale, 0.0])
    with pytest.raises(DegenerateFaceError) as info:
        energy(x)
    assert info.value.step == 2
    val, grad = energy.objective(x)
    assert val == np.inf and grad.shape == (3,)


# --- optimisation ----------------------------------------------------------------


def test_identical_endpoints(bend):
    _, seq, B = bend
    path = compute_geodesic(seq[2], seq[2], B, (1, 1, 1), steps=4)
    assert path.report.converged and path.report.iterations == 0
    assert np.all(path.alpha == 0) and path.report.final_value == 0.0


def test_translated_endpoints(bend):
    _, seq, B = bend
    path = compute_geodesic(seq[2], seq[2].translated([1.0, 0.0, 0.0]), B, (1, 1, 1), steps=4)
    assert path.report.final_value <= 1e-20
    assert np.abs(path.alpha).max() <= 1e-8


@pytest.fixture(scope="module")
def bend_geodesic(bend):
    _, seq, B = bend
    return compute_geodesic(seq[0], seq[-1], B, (1, 1, 0), steps=6, config=OptimConfig(max_iter=300))


def test_bend_geodesic(bend, bend_geodesic):
    _, seq, _ = bend
    rep = bend_geodesic.report
    h = rep.value_history
    assert rep.final_value < h[0]
    assert all(b <= a for a, b in zip(h, h[1:]))
    frames = bend_geodesic.frame_positions()
    assert np.array_equal(frames[0], seq[0].positions)
    assert np.array_equal(frames[-1], seq[-1].positions)
    assert bend_geodesic.energy((1, 1, 0)) == pytest.approx(rep.final_value, rel=1e-12)


def test_reversal_symmetry(bend, bend_geodesic):
    _, seq, B = bend
    back = compute_geodesic(seq[-1], seq[0], B, (1, 1, 0), steps=6, config=OptimConfig(max_iter=300))
    assert back.report.final_value == pytest.approx(bend_geodesic.report.final_value, rel=0.02)


def test_step_refinement(bend):
    # small deformation: T and 2T energies approximate the same integral
    _, seq, B = bend
    e = {}
    for T in (4, 8):
        e[T] = compute_geodesic(seq[0], seq[3], B, (1, 1, 1), steps=T, config=OptimConfig(max_iter=200))
    lin = {T: e[T].report.value_history[0] for T in e}
    assert lin[8] == pytest.approx(lin[4], rel=0.10)
    assert e[8].report.final_value == pytest.approx(e[4].report.final_value, rel=0.10)


def test_export(bend, bend_geodesic, tmp_path):
    _, seq, B = bend
    short = compute_geodesic(seq[0], seq[4], B, (1, 1, 0), steps=2, config=OptimConfig(max_iter=20))
    files = export_path(short, tmp_path / "out")
    assert [f.name for f in files] == ["frame_000.obj", "frame_001.obj", "frame_002.obj"]
    topo = seq[0].topology
    for f, p in zip(files, short.frame_positions()):
        assert np.allclose(load_mesh(f, topo).positions, p, atol=1e-6)
    with open(tmp_path / "out" / "energy.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iteration", "energy"]
    assert [float(r[1]) for r in rows[1:]] == short.report.value_history
    with pytest.raises(MeshFormatError):
        export_path(short, "")
