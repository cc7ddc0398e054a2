import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_rotation
from elastic_bodies import (
    ConfigError,
    MetricParams,
    NumericalError,
    RegisteredMesh,
    TopologyMismatchError,
    body_distance_sq,
    distance,
    distance_matrix,
    extract_geometry,
    normal_distance_sq,
    pointwise_metric_distance_sq,
)
from elastic_bodies.mesh import FaceGeometry
from elastic_bodies.metric import mesh_distance_sq_and_grad, read_distance_csv, write_distance_csv
from elastic_bodies.optim import check_gradient


def spd(rng, scale=1.0):
    A = rng.standard_normal((2, 2))
    return scale * (A @ A.T + 0.3 * np.eye(2))


def diagonal_derivation(d1, d2, lam):
    """Distance for diagonal g1 = diag(d1), g2 = diag(d2), by hand.

    For commuting diagonal matrices log(g1^-1 g2) is the diagonal of log
    ratios, its traceless part is +-half their difference, and tr(L0^2) is
    twice the square of that half-difference.
    """
    l = [math.log(d2[0] / d1[0]), math.log(d2[1] / d1[1])]
    half = 0.5 * (l[0] - l[1])
    tr_l0sq = 2 * half * half
    theta = min(math.pi, math.sqrt(tr_l0sq / lam) / 4)
    s1 = (d1[0] * d1[1]) ** 0.25
    s2 = (d2[0] * d2[1]) ** 0.25
    return 16 * lam * (s1 * s1 - 2 * s1 * s2 * math.cos(theta) + s2 * s2)


# --- parameters ------------------------------------------------------------------


def test_params_parse_and_validate():
    assert MetricParams.parse("1, 0.0001, 0").as_tuple() == (1.0, 1e-4, 0.0)
    assert MetricParams.parse([0, 0, 1]).as_tuple() == (0.0, 0.0, 1.0)
    for bad in ["1,1", "a,b,c", [-1, 1, 1], [0, 1, 0], [1, 0, 0], [1, -1, 1], [1, float("nan"), 1]]:
        with pytest.raises(ConfigError):
            MetricParams.parse(bad)


# --- pointwise -------------------------------------------------------------------


def test_identical_matrices(rng):
    for _ in range(20):
        g = spd(rng)
        assert pointwise_metric_distance_sq(g, g, 0.3) == 0.0


@pytest.mark.parametrize("lam", [1e-4, 1 / 16, 1.0, 7.0])
def test_conformal_4i(lam):
    assert pointwise_metric_distance_sq(np.eye(2), 4 * np.eye(2), lam) == pytest.approx(16 * lam, rel=1e-12)


def test_worked_example_against_diagonal_derivation():
    got = pointwise_metric_distance_sq(np.eye(2), np.diag([4.0, 1.0]), 1 / 16)
    ref = diagonal_derivation((1.0, 1.0), (4.0, 1.0), 1 / 16)
    assert ref == pytest.approx(1.425109, abs=1e-6)
    assert got == pytest.approx(ref, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(
    d1=st.tuples(st.floats(0.1, 10), st.floats(0.1, 10)),
    d2=st.tuples(st.floats(0.1, 10), st.floats(0.1, 10)),
    lam=st.floats(0.01, 10),
)
def test_diagonal_pairs(d1, d2, lam):
    got = pointwise_metric_distance_sq(np.diag(d1), np.diag(d2), lam)
    assert got == pytest.approx(diagonal_derivation(d1, d2, lam), rel=1e-9, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), lam=st.floats(1e-3, 10))
def test_symmetry_and_congruence_invariance(seed, lam):
    rng = np.random.default_rng(seed)
    g1, g2 = spd(rng), spd(rng)
    d = pointwise_metric_distance_sq(g1, g2, lam)
    assert d >= 0
    assert pointwise_metric_distance_sq(g2, g1, lam) == pytest.approx(d, rel=1e-9, abs=1e-13)
    # a change of frame P acts as g -> P^T g P; volume changes only rescale s
    R = np.linalg.qr(rng.standard_normal((2, 2)))[0]
    assert pointwise_metric_distance_sq(R.T @ g1 @ R, R.T @ g2 @ R, lam) == pytest.approx(d, rel=1e-9, abs=1e-13)


@pytest.mark.parametrize("k", [0.25, 1.0, 4.0, 9.0])
def test_conformal_general_path(rng, k):
    for _ in range(5):
        g1 = spd(rng)
        s1 = np.linalg.det(g1) ** 0.25
        s2 = np.linalg.det(k * g1) ** 0.25
        got = pointwise_metric_distance_sq(g1, k * g1, 0.5)
        assert got == pytest.approx(8 * (s1 - s2) ** 2, rel=1e-10, abs=1e-14)


def test_theta_saturation():
    g1 = np.eye(2)
    g2 = np.diag([50.0, 0.02])
    lam = 1e-3
    s1, s2 = 1.0, 1.0
    assert pointwise_metric_distance_sq(g1, g2, lam) == pytest.approx(16 * lam * (s1 + s2) ** 2, rel=1e-12)
    g3 = np.diag([400.0, 0.5])
    s3 = 200.0 ** 0.25
    assert pointwise_metric_distance_sq(g1, g3, lam) == pytest.approx(16 * lam * (1 + s3) ** 2, rel=1e-12)


def test_batched_input(rng):
    g1 = np.stack([spd(rng) for _ in range(6)]).reshape(2, 3, 2, 2)
    g2 = np.stack([spd(rng) for _ in range(6)]).reshape(2, 3, 2, 2)
    out = pointwise_metric_distance_sq(g1, g2, 0.7)
    assert out.shape == (2, 3)
    assert out[1, 2] == pytest.approx(pointwise_metric_distance_sq(g1[1, 2], g2[1, 2], 0.7), rel=1e-14)


def test_pointwise_errors():
    with pytest.raises(ValueError, match="symmetric"):
        pointwise_metric_distance_sq(np.array([[1.0, 0.5], [0.0, 1.0]]), np.eye(2), 1.0)
    with pytest.raises(NumericalError):
        pointwise_metric_distance_sq(np.eye(2), np.diag([1.0, -1.0]), 1.0)


def test_near_identical_matrices_are_well_conditioned(rng):
    # a relative perturbation eps must give d^2 = O(eps^2), not O(eps)
    from elastic_bodies.kernels import metric_terms

    for _ in range(20):
        g = spd(rng)
        h = g * (1 + 1e-15 * rng.standard_normal((2, 2)))
        h = 0.5 * (h + h.T)
        pa = np.array([[g[0, 0], g[0, 1], g[1, 1]]])
        pb = np.array([[h[0, 0], h[0, 1], h[1, 1]]])
        assert metric_terms(pa, pb, 0.1, False)[0][0] < 1e-26
        assert pointwise_metric_distance_sq(g, h, 0.1) < 1e-26


def test_degenerate_metric_uses_k0_branch():
    # rank-one g2: theta is taken as 0 and only the volume terms remain
    g2 = np.array([[1.0, 1.0], [1.0, 1.0]])
    assert pointwise_metric_distance_sq(np.eye(2), g2, 0.5) == pytest.approx(8.0, rel=1e-12)


# --- normals ---------------------------------------------------------------------


def test_normal_examples():
    z, y = np.array([0.0, 0, 1]), np.array([0.0, 1, 0])
    assert normal_distance_sq(z, z) == 0.0
    assert normal_distance_sq(z, y) == pytest.approx((np.pi / 2) ** 2)
    assert normal_distance_sq(z, -z) == pytest.approx(np.pi**2)
    assert normal_distance_sq(z, 3 * y) == pytest.approx((np.pi / 2) ** 2)
    with pytest.raises(ValueError):
        normal_distance_sq(z, np.zeros(3))


# --- bodies ----------------------------------------------------------------------


def test_body_self_distance_is_zero(small_gen):
    m = small_gen.body(2, 30.0)
    G = extract_geometry(m)
    br = body_distance_sq(G, G, (1, 1, 1))
    assert br.total == 0.0 and br.metric_part == 0.0 and br.normal_part == 0.0


def test_flipped_normals(small_gen):
    G = extract_geometry(small_gen.body(0, 30.0))
    flipped = FaceGeometry(G.g, -G.n, G.area_weight, topology=G.topology)
    br = body_distance_sq(G, flipped, (0, 0.5, 1))
    assert br.total == pytest.approx(np.pi**2 * G.area_weight.sum(), rel=1e-12)


def test_scaled_body(small_gen):
    m = small_gen.body(1, 60.0)
    G = extract_geometry(m)
    G2 = extract_geometry(m.with_positions(2 * m.positions))
    lam = 0.3
    br = body_distance_sq(G, G2, (1, lam, 0))
    # oracle: per-face loop of the scalar conformal formula
    s1 = np.linalg.det(G.g) ** 0.25
    ref = sum(w * 16 * lam * (a - 2 * a) ** 2 for w, a in zip(G.area_weight, s1))
    assert br.total == pytest.approx(ref, rel=1e-10)
    assert br.normal_part == pytest.approx(0.0, abs=1e-20)


def test_breakdown_totals(small_gen):
    A = extract_geometry(small_gen.body(0, 0.0))
    B = extract_geometry(small_gen.body(2, 60.0))
    p = MetricParams(0.7, 0.2, 1.3)
    br = body_distance_sq(A, B, p)
    assert br.metric_part == pytest.approx(A.area_weight @ br.metric_per_face, rel=1e-12)
    assert br.normal_part == pytest.approx(A.area_weight @ br.normal_per_face, rel=1e-12)
    assert br.total == pytest.approx(0.7 * br.metric_part + 1.3 * br.normal_part, rel=1e-12)
    assert (br.metric_per_face >= 0).all() and (br.normal_per_face >= 0).all()
    eig = pointwise_metric_distance_sq(A.g, B.g, 0.2)
    assert np.allclose(br.metric_per_face, eig, rtol=1e-9, atol=1e-14)
    assert np.allclose(br.normal_per_face, normal_distance_sq(A.n, B.n), rtol=1e-9, atol=1e-14)


def test_topology_mismatch(small_gen):
    from elastic_bodies.synth import Generator, SynthSpec

    other = Generator(SynthSpec(rings=9, segments=8))
    with pytest.raises(TopologyMismatchError):
        body_distance_sq(extract_geometry(small_gen.body(0, 0.0)), extract_geometry(other.body(0, 0.0)), (1, 1, 1))


def test_rigid_invariance_and_symmetry(small_gen, rng):
    for _ in range(10):
        a = small_gen.body(int(rng.integers(3)), rng.uniform(0, 60))
        b = small_gen.body(int(rng.integers(3)), rng.uniform(0, 60))
        R, v = random_rotation(rng), rng.uniform(-5, 5, 3)
        p = MetricParams(*rng.uniform(0.1, 1, 3))
        d = distance(a, b, p)
        assert distance(a.transformed(R, v), b.transformed(R, v), p) == pytest.approx(d, rel=1e-9)
        assert distance(b, a, p) == pytest.approx(d, rel=1e-9)


@pytest.mark.parametrize("params", [(1, 1, 0), (0, 1, 1), (0.4, 0.05, 2.0)])
def test_mesh_gradient(small_gen, rng, params):
    a = small_gen.body(1, 20.0)
    b = small_gen.body(2, 50.0)
    b = b.with_positions(b.positions + 0.02 * rng.standard_normal(b.positions.shape))

    def fun(x):
        v, ga, _ = mesh_distance_sq_and_grad(a.with_positions(x.reshape(-1, 3)), b, params)
        return v, ga.ravel()

    assert check_gradient(fun, a.positions.ravel(), h=1e-6) < 1e-4


# --- matrices --------------------------------------------------------------------


def test_distance_matrix_examples(small_gen, tmp_path):
    m = small_gen.body(0, 30.0)
    assert distance_matrix([m], (1, 1, 1)).D.tolist() == [[0.0]]
    M = distance_matrix([m, m.translated([1, 2, 3]), m.translated([-4, 0, 9])], (1, 1, 1))
    # translation perturbs positions by rounding only
    assert np.all(M.D <= 1e-12)
    n = small_gen.body(2, 60.0)
    M = distance_matrix([m, n], (1, 1, 1))
    assert M.D[0, 1] == pytest.approx(M.D[1, 0], rel=1e-10) and M.D[0, 1] > 0


def test_distance_matrix_threads_agree(small_gen):
    meshes = [small_gen.body(i, a) for i in range(3) for a in (0.0, 30.0)]
    D1 = distance_matrix(meshes, (1, 0.1, 1), threads=1).D
    D4 = distance_matrix(meshes, (1, 0.1, 1), threads=4).D
    assert np.array_equal(D1, D4)
    assert np.array_equal(D1, D1.T) and np.all(np.diag(D1) == 0)


def test_distance_csv_round_trip(small_gen, tmp_path):
    meshes = [small_gen.body(i, 10.0 * i) for i in range(3)]
    M = distance_matrix(meshes, (1, 1, 1), labels=["x", "y", "x"], names=["a", "b", "c"])
    write_distance_csv(tmp_path / "d.csv", M)
    back = read_distance_csv(tmp_path / "d.csv")
    assert np.array_equal(back.D, M.D)
    assert back.labels == ["x", "y", "x"] and back.names == ["a", "b", "c"]
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "name,label,a,b,c"
