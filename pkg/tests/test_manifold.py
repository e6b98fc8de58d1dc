import numpy as np
import pytest
import scipy.linalg
import scipy.optimize
from hypothesis import given, settings
from hypothesis import strategies as st

from midigap.errors import AntipodalError, ConvergenceError, SpecMismatchError
from midigap.manifold import (
    Euclidean,
    ManifoldSpec,
    UnitQuaternion,
    exp_map,
    frechet_mean,
    geodesic_distance,
    log_map,
    point,
)
from midigap.digap import quat_to_matrix

from conftest import axis_angle_quat, random_points, random_quats

POSE = ManifoldSpec.pose()
QUAT = ManifoldSpec.quaternion()
IDENTITY = np.array([1.0, 0, 0, 0])


def skew_to_vec(S):
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def matrix_log_vec(q):
    """Rotation vector from a numeric matrix logarithm (independent oracle)."""
    return skew_to_vec(np.real(scipy.linalg.logm(quat_to_matrix(q))))


def rotation_angle(qa, qb):
    Ra, Rb = quat_to_matrix(qa), quat_to_matrix(qb)
    c = (np.trace(Ra.T @ Rb) - 1.0) / 2.0
    return np.arccos(np.clip(c, -1.0, 1.0))


def test_spec_dimensions():
    spec = ManifoldSpec((Euclidean(2), UnitQuaternion(), Euclidean(1), UnitQuaternion()))
    assert spec.ambient_dim == 2 + 4 + 1 + 4
    assert spec.tangent_dim == 2 + 3 + 1 + 3
    assert POSE.power(5).tangent_dim == 30
    assert ManifoldSpec.from_json(spec.to_json()) == spec


def test_log_identity_case(rng):
    for x in random_points(POSE, rng, 20):
        p = point(POSE, x)
        assert np.allclose(log_map(p, p).coords, 0.0, atol=1e-15)


def test_log_euclidean_is_subtraction():
    spec = ManifoldSpec.euclidean(3)
    v = log_map(point(spec, [0, 0, 0]), point(spec, [1, 2, 3]))
    assert np.array_equal(v.coords, [1.0, 2.0, 3.0])


def test_log_quarter_turn_about_z():
    q90 = axis_angle_quat([0, 0, 1], np.pi / 2)
    v = log_map(point(QUAT, IDENTITY), point(QUAT, q90)).coords
    assert np.allclose(v, [0, 0, np.pi / 2], atol=1e-14)
    assert np.allclose(v, matrix_log_vec(q90), atol=1e-9)


def test_log_matches_matrix_log_oracle(rng):
    qs = random_quats(rng, 50)
    base = point(QUAT, IDENTITY)
    for q in qs:
        if rotation_angle(IDENTITY, q) > 3.0:
            continue
        v = log_map(base, point(QUAT, q)).coords
        assert np.allclose(v, matrix_log_vec(q), atol=1e-8)


def test_exp_half_turn_about_z():
    r = exp_map(point(QUAT, IDENTITY), np.array([0, 0, np.pi]))
    expected = scipy.linalg.expm(np.array([[0, -np.pi, 0], [np.pi, 0, 0], [0, 0, 0]]))
    assert np.allclose(quat_to_matrix(r.coords), expected, atol=1e-12)
    assert abs(abs(r.coords[3]) - 1.0) < 1e-12


def test_exp_zero_is_base(rng):
    for x in random_points(POSE, rng, 10):
        p = point(POSE, x)
        assert np.allclose(exp_map(p, np.zeros(6)).coords, p.coords, atol=1e-15)


def test_exp_matches_matrix_exp(rng):
    for v in rng.normal(size=(30, 3)):
        q = exp_map(point(QUAT, IDENTITY), v).coords
        S = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
        assert np.allclose(quat_to_matrix(q), scipy.linalg.expm(S), atol=1e-10)


def test_round_trip_1000_pairs(rng):
    spec = ManifoldSpec((Euclidean(3), UnitQuaternion(), UnitQuaternion()))
    A = random_points(spec, rng, 1000)
    B = random_points(spec, rng, 1000)
    back = spec.exp(A, spec.log(A, B))
    assert np.max(spec.dist(back, B)) < 1e-9


def test_antipodal_is_an_error():
    half_turn = axis_angle_quat([1, 0, 0], np.pi)
    with pytest.raises(AntipodalError):
        log_map(point(QUAT, IDENTITY), point(QUAT, half_turn))


def test_spec_mismatch():
    with pytest.raises(SpecMismatchError):
        log_map(point(QUAT, IDENTITY), point(POSE, [0, 0, 0, 1, 0, 0, 0]))
    with pytest.raises(SpecMismatchError):
        geodesic_distance(point(QUAT, IDENTITY), point(POSE, [0, 0, 0, 1, 0, 0, 0]))
    with pytest.raises(SpecMismatchError):
        exp_map(point(QUAT, IDENTITY), np.zeros(6))


def test_unit_norm_invariant():
    from midigap.manifold import ManifoldPoint
    with pytest.raises(ValueError):
        ManifoldPoint(QUAT, np.array([1.0, 0.1, 0, 0]))


def test_distance_examples():
    a = point(QUAT, IDENTITY)
    assert geodesic_distance(a, a) == 0.0
    q = axis_angle_quat([1, 2, 3], 0.7)
    assert geodesic_distance(point(QUAT, q), point(QUAT, -q)) == pytest.approx(0.0, abs=1e-15)
    q90 = axis_angle_quat([0, 0, 1], np.pi / 2)
    assert geodesic_distance(a, point(QUAT, q90)) == pytest.approx(np.pi / 2, abs=1e-14)


def test_distance_symmetry_and_triangle(rng):
    spec = ManifoldSpec((Euclidean(2), UnitQuaternion()))
    A, B, C = (random_points(spec, rng, 500) for _ in range(3))
    dab, dba = spec.dist(A, B), spec.dist(B, A)
    assert np.allclose(dab, dba, atol=1e-12)
    assert np.all(spec.dist(A, C) <= dab + spec.dist(B, C) + 1e-9)


def test_distance_matches_rotation_angle(rng):
    A, B = random_quats(rng, 100), random_quats(rng, 100)
    d = QUAT.dist(A, B)
    ref = [rotation_angle(a, b) for a, b in zip(A, B)]
    assert np.allclose(d, ref, atol=1e-7)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.booleans(), st.booleans())
def test_quaternion_sign_invariance(seed, flip_a, flip_b):
    rng = np.random.default_rng(seed)
    a, b = random_points(POSE, rng, 2)
    if QUAT.dist(a[3:], b[3:]) > 3.0:
        return
    a2, b2 = a.copy(), b.copy()
    if flip_a:
        a2[3:] *= -1
    if flip_b:
        b2[3:] *= -1
    assert np.allclose(POSE.log(a, b), POSE.log(a2, b2), atol=1e-12)
    assert POSE.dist(a, b) == pytest.approx(POSE.dist(a2, b2), abs=1e-12)
    v = POSE.log(a, b)
    assert np.allclose(POSE.exp(a2, v), POSE.exp(a, v), atol=1e-12)


def test_frechet_identical_points_one_iteration():
    x = np.array([0.3, -1.0, 2.0, *axis_angle_quat([1, 1, 0], 0.4)])
    mu, it = POSE.frechet_mean(np.stack([x] * 5))
    assert it == 1
    assert np.allclose(mu, x, atol=1e-15)
    assert np.allclose(frechet_mean([point(POSE, x)] * 3).coords, x, atol=1e-15)


def test_frechet_euclidean_is_arithmetic_mean(rng):
    spec = ManifoldSpec.euclidean(4)
    X = rng.normal(size=(17, 4))
    m = frechet_mean([point(spec, x) for x in X])
    assert np.allclose(m.coords, X.mean(axis=0), atol=1e-14)


def test_frechet_two_quaternions_is_slerp_midpoint():
    q90 = axis_angle_quat([0, 0, 1], np.pi / 2)
    m = frechet_mean([point(QUAT, IDENTITY), point(QUAT, q90)]).coords
    assert np.allclose(m, axis_angle_quat([0, 0, 1], np.pi / 4), atol=1e-12)


def test_frechet_two_quaternions_brute_force():
    """Grid search of the summed squared rotation angle over rotation vectors."""
    q90 = axis_angle_quat([0, 0, 1], np.pi / 2)
    targets = [IDENTITY, q90]

    def cost(v):
        q = axis_angle_quat(v, np.linalg.norm(v)) if np.linalg.norm(v) > 0 else IDENTITY
        return sum(rotation_angle(q, t) ** 2 for t in targets)

    g = np.linspace(-1.2, 1.2, 25)
    best = min(((cost(np.array([a, b, c])), (a, b, c)) for a in g for b in g for c in g))[1]
    res = scipy.optimize.minimize(cost, np.array(best), method="Nelder-Mead",
                                  options={"xatol": 1e-9, "fatol": 1e-14, "maxiter": 4000})
    q_brute = axis_angle_quat(res.x, np.linalg.norm(res.x))
    m = frechet_mean([point(QUAT, t) for t in targets]).coords
    assert rotation_angle(q_brute, m) < 1e-5


def test_frechet_gradient_vanishes(rng):
    center = axis_angle_quat([0.2, -1, 0.5], 1.0)
    noise = 0.3 * rng.normal(size=(40, 3))
    Z = QUAT.exp(np.broadcast_to(center, (40, 4)), noise)
    mu, _ = QUAT.frechet_mean(Z, tol=1e-12)
    grad = QUAT.log(np.broadcast_to(mu, Z.shape), Z).mean(axis=0)
    assert np.linalg.norm(grad) < 1e-12


def test_frechet_nonconvergence_carries_last_iterate(rng):
    Z = random_quats(rng, 30)  # spread over the whole sphere
    with pytest.raises(ConvergenceError) as err:
        frechet_mean([point(QUAT, z) for z in Z], tol=1e-300, max_iter=3)
    assert err.value.last is not None


def test_backends_agree(backend, rng):
    from midigap import _kernels_py
    A, B = random_quats(rng, 200), random_quats(rng, 200)
    v_ref, _ = _kernels_py.quat_log(A, B)
    v, bad = backend.quat_log(A, B)
    assert bad == -1
    assert np.allclose(v, v_ref, atol=1e-12)
    assert np.allclose(backend.quat_exp(A, v), _kernels_py.quat_exp(A, v), atol=1e-12)
    assert np.allclose(backend.quat_angle(A, B), _kernels_py.quat_angle(A, B), atol=1e-12)
    spec = ManifoldSpec((Euclidean(2), UnitQuaternion(), UnitQuaternion()))
    X = random_points(spec, rng, 30)
    C = random_points(spec, rng, 4)
    args = (spec.euclid_ambient, spec.quat_offsets)
    assert np.allclose(backend.sq_dist_matrix(X, *args), _kernels_py.sq_dist_matrix(X, *args), atol=1e-10)
    assert np.allclose(backend.sq_dist_to(X, C, *args), _kernels_py.sq_dist_to(X, C, *args), atol=1e-10)
    assert np.allclose(_kernels_py.sq_dist_to(X, C, *args), spec.dist(X[:, None], C[None]) ** 2, atol=1e-10)
