import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation as ScipyRot

from motionmatch import math3d as m3


def random_unit_quats(rng, n):
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def scipy_from_wxyz(q):
    q = np.asarray(q)
    return ScipyRot.from_quat(np.concatenate([q[..., 1:], q[..., :1]], axis=-1))


# ---------------------------------------------------------------------------
# quaternion algebra
# ---------------------------------------------------------------------------

def test_quat_mul_identity():
    rng = np.random.default_rng(0)
    for q in random_unit_quats(rng, 20):
        np.testing.assert_allclose(m3.quat_mul(m3.QUAT_IDENTITY, q), q, atol=1e-12)
        np.testing.assert_allclose(m3.quat_mul(q, m3.QUAT_IDENTITY), q, atol=1e-12)


def test_quat_mul_inverse_gives_identity():
    rng = np.random.default_rng(1)
    for q in random_unit_quats(rng, 50):
        np.testing.assert_allclose(
            m3.quat_mul(q, m3.quat_inverse(q)), m3.QUAT_IDENTITY, atol=1e-6
        )


def test_quat_mul_matches_rotation_composition_oracle():
    # Rot_{a*b}(u) == Rot_a(Rot_b(u)), checked against scipy matrices
    rng = np.random.default_rng(2)
    a = random_unit_quats(rng, 100)
    b = random_unit_quats(rng, 100)
    u = rng.normal(size=(100, 3))
    got = m3.quat_rotate_vec(m3.quat_mul(a, b), u)
    want = scipy_from_wxyz(a).apply(scipy_from_wxyz(b).apply(u))
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_quat_mul_associative():
    rng = np.random.default_rng(3)
    a, b, c = (random_unit_quats(rng, 30) for _ in range(3))
    lhs = m3.quat_mul(m3.quat_mul(a, b), c)
    rhs = m3.quat_mul(a, m3.quat_mul(b, c))
    np.testing.assert_allclose(lhs, rhs, atol=1e-6)


def test_quat_inverse_simple_cases():
    np.testing.assert_allclose(m3.quat_inverse([1, 0, 0, 0]), [1, 0, 0, 0])
    np.testing.assert_allclose(m3.quat_inverse([0, 1, 0, 0]), [0, -1, 0, 0])


def test_quat_inverse_matches_transpose_oracle():
    rng = np.random.default_rng(4)
    q = random_unit_quats(rng, 50)
    u = rng.normal(size=(50, 3))
    got = m3.quat_rotate_vec(m3.quat_inverse(q), u)
    want = np.einsum("nji,nj->ni", m3.mat_from_quat(q), u)  # R^T u
    np.testing.assert_allclose(got, want, atol=1e-9)


def test_quat_inverse_rejects_zero():
    with pytest.raises(ValueError):
        m3.quat_inverse([0.0, 0.0, 0.0, 0.0])


def test_rotate_vec_preserves_length():
    rng = np.random.default_rng(5)
    q = random_unit_quats(rng, 1000)
    u = rng.normal(size=(1000, 3))
    np.testing.assert_allclose(
        m3.vec_length(m3.quat_rotate_vec(q, u)), m3.vec_length(u), atol=1e-6
    )


def test_rotate_vec_matches_matrix():
    rng = np.random.default_rng(6)
    q = random_unit_quats(rng, 200)
    u = rng.normal(size=(200, 3))
    want = np.einsum("nij,nj->ni", m3.mat_from_quat(q), u)
    np.testing.assert_allclose(m3.quat_rotate_vec(q, u), want, atol=1e-6)


# ---------------------------------------------------------------------------
# matrix conversions
# ---------------------------------------------------------------------------

def test_mat_from_quat_identity():
    np.testing.assert_allclose(m3.mat_from_quat([1, 0, 0, 0]), np.eye(3))


def test_mat_from_quat_orthonormal_det_one():
    rng = np.random.default_rng(7)
    m = m3.mat_from_quat(random_unit_quats(rng, 200))
    np.testing.assert_allclose(np.einsum("nij,nkj->nik", m, m), np.broadcast_to(np.eye(3), m.shape), atol=1e-5)
    np.testing.assert_allclose(np.linalg.det(m), 1.0, atol=1e-5)


def test_quat_mat_roundtrip_random():
    rng = np.random.default_rng(8)
    q = random_unit_quats(rng, 10000)
    q2 = m3.quat_from_mat(m3.mat_from_quat(q))
    # round trip matches up to sign
    dot = np.abs(np.sum(q * q2, axis=-1))
    np.testing.assert_allclose(dot, 1.0, atol=1e-6)


def test_quat_from_mat_degenerate_180_branches():
    # w ~ 0 rotations exercise each non-w branch of the extraction
    for axis in (np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), np.array([0, 0, 1.0]),
                 m3.vec_normalize([1.0, 1.0, 0.0]), m3.vec_normalize([0.3, -0.5, 0.81])):
        q = m3.rotvec_to_quat(axis * (np.pi - 1e-9))
        q2 = m3.quat_from_mat(m3.mat_from_quat(q))
        assert np.abs(np.abs(np.dot(q, q2)) - 1.0) < 1e-6


def test_quat_from_mat_matches_scipy():
    rng = np.random.default_rng(9)
    q = random_unit_quats(rng, 500)
    m = m3.mat_from_quat(q)
    ours = m3.quat_from_mat(m)
    scp = ScipyRot.from_matrix(m).as_quat()  # xyzw
    scp = np.concatenate([scp[..., 3:], scp[..., :3]], axis=-1)
    dot = np.abs(np.sum(ours * scp, axis=-1))
    np.testing.assert_allclose(dot, 1.0, atol=1e-6)


def test_quat_from_mat_canonical_sign():
    rng = np.random.default_rng(10)
    q = m3.quat_from_mat(m3.mat_from_quat(random_unit_quats(rng, 200)))
    assert np.all(q[:, 0] >= 0.0)


def test_quat_from_mat_rejects_non_rotation():
    with pytest.raises(ValueError):
        m3.quat_from_mat(np.diag([1.0, 2.0, 1.0]))
    with pytest.raises(ValueError):
        m3.quat_from_mat(np.diag([1.0, 1.0, -1.0]))  # reflection


# ---------------------------------------------------------------------------
# look rotation
# ---------------------------------------------------------------------------

def test_look_rotation_canonical_is_identity():
    q = m3.look_rotation([0, 0, 1], [0, 1, 0])
    np.testing.assert_allclose(q, m3.QUAT_IDENTITY, atol=1e-12)


def test_look_rotation_90_yaw():
    q = m3.look_rotation([1, 0, 0], [0, 1, 0])
    np.testing.assert_allclose(m3.quat_rotate_vec(q, m3.FORWARD), [1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(m3.quat_rotate_vec(q, m3.UP), m3.UP, atol=1e-12)


def test_look_rotation_random_columns():
    rng = np.random.default_rng(11)
    for _ in range(200):
        f = rng.normal(size=3)
        u = rng.normal(size=3)
        if m3.vec_length(f) < 1e-3 or m3.vec_length(np.cross(f, u)) < 1e-3:
            continue
        q = m3.look_rotation(f, u)
        fn = f / np.linalg.norm(f)
        np.testing.assert_allclose(m3.quat_rotate_vec(q, m3.FORWARD), fn, atol=1e-6)
        m = m3.mat_from_quat(q)
        np.testing.assert_allclose(m @ m.T, np.eye(3), atol=1e-9)
        # rotated up axis lies in the forward-up plane
        up_axis = m3.quat_rotate_vec(q, m3.UP)
        assert abs(np.dot(up_axis, np.cross(fn, u) / np.linalg.norm(np.cross(fn, u)))) < 1e-9


def test_look_rotation_rejects_parallel():
    with pytest.raises(ValueError):
        m3.look_rotation([0, 1, 0], [0, 1, 0])


# ---------------------------------------------------------------------------
# rotation vectors
# ---------------------------------------------------------------------------

def test_rotvec_identity_and_pi():
    np.testing.assert_allclose(m3.quat_to_rotvec([1, 0, 0, 0]), [0, 0, 0])
    np.testing.assert_allclose(m3.rotvec_to_quat([0, 0, 0]), m3.QUAT_IDENTITY)
    np.testing.assert_allclose(m3.rotvec_to_quat([0, np.pi, 0]), [0, 0, 1, 0], atol=1e-12)


def test_rotvec_double_cover():
    rng = np.random.default_rng(12)
    for q in random_unit_quats(rng, 100):
        np.testing.assert_allclose(m3.quat_to_rotvec(q), m3.quat_to_rotvec(-q), atol=1e-12)


def test_rotvec_roundtrip():
    rng = np.random.default_rng(13)
    q = random_unit_quats(rng, 10000)
    q2 = m3.rotvec_to_quat(m3.quat_to_rotvec(q))
    dot = np.abs(np.sum(q * q2, axis=-1))
    np.testing.assert_allclose(dot, 1.0, atol=1e-6)
    assert np.all(m3.vec_length(m3.quat_to_rotvec(q)) <= np.pi + 1e-12)


def test_rotvec_matches_scipy():
    rng = np.random.default_rng(14)
    q = random_unit_quats(rng, 500)
    want = scipy_from_wxyz(m3.quat_canonical(q)).as_rotvec()
    np.testing.assert_allclose(m3.quat_to_rotvec(q), want, atol=1e-6)


def test_rotvec_finite_difference_geodesic():
    # |log(a b^-1)| equals the geodesic angle between a and b
    rng = np.random.default_rng(15)
    a = random_unit_quats(rng, 200)
    small = m3.rotvec_to_quat(rng.normal(size=(200, 3)) * 0.01)
    b = m3.quat_mul(small, a)
    rel = m3.quat_to_rotvec(m3.quat_mul(a, m3.quat_inverse(b)))
    np.testing.assert_allclose(m3.vec_length(rel), m3.quat_angle_between(a, b), atol=1e-6)


@given(st.floats(-np.pi + 1e-3, np.pi - 1e-3), st.integers(0, 2))
@settings(max_examples=50, deadline=None)
def test_rotvec_single_axis_roundtrip(angle, axis):
    v = np.zeros(3)
    v[axis] = angle
    np.testing.assert_allclose(m3.quat_to_rotvec(m3.rotvec_to_quat(v)), v, atol=1e-9)


# ---------------------------------------------------------------------------
# springs
# ---------------------------------------------------------------------------

def rk4_spring(y0, v0, target, w, t_end, dt):
    """Numerical integration oracle for y'' = w^2 (target-y) - 2 w y'."""
    def acc(y, v):
        return w * w * (target - y) - 2.0 * w * v

    y, v = float(y0), float(v0)
    t = 0.0
    while t < t_end - 1e-12:
        h = min(dt, t_end - t)
        k1y, k1v = v, acc(y, v)
        k2y, k2v = v + 0.5 * h * k1v, acc(y + 0.5 * h * k1y, v + 0.5 * h * k1v)
        k3y, k3v = v + 0.5 * h * k2v, acc(y + 0.5 * h * k2y, v + 0.5 * h * k2v)
        k4y, k4v = v + h * k3v, acc(y + h * k3y, v + h * k3v)
        y += h / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y)
        v += h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        t += h
    return y, v


def test_exponential_decay_basics():
    assert m3.spring_decay_exponential(3.0, 3.0, 5.0, 0.1) == 3.0
    assert m3.spring_decay_exponential(1.0, 3.0, 5.0, 0.0) == 1.0
    y = 0.0
    for _ in range(200):
        y = m3.spring_decay_exponential(y, 2.0, 4.0, 0.05)
    assert abs(y - 2.0) < 1e-3


def test_critical_step_fixed_point_and_dt0():
    y, v = m3.spring_critical_step(2.0, 0.0, 2.0, 10.0, 0.3)
    assert y == 2.0 and v == 0.0
    y, v = m3.spring_critical_step(1.0, -0.5, 2.0, 10.0, 0.0)
    assert y == 1.0 and v == -0.5


def test_critical_step_matches_rk4_small_grid():
    rng = np.random.default_rng(16)
    for _ in range(20):
        y0, v0 = rng.normal(size=2) * 3.0
        target = rng.normal() * 3.0
        w = rng.uniform(0.5, 30.0)
        for t in (0.1, 0.7, 2.5, 5.0):
            got, _ = m3.spring_critical_step(y0, v0, target, w, t)
            want, _ = rk4_spring(y0, v0, target, w, t, 1e-3)
            assert abs(got - want) < 1e-3


def test_critical_step_no_overshoot_from_rest():
    rng = np.random.default_rng(17)
    for _ in range(50):
        y0 = rng.normal() * 2.0
        target = rng.normal() * 2.0
        w = rng.uniform(0.5, 30.0)
        sign0 = np.sign(target - y0)
        y, v = y0, 0.0
        crossings = 0
        prev_side = sign0
        for _ in range(400):
            y, v = m3.spring_critical_step(y, v, target, w, 0.01)
            side = np.sign(target - y)
            if side != 0 and side != prev_side:
                crossings += 1
                prev_side = side
        assert crossings <= 1


def test_velocity_displacement_constant():
    assert m3.spring_velocity_displacement(1.5, 0.0, 1.5, 3.0, 2.0) == pytest.approx(3.0)
    assert m3.spring_velocity_displacement(1.0, 2.0, 0.5, 3.0, 0.0) == 0.0


def test_velocity_displacement_matches_quadrature():
    rng = np.random.default_rng(18)
    for _ in range(20):
        v0, a0 = rng.normal(size=2) * 2.0
        tv = rng.normal() * 2.0
        w = rng.uniform(0.5, 20.0)
        t_end = rng.uniform(0.2, 3.0)
        # trapezoid integration of the stepped spring at dt = 1e-4
        dt = 1e-4
        n = int(round(t_end / dt))
        v, a = v0, a0
        disp = 0.0
        for _ in range(n):
            v2, a2 = m3.spring_critical_step(v, a, tv, w, dt)
            disp += 0.5 * (v + v2) * dt
            v, a = v2, a2
        got = m3.spring_velocity_displacement(v0, a0, tv, w, n * dt)
        assert abs(got - disp) < 1e-4


def test_spring_identity_at_dt0_vector():
    y = np.array([1.0, 2.0, 3.0])
    v = np.array([0.1, -0.2, 0.3])
    y2, v2 = m3.spring_critical_step(y, v, np.zeros(3), 8.0, 0.0)
    np.testing.assert_array_equal(y2, y)
    np.testing.assert_array_equal(v2, v)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def test_yaw_helpers_roundtrip():
    rng = np.random.default_rng(19)
    for a in rng.uniform(-np.pi + 1e-6, np.pi, size=50):
        assert m3.signed_yaw(m3.yaw_quat(a)) == pytest.approx(a, abs=1e-9)
        d = m3.yaw_to_dir2d(a)
        assert m3.heading_angle(d) == pytest.approx(a, abs=1e-9)


def test_wrap_angle():
    assert m3.wrap_angle(np.pi + 0.1) == pytest.approx(-np.pi + 0.1)
    assert m3.wrap_angle(-np.pi - 0.1) == pytest.approx(np.pi - 0.1)
    assert m3.wrap_angle(0.3) == pytest.approx(0.3)


def test_ground_and_2d():
    v = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(m3.ground(v), [1.0, 0.0, 3.0])
    np.testing.assert_array_equal(m3.to_2d(v), [1.0, 3.0])
    np.testing.assert_array_equal(m3.from_2d([1.0, 3.0], 2.0), v)
