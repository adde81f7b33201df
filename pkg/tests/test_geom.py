import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pegrl.geom import (
    Pose,
    Twist,
    Wrench,
    integrate_pose,
    pose_error,
    quat_conjugate,
    quat_from_axis_angle,
    quat_multiply,
    quat_to_axis_angle,
)

finite = st.floats(-10, 10, allow_nan=False)
vec3 = arrays(float, 3, elements=finite)
quat_raw = arrays(float, 4, elements=st.floats(-1, 1, allow_nan=False)).filter(lambda q: np.linalg.norm(q) > 1e-3)

Z90 = quat_from_axis_angle([0, 0, np.pi / 2])


def test_identity_multiply(rng):
    q = quat_from_axis_angle(rng.normal(size=3))
    np.testing.assert_allclose(quat_multiply([1, 0, 0, 0], q), q, atol=1e-15)


def test_two_quarter_turns_make_half_turn():
    q = quat_multiply(Z90, Z90)
    np.testing.assert_allclose(quat_to_axis_angle(q), [0, 0, np.pi], atol=1e-12)


def test_multiply_rejects_nan():
    with pytest.raises(ValueError):
        quat_multiply([np.nan, 0, 0, 0], [1, 0, 0, 0])


@given(quat_raw)
def test_inverse_gives_identity(q):
    q = Pose(q=q).q
    np.testing.assert_allclose(quat_multiply(q, quat_conjugate(q)), [1, 0, 0, 0], atol=1e-9)


@given(quat_raw)
def test_pose_quaternion_unit_and_canonical(q):
    p = Pose(q=q)
    assert abs(np.linalg.norm(p.q) - 1) < 1e-9
    assert p.q[0] >= 0
    np.testing.assert_allclose(Pose(q=-np.asarray(q)).q, p.q, atol=1e-12)


def test_pose_error_examples():
    x = Pose([0.1, 0.2, 0.3], quat_from_axis_angle([0.1, -0.2, 0.3]))
    np.testing.assert_allclose(pose_error(x, x).to_array(), 0, atol=1e-15)
    e = pose_error(Pose(), Pose([0.001, 0, 0]))
    np.testing.assert_allclose(e.dp, [0.001, 0, 0])
    np.testing.assert_allclose(e.dtheta, 0)
    e = pose_error(x, Pose(x.p, quat_multiply(Z90, x.q)))
    np.testing.assert_allclose(e.dtheta, [0, 0, np.pi / 2], atol=1e-9)


@given(vec3, quat_raw, vec3, quat_raw)
def test_pose_error_shortest_arc(p1, q1, p2, q2):
    e = pose_error(Pose(p1, q1), Pose(p2, q2))
    assert np.linalg.norm(e.dtheta) <= np.pi + 1e-12
    np.testing.assert_allclose(e.dp, p2 - p1)


@given(vec3, quat_raw)
def test_pose_error_to_self_is_zero(p, q):
    x = Pose(p, q)
    assert np.all(pose_error(x, x).to_array() == 0) or np.allclose(pose_error(x, x).to_array(), 0, atol=1e-15)


def test_integrate_examples():
    x = Pose([0.1, 0, 0])
    assert integrate_pose(x, Twist(), 0.002) == x
    np.testing.assert_allclose(integrate_pose(Pose(), Twist([1, 0, 0]), 0.002).p, [0.002, 0, 0])
    y = integrate_pose(Pose(), Twist(w=[0, 0, np.pi]), 0.5)
    np.testing.assert_allclose(y.q, Z90, atol=1e-9)


def test_integrate_errors():
    with pytest.raises(ValueError):
        integrate_pose(Pose(), Twist(), 0.0)
    with pytest.raises(ValueError):
        Twist([np.inf, 0, 0])
    with pytest.raises(ValueError):
        Wrench([0, np.nan, 0])


@given(vec3, quat_raw, vec3, vec3, st.floats(1e-4, 1e-2))
def test_integrate_then_error_recovers_translation(p, q, v, w, dt):
    x = Pose(p, q)
    t = Twist(v, w)
    e = pose_error(x, integrate_pose(x, t, dt))
    np.testing.assert_allclose(e.dp, t.v * dt, atol=1e-9)
    np.testing.assert_allclose(e.dtheta, t.w * dt, atol=1e-9)


@given(arrays(float, 3, elements=st.floats(-3, 3, allow_nan=False)))
def test_axis_angle_round_trip(r):
    if np.linalg.norm(r) >= np.pi:
        return
    np.testing.assert_allclose(quat_to_axis_angle(quat_from_axis_angle(r)), r, atol=1e-9)
