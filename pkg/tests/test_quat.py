import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from quatpgo.quat import (
    D,
    IDENTITY,
    DegenerateQuaternionError,
    angle_between,
    canonical_sign,
    davenport_matrix,
    from_axis_angle,
    from_rotation_matrix,
    hat,
    is_vector_quaternion,
    mat_M,
    mat_W,
    qconj,
    qmul,
    qnorm,
    qnormalize,
    rotate_vec,
    sphere_tangent_project,
    to_rotation_matrix,
    vec_quat,
)

from conftest import unit_quats

finite = st.floats(-10, 10, allow_nan=False)
quat4 = arrays(np.float64, 4, elements=finite)
vec3 = arrays(np.float64, 3, elements=finite)


def test_hamilton_basis_products():
    one, i, j, k = np.eye(4)
    assert np.allclose(qmul(i, j), k)
    assert np.allclose(qmul(j, k), i)
    assert np.allclose(qmul(k, i), j)
    assert np.allclose(qmul(i, i), -one)
    assert np.allclose(qmul(qmul(i, j), k), -one)


def test_product_matrices_match_qmul(rng):
    a, b = rng.standard_normal((2, 50, 4))
    assert np.allclose(mat_M(a) @ b[..., None], qmul(a, b)[..., None])
    assert np.allclose(mat_W(b) @ a[..., None], qmul(a, b)[..., None])


def test_multiplication_matrix_identities(rng):
    x, y = rng.standard_normal((2, 100, 4))
    xy = qmul(x, y)
    assert np.allclose(mat_M(xy), mat_M(x) @ mat_M(y), atol=1e-12)
    assert np.allclose(mat_W(xy), mat_W(y) @ mat_W(x), atol=1e-12)
    assert np.allclose(mat_M(qconj(x)), np.swapaxes(mat_M(x), -1, -2), atol=1e-12)
    assert np.allclose(mat_W(qconj(x)), np.swapaxes(mat_W(x), -1, -2), atol=1e-12)
    # left and right multiplication commute
    assert np.allclose(mat_M(x) @ mat_W(y), mat_W(y) @ mat_M(x), atol=1e-12)
    assert np.allclose(D @ x[..., None], qconj(x)[..., None])


def test_norm_is_multiplicative(rng):
    x, y = rng.standard_normal((2, 100, 4))
    assert np.allclose(qnorm(qmul(x, y)), qnorm(x) * qnorm(y))


def test_unit_product_matrices_are_orthogonal(rng):
    q = unit_quats(rng, 20)
    eye = np.broadcast_to(np.eye(4), (20, 4, 4))
    assert np.allclose(mat_M(q) @ np.swapaxes(mat_M(q), 1, 2), eye)
    assert np.allclose(mat_W(q) @ np.swapaxes(mat_W(q), 1, 2), eye)


def test_vector_quaternion_conjugation_stays_vector(rng):
    q = rng.standard_normal((100, 4))
    a = vec_quat(rng.standard_normal((100, 3)))
    out = qmul(qmul(q, a), qconj(q))
    assert np.all(is_vector_quaternion(out, atol=1e-12))


def test_hat_is_cross_product(rng):
    u, v = rng.standard_normal((2, 3))
    assert np.allclose(hat(u) @ v, np.cross(u, v))


def test_rotation_matrix_matches_rotate_vec(rng):
    q = unit_quats(rng, 30)
    v = rng.standard_normal((30, 3))
    R = to_rotation_matrix(q)
    assert np.allclose((R @ v[..., None])[..., 0], rotate_vec(q, v))
    assert np.allclose(R @ np.swapaxes(R, 1, 2), np.eye(3))
    assert np.allclose(np.linalg.det(R), 1.0)


def test_axis_angle_known_value():
    q = from_axis_angle([0, 0, 1], np.pi / 2)
    assert np.allclose(rotate_vec(q, [1.0, 0, 0]), [0, 1.0, 0])
    assert np.allclose(q, [np.sqrt(0.5), 0, 0, np.sqrt(0.5)])


def test_from_rotation_matrix_roundtrip(rng):
    q = canonical_sign(unit_quats(rng, 200))
    assert np.allclose(from_rotation_matrix(to_rotation_matrix(q)), q, atol=1e-12)


def test_from_rotation_matrix_projects_noisy_input(rng):
    q = canonical_sign(unit_quats(rng, 1))[0]
    R = to_rotation_matrix(q) + 1e-3 * rng.standard_normal((3, 3))
    est = from_rotation_matrix(R)
    assert np.isclose(np.linalg.norm(est), 1.0)
    assert angle_between(est, q) < 1e-2


def test_from_rotation_matrix_rejects_nan():
    with pytest.raises(ValueError):
        from_rotation_matrix(np.full((3, 3), np.nan))


def test_davenport_quadratic_form(rng):
    B = rng.standard_normal((3, 3))
    q = unit_quats(rng, 10)
    K = davenport_matrix(B)
    lhs = np.einsum("na,ab,nb->n", q, K, q)
    rhs = np.trace(np.swapaxes(to_rotation_matrix(q), 1, 2) @ B, axis1=1, axis2=2)
    assert np.allclose(lhs, rhs)


def test_qnormalize_degenerate():
    with pytest.raises(DegenerateQuaternionError):
        qnormalize(np.zeros(4))
    with pytest.raises(DegenerateQuaternionError):
        qnormalize(np.array([[1.0, 0, 0, 0], [1e-17, 0, 0, 0]]))


def test_tangent_projection_is_orthogonal(rng):
    x = unit_quats(rng, 5)
    v = rng.standard_normal((5, 4))
    pv = sphere_tangent_project(x, v)
    assert np.allclose(np.sum(pv * x, axis=1), 0.0)
    assert np.allclose(sphere_tangent_project(x, pv), pv)


def test_angle_between_sign_invariant(rng):
    q = unit_quats(rng, 1)[0]
    r = qmul(q, from_axis_angle([1.0, 2.0, 3.0], 0.3))
    assert np.isclose(angle_between(q, r), 0.3)
    assert np.isclose(angle_between(q, -r), 0.3)
    assert np.isclose(angle_between(IDENTITY, IDENTITY), 0.0)


@settings(max_examples=200, deadline=None)
@given(quat4, vec3)
def test_rotation_preserves_length(q, t):
    if np.linalg.norm(q) < 1e-3:
        return
    q = q / np.linalg.norm(q)
    assert np.isclose(np.linalg.norm(rotate_vec(q, t)), np.linalg.norm(t), rtol=1e-10, atol=1e-10)


@settings(max_examples=200, deadline=None)
@given(quat4, quat4, quat4)
def test_product_is_associative(a, b, c):
    lhs = qmul(qmul(a, b), c)
    rhs = qmul(a, qmul(b, c))
    assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(quat4, quat4)
def test_conjugate_of_product(a, b):
    assert np.allclose(qconj(qmul(a, b)), qmul(qconj(b), qconj(a)), atol=1e-9)
