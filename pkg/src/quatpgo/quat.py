"""Quaternion algebra on numpy arrays.

Quaternions are stored as ``(..., 4)`` arrays in ``(w, x, y, z)`` order, i.e.
scalar part first. Every function broadcasts over leading axes.
"""
import numpy as np

#: diag(1, -1, -1, -1); ``D @ q`` is the conjugate of ``q``.
D = np.diag([1.0, -1.0, -1.0, -1.0])

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


class DegenerateQuaternionError(ValueError):
    """Raised when normalizing a quaternion whose norm is (numerically) zero."""


def qmul(p, q):
    """Hamilton product ``p q``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    p0, p1, p2, p3 = np.moveaxis(p, -1, 0)
    q0, q1, q2, q3 = np.moveaxis(q, -1, 0)
    return np.stack(
        [
            p0 * q0 - p1 * q1 - p2 * q2 - p3 * q3,
            p0 * q1 + p1 * q0 + p2 * q3 - p3 * q2,
            p0 * q2 - p1 * q3 + p2 * q0 + p3 * q1,
            p0 * q3 + p1 * q2 - p2 * q1 + p3 * q0,
        ],
        axis=-1,
    )


def qconj(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def qnorm(q):
    return np.linalg.norm(np.asarray(q, dtype=float), axis=-1)


def qnormalize(q, eps=1e-15):
    """Project onto the unit sphere ``x / ||x||``.

    Raises :class:`DegenerateQuaternionError` if any norm is below ``eps``.
    """
    q = np.asarray(q, dtype=float)
    nrm = qnorm(q)
    if np.any(nrm < eps) or not np.all(np.isfinite(nrm)):
        raise DegenerateQuaternionError(f"cannot normalize quaternion with norm {np.min(nrm):.3g}")
    return q / nrm[..., None]


def vec_quat(t):
    """Embed 3-vectors as pure (vector) quaternions ``[0, t]``."""
    t = np.asarray(t, dtype=float)
    return np.concatenate([np.zeros(t.shape[:-1] + (1,)), t], axis=-1)


def is_vector_quaternion(q, atol=1e-12):
    return np.abs(np.asarray(q)[..., 0]) <= atol


def mat_M(a):
    """Left-multiplication matrix: ``mat_M(a) @ b == qmul(a, b)``."""
    a = np.asarray(a, dtype=float)
    a0, a1, a2, a3 = np.moveaxis(a, -1, 0)
    rows = [
        [a0, -a1, -a2, -a3],
        [a1, a0, -a3, a2],
        [a2, a3, a0, -a1],
        [a3, -a2, a1, a0],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def mat_W(a):
    """Right-multiplication matrix: ``mat_W(b) @ a == qmul(a, b)``."""
    a = np.asarray(a, dtype=float)
    a0, a1, a2, a3 = np.moveaxis(a, -1, 0)
    rows = [
        [a0, -a1, -a2, -a3],
        [a1, a0, a3, -a2],
        [a2, -a3, a0, a1],
        [a3, a2, -a1, a0],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def hat(v):
    """Skew-symmetric cross-product matrix of a 3-vector."""
    v = np.asarray(v, dtype=float)
    x, y, z = np.moveaxis(v, -1, 0)
    o = np.zeros_like(x)
    return np.stack(
        [np.stack([o, -z, y], -1), np.stack([z, o, -x], -1), np.stack([-y, x, o], -1)],
        axis=-2,
    )


def rotate_vec(q, t):
    """Rotate 3-vectors by unit quaternions: imaginary part of ``q [0, t] q*``."""
    return qmul(qmul(q, vec_quat(t)), qconj(q))[..., 1:]


def to_rotation_matrix(q):
    """Rotation matrix ``R = v v^T + w^2 I + 2 w [v]x + [v]x^2`` of a unit quaternion."""
    q = np.asarray(q, dtype=float)
    w = q[..., 0]
    v = q[..., 1:]
    V = hat(v)
    outer = v[..., :, None] * v[..., None, :]
    eye = np.broadcast_to(np.eye(3), outer.shape)
    return outer + (w**2)[..., None, None] * eye + 2.0 * w[..., None, None] * V + V @ V


def davenport_matrix(B):
    """Symmetric 4x4 K with ``q^T K q == trace(R(q)^T B)`` for unit ``q``."""
    B = np.asarray(B, dtype=float)
    tr = np.trace(B, axis1=-2, axis2=-1)
    z = np.stack(
        [B[..., 2, 1] - B[..., 1, 2], B[..., 0, 2] - B[..., 2, 0], B[..., 1, 0] - B[..., 0, 1]],
        axis=-1,
    )
    K = np.empty(B.shape[:-2] + (4, 4))
    K[..., 0, 0] = tr
    K[..., 0, 1:] = z
    K[..., 1:, 0] = z
    K[..., 1:, 1:] = B + np.swapaxes(B, -1, -2) - tr[..., None, None] * np.eye(3)
    return K


def from_rotation_matrix(R):
    """Nearest unit quaternion (``w >= 0``) to a 3x3 matrix.

    Maximizes ``trace(R(q)^T R)`` through the top eigenvector of the Davenport
    matrix, so a noisy or unconstrained ``R`` is projected onto SO(3) as well.
    """
    R = np.asarray(R, dtype=float)
    if not np.all(np.isfinite(R)):
        raise ValueError("rotation matrix has non-finite entries")
    _, vecs = np.linalg.eigh(davenport_matrix(R))
    q = vecs[..., :, -1]
    return canonical_sign(q)


def canonical_sign(q):
    """Flip sign so the scalar part is nonnegative."""
    q = np.asarray(q, dtype=float)
    s = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    return q * s


def sphere_tangent_project(x, v):
    """Project ``v`` onto the tangent space of the unit sphere at ``x``: ``(I - x x^T) v``."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    return v - np.sum(x * v, axis=-1, keepdims=True) * x


def from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = 0.5 * np.asarray(angle, dtype=float)
    return np.concatenate([np.cos(half)[..., None], np.sin(half)[..., None] * axis], axis=-1)


def angle_between(q1, q2):
    """Rotation angle (radians) of ``q1* q2``; insensitive to the sign of either input."""
    d = np.abs(np.sum(np.asarray(q1) * np.asarray(q2), axis=-1))
    return 2.0 * np.arccos(np.clip(d, 0.0, 1.0))
