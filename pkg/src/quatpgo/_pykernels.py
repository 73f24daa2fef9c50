"""Pure numpy implementation of the per-iteration kernels.

Same call signatures as the compiled ``_ckernels`` module; used when the
extension is unavailable or ``QUATPGO_BACKEND=python`` is set. Per-vertex sums
go through the fixed (n, m) incidence matrices, so results do not depend on
``nthreads`` (accepted for signature compatibility only).
"""
import numpy as np

from .quat import qconj, qmul

_E0 = np.array([1.0, 0.0, 0.0, 0.0])


def _residuals(P, p, q, t):
    I, J = P.I, P.J
    dt = np.zeros((len(I), 4))
    dt[:, 1:] = t[J] - t[I]
    r = dt - qmul(qmul(q[I], P.a), qconj(p[I]))
    rho = qmul(qmul(qconj(p[J]), q[I]), P.qm) - _E0
    return r, rho


def _weighted(S, x):
    return np.einsum("mab,mb->ma", S, x)


def objective(P, p, q, t, nthreads=1):
    r, rho = _residuals(P, p, q, t)
    f = float(np.einsum("ma,ma->", r, _weighted(P.S1, r)))
    g = float(np.einsum("ma,ma->", rho, _weighted(P.S2, rho)))
    return f, g


def grad_p(P, p, q, t, nthreads=1):
    r, rho = _residuals(P, p, q, t)
    y = _weighted(P.S1, r)
    z = _weighted(P.S2, rho)
    I = P.I
    # d/dp_i f_e = -2 y* q_i a ;  d/dp_j g_e = 2 (q_i q_ij) z*
    ef = -2.0 * qmul(qconj(y), qmul(q[I], P.a))
    eg = 2.0 * qmul(qmul(q[I], P.qm), qconj(z))
    return P.out_mat @ ef, P.in_mat @ eg


def grad_q(P, p, q, t, nthreads=1):
    r, rho = _residuals(P, p, q, t)
    y = _weighted(P.S1, r)
    z = _weighted(P.S2, rho)
    I, J = P.I, P.J
    # d/dq_i f_e = -2 y p_i a* ;  d/dq_i g_e = 2 p_j z q_ij*
    ef = -2.0 * qmul(qmul(y, p[I]), qconj(P.a))
    eg = 2.0 * qmul(qmul(p[J], z), qconj(P.qm))
    return P.out_mat @ ef, P.out_mat @ eg


def p_step(P, p, q, t, lam, beta, tau1, nthreads=1):
    gf, gg = grad_p(P, p, q, t)
    x = (beta * q + lam + tau1 * p - gf - gg) / (beta + tau1)
    nrm = np.linalg.norm(x, axis=1)
    bad = ~(nrm >= 1e-15)
    out = np.empty_like(p)
    ok = ~bad
    out[ok] = x[ok] / nrm[ok, None]
    out[bad] = p[bad]
    return out, int(bad.sum())


def _left(a):
    """Stack of left-multiplication matrices M(a)."""
    a0, a1, a2, a3 = a.T
    return np.stack(
        [
            np.stack([a0, -a1, -a2, -a3], -1),
            np.stack([a1, a0, -a3, a2], -1),
            np.stack([a2, a3, a0, -a1], -1),
            np.stack([a3, -a2, a1, a0], -1),
        ],
        axis=-2,
    )


def _right(a):
    """Stack of right-multiplication matrices W(a)."""
    a0, a1, a2, a3 = a.T
    return np.stack(
        [
            np.stack([a0, -a1, -a2, -a3], -1),
            np.stack([a1, a0, a3, -a2], -1),
            np.stack([a2, -a3, a0, a1], -1),
            np.stack([a3, a2, -a1, a0], -1),
        ],
        axis=-2,
    )


def q_system(P, p, t):
    """Per-vertex edge sums ``A_i`` (n, 4, 4) and ``b_i`` (n, 4) of the q-subproblem.

    The q-subproblem reads ``(2 A_i + (beta + tau2) I) q_i = 2 b_i + beta p_i - lam_i + tau2 q_i^k``.
    """
    I, J = P.I, P.J
    m = len(I)
    G1 = _right(qmul(P.a, qconj(p[I])))  # W(a p_i*)
    G2 = np.swapaxes(_left(p[J]), -1, -2) @ _right(P.qm)  # M(p_j)^T W(q_ij)
    G1t = np.swapaxes(G1, -1, -2)
    G2t = np.swapaxes(G2, -1, -2)
    A = G1t @ P.S1 @ G1 + G2t @ P.S2 @ G2
    dt = np.zeros((m, 4))
    dt[:, 1:] = t[J] - t[I]
    b = np.einsum("mab,mb->ma", G1t @ P.S1, dt) + np.einsum("mab,b->ma", G2t @ P.S2, _E0)
    n = P.n
    A_v = (P.out_mat @ A.reshape(m, 16)).reshape(n, 4, 4)
    b_v = P.out_mat @ b
    return A_v, b_v


def q_step(P, p, q, t, lam, beta, tau2, nthreads=1):
    A_v, b_v = q_system(P, p, t)
    lhs = 2.0 * A_v + (beta + tau2) * np.eye(4)
    rhs = 2.0 * b_v + beta * p - lam + tau2 * q
    return np.linalg.solve(lhs, rhs[..., None])[..., 0]


def t_rhs(P, p, q, t, tau3, nthreads=1):
    """``tau3 t + 2 Q^T (S1_hat u + u0 sigma12)`` with ``u = q_i [0, t_ij] p_i*``; shape (n, 3)."""
    u = qmul(qmul(q[P.I], P.a), qconj(p[P.I]))
    S = P.S1
    w = np.einsum("mab,mb->ma", S[:, 1:, 1:], u[:, 1:]) + u[:, :1] * S[:, 0, 1:]
    return tau3 * t + 2.0 * (P.in_mat @ w - P.out_mat @ w)
