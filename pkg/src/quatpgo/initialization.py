"""Initial pose estimates: odometry composition and chordal relaxation."""
import logging
from collections import deque

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .graph import Poses
from .quat import IDENTITY, from_rotation_matrix, qconj, qmul, rotate_vec, to_rotation_matrix

log = logging.getLogger(__name__)


class DisconnectedGraphError(ValueError):
    pass


def _check_connected(graph):
    if graph.n == 0:
        return
    comps = graph.components()
    if len(comps) > 1:
        desc = "; ".join(
            f"[{', '.join(map(str, c[:5]))}{', ...' if len(c) > 5 else ''}] ({len(c)} vertices)" for c in comps
        )
        raise DisconnectedGraphError(f"pose graph has {len(comps)} connected components: {desc}")


def _tree_edges(graph):
    """Parent edges of a spanning tree rooted at 0, as ``(child, edge, forward)`` in visit order.

    Uses the odometry chain ``(i, i+1)`` when it spans the graph, else BFS.
    """
    n = graph.n
    I, J = graph.edges_i, graph.edges_j
    chain = {}
    for k in range(graph.m):
        i, j = int(I[k]), int(J[k])
        if j == i + 1 and j not in chain:
            chain[j] = (k, True)
        elif i == j + 1 and i not in chain:
            chain.setdefault(i, (k, False))
    if all(v in chain for v in range(1, n)):
        return [(v, chain[v][0], chain[v][1]) for v in range(1, n)]

    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    order = []
    queue = deque([0])
    while queue:
        v = queue.popleft()
        for k in graph.out_edges(v):
            w = int(J[k])
            if not seen[w]:
                seen[w] = True
                order.append((w, int(k), True))
                queue.append(w)
        for k in graph.in_edges(v):
            w = int(I[k])
            if not seen[w]:
                seen[w] = True
                order.append((w, int(k), False))
                queue.append(w)
    return order


def odometry_init(graph):
    """Compose measurements along a spanning tree from vertex 0 (identity)."""
    _check_connected(graph)
    n = graph.n
    q = np.tile(IDENTITY, (n, 1))
    t = np.zeros((n, 3))
    for child, k, forward in _tree_edges(graph):
        qm, tm = graph.q_meas[k], graph.t_meas[k]
        if forward:
            i = int(graph.edges_i[k])
            q[child] = qmul(q[i], qm)
            t[child] = t[i] + rotate_vec(q[i], tm)
        else:
            j = int(graph.edges_j[k])
            q[child] = qmul(q[j], qconj(qm))
            t[child] = t[j] - rotate_vec(q[child], tm)
        q[child] /= np.linalg.norm(q[child])
    return Poses(q, t)


def _rotation_weights(graph):
    return np.trace(graph.sigma2, axis1=1, axis2=2) / 4.0


def chordal_rotations(graph):
    """Relaxed rotation matrices ``(n, 3, 3)`` before projection, with ``R_0 = I``.

    Minimizes ``sum_e w_e ||R_j - R_i Rbar_ij||_F^2`` row by row: row ``c`` of each
    ``R_v`` satisfies ``x_j - Rbar_ij^T x_i = 0``.
    """
    n, m = graph.n, graph.m
    R = np.tile(np.eye(3), (n, 1, 1))
    if n <= 1 or m == 0:
        return R
    I, J = graph.edges_i, graph.edges_j
    Rm = to_rotation_matrix(graph.q_meas)
    w = np.sqrt(np.maximum(_rotation_weights(graph), 0.0))
    e3 = np.arange(3)
    rows = (3 * np.arange(m))[:, None] + e3[None, :]  # (m, 3)
    # +x_j block
    r1 = rows.ravel()
    c1 = ((3 * J)[:, None] + e3[None, :]).ravel()
    v1 = np.repeat(w, 3)
    # -Rbar^T x_i block: entry (a, b) = -Rbar[b, a]
    r2 = np.broadcast_to(rows[:, :, None], (m, 3, 3)).ravel()
    c2 = np.broadcast_to(((3 * I)[:, None] + e3[None, :])[:, None, :], (m, 3, 3)).ravel()
    v2 = (-w[:, None, None] * np.swapaxes(Rm, 1, 2)).ravel()
    A = sp.csr_matrix(
        (np.concatenate([v1, v2]), (np.concatenate([r1, r2]), np.concatenate([c1, c2]))),
        shape=(3 * m, 3 * n),
    )
    A0 = A[:, :3]
    Af = A[:, 3:]
    rhs = -(A0 @ np.eye(3))  # x_0^{(c)} = e_c for each row c
    N = (Af.T @ Af).tocsc()
    X = spla.splu(N).solve(np.asarray(Af.T @ rhs))
    # X[:, c] stacks row c of R_1..R_{n-1}
    R[1:] = np.transpose(X.reshape(n - 1, 3, 3), (0, 2, 1))
    return R


def synchronize_signs(graph, q):
    """Flip quaternion signs along a spanning tree so tree edges satisfy ``<q_j, q_i q_ij> >= 0``.

    The rotation residual ``q_j* q_i q_ij - 1`` is sign sensitive, while a
    rotation-matrix estimate only fixes each ``q`` up to sign.
    """
    q = np.array(q, dtype=float)
    for child, k, forward in _tree_edges(graph):
        i, j = int(graph.edges_i[k]), int(graph.edges_j[k])
        pred = qmul(q[i], graph.q_meas[k]) if forward else qmul(q[j], qconj(graph.q_meas[k]))
        if np.dot(q[child], pred) < 0.0:
            q[child] = -q[child]
    return q


def chordal_init(graph, tau3=1e-8):
    """Chordal rotation relaxation followed by a linear translation solve (vertex 0 fixed)."""
    from .admm import translation_matrix

    _check_connected(graph)
    n = graph.n
    q = from_rotation_matrix(chordal_rotations(graph))
    q[0] = IDENTITY
    q = synchronize_signs(graph, q)
    t = np.zeros((n, 3))
    if n > 1 and graph.m:
        A = translation_matrix(graph, tau3).tocsc()
        P = graph.packed
        u = rotate_vec(q[P.I], graph.t_meas)
        S = np.asarray(graph.sigma1)[:, 1:, 1:]
        w = np.einsum("mab,mb->ma", S, u)
        rhs = 2.0 * (P.in_mat @ w - P.out_mat @ w)
        Af = A[3:, 3:]
        t[1:] = spla.splu(Af.tocsc()).solve(rhs[1:].reshape(-1)).reshape(n - 1, 3)
    return Poses(q, t)
