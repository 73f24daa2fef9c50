"""Gauss-Newton and Levenberg-Marquardt on the unit-quaternion pose-graph objective.

Each edge contributes 7 whitened residuals (3 translation, 4 rotation). Each
vertex has 6 local coordinates: a tangent step ``d`` applied as
``q <- normalize(q + W(q)[:, 1:] d)`` and a translation increment. Vertex 0
is held fixed to remove the gauge freedom.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .graph import Poses
from .quat import D, qconj, qmul, rotate_vec

log = logging.getLogger(__name__)

STEP_FLOOR = 1e-10


@dataclass
class LsParams:
    tol: float = 1e-5
    max_iter: int = 50
    lm_lambda0: float = 1e-4
    lm_up: float = 10.0
    lm_down: float = 0.5
    lm_max: float = 1e12

    def __post_init__(self):
        if not (self.tol > 0 and self.lm_lambda0 > 0 and self.lm_up > 1 and 0 < self.lm_down < 1):
            raise ValueError("invalid least-squares parameters")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")


@dataclass
class ResidualSystem:
    r: np.ndarray  # (7m,)
    J: sp.csr_matrix  # (7m, 6n)

    @property
    def cost(self):
        return float(self.r @ self.r)


@dataclass
class LsRecord:
    iter: int
    time_s: float
    f: float
    g: float
    lagrangian: float
    phi: float
    residual: float


@dataclass
class LsResult:
    history: List[LsRecord] = field(default_factory=list)
    status: str = "running"
    iter: int = 0
    lm_lambda: Optional[float] = None


def _sqrt_weights(S):
    """Stack of ``L^T`` with ``L L^T = S`` (eigen square root, PSD safe)."""
    w, V = np.linalg.eigh(S)
    return np.sqrt(np.clip(w, 0.0, None))[:, :, None] * np.swapaxes(V, 1, 2)


def tangent_basis(q):
    """Orthonormal tangent basis ``W(q)[:, 1:]`` at each unit quaternion, shape (n, 4, 3)."""
    from ._pykernels import _right

    return _right(q)[:, :, 1:]


def retract(q, d):
    """``normalize(q + W(q)[:, 1:] d)`` per vertex."""
    x = q + np.einsum("nab,nb->na", tangent_basis(q), d)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


class _Weights:
    def __init__(self, graph):
        self.L1 = _sqrt_weights(np.asarray(graph.sigma1)[:, 1:, 1:])
        self.L2 = _sqrt_weights(np.asarray(graph.sigma2))


def build_residuals(poses, graph, weights=None):
    """Whitened residual vector and sparse Jacobian at ``poses``.

    Rows ``7e:7e+3`` hold the translation residual of edge ``e`` and rows
    ``7e+3:7e+7`` the rotation residual. Column ``6v + (0..2)`` is the tangent
    step of vertex ``v`` and ``6v + (3..5)`` its translation.
    """
    from ._pykernels import _left, _right

    w = weights or _Weights(graph)
    q = np.asarray(poses.q, dtype=float)
    t = np.asarray(poses.t, dtype=float)
    n, m = graph.n, graph.m
    I, J = graph.edges_i, graph.edges_j
    qi, qj = q[I], q[J]
    a = np.zeros((m, 4))
    a[:, 1:] = graph.t_meas
    qm = graph.q_meas

    et = t[J] - t[I] - rotate_vec(qi, graph.t_meas)
    rho = qmul(qmul(qconj(qj), qi), qm)
    rho[:, 0] -= 1.0
    rt = np.einsum("mab,mb->ma", w.L1, et)
    rr = np.einsum("mab,mb->ma", w.L2, rho)
    r = np.concatenate([rt, rr], axis=1).reshape(-1)

    Bi = tangent_basis(qi)
    Bj = tangent_basis(qj)
    # d(q a q*)/dq = M(q) M(a) D + W(q)^T W(a)
    du = _left(qi) @ _left(a) @ D + np.swapaxes(_right(qi), 1, 2) @ _right(a)
    Jt_rot_i = -w.L1 @ (du[:, 1:, :] @ Bi)  # (m, 3, 3)
    Jr_i = w.L2 @ (np.swapaxes(_left(qj), 1, 2) @ _right(qm) @ Bi)  # (m, 4, 3)
    Jr_j = w.L2 @ (_right(qmul(qi, qm)) @ D @ Bj)  # (m, 4, 3)

    base = 7 * np.arange(m)
    rows, cols, vals = [], [], []

    def put(row_off, nr, col_start, block):
        rr_ = (base + row_off)[:, None, None] + np.arange(nr)[None, :, None]
        cc_ = col_start[:, None, None] + np.arange(block.shape[2])[None, None, :]
        rows.append(np.broadcast_to(rr_, block.shape).ravel())
        cols.append(np.broadcast_to(cc_, block.shape).ravel())
        vals.append(block.ravel())

    put(0, 3, 6 * I, Jt_rot_i)
    put(0, 3, 6 * I + 3, -w.L1)
    put(0, 3, 6 * J + 3, w.L1)
    put(3, 4, 6 * I, Jr_i)
    put(3, 4, 6 * J, Jr_j)
    Jm = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(7 * m, 6 * n)
    )
    return ResidualSystem(r, Jm)


def apply_step(poses, delta):
    """Retract a ``6n`` step (vertex-major: 3 tangent + 3 translation)."""
    d = delta.reshape(-1, 6)
    return Poses(retract(poses.q, d[:, :3]), poses.t + d[:, 3:])


def _solve_normal(H, g):
    try:
        return spla.splu(H.tocsc()).solve(-g)
    except RuntimeError as exc:
        raise np.linalg.LinAlgError(
            f"normal equations are singular ({exc}); try Levenberg-Marquardt"
        ) from exc


def _free_system(rs, n):
    Jf = rs.J[:, 6:]
    H = (Jf.T @ Jf).tocsc()
    g = Jf.T @ rs.r
    return H, g


def _full_step(free, n):
    out = np.zeros(6 * n)
    out[6:] = free
    return out


def _split_cost(rs, m):
    r = rs.r.reshape(m, 7) if m else np.zeros((0, 7))
    return float(np.sum(r[:, :3] ** 2)), float(np.sum(r[:, 3:] ** 2))


def _negligible(step):
    return step.size == 0 or float(np.max(np.abs(step))) < STEP_FLOOR


def _run(graph, init, params, callback, lm):
    params = params or LsParams()
    if len(init) != graph.n:
        raise ValueError(f"init has {len(init)} poses, graph has {graph.n} vertices")
    weights = _Weights(graph)
    poses = Poses(np.asarray(init.q, dtype=float), np.asarray(init.t, dtype=float))
    poses.q = poses.q / np.linalg.norm(poses.q, axis=1, keepdims=True)
    res = LsResult(lm_lambda=params.lm_lambda0 if lm else None)
    t0 = time.perf_counter()
    n, m = graph.n, graph.m

    def record(k, rs, stat):
        f, g = _split_cost(rs, m)
        rec = LsRecord(k, time.perf_counter() - t0, f, g, f + g, f + g, stat)
        res.history.append(rec)
        if callback is not None:
            callback(rec, poses)

    rs = build_residuals(poses, graph, weights)
    F = rs.cost
    record(0, rs, float("nan"))
    if n <= 1 or m == 0:
        res.status = "converged"
        return poses, res
    lam = params.lm_lambda0
    res.status = "max_iter"
    k = 0
    while k < params.max_iter:
        if F <= 1e-30:
            res.status = "converged"
            break
        H, g = _free_system(rs, n)
        if lm:
            diag = H.diagonal()
            first = None
            while True:
                A = H + sp.diags(lam * np.maximum(diag, 1e-12))
                step = _solve_normal(A, g)
                first = step if first is None else first
                cand = apply_step(poses, _full_step(step, n))
                rs_c = build_residuals(cand, graph, weights)
                if rs_c.cost < F:
                    lam *= params.lm_down
                    break
                lam *= params.lm_up
                if lam > params.lm_max:
                    res.status = "converged" if _negligible(first) else "stalled"
                    break
            res.lm_lambda = lam
            if res.status != "max_iter":
                break
        else:
            step = _solve_normal(H, g)
            cand = apply_step(poses, _full_step(step, n))
            rs_c = build_residuals(cand, graph, weights)
            if not rs_c.cost < F:
                # a rejected step at rounding level means we already sit at the minimum
                res.status = "converged" if _negligible(step) else "no_decrease"
                break
        k += 1
        F_new = rs_c.cost
        rel = (F - F_new) / F_new if F_new > 0 else 0.0
        poses, rs, F = cand, rs_c, F_new
        res.iter = k
        record(k, rs, rel)
        if rel < params.tol:
            res.status = "converged"
            break
    log.info("%s %s after %d iterations, cost %.6g", "mL-M" if lm else "mG-N", res.status, res.iter, F)
    return poses, res


def gauss_newton_solve(graph, init, params=None, callback: Optional[Callable] = None):
    """Manifold Gauss-Newton; returns ``(poses, LsResult)``.

    ``callback(record, poses)`` runs for the start point and after each accepted step.
    """
    return _run(graph, init, params, callback, lm=False)


def levenberg_marquardt_solve(graph, init, params=None, callback: Optional[Callable] = None):
    """Manifold Levenberg-Marquardt with multiplicative damping updates."""
    return _run(graph, init, params, callback, lm=True)
