"""Split objective ``f + g``, its gradients, the augmented Lagrangian and merit.

With split variables ``p`` (unit quaternions), ``q`` (free 4-vectors) and
translations ``t``, each edge ``e = (i, j)`` contributes

    f_e = || [0, t_j - t_i] - q_i [0, t_ij] p_i* ||^2_{S1_e}
    g_e = || p_j* q_i q_ij - 1 ||^2_{S2_e}

At ``p = q`` the sum is the unsplit pose-graph objective.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .quat import sphere_tangent_project


@dataclass
class SplitVariables:
    p: np.ndarray
    q: np.ndarray
    t: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        self.p = np.array(self.p, dtype=float, order="C").reshape(-1, 4)
        n = len(self.p)
        self.q = np.array(self.q, dtype=float, order="C").reshape(n, 4)
        self.t = np.array(self.t, dtype=float, order="C").reshape(n, 3)
        self.lam = np.array(self.lam, dtype=float, order="C").reshape(n, 4)

    @classmethod
    def from_poses(cls, poses):
        """Feasible split point ``p = q`` with zero multipliers."""
        q = np.asarray(poses.q, dtype=float)
        return cls(q.copy(), q.copy(), np.asarray(poses.t, dtype=float).copy(), np.zeros_like(q))

    def copy(self):
        return SplitVariables(self.p.copy(), self.q.copy(), self.t.copy(), self.lam.copy())


@dataclass(frozen=True)
class LipschitzEstimates:
    L_f_p: float
    L_g_p: float
    L_f_q: float
    L_g_q: float
    L_f: float
    L_g: float


@dataclass(frozen=True)
class StationarityReport:
    s_p: float
    s_q: float
    s_t: float
    s_feas: float

    def max(self):
        return max(self.s_p, self.s_q, self.s_t, self.s_feas)


def _nthreads(nthreads):
    return kernels.default_threads() if nthreads is None else int(nthreads)


def objective(vars, graph, nthreads=1):
    """``(f, g)`` at the split point."""
    if graph.m == 0:
        return 0.0, 0.0
    return kernels.objective(graph.packed, vars.p, vars.q, vars.t, _nthreads(nthreads))


def eval_f(vars, graph):
    return objective(vars, graph)[0]


def eval_g(vars, graph):
    return objective(vars, graph)[1]


def _grads_p(vars, graph):
    if graph.m == 0:
        z = np.zeros((graph.n, 4))
        return z, z.copy()
    return kernels.grad_p(graph.packed, vars.p, vars.q, vars.t, 1)


def _grads_q(vars, graph):
    if graph.m == 0:
        z = np.zeros((graph.n, 4))
        return z, z.copy()
    return kernels.grad_q(graph.packed, vars.p, vars.q, vars.t, 1)


def grad_p_f(vars, graph):
    return _grads_p(vars, graph)[0]


def grad_p_g(vars, graph):
    return _grads_p(vars, graph)[1]


def grad_q_f(vars, graph):
    return _grads_q(vars, graph)[0]


def grad_q_g(vars, graph):
    return _grads_q(vars, graph)[1]


def translation_targets(graph, p, q):
    """Vector parts of ``q_i [0, t_ij] p_i*`` per edge, shape (m, 3), and their real parts."""
    from .quat import qconj, qmul

    P = graph.packed
    u = qmul(qmul(q[P.I], P.a), qconj(p[P.I]))
    return u[:, 1:], u[:, 0]


def grad_t_f(vars, graph):
    """Gradient of ``f`` with respect to the translations, shape (n, 3)."""
    out = np.zeros((graph.n, 3))
    if graph.m == 0:
        return out
    P = graph.packed
    uv, u0 = translation_targets(graph, vars.p, vars.q)
    r = np.zeros((graph.m, 4))
    r[:, 0] = -u0
    r[:, 1:] = vars.t[P.J] - vars.t[P.I] - uv
    y = 2.0 * np.einsum("mab,mb->ma", P.S1, r)[:, 1:]
    np.add.at(out, P.J, y)
    np.add.at(out, P.I, -y)
    return out


def augmented_lagrangian(vars, graph, beta):
    """``f + g - <lam, p - q> + beta/2 ||p - q||^2`` (the sphere indicator is zero for unit ``p``)."""
    f, g = objective(vars, graph)
    d = vars.p - vars.q
    return f + g - float(np.sum(vars.lam * d)) + 0.5 * beta * float(np.sum(d * d))


def merit_phi(vars, graph, prev_q, prev_t, beta, L_f, tau2):
    """Merit ``L_beta + (4/beta) tau2^2 ||dq||^2 + (4/beta) L_f^2 ||dt||^2``."""
    dq = vars.q - prev_q
    dt = vars.t - prev_t
    return (
        augmented_lagrangian(vars, graph, beta)
        + 4.0 / beta * tau2**2 * float(np.sum(dq * dq))
        + 4.0 / beta * L_f**2 * float(np.sum(dt * dt))
    )


def _spectral_norms(S):
    if len(S) == 0:
        return np.zeros(0)
    return np.linalg.norm(S, ord=2, axis=(1, 2))


def lipschitz_estimates(graph, bound_hint=1.5, poses=None):
    """Closed-form Lipschitz bounds for the gradients of ``f`` and ``g``.

    ``bound_hint`` bounds ``||q_i||`` over the run. Per edge, with
    ``a = ||t_ij||``, ``s1 = sigma_max(S1)`` and ``s2 = sigma_max(S2)``:

    * ``L_f_q = max_i 2 sum_out s1 a^2`` and ``L_f_p`` the same times ``B^2``;
    * ``L_g_q = max_i 2 sum_out s2`` and ``L_g_p = max_j 2 B^2 sum_in s2``;
    * ``L_f``, ``L_g`` bound the full Hessian by ``max_v sum_{e touching v} ||H_e||``,
      where ``||H_e||`` is bounded through ``2 s (||J_e||^2 + ||r_e|| ||d2 r_e||)``.

    ``poses`` (optional) widens the translation-residual bound to the current
    edge lengths, which matters when starting far from the measurements.
    """
    B = float(bound_hint)
    n, m = graph.n, graph.m
    if m == 0:
        return LipschitzEstimates(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    I, J = graph.edges_i, graph.edges_j
    a = np.linalg.norm(graph.t_meas, axis=1)
    s1 = _spectral_norms(graph.sigma1)
    s2 = _spectral_norms(graph.sigma2)

    def vmax(idx, vals):
        return float(np.bincount(idx, weights=vals, minlength=n).max())

    L_f_q = vmax(I, 2.0 * s1 * a**2)
    L_f_p = B**2 * L_f_q
    L_g_q = vmax(I, 2.0 * s2)
    L_g_p = vmax(J, 2.0 * B**2 * s2)

    d = a.copy()
    if poses is not None:
        t = np.asarray(poses.t, dtype=float)
        d = np.maximum(d, np.linalg.norm(t[J] - t[I], axis=1))
    d *= B
    jac2 = B**2 * a**2 + a**2 + 2.0
    Hf = 2.0 * s1 * (jac2 + (d + B * a) * a)
    Hg = 2.0 * s2 * (1.0 + B**2 + (B + 1.0))
    L_f = float((np.bincount(I, Hf, n) + np.bincount(J, Hf, n)).max())
    L_g = float((np.bincount(I, Hg, n) + np.bincount(J, Hg, n)).max())
    return LipschitzEstimates(L_f_p, L_g_p, L_f_q, L_g_q, L_f, L_g)


def beta_advisor(est, tau1, tau2, tau3):
    """Smallest ``beta`` (with a 5% margin) satisfying the merit-descent condition.

    ``tau1``, ``tau2``, ``tau3`` are the diagonal values of the proximal weights
    ``H1``, ``H2``, ``H3``. Raises ``ValueError`` unless ``tau1 > L_f_p + L_g_p``.
    """
    Lp = est.L_f_p + est.L_g_p
    S = est.L_f**2 + est.L_g**2
    if S == 0.0 and est.L_f_q + est.L_g_q == 0.0 and Lp == 0.0:
        return 0.0
    if tau1 <= Lp:
        raise ValueError(
            f"tau1 = {tau1:g} must exceed L_f_p + L_g_p = {Lp:g}; increase tau1"
        )
    if tau2 <= 0 or tau3 <= 0:
        raise ValueError("tau2 and tau3 must be positive")
    terms = (
        4.0 / 3.0 * (est.L_f_q + est.L_g_q),
        8.0 * S / (tau1 - Lp),
        (8.0 * S + 16.0 * tau2**2) / tau2,
        8.0 * est.L_f**2 / tau3,
    )
    return 1.05 * max(terms)


def theory_parameters(est):
    """``(beta, tau1, tau2, tau3)`` that minimize the advisor's bound term by term."""
    S = est.L_f**2 + est.L_g**2
    root = np.sqrt(S)
    tau1 = est.L_f_p + est.L_g_p + max(root, 1e-12)
    tau2 = max(np.sqrt(S / 2.0), 1e-12)
    tau3 = max(est.L_f, 1e-12)
    beta = beta_advisor(est, tau1, tau2, tau3)
    if beta == 0.0:
        beta = 1.0
    return beta, tau1, tau2, tau3


def epsilon_stationarity(vars, graph):
    """The four first-order residuals ``(s_p, s_q, s_t, s_feas)`` at ``vars``."""
    gfp, ggp = _grads_p(vars, graph)
    gfq, ggq = _grads_q(vars, graph)
    tang = sphere_tangent_project(vars.p, -gfp - ggp + vars.lam)
    return StationarityReport(
        s_p=float(np.linalg.norm(tang)),
        s_q=float(np.linalg.norm(gfq + ggq + vars.lam)),
        s_t=float(np.linalg.norm(grad_t_f(vars, graph))),
        s_feas=float(np.linalg.norm(vars.p - vars.q)),
    )
