"""Proximal linearized Riemannian ADMM for the split pose-graph model.

One iteration updates, in order,

* ``p``: linearize ``f + g`` at the old iterate, add the proximal term
  ``tau1/2 ||p - p^k||^2`` and project onto the unit sphere (per vertex);
* ``q``: exact per-vertex 4x4 solve, with ``tau2/2 ||q - q^k||^2``;
* ``t``: one sparse solve with a matrix fixed for the whole run;
* ``lam <- lam - beta (p - q)``.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .graph import Poses
from .model import (
    SplitVariables,
    beta_advisor,
    grad_q_f,
    grad_q_g,
    lipschitz_estimates,
    objective,
    theory_parameters,
)

log = logging.getLogger(__name__)

MODES = ("manual", "theory")
LAMBDA_INITS = ("zero", "gradient")
CG_THRESHOLD = 100_000


class DivergenceError(RuntimeError):
    """Raised when an iterate becomes non-finite."""


@dataclass
class AdmmParams:
    """Solver settings. ``None`` entries are filled by :func:`resolve_params`."""

    beta: Optional[float] = None
    tau1: Optional[float] = None
    tau2: Optional[float] = None
    tau3: Optional[float] = None
    tol: float = 1e-4
    max_iter: int = 300
    mode: str = "manual"
    nthreads: Optional[int] = None
    bound_hint: float = 1.5
    track: bool = True
    lam0: Optional[str] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("beta", "tau1", "tau2", "tau3"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be > 0, got {v}")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")
        if self.lam0 is not None and self.lam0 not in LAMBDA_INITS:
            raise ValueError(f"lam0 must be one of {LAMBDA_INITS}, got {self.lam0!r}")


@dataclass
class IterationRecord:
    iter: int
    time_s: float
    f: float
    g: float
    lagrangian: float
    phi: float
    residual: float


@dataclass
class AdmmState:
    vars: SplitVariables
    params: AdmmParams
    iter: int = 0
    history: List[IterationRecord] = field(default_factory=list)
    status: str = "running"
    L_f: float = 0.0
    events: List[str] = field(default_factory=list)


def default_manual_params(graph):
    """``beta = 10 mean sigma_max(S2)``, ``tau2 = tau3 = 1e-2 beta``.

    ``tau1`` is raised to ``1.05 (L_f_p + L_g_p)`` (unit-norm bound) when that
    exceeds ``1e-2 beta``, so the linearized p-step stays a descent step on
    densely connected graphs.
    """
    if graph.m:
        beta = 10.0 * float(np.mean(np.linalg.norm(graph.sigma2, ord=2, axis=(1, 2))))
    else:
        beta = 1.0
    beta = beta if beta > 0 else 1.0
    est = lipschitz_estimates(graph, 1.0)
    tau = 1e-2 * beta
    tau1 = max(tau, 1.05 * (est.L_f_p + est.L_g_p))
    return beta, tau1, tau, tau


def resolve_params(graph, params, poses=None):
    """Fill unset ``beta``/``tau`` values and return ``(params, L_f)``.

    In theory mode the Lipschitz estimates drive the defaults, and explicit
    values are checked against the advisor bound.
    """
    est = lipschitz_estimates(graph, params.bound_hint, poses)
    out = AdmmParams(**{**params.__dict__})
    if params.mode == "theory":
        beta, tau1, tau2, tau3 = theory_parameters(est)
        out.tau1 = params.tau1 or tau1
        out.tau2 = params.tau2 or tau2
        out.tau3 = params.tau3 or tau3
        need = beta_advisor(est, out.tau1, out.tau2, out.tau3)
        if params.beta is None:
            out.beta = need if need > 0 else 1.0
        elif params.beta < need:
            raise ValueError(f"beta = {params.beta:g} is below the advised bound {need:g}")
    else:
        beta, tau1, tau2, tau3 = default_manual_params(graph)
        if params.beta is not None:
            beta = params.beta
            tau2 = tau3 = 1e-2 * beta
            tau1 = max(tau2, tau1)
        out.beta = beta
        out.tau1 = params.tau1 or tau1
        out.tau2 = params.tau2 or tau2
        out.tau3 = params.tau3 or tau3
    if out.lam0 is None:
        # theory mode starts from the multiplier that makes q^0 stationary,
        # which the merit-descent argument needs from the first iteration on
        out.lam0 = "gradient" if params.mode == "theory" else "zero"
    if out.nthreads is None:
        out.nthreads = kernels.default_threads()
    return out, est.L_f


def step_p(vars, graph, params):
    """Sphere-projected linearized update of ``p``; returns the new ``(n, 4)`` array."""
    if graph.m == 0:
        x = (params.beta * vars.q + vars.lam + params.tau1 * vars.p) / (params.beta + params.tau1)
        nrm = np.linalg.norm(x, axis=1)
        ok = nrm >= 1e-15
        out = vars.p.copy()
        out[ok] = x[ok] / nrm[ok, None]
        return out
    p, bad = kernels.p_step(
        graph.packed, vars.p, vars.q, vars.t, vars.lam, params.beta, params.tau1, params.nthreads or 1
    )
    if bad:
        log.warning("p-step: %d vertices had a degenerate projection; kept previous value", bad)
    return p


def step_q(vars, graph, params):
    """Exact per-vertex minimization over ``q`` (uses the already updated ``vars.p``)."""
    if graph.m == 0:
        return (params.beta * vars.p - vars.lam + params.tau2 * vars.q) / (params.beta + params.tau2)
    return kernels.q_step(
        graph.packed, vars.p, vars.q, vars.t, vars.lam, params.beta, params.tau2, params.nthreads or 1
    )


class TranslationSystem:
    """Factorized ``A = 2 Q^T blockdiag(S1_hat) Q + tau3 I`` of size ``3n``.

    When every ``S1_hat`` block is a multiple of the identity, ``A`` is
    ``L kron I3`` for a weighted graph Laplacian ``L`` (plus ``tau3 I``), so the
    ``n x n`` matrix is factored once and solved with three right-hand sides.
    """

    def __init__(self, graph, tau3):
        self.graph = graph
        self.tau3 = float(tau3)
        self.matrix = translation_matrix(graph, tau3)
        self.isotropic = _isotropic_scale(graph) is not None
        if self.isotropic:
            self._op = laplacian_matrix(graph, _isotropic_scale(graph), tau3)
        else:
            self._op = self.matrix
        self._lu = None
        if self._op.shape[0] <= 3 * CG_THRESHOLD:
            self._lu = spla.splu(self._op.tocsc())

    def solve(self, rhs):
        """Solve ``A x = rhs`` for ``rhs`` of shape ``(n, 3)`` or ``(3n,)``; returns ``(n, 3)``."""
        n = self.graph.n
        rhs = np.asarray(rhs, dtype=float).reshape(n, 3)
        b = rhs if self.isotropic else rhs.reshape(-1)
        if self._lu is not None:
            x = self._lu.solve(b)
        else:
            cols = b.T if self.isotropic else [b]
            out = []
            for col in cols:
                xc, info = spla.cg(self._op, col, rtol=1e-10, maxiter=10 * len(col))
                if info != 0:
                    raise RuntimeError(f"conjugate gradient did not converge (info={info})")
                out.append(xc)
            x = np.column_stack(out) if self.isotropic else out[0]
        return np.asarray(x).reshape(n, 3)


def _isotropic_scale(graph):
    """Per-edge ``s`` with ``S1_hat = s I3`` for every edge, else ``None``."""
    S = np.asarray(graph.sigma1)[:, 1:, 1:]
    s = S[:, 0, 0]
    if np.array_equal(S, s[:, None, None] * np.eye(3)):
        return s
    return None


def laplacian_matrix(graph, s, tau3):
    """``2 sum_e s_e (e_j - e_i)(e_j - e_i)^T + tau3 I`` as CSR ``n x n``."""
    n = graph.n
    I, J = graph.edges_i, graph.edges_j
    w = 2.0 * np.asarray(s, dtype=float)
    rows = np.concatenate([I, J, I, J, np.arange(n)])
    cols = np.concatenate([I, J, J, I, np.arange(n)])
    vals = np.concatenate([w, w, -w, -w, np.full(n, float(tau3))])
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def translation_matrix(graph, tau3):
    """Sparse symmetric ``2 Q^T (I_m kron S1_hat) Q + tau3 I`` (CSR, ``3n x 3n``)."""
    n, m = graph.n, graph.m
    S = np.asarray(graph.sigma1)[:, 1:, 1:]
    I, J = graph.edges_i, graph.edges_j
    r3 = np.arange(3)
    rows, cols, vals = [], [], []
    for a, b, sgn in ((I, I, 1.0), (J, J, 1.0), (I, J, -1.0), (J, I, -1.0)):
        rr = (3 * a)[:, None, None] + r3[None, :, None]
        cc = (3 * b)[:, None, None] + r3[None, None, :]
        rows.append(np.broadcast_to(rr, (m, 3, 3)).ravel())
        cols.append(np.broadcast_to(cc, (m, 3, 3)).ravel())
        vals.append((2.0 * sgn * S).ravel())
    rows.append(np.arange(3 * n))
    cols.append(np.arange(3 * n))
    vals.append(np.full(3 * n, float(tau3)))
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(3 * n, 3 * n)
    )
    return A.tocsr()


def assemble_t_system(graph, params):
    return TranslationSystem(graph, params.tau3)


def t_rhs(vars, graph, tau3, nthreads=1):
    """``2 Q^T (S1_hat u + u0 sigma12) + tau3 t^k`` with ``u = q_i [0, t_ij] p_i*``."""
    if graph.m == 0:
        return tau3 * vars.t
    return kernels.t_rhs(graph.packed, vars.p, vars.q, vars.t, tau3, nthreads)


def step_t(vars, system, graph, params):
    """Exact minimization over translations (uses updated ``p`` and ``q``)."""
    return system.solve(t_rhs(vars, graph, system.tau3, params.nthreads or 1))


def step_lambda(vars, params):
    return vars.lam - params.beta * (vars.p - vars.q)


def residual(new, old, beta):
    """``(1/beta)||dlam||^2 + beta (||dq||^2 + ||dt||^2)``."""
    dl = new.lam - old.lam
    dq = new.q - old.q
    dt = new.t - old.t
    return float(np.sum(dl * dl) / beta + beta * (np.sum(dq * dq) + np.sum(dt * dt)))


def _phi(vars, graph, prev, params, L_f):
    f, g = objective(vars, graph, params.nthreads)
    d = vars.p - vars.q
    lag = f + g - float(np.sum(vars.lam * d)) + 0.5 * params.beta * float(np.sum(d * d))
    dq = vars.q - prev.q
    dt = vars.t - prev.t
    phi = lag + 4.0 / params.beta * (
        params.tau2**2 * float(np.sum(dq * dq)) + L_f**2 * float(np.sum(dt * dt))
    )
    return f, g, lag, phi


def solve(graph, init, params=None, callback: Optional[Callable] = None):
    """Run the ADMM loop from ``init`` poses.

    Returns ``(poses, state)``; the estimate uses the unit ``p`` rotations.
    ``callback(record, poses)`` is invoked after every iteration with the
    current estimate, and once for the starting point (iteration 0). Raises
    :class:`DivergenceError` on a non-finite iterate.
    """
    params = params or AdmmParams()
    if len(init) != graph.n:
        raise ValueError(f"init has {len(init)} poses, graph has {graph.n} vertices")
    params, L_f = resolve_params(graph, params, init)
    vars = SplitVariables.from_poses(init)
    if params.lam0 == "gradient":
        vars.lam = -(grad_q_f(vars, graph) + grad_q_g(vars, graph))
    state = AdmmState(vars, params, L_f=L_f)
    log.info(
        "ADMM start: n=%d m=%d beta=%.4g tau=(%.3g, %.3g, %.3g) mode=%s threads=%d backend=%s",
        graph.n, graph.m, params.beta, params.tau1, params.tau2, params.tau3,
        params.mode, params.nthreads, kernels.BACKEND,
    )
    system = assemble_t_system(graph, params)
    t0 = time.perf_counter()

    def record(k, prev, R):
        if params.track:
            f, g, lag, phi = _phi(state.vars, graph, prev, params, L_f)
        else:
            f = g = lag = phi = float("nan")
        rec = IterationRecord(k, time.perf_counter() - t0, f, g, lag, phi, R)
        state.history.append(rec)
        if callback is not None:
            callback(rec, Poses(state.vars.p, state.vars.t))
        return rec

    record(0, vars, float("nan"))
    state.status = "max_iter"
    for k in range(1, params.max_iter + 1):
        old = state.vars
        new = SplitVariables(old.p, old.q, old.t, old.lam)
        new.p = step_p(old, graph, params)
        new.q = step_q(new, graph, params)
        new.t = step_t(new, system, graph, params)
        new.lam = step_lambda(new, params)
        if not (np.all(np.isfinite(new.q)) and np.all(np.isfinite(new.t)) and np.all(np.isfinite(new.lam))):
            state.status = "diverged"
            raise DivergenceError(f"non-finite iterate at iteration {k} (beta={params.beta:g})")
        R = residual(new, old, params.beta)
        state.vars = new
        state.iter = k
        record(k, old, R)
        if params.mode == "theory":
            qmax = float(np.max(np.linalg.norm(new.q, axis=1))) if graph.n else 0.0
            if qmax > params.bound_hint:
                msg = f"iteration {k}: max ||q_i|| = {qmax:.3f} exceeds bound_hint {params.bound_hint:g}"
                log.warning(msg)
                state.events.append(msg)
        if R < params.tol:
            state.status = "converged"
            break
    log.info("ADMM %s after %d iterations", state.status, state.iter)
    return Poses(state.vars.p.copy(), state.vars.t.copy()), state
