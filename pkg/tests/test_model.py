import numpy as np
import pytest

from quatpgo.graph import PoseGraph
from quatpgo.model import (
    LipschitzEstimates,
    SplitVariables,
    augmented_lagrangian,
    beta_advisor,
    epsilon_stationarity,
    eval_f,
    eval_g,
    grad_p_f,
    grad_p_g,
    grad_q_f,
    grad_q_g,
    grad_t_f,
    lipschitz_estimates,
    merit_phi,
    objective,
    theory_parameters,
)
from quatpgo.quat import mat_M, mat_W, qconj, qmul

from conftest import central_diff, random_graph, random_split


def _with(vars, **kw):
    out = vars.copy()
    for k, v in kw.items():
        setattr(out, k, v)
    return out


GRADS = {
    "p_f": (grad_p_f, eval_f, "p"),
    "p_g": (grad_p_g, eval_g, "p"),
    "q_f": (grad_q_f, eval_f, "q"),
    "q_g": (grad_q_g, eval_g, "q"),
    "t_f": (grad_t_f, eval_f, "t"),
}


@pytest.mark.parametrize("which", sorted(GRADS))
@pytest.mark.parametrize("seed", range(4))
def test_gradients_match_finite_differences(which, seed, backend):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, 5, 9)
    v = random_split(rng, g.n, unit_p=False)
    grad, fun, name = GRADS[which]
    fd = central_diff(lambda x: fun(_with(v, **{name: x}), g), getattr(v, name))
    an = grad(v, g)
    assert np.linalg.norm(an - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-8)


def _matrix_form(vars, graph):
    """Objective through the 4x4 multiplication matrices instead of quaternion products."""
    f = g = 0.0
    for k in range(graph.m):
        i, j = graph.edges_i[k], graph.edges_j[k]
        a = np.concatenate([[0.0], graph.t_meas[k]])
        dt = np.concatenate([[0.0], vars.t[j] - vars.t[i]])
        r = dt - mat_M(vars.q[i]) @ mat_M(a) @ qconj(vars.p[i])
        rho = mat_M(qconj(vars.p[j])) @ mat_W(graph.q_meas[k]) @ vars.q[i] - np.array([1.0, 0, 0, 0])
        f += r @ graph.sigma1[k] @ r
        g += rho @ graph.sigma2[k] @ rho
    return f, g


def test_objective_quaternion_and_matrix_forms_agree(rng, backend):
    g = random_graph(rng, 6, 11)
    v = random_split(rng, g.n, unit_p=False)
    assert np.allclose(objective(v, g), _matrix_form(v, g), rtol=1e-10)


def test_zero_residual_at_truth(rng):
    from conftest import unit_quats

    n = 4
    q = unit_quats(rng, n)
    t = rng.standard_normal((n, 3))
    I, J = np.array([0, 1, 2, 3]), np.array([1, 2, 3, 0])
    qm = qmul(qconj(q[I]), q[J])
    tm = qmul(qmul(qconj(q[I]), np.column_stack([np.zeros(4), t[J] - t[I]])), q[I])[:, 1:]
    g = PoseGraph(n, I, J, qm, tm, np.eye(4), np.eye(4))
    v = SplitVariables(q, q, t, np.zeros((n, 4)))
    f, gg = objective(v, g)
    assert f < 1e-24 and gg < 1e-24
    rep = epsilon_stationarity(v, g)
    assert rep.max() < 1e-11


def test_lipschitz_single_edge():
    g = PoseGraph(2, [0], [1], [[1.0, 0, 0, 0]], [[1.0, 0, 0]], np.eye(4), np.eye(4))
    est = lipschitz_estimates(g, bound_hint=1.0)
    assert est.L_f_q == pytest.approx(2.0)
    assert est.L_f_p == pytest.approx(2.0)
    assert est.L_g_q == pytest.approx(2.0)
    assert est.L_g_p == pytest.approx(2.0)


def _hessian_norm(fun, x, h=1e-4):
    n = x.size
    H = np.zeros((n, n))
    for a in range(n):
        e = np.zeros(n)
        e[a] = h
        H[:, a] = (central_diff(lambda y: fun(y), x + e) - central_diff(lambda y: fun(y), x - e)).ravel() / (2 * h)
    return np.linalg.norm(0.5 * (H + H.T), 2)


def test_lipschitz_bounds_dominate_numerical_curvature(rng):
    """The partial Hessians of f and g must not exceed the advertised constants."""
    g = random_graph(rng, 3, 3)
    v = random_split(rng, g.n)
    B = 1.5
    v.q = v.q / np.linalg.norm(v.q, axis=1, keepdims=True) * 1.2
    est = lipschitz_estimates(g, bound_hint=B, poses=v)
    for name, fun, bound in (("q", eval_f, est.L_f_q), ("q", eval_g, est.L_g_q),
                             ("p", eval_f, est.L_f_p), ("p", eval_g, est.L_g_p)):
        x0 = getattr(v, name)
        hn = _hessian_norm(lambda x: fun(_with(v, **{name: x.reshape(-1, 4)}), g), x0.ravel())
        assert hn <= bound * (1 + 1e-6), (name, fun.__name__, hn, bound)


def test_beta_advisor_cases():
    zero = LipschitzEstimates(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    assert beta_advisor(zero, 1.0, 1.0, 1.0) == 0.0
    est = LipschitzEstimates(1.0, 1.0, 1.0, 1.0, 2.0, 2.0)
    with pytest.raises(ValueError, match="tau1"):
        beta_advisor(est, 1.5, 1.0, 1.0)
    S = 8.0
    tau1, tau2, tau3 = 2 + np.sqrt(S), 2.0, 2.0
    expect = 1.05 * max(4 / 3 * 2, 8 * S / np.sqrt(S), (8 * S + 16 * 4) / 2, 8 * 4 / 2)
    assert beta_advisor(est, tau1, tau2, tau3) == pytest.approx(expect)
    b, t1, t2, t3 = theory_parameters(est)
    assert t1 == pytest.approx(tau1) and t2 == pytest.approx(2.0) and t3 == pytest.approx(2.0)
    assert b == pytest.approx(expect)


def test_augmented_lagrangian_and_merit(rng):
    g = random_graph(rng, 4, 6)
    v = random_split(rng, g.n)
    f, gg = objective(v, g)
    d = v.p - v.q
    beta = 3.0
    L = augmented_lagrangian(v, g, beta)
    assert L == pytest.approx(f + gg - np.sum(v.lam * d) + 0.5 * beta * np.sum(d * d))
    prev_q = v.q + 1.0
    prev_t = v.t - 2.0
    phi = merit_phi(v, g, prev_q, prev_t, beta, L_f=0.5, tau2=0.1)
    extra = 4 / beta * (0.01 * prev_q.size + 0.25 * 4 * prev_t.size)
    assert phi == pytest.approx(L + extra)


def test_split_variables_validation():
    with pytest.raises(ValueError):
        SplitVariables(np.zeros((2, 4)), np.zeros((3, 4)), np.zeros((2, 3)), np.zeros((2, 4)))
