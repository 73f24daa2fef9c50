import numpy as np
import pytest

from quatpgo.graph import Poses
from quatpgo.initialization import chordal_init, odometry_init
from quatpgo.manifold_ls import (
    LsParams,
    apply_step,
    build_residuals,
    gauss_newton_solve,
    levenberg_marquardt_solve,
    retract,
    tangent_basis,
)
from quatpgo.metrics import align_to_truth, rel_err
from quatpgo.model import SplitVariables, objective
from quatpgo.synth import CubeSpec, RingSpec, gen_cube, gen_ring

from conftest import random_graph, random_poses, unit_quats


def test_residual_cost_equals_model_objective(rng):
    g = random_graph(rng, 6, 10)
    x = random_poses(rng, g.n)
    rs = build_residuals(x, g)
    assert rs.cost == pytest.approx(sum(objective(SplitVariables.from_poses(x), g)), rel=1e-10)


def test_jacobian_matches_finite_differences(rng):
    g = random_graph(rng, 5, 8)
    x = random_poses(rng, g.n)
    J = build_residuals(x, g).J.toarray()
    h = 1e-6
    fd = np.zeros_like(J)
    for c in range(6 * g.n):
        d = np.zeros(6 * g.n)
        d[c] = h
        rp = build_residuals(apply_step(x, d), g).r
        rm = build_residuals(apply_step(x, -d), g).r
        fd[:, c] = (rp - rm) / (2 * h)
    assert np.allclose(J, fd, atol=1e-7)


def test_retraction_properties(rng):
    q = unit_quats(rng, 10)
    B = tangent_basis(q)
    assert np.allclose(np.einsum("na,nab->nb", q, B), 0.0)
    assert np.allclose(np.swapaxes(B, 1, 2) @ B, np.eye(3))
    assert np.allclose(retract(q, np.zeros((10, 3))), q)
    assert np.allclose(np.linalg.norm(retract(q, rng.standard_normal((10, 3))), axis=1), 1.0)


@pytest.mark.parametrize("solver", [gauss_newton_solve, levenberg_marquardt_solve])
def test_noiseless_recovery_from_odometry_perturbation(solver):
    truth, g = gen_cube(CubeSpec(3, 0.3, 0.0, 0.0, seed=4))
    rng = np.random.default_rng(0)
    start = Poses(truth.q + 0.05 * rng.standard_normal(truth.q.shape), truth.t + 0.05 * rng.standard_normal(truth.t.shape))
    start.q[0], start.t[0] = truth.q[0], truth.t[0]
    est, res = solver(g, start, LsParams(tol=1e-12, max_iter=50))
    assert res.status == "converged"
    assert rel_err(align_to_truth(est, truth), truth) < 1e-9


def test_lm_and_gn_agree_on_noisy_ring():
    truth, g = gen_ring(RingSpec(40, 0.03, 0.1, seed=3))
    init = chordal_init(g)
    a, ra = gauss_newton_solve(g, init)
    b, rb = levenberg_marquardt_solve(g, init)
    assert ra.history[-1].f + ra.history[-1].g == pytest.approx(rb.history[-1].f + rb.history[-1].g, rel=1e-6)
    assert rb.lm_lambda is not None and ra.lm_lambda is None
    assert ra.history[-1].f + ra.history[-1].g < ra.history[0].f + ra.history[0].g


def test_callback_and_vertex_zero_fixed():
    truth, g = gen_ring(RingSpec(20, 0.05, 0.1, seed=1))
    init = odometry_init(g)
    calls = []
    est, res = gauss_newton_solve(g, init, callback=lambda rec, poses: calls.append((rec.iter, poses.q[0].copy())))
    assert [c[0] for c in calls] == list(range(res.iter + 1))
    assert np.allclose(est.q[0], init.q[0]) and np.allclose(est.t[0], init.t[0])
    costs = [h.f + h.g for h in res.history]
    assert all(b < a for a, b in zip(costs, costs[1:]))


def test_max_iter_zero_and_params():
    truth, g = gen_ring(RingSpec(6, 0.01, 0.01))
    est, res = gauss_newton_solve(g, truth, LsParams(max_iter=0))
    assert res.iter == 0 and len(res.history) == 1
    with pytest.raises(ValueError):
        LsParams(lm_up=0.5)
    with pytest.raises(ValueError):
        gauss_newton_solve(g, Poses.identity(3))
