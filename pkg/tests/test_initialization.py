import numpy as np
import pytest

from quatpgo.graph import PoseGraph
from quatpgo.initialization import (
    DisconnectedGraphError,
    chordal_init,
    chordal_rotations,
    odometry_init,
    synchronize_signs,
)
from quatpgo.metrics import align_to_truth, rel_err
from quatpgo.quat import qmul, to_rotation_matrix
from quatpgo.synth import CubeSpec, RingSpec, gen_cube, gen_ring, perturb_measurements

from conftest import unit_quats


@pytest.mark.parametrize("make", [lambda: gen_ring(RingSpec(12)), lambda: gen_cube(CubeSpec(3, 0.3, seed=1))])
def test_noiseless_recovery(make):
    truth, g = make()
    for init in (odometry_init(g), chordal_init(g)):
        assert rel_err(align_to_truth(init, truth), truth) < 1e-6


def test_odometry_uses_reverse_edges():
    rng = np.random.default_rng(0)
    from quatpgo.graph import Poses

    truth = Poses(unit_quats(rng, 4), rng.standard_normal((4, 3)))
    truth.q[0] = [1.0, 0, 0, 0]
    truth.t[0] = 0.0
    I, J = np.array([1, 1, 3]), np.array([0, 2, 2])
    qm, tm = perturb_measurements(truth, I, J, 0.0, 0.0)
    g = PoseGraph(4, I, J, qm, tm, np.eye(4), np.eye(4))
    est = odometry_init(g)
    assert np.allclose(np.abs(np.sum(est.q * truth.q, axis=1)), 1.0)
    assert np.allclose(est.t, truth.t)


def test_chordal_rotations_noiseless():
    truth, g = gen_cube(CubeSpec(3, 0.5, seed=0))
    R = chordal_rotations(g)
    R0 = to_rotation_matrix(truth.q[0])
    expect = np.swapaxes(R0, 0, 1) @ to_rotation_matrix(truth.q)
    assert np.allclose(R, expect, atol=1e-9)


def test_sign_synchronization():
    truth, g = gen_ring(RingSpec(10))
    q = truth.q * np.where(np.arange(10) % 3 == 0, -1.0, 1.0)[:, None]
    q[0] = truth.q[0]
    fixed = synchronize_signs(g, q)
    assert np.allclose(fixed, truth.q)
    pred = qmul(fixed[g.edges_i], g.q_meas)
    assert np.all(np.sum(pred * fixed[g.edges_j], axis=1) > 0)


def test_chordal_beats_odometry_on_noisy_ring():
    wins = 0
    for seed in range(3):
        truth, g = gen_ring(RingSpec(60, 0.05, 0.1, seed=seed))
        c = rel_err(align_to_truth(chordal_init(g), truth), truth)
        o = rel_err(align_to_truth(odometry_init(g), truth), truth)
        wins += c < o
    assert wins >= 2


def test_disconnected_graph_rejected():
    g = PoseGraph(4, [0, 2], [1, 3], np.tile([1.0, 0, 0, 0], (2, 1)), np.zeros((2, 3)), np.eye(4), np.eye(4))
    for fn in (odometry_init, chordal_init):
        with pytest.raises(DisconnectedGraphError, match="2 connected components"):
            fn(g)


def test_single_vertex():
    g = PoseGraph(1, [], [], np.zeros((0, 4)), np.zeros((0, 3)), np.zeros((0, 4, 4)), np.zeros((0, 4, 4)))
    assert np.allclose(chordal_init(g).q, [[1.0, 0, 0, 0]])
    assert np.allclose(odometry_init(g).t, 0.0)
