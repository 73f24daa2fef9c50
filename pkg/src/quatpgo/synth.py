"""Synthetic ring and cube pose graphs with Gaussian/vMF measurement noise.

Relative measurements for an edge ``(i, j)`` are

    t_ij = R_i^T (t_j - t_i) + N(0, sigma_t^2 I)
    q_ij = q_i* q_j q_eps,   q_eps ~ vMF([1, 0, 0, 0], kappa(sigma_r))

and each edge is weighted by ``S1 = diag(1, sigma_t^-2 I3)`` and
``S2 = kappa I4``. A zero noise level gives unit weights on that term.
"""
from dataclasses import dataclass

import numpy as np

from .graph import PoseGraph, Poses
from .quat import IDENTITY, from_axis_angle, qconj, qmul, rotate_vec
from .vmf import kappa_from_sigma, sample_rotation_noise


@dataclass(frozen=True)
class RingSpec:
    n: int
    sigma_r: float = 0.0
    sigma_t: float = 0.0
    seed: int = 0
    radius: float = 2.0
    convention: str = "inverse-variance"

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("a ring needs n >= 3 poses")
        if self.sigma_r < 0 or self.sigma_t < 0 or self.radius <= 0:
            raise ValueError("noise levels must be >= 0 and radius > 0")


@dataclass(frozen=True)
class CubeSpec:
    n_hat: int
    p_cube: float = 0.3
    sigma_r: float = 0.0
    sigma_t_rel: float = 0.0
    seed: int = 0
    convention: str = "inverse-variance"

    def __post_init__(self):
        if self.n_hat < 2:
            raise ValueError("n_hat must be >= 2")
        if not 0.0 <= self.p_cube <= 1.0:
            raise ValueError("p_cube must lie in [0, 1]")
        if self.sigma_r < 0 or self.sigma_t_rel < 0:
            raise ValueError("noise levels must be >= 0")

    @property
    def sigma_t(self):
        return self.sigma_t_rel / self.n_hat


def edge_weights(m, sigma_r, sigma_t, convention="inverse-variance"):
    """Per-edge ``(S1, S2)`` stacks for the given noise levels."""
    S1 = np.tile(np.eye(4), (m, 1, 1))
    if sigma_t > 0:
        S1[:, 1:, 1:] *= sigma_t**-2
    kappa = kappa_from_sigma(sigma_r, convention) if sigma_r > 0 else 1.0
    S2 = np.tile(kappa * np.eye(4), (m, 1, 1))
    return S1, S2


def perturb_measurements(truth, edges_i, edges_j, sigma_r, sigma_t, seed=None,
                         convention="inverse-variance"):
    """Noisy relative measurements ``(q_meas (m, 4), t_meas (m, 3))`` from ``truth`` poses."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    I = np.asarray(edges_i, dtype=np.int64)
    J = np.asarray(edges_j, dtype=np.int64)
    q, t = truth.q, truth.t
    m = len(I)
    t_meas = rotate_vec(qconj(q[I]), t[J] - t[I])
    if sigma_t > 0:
        t_meas = t_meas + sigma_t * rng.standard_normal((m, 3))
    q_meas = qmul(qconj(q[I]), q[J])
    if sigma_r > 0 and m:
        q_meas = qmul(q_meas, sample_rotation_noise(sigma_r, convention, seed=rng, count=m))
    return q_meas / np.linalg.norm(q_meas, axis=1, keepdims=True), t_meas


def ring_truth(n, radius=2.0):
    theta = 2.0 * np.pi * np.arange(n) / n
    t = np.column_stack([radius * np.cos(theta), radius * np.sin(theta), np.zeros(n)])
    q = from_axis_angle(np.tile([0.0, 0.0, 1.0], (n, 1)), theta + 0.5 * np.pi)
    return Poses(q, t)


def gen_ring(spec):
    """Closed loop of ``n`` poses on a circle; returns ``(truth, graph)`` with ``m = n``."""
    truth = ring_truth(spec.n, spec.radius)
    I = np.arange(spec.n)
    J = (I + 1) % spec.n
    rng = np.random.default_rng(spec.seed)
    qm, tm = perturb_measurements(truth, I, J, spec.sigma_r, spec.sigma_t, rng, spec.convention)
    S1, S2 = edge_weights(spec.n, spec.sigma_r, spec.sigma_t, spec.convention)
    return truth, PoseGraph(spec.n, I, J, qm, tm, S1, S2)


def boustrophedon(n_hat):
    """Grid cells ``(x, y, z)`` in serpentine visiting order; consecutive cells are neighbours."""
    cells = []
    row = 0
    for z in range(n_hat):
        ys = range(n_hat) if z % 2 == 0 else range(n_hat - 1, -1, -1)
        for y in ys:
            xs = range(n_hat) if row % 2 == 0 else range(n_hat - 1, -1, -1)
            cells.extend((x, y, z) for x in xs)
            row += 1
    return np.array(cells, dtype=np.int64)


_AXIS_HEADINGS = {
    (1, 0, 0): IDENTITY,
    (-1, 0, 0): from_axis_angle([0.0, 0.0, 1.0], np.pi),
    (0, 1, 0): from_axis_angle([0.0, 0.0, 1.0], 0.5 * np.pi),
    (0, -1, 0): from_axis_angle([0.0, 0.0, 1.0], -0.5 * np.pi),
    (0, 0, 1): from_axis_angle([0.0, 1.0, 0.0], -0.5 * np.pi),
    (0, 0, -1): from_axis_angle([0.0, 1.0, 0.0], 0.5 * np.pi),
}


def cube_truth(n_hat):
    """Serpentine path through an ``n_hat^3`` grid spanning a side-2 cube, heading along travel."""
    cells = boustrophedon(n_hat)
    t = cells * (2.0 / (n_hat - 1))
    steps = np.diff(cells, axis=0)
    steps = np.vstack([steps, steps[-1:]])
    q = np.array([_AXIS_HEADINGS[tuple(s)] for s in steps])
    return Poses(q, t), cells


def cube_closure_pairs(cells):
    """Unordered grid-neighbour pairs ``(a, b)``, ``a < b`` in visit order, not consecutive on the path."""
    n_hat = int(cells.max()) + 1
    index = np.empty((n_hat,) * 3, dtype=np.int64)
    index[tuple(cells.T)] = np.arange(len(cells))
    pairs = []
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, n_hat - 1)
        hi[axis] = slice(1, n_hat)
        a = index[tuple(lo)].ravel()
        b = index[tuple(hi)].ravel()
        pairs.append(np.column_stack([np.minimum(a, b), np.maximum(a, b)]))
    pairs = np.vstack(pairs)
    pairs = pairs[pairs[:, 1] - pairs[:, 0] != 1]
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order]


def expected_cube_edges(n_hat, p_cube):
    return 2 * (2 * n_hat**3 - 3 * n_hat**2 + 1) * p_cube + n_hat**3 - 1


def gen_cube(spec):
    """Grid-world trajectory with random loop closures; returns ``(truth, graph)``.

    Path edges are always present. Each non-path neighbour pair is sampled
    once per direction with probability ``p_cube``.
    """
    truth, cells = cube_truth(spec.n_hat)
    n = len(cells)
    topo_rng, noise_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(2))
    pairs = cube_closure_pairs(cells)
    keep = topo_rng.uniform(size=(len(pairs), 2)) < spec.p_cube
    fwd = pairs[keep[:, 0]]
    bwd = pairs[keep[:, 1]][:, ::-1]
    closures = np.vstack([fwd, bwd]) if len(fwd) + len(bwd) else np.zeros((0, 2), dtype=np.int64)
    order = np.lexsort((closures[:, 1], closures[:, 0])) if len(closures) else []
    closures = closures[order]
    I = np.concatenate([np.arange(n - 1), closures[:, 0]]).astype(np.int64)
    J = np.concatenate([np.arange(1, n), closures[:, 1]]).astype(np.int64)
    sigma_t = spec.sigma_t
    qm, tm = perturb_measurements(truth, I, J, spec.sigma_r, sigma_t, noise_rng, spec.convention)
    S1, S2 = edge_weights(len(I), spec.sigma_r, sigma_t, spec.convention)
    return truth, PoseGraph(n, I, J, qm, tm, S1, S2)
