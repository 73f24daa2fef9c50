"""Pose graph data model: poses, measurement edges and vertex adjacency."""
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
import scipy.sparse as sp

from .quat import IDENTITY, qnormalize


@dataclass
class Poses:
    """``n`` poses: unit quaternions ``q`` (n, 4) and translations ``t`` (n, 3)."""

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.q = np.array(self.q, dtype=float, order="C").reshape(-1, 4)
        self.t = np.array(self.t, dtype=float, order="C").reshape(-1, 3)
        if len(self.q) != len(self.t):
            raise ValueError("rotation and translation counts differ")

    def __len__(self):
        return len(self.q)

    def copy(self):
        return Poses(self.q.copy(), self.t.copy())

    @classmethod
    def identity(cls, n):
        return cls(np.tile(IDENTITY, (n, 1)), np.zeros((n, 3)))


@dataclass(frozen=True)
class Edge:
    """One relative measurement ``(q_ij, t_ij)`` from vertex ``i`` to ``j``."""

    i: int
    j: int
    q_ij: np.ndarray
    t_ij: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray

    @property
    def sigma11(self):
        return float(self.sigma1[0, 0])

    @property
    def sigma12(self):
        return self.sigma1[0, 1:].copy()

    @property
    def sigma1_hat(self):
        """Translational 3x3 block of ``sigma1``."""
        return self.sigma1[1:, 1:].copy()


class Adjacency(NamedTuple):
    out_ptr: np.ndarray
    out_idx: np.ndarray
    in_ptr: np.ndarray
    in_idx: np.ndarray


def build_adjacency(n, edges_i, edges_j):
    """CSR-style out/in edge lists per vertex.

    Edge ``k`` appears once in the out-list of ``edges_i[k]`` and once in the
    in-list of ``edges_j[k]``; within a list edges keep ascending index order.
    """
    edges_i = np.asarray(edges_i, dtype=np.int64)
    edges_j = np.asarray(edges_j, dtype=np.int64)
    if edges_i.size and (edges_i.min() < 0 or edges_j.min() < 0 or edges_i.max() >= n or edges_j.max() >= n):
        raise ValueError(f"edge references a vertex outside [0, {n})")
    if np.any(edges_i == edges_j):
        raise ValueError("self-loop edges (i == j) are not allowed")

    def csr(keys):
        order = np.argsort(keys, kind="stable").astype(np.int64)
        counts = np.bincount(keys, minlength=n)
        ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=ptr[1:])
        return ptr, order

    out_ptr, out_idx = csr(edges_i)
    in_ptr, in_idx = csr(edges_j)
    return Adjacency(out_ptr, out_idx, in_ptr, in_idx)


class Packed(NamedTuple):
    """Flat contiguous arrays handed to the compute kernels."""

    n: int
    I: np.ndarray
    J: np.ndarray
    a: np.ndarray  # [0, t_ij] as (m, 4)
    qm: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    out_ptr: np.ndarray
    out_idx: np.ndarray
    in_ptr: np.ndarray
    in_idx: np.ndarray
    out_mat: sp.csr_matrix  # (n, m) incidence, 1 where edge leaves vertex
    in_mat: sp.csr_matrix
    s1_diag: np.ndarray  # (m, 2) [s0, s] where S1 == diag(s0, s I3), else NaN
    s2_iso: np.ndarray  # (m,) s where S2 == s I4, else NaN


def _weight_structure(S1, S2):
    """Flag edges whose weights have the common diagonal forms (kernels take shortcuts)."""
    m = len(S1)
    e4 = np.eye(4)
    s0 = S1[:, 0, 0] if m else np.zeros(0)
    s = S1[:, 1, 1] if m else np.zeros(0)
    model1 = np.zeros((m, 4, 4))
    model1[:, 0, 0] = s0
    model1[:, 1:, 1:] = s[:, None, None] * np.eye(3)
    ok1 = np.all(S1 == model1, axis=(1, 2))
    s1_diag = np.where(ok1[:, None], np.column_stack([s0, s]), np.nan)
    s2 = S2[:, 0, 0] if m else np.zeros(0)
    ok2 = np.all(S2 == s2[:, None, None] * e4, axis=(1, 2))
    s2_iso = np.where(ok2, s2, np.nan)
    return np.ascontiguousarray(s1_diag.reshape(m, 2)), s2_iso


@dataclass
class PoseGraph:
    """Directed multigraph of ``n`` vertices and ``m`` relative measurements.

    Edge data is stored column-wise; ``sigma1``/``sigma2`` are per-edge 4x4
    weights for the translation and rotation residuals. ``vertex_ids`` maps the
    dense index back to the id used in the source file. Treat as immutable.
    """

    n: int
    edges_i: np.ndarray
    edges_j: np.ndarray
    q_meas: np.ndarray
    t_meas: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray
    vertex_ids: Optional[np.ndarray] = None
    info6: Optional[np.ndarray] = None
    adjacency: Adjacency = field(init=False, repr=False)
    _packed: Optional[Packed] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        m = len(self.edges_i)
        self.edges_i = np.array(self.edges_i, dtype=np.int64, order="C").reshape(m)
        self.edges_j = np.array(self.edges_j, dtype=np.int64, order="C").reshape(m)
        self.q_meas = np.array(self.q_meas, dtype=float, order="C").reshape(m, 4)
        self.t_meas = np.array(self.t_meas, dtype=float, order="C").reshape(m, 3)
        self.sigma1 = np.array(np.broadcast_to(self.sigma1, (m, 4, 4)), dtype=float, order="C")
        self.sigma2 = np.array(np.broadcast_to(self.sigma2, (m, 4, 4)), dtype=float, order="C")
        if m:
            drift = np.abs(np.linalg.norm(self.q_meas, axis=1) - 1.0) > 1e-12
            if drift.any():
                self.q_meas[drift] = qnormalize(self.q_meas[drift])
        if self.vertex_ids is None:
            self.vertex_ids = np.arange(self.n, dtype=np.int64)
        self.adjacency = build_adjacency(self.n, self.edges_i, self.edges_j)
        for arr in (self.edges_i, self.edges_j, self.q_meas, self.t_meas, self.sigma1, self.sigma2):
            arr.setflags(write=False)

    @property
    def m(self):
        return len(self.edges_i)

    def edge(self, k):
        return Edge(
            int(self.edges_i[k]),
            int(self.edges_j[k]),
            self.q_meas[k].copy(),
            self.t_meas[k].copy(),
            self.sigma1[k].copy(),
            self.sigma2[k].copy(),
        )

    def edges(self):
        return [self.edge(k) for k in range(self.m)]

    def out_edges(self, v):
        a = self.adjacency
        return a.out_idx[a.out_ptr[v] : a.out_ptr[v + 1]]

    def in_edges(self, v):
        a = self.adjacency
        return a.in_idx[a.in_ptr[v] : a.in_ptr[v + 1]]

    @property
    def packed(self):
        if self._packed is None:
            m = self.m
            a = np.zeros((m, 4))
            a[:, 1:] = self.t_meas
            ones = np.ones(m)
            cols = np.arange(m)
            out_mat = sp.csr_matrix((ones, (self.edges_i, cols)), shape=(self.n, m))
            in_mat = sp.csr_matrix((ones, (self.edges_j, cols)), shape=(self.n, m))
            adj = self.adjacency
            self._packed = Packed(
                self.n, self.edges_i, self.edges_j, a, self.q_meas, self.sigma1, self.sigma2,
                adj.out_ptr, adj.out_idx, adj.in_ptr, adj.in_idx, out_mat, in_mat,
                *_weight_structure(self.sigma1, self.sigma2),
            )
        return self._packed

    @classmethod
    def from_edges(cls, n, edges, **kw):
        """Build from a sequence of :class:`Edge`."""
        if not edges:
            return cls(n, np.zeros(0), np.zeros(0), np.zeros((0, 4)), np.zeros((0, 3)),
                       np.zeros((0, 4, 4)), np.zeros((0, 4, 4)), **kw)
        return cls(
            n,
            np.array([e.i for e in edges]),
            np.array([e.j for e in edges]),
            np.array([e.q_ij for e in edges]),
            np.array([e.t_ij for e in edges]),
            np.array([e.sigma1 for e in edges]),
            np.array([e.sigma2 for e in edges]),
            **kw,
        )

    def components(self):
        """Connected components (ignoring direction) as a list of vertex arrays."""
        from scipy.sparse.csgraph import connected_components

        adj = sp.coo_matrix((np.ones(self.m), (self.edges_i, self.edges_j)), shape=(self.n, self.n))
        k, labels = connected_components(adj, directed=False)
        return [np.flatnonzero(labels == c) for c in range(k)]
