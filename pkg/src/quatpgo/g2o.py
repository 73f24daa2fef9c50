"""Reading and writing 3D pose graphs in g2o text format.

Recognized lines::

    VERTEX_SE3:QUAT id x y z qx qy qz qw
    EDGE_SE3:QUAT   i j x y z qx qy qz qw  I11 I12 ... I66   (21 upper-triangular entries)

The 6x6 information matrix is ordered translation first, rotation second.
Quaternions are ``(x, y, z, w)`` on disk and ``(w, x, y, z)`` in memory.
"""
import logging
from pathlib import Path

import numpy as np

from .graph import PoseGraph, Poses

log = logging.getLogger(__name__)

VERTEX_TAG = "VERTEX_SE3:QUAT"
EDGE_TAG = "EDGE_SE3:QUAT"
_TRIU = np.triu_indices(6)
RENORM_TOL = 1e-6


class G2oFormatError(ValueError):
    """Malformed or inconsistent g2o content."""


def info_from_triu(values):
    """Symmetric 6x6 matrix from its 21 row-major upper-triangular entries."""
    values = np.asarray(values, dtype=float)
    if values.shape != (21,):
        raise ValueError("expected 21 information entries")
    info = np.zeros((6, 6))
    info[_TRIU] = values
    return info + np.triu(info, 1).T


def info_to_triu(info):
    return np.asarray(info, dtype=float)[_TRIU]


def info_to_sigmas(info6, c=1.0):
    """Map a 6x6 information matrix onto the 4x4 translation/rotation weights.

    ``S1 = diag(c, info[:3, :3])`` (the real-part weight ``c`` never affects the
    objective) and ``S2 = kbar I4`` with ``kbar`` the mean rotational diagonal.
    Cross blocks between translation and rotation are dropped.
    """
    info6 = np.asarray(info6, dtype=float)
    if info6.shape != (6, 6) or not np.all(np.isfinite(info6)):
        raise ValueError("information matrix must be a finite 6x6 array")
    if not np.allclose(info6, info6.T, atol=1e-9 * max(1.0, np.abs(info6).max())):
        raise ValueError("information matrix is not symmetric")
    lo = np.linalg.eigvalsh(0.5 * (info6 + info6.T)).min()
    if lo < -1e-9 * max(1.0, np.abs(info6).max()):
        raise ValueError(f"information matrix is not positive semidefinite (min eigenvalue {lo:.3g})")
    S1 = np.zeros((4, 4))
    S1[0, 0] = c
    S1[1:, 1:] = info6[:3, :3]
    S2 = np.mean(np.diag(info6)[3:]) * np.eye(4)
    return S1, S2


def sigmas_to_info(sigma1, sigma2):
    """6x6 information with blocks ``S1_hat`` and ``mean(diag S2) I3`` (inverse of the mapping above)."""
    info = np.zeros((6, 6))
    info[:3, :3] = np.asarray(sigma1)[1:, 1:]
    info[3:, 3:] = np.mean(np.diag(sigma2)) * np.eye(3)
    return info


def _to_wxyz(xyzw):
    return np.array([xyzw[3], xyzw[0], xyzw[1], xyzw[2]], dtype=float)


def _normalize(q, what, lineno, counter):
    nrm = np.linalg.norm(q)
    if not np.isfinite(nrm) or nrm < 1e-15:
        raise G2oFormatError(f"line {lineno}: {what} has a degenerate quaternion")
    if abs(nrm - 1.0) > RENORM_TOL:
        counter[0] += 1
        return q / nrm
    return q


def load_g2o(path, c=1.0):
    """Parse a g2o file into ``(graph, poses)``.

    Vertex ids are remapped to ``0..n-1`` in ascending id order; the original
    ids are kept in ``graph.vertex_ids``. Unknown tags are skipped with a
    warning. Raises :class:`G2oFormatError` on malformed lines and on edges
    that reference undeclared vertices.
    """
    path = Path(path)
    vertices = {}
    edges = []
    unknown = 0
    renorm = [0]
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            tag = tok[0]
            try:
                if tag == VERTEX_TAG:
                    if len(tok) != 9:
                        raise G2oFormatError(f"line {lineno}: {VERTEX_TAG} needs 8 fields, got {len(tok) - 1}")
                    vid = int(tok[1])
                    vals = np.array(tok[2:9], dtype=float)
                    if vid in vertices:
                        raise G2oFormatError(f"line {lineno}: duplicate vertex id {vid}")
                    q = _normalize(_to_wxyz(vals[3:7]), f"vertex {vid}", lineno, renorm)
                    vertices[vid] = (q, vals[:3])
                elif tag == EDGE_TAG:
                    if len(tok) != 31:
                        raise G2oFormatError(f"line {lineno}: {EDGE_TAG} needs 30 fields, got {len(tok) - 1}")
                    i, j = int(tok[1]), int(tok[2])
                    vals = np.array(tok[3:31], dtype=float)
                    if not np.all(np.isfinite(vals)):
                        raise G2oFormatError(f"line {lineno}: non-finite value")
                    q = _normalize(_to_wxyz(vals[3:7]), f"edge {i}->{j}", lineno, renorm)
                    edges.append((lineno, i, j, vals[:3], q, info_from_triu(vals[7:28])))
                else:
                    unknown += 1
            except G2oFormatError:
                raise
            except ValueError as exc:
                raise G2oFormatError(f"line {lineno}: {exc}") from exc
    if unknown:
        log.warning("%s: skipped %d lines with unsupported tags", path, unknown)
    if renorm[0]:
        log.warning("%s: renormalized %d quaternions with norm drift > %g", path, renorm[0], RENORM_TOL)

    ids = np.array(sorted(vertices), dtype=np.int64)
    index = {int(v): k for k, v in enumerate(ids)}
    m = len(edges)
    I = np.empty(m, dtype=np.int64)
    J = np.empty(m, dtype=np.int64)
    qm = np.empty((m, 4))
    tm = np.empty((m, 3))
    S1 = np.empty((m, 4, 4))
    S2 = np.empty((m, 4, 4))
    info6 = np.empty((m, 6, 6))
    cross = 0
    for k, (lineno, i, j, t, q, info) in enumerate(edges):
        for v in (i, j):
            if v not in index:
                raise G2oFormatError(f"line {lineno}: edge references undeclared vertex {v}")
        if i == j:
            raise G2oFormatError(f"line {lineno}: self-loop edge on vertex {i}")
        I[k], J[k] = index[i], index[j]
        tm[k], qm[k], info6[k] = t, q, info
        try:
            S1[k], S2[k] = info_to_sigmas(info, c)
        except ValueError as exc:
            raise G2oFormatError(f"line {lineno}: {exc}") from exc
        if np.any(info[:3, 3:] != 0.0):
            cross += 1
    if cross:
        log.info("%s: ignored translation-rotation cross information on %d edges", path, cross)
    n = len(ids)
    graph = PoseGraph(n, I, J, qm, tm, S1, S2, vertex_ids=ids, info6=info6)
    q = np.array([vertices[int(v)][0] for v in ids]).reshape(n, 4)
    t = np.array([vertices[int(v)][1] for v in ids]).reshape(n, 3)
    return graph, Poses(q, t)


def _fmt(values):
    return " ".join(f"{float(v):.17g}" for v in values)


def _xyzw(q):
    return (q[1], q[2], q[3], q[0])


def save_g2o(path, graph=None, poses=None, vertex_ids=None):
    """Write vertices (from ``poses``) and edges (from ``graph``) to ``path``.

    Either part may be omitted. Values are written with 17 significant digits,
    so a load/save/load cycle reproduces the data exactly.
    """
    if graph is None and poses is None:
        raise ValueError("nothing to write: pass a graph, poses, or both")
    if vertex_ids is None:
        if graph is not None:
            vertex_ids = graph.vertex_ids
        else:
            vertex_ids = np.arange(len(poses))
    vertex_ids = np.asarray(vertex_ids, dtype=np.int64)
    if poses is not None and len(poses) != len(vertex_ids):
        raise ValueError(f"{len(poses)} poses but {len(vertex_ids)} vertex ids")
    lines = []
    if poses is not None:
        for vid, q, t in zip(vertex_ids, poses.q, poses.t):
            lines.append(f"{VERTEX_TAG} {int(vid)} {_fmt(t)} {_fmt(_xyzw(q))}")
    if graph is not None:
        for k in range(graph.m):
            info = graph.info6[k] if graph.info6 is not None else sigmas_to_info(graph.sigma1[k], graph.sigma2[k])
            i = int(vertex_ids[graph.edges_i[k]])
            j = int(vertex_ids[graph.edges_j[k]])
            lines.append(
                f"{EDGE_TAG} {i} {j} {_fmt(graph.t_meas[k])} {_fmt(_xyzw(graph.q_meas[k]))} "
                f"{_fmt(info_to_triu(info))}"
            )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
