import numpy as np
import pytest

from quatpgo import kernels
from quatpgo.graph import PoseGraph, Poses
from quatpgo.model import SplitVariables


#: (criterion, passed, detail) lines collected by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


def unit_quats(rng, n):
    q = rng.standard_normal((n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def spd(rng, k, scale=1.0):
    A = rng.standard_normal((k, k))
    return scale * (A @ A.T / k + 0.5 * np.eye(k))


def random_graph(rng, n, m, general=True):
    """Connected graph: a chain plus random extra edges, with random SPD weights."""
    I = list(range(n - 1))
    J = list(range(1, n))
    while len(I) < m:
        i, j = rng.choice(n, 2, replace=False)
        I.append(int(i))
        J.append(int(j))
    m = len(I)
    if general:
        S1 = np.array([spd(rng, 4) for _ in range(m)])
        S2 = np.array([spd(rng, 4) for _ in range(m)])
    else:
        S1 = np.tile(np.diag([1.0, 4.0, 4.0, 4.0]), (m, 1, 1))
        S2 = np.tile(3.0 * np.eye(4), (m, 1, 1))
    return PoseGraph(n, I, J, unit_quats(rng, m), rng.standard_normal((m, 3)), S1, S2)


def random_split(rng, n, unit_p=True):
    p = unit_quats(rng, n) if unit_p else rng.standard_normal((n, 4))
    q = p + 0.1 * rng.standard_normal((n, 4))
    return SplitVariables(p, q, rng.standard_normal((n, 3)), rng.standard_normal((n, 4)))


def random_poses(rng, n):
    return Poses(unit_quats(rng, n), rng.standard_normal((n, 3)))


def central_diff(fun, x, h=1e-6):
    """Central finite-difference gradient of a scalar function of an array."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (fun(xp) - fun(xm)) / (2 * h)
    return g


@pytest.fixture(params=kernels.available())
def backend(request, monkeypatch):
    """Route the model/solver kernels through each available backend in turn."""
    mod = kernels.load(request.param)
    for name in ("objective", "grad_p", "grad_q", "p_step", "q_step", "t_rhs"):
        monkeypatch.setattr(kernels, name, getattr(mod, name))
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
