"""Backend selection for the per-vertex kernels.

The compiled extension is used when it imports; set ``QUATPGO_BACKEND=python``
to force the numpy fallback. ``load(name)`` returns a specific backend module.
"""
import importlib
import logging
import os

log = logging.getLogger(__name__)

BACKENDS = ("cython", "python")
_MODULES = {"cython": "quatpgo._ckernels", "python": "quatpgo._pykernels"}


def load(name):
    if name not in _MODULES:
        raise ValueError(f"unknown backend {name!r}; expected one of {BACKENDS}")
    return importlib.import_module(_MODULES[name])


def available():
    out = []
    for name in BACKENDS:
        try:
            load(name)
        except ImportError:
            continue
        out.append(name)
    return out


def _select():
    want = os.environ.get("QUATPGO_BACKEND", "").strip().lower()
    if want:
        return want, load(want)
    try:
        return "cython", load("cython")
    except ImportError as exc:
        log.info("compiled kernels unavailable (%s); using numpy fallback", exc)
        return "python", load("python")


BACKEND, _impl = _select()

objective = _impl.objective
grad_p = _impl.grad_p
grad_q = _impl.grad_q
p_step = _impl.p_step
q_step = _impl.q_step
t_rhs = _impl.t_rhs


def default_threads():
    """Thread count from ``PGO_THREADS``, else the number of logical cores."""
    env = os.environ.get("PGO_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1
