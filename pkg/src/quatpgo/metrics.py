"""Accuracy metrics against ground truth."""
import numpy as np

from .graph import Poses
from .quat import angle_between, qconj, qmul, rotate_vec

ALIGN_MODES = ("anchor0", "none")


def align_to_truth(est, truth, mode="anchor0"):
    """Express ``est`` in the frame of ``truth``.

    ``anchor0`` applies the rigid transform that maps estimated pose 0 onto
    truth pose 0, then flips each quaternion into its truth hemisphere.
    ``none`` returns a copy unchanged.
    """
    if len(est) != len(truth):
        raise ValueError(f"pose count mismatch: {len(est)} estimated vs {len(truth)} truth")
    if mode == "none":
        return est.copy()
    if mode != "anchor0":
        raise ValueError(f"unknown alignment mode {mode!r}; expected one of {ALIGN_MODES}")
    if len(est) == 0:
        return est.copy()
    g = qmul(truth.q[0], qconj(est.q[0]))
    q = qmul(g, est.q)
    t = rotate_vec(g, est.t - est.t[0]) + truth.t[0]
    sign = np.where(np.sum(q * truth.q, axis=1) < 0.0, -1.0, 1.0)
    return Poses(q * sign[:, None], t)


def _errors(est, truth):
    if len(est) != len(truth):
        raise ValueError(f"pose count mismatch: {len(est)} estimated vs {len(truth)} truth")
    return np.linalg.norm(est.q - truth.q) + np.linalg.norm(est.t - truth.t)


def rel_err(est, truth):
    """``(||q - q0|| + ||t - t0||) / (||q0|| + ||t0||)`` over stacked components."""
    den = np.linalg.norm(truth.q) + np.linalg.norm(truth.t)
    if den == 0:
        raise ValueError("truth poses have zero norm")
    return float(_errors(est, truth) / den)


def nrmse(est, truth):
    """``(||q - q0|| + ||t - t0||) / ((max t0 - min t0) sqrt(n))``."""
    span = float(truth.t.max() - truth.t.min()) if len(truth) else 0.0
    if span == 0.0:
        raise ValueError("all truth translation coordinates are identical; NRMSE undefined")
    return float(_errors(est, truth) / (span * np.sqrt(len(truth))))


def evaluate(est, truth, mode="anchor0"):
    """Metric summary after alignment, including per-pose error quantiles."""
    aligned = align_to_truth(est, truth, mode)
    rot = np.degrees(angle_between(aligned.q, truth.q))
    trans = np.linalg.norm(aligned.t - truth.t, axis=1)
    qs = (0.5, 0.9, 0.99, 1.0)

    def quant(x):
        return {f"q{int(round(100 * p))}": float(np.quantile(x, p)) for p in qs} if len(x) else {}

    out = {"n": len(truth), "rel_err": rel_err(aligned, truth)}
    try:
        out["nrmse"] = nrmse(aligned, truth)
    except ValueError:
        out["nrmse"] = None
    out["rotation_error_deg"] = quant(rot)
    out["translation_error"] = quant(trans)
    return out
