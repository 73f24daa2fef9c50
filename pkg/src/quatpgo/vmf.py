"""von Mises-Fisher distribution on the 3-sphere (unit quaternions).

Sampling uses Wood's rejection scheme: draw the cosine ``w = mu^T x`` from its
marginal with a Beta envelope, then attach a uniform direction orthogonal to
``mu``.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import ive

from .quat import IDENTITY

log = logging.getLogger(__name__)

DIM = 4
MAX_PROPOSALS = 1000

CONVENTIONS = ("inverse-variance", "literal")


@dataclass(frozen=True)
class VmfParams:
    mu: np.ndarray
    kappa: float

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        if mu.shape != (DIM,):
            raise ValueError(f"mu must have shape (4,), got {mu.shape}")
        if abs(np.linalg.norm(mu) - 1.0) > 1e-9:
            raise ValueError("mu must be a unit vector")
        if not np.isfinite(self.kappa) or self.kappa < 0:
            raise ValueError(f"kappa must be finite and >= 0, got {self.kappa}")
        object.__setattr__(self, "mu", mu)


def log_normalizer(kappa):
    """``log c_4(kappa)`` where ``c_4 = kappa / ((2 pi)^2 I_1(kappa))``."""
    kappa = float(kappa)
    if kappa < 1e-6:
        # I_1(k) = k/2 (1 + k^2/8 + ...)
        return np.log(2.0) - 2.0 * np.log(2.0 * np.pi) - np.log1p(kappa**2 / 8.0)
    log_i1 = np.log(ive(1, kappa)) + kappa
    return np.log(kappa) - 2.0 * np.log(2.0 * np.pi) - log_i1


def vmf_logpdf(params, x):
    x = np.asarray(x, dtype=float)
    nrm = np.linalg.norm(x, axis=-1)
    if np.any(np.abs(nrm - 1.0) > 1e-6):
        raise ValueError("vmf_logpdf expects unit vectors")
    return log_normalizer(params.kappa) + params.kappa * (x @ params.mu)


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _sample_cosines(kappa, count, rng):
    d1 = DIM - 1
    # stable form of (-2k + sqrt(4k^2 + d1^2)) / d1
    b = d1 / (2.0 * kappa + np.sqrt(4.0 * kappa**2 + d1**2))
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + d1 * np.log(1.0 - x0**2)

    out = np.empty(count)
    pending = np.arange(count)
    proposals = 0
    total = 0
    while pending.size:
        if proposals >= MAX_PROPOSALS:
            raise RuntimeError(
                f"vMF rejection sampler exceeded {MAX_PROPOSALS} proposals per sample (kappa={kappa})"
            )
        k = pending.size
        z = rng.beta(d1 / 2.0, d1 / 2.0, size=k)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.uniform(size=k)
        ok = kappa * w + d1 * np.log(1.0 - x0 * w) - c >= np.log(u)
        out[pending[ok]] = w[ok]
        pending = pending[~ok]
        proposals += 1
        total += k
    if count:
        log.debug("vMF sampler: kappa=%g acceptance=%.3f", kappa, count / total)
    return out


def _orthonormal_complement(mu):
    # columns span mu^perp
    q, _ = np.linalg.qr(np.column_stack([mu, np.eye(DIM)]))
    basis = q[:, 1:DIM]
    return basis


def vmf_sample(params, seed, count):
    """Draw ``count`` unit 4-vectors from vMF(mu, kappa); deterministic per seed."""
    if count < 0:
        raise ValueError("count must be >= 0")
    rng = _rng(seed)
    w = _sample_cosines(params.kappa, count, rng)
    v = rng.standard_normal((count, DIM - 1))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    basis = _orthonormal_complement(params.mu)
    x = w[:, None] * params.mu[None, :] + np.sqrt(np.clip(1.0 - w**2, 0.0, None))[:, None] * (v @ basis.T)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def kappa_from_sigma(sigma_r, convention="inverse-variance"):
    """Concentration used for rotation noise of level ``sigma_r``.

    ``inverse-variance``: ``2 / sigma_r^2`` (small sigma means little noise).
    ``literal``: ``sigma_r^2 / 2``, the generator formula taken at face value.
    """
    if sigma_r <= 0:
        raise ValueError("sigma_r must be > 0")
    if convention == "inverse-variance":
        return 2.0 / sigma_r**2
    if convention == "literal":
        return 0.5 * sigma_r**2
    raise ValueError(f"unknown kappa convention {convention!r}; expected one of {CONVENTIONS}")


def sample_rotation_noise(sigma_r, convention="inverse-variance", seed=None, count=None):
    """Rotation noise quaternions ``~ vMF([1, 0, 0, 0], kappa(sigma_r))``.

    Returns a single quaternion when ``count`` is None, else a ``(count, 4)`` array.
    """
    kappa = kappa_from_sigma(sigma_r, convention)
    params = VmfParams(IDENTITY, kappa)
    out = vmf_sample(params, seed, 1 if count is None else count)
    return out[0] if count is None else out
