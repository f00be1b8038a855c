"""Divergences between finite distributions.

Support violations return ``INFINITE`` instead of raising or emitting a
floating-point warning.
"""
from __future__ import annotations

import math

import numpy as np

INFINITE = math.inf


def _pair(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    return p, q


def chi_squared(p, q) -> float:
    """sum_x (p/q - 1)^2 q."""
    p, q = _pair(p, q)
    on = q > 0
    if np.any(p[~on] > 0):
        return INFINITE
    r = p[on] / q[on]
    return float(np.sum((r - 1.0) ** 2 * q[on]))


def chi_squared_variance(p, q) -> float:
    """Variance of the likelihood ratio p/q under q (population moments)."""
    p, q = _pair(p, q)
    on = q > 0
    if np.any(p[~on] > 0):
        return INFINITE
    r = p[on] / q[on]
    m = np.sum(q[on] * r)
    return float(np.sum(q[on] * (r - m) ** 2))


def forward_kl(p, q) -> float:
    """KL(p || q) with 0 log 0 = 0.

    Evaluated as ``sum p (r - 1 - log r) + q(off p's support)`` with ``r = q/p``:
    every term is nonnegative, so nearby distributions do not cancel to noise.
    ``log r`` goes through ``log1p`` near 1 and through ``log q - log p`` otherwise.
    """
    p, q = _pair(p, q)
    on = p > 0
    if np.any(q[on] <= 0):
        return INFINITE
    pp, qq = p[on], q[on]
    r = qq / pp
    with np.errstate(divide="ignore", invalid="ignore"):
        near = r - 1.0 - np.log1p(r - 1.0)
        far = r - 1.0 - (np.log(qq) - np.log(pp))
    terms = np.where(np.abs(r - 1.0) < 0.5, near, far)
    return float(np.sum(pp * terms) + np.sum(q[~on]))


def reverse_kl(p, q) -> float:
    """KL(q || p): the coverage-enforcing direction used by TRPO-style constraints."""
    return forward_kl(q, p)


DIVERGENCES = {
    "chi2": chi_squared,
    "forward_kl": forward_kl,
    "reverse_kl": reverse_kl,
}
