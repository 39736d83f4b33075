"""Scalar special functions used by the distribution solvers.

ierf is written here rather than imported: a Winitzki-style closed-form
initial guess refined by safeguarded Newton iterations.  Candidate steps
that leave the current sign-change bracket fall back to bisection, so the
iteration cannot diverge anywhere on (-1, 1).
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import DomainError

__all__ = ["erf", "ierf"]

_TWO_OVER_SQRT_PI = 2.0 / np.sqrt(np.pi)
_WINITZKI_A = 0.147


def ierf(p):
    """Inverse error function, elementwise.

    Args:
        p: scalar or ndarray with every entry in the open interval (-1, 1).

    Returns:
        x with erf(x) == p to within ~1e-15, same shape as p; a python float
        for scalar input.

    Raises:
        DomainError: if any |p| >= 1 (the inverse is unbounded there).
    """
    arr = np.asarray(p, dtype=np.float64)
    if np.any(np.abs(arr) >= 1.0) or not np.all(np.isfinite(arr)):
        raise DomainError("ierf: arguments must satisfy |p| < 1")

    # Winitzki approximation of ierf via the log of the complementary square
    ln1m = np.log1p(-arr * arr)
    t = 2.0 / (np.pi * _WINITZKI_A) + 0.5 * ln1m
    x = np.sign(arr) * np.sqrt(np.sqrt(t * t - ln1m / _WINITZKI_A) - t)

    # bracket wide enough for |p| < 1 - 1e-19; tightened as we iterate
    lo = np.full_like(arr, -6.5)
    hi = np.full_like(arr, 6.5)
    for _ in range(80):
        f = erf(x) - arr
        np.copyto(hi, x, where=f > 0.0)
        np.copyto(lo, x, where=f < 0.0)
        if np.all(np.abs(f) <= 1e-16):
            break
        step = f / (_TWO_OVER_SQRT_PI * np.exp(-x * x))
        cand = x - step
        # reject Newton candidates that escape the bracket
        bad = (cand <= lo) | (cand >= hi) | ~np.isfinite(cand)
        x = np.where(bad, 0.5 * (lo + hi), cand)
    if arr.ndim == 0:
        return float(x)
    return x
