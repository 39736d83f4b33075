"""Regression phase: smooth discrete bin scores into continuous heights."""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation
from .tensor import Tensor, reshape, tsum

__all__ = ["predict_heights"]


def predict_heights(probs: Tensor, bins) -> Tensor:
    """Probability-weighted average of bin centers, per pixel.

    Args:
        probs: (B, N, H, W) categorical bin probabilities.
        bins: BinSet whose centers are (B, N).

    Returns:
        (B, 1, H, W) heights in meters; a convex combination of centers,
        so always inside [h_min, h_max].

    Raises:
        ContractViolation: if any pixel's probabilities stray from sum 1
            by more than 1e-4 (signals an upstream normalization bug).
    """
    if probs.ndim != 4:
        raise ContractViolation(f"predict_heights: probs must be 4-d, got {probs.ndim}-d")
    b, n, _, _ = probs.shape
    if bins.centers.shape != (b, n):
        raise ContractViolation(
            f"predict_heights: centers {bins.centers.shape} do not match probs ({b}, {n})"
        )
    sums = probs.data.sum(axis=1)
    if np.max(np.abs(sums - 1.0)) > 1e-4:
        raise ContractViolation(
            "predict_heights: bin probabilities are not normalized "
            f"(worst deviation {np.max(np.abs(sums - 1.0)):.3e})"
        )
    centers = reshape(bins.centers, (b, n, 1, 1))
    return tsum(probs * centers, axis=1, keepdims=True)
