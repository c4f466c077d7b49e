"""Accuracy measures used by the benchmark harness."""

from __future__ import annotations

import numpy as np


def _paired(pred, truth):
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.size != truth.size:
        raise ValueError("prediction and truth lengths differ")
    if pred.size == 0:
        raise ValueError("empty inputs")
    return pred, truth


def mae(pred, truth) -> float:
    """Mean absolute error."""
    pred, truth = _paired(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


def smse(pred, truth, truth_variance: float) -> float:
    """Mean squared error scaled by the variance of the true test values.

    A constant predictor at the true mean scores about 1; lower is better.
    """
    pred, truth = _paired(pred, truth)
    if not np.isfinite(truth_variance) or truth_variance <= 0:
        raise ValueError("truth_variance must be finite and > 0")
    return float(np.mean((pred - truth) ** 2) / truth_variance)
