"""Detection-quality scoring against known object centers."""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import linear_sum_assignment


def match_detections(
    predicted: list[tuple[float, float]],
    truth: list[tuple[float, float]],
    tolerance: float,
) -> tuple[int, int, int]:
    """Optimal one-to-one matching within a distance tolerance.

    Returns (true positives, false positives, false negatives).
    """
    if not predicted or not truth:
        return 0, len(predicted), len(truth)
    cost = np.array(
        [[math.dist(p, t) for t in truth] for p in predicted], dtype=np.float64
    )
    rows, cols = linear_sum_assignment(cost)
    tp = int(sum(cost[r, c] <= tolerance for r, c in zip(rows, cols)))
    return tp, len(predicted) - tp, len(truth) - tp


def f1_score(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0
