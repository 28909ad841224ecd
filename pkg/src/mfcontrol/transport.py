"""Exact optimal-transport costs between equal-size uniform empirical measures."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .errors import SizeMismatchError


def _as_cloud(points: np.ndarray) -> np.ndarray:
    cloud = np.asarray(points, dtype=float)
    if cloud.ndim == 1:
        cloud = cloud.reshape(-1, 1)
    return cloud


def ot_cost(a: np.ndarray, b: np.ndarray, *, metric: str = "sqeuclidean") -> float:
    """Minimal mean assignment cost between two clouds of the same size.

    With uniform weights on both sides an optimal coupling is a permutation, so the
    transport problem reduces to a linear assignment on the ``n x n`` cost matrix.
    ``metric`` is any :func:`scipy.spatial.distance.cdist` metric; the default is the
    squared Euclidean cost.
    """
    cloud_a = _as_cloud(a)
    cloud_b = _as_cloud(b)
    if cloud_a.shape[0] != cloud_b.shape[0]:
        raise SizeMismatchError(
            f"Clouds must have equal sizes, got {cloud_a.shape[0]} and {cloud_b.shape[0]}"
        )
    if cloud_a.shape[0] == 0:
        raise SizeMismatchError("Clouds must contain at least one point")

    cost = cdist(cloud_a, cloud_b, metric=metric)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / cloud_a.shape[0])


def w1_1d_abs(a: np.ndarray, b: np.ndarray) -> float:
    """1-D transport cost under ``|x - y|``: mean gap between sorted samples."""
    xs = np.sort(np.asarray(a, dtype=float).ravel())
    ys = np.sort(np.asarray(b, dtype=float).ravel())
    if xs.shape != ys.shape:
        raise SizeMismatchError(f"Clouds must have equal sizes, got {xs.size} and {ys.size}")
    return float(np.abs(xs - ys).mean())
