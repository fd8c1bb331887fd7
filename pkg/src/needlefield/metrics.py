"""Reconstruction metrics: symmetric Chamfer distances (plain and
squared), percentile Chamfer over pooled per-point distances, and
volumetric IoU between occupancy grids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .field import ScalarGrid
from .geometry import PointCloud


def _as_points(cloud) -> np.ndarray:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
        raise ValueError("need a nonempty (n, 3) point set")
    return pts


def nearest_distances(a, b) -> np.ndarray:
    """Distance from each point of a to its nearest point of b."""
    a, b = _as_points(a), _as_points(b)
    d, _ = cKDTree(b).query(a)
    return d


@dataclass(frozen=True)
class ChamferReport:
    """Symmetric Chamfer values plus the per-direction means.

    l1 averages plain nearest distances, l2 squared ones; both use the
    same distance arrays, and each is the mean of its two directional
    means.  percentiles maps each requested quantile to the pooled
    per-point distance at that (lower-interpolation) quantile.
    """

    l1: float
    l2: float
    a_to_b_l1: float
    b_to_a_l1: float
    a_to_b_l2: float
    b_to_a_l2: float
    percentiles: dict

    def value(self, power: int) -> float:
        if power == 1:
            return self.l1
        if power == 2:
            return self.l2
        raise ValueError("power must be 1 or 2")


DEFAULT_QUANTILES = (0.05, 0.5, 0.95)


def lower_quantile(values: np.ndarray, q: float) -> float:
    """Sorted-order statistic at index ceil(q * n) - 1, q in (0, 1]."""
    if not 0.0 < q <= 1.0:
        raise ValueError("quantiles must lie in (0, 1]")
    values = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if values.size == 0:
        raise ValueError("no values to take a quantile of")
    idx = max(int(np.ceil(q * values.size)) - 1, 0)
    return float(values[idx])


def chamfer(a, b, quantiles=DEFAULT_QUANTILES) -> ChamferReport:
    """Symmetric Chamfer between two point sets.

    Directional terms are means of nearest-neighbor distances (l1) or
    squared distances (l2); the symmetric value averages the two
    directions.  Percentiles are taken over the distances of both
    directions pooled.
    """
    d_ab = nearest_distances(a, b)
    d_ba = nearest_distances(b, a)
    pooled = np.concatenate([d_ab, d_ba])
    return ChamferReport(
        l1=0.5 * (float(d_ab.mean()) + float(d_ba.mean())),
        l2=0.5 * (float((d_ab ** 2).mean()) + float((d_ba ** 2).mean())),
        a_to_b_l1=float(d_ab.mean()),
        b_to_a_l1=float(d_ba.mean()),
        a_to_b_l2=float((d_ab ** 2).mean()),
        b_to_a_l2=float((d_ba ** 2).mean()),
        percentiles={q: lower_quantile(pooled, q) for q in quantiles},
    )


def chamfer_percentiles(a, b, quantiles) -> np.ndarray:
    """Pooled nearest-distance quantiles (lower interpolation), i.e. the
    worst distance among the best q-fraction of points of both clouds.
    """
    d = np.concatenate([nearest_distances(a, b), nearest_distances(b, a)])
    return np.array([lower_quantile(d, q) for q in quantiles])


@dataclass(frozen=True)
class IoUReport:
    intersection: int
    union: int
    empty_union: bool

    @property
    def ratio(self) -> float:
        # two empty shapes are identical; flagged via empty_union
        return 1.0 if self.union == 0 else self.intersection / self.union


def volumetric_iou(pred: ScalarGrid, truth: ScalarGrid,
                   threshold: float = 0.5) -> IoUReport:
    """IoU of the two grids binarized at value > threshold.

    Grids must share resolution and domain exactly.
    """
    if pred.resolution != truth.resolution:
        raise ValueError("grid resolution mismatch")
    if not (np.array_equal(pred.domain.lo, truth.domain.lo)
            and np.array_equal(pred.domain.hi, truth.domain.hi)):
        raise ValueError("grid domain mismatch")
    p = pred.values > threshold
    t = truth.values > threshold
    inter = int(np.sum(p & t))
    union = int(np.sum(p | t))
    return IoUReport(intersection=inter, union=union, empty_union=union == 0)
