"""Needle construction and auditing.

A needle is a 3d segment with a binary side label: target 0 means its
endpoints should straddle the surface, target 1 means they should lie on
the same side.  Two sets are built per shape:

* crossing needles ("opp"): one per cloud point p, endpoints p +- h with
  h drawn from an isotropic Gaussian whose per-axis std follows the
  local sampling density (sigma = multiplier * d_p / 3 with d_p the
  nearest-neighbor distance of p in the cloud);
* same-side needles ("same"): uniform space samples, each paired with
  its nearest distinct neighbor among the crossing-needle endpoints and
  the space samples themselves.

Auditing classifies needles against a ground-truth mesh by crossing
parity: a target-0 needle is good when it crosses the surface an odd
number of times, a target-1 needle when the count is even.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (Aabb, NearestNeighborIndex, PointCloud, TriangleMesh,
                       cube_domain, segment_crossings_batch)


@dataclass(frozen=True)
class SigmaRule:
    """Per-point needle scale: sigma(p) = multiplier * d_p / 3."""

    multiplier: float = 1.0

    def __post_init__(self):
        if not self.multiplier > 0.0:
            raise ValueError("sigma multiplier must be > 0")

    def sigma(self, cloud: PointCloud) -> np.ndarray:
        d = cloud.nn_distances()
        if np.any(d == 0.0):
            raise ValueError("coincident cloud points give sigma 0")
        return self.multiplier * d / 3.0


@dataclass(frozen=True)
class NeedleSet:
    """Labeled needle endpoints.  provenance is "opp" (crossing needles,
    target 0) or "same" (same-side needles, target 1) or "mixed".
    """

    a: np.ndarray        # (n, 3) first endpoints
    b: np.ndarray        # (n, 3) second endpoints
    target: np.ndarray   # (n,) floats in {0, 1}
    provenance: str = "mixed"

    def __post_init__(self):
        if not (self.a.shape == self.b.shape
                and self.a.ndim == 2 and self.a.shape[1] == 3
                and len(self.target) == len(self.a)):
            raise ValueError("inconsistent needle arrays")

    def __len__(self) -> int:
        return len(self.a)

    @property
    def endpoints(self) -> np.ndarray:
        """All 2n endpoints stacked, first the a column then the b column."""
        return np.vstack([self.a, self.b])

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.a + self.b)

    def concat(self, other: "NeedleSet") -> "NeedleSet":
        prov = self.provenance if self.provenance == other.provenance else "mixed"
        return NeedleSet(np.vstack([self.a, other.a]),
                         np.vstack([self.b, other.b]),
                         np.concatenate([self.target, other.target]), prov)


def sample_crossing_needles(cloud: PointCloud, sigma: SigmaRule,
                            rng: np.random.Generator) -> NeedleSet:
    """One target-0 needle per cloud point: endpoints p + h and p - h.

    h is isotropic normal with per-axis std sigma(p); the zero draw
    (probability 0 but representable) is redrawn so endpoints differ.
    """
    if len(cloud) < 2:
        raise ValueError("nearest-neighbor distance undefined for < 2 points")
    s = sigma.sigma(cloud)[:, None]
    h = rng.standard_normal((len(cloud), 3)) * s
    bad = np.flatnonzero(np.all(h == 0.0, axis=1))
    while bad.size:
        h[bad] = rng.standard_normal((bad.size, 3)) * s[bad]
        bad = bad[np.all(h[bad] == 0.0, axis=1)]
    p = cloud.points
    return NeedleSet(p + h, p - h, np.zeros(len(cloud)), provenance="opp")


def sample_same_side_needles(cloud: PointCloud, crossing_endpoints: np.ndarray,
                             n_same: int, domain: Aabb | None,
                             rng: np.random.Generator) -> NeedleSet:
    """n_same target-1 needles from uniform space samples.

    Each sample p drawn uniformly in `domain` (default working cube) is
    paired with its nearest distinct neighbor among the crossing-needle
    endpoints and the space samples themselves.  `cloud` is accepted for
    signature symmetry with the crossing sampler; the pairing pool is
    entirely determined by `crossing_endpoints` + the fresh samples.
    """
    del cloud  # not part of the pairing pool
    crossing_endpoints = np.asarray(crossing_endpoints, dtype=np.float64)
    if crossing_endpoints.ndim != 2 or crossing_endpoints.shape[1] != 3 \
            or len(crossing_endpoints) == 0:
        raise ValueError("need a nonempty (m, 3) endpoint pool")
    if n_same < 1:
        raise ValueError("n_same must be >= 1")
    if domain is None:
        domain = cube_domain()
    space = domain.sample(rng, n_same)
    pool = np.vstack([crossing_endpoints, space])
    index = NearestNeighborIndex(pool)
    self_ids = len(crossing_endpoints) + np.arange(n_same)
    partner, _ = index.nearest_batch(space, exclude=self_ids)
    return NeedleSet(space, pool[partner], np.ones(n_same), provenance="same")


@dataclass(frozen=True)
class NeedleAuditReport:
    """Per-needle parity classification against a ground-truth mesh."""

    crossings: np.ndarray   # (n,) surface-crossing counts
    good: np.ndarray        # (n,) bool, parity consistent with target
    target: np.ndarray      # (n,)
    midpoints: np.ndarray   # (n, 3) needle centers, locates bad needles

    def good_rate(self, target: float | None = None) -> float:
        """Exact fraction of good needles, optionally for one target."""
        mask = np.ones(len(self.good), dtype=bool) if target is None \
            else self.target == target
        n = int(mask.sum())
        if n == 0:
            raise ValueError("no needles with the requested target")
        return int(self.good[mask].sum()) / n

    @property
    def opp_good_rate(self) -> float:
        return self.good_rate(0.0)

    @property
    def same_good_rate(self) -> float:
        return self.good_rate(1.0)


def audit_needles(needles: NeedleSet, truth: TriangleMesh) -> NeedleAuditReport:
    """Classify each needle by crossing parity against `truth`.

    Good means: target 0 with an odd crossing count (endpoints on
    opposite sides), or target 1 with an even count (same side, which
    includes tunneling through a thin part and back).
    """
    crossings = segment_crossings_batch(truth, needles.a, needles.b)
    parity = crossings % 2
    good = parity == (1 - needles.target).astype(np.int64)
    return NeedleAuditReport(crossings=crossings, good=good,
                             target=needles.target,
                             midpoints=needles.midpoints)
