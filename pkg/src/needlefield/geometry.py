"""Spatial primitives: boxes, point clouds, triangle meshes, nearest
neighbors, surface sampling and segment/mesh intersection counting.

All coordinates are float64.  Shapes are assumed to live in a roughly
unit-sized frame (see ``fit_to_unit_cube``); the absolute tolerances
below are chosen for that scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

# Barycentric / parametric slack marking a segment-triangle hit as too
# close to an edge, vertex or endpoint to trust.  Dimensionless.
BOUNDARY_TOL = 1e-9

# |det| below PARALLEL_TOL * (scale of the triple product) counts as a
# segment parallel to the triangle plane.
PARALLEL_TOL = 1e-12

# Sideways offset applied to a suspicious segment before recounting.
JITTER = 1e-9

# Fixed interrogation direction for point-in-mesh parity rays.  An
# arbitrary irrational-ish unit vector, so axis-aligned geometry never
# lines up with it.
RAY_DIR = np.array([0.5381290973918, 0.3792584633031, 0.7529812038686])
RAY_DIR = RAY_DIR / np.linalg.norm(RAY_DIR)


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned bounding box with inclusive bounds."""

    lo: np.ndarray
    hi: np.ndarray

    @staticmethod
    def of_points(points: np.ndarray) -> "Aabb":
        points = np.asarray(points, dtype=np.float64)
        if points.size == 0:
            raise ValueError("cannot bound an empty point set")
        return Aabb(points.min(axis=0), points.max(axis=0))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.all((points >= self.lo) & (points <= self.hi), axis=1)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Uniform points inside the box, shape (n, 3)."""
        return rng.uniform(self.lo, self.hi, size=(n, 3))

    def corners(self) -> np.ndarray:
        """The 8 corner points, shape (8, 3), z fastest."""
        lo, hi = self.lo, self.hi
        out = np.empty((8, 3))
        for i in range(8):
            out[i] = [hi[0] if i & 4 else lo[0],
                      hi[1] if i & 2 else lo[1],
                      hi[2] if i & 1 else lo[2]]
        return out


def cube_domain(half: float = 0.55) -> Aabb:
    """Symmetric cube [-half, half]^3, the default working domain."""
    h = float(half)
    return Aabb(np.array([-h, -h, -h]), np.array([h, h, h]))


class PointCloud:
    """Unordered 3d point set, float64, shape (n, 3)."""

    def __init__(self, points: np.ndarray):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ValueError(f"expected (n, 3) points, got {points.shape}")
        self.points = points
        self._nn_dist = None

    def __len__(self) -> int:
        return len(self.points)

    def aabb(self) -> Aabb:
        return Aabb.of_points(self.points)

    def nn_distances(self) -> np.ndarray:
        """Distance from each point to its nearest distinct neighbor.

        Cached; duplicated positions give distance 0.
        """
        if self._nn_dist is None:
            if len(self) < 2:
                raise ValueError("need at least 2 points for neighbor distances")
            index = NearestNeighborIndex(self.points)
            _, dist = index.nearest_batch(self.points,
                                          exclude=np.arange(len(self)))
            self._nn_dist = dist
        return self._nn_dist


class TriangleMesh:
    """Indexed triangle mesh.  Degenerate (zero-area) faces are dropped."""

    def __init__(self, vertices: np.ndarray, faces: np.ndarray):
        vertices = np.asarray(vertices, dtype=np.float64)
        faces = np.asarray(faces, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise ValueError(f"expected (v, 3) vertices, got {vertices.shape}")
        if faces.size == 0:
            faces = faces.reshape(0, 3)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ValueError(f"expected (f, 3) faces, got {faces.shape}")
        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            raise ValueError("face index out of range")
        self.vertices = vertices
        if faces.size:
            a = vertices[faces[:, 0]]
            cr = np.cross(vertices[faces[:, 1]] - a, vertices[faces[:, 2]] - a)
            faces = faces[np.linalg.norm(cr, axis=1) > 0.0]
        self.faces = faces

    def __repr__(self) -> str:
        return f"TriangleMesh({len(self.vertices)} vertices, {len(self.faces)} faces)"

    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def aabb(self) -> Aabb:
        return Aabb.of_points(self.vertices)

    def face_corners(self):
        """(v0, v1, v2) arrays of shape (f, 3) each."""
        return (self.vertices[self.faces[:, 0]],
                self.vertices[self.faces[:, 1]],
                self.vertices[self.faces[:, 2]])

    def face_areas(self) -> np.ndarray:
        v0, v1, v2 = self.face_corners()
        return 0.5 * np.linalg.norm(np.cross(v1 - v0, v2 - v0), axis=1)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def signed_volume(self) -> float:
        """Divergence-theorem volume; positive for outward-oriented closed meshes."""
        v0, v1, v2 = self.face_corners()
        return float(np.einsum("ij,ij->", v0, np.cross(v1, v2)) / 6.0)


@dataclass(frozen=True)
class Normalization:
    """Similarity transform p -> (p - center) * scale."""

    center: np.ndarray
    scale: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.center) * self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale + self.center


def fit_to_unit_cube(points: np.ndarray, padding: float = 0.05) -> Normalization:
    """Transform centering the bounding box at the origin and scaling its
    longest side to (1 - padding), i.e. half extents at most (1-padding)/2.

    Degenerate inputs (single point, all-coincident) keep scale 1.
    """
    box = Aabb.of_points(points)
    longest = float(box.extent.max())
    scale = (1.0 - padding) / longest if longest > 0.0 else 1.0
    return Normalization(center=box.center, scale=scale)


class NearestNeighborIndex:
    """Nearest-neighbor queries with exact tie handling.

    A kd-tree proposes candidates; distances are then recomputed with
    plain vectorized arithmetic and ties on the squared distance break
    toward the lowest point index, so results do not depend on tree
    internals.  Supports excluding one index per query (self-matches).
    """

    def __init__(self, points: np.ndarray):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3 or len(points) == 0:
            raise ValueError("need a nonempty (n, 3) point array")
        self.points = points
        self._tree = cKDTree(points)

    def __len__(self) -> int:
        return len(self.points)

    def nearest_batch(self, queries: np.ndarray, exclude=None):
        """Indices and distances of the nearest point to each query.

        exclude: optional (m,) int array; entry j is an index that query j
        may not match (use -1 for no exclusion).  Returns (idx, dist).
        """
        queries = np.asarray(queries, dtype=np.float64)
        if queries.ndim != 2 or queries.shape[1] != 3:
            raise ValueError(f"expected (m, 3) queries, got {queries.shape}")
        m, n = len(queries), len(self.points)
        if exclude is None:
            exclude = np.full(m, -1, dtype=np.int64)
        else:
            exclude = np.asarray(exclude, dtype=np.int64)
        if n == 1 and np.any(exclude == 0):
            raise ValueError("every point excluded for some query")

        idx_out = np.full(m, -1, dtype=np.int64)
        d2_out = np.full(m, np.inf)
        pending = np.arange(m)
        k = 2 if np.any(exclude >= 0) else 1
        while pending.size:
            k = min(k, n)
            _, cand = self._tree.query(queries[pending], k=k)
            cand = np.atleast_2d(cand.reshape(len(pending), k))
            diff = self.points[cand] - queries[pending][:, None, :]
            d2_raw = np.einsum("ijk,ijk->ij", diff, diff)
            banned = cand == exclude[pending][:, None]
            d2 = np.where(banned, np.inf, d2_raw)
            # order by (distance, index): ties go to the lowest index
            order = np.lexsort((cand, d2), axis=1)
            best = order[:, 0]
            rows = np.arange(len(pending))
            best_d2 = d2[rows, best]
            best_idx = cand[rows, best]
            if k >= n:
                settled = np.ones(len(pending), dtype=bool)
            else:
                # every unseen point is at least as far as the farthest of
                # the k tree candidates (banned ones included: banning does
                # not push the horizon out); unsettled while a closer-or-equal
                # point may hide beyond it (equal matters for index ties)
                settled = best_d2 < d2_raw.max(axis=1)
            done = pending[settled]
            idx_out[done] = best_idx[settled]
            d2_out[done] = best_d2[settled]
            pending = pending[~settled]
            k *= 2
        return idx_out, np.sqrt(d2_out)

    def nearest(self, query: np.ndarray, exclude: int = -1):
        idx, dist = self.nearest_batch(np.asarray(query)[None, :],
                                       exclude=np.array([exclude]))
        return int(idx[0]), float(dist[0])


def sample_surface(mesh: TriangleMesh, n: int, rng: np.random.Generator) -> np.ndarray:
    """n points drawn uniformly by area from the mesh surface, shape (n, 3).

    Face choice is proportional to area; position within a face uses the
    square-root barycentric trick for a uniform density.
    """
    if mesh.is_empty():
        raise ValueError("cannot sample an empty mesh")
    areas = mesh.face_areas()
    cdf = np.cumsum(areas)
    cdf /= cdf[-1]
    face = np.searchsorted(cdf, rng.random(n), side="right")
    face = np.minimum(face, len(areas) - 1)
    v0, v1, v2 = mesh.face_corners()
    r1 = np.sqrt(rng.random(n))[:, None]
    r2 = rng.random(n)[:, None]
    return ((1.0 - r1) * v0[face]
            + r1 * (1.0 - r2) * v1[face]
            + r1 * r2 * v2[face])


def _perp_frame(direction: np.ndarray):
    """Two unit vectors orthogonal to each row of `direction` ((s,3) each)."""
    d = np.asarray(direction, dtype=np.float64)
    axis = np.argmin(np.abs(d), axis=1)
    e = np.zeros_like(d)
    e[np.arange(len(d)), axis] = 1.0
    n1 = np.cross(d, e)
    n1 /= np.linalg.norm(n1, axis=1, keepdims=True)
    n2 = np.cross(d, n1)
    n2 /= np.linalg.norm(n2, axis=1, keepdims=True)
    return n1, n2


def _raw_crossings(a, b, v0, e1, e2, tri_scale):
    """Moller-Trumbore over all (segment, triangle) pairs.

    a, b: (s, 3) endpoints.  v0, e1, e2: (f, 3) triangle origin and edges.
    tri_scale: (f,) product |e1||e2| for relative parallel tests.
    Returns (counts (s,), suspicious (s,)) where a hit needs barycentric
    u >= 0, v >= 0, u+v <= 1 and open-segment parameter 0 < t < 1, and
    `suspicious` flags any decision within BOUNDARY_TOL of flipping.
    """
    d = b - a                                     # (s, 3)
    seg_len = np.linalg.norm(d, axis=1)
    p = np.cross(d[:, None, :], e2[None, :, :])   # (s, f, 3)
    det = np.einsum("fk,sfk->sf", e1, p)
    det_scale = seg_len[:, None] * tri_scale[None, :]
    parallel = np.abs(det) <= PARALLEL_TOL * det_scale

    tol = BOUNDARY_TOL
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        s = a[:, None, :] - v0[None, :, :]        # (s, f, 3)
        u = np.einsum("sfk,sfk->sf", s, p) * inv
        q = np.cross(s, e1[None, :, :])
        v = np.einsum("sk,sfk->sf", d, q) * inv
        t = np.einsum("fk,sfk->sf", e2, q) * inv
        inside = (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) \
            & (t > 0.0) & (t < 1.0) & ~parallel
        near = ((u >= -tol) & (v >= -tol) & (u + v <= 1.0 + tol)
                & (t >= -tol) & (t <= 1.0 + tol) & ~parallel)
        edgy = ((np.abs(u) <= tol) | (np.abs(v) <= tol)
                | (np.abs(1.0 - (u + v)) <= tol)
                | (np.abs(t) <= tol) | (np.abs(1.0 - t) <= tol))
    suspicious = near & edgy
    # a parallel segment lying in (or nearly in) the triangle's plane is
    # also untrustworthy; far-away parallel triangles are fine
    normal = np.cross(e1, e2)
    nn = np.linalg.norm(normal, axis=1)
    nn[nn == 0.0] = 1.0
    plane_dist = np.abs(np.einsum("sfk,fk->sf", s, normal / nn[:, None]))
    suspicious |= parallel & (plane_dist <= tol * (seg_len[:, None] + 1.0))
    return inside.sum(axis=1), suspicious.any(axis=1)


def segment_crossings_batch(mesh: TriangleMesh, a: np.ndarray, b: np.ndarray,
                            max_retries: int = 3) -> np.ndarray:
    """Number of open-segment / triangle crossings for each segment.

    Segments whose hit classification lands within BOUNDARY_TOL of an
    edge, vertex, endpoint or a coplanar configuration are shifted
    sideways by a fixed deterministic JITTER and recounted, up to
    max_retries offsets; the last count wins if all retries stay flagged.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 3:
        raise ValueError("segment endpoints must both be (s, 3)")
    if np.any(np.all(a == b, axis=1)):
        raise ValueError("zero-length segment")
    if mesh.is_empty():
        return np.zeros(len(a), dtype=np.int64)

    v0, v1, v2 = mesh.face_corners()
    e1, e2 = v1 - v0, v2 - v0
    tri_scale = np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)

    counts = np.zeros(len(a), dtype=np.int64)
    flagged = np.zeros(len(a), dtype=bool)
    # chunk so the (s, f, 3) temporaries stay modest
    chunk = max(1, int(1.5e6 / max(len(mesh.faces), 1)))
    for lo in range(0, len(a), chunk):
        sl = slice(lo, min(lo + chunk, len(a)))
        counts[sl], flagged[sl] = _raw_crossings(a[sl], b[sl], v0, e1, e2,
                                                 tri_scale)
    for retry in range(max_retries):
        if not flagged.any():
            break
        sel = np.flatnonzero(flagged)
        n1, n2 = _perp_frame(b[sel] - a[sel])
        # distinct deterministic offsets per retry, all of size ~JITTER
        shift = JITTER * float(retry + 1) * (n1 if retry % 2 == 0 else n2)
        aj, bj = a[sel] + shift, b[sel] + shift
        for lo in range(0, len(sel), chunk):
            rows = sel[lo:lo + chunk]
            c, f = _raw_crossings(aj[lo:lo + chunk], bj[lo:lo + chunk],
                                  v0, e1, e2, tri_scale)
            counts[rows] = c
            flagged[rows] = f
    return counts


def segment_crossings(mesh: TriangleMesh, a: np.ndarray, b: np.ndarray) -> int:
    """Crossing count for a single open segment (a, b)."""
    return int(segment_crossings_batch(mesh, np.asarray(a)[None, :],
                                       np.asarray(b)[None, :])[0])


def mesh_occupancy_batch(mesh: TriangleMesh, points: np.ndarray) -> np.ndarray:
    """Inside/outside (1/0) for each point against a closed mesh.

    Parity of crossings along a fixed skew ray; points exactly on the
    surface are resolved by the jitter rule and may land on either side.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if mesh.is_empty():
        return np.zeros(len(points), dtype=np.float64)
    box = mesh.aabb()
    # far endpoint guaranteed outside for every query point
    reach = box.diagonal + np.linalg.norm(points - box.center, axis=1) + 1.0
    far = points + RAY_DIR[None, :] * reach[:, None]
    return (segment_crossings_batch(mesh, points, far) % 2).astype(np.float64)


def mesh_occupancy(mesh: TriangleMesh, point: np.ndarray) -> float:
    return float(mesh_occupancy_batch(mesh, np.asarray(point)[None, :])[0])
