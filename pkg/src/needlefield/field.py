"""Dense occupancy grids and 0.5 level-set extraction.

evaluate_grid samples a model on a regular lattice; orient_field
resolves the inside/outside ambiguity (a complemented field has the
same surface) by forcing emptiness at the domain corners; and
marching_cubes turns the grid into a triangle mesh with the classic
256-case tables and linear edge interpolation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ._mc_tables import EDGE_TABLE, TRI_TABLE
from .geometry import JITTER, PARALLEL_TOL, Aabb, TriangleMesh

logger = logging.getLogger(__name__)

ISO_NUDGE = 1e-12    # shift applied to node values exactly at iso

# cell-local corner offsets and the corner pair of each of the 12 edges,
# in the numbering the lookup tables assume
CORNER_OFFSETS = ((0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
                  (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1))
EDGE_CORNERS = ((0, 1), (1, 2), (2, 3), (3, 0),
                (4, 5), (5, 6), (6, 7), (7, 4),
                (0, 4), (1, 5), (2, 6), (3, 7))


@dataclass(frozen=True)
class ScalarGrid:
    """Occupancy probabilities on a regular lattice of domain nodes.

    values[i, j, k] sits at (xs[i], ys[j], zs[k]) where each axis is a
    linspace over the domain with resolution = node count (so node
    spacing is extent / (res - 1) and the endpoints are exact).
    """

    domain: Aabb
    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 3 or min(v.shape) < 2:
            raise ValueError("grid needs >= 2 nodes per axis")
        if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("grid values must be finite and in [0, 1]")

    @property
    def resolution(self) -> tuple:
        return self.values.shape

    def axis_nodes(self, axis: int) -> np.ndarray:
        return np.linspace(self.domain.lo[axis], self.domain.hi[axis],
                           self.values.shape[axis])

    def node_points(self) -> np.ndarray:
        """All lattice nodes as (n, 3), C order (z fastest)."""
        xs, ys, zs = (self.axis_nodes(a) for a in range(3))
        gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)

    def corner_values(self) -> np.ndarray:
        """Node values at the 8 domain corners, in Aabb.corners() order."""
        out = np.empty(8)
        for i in range(8):
            out[i] = self.values[-1 if i & 4 else 0,
                                 -1 if i & 2 else 0,
                                 -1 if i & 1 else 0]
        return out

    def complement(self) -> "ScalarGrid":
        return ScalarGrid(self.domain, 1.0 - self.values)

    @classmethod
    def from_function(cls, fn, domain: Aabb, resolution) -> "ScalarGrid":
        """Sample fn((n, 3) points) -> (n,) values over the lattice."""
        res = _as_resolution(resolution)
        xs, ys, zs = (np.linspace(domain.lo[a], domain.hi[a], res[a])
                      for a in range(3))
        gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        values = np.empty(len(pts))
        # chunked so fn never sees millions of rows at once (memory)
        for lo in range(0, len(pts), 65536):
            sl = slice(lo, min(lo + 65536, len(pts)))
            values[sl] = np.asarray(fn(pts[sl]), dtype=np.float64)
        return cls(domain, values.reshape(res))


def _as_resolution(resolution) -> tuple:
    if np.isscalar(resolution):
        resolution = (int(resolution),) * 3
    res = tuple(int(r) for r in resolution)
    if len(res) != 3 or min(res) < 2:
        raise ValueError("resolution must be >= 2 nodes per axis")
    return res


def evaluate_grid(model, domain: Aabb, resolution) -> ScalarGrid:
    """Model occupancy sigmoid(logit) at every lattice node."""
    res = _as_resolution(resolution)
    xs, ys, zs = (np.linspace(domain.lo[a], domain.hi[a], res[a])
                  for a in range(3))
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    values = np.empty(len(pts))
    for lo in range(0, len(pts), 65536):
        sl = slice(lo, min(lo + 65536, len(pts)))
        values[sl] = expit(model.forward_logits(pts[sl]))
    return ScalarGrid(domain, values.reshape(res))


def orient_field(grid: ScalarGrid) -> ScalarGrid:
    """Force emptiness at the domain boundary.

    A field and its complement share the same 0.5 surface; the mean node
    value over the 8 domain corners decides which one claims the outside
    is empty.  Returns the grid unchanged or its complement.
    """
    return grid.complement() if grid.corner_values().mean() > 0.5 else grid


def marching_cubes(grid: ScalarGrid, iso: float = 0.5) -> TriangleMesh:
    """Extract the iso surface as a welded triangle mesh.

    Standard 256-case tables with linear interpolation along cut lattice
    edges; shared edges reuse the same vertex.  Faces are wound so that
    normals point from values above iso (inside) to below (outside).
    Node values exactly equal to iso are nudged down by ISO_NUDGE.  An
    empty mesh (no crossings anywhere) is returned with a warning.
    """
    v = grid.values.copy()
    v[v == iso] -= ISO_NUDGE
    below = v < iso
    rx, ry, rz = v.shape

    b = below.astype(np.int32)
    case = (b[:-1, :-1, :-1]
            | b[1:, :-1, :-1] << 1
            | b[1:, 1:, :-1] << 2
            | b[:-1, 1:, :-1] << 3
            | b[:-1, :-1, 1:] << 4
            | b[1:, :-1, 1:] << 5
            | b[1:, 1:, 1:] << 6
            | b[:-1, 1:, 1:] << 7)
    active = np.argwhere((case != 0) & (case != 255))
    if len(active) == 0:
        logger.warning("no iso=%g crossings; returning an empty mesh", iso)
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    axes = [grid.axis_nodes(a) for a in range(3)]
    verts = []
    faces = []
    vert_id = {}        # lattice edge (node_a, node_b) -> vertex index

    def node_id(i, j, k):
        return (i * ry + j) * rz + k

    for i, j, k in active:
        c = case[i, j, k]
        cut = EDGE_TABLE[c]
        corner_idx = [(i + dx, j + dy, k + dz) for dx, dy, dz in CORNER_OFFSETS]
        edge_vert = {}
        for e in range(12):
            if not cut >> e & 1:
                continue
            ca, cb = EDGE_CORNERS[e]
            na, nb = corner_idx[ca], corner_idx[cb]
            key = (node_id(*na), node_id(*nb))
            if key[0] > key[1]:
                key = (key[1], key[0])
                na, nb = nb, na
            vid = vert_id.get(key)
            if vid is None:
                va, vb = v[na], v[nb]
                t = (iso - va) / (vb - va)
                pa = np.array([axes[0][na[0]], axes[1][na[1]], axes[2][na[2]]])
                pb = np.array([axes[0][nb[0]], axes[1][nb[1]], axes[2][nb[2]]])
                verts.append(pa + t * (pb - pa))
                vid = len(verts) - 1
                vert_id[key] = vid
            edge_vert[e] = vid
        tri = TRI_TABLE[c]
        for n in range(0, len(tri), 3):
            faces.append((edge_vert[tri[n]], edge_vert[tri[n + 1]],
                          edge_vert[tri[n + 2]]))
    return TriangleMesh(np.asarray(verts), np.asarray(faces, dtype=np.int64))


def write_volume(path, grid: ScalarGrid) -> None:
    """Flat binary volume: one text header line
    ``res_x res_y res_z lo_x lo_y lo_z hi_x hi_y hi_z`` followed by the
    node values as little-endian float64 in C order.
    """
    rx, ry, rz = grid.resolution
    header = " ".join([str(rx), str(ry), str(rz)]
                      + [repr(float(x)) for x in grid.domain.lo]
                      + [repr(float(x)) for x in grid.domain.hi])
    with open(path, "wb") as fh:
        fh.write((header + "\n").encode("ascii"))
        fh.write(grid.values.astype("<f8").tobytes())


def read_volume(path) -> ScalarGrid:
    with open(path, "rb") as fh:
        header = fh.readline().split()
        if len(header) != 9:
            raise ValueError(f"{path}: bad volume header")
        res = tuple(int(x) for x in header[:3])
        lo = np.array([float(x) for x in header[3:6]])
        hi = np.array([float(x) for x in header[6:9]])
        values = np.frombuffer(fh.read(), dtype="<f8")
    if values.size != res[0] * res[1] * res[2]:
        raise ValueError(f"{path}: volume payload length mismatch")
    return ScalarGrid(Aabb(lo, hi), values.reshape(res).copy())


def mesh_occupancy_grid(mesh: TriangleMesh, domain: Aabb,
                        resolution) -> ScalarGrid:
    """Voxelize a closed mesh onto a lattice by ray parity.

    One vertical ray per (x, y) node column collects its surface
    crossing heights; a node is inside when an odd number of crossings
    lie below it.  Columns with unreliable hits (near an edge, vertex or
    a vertical face plane) are nudged sideways by JITTER and redone.
    """
    res = _as_resolution(resolution)
    grid = ScalarGrid(domain, np.zeros(res))
    if mesh.is_empty():
        return grid
    xs, ys, zs = (grid.axis_nodes(a) for a in range(3))
    box = mesh.aabb()
    z0 = min(zs[0], box.lo[2]) - 0.1 * max(1.0, box.diagonal)
    z1 = max(zs[-1], box.hi[2]) + 0.1 * max(1.0, box.diagonal)

    v0, v1, v2 = mesh.face_corners()
    e1, e2 = v1 - v0, v2 - v0

    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    cols = np.stack([gx.ravel(), gy.ravel()], axis=1)
    values = np.zeros(res)
    chunk = max(1, int(1e6 / max(len(mesh.faces), 1)))
    for lo in range(0, len(cols), chunk):
        part = cols[lo:lo + chunk]
        hits, flagged = _column_hits(part, z0, z1, v0, e1, e2)
        for retry in range(3):
            if not any(flagged):
                break
            offs = JITTER * (retry + 1)
            shift = (offs, 0.0) if retry % 2 == 0 else (0.0, offs)
            redo = [ci for ci, f in enumerate(flagged) if f]
            sub, subflag = _column_hits(part[redo] + shift, z0, z1, v0, e1, e2)
            for ci, h, f in zip(redo, sub, subflag):
                hits[ci] = h
                flagged[ci] = f
        for ci, h in enumerate(hits):
            flat = lo + ci
            i, j = divmod(flat, res[1])
            h.sort()
            values[i, j, :] = np.searchsorted(h, zs, side="left") % 2
    return ScalarGrid(domain, values)


def _column_hits(cols, z0, z1, v0, e1, e2):
    """Crossing heights of vertical rays through (x, y) columns.

    Returns (list of z arrays, list of suspicious flags).  The ray runs
    from z0 to z1, both beyond the mesh, so open-segment hits capture
    every crossing.
    """
    span = z1 - z0
    # direction is (0, 0, span) for every column: per-face quantities
    # fall out of the segment loop
    p = np.cross(np.array([0.0, 0.0, span]), e2)       # (f, 3)
    det = np.einsum("fk,fk->f", e1, p)
    tri_scale = np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
    parallel = np.abs(det) <= PARALLEL_TOL * span * tri_scale

    origin = np.concatenate([cols, np.full((len(cols), 1), z0)], axis=1)
    s = origin[:, None, :] - v0[None, :, :]            # (c, f, 3)
    q = np.cross(s, e1[None, :, :])
    tol = 1e-9
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        u = np.einsum("cfk,fk->cf", s, p) * inv
        v = span * q[:, :, 2] * inv
        t = np.einsum("fk,cfk->cf", e2, q) * inv
        inside = (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) \
            & (t > 0.0) & (t < 1.0) & ~parallel
        near = (u >= -tol) & (v >= -tol) & (u + v <= 1.0 + tol) \
            & (t >= -tol) & (t <= 1.0 + tol) & ~parallel
        edgy = (np.abs(u) <= tol) | (np.abs(v) <= tol) \
            | (np.abs(1.0 - (u + v)) <= tol)
    suspicious = near & edgy
    normal = np.cross(e1, e2)
    nn = np.linalg.norm(normal, axis=1)
    nn[nn == 0.0] = 1.0
    plane_dist = np.abs(np.einsum("cfk,fk->cf", s, normal / nn[:, None]))
    suspicious |= parallel & (plane_dist <= tol * (span + 1.0))

    flags = suspicious.any(axis=1)
    hits = [z0 + t[ci][inside[ci]] * span for ci in range(len(cols))]
    return hits, list(flags)
