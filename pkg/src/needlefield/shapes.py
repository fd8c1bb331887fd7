"""Analytic test shapes: meshes with known geometry plus exact
inside/outside functions for the same solids.

Defaults are sized so every shape fits the working cube [-0.55, 0.55]^3
with margin (half extents <= 0.475).
"""

from __future__ import annotations

import numpy as np

from .geometry import TriangleMesh


def box_mesh(lo, hi) -> TriangleMesh:
    """Axis-aligned box as 12 outward-wound triangles."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    v = np.array([[x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
                  [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1]])
    f = np.array([
        [0, 2, 1], [0, 3, 2],      # bottom (z = z0)
        [4, 5, 6], [4, 6, 7],      # top    (z = z1)
        [0, 1, 5], [0, 5, 4],      # front  (y = y0)
        [2, 3, 7], [2, 7, 6],      # back   (y = y1)
        [0, 4, 7], [0, 7, 3],      # left   (x = x0)
        [1, 2, 6], [1, 6, 5],      # right  (x = x1)
    ])
    return TriangleMesh(v, f)


def icosphere(subdivisions: int = 3, radius: float = 0.4,
              center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Subdivided icosahedron with all vertices on the sphere.

    Faces: 20 * 4**subdivisions (1280 at the default 3).
    """
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [v / np.linalg.norm(v) for v in verts]
    verts = list(verts)
    for _ in range(subdivisions):
        cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        split = []
        for i, j, k in faces:
            a, b, c = midpoint(i, j), midpoint(j, k), midpoint(k, i)
            split += [(i, a, c), (j, b, a), (k, c, b), (a, b, c)]
        faces = split
    v = np.asarray(verts) * radius + np.asarray(center, dtype=np.float64)
    return TriangleMesh(v, np.asarray(faces, dtype=np.int64))


def torus_mesh(major_radius: float = 0.3, minor_radius: float = 0.12,
               n_major: int = 48, n_minor: int = 24,
               center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Torus around the z axis: tube of radius `minor_radius` swept along
    a circle of radius `major_radius`.  Faces: 2 * n_major * n_minor.
    """
    if minor_radius >= major_radius:
        raise ValueError("needs minor_radius < major_radius")
    theta = 2.0 * np.pi * np.arange(n_major) / n_major
    phi = 2.0 * np.pi * np.arange(n_minor) / n_minor
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    ring = major_radius + minor_radius * np.cos(ph)
    v = np.stack([ring * np.cos(th), ring * np.sin(th),
                  minor_radius * np.sin(ph)], axis=-1).reshape(-1, 3)
    v += np.asarray(center, dtype=np.float64)

    def vid(i, j):
        return (i % n_major) * n_minor + (j % n_minor)

    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            faces += [(a, b, c), (a, c, d)]
    return TriangleMesh(v, np.asarray(faces, dtype=np.int64))


def sphere_occupancy(points, radius: float = 0.4, center=(0.0, 0.0, 0.0)):
    """Exact ball indicator, 1.0 inside (boundary counts as inside)."""
    p = np.atleast_2d(np.asarray(points, dtype=np.float64)) - center
    return (np.einsum("ij,ij->i", p, p) <= radius * radius).astype(np.float64)


def sphere_distance(points, radius: float = 0.4, center=(0.0, 0.0, 0.0)):
    """Signed distance to the sphere, negative inside."""
    p = np.atleast_2d(np.asarray(points, dtype=np.float64)) - center
    return np.linalg.norm(p, axis=1) - radius


def torus_distance(points, major_radius: float = 0.3,
                   minor_radius: float = 0.12, center=(0.0, 0.0, 0.0)):
    """Signed distance to the torus surface, negative inside the tube."""
    p = np.atleast_2d(np.asarray(points, dtype=np.float64)) - center
    ring = np.hypot(p[:, 0], p[:, 1]) - major_radius
    return np.hypot(ring, p[:, 2]) - minor_radius


def dumbbell_distance(points, ball_radius: float = 0.16,
                      ball_offset: float = 0.28,
                      neck_radius: float = 0.06):
    """Signed distance to the dumbbell surface, negative inside.

    Union of the two balls and the capped neck cylinder via pointwise
    min; the zero level set is the exact boundary of the union (the
    cylinder caps are buried inside the balls).
    """
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    left = p - [-ball_offset, 0.0, 0.0]
    right = p - [ball_offset, 0.0, 0.0]
    d_balls = np.minimum(np.linalg.norm(left, axis=1),
                         np.linalg.norm(right, axis=1)) - ball_radius
    d_rad = np.hypot(p[:, 1], p[:, 2]) - neck_radius
    d_ax = np.abs(p[:, 0]) - ball_offset
    d_neck = (np.minimum(np.maximum(d_rad, d_ax), 0.0)
              + np.hypot(np.maximum(d_rad, 0.0), np.maximum(d_ax, 0.0)))
    return np.minimum(d_balls, d_neck)


def occupancy_from_distance(distance, width: float):
    """Map a signed distance to a [0, 1] field crossing 0.5 at the
    surface, linear within +-width/2 of it.

    Linear ramps keep grid-edge interpolation of the 0.5 level exact up
    to the curvature of the distance itself, which makes these fields
    good extraction references.
    """
    if width <= 0:
        raise ValueError("width must be > 0")
    d = np.asarray(distance, dtype=np.float64)
    return np.clip(0.5 - d / width, 0.0, 1.0)


def dumbbell_mesh(resolution: int = 96, ball_radius: float = 0.16,
                  ball_offset: float = 0.28,
                  neck_radius: float = 0.06) -> TriangleMesh:
    """Dumbbell surface triangulated from its exact distance field.

    The grid cell at the default resolution (~0.011) is far below the
    neck radius, so the thin part survives.
    """
    from .field import ScalarGrid, marching_cubes
    from .geometry import cube_domain

    dom = cube_domain()
    width = 2.0 * float(dom.extent.max()) / resolution

    def f(pts):
        return occupancy_from_distance(
            dumbbell_distance(pts, ball_radius, ball_offset, neck_radius),
            width)

    grid = ScalarGrid.from_function(f, dom, resolution)
    return marching_cubes(grid)


def box_occupancy(points, lo, hi):
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return np.all((p >= np.asarray(lo)) & (p <= np.asarray(hi)),
                  axis=1).astype(np.float64)


def torus_occupancy(points, major_radius: float = 0.3,
                    minor_radius: float = 0.12, center=(0.0, 0.0, 0.0)):
    p = np.atleast_2d(np.asarray(points, dtype=np.float64)) - center
    ring = np.hypot(p[:, 0], p[:, 1]) - major_radius
    return (ring * ring + p[:, 2] ** 2
            <= minor_radius * minor_radius).astype(np.float64)


def dumbbell_occupancy(points, ball_radius: float = 0.16,
                       ball_offset: float = 0.28,
                       neck_radius: float = 0.06):
    """Two balls at (+-ball_offset, 0, 0) joined by an x-axis cylinder.

    The thin neck is the fine feature of this solid; defaults keep the
    whole thing inside the working cube.
    """
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    r2 = ball_radius * ball_radius
    left = p - [-ball_offset, 0.0, 0.0]
    right = p - [ball_offset, 0.0, 0.0]
    in_ball = (np.einsum("ij,ij->i", left, left) <= r2) \
        | (np.einsum("ij,ij->i", right, right) <= r2)
    in_neck = (np.abs(p[:, 0]) <= ball_offset) \
        & (p[:, 1] ** 2 + p[:, 2] ** 2 <= neck_radius * neck_radius)
    return (in_ball | in_neck).astype(np.float64)
