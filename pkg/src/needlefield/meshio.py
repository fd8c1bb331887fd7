"""Plain-text geometry I/O: OBJ and ASCII PLY meshes, XYZ point clouds,
and the needle line format ``ax ay az bx by bz target``.

Writers emit floats with repr-level precision so a write/read round trip
is lossless in float64.
"""

from __future__ import annotations

import os

import numpy as np

from .geometry import PointCloud, TriangleMesh


def _fmt(x: float) -> str:
    return repr(float(x))


def write_obj(path, mesh: TriangleMesh) -> None:
    """Triangle mesh as Wavefront OBJ (v/f records, 1-based indices)."""
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def read_obj(path) -> TriangleMesh:
    """OBJ reader: vertices and faces only, polygons fan-triangulated.

    Vertex attribute references (``f 1/2/3``) are accepted and stripped;
    other record types are ignored.
    """
    verts, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise ValueError(f"{path}:{lineno}: short vertex record")
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    tok = tok.split("/")[0]
                    i = int(tok)
                    # negative indices count back from the current vertex list
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                if len(idx) < 3:
                    raise ValueError(f"{path}:{lineno}: face with <3 vertices")
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    return TriangleMesh(np.asarray(verts, dtype=np.float64).reshape(-1, 3),
                        np.asarray(faces, dtype=np.int64).reshape(-1, 3))


def write_ply(path, mesh: TriangleMesh) -> None:
    """Triangle mesh as ASCII PLY."""
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(mesh.vertices)}\n")
        fh.write("property double x\nproperty double y\nproperty double z\n")
        fh.write(f"element face {len(mesh.faces)}\n")
        fh.write("property list uchar int vertex_indices\n")
        fh.write("end_header\n")
        for v in mesh.vertices:
            fh.write(f"{_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}\n")
        for f in mesh.faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")


def read_ply(path) -> TriangleMesh:
    """ASCII PLY reader for vertex xyz + face lists; extra vertex
    properties beyond x, y, z are ignored, faces are fan-triangulated.
    """
    with open(path) as fh:
        lines = [ln.strip() for ln in fh]
    if not lines or lines[0] != "ply":
        raise ValueError(f"{path}: not a PLY file")
    n_vert = n_face = None
    elems = []           # (name, count) in declaration order
    vprops = []
    cur = None
    i = 1
    while i < len(lines) and lines[i] != "end_header":
        parts = lines[i].split()
        if parts[0] == "format":
            if parts[1] != "ascii":
                raise ValueError(f"{path}: only ascii PLY is supported")
        elif parts[0] == "element":
            cur = parts[1]
            elems.append((parts[1], int(parts[2])))
            if parts[1] == "vertex":
                n_vert = int(parts[2])
            elif parts[1] == "face":
                n_face = int(parts[2])
        elif parts[0] == "property" and cur == "vertex":
            vprops.append(parts[-1])
        i += 1
    if i == len(lines):
        raise ValueError(f"{path}: missing end_header")
    if n_vert is None or n_face is None:
        raise ValueError(f"{path}: needs vertex and face elements")
    for ax in ("x", "y", "z"):
        if ax not in vprops:
            raise ValueError(f"{path}: vertex element lacks {ax}")
    cols = [vprops.index(ax) for ax in ("x", "y", "z")]

    body = [ln for ln in lines[i + 1:] if ln]
    verts = np.empty((n_vert, 3))
    faces = []
    pos = 0
    for name, count in elems:
        if name == "vertex":
            for j in range(count):
                parts = body[pos + j].split()
                verts[j] = [float(parts[c]) for c in cols]
        elif name == "face":
            for j in range(count):
                parts = body[pos + j].split()
                k = int(parts[0])
                idx = [int(p) for p in parts[1:1 + k]]
                for m in range(1, k - 1):
                    faces.append([idx[0], idx[m], idx[m + 1]])
        pos += count
    return TriangleMesh(verts, np.asarray(faces, dtype=np.int64).reshape(-1, 3))


def write_xyz(path, cloud) -> None:
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    with open(path, "w") as fh:
        for p in points:
            fh.write(f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}\n")


def read_xyz(path) -> PointCloud:
    """Whitespace-separated xyz per line; extra columns (normals, colors)
    are ignored; blank and #-comment lines skipped.
    """
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) < 3:
                raise ValueError(f"{path}:{lineno}: fewer than 3 coordinates")
            rows.append([float(parts[0]), float(parts[1]), float(parts[2])])
    return PointCloud(np.asarray(rows, dtype=np.float64).reshape(-1, 3))


def load_mesh(path) -> TriangleMesh:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".obj":
        return read_obj(path)
    if ext == ".ply":
        return read_ply(path)
    raise ValueError(f"unsupported mesh format: {path}")


def save_mesh(path, mesh: TriangleMesh) -> None:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".obj":
        write_obj(path, mesh)
    elif ext == ".ply":
        write_ply(path, mesh)
    else:
        raise ValueError(f"unsupported mesh format: {path}")


def write_needles(path, a: np.ndarray, b: np.ndarray, target: np.ndarray) -> None:
    """One needle per line: both endpoints then the same-side target (0/1)."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    target = np.asarray(target).reshape(-1)
    if not (len(a) == len(b) == len(target)):
        raise ValueError("endpoint and target counts differ")
    with open(path, "w") as fh:
        for i in range(len(a)):
            fh.write(" ".join(_fmt(x) for x in (*a[i], *b[i])))
            fh.write(f" {int(target[i])}\n")


def read_needles(path):
    """Returns (a, b, target) arrays; target is float64 in {0, 1}."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 7:
                raise ValueError(f"{path}:{lineno}: expected 7 fields")
            rows.append([float(p) for p in parts])
    data = np.asarray(rows, dtype=np.float64).reshape(-1, 7)
    target = data[:, 6]
    if not np.all((target == 0.0) | (target == 1.0)):
        raise ValueError(f"{path}: targets must be 0 or 1")
    return data[:, 0:3], data[:, 3:6], target
