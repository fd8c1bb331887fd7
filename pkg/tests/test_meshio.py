import numpy as np
import pytest

from needlefield.geometry import PointCloud
from needlefield.meshio import (load_mesh, read_needles, read_obj, read_ply,
                                read_xyz, save_mesh, write_needles, write_obj,
                                write_ply, write_xyz)
from needlefield.shapes import icosphere


def test_obj_round_trip_lossless(tmp_path, rng):
    mesh = icosphere(subdivisions=1, radius=0.34567)
    path = tmp_path / "m.obj"
    write_obj(path, mesh)
    back = read_obj(path)
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.faces, mesh.faces)


def test_ply_round_trip_lossless(tmp_path):
    mesh = icosphere(subdivisions=1, radius=1.0 / 3.0)
    path = tmp_path / "m.ply"
    write_ply(path, mesh)
    back = read_ply(path)
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.faces, mesh.faces)


def test_load_save_dispatch_by_extension(tmp_path):
    mesh = icosphere(subdivisions=0)
    for name in ("a.obj", "a.ply"):
        save_mesh(tmp_path / name, mesh)
        back = load_mesh(tmp_path / name)
        assert np.array_equal(back.vertices, mesh.vertices)
    with pytest.raises(ValueError):
        save_mesh(tmp_path / "a.stl", mesh)
    with pytest.raises(ValueError):
        load_mesh(tmp_path / "a.stl")


def test_obj_reader_tolerates_attributes_and_comments(tmp_path):
    path = tmp_path / "m.obj"
    path.write_text(
        "# comment\n"
        "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\n"
        "vn 0 0 1\n"
        "f 1/1/1 2/2/1 3/3/1\n"
        "f 1 2 3 4\n"          # quad fans into two triangles
        "f -3 -2 -1\n"         # negative indices count from the end
    )
    mesh = read_obj(path)
    assert len(mesh.vertices) == 4
    expected = [[0, 1, 2], [0, 1, 2], [0, 2, 3], [1, 2, 3]]
    assert np.array_equal(mesh.faces, expected)


def test_obj_reader_rejects_short_records(tmp_path):
    path = tmp_path / "bad.obj"
    path.write_text("v 1 2\n")
    with pytest.raises(ValueError):
        read_obj(path)
    path.write_text("v 0 0 0\nv 1 0 0\nf 1 2\n")
    with pytest.raises(ValueError):
        read_obj(path)


def test_ply_reader_extra_vertex_properties(tmp_path):
    path = tmp_path / "m.ply"
    path.write_text(
        "ply\nformat ascii 1.0\n"
        "element vertex 3\n"
        "property float nx\n"
        "property double x\nproperty double y\nproperty double z\n"
        "element face 1\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
        "9 0 0 0\n9 1 0 0\n9 0 1 0\n"
        "3 0 1 2\n"
    )
    mesh = read_ply(path)
    assert np.array_equal(mesh.vertices,
                          [[0, 0, 0], [1, 0, 0], [0, 1, 0]])
    assert np.array_equal(mesh.faces, [[0, 1, 2]])


def test_ply_reader_rejects_binary_and_headerless(tmp_path):
    path = tmp_path / "b.ply"
    path.write_text("ply\nformat binary_little_endian 1.0\nend_header\n")
    with pytest.raises(ValueError):
        read_ply(path)
    path.write_text("solid nope\n")
    with pytest.raises(ValueError):
        read_ply(path)


def test_xyz_round_trip_and_extra_columns(tmp_path, rng):
    pts = rng.normal(size=(50, 3))
    path = tmp_path / "c.xyz"
    write_xyz(path, PointCloud(pts))
    back = read_xyz(path)
    assert np.array_equal(back.points, pts)

    path.write_text("# header\n0.5 0.25 -1 0 0 1 255\n\n1 2 3\n")
    back = read_xyz(path)
    assert np.array_equal(back.points, [[0.5, 0.25, -1.0], [1, 2, 3]])

    path.write_text("1 2\n")
    with pytest.raises(ValueError):
        read_xyz(path)


def test_needles_round_trip(tmp_path, rng):
    a = rng.normal(size=(40, 3))
    b = rng.normal(size=(40, 3))
    t = rng.integers(0, 2, size=40).astype(np.float64)
    path = tmp_path / "n.needles"
    write_needles(path, a, b, t)
    a2, b2, t2 = read_needles(path)
    assert np.array_equal(a2, a)
    assert np.array_equal(b2, b)
    assert np.array_equal(t2, t)


def test_needles_validation(tmp_path):
    with pytest.raises(ValueError):
        write_needles(tmp_path / "n", np.zeros((2, 3)), np.zeros((3, 3)),
                      np.zeros(2))
    path = tmp_path / "bad.needles"
    path.write_text("0 0 0 1 1 1 0.5\n")
    with pytest.raises(ValueError):
        read_needles(path)
    path.write_text("0 0 0 1 1 1\n")
    with pytest.raises(ValueError):
        read_needles(path)
