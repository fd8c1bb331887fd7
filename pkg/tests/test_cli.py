import csv
import hashlib
import json

import numpy as np
import pytest

from needlefield import __version__
from needlefield.cli import main
from needlefield.field import read_volume
from needlefield.meshio import read_needles, read_obj, read_xyz, write_obj
from needlefield.model import OccupancyModel
from needlefield.shapes import icosphere


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """One pipeline run shared by the assertion tests below."""
    d = tmp_path_factory.mktemp("pipeline")
    paths = {
        "truth": str(d / "truth.obj"),
        "cloud": str(d / "cloud.xyz"),
        "ckpt": str(d / "shape.ckpt"),
        "loss": str(d / "loss.csv"),
        "plot": str(d / "loss.svg"),
        "mesh": str(d / "recon.obj"),
        "vol": str(d / "recon.vol"),
        "metrics": str(d / "metrics.csv"),
        "audit": str(d / "audit.csv"),
        "dump": str(d / "needledump"),
    }
    write_obj(paths["truth"], icosphere(subdivisions=1, radius=1.7))
    assert main(["sample", paths["truth"], "--n", "60", "--seed", "4",
                 "--out", paths["cloud"]]) == 0
    # just enough optimization for a non-empty level set at 12^3
    assert main(["fit", paths["cloud"], "--iterations", "150",
                 "--hidden-width", "16", "--hidden-layers", "2",
                 "--n-same", "64", "--seed", "4", "--out", paths["ckpt"],
                 "--loss-csv", paths["loss"], "--plot", paths["plot"]]) == 0
    assert main(["extract", paths["ckpt"], "--res", "12",
                 "--out", paths["mesh"], "--volume", paths["vol"]]) == 0
    assert main(["eval", paths["mesh"], paths["mesh"], "--samples", "2000",
                 "--iou-res", "12", "--seed", "4",
                 "--out", paths["metrics"]]) == 0
    assert main(["audit", paths["cloud"], paths["truth"],
                 "--normalize-truth", "--alphas", "1,0.5", "--n-same", "64",
                 "--repeats", "2", "--seed", "4", "--out", paths["audit"],
                 "--dump-needles", paths["dump"]]) == 0
    return paths


# --- pipeline artifacts ---

def test_sample_output_is_normalized(work):
    cloud = read_xyz(work["cloud"])
    assert len(cloud) == 60
    assert np.abs(cloud.points).max() <= 0.475 + 1e-12


def test_fit_artifacts(work):
    model = OccupancyModel.load(work["ckpt"])
    assert model.widths == (3, 16, 16, 1)
    rows = read_csv(work["loss"])
    assert rows[0] == ["iter", "l_opp", "l_same", "l_total"]
    assert len(rows) == 151
    for it, row in enumerate(rows[1:]):
        assert int(row[0]) == it
        lo, ls, lt = (float(x) for x in row[1:])
        assert lt == lo + ls
    svg = open(work["plot"]).read()
    assert svg.startswith("<svg") and "polyline" in svg


def test_extract_artifacts(work):
    mesh = read_obj(work["mesh"])
    assert len(mesh.vertices) > 0
    assert mesh.faces.max() < len(mesh.vertices)
    grid = read_volume(work["vol"])
    assert grid.resolution == (12, 12, 12)
    # oriented: the written volume must read empty at the corners
    assert grid.corner_values().mean() <= 0.5


def test_eval_metrics_schema(work):
    rows = read_csv(work["metrics"])
    assert rows[0] == ["chamfer_l1", "chamfer_l2", "chamfer_p05",
                       "chamfer_p50", "chamfer_p95", "iou"]
    vals = [float(x) for x in rows[1]]
    # self comparison: tiny chamfer (two sampling streams), exact IoU
    assert vals[0] < 0.05
    assert vals[5] == 1.0


def test_audit_csv_and_dumps(work):
    rows = read_csv(work["audit"])
    assert rows[0] == ["alpha", "opp_good_rate", "same_good_rate",
                       "n_opp", "n_same"]
    assert [float(r[0]) for r in rows[1:]] == [1.0, 0.5]
    for r in rows[1:]:
        assert 0.0 <= float(r[1]) <= 1.0
        assert 0.0 <= float(r[2]) <= 1.0
        assert int(r[3]) == 2 * 60       # repeats x cloud size
        assert int(r[4]) == 2 * 64
    a, b, t = read_needles(work["dump"] + "_alpha1.needles")
    assert len(a) == 60 + 64
    assert set(np.unique(t)) <= {0.0, 1.0}


def test_manifest_contents(work):
    man = json.load(open(work["ckpt"] + ".manifest.json"))
    assert man["command"] == "fit"
    assert man["seed"] == 4
    assert man["versions"]["needlefield"] == __version__
    digest = hashlib.sha256(open(work["cloud"], "rb").read()).hexdigest()
    assert man["inputs"][work["cloud"]] == f"sha256:{digest}"
    assert work["ckpt"] in man["outputs"]
    assert work["plot"] in man["outputs"]
    assert man["flags"]["iterations"] == 150


def test_sample_is_deterministic(work, tmp_path):
    out = str(tmp_path / "again.xyz")
    assert main(["sample", work["truth"], "--n", "60", "--seed", "4",
                 "--out", out]) == 0
    assert open(out).read() == open(work["cloud"]).read()
    assert main(["sample", work["truth"], "--n", "60", "--seed", "5",
                 "--out", out]) == 0
    assert open(out).read() != open(work["cloud"]).read()


def test_fit_is_deterministic_via_cli(work, tmp_path):
    out = str(tmp_path / "again.ckpt")
    assert main(["fit", work["cloud"], "--iterations", "150",
                 "--hidden-width", "16", "--hidden-layers", "2",
                 "--n-same", "64", "--seed", "4", "--out", out,
                 "--loss-csv", str(tmp_path / "l.csv")]) == 0
    a = OccupancyModel.load(out).params_flat()
    b = OccupancyModel.load(work["ckpt"]).params_flat()
    assert np.array_equal(a, b)


# --- exit codes ---

def test_usage_errors_exit_1(work, capsys):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["sample", work["truth"], "--n", "0"]) == 1
    assert main(["fit", work["cloud"], "--lr", "abc"]) == 1
    assert main(["fit", work["cloud"], "--sigma-schedule", "0.5:5"]) == 1
    assert main(["extract", work["ckpt"], "--res", "1"]) == 1
    assert main(["audit", work["cloud"], work["truth"],
                 "--alphas", "1,abc"]) == 1
    assert main(["audit", work["cloud"], work["truth"],
                 "--alphas", "-1"]) == 1
    assert main(["audit", work["cloud"], work["truth"],
                 "--repeats", "0"]) == 1
    capsys.readouterr()


def test_io_errors_exit_2(work, tmp_path, capsys):
    assert main(["sample", str(tmp_path / "missing.obj")]) == 2
    assert main(["fit", str(tmp_path / "missing.xyz")]) == 2
    garbage = tmp_path / "garbage.ckpt"
    garbage.write_bytes(b"not a checkpoint at all")
    assert main(["extract", str(garbage)]) == 2
    single = tmp_path / "one.xyz"
    single.write_text("0 0 0\n")
    assert main(["fit", str(single)]) == 2
    bad_mesh = tmp_path / "empty.obj"
    bad_mesh.write_text("")
    assert main(["sample", str(bad_mesh)]) == 2
    capsys.readouterr()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")  # NaN propagation
def test_divergent_fit_exits_3(work, tmp_path, rng, capsys):
    broken = OccupancyModel.create(rng, hidden_width=16, hidden_layers=2)
    broken.weights[0][0, 0] = np.nan
    bad_ckpt = str(tmp_path / "nan.ckpt")
    broken.save(bad_ckpt)
    loss_csv = str(tmp_path / "partial.csv")
    code = main(["fit", work["cloud"], "--iterations", "4",
                 "--hidden-width", "16", "--hidden-layers", "2",
                 "--n-same", "32", "--init-checkpoint", bad_ckpt,
                 "--out", str(tmp_path / "never.ckpt"),
                 "--loss-csv", loss_csv])
    assert code == 3
    rows = read_csv(loss_csv)
    assert len(rows) == 2               # header + the diverged iteration
    assert not np.isfinite(float(rows[1][1]))
    capsys.readouterr()


# --- empty extraction path ---

def test_empty_extraction_and_sentinel_eval(work, tmp_path, rng, capsys):
    flat = OccupancyModel.create(rng, hidden_width=8, hidden_layers=1,
                                 final_init="zero")
    ckpt = str(tmp_path / "flat.ckpt")
    flat.save(ckpt)
    mesh_out = str(tmp_path / "flat.obj")
    assert main(["extract", ckpt, "--res", "8", "--out", mesh_out]) == 0
    assert read_obj(mesh_out).is_empty()
    metrics = str(tmp_path / "flat_metrics.csv")
    assert main(["eval", mesh_out, work["truth"], "--normalize-truth",
                 "--samples", "500", "--iou-res", "8",
                 "--out", metrics]) == 0
    rows = read_csv(metrics)
    assert float(rows[1][0]) == np.inf
    assert float(rows[1][5]) == 0.0
    capsys.readouterr()


# --- config file and output directory ---

def test_config_file_defaults_and_override(work, tmp_path):
    cfg = tmp_path / "fit.cfg"
    cfg.write_text("iterations = 5   # few steps\n"
                   "hidden-width = 8\n"
                   "hidden-layers = 1\n"
                   "n-same = 32\n")
    loss = str(tmp_path / "cfg_loss.csv")
    assert main(["fit", work["cloud"], "--config", str(cfg),
                 "--out", str(tmp_path / "cfg.ckpt"),
                 "--loss-csv", loss]) == 0
    assert len(read_csv(loss)) == 6
    assert OccupancyModel.load(str(tmp_path / "cfg.ckpt")).widths == (3, 8, 1)

    # explicit flag beats the config value
    assert main(["fit", work["cloud"], "--config", str(cfg),
                 "--iterations", "3",
                 "--out", str(tmp_path / "cfg2.ckpt"),
                 "--loss-csv", loss]) == 0
    assert len(read_csv(loss)) == 4


def test_config_file_rejects_unknown_and_bad_values(work, tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("iterationz = 5\n")
    assert main(["fit", work["cloud"], "--config", str(bad)]) == 1
    bad.write_text("iterations = soon\n")
    assert main(["fit", work["cloud"], "--config", str(bad)]) == 1
    bad.write_text("regime = occasionally\n")
    assert main(["fit", work["cloud"], "--config", str(bad)]) == 1
    bad.write_text("no equals sign here\n")
    assert main(["fit", work["cloud"], "--config", str(bad)]) == 1
    assert main(["fit", work["cloud"], "--config"]) == 1
    capsys.readouterr()


def test_out_dir_env_redirects_relative_paths(work, tmp_path, monkeypatch):
    monkeypatch.setenv("NEEDLEFIELD_OUT_DIR", str(tmp_path))
    assert main(["sample", work["truth"], "--n", "10", "--seed", "1",
                 "--out", "sub/cloud.xyz"]) == 0
    assert (tmp_path / "sub" / "cloud.xyz").exists()
    assert (tmp_path / "sub" / "cloud.xyz.manifest.json").exists()

    # absolute paths are left alone
    absolute = str(tmp_path / "abs.xyz")
    assert main(["sample", work["truth"], "--n", "10", "--seed", "1",
                 "--out", absolute]) == 0
    assert (tmp_path / "abs.xyz").exists()
