"""Command-line pipeline.

Subcommands: sample (mesh -> normalized surface points), fit (points ->
occupancy checkpoint + loss CSV/SVG), extract (checkpoint -> level-set
mesh), eval (pred vs truth metrics CSV), audit (needle validity rates
per sigma multiplier).

Exit codes: 0 success, 1 usage, 2 I/O or bad input data, 3 numerical
failure (divergent fit).  Every command writes a JSON run manifest
(flags, seed, package versions, input hashes) next to its primary
output.  Relative output paths land in $NEEDLEFIELD_OUT_DIR when that
is set.  An optional plain-text config file provides `key = value`
defaults for any long flag of the chosen subcommand; explicit flags
win; unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .field import evaluate_grid, marching_cubes, mesh_occupancy_grid, \
    orient_field, write_volume
from .geometry import PointCloud, cube_domain, fit_to_unit_cube, sample_surface
from .meshio import load_mesh, read_xyz, save_mesh, write_needles, write_xyz
from .metrics import chamfer, volumetric_iou
from .model import (FitDivergedError, OccupancyModel, TrainConfig, fit_shape,
                    parse_sigma_schedule)
from .needles import SigmaRule, sample_crossing_needles, sample_same_side_needles, \
    audit_needles
from .seeding import NEEDLE_OFFSETS, SPACE_SAMPLES, SURFACE_SAMPLING, substream

logger = logging.getLogger("needlefield")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3

OUT_DIR_ENV = "NEEDLEFIELD_OUT_DIR"


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems via exit code 1, not 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _out_path(path: str) -> str:
    base = os.environ.get(OUT_DIR_ENV)
    if base and not os.path.isabs(path):
        path = os.path.join(base, path)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return path


def _require_inputs(*paths) -> None:
    for p in paths:
        if not os.path.isfile(p):
            raise InputError(f"input file not found: {p}")


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(primary_out: str, args, inputs, outputs) -> str:
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "command": args.command,
        "flags": {k: (list(v) if isinstance(v, tuple) else v)
                  for k, v in flags.items()},
        "seed": getattr(args, "seed", None),
        "versions": {
            "needlefield": __version__,
            "numpy": np.__version__,
            "scipy": __import__("scipy").__version__,
            "python": sys.version.split()[0],
        },
        "inputs": {p: f"sha256:{_sha256(p)}" for p in inputs},
        "outputs": list(outputs),
    }
    path = primary_out + ".manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_loss_svg(path: str, history) -> None:
    """Standalone SVG with one polyline per loss term."""
    width, height = 800, 480
    ml, mr, mt, mb = 60, 20, 20, 40
    pw, ph = width - ml - mr, height - mt - mb
    series = [("l_opp", history.l_opp, "#c0392b"),
              ("l_same", history.l_same, "#2980b9"),
              ("l_total", history.l_total, "#27ae60")]
    n = len(history)
    top = max(1e-12, max(float(np.max(v)) for _, v, _ in series))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt+ph}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt+ph}" x2="{ml+pw}" y2="{mt+ph}" stroke="black"/>',
        f'<text x="{ml-8}" y="{mt+6}" text-anchor="end" font-size="12">{top:.3g}</text>',
        f'<text x="{ml-8}" y="{mt+ph}" text-anchor="end" font-size="12">0</text>',
        f'<text x="{ml}" y="{mt+ph+18}" font-size="12">0</text>',
        f'<text x="{ml+pw}" y="{mt+ph+18}" text-anchor="end" font-size="12">{n-1}</text>',
        f'<text x="{ml+pw//2}" y="{height-8}" text-anchor="middle" font-size="12">iteration</text>',
    ]
    for si, (name, vals, color) in enumerate(series):
        xs = ml + pw * (np.arange(n) / max(n - 1, 1))
        ys = mt + ph * (1.0 - np.clip(np.asarray(vals), 0.0, top) / top)
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{ml+pw-120}" y="{mt+16+16*si}" font-size="12" '
                     f'fill="{color}">{name}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def _fmt(x: float) -> str:
    return repr(float(x))


# --- subcommands ---

def cmd_sample(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    _require_inputs(args.mesh)
    try:
        mesh = load_mesh(args.mesh)
    except ValueError as e:
        raise InputError(str(e))
    if mesh.is_empty():
        raise InputError(f"{args.mesh}: no usable faces")
    norm = fit_to_unit_cube(mesh.vertices)
    logger.info("normalization: center %s scale %g", norm.center, norm.scale)
    from .geometry import TriangleMesh
    normed = TriangleMesh(norm.apply(mesh.vertices), mesh.faces)
    pts = sample_surface(normed, args.n, substream(args.seed, SURFACE_SAMPLING))
    out = _out_path(args.out or _stem(args.mesh) + "_points.xyz")
    write_xyz(out, pts)
    logger.info("wrote %d points to %s", args.n, out)
    _write_manifest(out, args, [args.mesh], [out])
    return EXIT_OK


def cmd_fit(args) -> int:
    _require_inputs(args.cloud)
    try:
        cloud = read_xyz(args.cloud)
    except ValueError as e:
        raise InputError(str(e))
    if len(cloud) < 2:
        raise InputError(f"{args.cloud}: need at least 2 points")
    try:
        schedule = parse_sigma_schedule(args.sigma_schedule)
        cfg = TrainConfig(iterations=args.iterations, n_same=args.n_same,
                          regime=args.regime, sigma_schedule=schedule,
                          lr=args.lr, clamp=args.clamp, seed=args.seed,
                          hidden_width=args.hidden_width,
                          hidden_layers=args.hidden_layers,
                          final_init=args.final_init,
                          frequency_scale=args.frequency_scale)
    except ValueError as e:
        raise UsageError(str(e))
    init = None
    inputs = [args.cloud]
    if args.init_checkpoint:
        _require_inputs(args.init_checkpoint)
        try:
            init = OccupancyModel.load(args.init_checkpoint)
        except ValueError as e:
            raise InputError(str(e))
        inputs.append(args.init_checkpoint)

    out = _out_path(args.out or _stem(args.cloud) + ".ckpt")
    csv_path = _out_path(args.loss_csv or _stem(args.cloud) + "_loss.csv")
    try:
        model, hist = fit_shape(cloud, cfg, init=init)
    except FitDivergedError as e:
        _write_loss_csv(csv_path, e.history)
        _write_manifest(csv_path, args, inputs, [csv_path])
        logger.error("fit diverged: %s (partial loss CSV kept at %s)",
                     e, csv_path)
        return EXIT_NUMERIC
    model.save(out)
    _write_loss_csv(csv_path, hist)
    outputs = [out, csv_path]
    if args.plot:
        plot = _out_path(args.plot)
        write_loss_svg(plot, hist)
        outputs.append(plot)
    logger.info("final losses: l_opp=%.4f l_same=%.4f",
                hist.l_opp[-1], hist.l_same[-1])
    _write_manifest(out, args, inputs, outputs)
    return EXIT_OK


def _write_loss_csv(path: str, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "l_opp", "l_same", "l_total"])
        for it, lo, ls, lt in history.rows():
            w.writerow([it, _fmt(lo), _fmt(ls), _fmt(lt)])


def cmd_extract(args) -> int:
    if args.res < 2:
        raise UsageError("--res must be >= 2")
    _require_inputs(args.checkpoint)
    try:
        model = OccupancyModel.load(args.checkpoint)
    except ValueError as e:
        raise InputError(str(e))
    domain = cube_domain(args.domain_half)
    grid = orient_field(evaluate_grid(model, domain, args.res))
    mesh = marching_cubes(grid)
    if mesh.is_empty():
        logger.warning("extraction produced an empty mesh")
    out = _out_path(args.out or _stem(args.checkpoint) + "_mesh.obj")
    try:
        save_mesh(out, mesh)
    except ValueError as e:
        raise UsageError(str(e))
    outputs = [out]
    if args.volume:
        vol = _out_path(args.volume)
        write_volume(vol, grid)
        outputs.append(vol)
    logger.info("extracted %d vertices, %d faces -> %s",
                len(mesh.vertices), len(mesh.faces), out)
    _write_manifest(out, args, [args.checkpoint], outputs)
    return EXIT_OK


def _normalized(mesh):
    from .geometry import TriangleMesh
    norm = fit_to_unit_cube(mesh.vertices)
    logger.info("truth normalization: center %s scale %g", norm.center,
                norm.scale)
    return TriangleMesh(norm.apply(mesh.vertices), mesh.faces)


def cmd_eval(args) -> int:
    _require_inputs(args.pred, args.truth)
    try:
        pred = load_mesh(args.pred)
        truth = load_mesh(args.truth)
    except ValueError as e:
        raise InputError(str(e))
    if truth.is_empty():
        raise InputError(f"{args.truth}: no usable faces")
    if args.normalize_truth:
        truth = _normalized(truth)
    out = _out_path(args.out or _stem(args.pred) + "_metrics.csv")
    header = ["chamfer_l1", "chamfer_l2", "chamfer_p05", "chamfer_p50",
              "chamfer_p95", "iou"]
    if pred.is_empty():
        logger.warning("empty prediction mesh; writing sentinel metrics")
        row = ["inf"] * 5 + ["0.0"]
    else:
        pred_pts = sample_surface(pred, args.samples,
                                  substream(args.seed, SURFACE_SAMPLING, "pred"))
        truth_pts = sample_surface(truth, args.samples,
                                   substream(args.seed, SURFACE_SAMPLING, "truth"))
        rep = chamfer(pred_pts, truth_pts)
        domain = cube_domain(args.domain_half)
        iou = volumetric_iou(mesh_occupancy_grid(pred, domain, args.iou_res),
                             mesh_occupancy_grid(truth, domain, args.iou_res))
        row = [_fmt(rep.l1), _fmt(rep.l2), _fmt(rep.percentiles[0.05]),
               _fmt(rep.percentiles[0.5]), _fmt(rep.percentiles[0.95]),
               _fmt(iou.ratio)]
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerow(row)
    logger.info("metrics -> %s", out)
    _write_manifest(out, args, [args.pred, args.truth], [out])
    return EXIT_OK


def cmd_audit(args) -> int:
    _require_inputs(args.cloud, args.truth)
    try:
        cloud = read_xyz(args.cloud)
        truth = load_mesh(args.truth)
    except ValueError as e:
        raise InputError(str(e))
    if len(cloud) < 2:
        raise InputError(f"{args.cloud}: need at least 2 points")
    if args.normalize_truth:
        truth = _normalized(truth)
    try:
        alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
    except ValueError:
        raise UsageError(f"bad --alphas list: {args.alphas!r}")
    if not alphas or any(a <= 0 for a in alphas):
        raise UsageError("--alphas needs positive numbers")
    if args.repeats < 1:
        raise UsageError("--repeats must be >= 1")

    out = _out_path(args.out or _stem(args.cloud) + "_audit.csv")
    domain = cube_domain()
    rows = []
    outputs = [out]
    for ai, alpha in enumerate(alphas):
        good_opp = n_opp = good_same = n_same = 0
        for rep in range(args.repeats):
            opp = sample_crossing_needles(
                cloud, SigmaRule(alpha),
                substream(args.seed, NEEDLE_OFFSETS, "audit", ai, rep))
            same = sample_same_side_needles(
                cloud, opp.endpoints, args.n_same, domain,
                substream(args.seed, SPACE_SAMPLES, "audit", ai, rep))
            report = audit_needles(opp.concat(same), truth)
            mask = report.target == 0.0
            good_opp += int(report.good[mask].sum())
            n_opp += int(mask.sum())
            good_same += int(report.good[~mask].sum())
            n_same += int((~mask).sum())
            if args.dump_needles and rep == 0:
                nd = _out_path(f"{args.dump_needles}_alpha{alpha:g}.needles")
                both = opp.concat(same)
                write_needles(nd, both.a, both.b, both.target)
                outputs.append(nd)
        rows.append([_fmt(alpha), _fmt(good_opp / n_opp),
                     _fmt(good_same / n_same), n_opp, n_same])
        logger.info("alpha %g: opp %.4f same %.4f", alpha,
                    good_opp / n_opp, good_same / n_same)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "opp_good_rate", "same_good_rate",
                    "n_opp", "n_same"])
        w.writerows(rows)
    _write_manifest(out, args, [args.cloud, args.truth], outputs)
    return EXIT_OK


def _stem(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


# --- parser construction and config-file defaults ---

def build_parser():
    parser = _Parser(prog="needlefield",
                     description="Self-supervised occupancy fields from "
                                 "sparse point clouds.")
    parser.add_argument("--version", action="version",
                        version=f"needlefield {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = {"--config": dict(help="key = value defaults file"),
              "--seed": dict(type=int, default=0, help="master seed"),
              "--verbose": dict(action="store_true", help="debug logging")}

    def add_common(p):
        for flag, kw in common.items():
            p.add_argument(flag, **kw)

    p = sub.add_parser("sample", help="sample a normalized surface cloud",
                       description="Normalize a mesh into the working cube "
                                   "and sample points uniformly by area.")
    p.add_argument("mesh", help="input mesh (.obj/.ply)")
    p.add_argument("--n", type=int, default=300, help="number of points")
    p.add_argument("--out", help="output .xyz path")
    add_common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("fit", help="train an occupancy field on a cloud",
                       description="Fit the needle loss with Adam; writes a "
                                   "checkpoint and a per-iteration loss CSV.")
    p.add_argument("cloud", help="input .xyz point cloud (normalized frame)")
    p.add_argument("--iterations", type=int, default=3000)
    p.add_argument("--n-same", type=int, default=2048,
                   help="same-side needles per iteration")
    p.add_argument("--regime", choices=("resample", "fixed"),
                   default="resample", help="redraw needles per iteration "
                                            "or reuse the first draw")
    p.add_argument("--sigma-schedule", default="1.0:0",
                   help="comma list of mult:start_iter, e.g. 1.0:0,0.5:2000")
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--clamp", type=float, default=10.0,
                   help="forward logit clamp bound (>= 5)")
    p.add_argument("--hidden-width", type=int, default=128)
    p.add_argument("--hidden-layers", type=int, default=4)
    p.add_argument("--final-init", choices=("small", "zero"), default="small",
                   help="output-layer init; 'zero' starts at exactly 0.5 "
                        "occupancy but cannot train (exact saddle)")
    p.add_argument("--frequency-scale", type=float, default=30.0,
                   help="spatial bandwidth of the first layer, radians "
                        "per unit coordinate")
    p.add_argument("--init-checkpoint", help="warm-start model")
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--loss-csv", help="loss history CSV path")
    p.add_argument("--plot", help="loss curve SVG path")
    add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("extract", help="marching-cubes mesh from a checkpoint",
                       description="Evaluate the field on a grid, orient it "
                                   "(empty outside), extract the 0.5 surface.")
    p.add_argument("checkpoint")
    p.add_argument("--res", type=int, default=64, help="grid nodes per axis")
    p.add_argument("--domain-half", type=float, default=0.55,
                   help="half extent of the evaluation cube")
    p.add_argument("--out", help="output mesh (.obj/.ply)")
    p.add_argument("--volume", help="also dump the oriented grid volume")
    add_common(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("eval", help="compare a reconstruction to a truth mesh",
                       description="Chamfer (plain/squared, percentiles) on "
                                   "sampled surfaces plus voxelized IoU.")
    p.add_argument("pred")
    p.add_argument("truth")
    p.add_argument("--samples", type=int, default=100000,
                   help="surface samples per mesh")
    p.add_argument("--normalize-truth", action="store_true",
                   help="map the truth mesh into the working frame first "
                        "(use when it is the original un-normalized input)")
    p.add_argument("--iou-res", type=int, default=64)
    p.add_argument("--domain-half", type=float, default=0.55)
    p.add_argument("--out", help="metrics CSV path")
    add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("audit", help="needle validity rates against a truth mesh",
                       description="Sample needles at each sigma multiplier "
                                   "and report good-rate per set.")
    p.add_argument("cloud", help="input .xyz point cloud")
    p.add_argument("truth", help="ground-truth mesh")
    p.add_argument("--alphas", default="2,1,0.5,0.1,0.01",
                   help="comma list of sigma multipliers")
    p.add_argument("--n-same", type=int, default=2048)
    p.add_argument("--repeats", type=int, default=1,
                   help="independent draws pooled per multiplier")
    p.add_argument("--normalize-truth", action="store_true",
                   help="map the truth mesh into the working frame first")
    p.add_argument("--dump-needles", help="path prefix for needle dumps")
    p.add_argument("--out", help="audit CSV path")
    add_common(p)
    p.set_defaults(func=cmd_audit)
    return parser, sub


def _apply_config_file(parser, sub_actions, argv):
    """Load `key = value` defaults for the invoked subcommand."""
    if "--config" not in argv:
        return
    path = argv[argv.index("--config") + 1] if argv.index("--config") + 1 < len(argv) else None
    if path is None:
        raise UsageError("--config needs a path")
    command = next((tok for tok in argv if not tok.startswith("-")), None)
    subparser = sub_actions.choices.get(command)
    if subparser is None:
        return
    _require_inputs(path)
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, val = (part.strip() for part in line.split("=", 1))
            values[key.replace("-", "_")] = val
    known = {a.dest: a for a in subparser._actions
             if a.option_strings and a.dest != "help"}
    unknown = set(values) - set(known)
    if unknown:
        raise UsageError(f"{path}: unknown config keys: "
                         + ", ".join(sorted(unknown)))
    defaults = {}
    for key, raw in values.items():
        action = known[key]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                defaults[key] = action.type(raw)
            except ValueError:
                raise UsageError(f"{path}: bad value for {key}: {raw!r}")
        else:
            defaults[key] = raw
        if action.choices and defaults[key] not in action.choices:
            raise UsageError(f"{path}: bad value for {key}: {raw!r}")
    subparser.set_defaults(**defaults)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, sub_actions = build_parser()
    try:
        _apply_config_file(parser, sub_actions, argv)
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
