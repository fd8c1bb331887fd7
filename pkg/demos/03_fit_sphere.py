"""Fit an occupancy field to 300 unoriented sphere points, end to end.

No normals, no ground-truth occupancy: supervision comes entirely from
needles sampled around the cloud.  The defaults here are shrunk (small
network, few iterations) so the demo finishes in about a minute; pass
--full for the production-scale settings, which take several minutes
on one core but reconstruct the sphere at IoU > 0.95.

Run:  python3 demos/03_fit_sphere.py [--full]
"""

import argparse
import time

import numpy as np

from needlefield.field import (ScalarGrid, evaluate_grid, marching_cubes,
                               mesh_occupancy_grid, orient_field)
from needlefield.geometry import PointCloud, cube_domain, sample_surface
from needlefield.metrics import chamfer, volumetric_iou
from needlefield.model import TrainConfig, fit_shape
from needlefield.shapes import icosphere, sphere_occupancy


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--full", action="store_true",
                    help="production settings: 128-wide net, 3000 iterations")
    args = ap.parse_args()

    truth = icosphere(subdivisions=3, radius=0.4)
    cloud = PointCloud(sample_surface(truth, 300, np.random.default_rng(321)))

    if args.full:
        cfg = TrainConfig(seed=20240)
        res = 64
    else:
        cfg = TrainConfig(seed=20240, iterations=1500, n_same=512,
                          hidden_width=32, hidden_layers=3)
        res = 32

    print(f"fitting: {cfg.iterations} iterations, width {cfg.hidden_width}, "
          f"{cfg.hidden_layers} hidden layers, {cfg.n_same} same-side "
          f"needles per step")
    t0 = time.time()
    model, history = fit_shape(cloud, cfg)
    print(f"fit took {time.time() - t0:.0f}s")
    for it in range(0, cfg.iterations, max(cfg.iterations // 6, 1)):
        print(f"  iter {it:5d}: crossing loss {history.l_opp[it]:.4f}, "
              f"same-side loss {history.l_same[it]:.4f}")
    print(f"  final   : crossing loss {history.l_opp[-1]:.4f} "
          f"(neutral-field baseline is ln 2 = 0.6931)")

    grid = orient_field(evaluate_grid(model, cube_domain(), res))
    mesh = marching_cubes(grid)
    print(f"extracted {len(mesh.vertices)} vertices / {len(mesh.faces)} "
          f"faces at {res}^3")

    recon_occ = mesh_occupancy_grid(mesh, cube_domain(), res)
    truth_occ = ScalarGrid.from_function(sphere_occupancy, cube_domain(), res)
    iou = volumetric_iou(recon_occ, truth_occ)
    a = sample_surface(mesh, 10000, np.random.default_rng(777))
    b = sample_surface(truth, 10000, np.random.default_rng(778))
    rep = chamfer(a, b)
    print(f"volumetric IoU vs analytic sphere: {iou.ratio:.4f}")
    if iou.ratio < 0.5:
        print("  (the crust localizes long before the deep interior flips "
              "to occupied, and until it does, volume overlap stays small; "
              "interiorness spreads inward through the same-side term, "
              "which needs the --full budget on a shape this thick)")
    print(f"Chamfer l1 {rep.l1:.2e}, l2 {rep.l2:.2e} "
          f"(10k surface samples each side)")
    radial = np.linalg.norm(mesh.vertices, axis=1)
    print(f"vertex radius: mean {radial.mean():.4f}, "
          f"spread {radial.std():.4f} (target 0.4)")


if __name__ == "__main__":
    main()
