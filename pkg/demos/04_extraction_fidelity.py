"""How faithfully does surface extraction track a known field?

Marching Cubes places vertices by linear interpolation along lattice
edges, so with an analytic occupancy ramp around a sphere we can measure
the geometric error exactly: every extracted vertex should sit at radius
0.4.  The table below shows the error shrinking roughly quadratically
with resolution, far below the cell diagonal that bounds it.

Run:  python3 demos/04_extraction_fidelity.py
"""

import time

import numpy as np

from needlefield.field import ScalarGrid, marching_cubes
from needlefield.geometry import cube_domain
from needlefield.shapes import occupancy_from_distance, sphere_distance


def main():
    print("res    vertices   max |r - 0.4|   cell diagonal   seconds")
    for res in (16, 32, 64, 128):
        t0 = time.time()
        grid = ScalarGrid.from_function(
            lambda p: occupancy_from_distance(sphere_distance(p), width=0.2),
            cube_domain(), res)
        mesh = marching_cubes(grid)
        took = time.time() - t0
        radial = np.linalg.norm(mesh.vertices, axis=1)
        err = np.abs(radial - 0.4).max()
        diag = np.sqrt(3.0) * 1.1 / (res - 1)
        print(f"{res:3d}   {len(mesh.vertices):8d}   {err:13.2e}   "
              f"{diag:13.2e}   {took:7.2f}")

    print()
    print("the same field complemented (occupied <-> empty) extracts the")
    print("same surface, because the 0.5 level set is shared:")
    grid = ScalarGrid.from_function(
        lambda p: occupancy_from_distance(sphere_distance(p), width=0.2),
        cube_domain(), 32)
    anti = grid.complement()
    m1, m2 = marching_cubes(grid), marching_cubes(anti)
    d = np.abs(np.sort(np.linalg.norm(m1.vertices, axis=1))
               - np.sort(np.linalg.norm(m2.vertices, axis=1))).max()
    print(f"  vertex radius difference after sorting: {d:.1e}")


if __name__ == "__main__":
    main()
