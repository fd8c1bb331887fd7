"""needlefield: self-supervised occupancy fields from sparse point clouds.

The pipeline: sample needles around a point cloud (`needles`), fit a
per-shape occupancy network against them (`model`, `loss`), extract the
0.5 level set (`field`) and score it (`metrics`).
"""

__version__ = "0.1.0"

from .geometry import (Aabb, Normalization, NearestNeighborIndex, PointCloud,
                       TriangleMesh, cube_domain, fit_to_unit_cube,
                       mesh_occupancy, mesh_occupancy_batch, sample_surface,
                       segment_crossings, segment_crossings_batch)
from .seeding import substream

__all__ = [
    "Aabb", "Normalization", "NearestNeighborIndex", "PointCloud",
    "TriangleMesh", "cube_domain", "fit_to_unit_cube", "mesh_occupancy",
    "mesh_occupancy_batch", "sample_surface", "segment_crossings",
    "segment_crossings_batch", "substream", "__version__",
]
