"""Mesh extraction from binary occupancy fields.

The pipeline samples an occupancy field on a uniform grid, locates surface
crossings on grid edges by batched binary search, derives in-face auxiliary
points to estimate local surface normals without gradients, places one mesh
vertex per primal-face partition of each crossing cell through a quadric
error minimization, and polygonizes with an intersection-aware quad split.
"""

from .fields import (
    BoxField,
    CsgField,
    MeshWindingField,
    OccupancyField,
    PlaneField,
    SmoothedOccupancy,
    SphereField,
    TorusField,
    VoxelField,
    eval_labels,
    load_scene,
    winding_number,
)
from .grid import GridSpec, LabelVolume, extract_active, sample_labels
from .mesh import (
    TriangleMesh,
    count_self_intersections,
    icosphere,
    sample_surface,
    validate_manifold,
)
from .metrics import metric_fit, metric_hdd, metric_md2, metric_nic
from .meshio import export_obj, export_ply, import_obj, import_ply
from .pipeline import ContourOptions, EvalCounter, contour
from .baseline import StageConfig, marching_cubes, run_stage
from .search import SearchBudget

__version__ = "0.1.0"
