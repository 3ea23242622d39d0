"""Mesh quality metrics: iso-level alignment, squared mesh distance,
normal inconsistency, and Hausdorff distance.

Distance-based metrics sample both meshes with a fixed seed and use exact
closest-point queries; they are deterministic for a fixed seed and chunking.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .mesh import MeshDistanceIndex, sample_surface


def metric_fit(mesh, field, n=100_000, seed=0):
    """Mean |raw - iso| over surface samples; None for binary-only fields."""
    if not field.continuous:
        return None
    pts, _, _ = sample_surface(mesh, n, seed=seed)
    raw = np.asarray(field.eval_raw(pts), dtype=np.float64)
    return float(np.mean(np.abs(raw - field.iso_level)))


def metric_md2(mesh_a, mesh_b, n=100_000, seed=0):
    """Mean squared point-to-mesh distance, averaged over both directions."""
    pts_a, _, _ = sample_surface(mesh_a, n, seed=seed)
    pts_b, _, _ = sample_surface(mesh_b, n, seed=seed + 1)
    d_ab, _, _ = MeshDistanceIndex(mesh_b).query(pts_a)
    d_ba, _, _ = MeshDistanceIndex(mesh_a).query(pts_b)
    return 0.5 * (float(np.mean(d_ab**2)) + float(np.mean(d_ba**2)))


def metric_nic(mesh_gt, mesh_out, n=100_000, seed=0, return_directions=False):
    """Mean angle (radians) between sample normals and the normals at the
    nearest point of the other mesh, averaged over both directions.

    Normals are used with their stored orientation.
    """
    pts_g, nrm_g, _ = sample_surface(mesh_gt, n, seed=seed)
    pts_o, nrm_o, _ = sample_surface(mesh_out, n, seed=seed + 1)
    _, tri_go, _ = MeshDistanceIndex(mesh_out).query(pts_g)
    _, tri_og, _ = MeshDistanceIndex(mesh_gt).query(pts_o)
    n_out = mesh_out.face_normals()[tri_go]
    n_gt = mesh_gt.face_normals()[tri_og]
    fwd = float(
        np.mean(np.arccos(np.clip(np.einsum("ij,ij->i", nrm_g, n_out), -1.0, 1.0)))
    )
    bwd = float(
        np.mean(np.arccos(np.clip(np.einsum("ij,ij->i", nrm_o, n_gt), -1.0, 1.0)))
    )
    mean = 0.5 * (fwd + bwd)
    if return_directions:
        return mean, {"gt_to_out": fwd, "out_to_gt": bwd}
    return mean


def metric_hdd(mesh_a, mesh_b, n=100_000, seed=0):
    """Sampled Hausdorff distance: max over both directions of the max
    point-to-mesh distance."""
    pts_a, _, _ = sample_surface(mesh_a, n, seed=seed)
    pts_b, _, _ = sample_surface(mesh_b, n, seed=seed + 1)
    d_ab, _, _ = MeshDistanceIndex(mesh_b).query(pts_a)
    d_ba, _, _ = MeshDistanceIndex(mesh_a).query(pts_b)
    return max(float(d_ab.max()), float(d_ba.max()))


@dataclass
class Report:
    """Validation flags and metric values of one extraction run."""

    n_vertices: int = 0
    n_triangles: int = 0
    manifold: bool = False
    si_count: int = -1
    fit_err: float | None = None
    md2: float | None = None
    nic: float | None = None
    nic_directions: dict | None = None
    hdd: float | None = None
    euler_characteristic: int | None = None
    eval_counts: dict = dc_field(default_factory=dict)
    wall_time_s: float = 0.0
    open_boundary: bool = False
    warnings: list = dc_field(default_factory=list)
    split_case_counts: dict = dc_field(default_factory=dict)
    qef_rank_counts: dict = dc_field(default_factory=dict)
    qef_max_residual: float | None = None
    normal_fallbacks: int = 0

    def to_dict(self):
        out = {}
        for key, value in self.__dict__.items():
            if isinstance(value, np.generic):
                value = value.item()
            out[key] = value
        return out
