"""Marching-cubes baseline and the staged ablation ladder.

The baseline reuses the same primal-face cycle machinery as the dual
pipeline: each cycle of crossing-edge points is triangulated directly as a
fan, which matches a table-driven marching cubes with face-center ambiguity
resolution while guaranteeing crack-free, neighbor-consistent patches.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import dualize
from .grid import extract_active, sample_labels
from .mesh import TriangleMesh
from .pipeline import ConfigurationError, ContourOptions, ContourResult, EvalCounter, contour
from .search import SearchBudget


@dataclass(frozen=True)
class StageConfig:
    """Component selection for the ablation ladder.

    (binary-search, two-d-points, ic) is the full method;
    (linear-interp, fd-gradient, mdc) mimics gradient-based dual contouring.
    """

    one_d: str = "binary-search"
    normals: str = "two-d-points"
    split: str = "ic"


def run_stage(field, grid, stage, budget=None, counter=None, qef_truncation=0.1):
    """Run the pipeline with the selected component substitutions."""
    options = ContourOptions(
        one_d=stage.one_d,
        normals=stage.normals,
        split=stage.split,
        budget=budget or SearchBudget(),
        qef_truncation=qef_truncation,
    )
    return contour(field, grid, options, counter=counter)


def marching_cubes(field, grid, mode="binary", counter=None):
    """Marching-cubes surface: one vertex per crossing edge.

    ``mode`` "binary" places vertices at edge midpoints; "continuous"
    inverse-interpolates the stored raw vertex values (requires a field
    with continuous raw output).  Face ambiguities are resolved by the
    face-center label, the same rule the dual pipeline uses.
    """
    if mode not in ("binary", "continuous"):
        raise ConfigurationError(f"unknown marching-cubes mode {mode!r}")
    counter = counter or EvalCounter(field)
    t0 = time.perf_counter()
    stats = {"warnings": [], "method": f"mc:{mode}"}

    volume = sample_labels(field, grid, counter=counter)
    boundary_inside = volume.boundary_inside_count()
    stats["boundary_inside_vertices"] = boundary_inside
    if boundary_inside:
        stats["warnings"].append(
            f"{boundary_inside} boundary grid vertices are inside; "
            "the output will have an open boundary"
        )
    active = extract_active(volume)
    stats["n_crossing_edges"] = int(active.n_edges)
    stats["n_crossing_cells"] = int(len(active.cells))
    if active.n_edges == 0:
        empty = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
        stats["wall_time_s"] = time.perf_counter() - t0
        stats["eval_counts"] = counter.snapshot()
        stats["open_boundary"] = False
        return ContourResult(empty, empty, counter, stats)

    p_in, p_out = active.edge_endpoints()
    if mode == "binary":
        t = np.full(active.n_edges, 0.5)
    else:
        if volume.raw is None:
            raise ConfigurationError(
                "continuous marching cubes requires a field with raw values"
            )
        iso = field.iso_level
        psi_in = volume.raw[active.v_in] - iso
        psi_out = volume.raw[active.v_out] - iso
        den = psi_in - psi_out
        t = np.clip(psi_in / np.where(np.abs(den) < 1e-300, 1.0, den), 0.0, 1.0)
    vertices = p_in + t[:, None] * (p_out - p_in)

    pairings = dualize.face_pairings(active, lambda pts, cat: counter.labels(pts, cat))
    partitions = dualize.partition_cells(active, pairings)

    edge_dirs = p_out - p_in
    tri_list = []
    for pid in range(len(partitions)):
        edges = partitions.cycles_edges[pid]
        rows = active.edge_rows(np.asarray(edges, dtype=np.int64))
        if len(rows) < 3:
            continue
        poly = vertices[rows]
        # orient the fan outward: crossing edges pierce their patch in the
        # inside-to-outside direction
        fan = [(rows[0], rows[j], rows[j + 1]) for j in range(1, len(rows) - 1)]
        normal = np.zeros(3)
        for a, b, c in fan:
            normal += np.cross(vertices[b] - vertices[a], vertices[c] - vertices[a])
        outward = edge_dirs[rows].sum(axis=0)
        if normal @ outward < 0:
            fan = [(a, c, b) for a, b, c in fan]
        tri_list.extend(fan)

    tris = np.asarray(tri_list, dtype=np.int64).reshape(-1, 3)
    used = np.zeros(len(vertices), dtype=bool)
    if len(tris):
        used[tris.reshape(-1)] = True
    remap = -np.ones(len(vertices), dtype=np.int64)
    remap[used] = np.arange(int(used.sum()))
    mesh = TriangleMesh(vertices[used], remap[tris] if len(tris) else tris)
    stats["open_boundary"] = bool((~used).any()) and boundary_inside > 0
    stats["wall_time_s"] = time.perf_counter() - t0
    stats["eval_counts"] = counter.snapshot()
    return ContourResult(mesh, mesh, counter, stats)
