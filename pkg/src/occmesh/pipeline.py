"""End-to-end contouring pipeline shared by the full method and its ablations.

Stage order: vertex labels -> active sets -> edge points -> face pairing
probes -> face points (or finite-difference normals) -> per-cell partitions
-> QEF vertices -> polygonization -> non-manifold repair.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import dualize, polygonize
from .fields import eval_labels
from .grid import extract_active, sample_labels
from .mesh import TriangleMesh
from .search import SearchBudget, find_1d_points, find_2d_points

ONE_D_MODES = ("midpoint", "linear-interp", "binary-search")
NORMAL_MODES = ("fd-gradient", "two-d-points")
SPLIT_MODES = ("mdc", "ic")


class ConfigurationError(ValueError):
    pass


class EvalCounter:
    """Counts batched field evaluations per pipeline category."""

    def __init__(self, field):
        self.field = field
        self.stats = {}

    def record(self, category, batches, evals):
        entry = self.stats.setdefault(category, {"batches": 0, "evals": 0})
        entry["batches"] += batches
        entry["evals"] += evals

    def labels(self, points, category):
        self.record(category, 1, len(points))
        return eval_labels(self.field, points)

    def raw(self, points, category):
        self.record(category, 1, len(points))
        return np.asarray(self.field.eval_raw(points), dtype=np.float64)

    @property
    def total_evals(self):
        return sum(e["evals"] for e in self.stats.values())

    def snapshot(self):
        out = {k: dict(v) for k, v in self.stats.items()}
        out["total_evals"] = self.total_evals
        return out


@dataclass
class ContourOptions:
    """Pipeline configuration; the defaults are the full method."""

    one_d: str = "binary-search"
    normals: str = "two-d-points"
    split: str = "ic"
    budget: SearchBudget = dc_field(default_factory=SearchBudget)
    qef_truncation: float = 0.1
    fd_step_factor: float = 0.01  # finite-difference step as a cell-size fraction
    repair: bool = True

    def validate(self):
        if self.one_d not in ONE_D_MODES:
            raise ConfigurationError(f"unknown 1D mode {self.one_d!r}")
        if self.normals not in NORMAL_MODES:
            raise ConfigurationError(f"unknown normal mode {self.normals!r}")
        if self.split not in SPLIT_MODES:
            raise ConfigurationError(f"unknown split mode {self.split!r}")


@dataclass
class ContourResult:
    mesh: TriangleMesh
    raw_mesh: TriangleMesh  # before non-manifold repair
    counter: EvalCounter
    stats: dict


def _empty_result(counter, stats):
    empty = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return ContourResult(empty, empty, counter, stats)


def _edge_points(volume, active, options, counter):
    p_in, p_out = active.edge_endpoints()
    mode = options.one_d
    if mode == "binary-search":
        return find_1d_points(
            p_in,
            p_out,
            lambda pts: counter.labels(pts, "search_1d"),
            iters=options.budget.iters_1d,
        )
    if mode == "midpoint":
        t = np.full(len(p_in), 0.5)
    else:  # linear-interp: inverse lerp of the stored raw vertex values
        if volume.raw is None:
            raw_in = volume.labels[active.v_in].astype(np.float64)
            raw_out = volume.labels[active.v_out].astype(np.float64)
        else:
            raw_in = volume.raw[active.v_in]
            raw_out = volume.raw[active.v_out]
        iso = counter.field.iso_level
        psi_in = raw_in - iso
        psi_out = raw_out - iso
        den = psi_in - psi_out
        t = np.where(np.abs(den) < 1e-300, 0.5, psi_in / np.where(den == 0, 1.0, den))
        t = np.clip(t, 0.0, 1.0)
    from .search import Point1DBatch

    return Point1DBatch(
        t=t, position=p_in + t[:, None] * (p_out - p_in), p_in=p_in, p_out=p_out
    )


def _fd_normals(point1d, active, options, counter):
    """Central-difference gradient normals at the edge points."""
    if not counter.field.continuous:
        raise ConfigurationError(
            "fd-gradient normals require a field with continuous raw values"
        )
    h = float(np.min(active.grid.cell_size))
    step = options.fd_step_factor * h
    pts = point1d.position
    offsets = np.concatenate(
        [pts + step * np.eye(3)[i] for i in range(3)]
        + [pts - step * np.eye(3)[i] for i in range(3)]
    )
    vals = counter.raw(offsets, "fd_gradient")
    k = len(pts)
    grad = np.stack([(vals[i * k:(i + 1) * k] - vals[(i + 3) * k:(i + 4) * k]) for i in range(3)], axis=1)
    grad /= 2.0 * step
    norms = np.linalg.norm(grad, axis=1)
    p_in, p_out = active.edge_endpoints()
    edir = p_out - p_in
    edir_unit = edir / np.linalg.norm(edir, axis=1, keepdims=True)
    bad = norms < 1e-30
    n = np.where(bad[:, None], edir_unit, -grad / np.where(bad, 1.0, norms)[:, None])
    flip = np.einsum("ij,ij->i", n, edir) < 0
    n[flip] = -n[flip]
    return n, int(bad.sum())


def contour(field, grid, options=None, counter=None):
    """Run the dual contouring pipeline and return the repaired mesh."""
    options = options or ContourOptions()
    options.validate()
    counter = counter or EvalCounter(field)
    t0 = time.perf_counter()
    stats = {"options": options, "warnings": []}

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
        stats["n_2d_points"] = 0
        stats["open_boundary"] = False
        stats["wall_time_s"] = time.perf_counter() - t0
        stats["eval_counts"] = counter.snapshot()
        return _empty_result(counter, stats)

    point1d = _edge_points(volume, active, options, counter)

    pairings = dualize.face_pairings(
        active, lambda pts, cat: counter.labels(pts, cat)
    )
    partitions = dualize.partition_cells(active, pairings)
    stats["n_partitions"] = len(partitions)

    if options.normals == "two-d-points":
        batch = dualize.build_face_batch(active, pairings, point1d)
        point2d = find_2d_points(
            batch, lambda pts, cat: counter.labels(pts, cat), options.budget
        )
        stats["n_2d_points"] = len(batch)
        codes, counts = np.unique(point2d.status, return_counts=True)
        from .search import STATUS_NAMES

        stats["point2d_status_counts"] = {
            STATUS_NAMES[int(c)]: int(n) for c, n in zip(codes, counts)
        }
        part_rows, edge_rows, p_e, normals, n_fallback = dualize.build_plane_samples(
            active, partitions, point1d, point2d.position3
        )
    else:
        stats["n_2d_points"] = 0
        edge_normals, n_bad = _fd_normals(point1d, active, options, counter)
        part_rows, edge_rows = [], []
        for pid in range(len(partitions)):
            rows = active.edge_rows(
                np.asarray(partitions.cycles_edges[pid], dtype=np.int64)
            )
            part_rows.extend([pid] * len(rows))
            edge_rows.extend(rows.tolist())
        part_rows = np.asarray(part_rows, dtype=np.int64)
        edge_rows = np.asarray(edge_rows, dtype=np.int64)
        p_e = point1d.position[edge_rows]
        normals = edge_normals[edge_rows]
        n_fallback = n_bad
    stats["normal_fallbacks"] = n_fallback

    positions, rank, residual = dualize.place_3d_points(
        active, partitions, part_rows, p_e, normals, truncation=options.qef_truncation
    )
    ranks, rank_counts = np.unique(rank, return_counts=True)
    stats["qef_rank_counts"] = {int(r): int(c) for r, c in zip(ranks, rank_counts)}
    stats["qef_max_residual"] = float(residual.max()) if len(residual) else 0.0

    poly = polygonize.build_mesh(
        active, partitions, positions, point1d, split_mode=options.split
    )
    cases, case_counts = np.unique(poly.split_cases, return_counts=True)
    stats["split_case_counts"] = {int(c): int(n) for c, n in zip(cases, case_counts)}
    stats["open_boundary"] = poly.skipped_boundary_edges > 0
    stats["skipped_boundary_edges"] = poly.skipped_boundary_edges

    mesh = polygonize.repair_nonmanifold(poly.mesh) if options.repair else poly.mesh
    stats["repair_added_vertices"] = mesh.n_vertices - poly.mesh.n_vertices
    stats["wall_time_s"] = time.perf_counter() - t0
    stats["eval_counts"] = counter.snapshot()
    return ContourResult(mesh, poly.mesh, counter, stats)
