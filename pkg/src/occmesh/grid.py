"""Uniform grid topology, vertex label sampling, and active-set extraction.

Index conventions (documented so reports are reproducible):
  vertices  id = x + y*S + z*S^2 with S = resolution + 1
  edges     keyed by lower_vertex_id * 3 + axis
  faces     keyed by corner_vertex_id * 3 + normal_axis
  cells     id = x + y*R + z*R^2
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned box divided into resolution^3 cells."""

    lo: tuple
    hi: tuple
    resolution: int

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if self.resolution < 2:
            raise ValueError("resolution must be at least 2")
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError("grid box must have positive extent")

    @property
    def shape(self):
        return self.resolution + 1

    @property
    def cell_size(self):
        lo, hi = np.array(self.lo), np.array(self.hi)
        return (hi - lo) / self.resolution

    @property
    def n_vertices(self):
        return self.shape**3

    @property
    def n_edges(self):
        return 3 * self.resolution * self.shape**2

    @property
    def n_faces(self):
        return 3 * self.resolution**2 * self.shape

    @property
    def n_cells(self):
        return self.resolution**3

    @property
    def vertex_steps(self):
        s = self.shape
        return np.array([1, s, s * s], dtype=np.int64)

    def vertex_coords(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        s = self.shape
        return np.stack([ids % s, (ids // s) % s, ids // (s * s)], axis=-1)

    def vertex_id(self, coords):
        coords = np.asarray(coords, dtype=np.int64)
        s = self.shape
        return coords[..., 0] + coords[..., 1] * s + coords[..., 2] * s * s

    def vertex_positions(self, ids):
        return np.array(self.lo) + self.vertex_coords(ids) * self.cell_size

    def all_vertex_positions(self):
        return self.vertex_positions(np.arange(self.n_vertices, dtype=np.int64))

    def cell_coords(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        r = self.resolution
        return np.stack([ids % r, (ids // r) % r, ids // (r * r)], axis=-1)

    def cell_id(self, coords):
        coords = np.asarray(coords, dtype=np.int64)
        r = self.resolution
        return coords[..., 0] + coords[..., 1] * r + coords[..., 2] * r * r

    def cell_bounds(self, ids):
        lo = np.array(self.lo) + self.cell_coords(ids) * self.cell_size
        return lo, lo + self.cell_size


@dataclass
class LabelVolume:
    """Per-vertex labels, sampled in one batched field evaluation."""

    grid: GridSpec
    labels: np.ndarray  # (S^3,) uint8, flat in vertex-id order
    raw: np.ndarray | None = None  # (S^3,) float64 when the field is continuous

    def boundary_inside_count(self):
        s = self.grid.shape
        lab3 = self.labels.reshape(s, s, s)  # [z, y, x]
        shell = lab3.sum() - lab3[1:-1, 1:-1, 1:-1].sum()
        return int(shell)


def sample_labels(field, grid, counter=None, chunk=1 << 20):
    """Label every grid vertex with one logical batch evaluation.

    Chunking is a memory measure only; every vertex is queried exactly once.
    """
    pts = grid.all_vertex_positions()
    keep_raw = field.continuous
    labels = np.empty(len(pts), dtype=np.uint8)
    raw = np.empty(len(pts), dtype=np.float64) if keep_raw else None
    for start in range(0, len(pts), chunk):
        sl = slice(start, min(start + chunk, len(pts)))
        r = np.asarray(field.eval_raw(pts[sl]), dtype=np.float64)
        labels[sl] = (r > field.iso_level).astype(np.uint8)
        if keep_raw:
            raw[sl] = r
    if counter is not None:
        counter.record("labels", batches=1, evals=len(pts))
    return LabelVolume(grid, labels, raw)


@dataclass
class ActiveSets:
    """Surface-crossing edges, faces, and cells of a labeled grid.

    Crossing edges store vertices inside-first: ``v_in`` carries label 1.
    Face corner ids are cyclic (w0, w1, w2, w3) and the four boundary edge
    keys follow the same cycle (w0w1, w1w2, w2w3, w3w0).
    """

    grid: GridSpec
    crossing_bitmap: np.ndarray  # (S^3, 3) bool, indexed by (vertex, axis)
    edge_vertex: np.ndarray  # (K,) lower vertex id
    edge_axis: np.ndarray  # (K,)
    edge_key: np.ndarray  # (K,) sorted ascending
    v_in: np.ndarray  # (K,) inside endpoint vertex id
    v_out: np.ndarray  # (K,)
    face_vertex: np.ndarray  # (F,) corner vertex id
    face_axis: np.ndarray  # (F,) normal axis
    face_key: np.ndarray  # (F,) sorted ascending
    face_n_crossing: np.ndarray  # (F,) 2 or 4
    face_edge_keys: np.ndarray  # (F, 4) cyclic boundary edges
    face_corners: np.ndarray  # (F, 4) cyclic corner vertex ids
    face_corner_labels: np.ndarray  # (F, 4) labels at the cyclic corners
    cells: np.ndarray  # (C,) sorted crossing cell ids

    @property
    def n_edges(self):
        return len(self.edge_key)

    def edge_rows(self, keys):
        rows = np.searchsorted(self.edge_key, keys)
        if np.any(rows >= len(self.edge_key)) or np.any(self.edge_key[rows] != keys):
            raise KeyError("edge key not in the crossing set")
        return rows

    def edge_endpoints(self):
        return (
            self.grid.vertex_positions(self.v_in),
            self.grid.vertex_positions(self.v_out),
        )


def extract_active(volume, grid=None):
    """Extract crossing edges/faces/cells; deterministic ascending order."""
    grid = grid or volume.grid
    if volume.grid is not grid and volume.grid != grid:
        raise ValueError("label volume does not match grid")
    s = grid.shape
    r = grid.resolution
    labels = volume.labels
    lab3 = labels.reshape(s, s, s)  # [z, y, x]
    steps = grid.vertex_steps

    bitmap = np.zeros((grid.n_vertices, 3), dtype=bool)
    edge_vertex_parts, edge_axis_parts = [], []
    # axis 0 varies along the x (fastest) dimension of lab3, etc.
    diffs = (
        lab3[:, :, :-1] != lab3[:, :, 1:],
        lab3[:, :-1, :] != lab3[:, 1:, :],
        lab3[:-1, :, :] != lab3[1:, :, :],
    )
    for axis, diff in enumerate(diffs):
        zz, yy, xx = np.nonzero(diff)
        vid = xx + yy * s + zz * s * s
        bitmap[vid, axis] = True
        edge_vertex_parts.append(vid.astype(np.int64))
        edge_axis_parts.append(np.full(len(vid), axis, dtype=np.int64))

    edge_vertex = np.concatenate(edge_vertex_parts) if edge_vertex_parts else np.empty(0, np.int64)
    edge_axis = np.concatenate(edge_axis_parts) if edge_axis_parts else np.empty(0, np.int64)
    edge_key = edge_vertex * 3 + edge_axis
    order = np.argsort(edge_key, kind="stable")
    edge_vertex, edge_axis, edge_key = edge_vertex[order], edge_axis[order], edge_key[order]

    other = edge_vertex + steps[edge_axis]
    base_inside = labels[edge_vertex] == 1
    v_in = np.where(base_inside, edge_vertex, other)
    v_out = np.where(base_inside, other, edge_vertex)

    # Faces: only faces touching a crossing edge can cross; gather candidates
    # from the crossing edges' incident faces, then count crossings exactly.
    # Edge (v, a) lies in faces (v, n) and (v - step_t, n) for each normal
    # axis n != a, with t the remaining axis.
    face_cand = []
    for axis in range(3):
        sel = edge_axis == axis
        if not sel.any():
            continue
        coords = grid.vertex_coords(edge_vertex[sel])
        for norm_axis in range(3):
            if norm_axis == axis:
                continue
            third = 3 - axis - norm_axis
            for delta in (0, 1):
                cand = coords.copy()
                cand[:, third] -= delta
                okm = (cand[:, third] >= 0) & (cand[:, third] < r)
                if okm.any():
                    fv = grid.vertex_id(cand[okm])
                    face_cand.append(fv * 3 + norm_axis)
    if face_cand:
        face_keys = np.unique(np.concatenate(face_cand))
    else:
        face_keys = np.empty(0, dtype=np.int64)

    face_vertex = face_keys // 3
    face_axis = face_keys % 3
    b_ax = (face_axis + 1) % 3
    c_ax = (face_axis + 2) % 3
    step_b = steps[b_ax]
    step_c = steps[c_ax]
    w0 = face_vertex
    w1 = face_vertex + step_b
    w2 = face_vertex + step_b + step_c
    w3 = face_vertex + step_c
    e01 = w0 * 3 + b_ax
    e12 = w1 * 3 + c_ax
    e23 = w3 * 3 + b_ax
    e30 = w0 * 3 + c_ax
    face_edge_keys = np.stack([e01, e12, e23, e30], axis=1)
    crossing_flat = bitmap.reshape(-1)
    n_crossing = crossing_flat[face_edge_keys].sum(axis=1)
    keep = n_crossing >= 2
    if np.any((n_crossing % 2) != 0):
        raise AssertionError("face crossing-edge parity violated")
    face_vertex = face_vertex[keep]
    face_axis = face_axis[keep]
    face_keys = face_keys[keep]
    face_n_crossing = n_crossing[keep].astype(np.int64)
    face_edge_keys = face_edge_keys[keep]
    face_corners = np.stack([w0[keep], w1[keep], w2[keep], w3[keep]], axis=1)
    face_corner_labels = labels[face_corners]

    # Crossing cells: union of the (up to) four cells around each crossing edge.
    cell_parts = []
    for axis in range(3):
        sel = edge_axis == axis
        if not sel.any():
            continue
        coords = grid.vertex_coords(edge_vertex[sel])
        b_ax2, c_ax2 = (axis + 1) % 3, (axis + 2) % 3
        for db in (-1, 0):
            for dc in (-1, 0):
                c = coords.copy()
                c[:, b_ax2] += db
                c[:, c_ax2] += dc
                okm = (c >= 0).all(axis=1) & (c < r).all(axis=1)
                if okm.any():
                    cell_parts.append(grid.cell_id(c[okm]))
    cells = np.unique(np.concatenate(cell_parts)) if cell_parts else np.empty(0, np.int64)

    return ActiveSets(
        grid=grid,
        crossing_bitmap=bitmap,
        edge_vertex=edge_vertex,
        edge_axis=edge_axis,
        edge_key=edge_key,
        v_in=v_in,
        v_out=v_out,
        face_vertex=face_vertex,
        face_axis=face_axis,
        face_key=face_keys,
        face_n_crossing=face_n_crossing,
        face_edge_keys=face_edge_keys,
        face_corners=face_corners,
        face_corner_labels=face_corner_labels,
        cells=cells,
    )


# Local cell topology: corner bit i -> coords (i&1, (i>>1)&1, (i>>2)&1);
# local edge id = axis*4 + rank over corners with coord[axis] == 0.
CELL_CORNER_COORDS = np.array(
    [[i & 1, (i >> 1) & 1, (i >> 2) & 1] for i in range(8)], dtype=np.int64
)

_edges = []
for _axis in range(3):
    for _c in range(8):
        if CELL_CORNER_COORDS[_c, _axis] == 0:
            _edges.append((_axis, _c, _c | (1 << _axis)))
CELL_EDGES = np.array([(a, b) for _, a, b in _edges], dtype=np.int64)
CELL_EDGE_AXIS = np.array([a for a, _, _ in _edges], dtype=np.int64)
del _edges, _axis, _c


def cell_edge_keys(grid, cell_ids):
    """Global edge keys of the 12 edges of each cell, local order."""
    coords = grid.cell_coords(np.asarray(cell_ids, dtype=np.int64))
    base = grid.vertex_id(coords)
    steps = grid.vertex_steps
    corner_off = CELL_CORNER_COORDS @ steps
    lower = base[..., None] + corner_off[CELL_EDGES[:, 0]]
    return lower * 3 + CELL_EDGE_AXIS


def cell_face_keys(grid, cell_ids):
    """Global face keys of the 6 faces of each cell: order (axis, side)."""
    coords = grid.cell_coords(np.asarray(cell_ids, dtype=np.int64))
    base = grid.vertex_id(coords)
    steps = grid.vertex_steps
    keys = []
    for axis in range(3):
        keys.append(base * 3 + axis)
        keys.append((base + steps[axis]) * 3 + axis)
    return np.stack(keys, axis=-1)
