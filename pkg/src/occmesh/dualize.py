"""Per-cell partitioning of crossing edges into primal-face cycles, normal
estimation from adjacent in-face points, and QEF vertex placement.

Crossing edges of a cell are grouped by walking face joins: on every face
with two crossing edges those edges are joined; on a face with four (the
ambiguous checkerboard pattern) the join pairing is decided by sampling the
field at the face center, which both adjacent cells share, so neighboring
cells always agree.  Each edge of a cell lies on exactly two of its faces,
so the join graph is 2-regular and its components are closed cycles in
which edge points and face points alternate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import CELL_CORNER_COORDS, cell_face_keys
from .search import Face2DBatch


class InternalContractError(RuntimeError):
    """An internal pipeline invariant was violated."""


@dataclass
class FacePairings:
    """Edge-pair instances per active face; one 2D point per instance."""

    instance_face_row: np.ndarray  # (Q,) row into the active face arrays
    instance_edges: np.ndarray  # (Q, 2) edge keys, ascending within the pair
    by_face: dict  # face_key -> list of (edge_a, edge_b, instance_id)
    n_probes: int  # number of face-center evaluations spent


def _pair_rule(edge_cycle, corner_labels, center_label):
    """Pairing of the four crossing edges of a checkerboard face.

    ``edge_cycle`` lists boundary edges (E01, E12, E23, E30) for cyclic
    corners (w0..w3).  When the center matches w0's label the inside region
    of that label runs through the middle and the isocurves cut off the two
    opposite corners, and vice versa.
    """
    e01, e12, e23, e30 = edge_cycle
    if center_label == corner_labels[0]:
        return [(e01, e12), (e23, e30)]
    return [(e30, e01), (e12, e23)]


def face_pairings(active, labels_fn):
    """Group each active face's crossing edges into pairs.

    Ambiguous four-edge faces cost one field evaluation each (face center),
    batched in a single pass.
    """
    crossing = active.crossing_bitmap.reshape(-1)
    grid = active.grid
    amb = np.nonzero(active.face_n_crossing == 4)[0]
    center_labels = {}
    if len(amb):
        h = grid.cell_size
        b_ax = (active.face_axis[amb] + 1) % 3
        c_ax = (active.face_axis[amb] + 2) % 3
        origin = grid.vertex_positions(active.face_vertex[amb])
        centers = origin.copy()
        centers[np.arange(len(amb)), b_ax] += 0.5 * h[b_ax]
        centers[np.arange(len(amb)), c_ax] += 0.5 * h[c_ax]
        labs = labels_fn(centers, "probe_face_center")
        center_labels = dict(zip(amb.tolist(), labs.tolist()))

    rows, pairs, by_face = [], [], {}
    for row in range(len(active.face_key)):
        ekeys = active.face_edge_keys[row]
        if active.face_n_crossing[row] == 2:
            sel = [int(k) for k in ekeys if crossing[k]]
            face_pairs = [tuple(sel)]
        else:
            clabels = active.face_corner_labels[row]
            face_pairs = _pair_rule([int(k) for k in ekeys], clabels, center_labels[row])
        entry = []
        for a, b in face_pairs:
            a, b = (a, b) if a < b else (b, a)
            inst = len(pairs)
            rows.append(row)
            pairs.append((a, b))
            entry.append((a, b, inst))
        by_face[int(active.face_key[row])] = entry
    return FacePairings(
        instance_face_row=np.asarray(rows, dtype=np.int64),
        instance_edges=np.asarray(pairs, dtype=np.int64).reshape(-1, 2),
        by_face=by_face,
        n_probes=len(amb),
    )


def build_face_batch(active, pairings, point1d):
    """Assemble the 2D-search input for every (face, edge pair) instance."""
    grid = active.grid
    h = grid.cell_size
    rows = pairings.instance_face_row
    axis = active.face_axis[rows]
    b_ax = (axis + 1) % 3
    c_ax = (axis + 2) % 3
    origin = grid.vertex_positions(active.face_vertex[rows])
    eye = np.eye(3)
    axis_u = eye[b_ax]
    axis_v = eye[c_ax]
    h_u = h[b_ax]
    h_v = h[c_ax]

    e_rows = active.edge_rows(pairings.instance_edges.reshape(-1)).reshape(-1, 2)
    pos = point1d.position[e_rows]  # (Q, 2, 3)
    rel = pos - origin[:, None, :]
    u = np.einsum("qpk,qk->qp", rel, axis_u)
    v = np.einsum("qpk,qk->qp", rel, axis_v)
    p1 = np.stack([u[:, 0], v[:, 0]], axis=1)
    p2 = np.stack([u[:, 1], v[:, 1]], axis=1)
    corner_labels = active.face_corner_labels[rows]
    return Face2DBatch(
        origin=origin,
        axis_u=axis_u,
        axis_v=axis_v,
        h_u=h_u,
        h_v=h_v,
        p1=p1,
        p2=p2,
        corner_labels=corner_labels,
    )


def trace_cycles(edges, joins):
    """Split a 2-regular join graph into closed cycles, deterministically.

    ``joins`` maps each edge id to its two (instance, other_edge) joins.
    Returns a list of (edge_list, instance_list) with instance j sitting
    between edge j and edge j+1 (cyclically).
    """
    cycles = []
    visited = set()
    for start in sorted(edges):
        if start in visited:
            continue
        if len(joins[start]) != 2:
            raise InternalContractError(
                f"edge {start} has {len(joins[start])} joins, expected 2"
            )
        cycle_edges = [start]
        cycle_insts = []
        inst, nxt = min(joins[start])
        cycle_insts.append(inst)
        prev_inst = inst
        visited.add(start)
        while nxt != start:
            visited.add(nxt)
            cycle_edges.append(nxt)
            options = [j for j in joins[nxt] if j[0] != prev_inst]
            if len(options) != 1:
                raise InternalContractError(f"broken join cycle at edge {nxt}")
            inst, follower = options[0]
            cycle_insts.append(inst)
            prev_inst = inst
            nxt = follower
        cycles.append((cycle_edges, cycle_insts))
    return cycles


@dataclass
class CellPartitions:
    """One partition per primal-face cycle; cycle order drives adjacency."""

    cell_ids: np.ndarray  # (P,) owning cell per partition
    partition_index: np.ndarray  # (P,) index of the cycle within its cell
    cycles_edges: list  # per partition: list of edge keys in cycle order
    cycles_instances: list  # per partition: list of instance ids in cycle order
    lookup_keys: np.ndarray  # sorted (cell_id * stride + edge_key)
    lookup_values: np.ndarray  # partition index per lookup key
    key_stride: int

    def partition_of(self, cell_ids, edge_keys):
        keys = np.asarray(cell_ids, dtype=np.int64) * self.key_stride + np.asarray(
            edge_keys, dtype=np.int64
        )
        idx = np.searchsorted(self.lookup_keys, keys)
        bad = (idx >= len(self.lookup_keys)) | (self.lookup_keys[np.minimum(idx, len(self.lookup_keys) - 1)] != keys)
        if np.any(bad):
            raise InternalContractError("crossing edge without a partition in its cell")
        return self.lookup_values[idx]

    def __len__(self):
        return len(self.cell_ids)


def partition_cells(active, pairings):
    """Partition every crossing cell's crossing edges into cycles."""
    grid = active.grid
    crossing = active.crossing_bitmap.reshape(-1)
    from .grid import cell_edge_keys

    all_edge_keys = cell_edge_keys(grid, active.cells)  # (C, 12)
    all_face_keys = cell_face_keys(grid, active.cells)  # (C, 6)

    cell_ids_out, part_idx_out = [], []
    cycles_edges, cycles_insts = [], []
    lk, lv = [], []
    stride = int(grid.n_vertices) * 3
    for ci, cell in enumerate(active.cells):
        ekeys = [int(k) for k in all_edge_keys[ci] if crossing[k]]
        joins = {k: [] for k in ekeys}
        for fkey in all_face_keys[ci]:
            entry = pairings.by_face.get(int(fkey))
            if not entry:
                continue
            for a, b, inst in entry:
                joins[a].append((inst, b))
                joins[b].append((inst, a))
        cycles = trace_cycles(ekeys, joins)
        for idx, (ce, cinst) in enumerate(cycles):
            pid = len(cell_ids_out)
            cell_ids_out.append(int(cell))
            part_idx_out.append(idx)
            cycles_edges.append(ce)
            cycles_insts.append(cinst)
            for k in ce:
                lk.append(int(cell) * stride + k)
                lv.append(pid)
    lk = np.asarray(lk, dtype=np.int64)
    lv = np.asarray(lv, dtype=np.int64)
    order = np.argsort(lk)
    return CellPartitions(
        cell_ids=np.asarray(cell_ids_out, dtype=np.int64),
        partition_index=np.asarray(part_idx_out, dtype=np.int64),
        cycles_edges=cycles_edges,
        cycles_instances=cycles_insts,
        lookup_keys=lk[order],
        lookup_values=lv[order],
        key_stride=stride,
    )


_LOCAL_FACE_CORNERS = {}
for _axis in range(3):
    _b, _c = (_axis + 1) % 3, (_axis + 2) % 3
    for _side in (0, 1):
        _w0 = _side << _axis
        _LOCAL_FACE_CORNERS[_axis * 2 + _side] = (
            _w0,
            _w0 | (1 << _b),
            _w0 | (1 << _b) | (1 << _c),
            _w0 | (1 << _c),
        )
del _axis, _b, _c, _side, _w0

_LOCAL_EDGE_BY_CORNERS = {}
for _i in range(8):
    for _axis in range(3):
        if not _i & (1 << _axis):
            _j = _i | (1 << _axis)
            _rank_corners = [c for c in range(8) if not c & (1 << _axis)]
            _eid = _axis * 4 + _rank_corners.index(_i)
            _LOCAL_EDGE_BY_CORNERS[(_i, _j)] = _eid
            _LOCAL_EDGE_BY_CORNERS[(_j, _i)] = _eid
del _i, _axis, _j, _rank_corners, _eid


def partition_single_cell(corner_labels, face_center_labels):
    """Cycle partitioning of one synthetic cell, for exhaustive testing.

    ``corner_labels`` has 8 entries (corner bit i -> (i&1, i>>1&1, i>>2&1));
    ``face_center_labels`` has 6 entries ordered (axis, side) and is only
    consulted on checkerboard faces.  Returns cycles of local edge ids with
    the joining local face ids interleaved.
    """
    corner_labels = [int(v) for v in corner_labels]
    joins = {}
    edges = set()
    for fid in range(6):
        w = _LOCAL_FACE_CORNERS[fid]
        boundary = [
            _LOCAL_EDGE_BY_CORNERS[(w[k], w[(k + 1) % 4])] for k in range(4)
        ]
        labs = [corner_labels[c] for c in w]
        crossing_edges = [
            boundary[k] for k in range(4) if labs[k] != labs[(k + 1) % 4]
        ]
        if len(crossing_edges) == 2:
            pairs = [tuple(crossing_edges)]
        elif len(crossing_edges) == 4:
            pairs = _pair_rule(boundary, labs, int(face_center_labels[fid]))
        else:
            continue
        for a, b in pairs:
            joins.setdefault(a, []).append((fid, b))
            joins.setdefault(b, []).append((fid, a))
            edges.update((a, b))
    return trace_cycles(sorted(edges), joins)


def estimate_normals(p_e, q_a, q_b, edge_dir, h):
    """Unit plane normals from an edge point and its two face points.

    The sign is fixed outward along the crossing edge.  If the three points
    are collinear (cross-product norm under 1e-9 * h^2) the edge direction
    itself is used and flagged.
    """
    p_e = np.asarray(p_e, dtype=np.float64)
    n = np.cross(q_a - p_e, q_b - p_e)
    norms = np.linalg.norm(n, axis=1)
    fallback = norms <= 1e-9 * float(h) * float(h)
    edir = np.asarray(edge_dir, dtype=np.float64)
    edir_unit = edir / np.linalg.norm(edir, axis=1, keepdims=True)
    safe = np.where(fallback, 1.0, norms)
    n = n / safe[:, None]
    n[fallback] = edir_unit[fallback]
    flip = np.einsum("ij,ij->i", n, edir) < 0.0
    n[flip] = -n[flip]
    return n, fallback


def estimate_normal(p_e, q_a, q_b, edge_dir, h):
    """Single-sample convenience wrapper."""
    n, flag = estimate_normals(
        np.asarray(p_e)[None],
        np.asarray(q_a, dtype=np.float64)[None],
        np.asarray(q_b, dtype=np.float64)[None],
        np.asarray(edge_dir, dtype=np.float64)[None],
        h,
    )
    return n[0], bool(flag[0])


def solve_qef_batch(points, normals, partition, n_partitions, box_lo, box_hi, truncation=0.1):
    """Minimize sum over samples of (n . (x - p))^2 per partition.

    Solved by a symmetric 3x3 eigendecomposition in mass-point-centered
    coordinates; singular values below ``truncation`` times the largest are
    dropped, pinning those directions to the sample centroid.  Results are
    clamped componentwise to the owning cell box.

    Returns (positions, rank, residual).
    """
    points = np.asarray(points, dtype=np.float64)
    normals = np.asarray(normals, dtype=np.float64)
    partition = np.asarray(partition, dtype=np.int64)
    p = n_partitions
    counts = np.bincount(partition, minlength=p).astype(np.float64)
    counts = np.maximum(counts, 1.0)
    centroid = np.zeros((p, 3))
    np.add.at(centroid, partition, points)
    centroid /= counts[:, None]

    mats = np.zeros((p, 3, 3))
    np.add.at(mats, partition, normals[:, :, None] * normals[:, None, :])
    rhs = np.zeros((p, 3))
    offsets = np.einsum("ij,ij->i", normals, points - centroid[partition])
    np.add.at(rhs, partition, normals * offsets[:, None])

    w, v = np.linalg.eigh(mats)
    s = np.sqrt(np.clip(w, 0.0, None))
    s_max = s[:, -1:]
    keep = s >= truncation * np.maximum(s_max, 1e-300)
    keep &= s_max > 0.0
    coef = np.einsum("pij,pi->pj", v, rhs)  # v^T rhs per partition
    safe_w = np.where(keep, w, 1.0)
    y = np.where(keep, coef / safe_w, 0.0)
    sol = np.einsum("pij,pj->pi", v, y)
    pos = np.clip(centroid + sol, box_lo, box_hi)

    resid_terms = np.einsum("ij,ij->i", normals, pos[partition] - points) ** 2
    residual = np.zeros(p)
    np.add.at(residual, partition, resid_terms)
    return pos, keep.sum(axis=1), residual


def solve_qef(points, normals, box_lo, box_hi, truncation=0.1):
    """Single-partition QEF solve, mainly for tests and diagnostics."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    normals = np.atleast_2d(np.asarray(normals, dtype=np.float64))
    pos, rank, resid = solve_qef_batch(
        points,
        normals,
        np.zeros(len(points), dtype=np.int64),
        1,
        np.asarray(box_lo, dtype=np.float64)[None],
        np.asarray(box_hi, dtype=np.float64)[None],
        truncation,
    )
    return pos[0], int(rank[0]), float(resid[0])


@dataclass
class Point3DBatch:
    position: np.ndarray  # (P, 3)
    rank: np.ndarray  # (P,)
    residual: np.ndarray  # (P,)
    sample_partition: np.ndarray  # (Ns,)
    sample_normals: np.ndarray  # (Ns, 3)
    sample_points: np.ndarray  # (Ns, 3)
    normal_fallbacks: int


def build_plane_samples(active, partitions, point1d, point2d_positions):
    """Flatten every partition cycle into (edge point, normal) samples.

    ``point2d_positions`` maps instance id -> 3D point.  Each edge takes the
    two face points adjacent to it in its cycle.
    """
    part_rows, edge_rows, qa_ids, qb_ids = [], [], [], []
    for pid in range(len(partitions)):
        edges = partitions.cycles_edges[pid]
        insts = partitions.cycles_instances[pid]
        k = len(edges)
        rows = active.edge_rows(np.asarray(edges, dtype=np.int64))
        for j in range(k):
            part_rows.append(pid)
            edge_rows.append(int(rows[j]))
            qa_ids.append(insts[j - 1])
            qb_ids.append(insts[j])
    edge_rows = np.asarray(edge_rows, dtype=np.int64)
    part_rows = np.asarray(part_rows, dtype=np.int64)
    p_e = point1d.position[edge_rows]
    q_a = point2d_positions[np.asarray(qa_ids, dtype=np.int64)]
    q_b = point2d_positions[np.asarray(qb_ids, dtype=np.int64)]
    p_out_pos = active.grid.vertex_positions(active.v_out[edge_rows])
    p_in_pos = active.grid.vertex_positions(active.v_in[edge_rows])
    edge_dir = p_out_pos - p_in_pos
    h = float(np.min(active.grid.cell_size))
    normals, fallback = estimate_normals(p_e, q_a, q_b, edge_dir, h)
    return part_rows, edge_rows, p_e, normals, int(fallback.sum())


def place_3d_points(active, partitions, sample_partition, sample_points, sample_normals, truncation=0.1):
    """One QEF solve per partition, clamped to the owning cell box."""
    lo, hi = active.grid.cell_bounds(partitions.cell_ids)
    pos, rank, resid = solve_qef_batch(
        sample_points,
        sample_normals,
        sample_partition,
        len(partitions),
        lo,
        hi,
        truncation,
    )
    return pos, rank, resid
