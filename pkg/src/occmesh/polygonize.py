"""Polygonization: connect per-cell vertices across crossing edges.

Every interior crossing edge has four adjacent cells whose partition points
form a quad, ordered so the oriented triangle of cell centers c1, c2, c3 has
its normal along the inside-to-outside edge direction.  The quad is split
into two triangles along a diagonal whose endpoints pass a convexity test
against the edge endpoints (the envelope condition), or fanned into four
triangles through the edge's own crossing point when neither diagonal does.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dualize import InternalContractError
from .mesh import TriangleMesh

CASE_DIAG_13 = 1
CASE_DIAG_24 = 2
CASE_FAN = 3

# Ring of the four cells around an edge along axis a, in the (a+1, a+2)
# axis plane; counterclockwise when viewed along +a.
_RING_FWD = np.array([[-1, -1], [0, -1], [0, 0], [-1, 0]], dtype=np.int64)
_RING_REV = _RING_FWD[::-1].copy()


def is_concave_vertex(p, p_vin, p_vout, diag_a, diag_b):
    """Concavity of one quad vertex against the other diagonal.

    True when the vertex falls below the oriented triangle (diag_a, diag_b,
    p_vout) or above (diag_a, diag_b, p_vin); either condition pushes the
    adjacent diagonal outside the edge envelope.
    """
    p = np.asarray(p, dtype=np.float64)
    p_vin = np.asarray(p_vin, dtype=np.float64)
    p_vout = np.asarray(p_vout, dtype=np.float64)
    diag_a = np.asarray(diag_a, dtype=np.float64)
    diag_b = np.asarray(diag_b, dtype=np.float64)
    above = np.dot(p - p_vout, np.cross(diag_a - p_vout, diag_b - p_vout)) < 0.0
    below = np.dot(p - p_vin, np.cross(diag_a - p_vin, diag_b - p_vin)) > 0.0
    return bool(above or below)


def _concavity(quad, p_vin, p_vout):
    """Vectorized concavity bits for all four quad vertices.

    ``quad`` is (E, 4, 3); vertex k is tested against its cyclic neighbors
    (k-1, k+1), which are the endpoints of the other diagonal.
    """
    conc = np.zeros(quad.shape[:2], dtype=bool)
    for k in range(4):
        pk = quad[:, k]
        da = quad[:, (k - 1) % 4]
        db = quad[:, (k + 1) % 4]
        plus = (
            np.einsum(
                "ij,ij->i",
                pk - p_vout,
                np.cross(da - p_vout, db - p_vout),
            )
            < 0.0
        )
        minus = (
            np.einsum(
                "ij,ij->i",
                pk - p_vin,
                np.cross(da - p_vin, db - p_vin),
            )
            > 0.0
        )
        conc[:, k] = plus | minus
    return conc


def split_quad(quad, p_vin, p_vout, p_e=None):
    """Split decision for a single edge quad; returns (case, triangles).

    Case 1 splits along (c1, c3) unless c2 or c4 is concave; case 2 along
    (c2, c4) unless c1 or c3 is concave; otherwise four triangles fan
    through the edge point.  Case 1 wins when both diagonals qualify.
    """
    quad = np.asarray(quad, dtype=np.float64)[None]
    conc = _concavity(quad, np.asarray(p_vin)[None], np.asarray(p_vout)[None])[0]
    q = quad[0]
    if not (conc[1] or conc[3]):
        return CASE_DIAG_13, [(q[0], q[1], q[2]), (q[0], q[2], q[3])]
    if not (conc[0] or conc[2]):
        return CASE_DIAG_24, [(q[0], q[1], q[3]), (q[1], q[2], q[3])]
    if p_e is None:
        raise ValueError("fan split requires the edge point")
    pe = np.asarray(p_e, dtype=np.float64)
    return CASE_FAN, [
        (pe, q[0], q[1]),
        (pe, q[1], q[2]),
        (pe, q[2], q[3]),
        (pe, q[3], q[0]),
    ]


@dataclass
class PolygonizeResult:
    mesh: TriangleMesh
    split_cases: np.ndarray  # per interior crossing edge: 1, 2, or 3
    skipped_boundary_edges: int


def build_mesh(active, partitions, positions, point1d, split_mode="ic"):
    """Assemble the output mesh from partition points and edge quads.

    ``split_mode`` "ic" applies the concavity analysis; "mdc" always picks
    case 1.  Crossing edges on the domain boundary (fewer than four adjacent
    cells) are skipped, leaving an open boundary.
    """
    grid = active.grid
    k = active.n_edges
    if k == 0 or len(partitions) == 0:
        return PolygonizeResult(
            TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)),
            np.zeros(0, dtype=np.int64),
            0,
        )
    coords = grid.vertex_coords(active.edge_vertex)
    axis = active.edge_axis
    b_ax = (axis + 1) % 3
    c_ax = (axis + 2) % 3
    forward = active.v_in == active.edge_vertex

    ring = np.where(forward[:, None, None], _RING_FWD[None], _RING_REV[None])
    cell_coords = np.repeat(coords[:, None, :], 4, axis=1)
    rows = np.arange(k)
    cell_coords[rows[:, None], np.arange(4)[None, :], b_ax[:, None]] += ring[:, :, 0]
    cell_coords[rows[:, None], np.arange(4)[None, :], c_ax[:, None]] += ring[:, :, 1]
    valid = ((cell_coords >= 0) & (cell_coords < grid.resolution)).all(axis=(1, 2))
    n_skipped = int((~valid).sum())

    erows = np.nonzero(valid)[0]
    cells = grid.cell_id(cell_coords[erows])  # (E, 4)
    pids = partitions.partition_of(
        cells.reshape(-1), np.repeat(active.edge_key[erows], 4)
    ).reshape(-1, 4)

    quad = positions[pids]  # (E, 4, 3)
    p_vin = grid.vertex_positions(active.v_in[erows])
    p_vout = grid.vertex_positions(active.v_out[erows])

    if split_mode == "ic":
        conc = _concavity(quad, p_vin, p_vout)
        case1 = ~(conc[:, 1] | conc[:, 3])
        case2 = ~case1 & ~(conc[:, 0] | conc[:, 2])
        case3 = ~case1 & ~case2
    elif split_mode == "mdc":
        case1 = np.ones(len(erows), dtype=bool)
        case2 = np.zeros(len(erows), dtype=bool)
        case3 = case2.copy()
    else:
        raise ValueError(f"unknown split mode {split_mode!r}")
    cases = np.where(case1, CASE_DIAG_13, np.where(case2, CASE_DIAG_24, CASE_FAN))

    n_parts = len(partitions)
    fan_rows = np.nonzero(case3)[0]
    fan_vertex = n_parts + np.arange(len(fan_rows))
    fan_vertex_of_row = np.full(len(erows), -1, dtype=np.int64)
    fan_vertex_of_row[fan_rows] = fan_vertex

    tri_count = np.where(case3, 4, 2)
    offsets = np.concatenate([[0], np.cumsum(tri_count)])
    triangles = np.empty((offsets[-1], 3), dtype=np.int64)

    r1 = np.nonzero(case1)[0]
    o1 = offsets[r1]
    triangles[o1] = pids[r1][:, [0, 1, 2]]
    triangles[o1 + 1] = pids[r1][:, [0, 2, 3]]
    r2 = np.nonzero(case2)[0]
    o2 = offsets[r2]
    triangles[o2] = pids[r2][:, [0, 1, 3]]
    triangles[o2 + 1] = pids[r2][:, [1, 2, 3]]
    r3 = fan_rows
    o3 = offsets[r3]
    fv = fan_vertex_of_row[r3]
    for j in range(4):
        tri = np.stack([fv, pids[r3][:, j], pids[r3][:, (j + 1) % 4]], axis=1)
        triangles[o3 + j] = tri

    vertices = np.concatenate([positions, point1d.position[erows[fan_rows]]], axis=0)
    kind = np.concatenate(
        [np.zeros(n_parts, dtype=np.int64), np.ones(len(fan_rows), dtype=np.int64)]
    )
    ref = np.concatenate(
        [
            np.stack([partitions.cell_ids, partitions.partition_index], axis=1),
            np.stack(
                [
                    active.edge_key[erows[fan_rows]],
                    np.full(len(fan_rows), -1, dtype=np.int64),
                ],
                axis=1,
            ),
        ],
        axis=0,
    )

    # Drop partition vertices never referenced (possible on open boundaries).
    used = np.zeros(len(vertices), dtype=bool)
    used[triangles.reshape(-1)] = True
    if not used.all():
        remap = -np.ones(len(vertices), dtype=np.int64)
        remap[used] = np.arange(int(used.sum()))
        vertices = vertices[used]
        kind = kind[used]
        ref = ref[used]
        triangles = remap[triangles]

    mesh = TriangleMesh(vertices, triangles, provenance_kind=kind, provenance_ref=ref)
    return PolygonizeResult(mesh=mesh, split_cases=cases, skipped_boundary_edges=n_skipped)


def _edge_sort_key(tris):
    """Undirected edge keys (3T, 2) plus the owning triangle and slot."""
    t = len(tris)
    edges = np.stack(
        [tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]], axis=1
    ).reshape(-1, 2)
    owner = np.repeat(np.arange(t), 3)
    lo = edges.min(axis=1)
    hi = edges.max(axis=1)
    direction = edges[:, 0] < edges[:, 1]
    return lo, hi, owner, direction


def _pair_fan_triangles(order, forward):
    """Pair >2 triangles around an edge into sheets.

    ``order`` lists triangle slots sorted by dihedral angle; ``forward``
    says whether each traverses the edge low-to-high.  Adjacent pairs with
    opposite traversal are preferred (consistent orientation across a
    manifold edge); otherwise plain angular pairing is used.
    """
    n = len(order)
    start_candidates = [0, 1] if n % 2 == 0 else [0]
    for start in start_candidates:
        pairs = [
            (order[(start + 2 * i) % n], order[(start + 2 * i + 1) % n])
            for i in range(n // 2)
        ]
        if all(forward[a] != forward[b] for a, b in pairs):
            return pairs
    return [(order[2 * i], order[2 * i + 1]) for i in range(n // 2)]


def repair_nonmanifold(mesh):
    """Duplicate vertices so that every fan is a single strip and every
    edge bounds at most two triangles; geometry is unchanged.

    Non-manifold edges are first paired into sheets by dihedral angle; a
    vertex whose incident triangles then fall apart into several components
    (connected through shared, sheet-respecting edges) is copied once per
    extra component.
    """
    tris = mesh.triangles.copy()
    verts = mesh.vertices
    if len(tris) == 0:
        return mesh

    for _ in range(4):
        lo, hi, owner, direction = _edge_sort_key(tris)
        key = lo * (len(verts) + 1) + hi
        sort = np.argsort(key, kind="stable")
        key_s = key[sort]
        boundaries = np.nonzero(np.diff(key_s))[0] + 1
        groups = np.split(sort, boundaries)

        # Allowed adjacency across each edge: all pairs on 2-edges, sheet
        # pairs on over-populated edges.
        allowed = {}
        over_edges = False
        for g in groups:
            if len(g) <= 2:
                continue
            over_edges = True
            a, b = int(lo[g[0]]), int(hi[g[0]])
            axis = verts[b] - verts[a]
            axis = axis / (np.linalg.norm(axis) or 1.0)
            angles = []
            for slot in g:
                t = owner[slot]
                other = [v for v in tris[t] if v != a and v != b][0]
                rel = verts[other] - verts[a]
                rel = rel - axis * (rel @ axis)
                angles.append(rel)
            ref = angles[0]
            ref_n = np.linalg.norm(ref) or 1.0
            ref = ref / ref_n
            perp = np.cross(axis, ref)
            theta = [
                float(np.arctan2(r @ perp, r @ ref)) for r in angles
            ]
            order = np.argsort(theta, kind="stable")
            fwd = [bool(direction[slot]) for slot in g]
            pairs = _pair_fan_triangles(list(order), fwd)
            allowed[(a, b)] = {
                frozenset((int(owner[g[i]]), int(owner[g[j]]))) for i, j in pairs
            }

        # Per-vertex fan components with union-find over incident triangles.
        v_owner = tris.reshape(-1)
        v_sort = np.argsort(v_owner, kind="stable")
        v_bounds = np.nonzero(np.diff(v_owner[v_sort]))[0] + 1
        v_groups = np.split(v_sort, v_bounds)

        new_rows = []
        next_vid = len(verts)
        append_coords = []
        for g in v_groups:
            vid = int(v_owner[g[0]])
            tlist = sorted({int(s // 3) for s in g})
            if len(tlist) <= 1:
                continue
            parent = {t: t for t in tlist}

            def find(x):
                while parent[x] != x:
                    parent[x] = parent[parent[x]]
                    x = parent[x]
                return x

            edge_map = {}
            for t in tlist:
                for v in tris[t]:
                    if v == vid:
                        continue
                    e = (min(vid, int(v)), max(vid, int(v)))
                    edge_map.setdefault(e, []).append(t)
            for e, ts in edge_map.items():
                if len(ts) == 2 and e not in allowed:
                    ra, rb = find(ts[0]), find(ts[1])
                    if ra != rb:
                        parent[ra] = rb
                elif e in allowed:
                    for pair in allowed[e]:
                        pa, pb = tuple(pair)
                        if pa in parent and pb in parent:
                            ra, rb = find(pa), find(pb)
                            if ra != rb:
                                parent[ra] = rb
            comps = {}
            for t in tlist:
                comps.setdefault(find(t), []).append(t)
            if len(comps) <= 1:
                continue
            ordered = sorted(comps.values(), key=lambda ts: min(ts))
            for extra in ordered[1:]:
                append_coords.append(verts[vid])
                for t in extra:
                    new_rows.append((t, vid, next_vid))
                next_vid += 1

        if not new_rows and not over_edges:
            break
        if not new_rows:
            break
        for t, old, new in new_rows:
            tris[t][tris[t] == old] = new
        verts = np.concatenate([verts, np.array(append_coords)], axis=0)

    kind = mesh.provenance_kind
    ref = mesh.provenance_ref
    if kind is not None and len(verts) > len(kind):
        extra = len(verts) - len(kind)
        kind = np.concatenate([kind, np.full(extra, 2, dtype=np.int64)])
        ref = np.concatenate([ref, np.full((extra, 2), -1, dtype=np.int64)])
    return TriangleMesh(verts, tris, provenance_kind=kind, provenance_ref=ref)
