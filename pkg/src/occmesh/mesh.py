"""Triangle mesh data model, validation, sampling, and distance queries."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.spatial import cKDTree


@dataclass
class TriangleMesh:
    """Indexed triangle mesh with optional per-vertex provenance.

    Provenance kind: 0 = cell partition point, 1 = edge point, 2 = repair
    duplicate; ref carries (cell id, partition index) or (edge key, -1).
    """

    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (T, 3) int64
    provenance_kind: np.ndarray | None = None
    provenance_ref: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles):
            if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
                raise ValueError("triangle index out of range")
            same = (
                (self.triangles[:, 0] == self.triangles[:, 1])
                | (self.triangles[:, 1] == self.triangles[:, 2])
                | (self.triangles[:, 2] == self.triangles[:, 0])
            )
            if same.any():
                raise ValueError("triangle with repeated vertex index")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def corners(self):
        return self.vertices[self.triangles]  # (T, 3, 3)

    def face_normals(self, normalized=True):
        c = self.corners()
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        if normalized:
            lens = np.linalg.norm(n, axis=1, keepdims=True)
            n = np.divide(n, lens, out=np.zeros_like(n), where=lens > 0)
        return n

    def areas(self):
        c = self.corners()
        return 0.5 * np.linalg.norm(
            np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1
        )

    def undirected_edges(self):
        e = np.concatenate(
            [self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]]
        )
        return np.sort(e, axis=1)

    def euler_characteristic(self):
        if len(self.triangles) == 0:
            return 0
        n_edges = len(np.unique(self.undirected_edges(), axis=0))
        return self.n_vertices - n_edges + self.n_triangles

    def translated(self, offset):
        return TriangleMesh(self.vertices + np.asarray(offset), self.triangles.copy())


@dataclass
class ManifoldReport:
    manifold: bool
    nonmanifold_edges: list
    pinched_vertices: list
    boundary_edges: int
    isolated_vertices: list

    def __bool__(self):
        return self.manifold


def validate_manifold(mesh):
    """Check edge incidence (at most two triangles) and fan connectivity.

    A vertex is pinched when its incident triangles do not form one
    edge-connected component.  Returns a report listing offenders.
    """
    tris = mesh.triangles
    if len(tris) == 0:
        return ManifoldReport(True, [], [], 0, [])
    edges = mesh.undirected_edges()
    keys = edges[:, 0] * (mesh.n_vertices + 1) + edges[:, 1]
    uniq, counts = np.unique(keys, return_counts=True)
    bad_edges = uniq[counts > 2]
    nm_edges = [
        (int(k // (mesh.n_vertices + 1)), int(k % (mesh.n_vertices + 1))) for k in bad_edges
    ]
    boundary = int((counts == 1).sum())

    # Fan connectivity per vertex: union triangles sharing an edge at it.
    flat = tris.reshape(-1)
    order = np.argsort(flat, kind="stable")
    sorted_v = flat[order]
    bounds = np.nonzero(np.diff(sorted_v))[0] + 1
    groups = np.split(order, bounds)
    pinched = []
    for g in groups:
        vid = int(flat[g[0]])
        tlist = np.unique(g // 3)
        if len(tlist) <= 1:
            continue
        index = {int(t): i for i, t in enumerate(tlist)}
        parent = list(range(len(tlist)))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        neighbor = {}
        for t in tlist:
            for v in tris[t]:
                v = int(v)
                if v == vid:
                    continue
                if v in neighbor:
                    ra, rb = find(neighbor[v]), find(index[int(t)])
                    if ra != rb:
                        parent[ra] = rb
                else:
                    neighbor[v] = index[int(t)]
        roots = {find(i) for i in range(len(tlist))}
        if len(roots) > 1:
            pinched.append(vid)

    used = np.zeros(mesh.n_vertices, dtype=bool)
    used[flat] = True
    isolated = np.nonzero(~used)[0].tolist()
    ok = not nm_edges and not pinched
    return ManifoldReport(ok, nm_edges, pinched, boundary, isolated)


def _closest_point_on_triangles(p, a, b, c):
    """Exact closest point on each triangle (Ericson's region walk)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def assign(mask, value):
        nonlocal done
        m = mask & ~done
        out[m] = value[m]
        done |= m

    eps = 1e-300
    assign((d1 <= 0) & (d2 <= 0), a)
    assign((d3 >= 0) & (d4 <= d3), b)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = d1 / np.where(np.abs(d1 - d3) < eps, 1.0, d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + ab * np.clip(t_ab, 0, 1)[:, None])
        assign((d6 >= 0) & (d5 <= d6), c)
        t_ac = d2 / np.where(np.abs(d2 - d6) < eps, 1.0, d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + ac * np.clip(t_ac, 0, 1)[:, None])
        den_bc = (d4 - d3) + (d5 - d6)
        t_bc = (d4 - d3) / np.where(np.abs(den_bc) < eps, 1.0, den_bc)
        assign(
            (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),
            b + (c - b) * np.clip(t_bc, 0, 1)[:, None],
        )
        denom = va + vb + vc
        denom = np.where(np.abs(denom) < eps, 1.0, denom)
        v = vb / denom
        w = vc / denom
        assign(np.ones(len(p), dtype=bool), a + ab * v[:, None] + ac * w[:, None])
    return out


class MeshDistanceIndex:
    """Exact point-to-mesh distances with a centroid KD-tree prune.

    A k-nearest centroid pass gives an upper bound on the true distance;
    every triangle whose centroid lies within that bound plus the largest
    triangle radius is then tested exactly.
    """

    def __init__(self, mesh):
        if mesh.n_triangles == 0:
            raise ValueError("distance index needs a non-empty mesh")
        self.mesh = mesh
        self.corners = mesh.corners()
        self.centroids = self.corners.mean(axis=1)
        self.radii = np.linalg.norm(
            self.corners - self.centroids[:, None, :], axis=2
        ).max(axis=1)
        self.r_max = float(self.radii.max())
        self.tree = cKDTree(self.centroids)

    def _exact(self, points, tri_idx):
        tri = self.corners[tri_idx]
        cp = _closest_point_on_triangles(points, tri[:, 0], tri[:, 1], tri[:, 2])
        return np.linalg.norm(cp - points, axis=1), cp

    def query(self, points, chunk=20000):
        """Distance, closest triangle index, and closest point per query."""
        points = np.asarray(points, dtype=np.float64)
        n = len(points)
        dist = np.empty(n)
        tri_out = np.empty(n, dtype=np.int64)
        cp_out = np.empty((n, 3))
        k = min(8, self.mesh.n_triangles)
        for s in range(0, n, chunk):
            sl = slice(s, min(s + chunk, n))
            pts = points[sl]
            _, near = self.tree.query(pts, k=k)
            near = np.atleast_2d(near)
            if near.ndim == 1:
                near = near[:, None]
            best_d = np.full(len(pts), np.inf)
            best_t = np.zeros(len(pts), dtype=np.int64)
            best_cp = np.zeros((len(pts), 3))
            for col in range(near.shape[1]):
                d, cp = self._exact(pts, near[:, col])
                better = d < best_d
                best_d[better] = d[better]
                best_t[better] = near[better, col]
                best_cp[better] = cp[better]
            radius = best_d + self.r_max + 1e-12
            balls = self.tree.query_ball_point(pts, radius)
            lengths = np.array([len(b) for b in balls])
            if lengths.sum():
                flat_t = np.concatenate([np.asarray(b, dtype=np.int64) for b in balls])
                flat_q = np.repeat(np.arange(len(pts)), lengths)
                d, cp = self._exact(pts[flat_q], flat_t)
                order = np.lexsort((d, flat_q))
                flat_q_s = flat_q[order]
                firsts = np.nonzero(np.diff(flat_q_s, prepend=-1))[0]
                sel = order[firsts]
                qs = flat_q[sel]
                improved = d[sel] < best_d[qs]
                best_d[qs[improved]] = d[sel][improved]
                best_t[qs[improved]] = flat_t[sel][improved]
                best_cp[qs[improved]] = cp[sel][improved]
            dist[sl] = best_d
            tri_out[sl] = best_t
            cp_out[sl] = best_cp
        return dist, tri_out, cp_out


def sample_surface(mesh, n, seed=0, rng=None):
    """Area-weighted uniform surface samples with per-sample face normals.

    Deterministic for a fixed seed, mesh, and count.  Returns (points,
    normals, triangle indices).
    """
    if mesh.n_triangles == 0:
        raise ValueError("cannot sample an empty mesh")
    if n < 1:
        raise ValueError("sample count must be at least 1")
    rng = rng or np.random.default_rng(seed)
    areas = mesh.areas()
    total = areas.sum()
    if total <= 0:
        raise ValueError("mesh has zero total area")
    cum = np.cumsum(areas) / total
    idx = np.searchsorted(cum, rng.random(n), side="right")
    idx = np.minimum(idx, mesh.n_triangles - 1)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    c = mesh.corners()[idx]
    pts = c[:, 0] + u[:, None] * (c[:, 1] - c[:, 0]) + v[:, None] * (c[:, 2] - c[:, 0])
    normals = mesh.face_normals()[idx]
    return pts, normals, idx


def _tri_tri_cross(p_tri, q_tri, tol):
    """Vectorized non-coplanar triangle-pair overlap (interval test).

    Returns (crossing, coplanar); coplanar pairs need the 2D fallback.
    """
    p0, p1, p2 = p_tri[:, 0], p_tri[:, 1], p_tri[:, 2]
    q0, q1, q2 = q_tri[:, 0], q_tri[:, 1], q_tri[:, 2]
    n1 = np.cross(p1 - p0, p2 - p0)
    n2 = np.cross(q1 - q0, q2 - q0)
    dq = np.stack(
        [np.einsum("ij,ij->i", q - p0, n1) for q in (q0, q1, q2)], axis=1
    )
    dp = np.stack(
        [np.einsum("ij,ij->i", p - q0, n2) for p in (p0, p1, p2)], axis=1
    )
    scale1 = np.linalg.norm(n1, axis=1, keepdims=True)
    scale2 = np.linalg.norm(n2, axis=1, keepdims=True)
    tol_q = tol * np.maximum(scale1, 1e-300)
    tol_p = tol * np.maximum(scale2, 1e-300)
    sep = ((dq > tol_q).all(axis=1) | (dq < -tol_q).all(axis=1))
    sep |= (dp > tol_p).all(axis=1) | (dp < -tol_p).all(axis=1)
    coplanar = (np.abs(dq) <= tol_q).all(axis=1) & (np.abs(dp) <= tol_p).all(axis=1)
    active = ~sep & ~coplanar

    d = np.cross(n1, n2)
    axis = np.argmax(np.abs(d), axis=1)

    def interval(tri, dists, tol_arr):
        proj = np.take_along_axis(tri, axis[:, None, None], axis=2)[:, :, 0]
        s = np.where(dists > tol_arr, 1, -1)
        lo = np.full(len(tri), np.inf)
        hi = np.full(len(tri), -np.inf)
        for i in range(3):
            j = (i + 1) % 3
            cross_mask = s[:, i] * s[:, j] < 0
            di = dists[:, i]
            dj = dists[:, j]
            den = np.where(np.abs(di - dj) < 1e-300, 1.0, di - dj)
            t = proj[:, i] + (proj[:, j] - proj[:, i]) * (di / den)
            lo = np.where(cross_mask, np.minimum(lo, t), lo)
            hi = np.where(cross_mask, np.maximum(hi, t), hi)
        return lo, hi

    lo1, hi1 = interval(q_tri, dq, tol_q)
    lo2, hi2 = interval(p_tri, dp, tol_p)
    overlap = np.minimum(hi1, hi2) - np.maximum(lo1, lo2)
    crossing = active & (overlap > tol) & np.isfinite(overlap)
    return crossing, coplanar & ~sep


def _clip_polygon(poly, a, b):
    """Clip a 2D polygon against the left side of segment a->b."""
    out = []
    n = len(poly)
    for i in range(n):
        cur, nxt = poly[i], poly[(i + 1) % n]
        side_cur = (b[0] - a[0]) * (cur[1] - a[1]) - (b[1] - a[1]) * (cur[0] - a[0])
        side_nxt = (b[0] - a[0]) * (nxt[1] - a[1]) - (b[1] - a[1]) * (nxt[0] - a[0])
        if side_cur >= 0:
            out.append(cur)
        if side_cur * side_nxt < 0:
            t = side_cur / (side_cur - side_nxt)
            out.append(cur + t * (nxt - cur))
    return out


def _coplanar_overlap_area(p_tri, q_tri):
    n = np.cross(p_tri[1] - p_tri[0], p_tri[2] - p_tri[0])
    axis = int(np.argmax(np.abs(n)))
    keep = [i for i in range(3) if i != axis]
    a2 = [p[keep] for p in p_tri]
    b2 = [q[keep] for q in q_tri]
    if n[axis] < 0:
        a2 = a2[::-1]
    nb = np.cross(
        np.append(b2[1] - b2[0], 0.0), np.append(b2[2] - b2[0], 0.0)
    )[2]
    if nb < 0:
        b2 = b2[::-1]
    poly = b2
    for i in range(3):
        poly = _clip_polygon(poly, a2[i], a2[(i + 1) % 3])
        if len(poly) < 3:
            return 0.0
    area = 0.0
    for i in range(1, len(poly) - 1):
        area += 0.5 * abs(
            (poly[i][0] - poly[0][0]) * (poly[i + 1][1] - poly[0][1])
            - (poly[i + 1][0] - poly[0][0]) * (poly[i][1] - poly[0][1])
        )
    return area


def count_self_intersections(mesh, tolerance=1e-12, return_pairs=False):
    """Count triangle pairs with positive-measure intersection.

    Pairs sharing any vertex index are excluded, as are pairs involving a
    degenerate triangle (area below 1e-20 after normalizing the mesh into
    the unit box).  Broad phase is a uniform spatial hash on bounding
    boxes; the narrow phase is an exact interval test with the given
    tolerance, applied in normalized coordinates.
    """
    t = mesh.n_triangles
    if t < 2:
        return (0, []) if return_pairs else 0
    verts = mesh.vertices
    lo = verts.min(axis=0)
    extent = float((verts.max(axis=0) - lo).max()) or 1.0
    v = (verts - lo) / extent
    corners = v[mesh.triangles]
    areas = 0.5 * np.linalg.norm(
        np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]), axis=1
    )
    degenerate = areas < 1e-20

    bb_lo = corners.min(axis=1)
    bb_hi = corners.max(axis=1)
    span = float((bb_hi - bb_lo).max()) if t else 1.0
    cell = max(span * 1.0001, 1e-9)
    n_side = int(1.0 / cell) + 3

    keys = []
    tri_ids = []
    ilo = np.floor(bb_lo / cell).astype(np.int64)
    ihi = np.floor(bb_hi / cell).astype(np.int64)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                ix = np.where(dx, ihi[:, 0], ilo[:, 0])
                iy = np.where(dy, ihi[:, 1], ilo[:, 1])
                iz = np.where(dz, ihi[:, 2], ilo[:, 2])
                keys.append((ix * n_side + iy) * n_side + iz)
                tri_ids.append(np.arange(t))
    keys = np.concatenate(keys)
    tri_ids = np.concatenate(tri_ids)
    entry = np.unique(keys * t + tri_ids)
    keys = entry // t
    tri_ids = entry % t

    order = np.argsort(keys, kind="stable")
    keys_s = keys[order]
    tris_s = tri_ids[order]
    bounds = np.nonzero(np.diff(keys_s))[0] + 1
    groups = np.split(tris_s, bounds)
    pair_a, pair_b = [], []
    for g in groups:
        if len(g) < 2:
            continue
        ia, ib = np.triu_indices(len(g), k=1)
        pair_a.append(g[ia])
        pair_b.append(g[ib])
    if not pair_a:
        return (0, []) if return_pairs else 0
    pa = np.concatenate(pair_a)
    pb = np.concatenate(pair_b)
    swap = pa > pb
    pa2 = np.where(swap, pb, pa)
    pb2 = np.where(swap, pa, pb)
    uniq = np.unique(pa2 * t + pb2)
    pa = uniq // t
    pb = uniq % t

    ta = mesh.triangles[pa]
    tb = mesh.triangles[pb]
    shares = (ta[:, :, None] == tb[:, None, :]).any(axis=(1, 2))
    ok = ~shares & ~degenerate[pa] & ~degenerate[pb]
    pa, pb = pa[ok], pb[ok]
    if len(pa) == 0:
        return (0, []) if return_pairs else 0

    # AABB overlap reject before the exact test.
    overlap = (
        (bb_lo[pa] <= bb_hi[pb] + tolerance) & (bb_lo[pb] <= bb_hi[pa] + tolerance)
    ).all(axis=1)
    pa, pb = pa[overlap], pb[overlap]
    if len(pa) == 0:
        return (0, []) if return_pairs else 0

    crossing, coplanar = _tri_tri_cross(corners[pa], corners[pb], tolerance)
    hits = list(zip(pa[crossing].tolist(), pb[crossing].tolist()))
    for i in np.nonzero(coplanar)[0]:
        area = _coplanar_overlap_area(corners[pa[i]], corners[pb[i]])
        if area > tolerance:
            hits.append((int(pa[i]), int(pb[i])))
    hits.sort()
    return (len(hits), hits) if return_pairs else len(hits)


def icosphere(center=(0.0, 0.0, 0.0), radius=1.0, subdivisions=2):
    """Closed, consistently oriented sphere mesh from a subdivided icosahedron."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    tris = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}
        new_tris = []
        verts_list = list(verts)

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = np.array(verts_list[i]) + np.array(verts_list[j])
                m /= np.linalg.norm(m)
                cache[key] = len(verts_list)
                verts_list.append(tuple(m))
            return cache[key]

        for a, b, c in tris:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_tris += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        verts = verts_list
        tris = new_tris
    v = np.asarray(verts, dtype=np.float64) * radius + np.asarray(center, dtype=np.float64)
    return TriangleMesh(v, np.asarray(tris, dtype=np.int64))


def box_mesh(center, half_extents, rotation=None):
    """Closed 12-triangle box with outward orientation."""
    signs = np.array(
        [[x, y, z] for z in (-1, 1) for y in (-1, 1) for x in (-1, 1)], dtype=np.float64
    )
    local = signs * np.asarray(half_extents, dtype=np.float64)
    if rotation is not None:
        local = local @ np.asarray(rotation, dtype=np.float64).T
    verts = local + np.asarray(center, dtype=np.float64)
    # corner i = (x_bit, y_bit, z_bit) with x fastest
    quads = [
        (0, 2, 3, 1),  # z- (normal -z)
        (4, 5, 7, 6),  # z+
        (0, 1, 5, 4),  # y-
        (2, 6, 7, 3),  # y+
        (0, 4, 6, 2),  # x-
        (1, 3, 7, 5),  # x+
    ]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return TriangleMesh(verts, np.asarray(tris, dtype=np.int64))
