"""Occupancy fields: analytic primitives, CSG trees, voxel volumes, winding
numbers from meshes, and logistic smoothing of signed distances.

A field maps batches of 3D points to real values (``eval_raw``); the binary
label is 1 where the raw value exceeds ``iso_level``.  Values exactly at the
iso level are labeled outside.  Fields are immutable after construction and
safe to evaluate concurrently.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

FOUR_PI = 4.0 * math.pi


class SurfaceCoincidenceError(ValueError):
    """Raised when a winding-number query lies exactly on a triangle."""


def _as_points(points):
    pts = np.asarray(points, dtype=np.float64)
    squeeze = pts.ndim == 1
    if squeeze:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got shape {pts.shape}")
    return pts, squeeze


def eval_labels(field, points):
    """Binary inside/outside labels for a batch of points.

    Raises ValueError (with the offending index) on non-finite input.
    Ties at the iso level are labeled outside.
    """
    pts, squeeze = _as_points(points)
    finite = np.isfinite(pts).all(axis=1)
    if not finite.all():
        idx = int(np.argmax(~finite))
        raise ValueError(f"non-finite query point at index {idx}")
    raw = np.asarray(field.eval_raw(pts), dtype=np.float64)
    labels = (raw > field.iso_level).astype(np.uint8)
    return labels[0] if squeeze else labels


class OccupancyField:
    """Base class: a pure, deterministic point->value function."""

    iso_level: float = 0.5
    continuous: bool = False

    def eval_raw(self, points):
        raise NotImplementedError

    def labels(self, points):
        return eval_labels(self, points)


class AnalyticField(OccupancyField):
    """Field backed by an exact signed distance (negative inside)."""

    def signed_distance(self, points):
        raise NotImplementedError

    def eval_raw(self, points):
        pts, _ = _as_points(points)
        return (self.signed_distance(pts) < 0.0).astype(np.float64)


class SphereField(AnalyticField):
    def __init__(self, center, radius):
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = float(radius)

    def signed_distance(self, points):
        pts, _ = _as_points(points)
        return np.linalg.norm(pts - self.center, axis=1) - self.radius


class BoxField(AnalyticField):
    """Axis-aligned box, optionally rotated about its center."""

    def __init__(self, center, half_extents, rotation=None):
        self.center = np.asarray(center, dtype=np.float64)
        self.half_extents = np.asarray(half_extents, dtype=np.float64)
        self.rotation = None if rotation is None else np.asarray(rotation, dtype=np.float64)

    def corners(self):
        signs = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
            dtype=np.float64,
        )
        local = signs * self.half_extents
        if self.rotation is not None:
            local = local @ self.rotation.T
        return self.center + local

    def signed_distance(self, points):
        pts, _ = _as_points(points)
        local = pts - self.center
        if self.rotation is not None:
            local = local @ self.rotation  # R^T applied row-wise
        q = np.abs(local) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside


class TorusField(AnalyticField):
    """Torus around the z axis through ``center``."""

    def __init__(self, center, major_radius, minor_radius):
        self.center = np.asarray(center, dtype=np.float64)
        self.major_radius = float(major_radius)
        self.minor_radius = float(minor_radius)

    def signed_distance(self, points):
        pts, _ = _as_points(points)
        local = pts - self.center
        ring = np.hypot(local[:, 0], local[:, 1]) - self.major_radius
        return np.hypot(ring, local[:, 2]) - self.minor_radius


class PlaneField(AnalyticField):
    """Half-space; inside is the side opposite the normal."""

    def __init__(self, point, normal):
        self.point = np.asarray(point, dtype=np.float64)
        n = np.asarray(normal, dtype=np.float64)
        self.normal = n / np.linalg.norm(n)

    def signed_distance(self, points):
        pts, _ = _as_points(points)
        return (pts - self.point) @ self.normal


_CSG_OPS = ("union", "intersection", "difference", "complement", "transform")


class CsgField(OccupancyField):
    """Boolean combination of fields; labels follow max/min set algebra.

    ``signed_distance`` composes min/max of child distances.  The resulting
    values are exact in sign (the zero level is the true boundary) but only a
    lower bound in magnitude away from it, which is all the oracles need.
    """

    def __init__(self, op, children, rotation=None, translation=None):
        if op not in _CSG_OPS:
            raise ValueError(f"unknown CSG op {op!r}")
        children = tuple(children)
        if op == "complement" and len(children) != 1:
            raise ValueError("complement takes exactly one child")
        if op == "difference" and len(children) != 2:
            raise ValueError("difference takes exactly two children")
        if op == "transform" and len(children) != 1:
            raise ValueError("transform takes exactly one child")
        if op in ("union", "intersection") and len(children) < 2:
            raise ValueError(f"{op} takes at least two children")
        self.op = op
        self.children = children
        self.rotation = None if rotation is None else np.asarray(rotation, dtype=np.float64)
        self.translation = (
            np.zeros(3) if translation is None else np.asarray(translation, dtype=np.float64)
        )

    @property
    def continuous(self):
        return all(c.continuous for c in self.children)

    def _local_points(self, pts):
        local = pts - self.translation
        if self.rotation is not None:
            local = local @ self.rotation  # rows * R == R^T p
        return local

    def eval_raw(self, points):
        pts, _ = _as_points(points)
        if self.op == "transform":
            return self.children[0].eval_raw(self._local_points(pts))
        raws = [np.asarray(c.eval_raw(pts), dtype=np.float64) for c in self.children]
        if self.op == "union":
            out = raws[0]
            for r in raws[1:]:
                out = np.maximum(out, r)
            return out
        if self.op == "intersection":
            out = raws[0]
            for r in raws[1:]:
                out = np.minimum(out, r)
            return out
        if self.op == "difference":
            return np.minimum(raws[0], 1.0 - raws[1])
        return 1.0 - raws[0]  # complement

    def signed_distance(self, points):
        pts, _ = _as_points(points)
        if self.op == "transform":
            return self.children[0].signed_distance(self._local_points(pts))
        ds = [c.signed_distance(pts) for c in self.children]
        if self.op == "union":
            out = ds[0]
            for d in ds[1:]:
                out = np.minimum(out, d)
            return out
        if self.op == "intersection":
            out = ds[0]
            for d in ds[1:]:
                out = np.maximum(out, d)
            return out
        if self.op == "difference":
            return np.maximum(ds[0], -ds[1])
        return -ds[0]


class SmoothedOccupancy(OccupancyField):
    """Logistic of an exact signed distance: raw = 1 / (1 + exp(k d)).

    The 0.5 level coincides with the zero level set of the base distance.
    ``sharpness`` has units of one over length.
    """

    continuous = True

    def __init__(self, base, sharpness):
        if not hasattr(base, "signed_distance"):
            raise TypeError("SmoothedOccupancy requires a base with signed_distance")
        self.base = base
        self.sharpness = float(sharpness)

    def signed_distance(self, points):
        return self.base.signed_distance(points)

    def eval_raw(self, points):
        pts, _ = _as_points(points)
        kd = np.clip(self.sharpness * self.base.signed_distance(pts), -500.0, 500.0)
        return 1.0 / (1.0 + np.exp(kd))


class VoxelField(OccupancyField):
    """Trilinear interpolation of a dense value grid; zero outside."""

    continuous = True

    def __init__(self, origin, spacing, values):
        self.origin = np.asarray(origin, dtype=np.float64)
        self.spacing = np.asarray(spacing, dtype=np.float64)
        self.values = np.asarray(values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError("voxel values must be a 3D array")

    def eval_raw(self, points):
        pts, _ = _as_points(points)
        shape = np.array(self.values.shape)
        g = (pts - self.origin) / self.spacing
        inside = (g >= 0.0).all(axis=1) & (g <= shape - 1).all(axis=1)
        out = np.zeros(len(pts))
        if not inside.any():
            return out
        g = g[inside]
        i0 = np.clip(np.floor(g).astype(np.int64), 0, shape - 2)
        f = g - i0
        v = self.values
        ix, iy, iz = i0[:, 0], i0[:, 1], i0[:, 2]
        fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
        c00 = v[ix, iy, iz] * (1 - fx) + v[ix + 1, iy, iz] * fx
        c10 = v[ix, iy + 1, iz] * (1 - fx) + v[ix + 1, iy + 1, iz] * fx
        c01 = v[ix, iy, iz + 1] * (1 - fx) + v[ix + 1, iy, iz + 1] * fx
        c11 = v[ix, iy + 1, iz + 1] * (1 - fx) + v[ix + 1, iy + 1, iz + 1] * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        out[inside] = c0 * (1 - fz) + c1 * fz
        return out


def _winding_batch(vertices, triangles, points, on_surface="raise", chunk=4096):
    """Generalized winding numbers via per-triangle signed solid angles.

    Exact Van Oosterom-Strackee form, O(T) per query.  ``on_surface`` is
    either "raise" (strict) or "perturb" (nudge offending queries off the
    surface deterministically and retry).
    """
    verts = np.asarray(vertices, dtype=np.float64)
    tris = np.asarray(triangles, dtype=np.int64)
    if len(tris) == 0:
        raise ValueError("winding number of an empty mesh is undefined")
    pts = np.array(points, dtype=np.float64)
    ta, tb, tc = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    eab = tb - ta
    eac = tc - ta
    n = np.cross(eab, eac)
    nlen = np.linalg.norm(n, axis=1)
    ok = nlen > 0
    nhat = np.zeros_like(n)
    nhat[ok] = n[ok] / nlen[ok, None]
    # barycentric precomputation, used only on the rare near-plane path
    d00 = np.einsum("tk,tk->t", eab, eab)
    d01 = np.einsum("tk,tk->t", eab, eac)
    d11 = np.einsum("tk,tk->t", eac, eac)
    denom_b = d00 * d11 - d01 * d01
    denom_b = np.where(np.abs(denom_b) < 1e-300, 1.0, denom_b)
    scale = float(np.max(np.ptp(verts, axis=0))) or 1.0
    nudge = 1e-9 * scale * np.array([1.0, 1.0, 1.0]) / math.sqrt(3.0)

    out = np.empty(len(pts))
    for start in range(0, len(pts), chunk):
        sl = slice(start, min(start + chunk, len(pts)))
        p = pts[sl]
        for attempt in range(8):
            a = ta[None, :, :] - p[:, None, :]
            b = tb[None, :, :] - p[:, None, :]
            c = tc[None, :, :] - p[:, None, :]
            la = np.linalg.norm(a, axis=2)
            lb = np.linalg.norm(b, axis=2)
            lc = np.linalg.norm(c, axis=2)
            num = np.einsum("ptk,ptk->pt", a, np.cross(b, c))
            den = (
                la * lb * lc
                + np.einsum("ptk,ptk->pt", a, b) * lc
                + np.einsum("ptk,ptk->pt", b, c) * la
                + np.einsum("ptk,ptk->pt", c, a) * lb
            )
            # Surface coincidence: within 1e-12 of the supporting plane and
            # inside the triangle (boundary included).
            plane_d = np.abs(np.einsum("ptk,tk->pt", a, nhat))
            near = plane_d <= 1e-12
            near &= ok[None, :]
            if near.any():
                pi, ti = np.nonzero(near)
                ap = p[pi] - ta[ti]
                d20 = np.einsum("ik,ik->i", ap, eab[ti])
                d21 = np.einsum("ik,ik->i", ap, eac[ti])
                v = (d11[ti] * d20 - d01[ti] * d21) / denom_b[ti]
                w = (d00[ti] * d21 - d01[ti] * d20) / denom_b[ti]
                eps = 1e-12
                hit = (v >= -eps) & (w >= -eps) & (v + w <= 1 + eps)
                if hit.any():
                    if on_surface == "raise":
                        k = int(np.argmax(hit))
                        raise SurfaceCoincidenceError(
                            f"query point {start + pi[k]} lies on triangle {ti[k]}"
                        )
                    bad = np.unique(pi[hit])
                    p = p.copy()
                    p[bad] += nudge * (attempt + 1)
                    continue
            omega = 2.0 * np.arctan2(num, den)
            out[sl] = omega.sum(axis=1) / FOUR_PI
            break
        else:
            raise SurfaceCoincidenceError("could not perturb queries off the surface")
    return out


def winding_number(vertices, triangles, point):
    """Signed solid angle sum over the mesh divided by 4*pi, for one point.

    Raises SurfaceCoincidenceError if the point lies on a triangle (within
    1e-12 of its plane and inside it); the caller is expected to perturb.
    """
    pts, _ = _as_points(point)
    return float(_winding_batch(vertices, triangles, pts, on_surface="raise")[0])


class MeshWindingField(OccupancyField):
    """Occupancy from a triangle mesh: inside where the winding number > 1/2.

    Queries that land exactly on the surface are perturbed deterministically.
    """

    continuous = True

    def __init__(self, vertices, triangles):
        self.vertices = np.asarray(vertices, dtype=np.float64)
        self.triangles = np.asarray(triangles, dtype=np.int64)
        if len(self.triangles) == 0:
            raise ValueError("mesh field needs at least one triangle")

    def eval_raw(self, points):
        pts, _ = _as_points(points)
        return _winding_batch(self.vertices, self.triangles, pts, on_surface="perturb")


def rotation_from_euler(rx_deg, ry_deg, rz_deg):
    """Rotation matrix R = Rz @ Ry @ Rx from extrinsic xyz Euler angles."""
    rx, ry, rz = np.radians([rx_deg, ry_deg, rz_deg])
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    cz, sz = math.cos(rz), math.sin(rz)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return mz @ my @ mx


def field_from_dict(spec, base_dir=None):
    """Build a field from a scene dictionary (see the JSON scene schema)."""
    if not isinstance(spec, dict) or "type" not in spec:
        raise ValueError("field spec must be a dict with a 'type' key")
    kind = spec["type"]
    if kind == "sphere":
        return SphereField(spec["center"], spec["radius"])
    if kind == "box":
        rot = None
        if "rotation_euler_deg" in spec:
            rot = rotation_from_euler(*spec["rotation_euler_deg"])
        return BoxField(spec["center"], spec["half_extents"], rotation=rot)
    if kind == "torus":
        return TorusField(spec["center"], spec["major_radius"], spec["minor_radius"])
    if kind == "plane":
        return PlaneField(spec["point"], spec["normal"])
    if kind == "csg":
        rot = None
        if "rotation_euler_deg" in spec:
            rot = rotation_from_euler(*spec["rotation_euler_deg"])
        children = [field_from_dict(c, base_dir) for c in spec["children"]]
        return CsgField(
            spec["op"], children, rotation=rot, translation=spec.get("translation")
        )
    if kind == "mesh":
        from .meshio import import_obj

        path = Path(spec["path"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        mesh = import_obj(path)
        return MeshWindingField(mesh.vertices, mesh.triangles)
    if kind == "voxels":
        if "path" in spec:
            path = Path(spec["path"])
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            values = np.load(path)
        else:
            values = np.asarray(spec["values"], dtype=np.float64)
        return VoxelField(spec.get("origin", (0, 0, 0)), spec.get("spacing", (1, 1, 1)), values)
    raise ValueError(f"unknown field type {kind!r}")


class Scene:
    """Parsed scene file: a field plus optional smoothing and domain box."""

    def __init__(self, field, smooth_k=None, domain_lo=(0, 0, 0), domain_hi=(1, 1, 1)):
        self.field = field
        self.smooth_k = smooth_k
        self.domain_lo = np.asarray(domain_lo, dtype=np.float64)
        self.domain_hi = np.asarray(domain_hi, dtype=np.float64)

    def resolve_field(self, cell_size):
        """Apply smoothing; 'auto' picks sharpness 2 / cell_size."""
        if self.smooth_k is None:
            return self.field
        k = self.smooth_k
        if k == "auto":
            k = 2.0 / float(np.min(cell_size))
        return SmoothedOccupancy(self.field, k)


def load_scene(path):
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    if "field" not in doc:
        raise ValueError(f"{path}: scene file lacks a 'field' entry")
    field = field_from_dict(doc["field"], base_dir=path.parent)
    domain = doc.get("domain", {})
    return Scene(
        field,
        smooth_k=doc.get("smooth_k"),
        domain_lo=domain.get("lo", (0, 0, 0)),
        domain_hi=domain.get("hi", (1, 1, 1)),
    )
