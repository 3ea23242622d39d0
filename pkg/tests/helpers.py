"""Shared fixtures: canonical test fields and a slot-routed composite field
that lets one batched search exercise many independent scenarios at once."""

import numpy as np

from occmesh import BoxField, CsgField, OccupancyField, PlaneField, SphereField, TorusField
from occmesh.fields import rotation_from_euler

ROT_30_30 = rotation_from_euler(30, 30, 0)

# The rotated box is positioned so that at R=64 every analytic corner lies
# in a cell with crossing edges; corner recovery is undefined for features
# that cross no grid edge.
BOX_CENTER = (0.5033, 0.4987, 0.4942)
BOX_HALF = (0.2452, 0.1976, 0.1469)


def sphere_field():
    return SphereField((0.5, 0.5, 0.5), 0.3)


def torus_field():
    return TorusField((0.5, 0.5, 0.5), 0.27, 0.12)


def rotated_box_field():
    return BoxField(BOX_CENTER, BOX_HALF, rotation=ROT_30_30)


def csg_union_field():
    return CsgField(
        "union",
        [
            SphereField((0.42, 0.5, 0.5), 0.22),
            BoxField((0.58, 0.5, 0.5), (0.18, 0.14, 0.14)),
        ],
    )


def csg_difference_field():
    return CsgField(
        "difference",
        [
            BoxField((0.5, 0.5, 0.46), (0.22, 0.18, 0.18)),
            SphereField((0.5, 0.5, 0.72), 0.16),
        ],
    )


VALIDATION_FIELDS = [
    ("sphere", sphere_field),
    ("torus", torus_field),
    ("rotated_box", rotated_box_field),
    ("csg_union", csg_union_field),
    ("csg_difference", csg_difference_field),
]


class SlotField(OccupancyField):
    """Routes each query to a sub-field by the integer part of x / spacing.

    Slot k owns x in [k * spacing, (k+1) * spacing); sub-fields are queried
    in local coordinates with the slot offset removed.  This lets a single
    lock-step batch drive many independent single-face scenarios.
    """

    def __init__(self, fields, spacing):
        self.fields = list(fields)
        self.spacing = float(spacing)

    def eval_raw(self, points):
        pts = np.asarray(points, dtype=np.float64)
        slot = np.clip(
            np.floor(pts[:, 0] / self.spacing).astype(np.int64), 0, len(self.fields) - 1
        )
        out = np.empty(len(pts))
        local = pts.copy()
        local[:, 0] -= slot * self.spacing
        for k in np.unique(slot):
            sel = slot == k
            out[sel] = self.fields[k].eval_raw(local[sel])
        return out


def in_plane_wedge(apex_uv, dir1_uv, dir2_uv, inside_op="intersection"):
    """Occupancy whose boundary, restricted to any z plane, is two rays from
    ``apex_uv`` along the given directions (all in xy coordinates)."""

    def half_plane(apex, d):
        # inside on the left of the ray direction
        normal = np.array([-d[1], d[0], 0.0])
        return PlaneField((apex[0], apex[1], 0.0), normal)

    h1 = half_plane(apex_uv, dir1_uv)
    h2 = half_plane(apex_uv, dir2_uv)
    return CsgField(inside_op, [h1, h2])
