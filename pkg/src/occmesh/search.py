"""Query-driven point searches on crossing edges, rays, and grid faces.

All searches run lock-step: iteration k of every active element goes into a
single batched field evaluation, which fixes both the evaluation count and
the result bit-for-bit regardless of how the caller parallelizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

# Point2D status codes
STATUS_EXACT = 0
STATUS_MIDPOINT_FALLBACK = 1
STATUS_CLAMPED = 2
STATUS_RANGE_EXHAUSTED = 3

STATUS_NAMES = {
    STATUS_EXACT: "exact",
    STATUS_MIDPOINT_FALLBACK: "midpoint-fallback",
    STATUS_CLAMPED: "clamped",
    STATUS_RANGE_EXHAUSTED: "range-exhausted",
}


@dataclass(frozen=True)
class LineBudget:
    """Budget of one line-binary search: coarse samples, then bisection."""

    n_linear: int
    n_binary: int
    max_range_factor: float  # in units of the cell size


@dataclass(frozen=True)
class SearchBudget:
    """Evaluation budgets for the edge search and the two-stage face search.

    The defaults spend 15 evaluations on each crossing edge and
    (4+11) + 2*(3+12) = 45 evaluations per 2D point.
    """

    iters_1d: int = 15
    step1: LineBudget = dc_field(default_factory=lambda: LineBudget(4, 11, 0.8))
    step2: LineBudget = dc_field(
        default_factory=lambda: LineBudget(3, 12, math.sqrt(2.0) / 2.0)
    )

    @property
    def evals_per_2d_point(self):
        return (
            self.step1.n_linear
            + self.step1.n_binary
            + 2 * (self.step2.n_linear + self.step2.n_binary)
        )


@dataclass
class Point1DBatch:
    """Crossing points on edges: positions plus the parameter from v_in."""

    t: np.ndarray  # (K,) in (0, 1), measured from the inside endpoint
    position: np.ndarray  # (K, 3)
    p_in: np.ndarray  # (K, 3)
    p_out: np.ndarray  # (K, 3)


def find_1d_points(p_in, p_out, labels_fn, iters=15):
    """Bisect every edge (inside endpoint -> outside endpoint) in lock step.

    Runs exactly ``iters`` batched evaluations; the final bracket has width
    |e| * 2**-iters and the returned point is its midpoint.  Endpoints are
    not re-evaluated: the caller guarantees they carry distinct labels.
    """
    p_in = np.asarray(p_in, dtype=np.float64)
    p_out = np.asarray(p_out, dtype=np.float64)
    k = len(p_in)
    lo = np.zeros(k)
    hi = np.ones(k)
    span = p_out - p_in
    for _ in range(iters):
        tm = 0.5 * (lo + hi)
        lab = labels_fn(p_in + tm[:, None] * span)
        inside = lab == 1
        # bracket invariant: label(lo side) == 1, label(hi side) == 0
        lo = np.where(inside, tm, lo)
        hi = np.where(inside, hi, tm)
    t = 0.5 * (lo + hi)
    eps = 2.0 ** (-iters)
    t = np.clip(t, eps, 1.0 - eps)
    return Point1DBatch(t=t, position=p_in + t[:, None] * span, p_in=p_in, p_out=p_out)


def line_binary_search_batch(origin, direction, ref_label, max_range, n_linear, n_binary, labels_fn):
    """Find the nearest label flip along each ray; total function.

    Coarse samples at max_range * i / N (i = 1..N) bracket the first flip;
    bisection refines inside [s_{i-1}, s_i).  When no sample flips the
    bracket becomes the farthest interval [s_{N-1}, s_N) and the refinement
    pushes the output toward max_range.  The returned point is the bracket
    endpoint nearer the origin, which always keeps the reference label.

    Works for any point dimension (the face search runs it in-plane).
    Returns (point, found, arc_distance).
    """
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    max_range = np.broadcast_to(np.asarray(max_range, dtype=np.float64), origin.shape[:1]).copy()
    ref = np.asarray(ref_label)
    m = len(origin)

    first = np.full(m, n_linear, dtype=np.int64)
    seen = np.zeros(m, dtype=bool)
    for i in range(1, n_linear + 1):
        s = max_range * (i / n_linear)
        lab = labels_fn(origin + s[:, None] * direction)
        flip = (lab != ref) & ~seen
        first[flip] = i
        seen |= flip
    found = seen

    a = max_range * ((first - 1) / n_linear)
    b = max_range * (first / n_linear)
    for _ in range(n_binary):
        mid = 0.5 * (a + b)
        lab = labels_fn(origin + mid[:, None] * direction)
        same = lab == ref
        a = np.where(same, mid, a)
        b = np.where(same, b, mid)
    return origin + a[:, None] * direction, found, a


def line_binary_search(origin, direction, ref_label, labels_fn, budget, cell_size=1.0):
    """Single-ray convenience wrapper around the batched search."""
    direction = np.asarray(direction, dtype=np.float64)
    pt, found, dist = line_binary_search_batch(
        np.asarray(origin, dtype=np.float64)[None],
        direction[None] / np.linalg.norm(direction),
        np.asarray([ref_label], dtype=np.uint8),
        np.asarray([budget.max_range_factor * cell_size]),
        budget.n_linear,
        budget.n_binary,
        labels_fn,
    )
    return pt[0], bool(found[0]), float(dist[0])


@dataclass
class Face2DBatch:
    """One entry per 2D point instance: a face plus a pair of 1D points.

    Faces with four crossing edges contribute two instances, one per edge
    pair chosen by the partition pairing.  In-plane coordinates (u, v) have
    their origin at the face's corner vertex.
    """

    origin: np.ndarray  # (M, 3) corner position
    axis_u: np.ndarray  # (M, 3) unit
    axis_v: np.ndarray  # (M, 3) unit
    h_u: np.ndarray  # (M,)
    h_v: np.ndarray  # (M,)
    p1: np.ndarray  # (M, 2) first 1D point, face coords
    p2: np.ndarray  # (M, 2)
    corner_labels: np.ndarray  # (M, 4) labels at (0,0), (hu,0), (hu,hv), (0,hv)

    def __len__(self):
        return len(self.origin)

    def lift(self, uv):
        return (
            self.origin
            + uv[:, 0:1] * self.axis_u
            + uv[:, 1:2] * self.axis_v
        )


@dataclass
class Point2DBatch:
    position2: np.ndarray  # (M, 2) face coords
    position3: np.ndarray  # (M, 3)
    status: np.ndarray  # (M,) status codes
    midpoint_label: np.ndarray  # (M,)
    q2: np.ndarray  # (M, 2) step-1 crossing, face coords
    found: np.ndarray  # (M, 3) found flags for rays r, r1, r2


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def find_2d_points(batch, labels_fn, budget, q_tolerance_factor=1e-4):
    """Locate one in-plane surface point per (face, 1D point pair) instance.

    Step 1 walks perpendicular to the chord between the two 1D points, from
    its midpoint toward a corner whose label differs from the midpoint's,
    and finds the nearest crossing q.  Step 2 shoots two rays from q
    parallel to the chord, one toward each 1D point.  Step 3 intersects the
    lines through (p1, q1) and (p2, q2).  Under local flatness this yields
    the midpoint for a straight boundary and the line intersection for a
    two-line wedge.

    All three searches run for every instance (lock step), so the evaluation
    count is exactly the budget times the instance count.  ``labels_fn``
    takes (points, category) so the caller can account evaluations.
    """
    m = len(batch)
    h_min = np.minimum(batch.h_u, batch.h_v)
    p1, p2 = batch.p1, batch.p2
    mid = 0.5 * (p1 + p2)
    chord = p2 - p1
    chord_len = np.linalg.norm(chord, axis=1)
    degenerate_chord = chord_len < 1e-12 * h_min
    safe_len = np.where(degenerate_chord, 1.0, chord_len)
    d_l = chord / safe_len[:, None]
    perp = np.stack([-d_l[:, 1], d_l[:, 0]], axis=1)

    mid_label = labels_fn(batch.lift(mid), "probe_face_midpoint")

    corners = np.zeros((m, 4, 2))
    corners[:, 1, 0] = batch.h_u
    corners[:, 2, 0] = batch.h_u
    corners[:, 2, 1] = batch.h_v
    corners[:, 3, 1] = batch.h_v
    rel = corners - mid[:, None, :]
    side = np.einsum("mck,mk->mc", rel, perp)
    dist = np.linalg.norm(rel, axis=2)
    differs = batch.corner_labels != mid_label[:, None]
    inf = np.inf
    plus_d = np.where(differs & (side > 0), dist, inf).min(axis=1)
    minus_d = np.where(differs & (side < 0), dist, inf).min(axis=1)
    if np.any(np.isinf(plus_d) & np.isinf(minus_d)):
        bad = int(np.argmax(np.isinf(plus_d) & np.isinf(minus_d)))
        raise AssertionError(
            f"2D search instance {bad}: no corner label differs from the midpoint"
        )
    ray_dir = np.where((plus_d <= minus_d)[:, None], perp, -perp)

    def labels2d(points2, category):
        return labels_fn(batch.lift(points2), category)

    q2, found_r, dist_r = line_binary_search_batch(
        mid,
        ray_dir,
        mid_label,
        budget.step1.max_range_factor * h_min,
        budget.step1.n_linear,
        budget.step1.n_binary,
        lambda pts: labels2d(pts, "search_2d"),
    )
    exact = dist_r <= q_tolerance_factor * h_min

    # Step 2 for both rays in one lock-step batch.
    origins = np.concatenate([q2, q2], axis=0)
    dirs = np.concatenate([-d_l, d_l], axis=0)
    refs = np.concatenate([mid_label, mid_label])
    ranges = np.concatenate([budget.step2.max_range_factor * h_min] * 2)
    origin2 = np.concatenate([batch.origin, batch.origin], axis=0)
    axis_u2 = np.concatenate([batch.axis_u, batch.axis_u], axis=0)
    axis_v2 = np.concatenate([batch.axis_v, batch.axis_v], axis=0)

    def labels2d_twice(points2, category):
        p3 = origin2 + points2[:, 0:1] * axis_u2 + points2[:, 1:2] * axis_v2
        return labels_fn(p3, category)

    q12, found_12, _ = line_binary_search_batch(
        origins,
        dirs,
        refs,
        ranges,
        budget.step2.n_linear,
        budget.step2.n_binary,
        lambda pts: labels2d_twice(pts, "search_2d"),
    )
    qa, qb = q12[:m], q12[m:]
    found_a, found_b = found_12[:m], found_12[m:]

    arm1 = qa - p1
    arm2 = qb - p2
    arm1_len = np.linalg.norm(arm1, axis=1)
    arm2_len = np.linalg.norm(arm2, axis=1)
    cross = _cross2(arm1, arm2)
    parallel = (
        (np.abs(cross) <= 1e-6 * arm1_len * arm2_len)
        | (arm1_len < 1e-12 * h_min)
        | (arm2_len < 1e-12 * h_min)
        | degenerate_chord
    )
    safe_cross = np.where(parallel, 1.0, cross)
    t_par = _cross2(p2 - p1, arm2) / safe_cross
    pf = p1 + t_par[:, None] * arm1

    position = np.where((exact | parallel)[:, None], mid, pf)

    # Clamp to the face rectangle expanded by half a cell per in-plane axis.
    lo = np.stack([-0.5 * batch.h_u, -0.5 * batch.h_v], axis=1)
    hi = np.stack([1.5 * batch.h_u, 1.5 * batch.h_v], axis=1)
    delta = position - mid
    with np.errstate(divide="ignore", invalid="ignore"):
        s_hi = np.where(delta > 0, (hi - mid) / delta, np.inf)
        s_lo = np.where(delta < 0, (lo - mid) / delta, np.inf)
    s = np.minimum(np.minimum(s_hi, s_lo).min(axis=1), 1.0)
    clamped = s < 1.0
    position = mid + s[:, None] * delta

    status = np.full(m, STATUS_EXACT, dtype=np.uint8)
    unfound = ~(found_r & found_a & found_b)
    status[unfound] = STATUS_RANGE_EXHAUSTED
    status[clamped] = STATUS_CLAMPED
    status[parallel & ~exact] = STATUS_MIDPOINT_FALLBACK
    status[exact] = STATUS_EXACT

    return Point2DBatch(
        position2=position,
        position3=batch.lift(position),
        status=status,
        midpoint_label=mid_label,
        q2=q2,
        found=np.stack([found_r, found_a, found_b], axis=1),
    )
