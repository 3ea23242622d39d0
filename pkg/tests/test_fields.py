import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occmesh import (
    BoxField,
    CsgField,
    MeshWindingField,
    PlaneField,
    SmoothedOccupancy,
    SphereField,
    TorusField,
    VoxelField,
    eval_labels,
    load_scene,
    winding_number,
)
from occmesh.fields import SurfaceCoincidenceError, rotation_from_euler
from occmesh.mesh import box_mesh, icosphere

from helpers import rotated_box_field


def test_sphere_labels_basic():
    f = SphereField((0.5, 0.5, 0.5), 0.3)
    assert eval_labels(f, (0.5, 0.5, 0.5)) == 1
    assert eval_labels(f, (0.99, 0.5, 0.5)) == 0


def test_union_max_rule():
    a = SphereField((0.3, 0.5, 0.5), 0.1)
    b = SphereField((0.7, 0.5, 0.5), 0.1)
    u = CsgField("union", [a, b])
    p = (0.7, 0.5, 0.5)  # inside only b
    assert eval_labels(a, p) == 0
    assert eval_labels(b, p) == 1
    assert eval_labels(u, p) == 1


def test_nonfinite_point_rejected_with_index():
    f = SphereField((0.5, 0.5, 0.5), 0.3)
    pts = np.array([[0.5, 0.5, 0.5], [np.nan, 0.5, 0.5]])
    with pytest.raises(ValueError, match="index 1"):
        eval_labels(f, pts)


def test_iso_tie_labels_outside():
    f = SmoothedOccupancy(SphereField((0.0, 0.0, 0.0), 0.5), 4.0)
    # on the zero level set raw == 0.5 exactly -> outside
    assert f.eval_raw(np.array([[0.5, 0.0, 0.0]]))[0] == pytest.approx(0.5)
    assert eval_labels(f, (0.5, 0.0, 0.0)) == 0


def test_csg_label_algebra_matches_set_operations():
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 1, size=(100_000, 3))
    a = SphereField((0.45, 0.5, 0.5), 0.25)
    b = BoxField((0.6, 0.5, 0.5), (0.2, 0.15, 0.3))
    in_a = a.signed_distance(pts) < 0
    in_b = b.signed_distance(pts) < 0
    assert np.array_equal(eval_labels(CsgField("union", [a, b]), pts) == 1, in_a | in_b)
    assert np.array_equal(
        eval_labels(CsgField("intersection", [a, b]), pts) == 1, in_a & in_b
    )
    assert np.array_equal(
        eval_labels(CsgField("difference", [a, b]), pts) == 1, in_a & ~in_b
    )
    assert np.array_equal(eval_labels(CsgField("complement", [a]), pts) == 1, ~in_a)


def test_csg_transform_rigid():
    rot = rotation_from_euler(0, 0, 90)
    base = BoxField((0.0, 0.0, 0.0), (0.2, 0.1, 0.1))
    moved = CsgField("transform", [base], rotation=rot, translation=(1.0, 0.0, 0.0))
    # the long axis now points along +y around (1, 0, 0)
    assert eval_labels(moved, (1.0, 0.15, 0.0)) == 1
    assert eval_labels(moved, (1.15, 0.0, 0.0)) == 0
    assert eval_labels(base, (0.15, 0.0, 0.0)) == 1


@pytest.mark.parametrize(
    "make",
    [
        lambda: SphereField((0.5, 0.5, 0.5), 0.3),
        lambda: TorusField((0.5, 0.5, 0.5), 0.27, 0.12),
        rotated_box_field,
    ],
)
def test_smoothed_labels_match_base(make):
    base = make()
    sm = SmoothedOccupancy(base, 64.0)
    rng = np.random.default_rng(1)
    pts = rng.uniform(0, 1, size=(100_000, 3))
    d = base.signed_distance(pts)
    off = np.abs(d) > 1e-12
    assert np.array_equal(eval_labels(sm, pts[off]), eval_labels(base, pts[off]))


def test_smoothed_raw_is_logistic_of_distance():
    base = PlaneField((0.0, 0.0, 0.0), (0.0, 0.0, 1.0))
    k = 10.0
    sm = SmoothedOccupancy(base, k)
    z = np.array([-0.2, -0.05, 0.0, 0.05, 0.2])
    pts = np.stack([np.zeros(5), np.zeros(5), z], axis=1)
    expect = 1.0 / (1.0 + np.exp(k * z))
    assert np.allclose(sm.eval_raw(pts), expect, atol=1e-12)


class TestWindingNumber:
    def test_cube_center_and_outside(self):
        cube = box_mesh((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
        assert winding_number(cube.vertices, cube.triangles, (0.0, 0.0, 0.0)) == pytest.approx(
            1.0, abs=1e-9
        )
        assert winding_number(cube.vertices, cube.triangles, (5.0, 0.1, 0.2)) == pytest.approx(
            0.0, abs=1e-9
        )

    def test_single_triangle_against_monte_carlo_solid_angle(self):
        # Oracle: fraction of uniformly random directions whose ray hits the
        # triangle equals |solid angle| / (4 pi).
        verts = np.array([[1.0, 0.2, -0.3], [0.4, 1.1, 0.2], [-0.2, 0.3, 1.0]])
        tris = np.array([[0, 1, 2]])
        p = np.array([0.1, 0.05, -0.02])
        w = winding_number(verts, tris, p)

        rng = np.random.default_rng(42)
        n = 10_000_000
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        e1 = verts[1] - verts[0]
        e2 = verts[2] - verts[0]
        pvec = np.cross(d, e2)
        det = pvec @ e1
        okd = np.abs(det) > 1e-12
        inv = np.zeros(n)
        inv[okd] = 1.0 / det[okd]
        tvec = p - verts[0]
        u = (pvec @ tvec) * inv
        qvec = np.cross(tvec, e1)
        v = (d @ qvec) * inv
        t = (qvec @ e2) * inv
        hits = okd & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)
        mc_fraction = hits.mean()
        assert abs(abs(w) - mc_fraction) < 1e-3
        # frozen from the Monte-Carlo oracle above (seed 42): 0.0990310
        assert abs(w) == pytest.approx(0.0990, abs=2e-3)

    def test_closed_mesh_winding_is_binary_off_surface(self):
        center, half = (0.4, 0.5, 0.6), (0.3, 0.2, 0.25)
        mesh = box_mesh(center, half)
        analytic = BoxField(center, half)
        rng = np.random.default_rng(3)
        pts = rng.uniform(0, 1, size=(2000, 3))
        d = analytic.signed_distance(pts)
        off = np.abs(d) > 1e-3
        field = MeshWindingField(mesh.vertices, mesh.triangles)
        w = field.eval_raw(pts[off])
        inside = d[off] < 0
        assert np.all(np.abs(w[inside] - 1.0) < 1e-6)
        assert np.all(np.abs(w[~inside]) < 1e-6)
        assert np.array_equal(eval_labels(field, pts[off]) == 1, inside)

    def test_on_surface_query_raises(self):
        tri_v = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        tris = np.array([[0, 1, 2]])
        with pytest.raises(SurfaceCoincidenceError):
            winding_number(tri_v, tris, (0.25, 0.25, 0.0))

    def test_field_perturbs_on_surface_queries(self):
        ico = icosphere((0.0, 0.0, 0.0), 1.0, subdivisions=1)
        field = MeshWindingField(ico.vertices, ico.triangles)
        # a mesh vertex lies on many triangles; the field must still answer
        w = field.eval_raw(ico.vertices[:4])
        assert np.all(np.isfinite(w))


def test_voxel_field_trilinear():
    values = np.zeros((3, 3, 3))
    values[1, 1, 1] = 1.0
    f = VoxelField((0, 0, 0), (1, 1, 1), values)
    assert f.eval_raw(np.array([[1.0, 1.0, 1.0]]))[0] == pytest.approx(1.0)
    assert f.eval_raw(np.array([[1.0, 1.0, 1.5]]))[0] == pytest.approx(0.5)
    assert f.eval_raw(np.array([[10.0, 1.0, 1.0]]))[0] == 0.0


@given(
    rx=st.floats(-180, 180),
    ry=st.floats(-180, 180),
    rz=st.floats(-180, 180),
)
def test_euler_rotation_is_orthonormal(rx, ry, rz):
    r = rotation_from_euler(rx, ry, rz)
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)


class TestSceneLoading:
    def test_sphere_scene(self, tmp_path):
        doc = {"field": {"type": "sphere", "center": [0.5, 0.5, 0.5], "radius": 0.3}}
        path = tmp_path / "scene.json"
        path.write_text(json.dumps(doc))
        scene = load_scene(path)
        assert eval_labels(scene.field, (0.5, 0.5, 0.5)) == 1

    def test_smooth_auto_resolves_from_cell_size(self, tmp_path):
        doc = {
            "field": {"type": "sphere", "center": [0.5, 0.5, 0.5], "radius": 0.3},
            "smooth_k": "auto",
        }
        path = tmp_path / "scene.json"
        path.write_text(json.dumps(doc))
        scene = load_scene(path)
        field = scene.resolve_field(np.array([1 / 64, 1 / 64, 1 / 64]))
        assert field.continuous
        assert field.sharpness == pytest.approx(128.0)

    def test_mesh_scene_relative_path(self, tmp_path):
        from occmesh.meshio import export_obj

        ico = icosphere((0.5, 0.5, 0.5), 0.3, subdivisions=1)
        export_obj(ico, tmp_path / "shape.obj")
        doc = {"field": {"type": "mesh", "path": "shape.obj"}}
        (tmp_path / "scene.json").write_text(json.dumps(doc))
        scene = load_scene(tmp_path / "scene.json")
        assert eval_labels(scene.field, (0.5, 0.5, 0.5)) == 1

    def test_missing_field_key_rejected(self, tmp_path):
        (tmp_path / "bad.json").write_text("{}")
        with pytest.raises(ValueError):
            load_scene(tmp_path / "bad.json")

    def test_voxel_scene(self, tmp_path):
        values = np.ones((4, 4, 4)).tolist()
        doc = {
            "field": {
                "type": "voxels",
                "origin": [0, 0, 0],
                "spacing": [0.25, 0.25, 0.25],
                "values": values,
            }
        }
        (tmp_path / "scene.json").write_text(json.dumps(doc))
        scene = load_scene(tmp_path / "scene.json")
        assert eval_labels(scene.field, (0.4, 0.4, 0.4)) == 1
