"""Tests for triangle meshes and piecewise-linear displacement fields:
construction presets, point location, interpolation, Jacobians, and I/O."""

import numpy as np
import pytest

from radreg.mesh import (
    DisplacementField,
    TriMesh,
    coarse_mesh,
    field_eval,
    field_jacobian,
    fine_mesh,
    jacobian_ratios,
    locate,
    rasterize,
    read_field_csv,
    read_mesh,
    structured_mesh,
    triangle_gradients,
    write_field_csv,
    write_field_vtk,
    write_mesh,
)


class TestStructuredMesh:
    def test_smallest_grid(self):
        """k=1 splits the square into two triangles on four nodes."""
        mesh = structured_mesh(1)
        assert mesh.n_nodes == 4
        assert mesh.n_triangles == 2
        assert mesh.n_dof == 8
        print("✓ k=1 grid has 4 nodes, 2 triangles, 8 dof")

    def test_k4_counts(self):
        mesh = structured_mesh(4)
        assert mesh.n_nodes == 25
        assert mesh.n_triangles == 32
        assert mesh.n_dof == 50
        print("✓ k=4 grid has 25 nodes, 32 triangles, 50 dof")

    def test_covers_square(self):
        """Triangle areas are positive and tile the full square."""
        for k in (1, 3, 7):
            mesh = structured_mesh(k)
            areas = mesh.areas()
            assert np.all(areas > 0)
            assert abs(areas.sum() - 4.0) <= 1e-9
            assert np.all(np.abs(mesh.nodes) <= 1.0 + 1e-12)
        print("✓ structured meshes tile the square with positive triangles")

    def test_validation(self):
        with pytest.raises(ValueError):
            structured_mesh(0)
        print("✓ degenerate grid size is rejected")


class TestPresets:
    def test_coarse_counts(self):
        mesh = coarse_mesh()
        assert mesh.n_nodes == 41
        assert mesh.n_triangles == 64
        assert mesh.n_dof == 82
        assert np.all(mesh.areas() > 0)
        assert abs(mesh.areas().sum() - 4.0) <= 1e-9
        print("✓ coarse preset is the 41-node, 64-triangle mesh")

    def test_fine_counts(self):
        mesh = fine_mesh()
        assert mesh.n_nodes == 289
        assert mesh.n_triangles == 512
        assert abs(mesh.areas().sum() - 4.0) <= 1e-9
        print("✓ fine preset is the 289-node, 512-triangle mesh")


class TestLocate:
    def test_centroids(self):
        """Each triangle's centroid locates inside it with uniform weights."""
        mesh = coarse_mesh()
        centroids = mesh.nodes[mesh.triangles].mean(axis=1)
        tri_idx, bary = locate(mesh, centroids)
        np.testing.assert_array_equal(tri_idx, np.arange(mesh.n_triangles))
        np.testing.assert_allclose(bary, 1.0 / 3.0, atol=1e-12)
        print("✓ centroids locate in their own triangle")

    def test_partition_of_unity(self):
        rng = np.random.default_rng(17)
        mesh = coarse_mesh()
        pts = rng.uniform(-1.0, 1.0, size=(200, 2))
        _, bary = locate(mesh, pts)
        np.testing.assert_allclose(bary.sum(axis=1), 1.0, atol=1e-14)
        assert np.all(bary >= 0.0)
        print("✓ barycentric weights are a nonnegative partition of unity")

    def test_shared_edge_is_deterministic(self):
        """Points on a shared edge resolve to the lowest triangle index."""
        mesh = structured_mesh(1)
        # the diagonal from (-1,-1) to (1,1) separates triangles 0 and 1
        pts = np.array([[0.0, 0.0], [-0.5, -0.5], [0.25, 0.25]])
        tri_idx, _ = locate(mesh, pts)
        np.testing.assert_array_equal(tri_idx, 0)
        again, _ = locate(mesh, pts)
        np.testing.assert_array_equal(tri_idx, again)
        print("✓ shared edges resolve to the lowest triangle index")

    def test_outside_points_clamp(self):
        mesh = coarse_mesh()
        outside = np.array([[5.0, 5.0], [-3.0, 0.2]])
        clamped = np.array([[1.0, 1.0], [-1.0, 0.2]])
        t_out, b_out = locate(mesh, outside)
        t_in, b_in = locate(mesh, clamped)
        np.testing.assert_array_equal(t_out, t_in)
        np.testing.assert_allclose(b_out, b_in, atol=1e-15)
        print("✓ outside points behave like their clamp onto the square")

    def test_shape_preserved(self):
        mesh = structured_mesh(2)
        pts = np.zeros((4, 5, 2))
        tri_idx, bary = locate(mesh, pts)
        assert tri_idx.shape == (4, 5)
        assert bary.shape == (4, 5, 3)
        print("✓ locate preserves leading point-array shape")


class TestFieldEval:
    def test_nodal_exactness(self):
        """Interpolation reproduces the nodal values at the nodes."""
        rng = np.random.default_rng(23)
        mesh = coarse_mesh()
        field = DisplacementField(mesh, rng.normal(size=(mesh.n_nodes, 2)))
        at_nodes = field_eval(field, mesh.nodes)
        np.testing.assert_allclose(at_nodes, field.values, atol=1e-12)
        print("✓ field evaluation is nodally exact")

    def test_constant_field(self):
        mesh = structured_mesh(3)
        field = DisplacementField(mesh, np.tile([0.4, -0.7], (mesh.n_nodes, 1)))
        rng = np.random.default_rng(29)
        pts = rng.uniform(-1.0, 1.0, size=(100, 2))
        expected = np.tile([0.4, -0.7], (100, 1))
        np.testing.assert_allclose(field_eval(field, pts), expected, atol=1e-14)
        print("✓ constant nodal values interpolate to a constant field")

    def test_affine_exactness(self):
        """Piecewise-linear interpolation is exact on affine fields."""
        mesh = coarse_mesh()
        B = np.array([[0.3, -0.1], [0.2, 0.5]])
        c = np.array([0.05, -0.02])
        field = DisplacementField(mesh, mesh.nodes @ B.T + c)
        rng = np.random.default_rng(31)
        pts = rng.uniform(-1.0, 1.0, size=(150, 2))
        np.testing.assert_allclose(field_eval(field, pts), pts @ B.T + c, atol=1e-12)
        print("✓ affine fields interpolate exactly")

    def test_zero_field(self):
        mesh = structured_mesh(2)
        field = DisplacementField.zero(mesh)
        pts = np.array([[0.1, 0.2], [-0.9, 0.9]])
        assert np.all(field_eval(field, pts) == 0.0)
        print("✓ zero field evaluates to zero")


class TestRasterize:
    def test_matches_pointwise_eval(self):
        """Rasterizing equals evaluating the field at every pixel center."""
        rng = np.random.default_rng(37)
        mesh = coarse_mesh()
        field = DisplacementField(mesh, 0.1 * rng.normal(size=(mesh.n_nodes, 2)))
        n = 24
        h = 2.0 / n
        c = -1.0 + (np.arange(n) + 0.5) * h
        xx, yy = np.meshgrid(c, c)
        pts = np.stack([xx, yy], axis=-1)
        grid = rasterize(field, n)
        assert grid.shape == (n, n, 2)
        np.testing.assert_allclose(grid, field_eval(field, pts), atol=1e-14)
        print("✓ rasterized field matches pointwise evaluation")


class TestJacobian:
    def test_translation_preserves_area(self):
        mesh = coarse_mesh()
        field = DisplacementField(mesh, np.tile([0.3, -0.4], (mesh.n_nodes, 1)))
        np.testing.assert_array_equal(jacobian_ratios(field), 1.0)
        print("✓ translations have unit area ratio everywhere")

    def test_linearized_rotation(self):
        """u = theta (-y, x) gives det(I + grad u) = 1 + theta^2 exactly."""
        mesh = coarse_mesh()
        theta = 0.1
        values = theta * np.column_stack([-mesh.nodes[:, 1], mesh.nodes[:, 0]])
        field = DisplacementField(mesh, values)
        np.testing.assert_allclose(jacobian_ratios(field), 1.0 + theta ** 2, atol=1e-12)
        print("✓ linearized rotation inflates area by 1 + theta^2")

    def test_affine_gradient(self):
        mesh = structured_mesh(4)
        B = np.array([[0.2, 0.7], [-0.3, 0.1]])
        field = DisplacementField(mesh, mesh.nodes @ B.T)
        grads = triangle_gradients(field)
        np.testing.assert_allclose(grads, np.broadcast_to(B, grads.shape), atol=1e-12)
        pts = np.array([[0.3, -0.6], [0.0, 0.0]])
        jac = field_jacobian(field, pts)
        np.testing.assert_allclose(jac, np.broadcast_to(B, jac.shape), atol=1e-12)
        print("✓ affine fields have the prescribed constant gradient")

    def test_fold_is_negative(self):
        """Reflecting the x axis folds every triangle."""
        mesh = structured_mesh(2)
        field = DisplacementField(mesh, np.column_stack(
            [-2.0 * mesh.nodes[:, 0], np.zeros(mesh.n_nodes)]))
        assert np.all(jacobian_ratios(field) < 0.0)
        print("✓ folded triangles report negative area ratios")


class TestMeshIO:
    def test_mesh_round_trip(self, tmp_path):
        mesh = coarse_mesh()
        path = tmp_path / "mesh.txt"
        write_mesh(mesh, path)
        back = read_mesh(path)
        assert np.array_equal(back.nodes, mesh.nodes)
        assert np.array_equal(back.triangles, mesh.triangles)
        assert back.extent == mesh.extent
        print("✓ mesh text round trip is exact")

    def test_field_round_trip(self, tmp_path):
        rng = np.random.default_rng(41)
        mesh = structured_mesh(3)
        field = DisplacementField(mesh, rng.normal(size=(mesh.n_nodes, 2)))
        path = tmp_path / "field.csv"
        write_field_csv(field, path)
        back = read_field_csv(path, mesh)
        assert np.array_equal(back.values, field.values)
        print("✓ field CSV round trip is exact")

    def test_vtk_export(self, tmp_path):
        mesh = structured_mesh(2)
        field = DisplacementField(mesh, 0.01 * mesh.nodes)
        path = tmp_path / "field.vtk"
        write_field_vtk(field, 8, path)
        text = path.read_text()
        lines = text.splitlines()
        assert lines[0].startswith("# vtk DataFile")
        assert "DIMENSIONS 8 8 1" in text
        assert "POINT_DATA 64" in text
        assert "VECTORS displacement double" in text
        print("✓ VTK export carries the expected raster header")
