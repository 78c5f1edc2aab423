"""Tests for the quasi-Newton minimizer and the registration driver:
convergence on classic problems, stopping statuses, trace discipline, and
end-to-end recovery of known deformations."""

import numpy as np
import pytest

from radreg.image import disk_phantom
from radreg.mesh import TriMesh, coarse_mesh, fine_mesh, rasterize, structured_mesh
from radreg.optimize import (
    MESH_PRESETS,
    OptimizerConfig,
    RegistrationConfig,
    STATUS_ABORTED,
    STATUS_CONVERGED_GRAD,
    STATUS_CONVERGED_OBJ,
    STATUS_CONVERGED_STEP,
    STATUS_MAX_ITERS,
    minimize,
    register,
    resolve_mesh,
)
from radreg.similarity import MeasureKind

from conftest import gaussian_mixture

# disables the plateau and step rules so runs converge on gradient alone
TIGHT = OptimizerConfig(max_iters=200, grad_tol=1e-9, step_tol=0.0, obj_tol=0.0)


def _quadratic(dim, seed):
    """SPD quadratic J = 1/2 u^T A u - b^T u with a direct-solve minimizer."""
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(dim, dim))
    A = M @ M.T + dim * np.eye(dim)
    b = rng.normal(size=dim)
    u_star = np.linalg.solve(A, b)

    def objective(u):
        return 0.5 * float(u @ (A @ u)) - float(b @ u), A @ u - b

    return objective, u_star


class TestMinimize:
    def test_quadratic(self):
        """SPD 10-dof quadratic reaches the direct solution within 50 iters."""
        objective, u_star = _quadratic(10, seed=97)
        res = minimize(objective, np.zeros(10), TIGHT)
        assert res.iterations <= 50
        assert np.linalg.norm(res.u - u_star) <= 1e-8
        assert res.status == STATUS_CONVERGED_GRAD
        print(f"✓ quadratic solved in {res.iterations} iterations")

    def test_zero_gradient_start(self):
        """Starting at a stationary point returns immediately."""
        objective, u_star = _quadratic(6, seed=101)
        res = minimize(objective, u_star, TIGHT)
        assert res.iterations == 0
        assert res.status == STATUS_CONVERGED_GRAD
        np.testing.assert_allclose(res.u, u_star, atol=0.0)
        assert res.trace == []
        print("✓ stationary start returns after zero iterations")

    def test_rosenbrock(self):
        """The classic banana valley from (-1.2, 1) reaches (1, 1)."""

        def rosen(u):
            x, y = u
            val = (1 - x) ** 2 + 100 * (y - x * x) ** 2
            grad = np.array([-2 * (1 - x) - 400 * x * (y - x * x),
                             200 * (y - x * x)])
            return val, grad

        res = minimize(rosen, np.array([-1.2, 1.0]),
                       OptimizerConfig(max_iters=500, grad_tol=1e-10, obj_tol=0.0))
        assert np.abs(res.u - 1.0).max() <= 1e-6
        print(f"✓ Rosenbrock solved in {res.iterations} iterations")

    def test_objective_plateau_stop(self):
        """A loose decrease tolerance triggers the plateau status."""
        objective, _ = _quadratic(10, seed=103)
        cfg = OptimizerConfig(grad_tol=1e-300, step_tol=0.0,
                              obj_tol=0.5, obj_patience=2)
        res = minimize(objective, np.zeros(10), cfg)
        assert res.status == STATUS_CONVERGED_OBJ
        assert res.iterations < 200
        print("✓ flat objective decreases stop the iteration")

    def test_trace_monotone_and_complete(self):
        """Accepted iterations log nonincreasing J, one record each."""
        objective, _ = _quadratic(12, seed=107)
        res = minimize(objective, np.ones(12), TIGHT)
        assert len(res.trace) == res.iterations
        vals = [rec.objective for rec in res.trace]
        assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))
        assert [rec.iteration for rec in res.trace] == list(range(1, res.iterations + 1))
        evals = [rec.cumulative_evals for rec in res.trace]
        assert all(b >= a for a, b in zip(evals, evals[1:]))
        assert all(rec.seconds == 0.0 for rec in res.trace)
        print("✓ trace is monotone, complete, and timing-free by default")

    def test_determinism(self):
        objective, _ = _quadratic(8, seed=109)
        a = minimize(objective, np.ones(8), TIGHT)
        b = minimize(objective, np.ones(8), TIGHT)
        assert np.array_equal(a.u, b.u)
        assert a.iterations == b.iterations
        assert [r.objective for r in a.trace] == [r.objective for r in b.trace]
        print("✓ identical inputs give identical minimization traces")

    def test_nonfinite_abort(self):
        """NaN objectives abort with the best finite iterate kept."""

        def trap(u):
            if u[0] < -0.5:
                return np.nan, np.array([np.nan, np.nan])
            val = float(u @ u) + 2.0 * u[0]  # minimum at (-1, 0), inside the trap
            return val, 2.0 * u + np.array([2.0, 0.0])

        res = minimize(trap, np.array([1.0, 1.0]), TIGHT)
        assert res.status == STATUS_ABORTED
        assert np.isfinite(res.objective)
        assert res.objective <= float(np.array([1.0, 1.0]) @ np.array([1.0, 1.0])) + 2.0
        print("✓ non-finite values abort and keep the best-seen iterate")

    def test_nonfinite_at_start(self):
        def bad(u):
            return np.nan, np.zeros_like(u)

        res = minimize(bad, np.zeros(3), TIGHT)
        assert res.status == STATUS_ABORTED
        assert res.iterations == 0
        print("✓ non-finite start aborts cleanly")

    def test_step_tolerance(self):
        """A huge step_tol stops after the first accepted iteration."""
        objective, _ = _quadratic(5, seed=113)
        res = minimize(objective, np.ones(5),
                       OptimizerConfig(step_tol=10.0, obj_tol=0.0, grad_tol=1e-300))
        assert res.status == STATUS_CONVERGED_STEP
        assert res.iterations == 1
        print("✓ step tolerance stops the iteration")

    def test_max_iters(self):
        objective, _ = _quadratic(10, seed=127)
        res = minimize(objective, np.ones(10),
                       OptimizerConfig(max_iters=3, grad_tol=1e-300,
                                       step_tol=0.0, obj_tol=0.0))
        assert res.status == STATUS_MAX_ITERS
        assert res.iterations == 3
        print("✓ iteration cap reports max_iters")

    def test_config_validation(self):
        with pytest.raises(ValueError):
            OptimizerConfig(max_iters=-1)
        with pytest.raises(ValueError):
            OptimizerConfig(memory=0)
        with pytest.raises(ValueError):
            OptimizerConfig(wolfe_c1=0.5, wolfe_c2=0.1)
        with pytest.raises(ValueError):
            OptimizerConfig(obj_tol=-1.0)
        with pytest.raises(ValueError):
            OptimizerConfig(obj_patience=0)
        print("✓ invalid optimizer configs are rejected")


class TestRegister:
    def test_identity_pair(self):
        """T == R needs no displacement for any measure."""
        img = gaussian_mixture(32)
        for kind in MeasureKind:
            run = register(img, img, RegistrationConfig(measure=kind))
            assert np.abs(run.result.u).max() <= 1e-3
            diff = np.sqrt(np.mean((run.warped.pixels - img.pixels) ** 2))
            assert diff <= 1e-6
        print("✓ identical pairs register to the zero field")

    def test_translated_disk_recovery(self):
        """RSSD at its preset alpha recovers a 3-pixel translation.

        The mean displacement over the disk interior must land within half
        a pixel of the true shift.
        """
        n = 64
        h = 2.0 / n
        t = np.array([3 * h, 0.0])
        ref = disk_phantom(n, radius=0.5)
        tmpl = disk_phantom(n, radius=0.5, center=tuple(t))
        run = register(ref, tmpl, RegistrationConfig(measure=MeasureKind.RSSD,
                                                     alpha=0.02))
        grid = rasterize(run.field, n)
        mean_u = grid[ref.pixels > 0.5].mean(axis=0)
        err_px = np.abs(mean_u - t).max() / h
        assert err_px <= 0.5
        print(f"✓ 3-pixel translation recovered to {err_px:.2f} px")

    def test_huge_alpha_pins_displacement(self):
        """alpha = 1e6 makes the regularizer dominate; u stays near zero."""
        n = 64
        t = (3 * 2.0 / n, 0.0)
        ref = disk_phantom(n, radius=0.5)
        tmpl = disk_phantom(n, radius=0.5, center=t)
        run = register(ref, tmpl, RegistrationConfig(measure=MeasureKind.RSSD,
                                                     alpha=1e6))
        assert np.abs(run.result.u).max() <= 1e-3
        print("✓ overwhelming regularization pins the field at zero")

    def test_alpha_preset_resolution(self):
        cfg = RegistrationConfig(measure=MeasureKind.RSHARP_RSSD)
        assert cfg.resolved_alpha() == 0.007
        cfg = RegistrationConfig(measure=MeasureKind.SSD, alpha=0.5)
        assert cfg.resolved_alpha() == 0.5
        print("✓ alpha defaults to the measure preset unless overridden")

    def test_run_record_contents(self):
        img = gaussian_mixture(32)
        run = register(img, img, RegistrationConfig(measure=MeasureKind.SSD))
        assert run.field.mesh.n_nodes == coarse_mesh().n_nodes
        assert run.warped.n == 32
        assert run.initial_raw == 0.0
        assert run.alpha == 0.003
        print("✓ run records expose field, warped image, and settings")


class TestMeshResolution:
    def test_presets(self):
        assert set(MESH_PRESETS) == {"coarse", "fine"}
        assert resolve_mesh("coarse").n_nodes == 41
        assert resolve_mesh("fine").n_nodes == fine_mesh().n_nodes
        print("✓ named mesh presets resolve")

    def test_structured_spec(self):
        mesh = resolve_mesh("structured:4")
        assert mesh.n_nodes == 25
        assert mesh.n_triangles == 32
        print("✓ structured:k specs resolve")

    def test_passthrough_and_file(self, tmp_path):
        mesh = structured_mesh(2)
        assert resolve_mesh(mesh) is mesh
        from radreg.mesh import write_mesh

        path = tmp_path / "mesh.txt"
        write_mesh(mesh, path)
        loaded = resolve_mesh(str(path))
        assert isinstance(loaded, TriMesh)
        assert loaded.n_nodes == mesh.n_nodes
        print("✓ mesh objects and files resolve unchanged")
