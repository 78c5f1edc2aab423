"""Quasi-Newton minimization and the registration driver.

minimize() is a limited-memory BFGS loop (two-loop recursion, default
memory 10) with a strong Wolfe line search (c1 = 1e-4, c2 = 0.9,
bracket-and-zoom).  The objective callable returns value and gradient
together, since both come out of one warp-and-project pass.

Stopping: gradient sup-norm at or below grad_tol, accepted step sup-norm at
or below step_tol, objective decrease at or below obj_tol * max(1, |J|) for
obj_patience consecutive iterations, or the iteration cap.  The decrease
rule exists because the bilinear image interpolant makes J piecewise smooth:
near a minimizer the iterates zigzag across gradient kinks with steps and
gradients that never fall below any fixed tolerance, so termination has to
come from the objective flattening (the same role FunctionTolerance plays
in reference quasi-Newton implementations).  A failed line search counts as
a vanishing step.  Non-finite values abort with their own status.
Objective values are nonincreasing across accepted iterations (Wolfe
sufficient decrease), and the best point seen during any evaluation is what
gets returned, so an aborted run still hands back its best iterate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .image import Image
from .mesh import DisplacementField, TriMesh, coarse_mesh, fine_mesh
from .elastic import ElasticParams
from .radon import ProjectorGeometry
from .similarity import (MeasureKind, PAPER_BEST_ALPHA, SimilarityContext,
                         build_context, eval_objective, warp_template)

STATUS_CONVERGED_GRAD = "converged_grad"
STATUS_CONVERGED_STEP = "converged_step"
STATUS_CONVERGED_OBJ = "converged_obj"
STATUS_MAX_ITERS = "max_iters"
STATUS_ABORTED = "aborted_nonfinite"


@dataclass(frozen=True)
class OptimizerConfig:
    max_iters: int = 200
    grad_tol: float = 1e-6
    step_tol: float = 1e-10
    obj_tol: float = 1e-4
    obj_patience: int = 2
    memory: int = 10
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_search_evals: int = 25

    def __post_init__(self):
        if self.max_iters < 0 or self.memory < 1:
            raise ValueError("max_iters must be >= 0 and memory >= 1")
        if not (0 < self.wolfe_c1 < self.wolfe_c2 < 1):
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.obj_tol < 0 or self.obj_patience < 1:
            raise ValueError("obj_tol must be >= 0 and obj_patience >= 1")


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    data_term: float
    regularizer: float
    grad_inf_norm: float
    step_length: float
    cumulative_evals: int
    seconds: float


@dataclass
class MinimizeResult:
    u: np.ndarray
    objective: float
    grad_inf_norm: float
    status: str
    iterations: int
    n_evals: int
    trace: list[IterationRecord] = field(default_factory=list)


class _NonFinite(Exception):
    pass


def minimize(objective, u0: np.ndarray, config: OptimizerConfig = OptimizerConfig(),
             extras=None, clock=None) -> MinimizeResult:
    """Minimize objective(u) -> (value, gradient) from u0.

    extras, if given, maps (u, value) to a (data_term, regularizer) pair
    recorded in the trace; otherwise those trace fields are 0.  clock, if
    given (e.g. time.perf_counter), timestamps trace rows; the default
    writes 0.0 so artifact files stay byte-reproducible.
    """
    u0 = np.asarray(u0, dtype=np.float64).ravel()
    state = {"evals": 0, "best": None}

    def f(u):
        val, grad = objective(u)
        val = float(val)
        grad = np.asarray(grad, dtype=np.float64).ravel()
        state["evals"] += 1
        if not (np.isfinite(val) and np.all(np.isfinite(grad))):
            raise _NonFinite
        if state["best"] is None or val < state["best"][0]:
            state["best"] = (val, u.copy(), grad.copy())
        return val, grad

    started = clock() if clock else None

    def now():
        return clock() - started if clock else 0.0

    trace: list[IterationRecord] = []

    def record(it, val, gnorm, step):
        d_term, s_term = extras(u, val) if extras else (0.0, 0.0)
        trace.append(IterationRecord(it, val, d_term, s_term, gnorm, step,
                                     state["evals"], now()))

    def finish(val, grad, status, iters):
        best_val, best_u, best_grad = state["best"]
        return MinimizeResult(u=best_u, objective=best_val,
                              grad_inf_norm=float(np.abs(best_grad).max(initial=0.0)),
                              status=status, iterations=iters,
                              n_evals=state["evals"], trace=trace)

    try:
        val, grad = f(u0)
    except _NonFinite:
        return MinimizeResult(u=u0, objective=np.nan, grad_inf_norm=np.nan,
                              status=STATUS_ABORTED, iterations=0,
                              n_evals=state["evals"], trace=trace)
    u = u0
    gnorm = float(np.abs(grad).max(initial=0.0))
    if gnorm <= config.grad_tol:
        return finish(val, grad, STATUS_CONVERGED_GRAD, 0)

    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []
    status = STATUS_MAX_ITERS
    iters = 0
    flat_iters = 0
    try:
        for it in range(1, config.max_iters + 1):
            d = _two_loop_direction(grad, s_hist, y_hist, rho_hist)
            if d @ grad >= 0:  # stale curvature info; fall back to steepest descent
                d = -grad
                s_hist.clear(); y_hist.clear(); rho_hist.clear()
            alpha0 = 1.0 if s_hist or it > 1 else min(1.0, 1.0 / max(gnorm, 1e-12))
            ls = _strong_wolfe(f, u, val, grad, d, alpha0,
                               config.wolfe_c1, config.wolfe_c2, config.max_search_evals)
            if ls is None:
                status = STATUS_CONVERGED_STEP
                break
            step_alpha, new_val, new_grad = ls
            new_u = u + step_alpha * d
            s = new_u - u
            y = new_grad - grad
            sy = float(s @ y)
            if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
                s_hist.append(s); y_hist.append(y); rho_hist.append(1.0 / sy)
                if len(s_hist) > config.memory:
                    s_hist.pop(0); y_hist.pop(0); rho_hist.pop(0)
            step_len = float(np.abs(s).max(initial=0.0))
            decrease = val - new_val  # >= 0: accepted steps satisfy Armijo
            u, val, grad = new_u, new_val, new_grad
            gnorm = float(np.abs(grad).max(initial=0.0))
            iters = it
            record(it, val, gnorm, step_len)
            if gnorm <= config.grad_tol:
                status = STATUS_CONVERGED_GRAD
                break
            if step_len <= config.step_tol:
                status = STATUS_CONVERGED_STEP
                break
            if config.obj_tol > 0:
                if decrease <= config.obj_tol * max(1.0, abs(val)):
                    flat_iters += 1
                else:
                    flat_iters = 0
                if flat_iters >= config.obj_patience:
                    status = STATUS_CONVERGED_OBJ
                    break
    except _NonFinite:
        status = STATUS_ABORTED
    return finish(val, grad, status, iters)


def _two_loop_direction(grad, s_hist, y_hist, rho_hist) -> np.ndarray:
    q = grad.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def _strong_wolfe(f, x, f0, g0, d, alpha0, c1, c2, max_evals):
    """Bracket-and-zoom strong Wolfe search.  Returns (alpha, f, g) or None.

    If the eval budget runs out, the best Armijo point found is accepted
    (weak acceptance keeps the outer loop monotone); with none, None.
    """
    dphi0 = float(g0 @ d)
    if dphi0 >= 0:
        return None
    budget = [max_evals]
    armijo_best = [None]

    def phi(alpha):
        budget[0] -= 1
        val, grad = f(x + alpha * d)
        dphi = float(grad @ d)
        if val <= f0 + c1 * alpha * dphi0:
            if armijo_best[0] is None or val < armijo_best[0][1]:
                armijo_best[0] = (alpha, val, grad)
        return val, dphi, grad

    def zoom(lo, phi_lo, dphi_lo, hi, phi_hi):
        while budget[0] > 0:
            # quadratic interpolation from the low end, safeguarded by bisection
            denom = phi_hi - phi_lo - dphi_lo * (hi - lo)
            alpha = lo + 0.5 * (hi - lo)
            if abs(denom) > 1e-32:
                cand = lo - 0.5 * dphi_lo * (hi - lo) ** 2 / denom
                span = abs(hi - lo)
                if min(lo, hi) + 0.1 * span <= cand <= max(lo, hi) - 0.1 * span:
                    alpha = cand
            if abs(hi - lo) * float(np.abs(d).max(initial=0.0)) < 1e-16:
                break
            val, dphi, grad = phi(alpha)
            if val > f0 + c1 * alpha * dphi0 or val >= phi_lo:
                hi, phi_hi = alpha, val
            else:
                if abs(dphi) <= -c2 * dphi0:
                    return alpha, val, grad
                if dphi * (hi - lo) >= 0:
                    hi, phi_hi = lo, phi_lo
                lo, phi_lo, dphi_lo = alpha, val, dphi
        return None

    alpha_prev, phi_prev, dphi_prev = 0.0, f0, dphi0
    alpha = alpha0
    first = True
    while budget[0] > 0:
        val, dphi, grad = phi(alpha)
        if val > f0 + c1 * alpha * dphi0 or (not first and val >= phi_prev):
            out = zoom(alpha_prev, phi_prev, dphi_prev, alpha, val)
            break
        if abs(dphi) <= -c2 * dphi0:
            return alpha, val, grad
        if dphi >= 0:
            out = zoom(alpha, val, dphi, alpha_prev, phi_prev)
            break
        alpha_prev, phi_prev, dphi_prev = alpha, val, dphi
        alpha = min(2.0 * alpha, 1e10)
        first = False
    else:
        out = None
    if out is not None:
        return out
    return armijo_best[0]


# ---------------------------------------------------------------------------
# Registration driver
# ---------------------------------------------------------------------------

MESH_PRESETS = {"coarse": coarse_mesh, "fine": fine_mesh}


@dataclass(frozen=True)
class RegistrationConfig:
    measure: MeasureKind = MeasureKind.RSSD
    alpha: float | None = None          # None selects the measure's preset
    mesh: str = "coarse"                # preset name; resolve_mesh handles it
    n_omega: int = 180
    n_s: int | None = None
    elastic: ElasticParams = ElasticParams()
    optimizer: OptimizerConfig = OptimizerConfig()
    record_timing: bool = False

    def resolved_alpha(self) -> float:
        if self.alpha is not None:
            return self.alpha
        return PAPER_BEST_ALPHA[MeasureKind(self.measure)]


def resolve_mesh(spec: str | TriMesh, extent: float = 1.0) -> TriMesh:
    if isinstance(spec, TriMesh):
        return spec
    if spec in MESH_PRESETS:
        return MESH_PRESETS[spec](extent)
    if spec.startswith("structured:"):
        from .mesh import structured_mesh
        return structured_mesh(int(spec.split(":", 1)[1]), extent)
    from .mesh import read_mesh
    return read_mesh(spec)


@dataclass
class RegistrationRun:
    config: RegistrationConfig
    alpha: float
    result: MinimizeResult
    field: DisplacementField
    warped: Image
    initial_raw: float
    context: SimilarityContext


def register(reference: Image, template: Image,
             config: RegistrationConfig = RegistrationConfig(),
             mesh: TriMesh | None = None,
             geometry: ProjectorGeometry | None = None) -> RegistrationRun:
    """Deformably register the template onto the reference."""
    kind = MeasureKind(config.measure)
    if mesh is None:
        mesh = resolve_mesh(config.mesh, reference.extent)
    if geometry is None:
        from .radon import default_geometry
        geometry = default_geometry(reference.n, reference.extent,
                                    n_omega=config.n_omega, n_s=config.n_s)
    ctx = build_context(reference, template, geometry, mesh, config.elastic)
    alpha = config.resolved_alpha()

    def objective(u_flat):
        return eval_objective(kind, ctx, u_flat, alpha)

    def extras(u_flat, j_val):
        s_val = 0.5 * float(u_flat @ (ctx.stiffness @ u_flat))
        return j_val - alpha * s_val, s_val

    result = minimize(objective, np.zeros(mesh.n_dof), config.optimizer,
                      extras=extras, clock=time.perf_counter if config.record_timing else None)
    nodal = result.u.reshape(-1, 2)
    fld = DisplacementField(mesh, nodal)
    return RegistrationRun(config=config, alpha=alpha, result=result, field=fld,
                           warped=warp_template(ctx, nodal),
                           initial_raw=ctx.initial_raw(kind), context=ctx)
