"""Synthetic registration cases: known deformations applied to a reference.

A case draws a global affine map (rotation times per-axis scaling plus a
translation) and a local perturbation field (i.i.d. uniform nodal vectors
on a random 40-node triangulation), composed in displacement form

    g(x) = (A - I) x + t + local(x).

g is the material deformation the body undergoes, and it is what a perfect
registration recovers: since registration warps the template backward,
T_u = T o (id + u), matching T_u to R wants T = R o (id + u)^{-1}, so the
template is built by backward warping with the *inverse* map,

    T = warp(R, w),    w(x) = (id + g)^{-1}(x) - x,

which shows the reference content contracted and rotated inside the frame
(scales below one shrink the object; nothing is pushed out of the domain).
A damped pixelwise Newton solve rasterizes w.  Both rasters are stored:
`truth_field` (g, the analytic registration target) and `warp_field` (w,
the field that generated the template).

Optional Gaussian noise is added to both images with independent seeds,
after the clean pair is frozen; noisy values are not clamped.

Seeds: a case is reproducible from (master_seed, index).  Same seeds, same
bytes, including the persisted CSV rasters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

from .image import Image, NoiseSpec, add_noise, read_csv_raster, warp, write_csv_raster, write_image
from .mesh import DisplacementField, TriMesh, field_eval


@dataclass(frozen=True)
class DeformationSpec:
    """Ranges for the random deformation protocol.

    Pixel-denominated ranges (translation, local amplitude) refer to pixels
    of the image the spec is applied to.
    """

    scale_min: float = 0.69
    scale_max: float = 0.91
    rotation_max_deg: float = 30.0
    translate_max_px: float = 9.0
    local_nodes: int = 40
    local_amplitude_px: float = 3.0

    def __post_init__(self):
        if not (0 < self.scale_min <= self.scale_max):
            raise ValueError("need 0 < scale_min <= scale_max")
        if self.rotation_max_deg < 0 or self.translate_max_px < 0 or self.local_amplitude_px < 0:
            raise ValueError("ranges must be nonnegative")
        if self.local_nodes < 4:
            raise ValueError("local mesh needs at least the 4 corner nodes")

    @classmethod
    def paper_protocol(cls, n: int) -> "DeformationSpec":
        """The published 128x128 protocol with pixel-denominated ranges
        rescaled to image size n, preserving physical magnitudes."""
        return cls(translate_max_px=9.0 * n / 128.0,
                   local_amplitude_px=3.0 * n / 128.0)


def draw_affine(spec: DeformationSpec, rng: np.random.Generator,
                pixel_size: float) -> tuple[np.ndarray, np.ndarray]:
    """A = R(theta) diag(s1, s2) and a translation in physical units."""
    s1, s2 = rng.uniform(spec.scale_min, spec.scale_max, 2)
    theta = np.deg2rad(rng.uniform(-spec.rotation_max_deg, spec.rotation_max_deg))
    t = rng.uniform(-spec.translate_max_px, spec.translate_max_px, 2) * pixel_size
    c, s = np.cos(theta), np.sin(theta)
    A = np.array([[c, -s], [s, c]]) @ np.diag([s1, s2])
    return A, t


def draw_local(spec: DeformationSpec, rng: np.random.Generator, extent: float,
               pixel_size: float) -> DisplacementField:
    """Random triangulation of the square with i.i.d. nodal perturbations.

    Interior nodes are a jittered grid rather than fully uniform draws:
    uniform draws produce sliver triangles whose huge shape-function
    gradients fold the composed map (the protocol wants bijective
    deformations), while a jittered grid keeps every triangle well shaped
    at any seed.
    """
    corners = extent * np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
    k = spec.local_nodes - 4
    m = int(np.ceil(np.sqrt(k)))
    spacing = 2.0 * extent / (m + 1)
    c = -extent + spacing * (np.arange(m) + 1)
    gx, gy = np.meshgrid(c, c, indexing="xy")
    grid = np.column_stack([gx.ravel(), gy.ravel()])[:k]
    inner = grid + rng.uniform(-0.25, 0.25, (k, 2)) * spacing
    nodes = np.vstack([corners, inner])
    tris = Delaunay(nodes).simplices.copy()
    # orient counter-clockwise
    p0, p1, p2 = nodes[tris[:, 0]], nodes[tris[:, 1]], nodes[tris[:, 2]]
    det = ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
           - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))
    flip = det < 0
    tris[flip, 1], tris[flip, 2] = tris[flip, 2], tris[flip, 1]
    mesh = TriMesh(nodes, tris, extent)
    amp = spec.local_amplitude_px * pixel_size
    values = rng.uniform(-amp, amp, (spec.local_nodes, 2))
    return DisplacementField(mesh, values)


def _pixel_points(n: int, extent: float) -> np.ndarray:
    h = 2.0 * extent / n
    c = -extent + (np.arange(n) + 0.5) * h
    X, Y = np.meshgrid(c, c, indexing="xy")
    return np.stack([X, Y], axis=-1)


def forward_displacement(A: np.ndarray, t: np.ndarray, local: DisplacementField,
                         points: np.ndarray) -> np.ndarray:
    """tau(x) = (A - I) x + t + local(x), any (..., 2) points."""
    pts = np.asarray(points, dtype=np.float64)
    return pts @ (A - np.eye(2)).T + t + field_eval(local, pts)


def invert_map(A: np.ndarray, t: np.ndarray, local: DisplacementField,
               points: np.ndarray, max_iters: int = 80,
               tol: float = 1e-12) -> tuple[np.ndarray, float]:
    """Solve phi(y) = x per point for phi = id + g; returns (w, residual).

    w(x) = y - x.  Newton steps use the piecewise-constant local-field
    Jacobian and a per-point step damping: a step is taken only when it
    reduces that point's residual sup-norm, halving the trial length
    otherwise.  The damping matters outside the square, where the local
    field extends by boundary clamping (the mesh locator snaps to the
    nearest triangle) and the undamped iteration can cycle or run away.
    Points where Newton stalls inside the mesh get an exact per-triangle
    affine solve.  Returns the final max sup-norm residual so callers can
    see where inversion struggled (folded spots have no exact preimage).
    """
    from .mesh import locate, triangle_gradients

    pts = np.asarray(points, dtype=np.float64)
    shape = pts.shape
    x = pts.reshape(-1, 2)
    y = x.copy()
    grads = triangle_gradients(local)
    corner_vals = local.values[local.mesh.triangles]

    def residual(yy, xx):
        tri, bary = locate(local.mesh, yy)
        local_val = np.einsum("pk,pkj->pj", bary, corner_vals[tri])
        return yy @ A.T + t + local_val - xx, tri

    r, tri_idx = residual(y, x)
    rnorm = np.abs(r).max(axis=1)
    lam = np.ones(len(y))
    for _ in range(max_iters):
        ia = np.flatnonzero(rnorm >= tol)
        if ia.size == 0:
            break
        ra = r[ia]
        J = A[None, :, :] + grads[tri_idx[ia]]
        # beyond the square the clamped local field is flat, not the P1
        # extrapolation, so the nearest triangle's gradient misleads there
        outside = np.abs(y[ia]).max(axis=1) > local.mesh.extent
        J[outside] = A
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        bad = np.abs(det) < 1e-12
        det[bad] = 1.0
        dx = (J[:, 1, 1] * ra[:, 0] - J[:, 0, 1] * ra[:, 1]) / det
        dy = (-J[:, 1, 0] * ra[:, 0] + J[:, 0, 0] * ra[:, 1]) / det
        delta = np.column_stack([dx, dy])
        delta[bad] = ra[bad]  # folded spot: fixed-point direction
        y_try = y[ia] - lam[ia, None] * delta
        r_try, tri_try = residual(y_try, x[ia])
        rnorm_try = np.abs(r_try).max(axis=1)
        ok = rnorm_try < rnorm[ia]
        took = ia[ok]
        y[took] = y_try[ok]
        r[took] = r_try[ok]
        tri_idx[took] = tri_try[ok]
        rnorm[took] = rnorm_try[ok]
        lam[took] = np.minimum(1.0, 2.0 * lam[took])
        lam[ia[~ok]] *= 0.5
    ia = np.flatnonzero(rnorm >= tol)
    if ia.size:
        # Newton can cycle between triangles of the piecewise-linear field;
        # inside the mesh the map is affine per triangle, so solve exactly.
        cand, cand_ok = _pl_exact_inverse(A, t, local, x[ia], grads)
        if cand_ok.any():
            iaf = ia[cand_ok]
            r_new, _ = residual(cand[cand_ok], x[iaf])
            rn_new = np.abs(r_new).max(axis=1)
            better = rn_new < rnorm[iaf]
            upd = iaf[better]
            y[upd] = cand[cand_ok][better]
            rnorm[upd] = rn_new[better]
    return (y - x).reshape(shape), float(rnorm.max(initial=0.0))


def _pl_exact_inverse(A: np.ndarray, t: np.ndarray, local: DisplacementField,
                      x: np.ndarray, grads: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact preimages of x under y -> A y + t + local(y), searched per triangle.

    On triangle k the local field is affine, local(y) = G_k y + c_k, so the
    whole map is affine there and one 2x2 solve gives the only candidate; a
    candidate counts when it lands inside its own triangle.  Returns (y, ok)
    keeping the candidate with the smallest residual per point.
    """
    mesh = local.mesh
    tris = mesh.triangles
    nodes = mesh.nodes
    best_y = np.zeros_like(x)
    best_r = np.full(len(x), np.inf)
    for k in range(len(tris)):
        Gk = grads[k]
        p0, p1, p2 = nodes[tris[k]]
        ck = local.values[tris[k, 0]] - Gk @ p0
        M = A + Gk
        det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
        if abs(det) < 1e-14:
            continue
        rhs = x - t - ck
        ystar = np.empty_like(rhs)
        ystar[:, 0] = (M[1, 1] * rhs[:, 0] - M[0, 1] * rhs[:, 1]) / det
        ystar[:, 1] = (-M[1, 0] * rhs[:, 0] + M[0, 0] * rhs[:, 1]) / det
        e1 = p1 - p0
        e2 = p2 - p0
        dT = e1[0] * e2[1] - e1[1] * e2[0]
        d = ystar - p0
        b1 = (e2[1] * d[:, 0] - e2[0] * d[:, 1]) / dT
        b2 = (-e1[1] * d[:, 0] + e1[0] * d[:, 1]) / dT
        inside = (b1 >= -1e-9) & (b2 >= -1e-9) & (b1 + b2 <= 1 + 1e-9)
        if not inside.any():
            continue
        resid = np.abs(ystar @ M.T + t + ck - x).max(axis=1)
        upd = inside & (resid < best_r)
        best_y[upd] = ystar[upd]
        best_r[upd] = resid[upd]
    return best_y, np.isfinite(best_r)


@dataclass
class SyntheticCase:
    case_id: str
    seed: int | list
    spec: DeformationSpec
    reference: Image
    template: Image
    truth_field: np.ndarray       # (n, n, 2): field registration should find
    warp_field: np.ndarray        # (n, n, 2): T = warp(R, warp_field)
    affine_matrix: np.ndarray
    affine_translation: np.ndarray
    inversion_residual: float
    local_field: DisplacementField | None = None   # in-memory only
    noise_reference: NoiseSpec | None = None
    noise_template: NoiseSpec | None = None
    noisy_reference: Image | None = None
    noisy_template: Image | None = None

    @property
    def n(self) -> int:
        return self.reference.n

    def registration_inputs(self) -> tuple[Image, Image]:
        """(reference, template) as fed to the registration: noisy if present."""
        return (self.noisy_reference or self.reference,
                self.noisy_template or self.template)


def make_case(reference: Image, spec: DeformationSpec, seed,
              noise: tuple[NoiseSpec | None, NoiseSpec | None] | None = None,
              case_id: str = "case") -> SyntheticCase:
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n = reference.n
    a = reference.extent
    px = reference.pixel_size
    A, t = draw_affine(spec, rng, px)
    local = draw_local(spec, rng, a, px)
    pts = _pixel_points(n, a)
    truth = forward_displacement(A, t, local, pts)
    warp_raster, residual = invert_map(A, t, local, pts)
    template = warp(reference, warp_raster)
    noise_r, noise_t = noise if noise else (None, None)
    return SyntheticCase(
        case_id=case_id, seed=seed, spec=spec,
        reference=reference, template=template,
        truth_field=truth, warp_field=warp_raster,
        affine_matrix=A, affine_translation=t, inversion_residual=residual,
        local_field=local,
        noise_reference=noise_r, noise_template=noise_t,
        noisy_reference=add_noise(reference, noise_r) if noise_r else None,
        noisy_template=add_noise(template, noise_t) if noise_t else None)


def generate_cases(count: int, reference: Image, master_seed: int,
                   spec: DeformationSpec | None = None,
                   noise_stddev: float | None = None) -> list[SyntheticCase]:
    """Deterministic batch: case index i uses seed [master_seed, i].

    Noise seeds branch off separately, so the clean image pair of a noisy
    batch is identical to the corresponding clean batch.
    """
    if count < 1:
        raise ValueError("count must be positive")
    if spec is None:
        spec = DeformationSpec.paper_protocol(reference.n)
    cases = []
    for i in range(count):
        noise = None
        if noise_stddev:
            seed_r = int(np.random.SeedSequence([master_seed, i, 1]).generate_state(1)[0])
            seed_t = int(np.random.SeedSequence([master_seed, i, 2]).generate_state(1)[0])
            noise = (NoiseSpec(noise_stddev, seed_r), NoiseSpec(noise_stddev, seed_t))
        cases.append(make_case(reference, spec, [master_seed, i], noise,
                               case_id=f"case{i:03d}"))
    return cases


# ---------------------------------------------------------------------------
# Persistence.  PNGs are for looking at; the CSV rasters are authoritative
# (exact float64, and noisy values may leave [0, 1], which PNG would clamp).
# ---------------------------------------------------------------------------

def save_case(case: SyntheticCase, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_image(case.reference, d / "R.png")
    write_image(case.template, d / "T.png")
    write_csv_raster(case.reference, d / "R.csv")
    write_csv_raster(case.template, d / "T.csv")
    if case.noisy_reference is not None:
        write_image(case.noisy_reference, d / "R_noisy.png")
        write_csv_raster(case.noisy_reference, d / "R_noisy.csv")
    if case.noisy_template is not None:
        write_image(case.noisy_template, d / "T_noisy.png")
        write_csv_raster(case.noisy_template, d / "T_noisy.csv")
    _write_truth_csv(case, d / "truth.csv")
    meta = {
        "case_id": case.case_id,
        "seed": case.seed,
        "n": case.n,
        "extent": case.reference.extent,
        "spec": asdict(case.spec),
        "affine_matrix": case.affine_matrix.tolist(),
        "affine_translation": case.affine_translation.tolist(),
        "inversion_residual": case.inversion_residual,
        "noise_reference": asdict(case.noise_reference) if case.noise_reference else None,
        "noise_template": asdict(case.noise_template) if case.noise_template else None,
    }
    (d / "case.json").write_text(json.dumps(meta, indent=2) + "\n")


def _write_truth_csv(case: SyntheticCase, path: Path) -> None:
    n = case.n
    pts = _pixel_points(n, case.reference.extent)
    lines = ["i,j,x,y,truth_ux,truth_uy,warp_ux,warp_uy"]
    tf = case.truth_field
    wf = case.warp_field
    for i in range(n):
        for j in range(n):
            vals = (pts[i, j, 0], pts[i, j, 1], tf[i, j, 0], tf[i, j, 1],
                    wf[i, j, 0], wf[i, j, 1])
            lines.append(f"{i},{j}," + ",".join(repr(float(v)) for v in vals))
    path.write_text("\n".join(lines) + "\n")


def load_case(directory: str | Path) -> SyntheticCase:
    d = Path(directory)
    meta = json.loads((d / "case.json").read_text())
    n = meta["n"]
    truth = np.zeros((n, n, 2))
    warp_raster = np.zeros((n, n, 2))
    with open(d / "truth.csv") as f:
        next(f)
        for line in f:
            parts = line.split(",")
            i, j = int(parts[0]), int(parts[1])
            truth[i, j] = (float(parts[4]), float(parts[5]))
            warp_raster[i, j] = (float(parts[6]), float(parts[7]))
    noise_r = NoiseSpec(**meta["noise_reference"]) if meta["noise_reference"] else None
    noise_t = NoiseSpec(**meta["noise_template"]) if meta["noise_template"] else None
    return SyntheticCase(
        case_id=meta["case_id"], seed=meta["seed"], spec=DeformationSpec(**meta["spec"]),
        reference=read_csv_raster(d / "R.csv"), template=read_csv_raster(d / "T.csv"),
        truth_field=truth, warp_field=warp_raster,
        affine_matrix=np.array(meta["affine_matrix"]),
        affine_translation=np.array(meta["affine_translation"]),
        inversion_residual=meta["inversion_residual"],
        noise_reference=noise_r, noise_template=noise_t,
        noisy_reference=read_csv_raster(d / "R_noisy.csv") if (d / "R_noisy.csv").exists() else None,
        noisy_template=read_csv_raster(d / "T_noisy.csv") if (d / "T_noisy.csv").exists() else None)
