"""Triangulated meshes over the image domain and P1 displacement fields.

Meshes partition the closed square [-a, a]^2 into triangles with
counter-clockwise node order.  Displacement fields attach an (u_x, u_y)
vector to every node and interpolate linearly inside each triangle
(barycentric shape functions), so fields are continuous and reproduce
affine maps exactly.

Two presets are provided: the small irregular mesh (41 nodes, 64 triangles,
82 degrees of freedom) shipped as a frozen data file, and a structured
16 x 16 grid split into 512 triangles.  All nodes carry free degrees of
freedom; nothing is pinned at the boundary.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

_LOCATE_TOL = 1e-9


@dataclass(frozen=True)
class TriMesh:
    """Nodes (m, 2) and CCW triangles (t, 3) over [-extent, extent]^2."""

    nodes: np.ndarray
    triangles: np.ndarray
    extent: float = 1.0

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.float64)
        tris = np.asarray(self.triangles, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise ValueError(f"nodes must be (m, 2), got {nodes.shape}")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise ValueError(f"triangles must be (t, 3), got {tris.shape}")
        if tris.min(initial=0) < 0 or tris.max(initial=-1) >= len(nodes):
            raise ValueError("triangle indices out of range")
        if self.extent <= 0:
            raise ValueError("extent must be positive")
        a = self.extent
        if np.any(np.abs(nodes) > a * (1 + 1e-12)):
            raise ValueError("nodes must lie in the closed square [-a, a]^2")
        areas = _signed_areas(nodes, tris)
        if np.any(areas <= 0):
            raise ValueError("triangles must be counter-clockwise with positive area")
        nodes = nodes.copy()
        tris = tris.copy()
        nodes.flags.writeable = False
        tris.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tris)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_dof(self) -> int:
        return 2 * self.n_nodes

    def areas(self) -> np.ndarray:
        return _signed_areas(self.nodes, self.triangles)


def _signed_areas(nodes: np.ndarray, tris: np.ndarray) -> np.ndarray:
    p0 = nodes[tris[:, 0]]
    p1 = nodes[tris[:, 1]]
    p2 = nodes[tris[:, 2]]
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))


def structured_mesh(k: int, extent: float = 1.0) -> TriMesh:
    """Regular (k+1)^2-node grid, each cell split along the same diagonal."""
    if k < 1:
        raise ValueError("k must be at least 1")
    c = np.linspace(-extent, extent, k + 1)
    X, Y = np.meshgrid(c, c, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    tris = []
    for iy in range(k):
        for ix in range(k):
            bl = iy * (k + 1) + ix
            br = bl + 1
            tl = bl + (k + 1)
            tr = tl + 1
            tris.append([bl, br, tr])
            tris.append([bl, tr, tl])
    return TriMesh(nodes, np.array(tris), extent)


def coarse_mesh(extent: float = 1.0) -> TriMesh:
    """The 41-node / 64-triangle preset, loaded from the frozen data file."""
    text = resources.files("radreg").joinpath("_data/coarse41.txt").read_text()
    mesh = _parse_mesh(text)
    if extent == 1.0:
        return mesh
    return TriMesh(mesh.nodes * extent, mesh.triangles, extent)


def fine_mesh(extent: float = 1.0) -> TriMesh:
    """The structured 289-node / 512-triangle preset."""
    return structured_mesh(16, extent)


def write_mesh(mesh: TriMesh, path: str | Path) -> None:
    buf = io.StringIO()
    buf.write(f"{mesh.n_nodes} {mesh.n_triangles} {float(mesh.extent)!r}\n")
    for x, y in mesh.nodes:
        buf.write(f"{float(x)!r} {float(y)!r}\n")
    for i, j, k in mesh.triangles:
        buf.write(f"{i} {j} {k}\n")
    Path(path).write_text(buf.getvalue())


def read_mesh(path: str | Path) -> TriMesh:
    return _parse_mesh(Path(path).read_text())


def _parse_mesh(text: str) -> TriMesh:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    head = lines[0].split()
    m, t = int(head[0]), int(head[1])
    extent = float(head[2]) if len(head) > 2 else 1.0
    if len(lines) != 1 + m + t:
        raise ValueError(f"mesh file has {len(lines)} data lines, expected {1 + m + t}")
    nodes = np.array([[float(v) for v in ln.split()] for ln in lines[1:1 + m]])
    tris = np.array([[int(v) for v in ln.split()] for ln in lines[1 + m:]])
    return TriMesh(nodes, tris, extent)


def locate(mesh: TriMesh, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Find the containing triangle and barycentric coordinates of points.

    points : (..., 2).  Returns (tri_idx, bary) with shapes (...,) and
    (..., 3).  Points are clamped to the closed square first; among
    triangles containing a point (boundaries inclusive, tolerance 1e-9) the
    lowest triangle index wins, so shared edges resolve deterministically.
    Points that still miss every triangle by more than the tolerance are
    assigned to the nearest triangle with clipped coordinates.
    """
    pts = np.asarray(points, dtype=np.float64)
    lead_shape = pts.shape[:-1]
    p = pts.reshape(-1, 2)
    a = mesh.extent
    p = np.clip(p, -a, a)
    n_pts = len(p)
    tri_idx = np.full(n_pts, -1, dtype=np.int64)
    bary = np.zeros((n_pts, 3))
    best_min = np.full(n_pts, -np.inf)
    best_tri = np.zeros(n_pts, dtype=np.int64)
    best_bary = np.zeros((n_pts, 3))
    for t in range(mesh.n_triangles):
        lam = _barycentric(mesh, t, p)
        todo = tri_idx < 0
        if not todo.any():
            break
        inside = todo & (lam.min(axis=1) >= -_LOCATE_TOL)
        tri_idx[inside] = t
        bary[inside] = lam[inside]
        m = lam.min(axis=1)
        better = todo & (m > best_min)
        best_min[better] = m[better]
        best_tri[better] = t
        best_bary[better] = lam[better]
    missed = tri_idx < 0
    tri_idx[missed] = best_tri[missed]
    bary[missed] = best_bary[missed]
    bary = np.clip(bary, 0.0, None)
    bary /= bary.sum(axis=1, keepdims=True)
    return tri_idx.reshape(lead_shape), bary.reshape(lead_shape + (3,))


def _barycentric(mesh: TriMesh, t: int, p: np.ndarray) -> np.ndarray:
    i, j, k = mesh.triangles[t]
    p0, p1, p2 = mesh.nodes[i], mesh.nodes[j], mesh.nodes[k]
    det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])
    dx = p[:, 0] - p0[0]
    dy = p[:, 1] - p0[1]
    l1 = ((p2[1] - p0[1]) * dx - (p2[0] - p0[0]) * dy) / det
    l2 = (-(p1[1] - p0[1]) * dx + (p1[0] - p0[0]) * dy) / det
    return np.column_stack([1.0 - l1 - l2, l1, l2])


@dataclass(frozen=True)
class DisplacementField:
    """Nodal displacement vectors interpolated linearly over a mesh."""

    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (self.mesh.n_nodes, 2):
            raise ValueError(f"values must be {(self.mesh.n_nodes, 2)}, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("displacement values must be finite")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def zero(cls, mesh: TriMesh) -> "DisplacementField":
        return cls(mesh, np.zeros((mesh.n_nodes, 2)))


def field_eval(field: DisplacementField, points: np.ndarray) -> np.ndarray:
    """Interpolate the field at physical points, shape (..., 2)."""
    tri_idx, bary = locate(field.mesh, points)
    corner_vals = field.values[field.mesh.triangles[tri_idx]]  # (..., 3, 2)
    return np.einsum("...k,...kj->...j", bary, corner_vals)


def rasterize(field: DisplacementField, n: int) -> np.ndarray:
    """Sample the field at the pixel centers of an n x n image, (n, n, 2)."""
    a = field.mesh.extent
    h = 2.0 * a / n
    c = -a + (np.arange(n) + 0.5) * h
    X, Y = np.meshgrid(c, c, indexing="xy")
    pts = np.stack([X, Y], axis=-1)
    return field_eval(field, pts)


def triangle_gradients(field: DisplacementField) -> np.ndarray:
    """Displacement gradient du_i/dx_j per triangle, shape (t, 2, 2).

    P1 interpolation makes the gradient constant inside each triangle.
    """
    mesh = field.mesh
    tris = mesh.triangles
    p0 = mesh.nodes[tris[:, 0]]
    p1 = mesh.nodes[tris[:, 1]]
    p2 = mesh.nodes[tris[:, 2]]
    v0 = field.values[tris[:, 0]]
    v1 = field.values[tris[:, 1]]
    v2 = field.values[tris[:, 2]]
    det = ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
           - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))
    # grad lambda_1 = ((p2-p0) rotated), etc.; assemble du/dx directly
    d1 = v1 - v0  # (t, 2)
    d2 = v2 - v0
    e1 = p1 - p0
    e2 = p2 - p0
    grad = np.empty((len(tris), 2, 2))
    # du_i/dx = (d1_i * e2_y - d2_i * e1_y) / det
    # du_i/dy = (-d1_i * e2_x + d2_i * e1_x) / det
    for i in range(2):
        grad[:, i, 0] = (d1[:, i] * e2[:, 1] - d2[:, i] * e1[:, 1]) / det
        grad[:, i, 1] = (-d1[:, i] * e2[:, 0] + d2[:, i] * e1[:, 0]) / det
    return grad


def field_jacobian(field: DisplacementField, points: np.ndarray) -> np.ndarray:
    """Displacement gradient at physical points, shape (..., 2, 2)."""
    tri_idx, _ = locate(field.mesh, points)
    return triangle_gradients(field)[tri_idx]


def jacobian_ratios(field: DisplacementField) -> np.ndarray:
    """Per-triangle area ratio det(I + grad u) of the deformed mesh.

    1 means locally area-preserving; negative means the triangle folded.
    """
    g = triangle_gradients(field)
    return (1.0 + g[:, 0, 0]) * (1.0 + g[:, 1, 1]) - g[:, 0, 1] * g[:, 1, 0]


def write_field_csv(field: DisplacementField, path: str | Path) -> None:
    """Nodal export: one row per node (node, x, y, u_x, u_y)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["node", "x", "y", "u_x", "u_y"])
    for idx, ((x, y), (ux, uy)) in enumerate(zip(field.mesh.nodes, field.values)):
        writer.writerow([idx, repr(float(x)), repr(float(y)),
                         repr(float(ux)), repr(float(uy))])
    Path(path).write_text(buf.getvalue())


def read_field_csv(path: str | Path, mesh: TriMesh) -> DisplacementField:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        next(reader)
        rows = sorted((int(r[0]), float(r[3]), float(r[4])) for r in reader)
    values = np.array([[ux, uy] for _, ux, uy in rows])
    return DisplacementField(mesh, values)


def write_field_vtk(field: DisplacementField, n: int, path: str | Path) -> None:
    """Rasterized legacy-VTK structured-points export for external viewers."""
    a = field.mesh.extent
    h = 2.0 * a / n
    disp = rasterize(field, n)
    lines = [
        "# vtk DataFile Version 3.0",
        "displacement field",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {n} {n} 1",
        f"ORIGIN {-a + 0.5 * h} {-a + 0.5 * h} 0.0",
        f"SPACING {h} {h} 1.0",
        f"POINT_DATA {n * n}",
        "VECTORS displacement double",
    ]
    for row in disp.reshape(-1, 2):
        lines.append(f"{float(row[0])!r} {float(row[1])!r} 0.0")
    Path(path).write_text("\n".join(lines) + "\n")
