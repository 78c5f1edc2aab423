"""Linear-elastic regularization energy on P1 displacement fields.

The energy is S(u) = 1/2 * integral of sigma(u) : epsilon(u) with the
plane-strain stress sigma = lambda * tr(eps) * I + 2 * mu * eps.  On a
triangle mesh with linear shape functions the strain is constant per
element, so S(u) = 1/2 u^T K u with the standard constant-strain-triangle
stiffness matrix K.  Degrees of freedom interleave as
(node0_x, node0_y, node1_x, ...).

K is symmetric positive semidefinite; its kernel contains exactly the
rigid motions (two translations and the linearized rotation), which carry
no strain.  No boundary conditions are imposed: the data term is what pins
the rigid modes during registration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import TriMesh


@dataclass(frozen=True)
class ElasticParams:
    """Lame coefficients; both default to 1 as in the registration presets."""

    lam: float = 1.0
    mu: float = 1.0

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.lam < 0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")


def assemble_stiffness(mesh: TriMesh, params: ElasticParams = ElasticParams()) -> sp.csr_matrix:
    """Assemble the (2m x 2m) plane-strain stiffness matrix."""
    lam, mu = params.lam, params.mu
    D = np.array([[lam + 2 * mu, lam, 0.0],
                  [lam, lam + 2 * mu, 0.0],
                  [0.0, 0.0, mu]])
    rows, cols, vals = [], [], []
    for tri in mesh.triangles:
        xy = mesh.nodes[tri]
        x, y = xy[:, 0], xy[:, 1]
        area2 = ((x[1] - x[0]) * (y[2] - y[0]) - (x[2] - x[0]) * (y[1] - y[0]))
        beta = np.array([y[1] - y[2], y[2] - y[0], y[0] - y[1]]) / area2
        gamma = np.array([x[2] - x[1], x[0] - x[2], x[1] - x[0]]) / area2
        B = np.zeros((3, 6))
        B[0, 0::2] = beta
        B[1, 1::2] = gamma
        B[2, 0::2] = gamma
        B[2, 1::2] = beta
        Ke = 0.5 * area2 * (B.T @ D @ B)
        dof = np.empty(6, dtype=np.int64)
        dof[0::2] = 2 * tri
        dof[1::2] = 2 * tri + 1
        for a in range(6):
            rows.extend([dof[a]] * 6)
            cols.extend(dof)
            vals.extend(Ke[a])
    m = mesh.n_dof
    K = sp.coo_matrix((vals, (rows, cols)), shape=(m, m)).tocsr()
    K.sum_duplicates()
    return K


def energy_and_grad(K: sp.csr_matrix, u_flat: np.ndarray) -> tuple[float, np.ndarray]:
    """S(u) = 1/2 u^T K u and its gradient K u, on interleaved dof vectors."""
    Ku = K @ u_flat
    return 0.5 * float(u_flat @ Ku), Ku


def rigid_motions(mesh: TriMesh) -> np.ndarray:
    """Basis of the strain-free modes, shape (3, 2m): two translations
    plus the linearized rotation u(x, y) = (-y, x)."""
    m = mesh.n_nodes
    out = np.zeros((3, 2 * m))
    out[0, 0::2] = 1.0
    out[1, 1::2] = 1.0
    out[2, 0::2] = -mesh.nodes[:, 1]
    out[2, 1::2] = mesh.nodes[:, 0]
    return out


def write_stiffness_coo(K: sp.csr_matrix, path) -> None:
    """Debug export: 'row col value' per nonzero, row-major order."""
    coo = K.tocoo()
    order = np.lexsort((coo.col, coo.row))
    lines = [f"{coo.row[i]} {coo.col[i]} {float(coo.data[i])!r}" for i in order]
    from pathlib import Path
    Path(path).write_text("\n".join(lines) + "\n")
