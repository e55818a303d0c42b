"""Quasi-interpolation I_H = E_H o Pi_H from a fine P1 space to the coarse one."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .assembly import LOCAL_MASS, DofMap, make_dofmap
from .mesh import MeshHierarchy


def _vectorize(A: sp.spmatrix, kind: str) -> sp.csr_matrix:
    """Lift a scalar vertex operator to interleaved two-component dofs."""
    if kind == "scalar":
        return sp.csr_matrix(A)
    return sp.kron(A, sp.eye(2), format="csr")


def build_piecewise_L2_projection(hierarchy: MeshHierarchy, kind: str = "scalar") -> sp.csr_matrix:
    """Elementwise L2 projection onto P1(T_H).

    Maps fine nodal values (all vertices) to discontinuous coarse values, three
    per coarse element in the element's vertex order (row ``3*K + a``).
    """
    coarse, fine = hierarchy.coarse, hierarchy.fine
    # coarse barycentrics of every fine vertex w.r.t. its parent, per fine element
    tri_c = hierarchy.parent
    pts = fine.vertices[fine.triangles]  # (nt_f, 3, 2)
    pc = coarse.vertices[coarse.triangles[tri_c]]  # (nt_f, 3, 2)
    jac = np.stack([pc[:, 1] - pc[:, 0], pc[:, 2] - pc[:, 0]], axis=2)
    ref = np.linalg.solve(jac[:, None], (pts - pc[:, :1])[..., None])[..., 0]
    lam = np.stack([1 - ref[..., 0] - ref[..., 1], ref[..., 0], ref[..., 1]], axis=2)  # (nt_f, 3 fine, 3 coarse)

    # R[3K+a, fine vertex j] = sum_t (lambda_a^K, phi_j)_t
    mloc = fine.areas[:, None, None] * LOCAL_MASS
    contrib = np.einsum("tij,tia->taj", mloc, lam)  # (nt_f, 3 coarse, 3 fine)
    rows = 3 * tri_c[:, None, None] + np.arange(3)[None, :, None]
    cols = np.broadcast_to(fine.triangles[:, None, :], contrib.shape)
    R = sp.coo_matrix(
        (contrib.ravel(), (np.broadcast_to(rows, contrib.shape).ravel(), cols.ravel())),
        shape=(3 * coarse.num_triangles, fine.num_vertices),
    ).tocsr()

    ginv = np.linalg.inv(coarse.areas[:, None, None] * LOCAL_MASS)
    G = sp.block_diag(list(ginv), format="csr")
    out = G @ R
    out.eliminate_zeros()
    return _vectorize(out, kind)


def build_averaging(hierarchy: MeshHierarchy, kind: str = "scalar") -> sp.csr_matrix:
    """Nodal mean of the adjacent element traces, coarse vertices x (3*coarse elements)."""
    coarse = hierarchy.coarse
    nt = coarse.num_triangles
    verts = coarse.triangles.ravel()
    card = np.bincount(verts, minlength=coarse.num_vertices)
    E = sp.csr_matrix(
        (1.0 / card[verts], (verts, np.arange(3 * nt))), shape=(coarse.num_vertices, 3 * nt)
    )
    return _vectorize(E, kind)


@dataclass(frozen=True, eq=False)
class InterpolationOperator:
    kind: str
    matrix: sp.csr_matrix  # coarse free x fine free
    prolongation: sp.csr_matrix  # fine free x coarse free
    coarse_dofs: DofMap
    fine_dofs: DofMap
    hierarchy: MeshHierarchy

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def prolong(self, vH: np.ndarray) -> np.ndarray:
        return self.prolongation @ vH

    @cached_property
    def matrix_csc(self) -> sp.csc_matrix:
        return self.matrix.tocsc()


def build_I_H(hierarchy: MeshHierarchy, kind: str = "scalar", dirichlet_sides=()) -> InterpolationOperator:
    """Compose averaging and projection, dropping Dirichlet dofs on both levels."""
    coarse_dofs = make_dofmap(hierarchy.coarse, kind, dirichlet_sides)
    fine_dofs = make_dofmap(hierarchy.fine, kind, dirichlet_sides)
    full = build_averaging(hierarchy, kind) @ build_piecewise_L2_projection(hierarchy, kind)
    full = sp.csr_matrix(full)
    full.data[np.abs(full.data) < 1e-15 * np.abs(full.data).max()] = 0.0
    full.eliminate_zeros()
    matrix = full[coarse_dofs.free][:, fine_dofs.free].tocsr()
    matrix.sort_indices()
    P = _vectorize(hierarchy.prolongation, kind)
    prolongation = P[fine_dofs.free][:, coarse_dofs.free].tocsr()
    return InterpolationOperator(kind, matrix, prolongation, coarse_dofs, fine_dofs, hierarchy)


def kernel_dofs(I_H: InterpolationOperator) -> sp.csr_matrix:
    """Constraint rows C with V_f = {v : C v = 0}; one row per coarse free dof."""
    return I_H.matrix
