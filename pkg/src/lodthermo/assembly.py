"""P1 spaces with Dirichlet elimination and assembly of the thermoelastic forms.

Vector fields use interleaved ordering: full dof ``2*v + c`` is component ``c``
at vertex ``v``. All operators are returned as CSR matrices on free dofs.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .coefficients import CoefficientField
from .mesh import SIDES, TriMesh

LOCAL_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


@dataclass(frozen=True)
class BoundaryConfig:
    dirichlet_u: frozenset = frozenset(SIDES)
    dirichlet_theta: frozenset = frozenset(SIDES)

    def __post_init__(self):
        for sides in (self.dirichlet_u, self.dirichlet_theta):
            bad = set(sides) - set(SIDES)
            if bad:
                raise ValueError(f"unknown boundary sides {sorted(bad)}")
        object.__setattr__(self, "dirichlet_u", frozenset(self.dirichlet_u))
        object.__setattr__(self, "dirichlet_theta", frozenset(self.dirichlet_theta))

    @property
    def neumann_u(self) -> frozenset:
        return frozenset(SIDES) - self.dirichlet_u

    @property
    def neumann_theta(self) -> frozenset:
        return frozenset(SIDES) - self.dirichlet_theta


@dataclass(frozen=True, eq=False)
class DofMap:
    kind: str  # "scalar" | "vector2"
    mesh: TriMesh
    free: np.ndarray  # full dof indices kept in the reduced system
    fixed_vertices: np.ndarray  # bool per vertex

    @property
    def ncomp(self) -> int:
        return 2 if self.kind == "vector2" else 1

    @property
    def total_dofs(self) -> int:
        return self.ncomp * self.mesh.num_vertices

    @property
    def num_free(self) -> int:
        return len(self.free)

    @cached_property
    def full_to_free(self) -> np.ndarray:
        """Free index of each full dof, -1 for constrained dofs."""
        out = -np.ones(self.total_dofs, dtype=np.int64)
        out[self.free] = np.arange(len(self.free))
        return out

    @cached_property
    def restriction(self) -> sp.csr_matrix:
        """Selection matrix free x full."""
        n = len(self.free)
        return sp.csr_matrix((np.ones(n), (np.arange(n), self.free)), shape=(n, self.total_dofs))

    def expand(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros(v.shape[:-1] + (self.total_dofs,))
        out[..., self.free] = v
        return out

    def element_dofs(self) -> np.ndarray:
        """Full dof indices per triangle, shape (nt, 3*ncomp)."""
        tri = self.mesh.triangles
        if self.ncomp == 1:
            return tri
        return np.stack([2 * tri, 2 * tri + 1], axis=2).reshape(len(tri), 6)

    def interpolate(self, fn: Callable, *args) -> np.ndarray:
        """Nodal values of ``fn(x, y, *args)`` on the free dofs."""
        x, y = self.mesh.vertices.T
        return self.vertex_values(fn(x, y, *args))[self.free]

    def vertex_values(self, vals) -> np.ndarray:
        """Broadcast scalar/per-vertex (or per-component) data to a full dof vector."""
        nv = self.mesh.num_vertices
        vals = np.asarray(vals, dtype=float)
        if self.ncomp == 2:
            vals = np.broadcast_to(vals.reshape(2, -1), (2, nv)).T.ravel()
        else:
            vals = np.broadcast_to(vals, (nv,))
        if not np.all(np.isfinite(vals)):
            raise ValueError("function values must be finite")
        return vals


def make_dofmap(mesh: TriMesh, kind: str, dirichlet_sides=()) -> DofMap:
    if kind not in ("scalar", "vector2"):
        raise ValueError(f"unknown dof kind {kind!r}")
    fixed = mesh.side_vertices(set(dirichlet_sides))
    free_v = np.flatnonzero(~fixed)
    if kind == "vector2":
        free = np.stack([2 * free_v, 2 * free_v + 1], axis=1).ravel()
    else:
        free = free_v
    return DofMap(kind, mesh, free, fixed)


def _check(mesh: TriMesh, field: CoefficientField | None, *dofmaps: DofMap):
    if field is not None and field.mesh_level != mesh.level:
        raise ValueError(f"coefficient level {field.mesh_level} does not match mesh level {mesh.level}")
    for dm in dofmaps:
        if dm.mesh.level != mesh.level:
            raise ValueError("dof map lives on a different mesh")


def _select(elements, nt):
    return np.arange(nt) if elements is None else np.asarray(elements)


def _scatter(local, rows_full, cols_full, row_map: DofMap, col_map: DofMap) -> sp.csr_matrix:
    r = row_map.full_to_free[rows_full]
    c = col_map.full_to_free[cols_full]
    nr, nc = local.shape[1], local.shape[2]
    R = np.repeat(r[:, :, None], nc, axis=2)
    C = np.repeat(c[:, None, :], nr, axis=1)
    keep = (R >= 0) & (C >= 0)
    A = sp.coo_matrix(
        (local[keep], (R[keep], C[keep])), shape=(row_map.num_free, col_map.num_free)
    ).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def elasticity_local(mesh: TriMesh, field: CoefficientField, elements=None) -> np.ndarray:
    """Element matrices of (sigma(v):eps(w)), shape (ne, 6, 6)."""
    e = _select(elements, mesh.num_triangles)
    g = mesh.gradients[e]  # (ne, 3, 2)
    area = mesh.areas[e]
    mu, lam = field.mu[e], field.lam[e]
    gg = np.einsum("tai,tbi->tab", g, g)
    eye = np.eye(2)
    # 2 mu eps(phi_a e_c):eps(phi_b e_d) = mu (delta_cd g_a.g_b + g_a[d] g_b[c])
    K = mu[:, None, None, None, None] * (
        np.einsum("tab,cd->tacbd", gg, eye) + np.einsum("tad,tbc->tacbd", g, g)
    ) + lam[:, None, None, None, None] * np.einsum("tac,tbd->tacbd", g, g)
    return (area[:, None, None, None, None] * K).reshape(len(e), 6, 6)


def thermal_local(mesh: TriMesh, field: CoefficientField, elements=None) -> np.ndarray:
    e = _select(elements, mesh.num_triangles)
    g = mesh.gradients[e]
    kap = field.kappa_matrices[e]
    return mesh.areas[e][:, None, None] * np.einsum("tai,tij,tbj->tab", g, kap, g)


def coupling_local(mesh: TriMesh, field: CoefficientField, elements=None) -> np.ndarray:
    """Element matrices of (alpha theta, div v), rows = 6 u-dofs, cols = 3 theta-dofs."""
    e = _select(elements, mesh.num_triangles)
    g = mesh.gradients[e]  # d_c phi_a
    w = field.alpha[e] * mesh.areas[e] / 3.0
    return (w[:, None, None] * np.repeat(g.reshape(len(e), 6, 1), 3, axis=2))


def mass_local(mesh: TriMesh, elements=None) -> np.ndarray:
    e = _select(elements, mesh.num_triangles)
    return mesh.areas[e][:, None, None] * LOCAL_MASS


def _assemble(local, row_map, col_map, elements):
    e = _select(elements, row_map.mesh.num_triangles)
    return _scatter(local, row_map.element_dofs()[e], col_map.element_dofs()[e], row_map, col_map)


def assemble_elasticity(mesh, field, dofmap_u, elements=None) -> sp.csr_matrix:
    _check(mesh, field, dofmap_u)
    return _assemble(elasticity_local(mesh, field, elements), dofmap_u, dofmap_u, elements)


def assemble_thermal(mesh, field, dofmap_theta, elements=None) -> sp.csr_matrix:
    _check(mesh, field, dofmap_theta)
    return _assemble(thermal_local(mesh, field, elements), dofmap_theta, dofmap_theta, elements)


def assemble_coupling(mesh, field, dofmap_u, dofmap_theta, elements=None) -> sp.csr_matrix:
    _check(mesh, field, dofmap_u, dofmap_theta)
    return _assemble(coupling_local(mesh, field, elements), dofmap_u, dofmap_theta, elements)


def assemble_mass(mesh, dofmap, elements=None) -> sp.csr_matrix:
    """Consistent mass matrix; block diagonal over components for vector maps."""
    _check(mesh, None, dofmap)
    local = mass_local(mesh, elements)
    if dofmap.ncomp == 2:
        local = np.einsum("tab,cd->tacbd", local, np.eye(2)).reshape(len(local), 6, 6)
    return _assemble(local, dofmap, dofmap, elements)


def assemble_gradient_stiffness(mesh, dofmap, elements=None) -> sp.csr_matrix:
    """Gram matrix of (grad v, grad w), Frobenius for vector fields."""
    _check(mesh, None, dofmap)
    e = _select(elements, mesh.num_triangles)
    g = mesh.gradients[e]
    local = mesh.areas[e][:, None, None] * np.einsum("tai,tbi->tab", g, g)
    if dofmap.ncomp == 2:
        local = np.einsum("tab,cd->tacbd", local, np.eye(2)).reshape(len(e), 6, 6)
    return _assemble(local, dofmap, dofmap, elements)


def full_mass(mesh: TriMesh, dofmap: DofMap) -> sp.csr_matrix:
    """Mass matrix rows on free dofs, columns on all dofs (for load pairing)."""
    local = mass_local(mesh)
    if dofmap.ncomp == 2:
        local = np.einsum("tab,cd->tacbd", local, np.eye(2)).reshape(len(local), 6, 6)
    all_map = DofMap(dofmap.kind, mesh, np.arange(dofmap.total_dofs), np.zeros(mesh.num_vertices, bool))
    return _scatter(local, dofmap.element_dofs(), all_map.element_dofs(), dofmap, all_map)


def assemble_load_vector(mesh, dofmap, fn: Callable, t: float = 0.0) -> np.ndarray:
    """(fn(t), v) for free test functions, with fn interpolated at all vertices.

    ``fn(x, y, t)`` returns an array of vertex values (scalar maps) or a pair of
    arrays (vector maps); constants broadcast.
    """
    _check(mesh, None, dofmap)
    x, y = mesh.vertices.T
    return full_mass(mesh, dofmap) @ dofmap.vertex_values(fn(x, y, t))


# degree-5 seven-point rule on the reference triangle (barycentric, weights sum to 1)
_R15 = np.sqrt(15.0)
_B1, _B2 = (6 + _R15) / 21, (6 - _R15) / 21
_A1, _A2 = 1 - 2 * _B1, 1 - 2 * _B2
QUAD7_BARY = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
        [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
    ]
)
QUAD7_WEIGHTS = np.array([9 / 40] + [(155 + _R15) / 1200] * 3 + [(155 - _R15) / 1200] * 3)


def quadrature_points(mesh: TriMesh) -> tuple[np.ndarray, np.ndarray]:
    """Physical points (nt, 7, 2) and weights (nt, 7) of the degree-5 rule."""
    p = mesh.vertices[mesh.triangles]
    pts = np.einsum("qa,tai->tqi", QUAD7_BARY, p)
    return pts, mesh.areas[:, None] * QUAD7_WEIGHTS[None, :]


def project_l2(mesh: TriMesh, dofmap: DofMap, fn: Callable) -> tuple[np.ndarray, np.ndarray]:
    """Right side (fn, phi) by degree-5 quadrature and the L2 projection onto the free space."""
    pts, w = quadrature_points(mesh)
    vals = np.asarray(fn(pts[..., 0], pts[..., 1]), dtype=float)
    if dofmap.ncomp != 1:
        raise ValueError("L2 projection implemented for scalar spaces")
    contrib = np.einsum("tq,tq,qa->ta", w, vals, QUAD7_BARY)
    rhs_full = np.bincount(mesh.triangles.ravel(), contrib.ravel(), minlength=mesh.num_vertices)
    rhs = rhs_full[dofmap.free]
    M = assemble_mass(mesh, dofmap).tocsc()
    return rhs, spsolve(M, rhs)


def write_operator(A: sp.spmatrix, path) -> None:
    """Sorted coordinate text dump, one ``row col value`` per line."""
    C = sp.coo_matrix(A)
    order = np.lexsort((C.col, C.row))
    with open(path, "w") as fh:
        for r, c, v in zip(C.row[order], C.col[order], C.data[order]):
            fh.write(f"{r} {c} {v:.17g}\n")
