"""Fine-scale correctors, multiscale bases and alpha-coupling correctors.

A corrector on patch omega_k(K) solves the kernel-constrained problem

    find q in V_f(omega_k(K)):  a(q, w) = l_K(w)  for all w in V_f(omega_k(K))

as the saddle-point system [[A_pp, C^T], [C, 0]] with C the rows of I_H that
touch the patch. Fine dofs are admitted on the patch when every fine triangle
around the vertex belongs to the patch, so supports never leave the patch.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import (
    BoundaryConfig,
    assemble_coupling,
    assemble_elasticity,
    assemble_thermal,
)
from .coefficients import CoefficientField
from .interpolation import InterpolationOperator, build_I_H
from .mesh import MeshHierarchy, coarse_patch

log = logging.getLogger(__name__)

FIELDS = ("elasticity", "thermal")


class CorrectorError(RuntimeError):
    pass


@dataclass(eq=False)
class FieldContext:
    """Everything a patch solve needs for one of the two fields."""

    name: str
    hierarchy: MeshHierarchy
    coefficients: CoefficientField
    interp: InterpolationOperator
    A: sp.csr_matrix  # fine stiffness on free dofs
    _factors: dict = field(default_factory=dict, repr=False)

    @property
    def is_trivial(self) -> bool:
        """True when the fine and coarse meshes coincide, so V_f = {0}."""
        return self.hierarchy.ratio == 1

    def local_stiffness(self, K: int) -> sp.csr_matrix:
        children = self.hierarchy.elem_children[K]
        mesh, dm = self.hierarchy.fine, self.interp.fine_dofs
        if self.name == "elasticity":
            return assemble_elasticity(mesh, self.coefficients, dm, elements=children)
        return assemble_thermal(mesh, self.coefficients, dm, elements=children)

    def coarse_element_dofs(self, K: int) -> np.ndarray:
        """Coarse free dofs of the vertices of K."""
        cdm = self.interp.coarse_dofs
        dofs = cdm.element_dofs()[K]
        free = cdm.full_to_free[dofs]
        return free[free >= 0]


def build_field_context(hierarchy: MeshHierarchy, coefficients: CoefficientField,
                        bc: BoundaryConfig, name: str) -> FieldContext:
    if name not in FIELDS:
        raise ValueError(f"unknown field {name!r}")
    fine = hierarchy.fine
    if name == "elasticity":
        interp = build_I_H(hierarchy, "vector2", bc.dirichlet_u)
        A = assemble_elasticity(fine, coefficients, interp.fine_dofs)
    else:
        interp = build_I_H(hierarchy, "scalar", bc.dirichlet_theta)
        A = assemble_thermal(fine, coefficients, interp.fine_dofs)
    return FieldContext(name, hierarchy, coefficients, interp, A)


def patch_fine_dofs(ctx: FieldContext, fine_elements: np.ndarray) -> np.ndarray:
    """Free fine dofs whose vertex is surrounded by patch triangles only."""
    mesh = ctx.hierarchy.fine
    outside = np.ones(mesh.num_triangles)
    outside[fine_elements] = 0.0
    inner = (mesh.vertex_elements @ outside) == 0
    dm = ctx.interp.fine_dofs
    verts = np.flatnonzero(inner & ~dm.fixed_vertices)
    full = verts if dm.ncomp == 1 else np.stack([2 * verts, 2 * verts + 1], axis=1).ravel()
    return dm.full_to_free[full]


class PatchProblem:
    """Factorized saddle-point system for one patch (or the whole domain)."""

    def __init__(self, ctx: FieldContext, dofs: np.ndarray):
        self.dofs = dofs
        C = ctx.interp.matrix_csc[:, dofs].tocsr()
        rows = np.flatnonzero(np.diff(C.indptr))
        C = C[rows]
        self.num_constraints = len(rows)
        App = ctx.A[dofs][:, dofs]
        S = sp.bmat([[App, C.T], [C, None]], format="csc")
        try:
            self.lu = splu(S)
        except RuntimeError as exc:
            raise CorrectorError(f"singular corrector system ({exc})") from exc

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve for fine-dof right sides (n_fine_free x ncols); returns patch values."""
        rhs = np.asarray(rhs)
        if rhs.ndim == 1:
            rhs = rhs[:, None]
        b = np.zeros((len(self.dofs) + self.num_constraints, rhs.shape[1]))
        b[: len(self.dofs)] = rhs[self.dofs]
        x = self.lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise CorrectorError("non-finite corrector values")
        return x[: len(self.dofs)]


def patch_problem(ctx: FieldContext, K: Optional[int], k: Optional[int]) -> PatchProblem:
    """Factorize the patch system; ``k=None`` means the whole domain (cached)."""
    if k is None:
        prob = ctx._factors.get(None)
        if prob is None:
            prob = PatchProblem(ctx, np.arange(ctx.interp.fine_dofs.num_free))
            ctx._factors[None] = prob
        return prob
    dofs = patch_fine_dofs(ctx, coarse_patch(ctx.hierarchy, K, k).fine_elements)
    return PatchProblem(ctx, dofs)


def solve_patch_corrector(ctx: FieldContext, K: int, k: Optional[int], source: np.ndarray) -> np.ndarray:
    """Local Ritz corrector of ``source`` (fine free vector) driven by the form on K only."""
    src = np.asarray(source, dtype=float)
    if ctx.is_trivial:
        return np.zeros_like(src)
    prob = patch_problem(ctx, K, k)
    vals = prob.solve(ctx.local_stiffness(K) @ src)
    out = np.zeros((len(src), vals.shape[1]))
    out[prob.dofs] = vals
    return out[:, 0] if src.ndim == 1 else out


@dataclass(frozen=True, eq=False)
class CorrectorSet:
    field: str
    k: Optional[int]  # None for the global (k = infinity) correctors
    matrix: sp.csr_matrix  # fine free x coarse free, column x = R_{f,k} lambda_x
    supports: dict  # coarse element -> fine free dofs of its patch


CHUNK = 64


def _blocks_to_sparse(blocks, shape) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for dofs, cdofs, values in blocks:
        rows.append(np.repeat(dofs, len(cdofs)))
        cols.append(np.tile(cdofs, len(dofs)))
        vals.append(values.ravel())
    M = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape
    ).tocsr()
    M.sum_duplicates()
    return M


def _sweep(fn, n_elements: int, shapes, threads: int):
    """Apply ``fn(K)`` to every coarse element and sum its blocks into sparse matrices.

    ``fn`` returns one (dofs, coarse dofs, values) block per output. Elements are
    processed in fixed chunks and summed in element order, so the result does
    not depend on the thread count.
    """
    totals = [sp.csr_matrix(shape) for shape in shapes]
    supports = {}
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for start in range(0, n_elements, CHUNK):
            elems = range(start, min(start + CHUNK, n_elements))
            results = list(pool.map(fn, elems)) if pool else [fn(K) for K in elems]
            for K, res in zip(elems, results):
                supports[K] = res[0][0]
            for i in range(len(shapes)):
                totals[i] = totals[i] + _blocks_to_sparse([r[i] for r in results], shapes[i])
    finally:
        if pool:
            pool.shutdown()
    for T in totals:
        T.sort_indices()
    return totals, supports


def build_corrector_set(ctx: FieldContext, k: Optional[int], threads: int = 1) -> CorrectorSet:
    """R_{f,k} applied to every coarse basis function, summed over coarse elements."""
    if k is not None and k < 0:
        raise ValueError("k must be >= 0 or None")
    P = ctx.interp.prolongation
    shape = P.shape
    if ctx.is_trivial:
        return CorrectorSet(ctx.name, k, sp.csr_matrix(shape), {})
    if k is None:
        prob = patch_problem(ctx, None, None)
        vals = prob.solve((ctx.A @ P).toarray())
        R = sp.csr_matrix(vals)
        R.eliminate_zeros()
        return CorrectorSet(ctx.name, None, R, {})

    def one(K):
        prob = patch_problem(ctx, K, k)
        return (_basis_block(ctx, prob, K),)

    (R,), supports = _sweep(one, ctx.hierarchy.coarse.num_triangles, [shape], threads)
    return CorrectorSet(ctx.name, k, R, supports)


def _basis_block(ctx, prob, K):
    cdofs = ctx.coarse_element_dofs(K)
    if len(cdofs) == 0:
        return prob.dofs, cdofs, np.zeros((len(prob.dofs), 0))
    rhs = (ctx.local_stiffness(K) @ ctx.interp.prolongation[:, cdofs]).toarray()
    return prob.dofs, cdofs, prob.solve(rhs)


def _alpha_block(u_ctx, theta_ctx, Phi, prob, K):
    fine = u_ctx.hierarchy.fine
    BK = assemble_coupling(fine, u_ctx.coefficients, u_ctx.interp.fine_dofs,
                           theta_ctx.interp.fine_dofs, elements=u_ctx.hierarchy.elem_children[K])
    rhs = (BK @ Phi).tocsc()
    ys = np.flatnonzero(np.diff(rhs.indptr))
    if len(ys) == 0:
        return prob.dofs, ys, np.zeros((len(prob.dofs), 0))
    return prob.dofs, ys, prob.solve(rhs[:, ys].toarray())


@dataclass(frozen=True, eq=False)
class MultiscaleBasis:
    u_basis: sp.csr_matrix  # fine u free x coarse u free
    theta_basis: sp.csr_matrix  # fine theta free x coarse theta free
    k: Optional[int]
    hierarchy: MeshHierarchy

    @property
    def dimension(self) -> int:
        return self.u_basis.shape[1] + self.theta_basis.shape[1]


def build_ms_basis(u_ctx: FieldContext, u_corr: CorrectorSet,
                   theta_ctx: FieldContext, theta_corr: CorrectorSet) -> MultiscaleBasis:
    if u_corr.k != theta_corr.k:
        raise ValueError(f"corrector sets use different k ({u_corr.k} vs {theta_corr.k})")
    if u_corr.field != "elasticity" or theta_corr.field != "thermal":
        raise ValueError("expected elasticity and thermal corrector sets")
    Phi_u = (u_ctx.interp.prolongation - u_corr.matrix).tocsr()
    Phi_t = (theta_ctx.interp.prolongation - theta_corr.matrix).tocsr()
    return MultiscaleBasis(Phi_u, Phi_t, u_corr.k, u_ctx.hierarchy)


@dataclass(frozen=True, eq=False)
class AlphaCorrectorSet:
    k: Optional[int]
    X: sp.csr_matrix  # fine u free x coarse theta free; column y = sum_K x^K_y


def build_alpha_correctors(u_ctx: FieldContext, theta_ctx: FieldContext, basis: MultiscaleBasis,
                           threads: int = 1) -> AlphaCorrectorSet:
    """x^K_y: elasticity correctors driven by (alpha phi_y, div w)_K, phi_y the theta ms basis."""
    k = basis.k
    Phi = basis.theta_basis
    shape = (u_ctx.interp.fine_dofs.num_free, Phi.shape[1])
    if u_ctx.is_trivial:
        return AlphaCorrectorSet(k, sp.csr_matrix(shape))
    if k is None:
        fine = u_ctx.hierarchy.fine
        B = assemble_coupling(fine, u_ctx.coefficients, u_ctx.interp.fine_dofs, theta_ctx.interp.fine_dofs)
        X = sp.csr_matrix(patch_problem(u_ctx, None, None).solve((B @ Phi).toarray()))
        X.eliminate_zeros()
        return AlphaCorrectorSet(None, X)

    def one(K):
        return (_alpha_block(u_ctx, theta_ctx, Phi, patch_problem(u_ctx, K, k), K),)

    (X,), _ = _sweep(one, u_ctx.hierarchy.coarse.num_triangles, [shape], threads)
    return AlphaCorrectorSet(k, X)


def build_lod(u_ctx: FieldContext, theta_ctx: FieldContext, k: Optional[int], threads: int = 1,
              alpha_correction: bool = True):
    """Thermal correctors, then one elasticity sweep reusing each patch factor for
    the displacement basis and the alpha correctors. Returns (basis, alpha, (R_u, R_theta))."""
    R_t = build_corrector_set(theta_ctx, k, threads)
    Phi_t = (theta_ctx.interp.prolongation - R_t.matrix).tocsr()
    shape_u = u_ctx.interp.prolongation.shape
    shape_x = (shape_u[0], Phi_t.shape[1])
    if k is None or u_ctx.is_trivial:
        R_u = build_corrector_set(u_ctx, k, threads)
        basis = build_ms_basis(u_ctx, R_u, theta_ctx, R_t)
        alpha = build_alpha_correctors(u_ctx, theta_ctx, basis, threads) if alpha_correction else None
        return basis, alpha, (R_u, R_t)

    def one(K):
        prob = patch_problem(u_ctx, K, k)
        b = _basis_block(u_ctx, prob, K)
        if not alpha_correction:
            return b, (prob.dofs, np.zeros(0, int), np.zeros((len(prob.dofs), 0)))
        return b, _alpha_block(u_ctx, theta_ctx, Phi_t, prob, K)

    (R, X), supports = _sweep(one, u_ctx.hierarchy.coarse.num_triangles, [shape_u, shape_x], threads)
    R_u = CorrectorSet("elasticity", k, R, supports)
    basis = build_ms_basis(u_ctx, R_u, theta_ctx, R_t)
    alpha = AlphaCorrectorSet(k, X) if alpha_correction else None
    return basis, alpha, (R_u, R_t)


def ms_ritz_theta(v: np.ndarray, theta_basis: sp.csr_matrix, thermal: sp.csr_matrix) -> np.ndarray:
    """Coefficients of the kappa-Galerkin projection of a fine theta vector onto V_ms."""
    G = (theta_basis.T @ thermal @ theta_basis).toarray()
    rhs = theta_basis.T @ (thermal @ v)
    return np.linalg.solve(G, rhs)


def default_k(H: float, c: float = 1.0) -> int:
    """Patch size k = round(c log2(1/H)), halves rounded up, at least 1."""
    # the tolerance keeps H = sqrt(2) 2^-m (exact halves) from flipping on rounding noise
    return max(1, int(math.floor(c * math.log2(1.0 / H) + 0.5 + 1e-9)))


def energy_norms(D: sp.spmatrix, A: sp.spmatrix) -> np.ndarray:
    """Column energy norms sqrt(d^T A d)."""
    D = sp.csc_matrix(D)
    return np.sqrt(np.maximum(np.asarray((D.multiply(A @ D)).sum(axis=0)).ravel(), 0.0))
