import math

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from lodthermo.assembly import BoundaryConfig, assemble_coupling, assemble_mass
from lodthermo.coefficients import (
    COMPOSITE_BACKGROUND,
    COMPOSITE_INCLUSION,
    default_composite_raster,
    from_constants,
    from_two_phase_raster,
)
from lodthermo.lod import (
    MultiscaleBasis,
    build_alpha_correctors,
    build_corrector_set,
    build_field_context,
    build_lod,
    build_ms_basis,
    default_k,
    energy_norms,
    ms_ritz_theta,
    patch_fine_dofs,
    solve_patch_corrector,
)
from lodthermo.mesh import SIDES, build_hierarchy, coarse_patch

BC1 = BoundaryConfig(frozenset({"bottom"}), frozenset(SIDES))


def composite(m_fine):
    return from_two_phase_raster(m_fine, default_composite_raster(min(32, 2**m_fine)),
                                 COMPOSITE_BACKGROUND, COMPOSITE_INCLUSION)


def dense_global_corrector(ctx, rhs):
    A = ctx.A.toarray()
    C = ctx.interp.matrix.toarray()
    n, m = A.shape[0], C.shape[0]
    S = np.block([[A, C.T], [C, np.zeros((m, m))]])
    b = np.vstack([rhs, np.zeros((m, rhs.shape[1]))])
    return np.linalg.solve(S, b)[:n]


@pytest.fixture(scope="module")
def small():
    h = build_hierarchy(1, 3)
    coeffs = composite(3)
    u = build_field_context(h, coeffs, BC1, "elasticity")
    t = build_field_context(h, coeffs, BC1, "thermal")
    return h, coeffs, u, t


@pytest.mark.parametrize("name", ["thermal", "elasticity"])
def test_global_corrector_matches_dense_oracle(small, name):
    h, coeffs, u, t = small
    ctx = u if name == "elasticity" else t
    R = build_corrector_set(ctx, None).matrix.toarray()
    ref = dense_global_corrector(ctx, (ctx.A @ ctx.interp.prolongation).toarray())
    np.testing.assert_allclose(R, ref, atol=1e-10 * np.abs(ref).max())


def test_patch_corrector_full_domain_sums_to_global():
    h = build_hierarchy(1, 3)
    ctx = build_field_context(h, from_constants(3, 1, 1, 1, 1), BoundaryConfig(), "thermal")
    x = 0  # free coarse dof: the centre vertex
    src = ctx.interp.prolongation[:, x].toarray().ravel()
    total = sum(solve_patch_corrector(ctx, K, 10, src) for K in range(h.coarse.num_triangles))
    glob = build_corrector_set(ctx, None).matrix[:, x].toarray().ravel()
    np.testing.assert_allclose(total, glob, atol=1e-12)
    assert np.all(solve_patch_corrector(ctx, 0, 2, np.zeros_like(src)) == 0)


def test_elasticity_corrector_nonzero(small):
    h, coeffs, u, t = small
    ctx = build_field_context(h, from_constants(3, 1.0, 1.0, 1, 1), BC1, "elasticity")
    R = build_corrector_set(ctx, 1).matrix
    assert energy_norms(R, ctx.A).max() > 1e-3


@pytest.mark.parametrize("k", [1, 2, None])
def test_kernel_property_and_ms_basis_interpolates(small, k):
    h, coeffs, u, t = small
    basis, alpha, (Ru, Rt) = build_lod(u, t, k)
    for ctx, R, Phi in ((u, Ru, basis.u_basis), (t, Rt, basis.theta_basis)):
        IR = ctx.interp.matrix @ R.matrix
        assert abs(IR).max() <= 1e-10 * max(1.0, abs(R.matrix).max())
        np.testing.assert_allclose((ctx.interp.matrix @ Phi).toarray(), np.eye(Phi.shape[1]), atol=1e-10)
    IX = u.interp.matrix @ alpha.X
    assert abs(IX).max() <= 1e-10 * max(1.0, abs(alpha.X).max())
    assert basis.dimension == u.interp.coarse_dofs.num_free + t.interp.coarse_dofs.num_free


def test_corrector_support_in_patches():
    h = build_hierarchy(2, 4)
    ctx = build_field_context(h, composite(4), BC1, "thermal")
    k = 1
    cs = build_corrector_set(ctx, k)
    R = cs.matrix.tocsc()
    cdm = ctx.interp.coarse_dofs
    for x in range(R.shape[1]):
        vertex = cdm.free[x]  # scalar map: one dof per vertex
        elems = h.coarse.vertex_elements[vertex].indices
        allowed = set()
        for K in elems:
            allowed |= set(patch_fine_dofs(ctx, coarse_patch(h, K, k).fine_elements))
            assert set(cs.supports[K]) == set(patch_fine_dofs(ctx, coarse_patch(h, K, k).fine_elements))
        assert set(R[:, x].indices) <= allowed


def test_global_orthogonality(small):
    h, coeffs, u, t = small
    basis, _, _ = build_lod(u, t, None, alpha_correction=False)
    rng = np.random.default_rng(0)
    for ctx, Phi in ((u, basis.u_basis), (t, basis.theta_basis)):
        n = ctx.interp.fine_dofs.num_free
        W = rng.standard_normal((n, 50))
        W = W - ctx.interp.prolongation @ (ctx.interp.matrix @ W)  # project onto the kernel
        assert np.abs(ctx.interp.matrix @ W).max() < 1e-10
        pair = Phi.T @ (ctx.A @ W)
        scale = np.outer(energy_norms(Phi, ctx.A), np.sqrt(np.einsum("ij,ij->j", W, ctx.A @ W)))
        assert np.abs(pair / scale).max() < 1e-9


def test_saturating_patch_equals_global():
    h = build_hierarchy(1, 3)
    ctx = build_field_context(h, composite(3), BC1, "elasticity")
    R_inf = build_corrector_set(ctx, None).matrix
    R_k = build_corrector_set(ctx, 4).matrix
    assert energy_norms(R_k - R_inf, ctx.A).max() < 1e-9


def test_decay_nonincreasing_on_8x8():
    h = build_hierarchy(3, 5)
    ctx = build_field_context(h, composite(5), BC1, "thermal")
    R_inf = build_corrector_set(ctx, None).matrix
    gaps = [energy_norms(build_corrector_set(ctx, k).matrix - R_inf, ctx.A).max() for k in (1, 2, 3, 4)]
    assert all(b <= a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < gaps[0]


def test_almost_orthogonality_improves_with_k():
    h = build_hierarchy(2, 4)
    ctx = build_field_context(h, composite(4), BC1, "thermal")
    rng = np.random.default_rng(1)
    W = rng.standard_normal((ctx.interp.fine_dofs.num_free, 20))
    W = W - ctx.interp.prolongation @ (ctx.interp.matrix @ W)
    viol = []
    for k in (1, 2, 3):
        Phi = ctx.interp.prolongation - build_corrector_set(ctx, k).matrix
        viol.append(np.abs(Phi.T @ (ctx.A @ W)).max())
    assert viol[0] > viol[1] > viol[2]


def test_alpha_correctors_zero_alpha():
    h = build_hierarchy(1, 3)
    coeffs = from_constants(3, 1.0, 1.0, 0.0, 1.0)
    u = build_field_context(h, coeffs, BC1, "elasticity")
    t = build_field_context(h, coeffs, BC1, "thermal")
    _, alpha, _ = build_lod(u, t, 1)
    assert alpha.X.nnz == 0 or abs(alpha.X).max() == 0


def test_alpha_correctors_global_dense_oracle():
    h = build_hierarchy(1, 3)
    coeffs = from_constants(3, 1.0, 2.0, 3.0, 1.0)
    u = build_field_context(h, coeffs, BC1, "elasticity")
    t = build_field_context(h, coeffs, BC1, "thermal")
    basis, alpha, _ = build_lod(u, t, None)
    B = assemble_coupling(h.fine, coeffs, u.interp.fine_dofs, t.interp.fine_dofs)
    ref = dense_global_corrector(u, (B @ basis.theta_basis).toarray())
    np.testing.assert_allclose(alpha.X.toarray(), ref, atol=1e-10 * np.abs(ref).max())
    # saturating local patches give the same aggregate
    basis4, alpha4, _ = build_lod(u, t, 4)
    np.testing.assert_allclose(alpha4.X.toarray(), ref, atol=1e-9 * np.abs(ref).max())


def test_alpha_correctors_linear_in_basis(small):
    h, coeffs, u, t = small
    basis, alpha, _ = build_lod(u, t, 1)
    doubled = MultiscaleBasis(basis.u_basis, 2 * basis.theta_basis, 1, h)
    X2 = build_alpha_correctors(u, t, doubled).X
    np.testing.assert_allclose(X2.toarray(), 2 * alpha.X.toarray(), atol=1e-12)
    X1 = build_alpha_correctors(u, t, basis).X
    assert abs(X1 - alpha.X).max() == 0


def test_build_ms_basis_validates(small):
    h, coeffs, u, t = small
    Ru, Rt = build_corrector_set(u, 1), build_corrector_set(t, 2)
    with pytest.raises(ValueError):
        build_ms_basis(u, Ru, t, Rt)
    with pytest.raises(ValueError):
        build_ms_basis(u, build_corrector_set(t, 1), t, Ru)
    with pytest.raises(ValueError):
        build_corrector_set(u, -1)


def test_threads_give_identical_results():
    h = build_hierarchy(2, 4)
    coeffs = composite(4)
    u = build_field_context(h, coeffs, BC1, "elasticity")
    t = build_field_context(h, coeffs, BC1, "thermal")
    b1, a1, _ = build_lod(u, t, 1, threads=1)
    b2, a2, _ = build_lod(u, t, 1, threads=3)
    for M1, M2 in ((b1.u_basis, b2.u_basis), (b1.theta_basis, b2.theta_basis), (a1.X, a2.X)):
        assert np.array_equal(M1.indptr, M2.indptr) and np.array_equal(M1.indices, M2.indices)
        assert np.array_equal(M1.data, M2.data)


def test_trivial_hierarchy_has_no_correction():
    h = build_hierarchy(2, 2)
    coeffs = from_constants(2, 1, 1, 1, 1)
    u = build_field_context(h, coeffs, BC1, "elasticity")
    t = build_field_context(h, coeffs, BC1, "thermal")
    basis, alpha, _ = build_lod(u, t, 1)
    assert abs(basis.u_basis - sp.eye(basis.u_basis.shape[0])).max() == 0
    assert alpha.X.nnz == 0


def test_ms_ritz_theta(small):
    h, coeffs, u, t = small
    basis, _, _ = build_lod(u, t, 1, alpha_correction=False)
    Phi = basis.theta_basis
    c = np.random.default_rng(3).standard_normal(Phi.shape[1])
    np.testing.assert_allclose(ms_ritz_theta(Phi @ c, Phi, t.A), c, atol=1e-10)
    assert np.all(ms_ritz_theta(np.zeros(Phi.shape[0]), Phi, t.A) == 0)


def test_ms_ritz_error_decreases_with_H():
    coeffs = composite(5)
    errs = []
    for mc in (1, 2, 3):
        h = build_hierarchy(mc, 5)
        t = build_field_context(h, coeffs, BC1, "thermal")
        Phi = t.interp.prolongation - build_corrector_set(t, default_k(math.sqrt(2) * 2.0**-mc) + 1).matrix
        # v = A_2^{-1} g with smooth g, so ||A_2 v|| stays bounded across levels
        dm = t.interp.fine_dofs
        g = assemble_mass(h.fine, dm) @ dm.interpolate(lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
        v = spsolve(t.A.tocsc(), g)
        e = v - Phi @ ms_ritz_theta(v, Phi, t.A)
        errs.append(np.sqrt(e @ (t.A @ e)))
    assert errs[0] > errs[1] > errs[2]
    rates = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(rates) > 0.8


def test_default_k():
    assert default_k(math.sqrt(2) / 2) == 1
    assert default_k(math.sqrt(2) * 2**-4) == 4
    assert default_k(0.9) == 1
    assert default_k(2.0**-4, c=0.5) == 2
    assert [default_k(math.sqrt(2) * 2.0**-m) for m in (1, 2, 3, 4, 5)] == [1, 2, 3, 4, 5]
