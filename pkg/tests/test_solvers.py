from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp

from lodthermo.analysis import Seminorm
from lodthermo.assembly import BoundaryConfig
from lodthermo.coefficients import (
    COMPOSITE_BACKGROUND,
    COMPOSITE_INCLUSION,
    default_composite_raster,
    from_constants,
    from_two_phase_raster,
)
from lodthermo.lod import build_field_context, build_lod
from lodthermo.mesh import SIDES, build_hierarchy, build_uniform_mesh
from lodthermo.solvers import (
    ProblemData,
    SolverError,
    TimeGrid,
    coarse_discretization,
    fine_discretization,
    initial_displacement,
    solve_fem,
    solve_gfem,
    solve_gfem_uncorrected,
    zero_data,
)

BC1 = BoundaryConfig(frozenset({"bottom"}), frozenset(SIDES))
DATA1 = ProblemData(lambda x, y, t: (0.0, 0.0), lambda x, y, t: -10.0,
                    lambda x, y: 500 * x * (1 - x) * y * (1 - y))
DATA2 = ProblemData(lambda x, y, t: (1.0, 1.0), lambda x, y, t: 10.0,
                    lambda x, y: x * (1 - x) * y * (1 - y))


def composite(m):
    return from_two_phase_raster(m, default_composite_raster(min(32, 2**m)),
                                 COMPOSITE_BACKGROUND, COMPOSITE_INCLUSION)


def setup(mc, mf, coeffs, bc=BC1, data=DATA1, k=1, alpha_correction=True):
    h = build_hierarchy(mc, mf)
    disc, udm, tdm = fine_discretization(h.fine, coeffs, bc, data)
    u_ctx = build_field_context(h, coeffs, bc, "elasticity")
    t_ctx = build_field_context(h, coeffs, bc, "thermal")
    basis, alpha, _ = build_lod(u_ctx, t_ctx, k, alpha_correction=alpha_correction)
    return h, disc, udm, tdm, basis, alpha, u_ctx, t_ctx


def fem_residuals(disc, hist, tau):
    A, B, K, M = disc.A, disc.B, disc.K, disc.M
    out = []
    for n, t in enumerate(hist.times):
        u, th = hist.u[n], hist.theta[n]
        F = disc.load_u(t)
        r1 = A @ u - B @ th - F
        out.append(np.linalg.norm(r1) / max(np.linalg.norm(F), np.linalg.norm(A @ u)))
        if n:
            G = disc.load_theta(t) + (M @ hist.theta[n - 1] + B.T @ hist.u[n - 1]) / tau
            r2 = (M / tau + K) @ th + B.T @ u / tau - G
            out.append(np.linalg.norm(r2) / np.linalg.norm(G))
    return np.array(out)


def test_zero_data_gives_zero_histories():
    coeffs = composite(3)
    h, disc, _, _, basis, alpha, *_ = setup(1, 3, coeffs, data=zero_data())
    tg = TimeGrid(0.1, 3)
    for hist in (solve_fem(disc, tg), solve_gfem(basis, alpha, disc, tg), solve_gfem_uncorrected(basis, disc, tg)):
        assert np.all(hist.u_fine == 0) and np.all(hist.theta_fine == 0)
        assert len(hist.states) == 4


def test_initial_displacement_residual_and_zero():
    coeffs = composite(3)
    disc, _, _ = fine_discretization(build_uniform_mesh(3), coeffs, BC1, DATA2)
    F0 = disc.load_u(0.0)
    u0 = initial_displacement(disc.A, disc.B, F0, disc.theta0)
    rhs = F0 + disc.B @ disc.theta0
    assert np.linalg.norm(disc.A @ u0 - rhs) <= 1e-10 * np.linalg.norm(rhs)
    z = initial_displacement(disc.A, disc.B, np.zeros_like(F0), np.zeros_like(disc.theta0))
    assert np.all(z == 0)


def test_empty_clamped_set_is_rejected():
    coeffs = from_constants(2, 1, 1, 1, 1)
    with pytest.raises(SolverError, match="singular"):
        fine_discretization(build_uniform_mesh(2), coeffs, BoundaryConfig(frozenset(), frozenset(SIDES)), DATA1)


def test_singular_operator_detected_by_residual():
    A = sp.csr_matrix(np.array([[1.0, -1.0], [-1.0, 1.0]]))
    with pytest.raises(SolverError):
        initial_displacement(A, sp.csr_matrix((2, 1)), np.array([1.0, 0.0]), np.zeros(1))


def test_fem_scheme_residuals():
    coeffs = composite(4)
    disc, _, _ = fine_discretization(build_uniform_mesh(4), coeffs, BC1, DATA1)
    tau = 0.05
    hist = solve_fem(disc, TimeGrid(tau, 6))
    assert fem_residuals(disc, hist, tau).max() <= 1e-10
    np.testing.assert_array_equal(hist.theta[0], disc.theta0)


def test_coarse_fem_scheme_residuals():
    coeffs = composite(4)
    h = build_hierarchy(2, 4)
    fine, udm, tdm = fine_discretization(h.fine, coeffs, BC1, DATA2)
    u_ctx = build_field_context(h, coeffs, BC1, "elasticity")
    t_ctx = build_field_context(h, coeffs, BC1, "thermal")
    coarse = coarse_discretization(fine, u_ctx.interp.prolongation, t_ctx.interp.prolongation)
    tau = 0.1
    hist = solve_fem(coarse, TimeGrid(tau, 4))
    assert hist.u.shape[1] == u_ctx.interp.coarse_dofs.num_free
    assert fem_residuals(coarse, hist, tau).max() <= 1e-10
    np.testing.assert_allclose(hist.u_fine, (u_ctx.interp.prolongation @ hist.u.T).T)


@pytest.mark.parametrize("corrected", [True, False])
def test_gfem_scheme_residuals(corrected):
    coeffs = composite(4)
    h, fine, _, _, basis, alpha, *_ = setup(2, 4, coeffs, k=1)
    tau = 0.05
    hist = solve_gfem(basis, alpha if corrected else None, fine, TimeGrid(tau, 5))
    Pu, Pt = basis.u_basis, basis.theta_basis
    A, B, K, M = fine.A, fine.B, fine.K, fine.M
    for n, t in enumerate(hist.times):
        u, th = hist.u_fine[n], hist.theta_fine[n]
        F = Pu.T @ fine.load_u(t)
        r1 = Pu.T @ (A @ u - B @ th) - F
        assert np.linalg.norm(r1) <= 1e-10 * max(np.linalg.norm(F), np.linalg.norm(Pu.T @ A @ u))
        if n:
            du, dt = u - hist.u_fine[n - 1], th - hist.theta_fine[n - 1]
            lhs = Pt.T @ (M @ dt / tau + K @ th + B.T @ du / tau)
            G = Pt.T @ fine.load_theta(t)
            assert np.linalg.norm(lhs - G) <= 1e-10 * np.linalg.norm(G)
    # the displacement carries the fine-scale part X beta only when corrected
    fine_part = hist.u_fine - (Pu @ hist.u.T).T
    assert (np.abs(fine_part).max() > 0) == corrected


def test_gfem_initial_temperature_is_ritz_projection():
    coeffs = composite(4)
    h, fine, _, _, basis, alpha, *_ = setup(2, 4, coeffs)
    hist = solve_gfem(basis, alpha, fine, TimeGrid(0.1, 1))
    Pt = basis.theta_basis
    r = Pt.T @ (fine.K @ (hist.theta_fine[0] - fine.theta0))
    assert np.abs(r).max() <= 1e-10 * np.abs(Pt.T @ fine.K @ fine.theta0).max()


def test_degenerate_hierarchy_gfem_equals_fem():
    coeffs = from_constants(3, 1.0, 2.0, 0.5, 1.0)
    h, fine, _, _, basis, alpha, *_ = setup(3, 3, coeffs, k=None)
    tg = TimeGrid(0.1, 3)
    ref = solve_fem(fine, tg)
    gf = solve_gfem(basis, alpha, fine, tg)
    assert np.abs(gf.u_fine - ref.u_fine).max() <= 1e-10
    assert np.abs(gf.theta_fine - ref.theta_fine).max() <= 1e-10
    assert gf.space.startswith("gfem")


def test_zero_expansion_corrected_equals_uncorrected():
    coeffs = from_two_phase_raster(4, default_composite_raster(16), replace(COMPOSITE_BACKGROUND, alpha=0.0),
                                   replace(COMPOSITE_INCLUSION, alpha=0.0))
    h, fine, _, _, basis, alpha, *_ = setup(2, 4, coeffs)
    tg = TimeGrid(0.1, 3)
    a = solve_gfem(basis, alpha, fine, tg)
    b = solve_gfem_uncorrected(basis, fine, tg)
    np.testing.assert_array_equal(a.u_fine, b.u_fine)
    np.testing.assert_array_equal(a.theta_fine, b.theta_fine)


def test_gfem_system_dimension():
    coeffs = composite(4)
    h, fine, udm, tdm, basis, alpha, u_ctx, t_ctx = setup(2, 4, coeffs)
    hist = solve_gfem(basis, alpha, fine, TimeGrid(0.1, 2))
    assert hist.u.shape[1] == u_ctx.interp.coarse_dofs.num_free
    assert hist.theta.shape[1] == t_ctx.interp.coarse_dofs.num_free
    assert hist.u_fine.shape[1] == udm.num_free and hist.theta_fine.shape[1] == tdm.num_free


def test_mismatched_k_rejected():
    coeffs = composite(4)
    h, fine, _, _, basis, alpha, u_ctx, t_ctx = setup(2, 4, coeffs, k=1)
    _, alpha2, _ = build_lod(u_ctx, t_ctx, 2)
    with pytest.raises(ValueError, match="alpha correctors"):
        solve_gfem(basis, alpha2, fine, TimeGrid(0.1, 1))


def test_time_refinement_first_order():
    coeffs = composite(3)
    disc, udm, tdm = fine_discretization(build_uniform_mesh(3), coeffs, BC1, DATA1)
    T = 0.1
    finals = [solve_fem(disc, TimeGrid.from_final_time(0.01 / 2**j, T)) for j in range(4)]
    nt = Seminorm(tdm)
    d = [nt(finals[j].theta[-1] - finals[j + 1].theta[-1]) for j in range(3)]
    ratios = [d[j] / d[j + 1] for j in range(2)]
    assert all(1.6 < r < 2.4 for r in ratios), ratios


@pytest.mark.parametrize("solver", ["fem", "gfem-nocorr"])
def test_kappa_energy_inequality(solver):
    # with f = g = 0: 2 sum tau |dtheta|_M^2 + |theta^n|_K^2 <= |theta^0|_K^2
    coeffs = composite(4)
    data = ProblemData(lambda x, y, t: (0.0, 0.0), lambda x, y, t: 0.0, lambda x, y: np.sin(np.pi * x) * y * (1 - y))
    h, fine, _, _, basis, alpha, *_ = setup(2, 4, coeffs, data=data)
    tau = 0.05
    tg = TimeGrid(tau, 10)
    hist = solve_fem(fine, tg) if solver == "fem" else solve_gfem_uncorrected(basis, fine, tg)
    th = hist.theta_fine
    e0 = th[0] @ fine.K @ th[0]
    acc = 0.0
    for n in range(1, len(th)):
        d = (th[n] - th[n - 1]) / tau
        acc += 2 * tau * d @ fine.M @ d
        assert acc + th[n] @ fine.K @ th[n] <= e0 * (1 + 1e-12)


def test_states_stay_bounded():
    coeffs = composite(4)
    h, fine, _, _, basis, alpha, *_ = setup(2, 4, coeffs, data=DATA2)
    tg = TimeGrid(0.05, 20)
    data_norm = np.linalg.norm(fine.load_u(0.0)) + np.linalg.norm(fine.load_theta(0.0)) + np.linalg.norm(fine.theta0)
    for hist in (solve_fem(fine, tg), solve_gfem(basis, alpha, fine, tg)):
        big = max(np.abs(hist.u_fine).max(), np.abs(hist.theta_fine).max())
        assert np.isfinite(big) and big < 1e6 * data_norm


def test_timegrid():
    tg = TimeGrid.from_final_time(0.05, 1.0)
    assert tg.N == 20 and abs(tg.T - 1.0) < 1e-14
    np.testing.assert_allclose(tg.times[[0, -1]], [0.0, 1.0])
    with pytest.raises(ValueError):
        TimeGrid.from_final_time(0.3, 1.0)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 3)
    with pytest.raises(ValueError):
        TimeGrid(0.1, 0)


def test_history_csv(tmp_path):
    disc, _, _ = fine_discretization(build_uniform_mesh(2), from_constants(2, 1, 1, 1, 1), BC1, DATA1)
    hist = solve_fem(disc, TimeGrid(0.5, 2))
    path = tmp_path / "h.csv"
    hist.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "n,t,norm_u,norm_theta"
    assert len(lines) == 4
    n, t, nu, nt = lines[2].split(",")
    assert (n, t) == ("1", "0.5")
    assert abs(float(nt) - np.linalg.norm(hist.theta[1])) <= 1e-11 * float(nt)


def test_gfem_initial_displacement_converges_over_levels():
    coeffs = composite(4)
    data = ProblemData(lambda x, y, t: (1.0, 1.0), lambda x, y, t: 0.0, lambda x, y: 0.0 * x)
    errs = []
    for mc in (1, 2, 3):
        h, fine, udm, _, basis, alpha, *_ = setup(mc, 4, coeffs, data=data, k=None)
        u0 = initial_displacement(fine.A, fine.B, fine.load_u(0.0), fine.theta0)
        gf = solve_gfem(basis, alpha, fine, TimeGrid(0.1, 1))
        norm = Seminorm(udm)
        errs.append(norm(gf.u_fine[0] - u0) / norm(u0))
    assert errs[0] > errs[1] > errs[2]
    assert errs[0] / errs[2] > 3.0
