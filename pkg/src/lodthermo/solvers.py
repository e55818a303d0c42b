"""Backward Euler solvers: fine/coarse P1-P1 FEM and the localized GFEM."""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import (
    BoundaryConfig,
    DofMap,
    assemble_coupling,
    assemble_elasticity,
    assemble_load_vector,
    assemble_mass,
    assemble_thermal,
    make_dofmap,
    project_l2,
)
from .coefficients import CoefficientField
from .lod import AlphaCorrectorSet, MultiscaleBasis, ms_ritz_theta
from .mesh import TriMesh


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    tau: float
    N: int

    def __post_init__(self):
        if self.tau <= 0 or self.N < 1:
            raise ValueError("need tau > 0 and at least one step")

    @classmethod
    def from_final_time(cls, tau: float, T: float) -> "TimeGrid":
        N = int(round(T / tau))
        if N < 1 or abs(N * tau - T) > 1e-9 * max(1.0, T):
            raise ValueError(f"T={T} is not an integer multiple of tau={tau}")
        return cls(tau, N)

    @property
    def T(self) -> float:
        return self.N * self.tau

    @property
    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.N + 1)


@dataclass(frozen=True)
class ProblemData:
    """Closed-form data. ``f(x, y, t)`` returns two components, ``g`` and ``theta0`` scalars."""

    f: Callable
    g: Callable
    theta0: Callable


def zero_data() -> ProblemData:
    return ProblemData(lambda x, y, t: (0.0, 0.0), lambda x, y, t: 0.0, lambda x, y: 0.0 * x)


@dataclass(frozen=True)
class ThermoState:
    u: np.ndarray
    theta: np.ndarray
    t: float


@dataclass(frozen=True, eq=False)
class TimeHistory:
    """States n = 0..N. ``u``/``theta`` are in the solver's own coordinates,
    ``u_fine``/``theta_fine`` expanded on the fine reference free dofs."""

    space: str
    times: np.ndarray
    u: np.ndarray
    theta: np.ndarray
    u_fine: np.ndarray
    theta_fine: np.ndarray

    @property
    def states(self) -> list[ThermoState]:
        return [ThermoState(u, th, t) for u, th, t in zip(self.u, self.theta, self.times)]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "t", "norm_u", "norm_theta"])
            for n, (t, u, th) in enumerate(zip(self.times, self.u, self.theta)):
                w.writerow([n, f"{t:.10g}", f"{np.linalg.norm(u):.12e}", f"{np.linalg.norm(th):.12e}"])


@dataclass(eq=False)
class Discretization:
    """Operators of the P1-P1 scheme on one space plus its data hooks.

    ``A`` elasticity, ``B`` coupling (u rows, theta cols), ``K`` conduction,
    ``M`` theta mass. ``to_fine_u``/``to_fine_theta`` map coefficient vectors to
    the fine reference free dofs.
    """

    label: str
    A: sp.csr_matrix
    B: sp.csr_matrix
    K: sp.csr_matrix
    M: sp.csr_matrix
    load_u: Callable[[float], np.ndarray]
    load_theta: Callable[[float], np.ndarray]
    theta0: np.ndarray
    theta0_rhs: np.ndarray  # (theta0, phi_i), kept for projections onto nested spaces
    to_fine_u: sp.spmatrix
    to_fine_theta: sp.spmatrix


def fine_discretization(mesh: TriMesh, coeffs: CoefficientField, bc: BoundaryConfig,
                        data: ProblemData) -> tuple[Discretization, DofMap, DofMap]:
    if not bc.dirichlet_u:
        # rigid motions lie in the kernel of the elasticity operator
        raise SolverError("elasticity operator is singular: the clamped boundary set for u is empty")
    udm = make_dofmap(mesh, "vector2", bc.dirichlet_u)
    tdm = make_dofmap(mesh, "scalar", bc.dirichlet_theta)
    if udm.num_free == 0 or tdm.num_free == 0:
        raise ValueError("mesh too coarse: no free dofs")
    theta0_rhs, theta0 = project_l2(mesh, tdm, data.theta0)
    disc = Discretization(
        label=f"fem-h{mesh.level}",
        A=assemble_elasticity(mesh, coeffs, udm),
        B=assemble_coupling(mesh, coeffs, udm, tdm),
        K=assemble_thermal(mesh, coeffs, tdm),
        M=assemble_mass(mesh, tdm),
        load_u=lambda t: assemble_load_vector(mesh, udm, data.f, t),
        load_theta=lambda t: assemble_load_vector(mesh, tdm, data.g, t),
        theta0=theta0,
        theta0_rhs=theta0_rhs,
        to_fine_u=sp.eye(udm.num_free, format="csr"),
        to_fine_theta=sp.eye(tdm.num_free, format="csr"),
    )
    return disc, udm, tdm


def coarse_discretization(fine: Discretization, P_u: sp.spmatrix, P_theta: sp.spmatrix,
                          label: str = "fem-H") -> Discretization:
    """Galerkin restriction of the fine scheme to the nested coarse P1 spaces.

    With piecewise constant coefficients this equals exact integration on the
    coarse mesh. The initial temperature is the coarse L2 projection. When both
    prolongations are identities the fine scheme is returned unchanged.
    """
    if _is_identity(P_u) and _is_identity(P_theta):
        return dataclasses.replace(fine, label=label)
    PuT, PtT = P_u.T.tocsr(), P_theta.T.tocsr()
    M = (PtT @ fine.M @ P_theta).tocsc()
    theta0 = splu(M).solve(PtT @ fine.theta0_rhs)
    return Discretization(
        label=label,
        A=(PuT @ fine.A @ P_u).tocsr(),
        B=(PuT @ fine.B @ P_theta).tocsr(),
        K=(PtT @ fine.K @ P_theta).tocsr(),
        M=M.tocsr(),
        load_u=lambda t: PuT @ fine.load_u(t),
        load_theta=lambda t: PtT @ fine.load_theta(t),
        theta0=theta0,
        theta0_rhs=PtT @ fine.theta0_rhs,
        to_fine_u=P_u,
        to_fine_theta=P_theta,
    )


def _is_identity(P: sp.spmatrix) -> bool:
    n, m = P.shape
    if n != m:
        return False
    P = sp.csr_matrix(P)
    return P.nnz == n and np.array_equal(P.diagonal(), np.ones(n)) and (P - sp.eye(n)).count_nonzero() == 0


class _DenseLU:
    def __init__(self, S):
        self.factors = scipy.linalg.lu_factor(S, check_finite=True)
        if np.any(np.diag(self.factors[0]) == 0):
            raise np.linalg.LinAlgError("exactly singular")

    def solve(self, b):
        return scipy.linalg.lu_solve(self.factors, b)


def _factor(S, what):
    try:
        if isinstance(S, np.ndarray):
            return _DenseLU(S)
        return splu(sp.csc_matrix(S))
    except (RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        raise SolverError(f"{what}: factorization failed ({exc})") from exc


def initial_displacement(A, B, load_u0, theta0) -> np.ndarray:
    """u0 from the stationary elasticity equation with theta = theta0 at t = 0."""
    lu = _factor(A, "initial displacement (is the Dirichlet set for u empty?)")
    rhs = load_u0 + B @ theta0
    u0 = lu.solve(rhs)
    res = np.linalg.norm(A @ u0 - rhs)
    if not np.all(np.isfinite(u0)) or res > 1e-8 * max(np.linalg.norm(rhs), np.finfo(float).tiny):
        raise SolverError(f"initial displacement: singular elasticity operator (residual {res:.3e})")
    return u0


def _check_state(n, *vecs):
    for v in vecs:
        if not np.all(np.isfinite(v)):
            raise SolverError(f"non-finite state at step {n}")


def solve_fem(disc: Discretization, timegrid: TimeGrid) -> TimeHistory:
    """Monolithic backward Euler; one factorization of the block matrix for all steps."""
    tau = timegrid.tau
    A, B, K, M = disc.A, disc.B, disc.K, disc.M
    nu = A.shape[0]
    S = sp.bmat([[A, -B], [B.T / tau, M / tau + K]], format="csc")
    lu = _factor(S, disc.label)
    BT = B.T.tocsr()

    u = initial_displacement(A, B, disc.load_u(0.0), disc.theta0)
    theta = disc.theta0.copy()
    us, ths = [u], [theta]
    for n, t in enumerate(timegrid.times[1:], start=1):
        rhs = np.concatenate([disc.load_u(t), disc.load_theta(t) + (M @ theta + BT @ u) / tau])
        x = lu.solve(rhs)
        u, theta = x[:nu], x[nu:]
        _check_state(n, u, theta)
        us.append(u)
        ths.append(theta)
    U, TH = np.array(us), np.array(ths)
    return TimeHistory(disc.label, timegrid.times, U, TH,
                       (disc.to_fine_u @ U.T).T, (disc.to_fine_theta @ TH.T).T)


def solve_gfem(basis: MultiscaleBasis, alpha: Optional[AlphaCorrectorSet], fine: Discretization,
               timegrid: TimeGrid, label: Optional[str] = None) -> TimeHistory:
    """Localized GFEM in multiscale coordinates (a for u, beta for theta).

    The fine-scale displacement part is u_f = X beta with X the aggregated
    alpha correctors, so the per-step system has coarse dimension only.
    ``alpha=None`` drops the correction.
    """
    if alpha is not None and alpha.k != basis.k:
        raise ValueError(f"alpha correctors at k={alpha.k}, basis at k={basis.k}")
    space = label or (f"gfem-k{basis.k}" if alpha is not None else f"gfem-nocorr-k{basis.k}")
    if _is_identity(basis.u_basis) and _is_identity(basis.theta_basis):
        # coarse and fine spaces coincide: the GFEM is the fine FEM
        return dataclasses.replace(solve_fem(fine, timegrid), space=space)
    Pu, Pt = basis.u_basis, basis.theta_basis
    PuT, PtT = Pu.T.tocsr(), Pt.T.tocsr()
    tau = timegrid.tau
    A, B, K, M = fine.A, fine.B, fine.K, fine.M

    Suu = (PuT @ A @ Pu).toarray()
    Sut = -(PuT @ B @ Pt).toarray()
    C = (PtT @ B.T @ Pu).toarray()
    Mc = (PtT @ M @ Pt).toarray()
    Kc = (PtT @ K @ Pt).toarray()
    if alpha is not None:
        X = alpha.X
        Sut = Sut + (PuT @ A @ X).toarray()
        D = (PtT @ B.T @ X).toarray()
        expand_u = sp.hstack([Pu, X], format="csr")
    else:
        D = np.zeros_like(Mc)
        expand_u = sp.hstack([Pu, sp.csr_matrix((Pu.shape[0], Pt.shape[1]))], format="csr")
    n1 = Suu.shape[0]
    S = np.block([[Suu, Sut], [C / tau, Mc / tau + Kc + D / tau]])
    lu = _factor(S, "gfem step matrix")

    beta = ms_ritz_theta(fine.theta0, Pt, K)
    a = _factor(Suu, "gfem initial displacement").solve(PuT @ fine.load_u(0.0) - Sut @ beta)
    coeffs = [np.concatenate([a, beta])]
    for n, t in enumerate(timegrid.times[1:], start=1):
        rhs = np.concatenate([
            PuT @ fine.load_u(t),
            PtT @ fine.load_theta(t) + (Mc @ beta + C @ a + D @ beta) / tau,
        ])
        x = lu.solve(rhs)
        a, beta = x[:n1], x[n1:]
        _check_state(n, x)
        coeffs.append(x)
    Z = np.array(coeffs)
    U, TH = Z[:, :n1], Z[:, n1:]
    return TimeHistory(space, timegrid.times, U, TH, (expand_u @ Z.T).T, (Pt @ TH.T).T)


def solve_gfem_uncorrected(basis: MultiscaleBasis, fine: Discretization, timegrid: TimeGrid) -> TimeHistory:
    return solve_gfem(basis, None, fine, timegrid)
