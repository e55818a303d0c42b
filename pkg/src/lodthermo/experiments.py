"""Pipelines behind the command line: reference runs, multiscale levels, sweeps.

Corrected bases can be cached on disk as ``.npz`` files. The key hashes the
mesh levels, the coefficient digest, the boundary sides and the patch size, so
a cached entry is reused only for an identical corrector problem.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .analysis import ErrorRecord, Seminorm, relative_errors, write_convergence_csv, write_plot_data
from .assembly import DofMap
from .coefficients import CoefficientField
from .config import ExperimentConfig
from .interpolation import build_I_H
from .lod import (
    AlphaCorrectorSet,
    CorrectorError,
    FieldContext,
    MultiscaleBasis,
    build_field_context,
    build_lod,
)
from .mesh import TriMesh, build_hierarchy, build_uniform_mesh
from .solvers import (
    Discretization,
    SolverError,
    TimeHistory,
    coarse_discretization,
    fine_discretization,
    solve_fem,
    solve_gfem,
)

log = logging.getLogger(__name__)

CACHE_VERSION = 1
METHODS = ("gfem", "gfem-nocorr", "fem")


def mesh_size(m: int) -> float:
    return math.sqrt(2.0) * 2.0 ** -m


def mesh_info(m: int) -> str:
    mesh = build_uniform_mesh(m)
    return f"vertices={mesh.num_vertices} triangles={mesh.num_triangles} h=√2·2^-{m}"


@dataclass(eq=False)
class Reference:
    config: ExperimentConfig
    mesh: TriMesh
    coefficients: CoefficientField
    disc: Discretization
    udm: DofMap
    tdm: DofMap
    norm_u: Seminorm
    norm_theta: Seminorm
    _history: Optional[TimeHistory] = field(default=None, repr=False)

    @property
    def history(self) -> TimeHistory:
        if self._history is None:
            self._history = solve_fem(self.disc, self.config.timegrid)
        return self._history


def build_reference(cfg: ExperimentConfig) -> Reference:
    mesh = build_uniform_mesh(cfg.fine_level)
    coeffs = cfg.coefficients.build(cfg.fine_level)
    disc, udm, tdm = fine_discretization(mesh, coeffs, cfg.boundary, cfg.data.build())
    return Reference(cfg, mesh, coeffs, disc, udm, tdm, Seminorm(udm), Seminorm(tdm))


@dataclass(eq=False)
class Level:
    m_coarse: int
    k: Optional[int]
    u_ctx: FieldContext
    theta_ctx: FieldContext
    basis: MultiscaleBasis
    alpha: Optional[AlphaCorrectorSet]
    cache_hit: bool = False

    @property
    def H(self) -> float:
        return mesh_size(self.m_coarse)


# ---------------------------------------------------------------- cache

def cache_key(ref: Reference, m_coarse: int, k: Optional[int], alpha: bool) -> str:
    bc = ref.config.boundary
    payload = {
        "version": CACHE_VERSION,
        "m_coarse": m_coarse,
        "m_fine": ref.config.fine_level,
        "coefficients": ref.coefficients.digest(),
        "k": "inf" if k is None else k,
        "dirichlet_u": sorted(bc.dirichlet_u),
        "dirichlet_theta": sorted(bc.dirichlet_theta),
        "alpha": alpha,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:20]


def _pack(prefix: str, M: sp.spmatrix) -> dict:
    M = sp.csr_matrix(M)
    return {f"{prefix}_data": M.data, f"{prefix}_indices": M.indices,
            f"{prefix}_indptr": M.indptr, f"{prefix}_shape": np.array(M.shape)}


def _unpack(z, prefix: str) -> sp.csr_matrix:
    return sp.csr_matrix((z[f"{prefix}_data"], z[f"{prefix}_indices"], z[f"{prefix}_indptr"]),
                         shape=tuple(z[f"{prefix}_shape"]))


def _cache_path(cache_dir, key: str) -> Path:
    return Path(cache_dir) / f"correctors-{key}.npz"


# ---------------------------------------------------------------- levels

def build_level(ref: Reference, m_coarse: int, k: Optional[int], threads: int = 1,
                alpha_correction: bool = True, cache_dir=None) -> Level:
    """Multiscale basis (and alpha correctors) for one coarse level, via the cache if given."""
    hierarchy = build_hierarchy(m_coarse, ref.config.fine_level)
    bc = ref.config.boundary
    u_ctx = build_field_context(hierarchy, ref.coefficients, bc, "elasticity")
    t_ctx = build_field_context(hierarchy, ref.coefficients, bc, "thermal")
    path = None
    if cache_dir is not None:
        path = _cache_path(cache_dir, cache_key(ref, m_coarse, k, alpha_correction))
        if path.exists():
            with np.load(path) as z:
                basis = MultiscaleBasis(_unpack(z, "phi_u"), _unpack(z, "phi_theta"), k, hierarchy)
                alpha = AlphaCorrectorSet(k, _unpack(z, "x")) if alpha_correction else None
            log.info("cache hit: level m_C=%d k=%s (%s)", m_coarse, k, path.name)
            return Level(m_coarse, k, u_ctx, t_ctx, basis, alpha, cache_hit=True)
    try:
        basis, alpha, _ = build_lod(u_ctx, t_ctx, k, threads, alpha_correction)
    except CorrectorError as exc:
        raise SolverError(f"correctors at m_C={m_coarse}, k={k}: {exc}") from exc
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays = {**_pack("phi_u", basis.u_basis), **_pack("phi_theta", basis.theta_basis)}
        if alpha is not None:
            arrays.update(_pack("x", alpha.X))
        tmp = path.with_suffix(".tmp.npz")
        np.savez(tmp, **arrays)
        tmp.replace(path)
        log.info("cache store: level m_C=%d k=%s (%s)", m_coarse, k, path.name)
    return Level(m_coarse, k, u_ctx, t_ctx, basis, alpha)


def solve_level(ref: Reference, level: Level, method: str) -> TimeHistory:
    tg = ref.config.timegrid
    try:
        if method == "gfem":
            if level.alpha is None:
                raise ValueError("level was built without alpha correctors")
            return solve_gfem(level.basis, level.alpha, ref.disc, tg)
        if method == "gfem-nocorr":
            return solve_gfem(level.basis, None, ref.disc, tg)
        if method == "fem":
            disc = coarse_discretization(ref.disc, level.u_ctx.interp.prolongation,
                                         level.theta_ctx.interp.prolongation, label=f"fem-H{level.m_coarse}")
            return solve_fem(disc, tg)
    except SolverError as exc:
        raise SolverError(f"{method} at m_C={level.m_coarse}, k={level.k}: {exc}") from exc
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def coarse_fem_level(ref: Reference, m_coarse: int) -> TimeHistory:
    """Coarse P1-P1 FEM without building correctors."""
    hierarchy = build_hierarchy(m_coarse, ref.config.fine_level)
    bc = ref.config.boundary
    P_u = build_I_H(hierarchy, "vector2", bc.dirichlet_u).prolongation
    P_t = build_I_H(hierarchy, "scalar", bc.dirichlet_theta).prolongation
    disc = coarse_discretization(ref.disc, P_u, P_t, label=f"fem-H{m_coarse}")
    try:
        return solve_fem(disc, ref.config.timegrid)
    except SolverError as exc:
        raise SolverError(f"fem at m_C={m_coarse}: {exc}") from exc


# ---------------------------------------------------------------- sweeps

@dataclass
class ConvergenceResult:
    records: dict  # method -> list[ErrorRecord]
    files: list


def _csv_name(method: str) -> str:
    return f"convergence_{method.replace('-', '_')}.csv"


def run_convergence(cfg: ExperimentConfig, out_dir=None, threads: Optional[int] = None,
                    cache_dir=None, timing: bool = False,
                    methods: Optional[Sequence[str]] = None) -> ConvergenceResult:
    """Errors at t = T against the fine reference for every (H, k) of the config.

    ``methods`` defaults to the GFEM (with or without alpha correction, as
    configured) and the coarse FEM. One CSV and one plot-data file per method.
    """
    if methods is None:
        methods = ("gfem" if cfg.alpha_correction else "gfem-nocorr", "fem")
    bad = set(methods) - set(METHODS)
    if bad:
        raise ValueError(f"unknown methods {sorted(bad)}")
    threads = threads or cfg.threads
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ref = build_reference(cfg)
    reference = ref.history
    need_alpha = "gfem" in methods
    need_basis = need_alpha or "gfem-nocorr" in methods
    records = {m: [] for m in methods}
    for m_coarse, k in zip(cfg.coarse_levels, cfg.ks()):
        t0 = time.perf_counter()
        level = None
        if need_basis:
            level = build_level(ref, m_coarse, k, threads, need_alpha, cache_dir)
        build_time = time.perf_counter() - t0
        for method in methods:
            t1 = time.perf_counter()
            if method == "fem":
                hist = solve_level(ref, level, "fem") if level else coarse_fem_level(ref, m_coarse)
            else:
                hist = solve_level(ref, level, method)
            eu, et = relative_errors(reference, hist, ref.norm_u, ref.norm_theta)
            elapsed = time.perf_counter() - t1 + (build_time if method != "fem" else 0.0)
            rec_k = "" if method == "fem" else k
            records[method].append(ErrorRecord(mesh_size(m_coarse), rec_k, eu, et,
                                               round(elapsed, 3) if timing else None))
            log.info("%s m_C=%d k=%s: rel_err_u=%.4e rel_err_theta=%.4e", method, m_coarse, k, eu, et)
    files = []
    for method, recs in records.items():
        csv_path = out / _csv_name(method)
        plot_path = out / f"plot_{method.replace('-', '_')}.dat"
        write_convergence_csv(recs, csv_path)
        write_plot_data(recs, plot_path)
        files += [csv_path, plot_path]
    return ConvergenceResult(records, files)


def compare_alpha(cfg: ExperimentConfig, out_dir=None, threads=None, cache_dir=None,
                  timing: bool = False) -> ConvergenceResult:
    """GFEM with and without the alpha correction on shared bases, plus coarse FEM."""
    return run_convergence(cfg, out_dir, threads, cache_dir, timing, methods=METHODS)


MODES = ("ref", "fem", "gfem", "gfem-nocorr")


def run_single(cfg: ExperimentConfig, mode: str, m_coarse: Optional[int] = None, k="schedule",
               out_dir=None, threads: Optional[int] = None, cache_dir=None) -> tuple[TimeHistory, Path]:
    """One solver run exported as a history CSV. ``m_coarse`` defaults to the finest coarse level."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {MODES}")
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ref = build_reference(cfg)
    if m_coarse is None:
        m_coarse = cfg.coarse_levels[-1]
    if k == "schedule":
        k = dict(zip(cfg.coarse_levels, cfg.ks())).get(m_coarse, cfg.ks()[-1])
    if mode == "ref":
        hist = ref.history
        name = "history_ref.csv"
    elif mode == "fem":
        hist = coarse_fem_level(ref, m_coarse)
        name = f"history_fem_m{m_coarse}.csv"
    else:
        level = build_level(ref, m_coarse, k, threads or cfg.threads, mode == "gfem", cache_dir)
        hist = solve_level(ref, level, mode)
        name = f"history_{mode.replace('-', '_')}_m{m_coarse}.csv"
    path = out / name
    hist.write_csv(path)
    return hist, path


TARGETS = ("mesh", "coefficients", "basis")


def inspect(cfg: ExperimentConfig, target: str, m_coarse: Optional[int] = None, k="schedule",
            out_dir=None) -> list[str]:
    """Text summary of the mesh, the coefficient bounds or a multiscale basis."""
    if target not in TARGETS:
        raise ValueError(f"unknown inspect target {target!r}; choose from {TARGETS}")
    if target == "mesh":
        lines = [f"fine m={cfg.fine_level}: {mesh_info(cfg.fine_level)}"]
        lines += [f"coarse m={m}: {mesh_info(m)}" for m in cfg.coarse_levels]
        return lines
    coeffs = cfg.coefficients.build(cfg.fine_level)
    if target == "coefficients":
        b = coeffs.bounds()
        lines = [f"{key}={val:.6g}" for key, val in b.items()]
        lines.append(f"mu2/mu1={b['mu2'] / b['mu1']:.6g}")
        lines.append(f"kappa2/kappa1={b['kappa2'] / b['kappa1']:.6g}")
        lines.append(f"digest={coeffs.digest()}")
        return lines
    ref = build_reference(cfg)
    if m_coarse is None:
        m_coarse = cfg.coarse_levels[0]
    if k == "schedule":
        k = dict(zip(cfg.coarse_levels, cfg.ks())).get(m_coarse, cfg.ks()[0])
    level = build_level(ref, m_coarse, k, alpha_correction=False)
    nu, nt = level.basis.u_basis.shape[1], level.basis.theta_basis.shape[1]
    lines = [f"H=√2·2^-{m_coarse} k={'inf' if k is None else k}",
             f"u_dofs={nu} theta_dofs={nt} dimension={level.basis.dimension}"]
    # theta basis function of the free coarse vertex closest to the domain center
    cdm = level.theta_ctx.interp.coarse_dofs
    free_vertices = np.flatnonzero(~cdm.fixed_vertices)
    if len(free_vertices):
        xy = level.u_ctx.hierarchy.coarse.vertices[free_vertices]
        j = int(np.argmin(np.sum((xy - 0.5) ** 2, axis=1)))
        col = cdm.full_to_free[free_vertices[j]]
        values = ref.tdm.expand(level.basis.theta_basis[:, col].toarray().ravel())
        out = Path(out_dir or cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"basis_theta_m{m_coarse}.dat"
        with open(path, "w") as fh:
            fh.write("# x y value\n")
            for (x, y), v in zip(ref.mesh.vertices, values):
                fh.write(f"{x:.8f} {y:.8f} {v:.12e}\n")
        lines.append(f"sampled theta basis at vertex ({xy[j][0]:.4g}, {xy[j][1]:.4g}) -> {path}")
    return lines


def build_all_correctors(cfg: ExperimentConfig, threads: Optional[int] = None, cache_dir=None) -> list[str]:
    """Build (and cache) the bases of every configured level; report sizes."""
    ref = build_reference(cfg)
    lines = []
    for m_coarse, k in zip(cfg.coarse_levels, cfg.ks()):
        t0 = time.perf_counter()
        level = build_level(ref, m_coarse, k, threads or cfg.threads, cfg.alpha_correction, cache_dir)
        nnz_x = level.alpha.X.nnz if level.alpha is not None else 0
        lines.append(f"m_C={m_coarse} k={'inf' if k is None else k} dim={level.basis.dimension} "
                     f"nnz_phi_u={level.basis.u_basis.nnz} nnz_phi_theta={level.basis.theta_basis.nnz} "
                     f"nnz_x={nnz_x} cached={'yes' if level.cache_hit else 'no'}")
        log.info("level m_C=%d built in %.2fs", m_coarse, time.perf_counter() - t0)
    return lines
