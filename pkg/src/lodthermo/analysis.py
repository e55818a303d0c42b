"""H1-seminorm errors, convergence tables and estimated orders of convergence."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .assembly import DofMap, assemble_gradient_stiffness, quadrature_points
from .solvers import TimeHistory

CSV_HEADER = ["H", "k", "rel_err_u", "rel_err_theta", "eoc_u", "eoc_theta", "wall_time_s"]


@dataclass(frozen=True)
class ErrorRecord:
    H: float
    k: Optional[int | str]  # None is k = infinity; a string (e.g. "") is written verbatim
    rel_err_u: float
    rel_err_theta: float
    wall_time_s: Optional[float] = None

    def __post_init__(self):
        for e in (self.rel_err_u, self.rel_err_theta):
            if not (math.isfinite(e) and e >= 0):
                raise ValueError(f"invalid error value {e}")


class Seminorm:
    """||grad v|| on the free dofs of ``dofmap`` (Dirichlet values implicitly zero)."""

    def __init__(self, dofmap: DofMap):
        self.dofmap = dofmap
        self.G = assemble_gradient_stiffness(dofmap.mesh, dofmap)

    def __call__(self, v: np.ndarray) -> float:
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.dofmap.num_free:
            raise ValueError(f"vector length {v.shape[-1]} does not match {self.dofmap.num_free} free dofs")
        return float(np.sqrt(max(v @ (self.G @ v), 0.0)))


def h1_seminorm(v: np.ndarray, dofmap: DofMap) -> float:
    return Seminorm(dofmap)(v)


def h1_seminorm_error(dofmap: DofMap, v: np.ndarray, grad_exact: Callable) -> float:
    """||grad(w - v_h)|| for closed-form gradient ``grad_exact(x, y)`` by degree-5 quadrature.

    Scalar maps: ``grad_exact`` returns (dx, dy); vector maps: ((du1dx, du1dy), (du2dx, du2dy)).
    """
    mesh = dofmap.mesh
    full = dofmap.expand(v)
    g = mesh.gradients  # (nt, 3, 2)
    pts, w = quadrature_points(mesh)
    ex = np.asarray(grad_exact(pts[..., 0], pts[..., 1]), dtype=float)
    if dofmap.ncomp == 1:
        gh = np.einsum("ta,tai->ti", full[mesh.triangles], g)
        diff = np.moveaxis(ex, 0, -1) - gh[:, None, :]
    else:
        vals = full.reshape(-1, 2)[mesh.triangles]  # (nt, 3, comp)
        gh = np.einsum("tac,tai->tci", vals, g)
        diff = np.moveaxis(ex, (0, 1), (-2, -1)) - gh[:, None, :, :]
        diff = diff.reshape(diff.shape[0], diff.shape[1], 4)
    return float(np.sqrt(np.sum(w * np.sum(diff**2, axis=-1))))


def relative_errors(reference: TimeHistory, test: TimeHistory, norm_u: Seminorm, norm_theta: Seminorm,
                    n: int = -1) -> tuple[float, float]:
    """Relative H1-seminorm errors of the fine-expanded states at step n (default final)."""
    du = test.u_fine[n] - reference.u_fine[n]
    dt = test.theta_fine[n] - reference.theta_fine[n]
    ru, rt = norm_u(reference.u_fine[n]), norm_theta(reference.theta_fine[n])
    if ru == 0 or rt == 0:
        raise ValueError("reference solution has zero seminorm; degenerate run")
    return norm_u(du) / ru, norm_theta(dt) / rt


def eoc(H: Sequence[float], errors: Sequence[float]) -> list[float]:
    """order_i = log(e_i / e_{i+1}) / log(H_i / H_{i+1}) for records sorted by decreasing H."""
    H, errors = list(H), list(errors)
    if len(H) < 2 or len(H) != len(errors):
        raise ValueError("need at least two (H, error) pairs")
    if len(set(H)) != len(H):
        raise ValueError("mesh sizes must be distinct")
    if any(e <= 0 for e in errors):
        raise ValueError("errors must be positive to compute orders")
    return [math.log(errors[i] / errors[i + 1]) / math.log(H[i] / H[i + 1]) for i in range(len(H) - 1)]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, int):
        return str(x)
    return f"{x:.12e}"


def convergence_rows(records: Sequence[ErrorRecord]) -> list[list[str]]:
    records = sorted(records, key=lambda r: -r.H)
    eu = et = [None] * len(records)
    if len(records) >= 2 and all(r.rel_err_u > 0 and r.rel_err_theta > 0 for r in records):
        H = [r.H for r in records]
        eu = [None] + eoc(H, [r.rel_err_u for r in records])
        et = [None] + eoc(H, [r.rel_err_theta for r in records])
    rows = []
    for r, a, b in zip(records, eu, et):
        k = "inf" if r.k is None else r.k if isinstance(r.k, str) else _fmt(r.k)
        rows.append([_fmt(r.H), k, _fmt(r.rel_err_u),
                     _fmt(r.rel_err_theta), _fmt(a), _fmt(b), _fmt(r.wall_time_s)])
    return rows


def write_convergence_csv(records: Sequence[ErrorRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerows(convergence_rows(records))


def write_plot_data(records: Sequence[ErrorRecord], path) -> None:
    """Whitespace columns ``H rel_err_u rel_err_theta`` for generic plotting tools."""
    with open(path, "w") as fh:
        fh.write("# H rel_err_u rel_err_theta\n")
        for r in sorted(records, key=lambda r: -r.H):
            fh.write(f"{r.H:.12e} {r.rel_err_u:.12e} {r.rel_err_theta:.12e}\n")
