"""Piecewise constant coefficient fields on the fine mesh."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .mesh import build_uniform_mesh


@dataclass(frozen=True)
class Phase:
    mu: float
    lam: float
    alpha: float
    kappa: float


@dataclass(frozen=True, eq=False)
class Raster:
    """Cell (i, j) of ``values[j, i]`` covers [i/nx,(i+1)/nx] x [j/ny,(j+1)/ny]."""

    nx: int
    ny: int
    values: np.ndarray

    def __post_init__(self):
        for n in (self.nx, self.ny):
            if n < 1 or n & (n - 1):
                raise ValueError(f"raster dimensions must be powers of two, got {self.nx}x{self.ny}")
        if self.values.shape != (self.ny, self.nx):
            raise ValueError(f"raster values have shape {self.values.shape}, expected {(self.ny, self.nx)}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("raster values must be finite")

    def sample(self, points: np.ndarray) -> np.ndarray:
        i = np.clip(np.floor(points[:, 0] * self.nx).astype(int), 0, self.nx - 1)
        j = np.clip(np.floor(points[:, 1] * self.ny).astype(int), 0, self.ny - 1)
        return self.values[j, i]


@dataclass(frozen=True, eq=False)
class CoefficientField:
    mesh_level: int
    mu: np.ndarray
    lam: np.ndarray
    alpha: np.ndarray
    kappa: np.ndarray  # (nt, 3): k11, k22, k12

    def __post_init__(self):
        arrays = (self.mu, self.lam, self.alpha, self.kappa)
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValueError("coefficients must be finite")
        if self.mu.min() <= 0:
            raise ValueError("mu must be positive")
        if self.lam.min() < 0:
            raise ValueError("lambda must be nonnegative")
        if self.kappa_eigenvalues.min() <= 0:
            raise ValueError("kappa must be uniformly positive definite")

    @property
    def kappa_eigenvalues(self) -> np.ndarray:
        a, d, b = self.kappa[:, 0], self.kappa[:, 1], self.kappa[:, 2]
        mean = 0.5 * (a + d)
        rad = np.sqrt(0.25 * (a - d) ** 2 + b**2)
        return np.column_stack([mean - rad, mean + rad])

    @property
    def kappa_matrices(self) -> np.ndarray:
        k = self.kappa
        return np.stack(
            [np.column_stack([k[:, 0], k[:, 2]]), np.column_stack([k[:, 2], k[:, 1]])],
            axis=1,
        )

    def bounds(self) -> dict[str, float]:
        """Essential lower/upper bounds mu1, mu2, ..., kappa1, kappa2."""
        ev = self.kappa_eigenvalues
        out = {}
        for name, arr in (("mu", self.mu), ("lambda", self.lam), ("alpha", self.alpha)):
            out[f"{name}1"] = float(arr.min())
            out[f"{name}2"] = float(arr.max())
        out["kappa1"] = float(ev[:, 0].min())
        out["kappa2"] = float(ev[:, 1].max())
        return out

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.mesh_level).encode())
        for arr in (self.mu, self.lam, self.alpha, self.kappa):
            h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        return h.hexdigest()[:16]


def _kappa_scalar(values: np.ndarray) -> np.ndarray:
    return np.column_stack([values, values, np.zeros_like(values)])


def from_constants(m_fine: int, mu: float, lam: float, alpha: float, kappa: float) -> CoefficientField:
    if mu <= 0 or kappa <= 0:
        raise ValueError("mu and kappa must be positive")
    nt = 2 * 4**m_fine
    one = np.ones(nt)
    return CoefficientField(m_fine, mu * one, lam * one, alpha * one, _kappa_scalar(kappa * one))


def from_two_phase_raster(m_fine: int, raster: Raster, background: Phase, inclusion: Phase) -> CoefficientField:
    """Phase 0 cells take the background values, phase 1 cells the inclusion values."""
    n = 2**m_fine
    if raster.nx > n or raster.ny > n:
        raise ValueError(f"raster {raster.nx}x{raster.ny} is finer than the mesh (N={n})")
    if not np.all(np.isin(raster.values, (0, 1))):
        raise ValueError("two-phase raster must contain only 0 and 1")
    mesh = build_uniform_mesh(m_fine)
    phase = raster.sample(mesh.centroids).astype(bool)

    def pick(attr):
        return np.where(phase, getattr(inclusion, attr), getattr(background, attr)).astype(float)

    return CoefficientField(m_fine, pick("mu"), pick("lam"), pick("alpha"), _kappa_scalar(pick("kappa")))


def load_raster(path) -> Raster:
    """Read ``nx ny`` then ny rows (bottom-up) of nx reals."""
    with open(path) as fh:
        lines = [(no, ln.split()) for no, ln in enumerate(fh, start=1)]
    lines = [(no, toks) for no, toks in lines if toks]
    if not lines:
        raise ValueError(f"{path}: empty raster file")
    no, header = lines[0]
    try:
        nx, ny = (int(t) for t in header)
    except ValueError:
        raise ValueError(f"{path}:{no}: header must be two integers 'nx ny'") from None
    rows = []
    for no, toks in lines[1:]:
        try:
            row = [float(t) for t in toks]
        except ValueError:
            raise ValueError(f"{path}:{no}: could not parse value") from None
        if len(row) != nx:
            raise ValueError(f"{path}:{no}: expected {nx} values, found {len(row)}")
        rows.append(row)
    if len(rows) != ny:
        raise ValueError(f"{path}: expected {ny} rows, found {len(rows)}")
    return Raster(nx, ny, np.array(rows, dtype=float))


def save_raster(raster: Raster, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{raster.nx} {raster.ny}\n")
        for row in raster.values:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def default_composite_raster(cells: int = 32) -> Raster:
    """Periodic array of single-cell inclusions separated by single-cell gaps."""
    j, i = np.meshgrid(np.arange(cells), np.arange(cells), indexing="ij")
    return Raster(cells, cells, ((i % 2 == 1) & (j % 2 == 1)).astype(float))


def default_checkerboard_raster(cells: int = 32, seed: int = 42) -> Raster:
    """Random 0/1 cells, reproducible through ``seed``."""
    rng = np.random.default_rng(seed)
    return Raster(cells, cells, rng.integers(0, 2, size=(cells, cells)).astype(float))


# example 1: inclusion/background ratios mu 10, lambda 50, alpha 10, kappa 10
COMPOSITE_BACKGROUND = Phase(mu=1.0, lam=1.0, alpha=1.0, kappa=1.0)
COMPOSITE_INCLUSION = Phase(mu=10.0, lam=50.0, alpha=10.0, kappa=10.0)
# example 2: only alpha varies
ALPHA_LOW = Phase(mu=1.0, lam=1.0, alpha=0.1, kappa=1.0)
ALPHA_HIGH = Phase(mu=1.0, lam=1.0, alpha=10.0, kappa=1.0)
