"""Experiment configuration: dataclasses plus a flat INI reader and writer.

A config file has the sections ``[mesh]``, ``[boundary]``, ``[coefficients]``,
``[data]``, ``[time]`` and ``[run]``, each holding ``key = value`` lines. Lists
are comma separated. A missing key takes the default of the example-1 preset.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .assembly import BoundaryConfig
from .coefficients import (
    ALPHA_HIGH,
    ALPHA_LOW,
    COMPOSITE_BACKGROUND,
    COMPOSITE_INCLUSION,
    CoefficientField,
    Phase,
    default_checkerboard_raster,
    default_composite_raster,
    from_constants,
    from_two_phase_raster,
    load_raster,
)
from .lod import default_k
from .mesh import SIDES
from .solvers import ProblemData, TimeGrid

THETA0_FORMS = ("bubble", "sine", "zero")
BUILTIN_RASTERS = ("composite", "checkerboard")


class ConfigError(ValueError):
    """Invalid configuration. ``field`` is the dotted name of the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class CoefficientSpec:
    kind: str = "two_phase"  # "two_phase" or "constant" (constant uses the background phase)
    raster: str = "composite"  # builtin name or path to a raster file
    raster_cells: int = 32
    raster_seed: int = 42
    background: Phase = COMPOSITE_BACKGROUND
    inclusion: Phase = COMPOSITE_INCLUSION

    def build(self, m_fine: int) -> CoefficientField:
        if self.kind == "constant":
            b = self.background
            return from_constants(m_fine, b.mu, b.lam, b.alpha, b.kappa)
        if self.raster == "composite":
            raster = default_composite_raster(self.raster_cells)
        elif self.raster == "checkerboard":
            raster = default_checkerboard_raster(self.raster_cells, self.raster_seed)
        else:
            try:
                raster = load_raster(self.raster)
            except (OSError, ValueError) as exc:
                raise ConfigError("coefficients.raster", str(exc)) from exc
        try:
            return from_two_phase_raster(m_fine, raster, self.background, self.inclusion)
        except ValueError as exc:
            raise ConfigError("coefficients.raster", str(exc)) from exc


@dataclass(frozen=True)
class DataSpec:
    """Constant body force and heat source, and a named closed form for theta0."""

    f: tuple[float, float] = (0.0, 0.0)
    g: float = -10.0
    theta0: str = "bubble"  # bubble: x(1-x)y(1-y), sine: sin(pi x) sin(pi y), zero
    theta0_scale: float = 500.0

    def build(self) -> ProblemData:
        fx, fy = self.f
        g, s = self.g, self.theta0_scale
        if self.theta0 == "bubble":
            theta0 = lambda x, y: s * x * (1 - x) * y * (1 - y)
        elif self.theta0 == "sine":
            theta0 = lambda x, y: s * np.sin(np.pi * x) * np.sin(np.pi * y)
        else:
            theta0 = lambda x, y: 0.0 * x
        return ProblemData(lambda x, y, t: (fx, fy), lambda x, y, t: g, theta0)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "example1"
    fine_level: int = 5
    coarse_levels: tuple[int, ...] = (1, 2, 3, 4)
    # None means "auto": k = round(k_constant * log2(1/H)); an entry None means k = infinity
    k_schedule: Optional[tuple[Optional[int], ...]] = (1, 1, 2, 2)
    k_constant: float = 1.0
    dirichlet_u: tuple[str, ...] = ("bottom",)
    dirichlet_theta: tuple[str, ...] = SIDES
    coefficients: CoefficientSpec = field(default_factory=CoefficientSpec)
    data: DataSpec = field(default_factory=DataSpec)
    tau: float = 0.05
    T: float = 1.0
    output_dir: str = "out"
    threads: int = 1
    alpha_correction: bool = True

    def __post_init__(self):
        validate(self)

    @property
    def boundary(self) -> BoundaryConfig:
        return BoundaryConfig(frozenset(self.dirichlet_u), frozenset(self.dirichlet_theta))

    @property
    def timegrid(self) -> TimeGrid:
        return TimeGrid.from_final_time(self.tau, self.T)

    def ks(self) -> list[Optional[int]]:
        """Patch size per coarse level."""
        if self.k_schedule is not None:
            return list(self.k_schedule)
        return [default_k(math.sqrt(2.0) * 2.0 ** -m, self.k_constant) for m in self.coarse_levels]

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


def validate(cfg: ExperimentConfig) -> None:
    if cfg.fine_level < 0:
        raise ConfigError("mesh.fine_level", "must be >= 0")
    if not cfg.coarse_levels:
        raise ConfigError("mesh.coarse_levels", "need at least one coarse level")
    for m in cfg.coarse_levels:
        if not 0 <= m <= cfg.fine_level:
            raise ConfigError("mesh.coarse_levels", f"level {m} outside [0, fine_level={cfg.fine_level}]")
    if list(cfg.coarse_levels) != sorted(set(cfg.coarse_levels)):
        raise ConfigError("mesh.coarse_levels", "levels must be distinct and increasing")
    if cfg.k_schedule is not None:
        if len(cfg.k_schedule) != len(cfg.coarse_levels):
            raise ConfigError("mesh.k", f"{len(cfg.k_schedule)} entries for {len(cfg.coarse_levels)} coarse levels")
        if any(k is not None and k < 0 for k in cfg.k_schedule):
            raise ConfigError("mesh.k", "patch sizes must be >= 0")
    if not cfg.k_constant > 0:
        raise ConfigError("mesh.k_constant", "must be positive")
    for name in ("dirichlet_u", "dirichlet_theta"):
        bad = set(getattr(cfg, name)) - set(SIDES)
        if bad:
            raise ConfigError(f"boundary.{name}", f"unknown sides {sorted(bad)}")
    if not cfg.dirichlet_theta:
        raise ConfigError("boundary.dirichlet_theta", "at least one Dirichlet side is required")
    if not cfg.dirichlet_u:
        raise ConfigError("boundary.dirichlet_u", "at least one Dirichlet side is required")
    c = cfg.coefficients
    if c.kind not in ("two_phase", "constant"):
        raise ConfigError("coefficients.kind", f"unknown kind {c.kind!r}")
    for name in ("background", "inclusion"):
        p = getattr(c, name)
        if not (p.mu > 0 and p.lam >= 0 and p.kappa > 0 and math.isfinite(p.alpha)):
            raise ConfigError(f"coefficients.{name}", "need mu > 0, lambda >= 0, kappa > 0, finite alpha")
    if c.kind == "two_phase" and c.raster in BUILTIN_RASTERS:
        n = c.raster_cells
        if n < 1 or n & (n - 1):
            raise ConfigError("coefficients.raster_cells", "must be a power of two")
        if n > 2 ** cfg.fine_level:
            raise ConfigError("coefficients.raster_cells",
                              f"{n} cells finer than the fine mesh (2^{cfg.fine_level} squares per side)")
    if cfg.data.theta0 not in THETA0_FORMS:
        raise ConfigError("data.theta0", f"unknown form {cfg.data.theta0!r}; choose from {THETA0_FORMS}")
    if not all(map(math.isfinite, (*cfg.data.f, cfg.data.g, cfg.data.theta0_scale))):
        raise ConfigError("data", "values must be finite")
    try:
        TimeGrid.from_final_time(cfg.tau, cfg.T)
    except ValueError as exc:
        raise ConfigError("time.T", str(exc)) from exc
    if cfg.threads < 1:
        raise ConfigError("run.threads", "must be >= 1")


# ---------------------------------------------------------------- presets

def example1(full_scale: bool = False) -> ExperimentConfig:
    """Two-phase composite, Dirichlet bottom for u, g = -10, theta0 = 500 x(1-x)y(1-y)."""
    cfg = ExperimentConfig(name="example1", output_dir="out/example1")
    return full_scale_schedule(cfg) if full_scale else cfg


def example2(full_scale: bool = False) -> ExperimentConfig:
    """Random alpha checkerboard in {0.1, 10}, clamped boundary, f = (1, 1), g = 10."""
    cfg = ExperimentConfig(
        name="example2",
        dirichlet_u=SIDES,
        coefficients=CoefficientSpec(
            raster="checkerboard",
            background=ALPHA_LOW,
            inclusion=ALPHA_HIGH,
        ),
        data=DataSpec(f=(1.0, 1.0), g=10.0, theta0="bubble", theta0_scale=1.0),
        output_dir="out/example2",
    )
    return full_scale_schedule(cfg) if full_scale else cfg


def full_scale_schedule(cfg: ExperimentConfig) -> ExperimentConfig:
    """m_F = 6 with five coarse levels down to H = sqrt(2) 2^-5 and k = 1,1,2,2,3."""
    return replace(cfg, fine_level=6, coarse_levels=(1, 2, 3, 4, 5), k_schedule=(1, 1, 2, 2, 3))


PRESETS = {"example1": example1, "example2": example2}


def preset(name: str, full_scale: bool = False) -> ExperimentConfig:
    try:
        return PRESETS[name](full_scale)
    except KeyError:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# ---------------------------------------------------------------- INI io

def _num(x: float) -> str:
    return repr(float(x))


def _phase_str(p: Phase) -> str:
    return ", ".join(_num(v) for v in (p.mu, p.lam, p.alpha, p.kappa))


def to_ini(cfg: ExperimentConfig) -> str:
    """Normalized text form; ``parse_ini(to_ini(cfg)) == cfg``."""
    if cfg.k_schedule is None:
        k = "auto"
    else:
        k = ", ".join("inf" if v is None else str(v) for v in cfg.k_schedule)
    c, d = cfg.coefficients, cfg.data
    sections = {
        "mesh": {
            "fine_level": str(cfg.fine_level),
            "coarse_levels": ", ".join(map(str, cfg.coarse_levels)),
            "k": k,
            "k_constant": _num(cfg.k_constant),
        },
        "boundary": {
            "dirichlet_u": ", ".join(cfg.dirichlet_u),
            "dirichlet_theta": ", ".join(cfg.dirichlet_theta),
        },
        "coefficients": {
            "kind": c.kind,
            "raster": c.raster,
            "raster_cells": str(c.raster_cells),
            "raster_seed": str(c.raster_seed),
            "background": _phase_str(c.background),
            "inclusion": _phase_str(c.inclusion),
        },
        "data": {
            "f": ", ".join(_num(v) for v in d.f),
            "g": _num(d.g),
            "theta0": d.theta0,
            "theta0_scale": _num(d.theta0_scale),
        },
        "time": {"tau": _num(cfg.tau), "T": _num(cfg.T)},
        "run": {
            "name": cfg.name,
            "output_dir": cfg.output_dir,
            "threads": str(cfg.threads),
            "alpha_correction": "true" if cfg.alpha_correction else "false",
        },
    }
    lines = []
    for sec, kv in sections.items():
        lines.append(f"[{sec}]")
        lines.extend(f"{key} = {val}" for key, val in kv.items())
        lines.append("")
    return "\n".join(lines)


_KNOWN = {
    "mesh": {"fine_level", "coarse_levels", "k", "k_constant"},
    "boundary": {"dirichlet_u", "dirichlet_theta"},
    "coefficients": {"kind", "raster", "raster_cells", "raster_seed", "background", "inclusion"},
    "data": {"f", "g", "theta0", "theta0_scale"},
    "time": {"tau", "T"},
    "run": {"name", "output_dir", "threads", "alpha_correction"},
}


def _split(s: str) -> list[str]:
    return [p.strip() for p in s.split(",") if p.strip()]


class _Reader:
    def __init__(self, parser: configparser.ConfigParser):
        self.p = parser

    def raw(self, sec: str, key: str) -> Optional[str]:
        if self.p.has_option(sec, key):
            return self.p.get(sec, key).strip()
        return None

    def conv(self, sec, key, fn, default):
        s = self.raw(sec, key)
        if s is None:
            return default
        try:
            return fn(s)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{sec}.{key}", f"cannot parse {s!r} ({exc})") from None


def _phase(s: str) -> Phase:
    vals = [float(v) for v in _split(s)]
    if len(vals) != 4:
        raise ValueError("expected mu, lambda, alpha, kappa")
    return Phase(*vals)


def _ks(s: str):
    if s.lower() == "auto":
        return None
    return tuple(None if v.lower() in ("inf", "infinity") else int(v) for v in _split(s))


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError("expected true or false")


def _pair(s: str) -> tuple[float, float]:
    vals = tuple(float(v) for v in _split(s))
    if len(vals) != 2:
        raise ValueError("expected two components")
    return vals


def parse_ini(text: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Parse config text; missing keys fall back to ``base`` (default: example-1 preset)."""
    base = base or example1()
    p = configparser.ConfigParser(interpolation=None)
    p.optionxform = str
    try:
        p.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("file", str(exc).splitlines()[0]) from None
    for sec in p.sections():
        if sec not in _KNOWN:
            raise ConfigError(sec, "unknown section")
        for key in p.options(sec):
            if key not in _KNOWN[sec]:
                raise ConfigError(f"{sec}.{key}", "unknown key")
    r = _Reader(p)
    bc, bdata = base.coefficients, base.data
    coeffs = CoefficientSpec(
        kind=r.conv("coefficients", "kind", str, bc.kind),
        raster=r.conv("coefficients", "raster", str, bc.raster),
        raster_cells=r.conv("coefficients", "raster_cells", int, bc.raster_cells),
        raster_seed=r.conv("coefficients", "raster_seed", int, bc.raster_seed),
        background=r.conv("coefficients", "background", _phase, bc.background),
        inclusion=r.conv("coefficients", "inclusion", _phase, bc.inclusion),
    )
    data = DataSpec(
        f=r.conv("data", "f", _pair, bdata.f),
        g=r.conv("data", "g", float, bdata.g),
        theta0=r.conv("data", "theta0", str, bdata.theta0),
        theta0_scale=r.conv("data", "theta0_scale", float, bdata.theta0_scale),
    )
    sides = lambda s: tuple(_split(s))
    return ExperimentConfig(
        name=r.conv("run", "name", str, base.name),
        fine_level=r.conv("mesh", "fine_level", int, base.fine_level),
        coarse_levels=r.conv("mesh", "coarse_levels", lambda s: tuple(int(v) for v in _split(s)),
                             base.coarse_levels),
        k_schedule=r.conv("mesh", "k", _ks, base.k_schedule),
        k_constant=r.conv("mesh", "k_constant", float, base.k_constant),
        dirichlet_u=r.conv("boundary", "dirichlet_u", sides, base.dirichlet_u),
        dirichlet_theta=r.conv("boundary", "dirichlet_theta", sides, base.dirichlet_theta),
        coefficients=coeffs,
        data=data,
        tau=r.conv("time", "tau", float, base.tau),
        T=r.conv("time", "T", float, base.T),
        output_dir=r.conv("run", "output_dir", str, base.output_dir),
        threads=r.conv("run", "threads", int, base.threads),
        alpha_correction=r.conv("run", "alpha_correction", _bool, base.alpha_correction),
    )


def load_config(path, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("file", f"cannot read {path}: {exc.strerror}") from None
    return parse_ini(text, base)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(to_ini(cfg))


def config_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)
