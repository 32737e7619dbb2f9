"""Run configuration: INI-style file with ``[grid] [meter] [dynamics] [run]`` sections."""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from typing import Mapping, Optional

import numpy as np

from .lattice import (HBAR, DenseOperator, LatticeGrid, WaveFunction, build_grid, gaussian_state,
                      hamiltonian, harmonic_potential, point_mass, position_operator)
from .meter import PointerPacket, ReductionKernel, gaussian_packet, reduction_kernel, skewed_packet


class ConfigError(ValueError):
    """Invalid configuration; the message names the violated bound."""


SECTIONS = {
    "grid": ("n_sites", "spacing", "boundary", "mass", "potential", "omega"),
    "meter": ("y_max", "h", "kappa", "packet", "boost", "skew"),
    "dynamics": ("nu", "gamma", "hbar", "horizon", "mode", "particles", "dt"),
    "run": ("trajectories", "seed", "samples", "threads", "tolerance", "initial", "x0", "width", "k0"),
}


@dataclass(frozen=True)
class SimConfig:
    n_sites: int = 16
    spacing: float = 0.25
    boundary: str = "dirichlet"
    mass: float = 1.0
    potential: str = "harmonic"
    omega: float = 1.0
    y_max: float = 8.0
    h: float = 1.0 / 256
    kappa: float = 0.3
    packet: str = "gaussian"
    boost: float = 0.0
    skew: float = 0.5
    nu: float = 2.0
    gamma: float = 1.0
    hbar: float = HBAR
    horizon: float = 1.0
    mode: str = "normalized"
    particles: int = 1
    dt: float = 1e-3
    trajectories: int = 10_000
    seed: int = 0
    samples: int = 11
    threads: int = 1
    tolerance: float = 0.02
    initial: str = "gaussian"
    x0: float = 0.0
    width: float = 0.5
    k0: float = 0.0

    def __post_init__(self):
        checks = [
            (self.n_sites >= 2, "n_sites >= 2"),
            (self.spacing > 0, "a > 0"),
            (self.boundary in ("dirichlet", "periodic"), "boundary in {dirichlet, periodic}"),
            (self.mass > 0, "m > 0"),
            (self.potential in ("none", "harmonic"), "potential in {none, harmonic}"),
            (self.y_max >= 6, "Y >= 6"),
            (0 < self.h <= 1.0 / 64, "0 < h <= 1/64"),
            (self.packet in ("gaussian", "skewed"), "packet in {gaussian, skewed}"),
            (self.nu > 0, "ν > 0"),
            (self.hbar > 0, "ħ > 0"),
            (self.horizon > 0, "T > 0"),
            (self.mode in ("linear", "normalized"), "mode in {linear, normalized}"),
            (1 <= self.particles <= 3, "1 <= M <= 3"),
            (self.dt > 0, "dt > 0"),
            (self.trajectories >= 1, "trajectories >= 1"),
            (self.seed >= 0, "seed >= 0"),
            (self.samples >= 1, "samples >= 1"),
            (self.threads >= 1, "threads >= 1"),
            (self.tolerance > 0, "tolerance > 0"),
            (self.initial in ("gaussian", "point", "uniform"), "initial in {gaussian, point, uniform}"),
            (self.width > 0, "width > 0"),
        ]
        for ok, bound in checks:
            if not ok:
                raise ConfigError(f"configuration violates {bound}")
        if self.packet == "skewed" and self.boost:
            raise ConfigError("configuration violates boost = 0 for the skewed packet")

    @property
    def T(self) -> float:
        return self.horizon

    @property
    def sample_times(self) -> np.ndarray:
        if self.samples == 1:
            return np.array([self.horizon])
        return np.linspace(0.0, self.horizon, self.samples)

    def replace(self, **changes) -> "SimConfig":
        return SimConfig(**{**asdict(self), **changes})

    def as_dict(self) -> dict:
        return asdict(self)

    # model construction

    def grid(self) -> LatticeGrid:
        return build_grid(self.n_sites, self.spacing, self.boundary)

    def hamiltonian(self, particles: Optional[int] = None) -> DenseOperator:
        g = self.grid()
        pot = harmonic_potential(g, self.mass, self.omega) if self.potential == "harmonic" else None
        return hamiltonian(g, self.mass, pot, particle_count=particles or 1, hbar=self.hbar)

    def pointer_packet(self) -> PointerPacket:
        if self.packet == "skewed":
            return skewed_packet(self.skew, self.y_max, self.h, self.hbar)
        return gaussian_packet(self.y_max, self.h, self.boost, self.hbar)

    def kernel(self, kappa: Optional[float] = None) -> ReductionKernel:
        return reduction_kernel(self.pointer_packet(), position_operator(self.grid()),
                                self.kappa if kappa is None else kappa)

    def initial_state(self) -> WaveFunction:
        g = self.grid()
        if self.initial == "point":
            return point_mass(g, int(np.argmin(np.abs(g.positions - self.x0))))
        if self.initial == "uniform":
            return WaveFunction.from_vector(g, np.ones(g.n_sites) / np.sqrt(g.n_sites))
        return gaussian_state(g, self.x0, self.width, self.k0, self.hbar)


_TYPES = {f.name: f.type for f in fields(SimConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(Fraction(raw.strip())) if "/" in raw else float(raw)
        return raw.strip()
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"cannot parse {key}={raw!r} as {kind}") from None


def parse_config(path: Optional[str] = None, overrides: Optional[Mapping[str, object]] = None) -> SimConfig:
    """Defaults, then the file, then ``overrides`` (e.g. command-line flags)."""
    values: dict = {}
    if path:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        with open(path) as fh:
            parser.read_file(fh)
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]")
            for key, raw in parser.items(section):
                if key not in SECTIONS[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                values[key] = _coerce(key, raw)
    for key, val in (overrides or {}).items():
        if key not in _TYPES:
            raise ConfigError(f"unknown key {key!r}")
        if val is None:
            continue
        values[key] = _coerce(key, val) if isinstance(val, str) else val
    return SimConfig(**values)


def render_config(cfg: SimConfig) -> str:
    """INI text that parses back to ``cfg``."""
    d = cfg.as_dict()
    lines = []
    for section, keys in SECTIONS.items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {d[k]!r}" if isinstance(d[k], float) else f"{k} = {d[k]}" for k in keys)
        lines.append("")
    return "\n".join(lines)
