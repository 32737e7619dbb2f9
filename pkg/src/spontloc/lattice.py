"""Lattice Hilbert spaces, Hamiltonians and exact unitary propagation.

Wave functions live on a centered 1-d lattice ``x_j = (j - n/2) * a``.  The
amplitudes carry the lattice measure, ``||psi||^2 = sum |psi_j|^2 a^M``; all
dense linear algebra is done on the orthonormal coefficient vector
``psi * a^(M/2)`` exposed as :attr:`WaveFunction.vector`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

HBAR = 1.0
MAX_DIM = 4096


class CapacityError(ValueError):
    """Raised when a tensor-grid dimension exceeds :data:`MAX_DIM`."""


@dataclass(frozen=True, eq=False)
class LatticeGrid:
    n_sites: int
    spacing: float
    boundary: str = "dirichlet"

    def __post_init__(self):
        if int(self.n_sites) != self.n_sites or self.n_sites < 2:
            raise ValueError(f"n_sites must satisfy n_sites >= 2, got {self.n_sites}")
        if not self.spacing > 0:
            raise ValueError(f"spacing must satisfy a > 0, got {self.spacing}")
        if self.boundary not in ("dirichlet", "periodic"):
            raise ValueError(f"unknown boundary {self.boundary!r}")

    @cached_property
    def positions(self) -> np.ndarray:
        x = (np.arange(self.n_sites) - self.n_sites / 2) * self.spacing
        x.setflags(write=False)
        return x

    def dim(self, particle_count: int = 1) -> int:
        return check_capacity(self.n_sites, particle_count)


def build_grid(n_sites: int, spacing: float, boundary: str = "dirichlet") -> LatticeGrid:
    return LatticeGrid(n_sites, float(spacing), boundary)


def check_capacity(n_sites: int, particle_count: int) -> int:
    if particle_count < 1:
        raise ValueError("particle_count must be >= 1")
    dim = n_sites**particle_count
    if dim > MAX_DIM:
        raise CapacityError(f"dimension {n_sites}^{particle_count} = {dim} exceeds {MAX_DIM}")
    return dim


@dataclass(frozen=True, eq=False)
class WaveFunction:
    grid: LatticeGrid
    amplitudes: np.ndarray
    particle_count: int = 1

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        expected = self.grid.dim(self.particle_count)
        if amps.size != expected:
            raise ValueError(f"expected {expected} amplitudes, got {amps.size}")
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_vector(cls, grid: LatticeGrid, vector, particle_count: int = 1) -> "WaveFunction":
        vector = np.asarray(vector, dtype=complex)
        return cls(grid, vector / grid.spacing ** (particle_count / 2), particle_count)

    @property
    def vector(self) -> np.ndarray:
        """Coefficients in the orthonormal site basis."""
        return self.amplitudes * self.grid.spacing ** (self.particle_count / 2)

    @property
    def norm2(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.spacing**self.particle_count)

    def normalized(self) -> "WaveFunction":
        n2 = self.norm2
        if n2 <= 0:
            raise ValueError("cannot normalize a zero state")
        return WaveFunction(self.grid, self.amplitudes / np.sqrt(n2), self.particle_count)

    def probabilities(self) -> np.ndarray:
        """Site occupation probabilities ``|psi_j|^2 a^M`` (sum to the squared norm)."""
        return np.abs(self.vector) ** 2


def point_mass(grid: LatticeGrid, site: int) -> WaveFunction:
    v = np.zeros(grid.n_sites, dtype=complex)
    v[site] = 1.0
    return WaveFunction.from_vector(grid, v)


def gaussian_state(grid: LatticeGrid, center: float = 0.0, width: float = 0.5, momentum: float = 0.0,
                   hbar: float = HBAR) -> WaveFunction:
    x = grid.positions
    v = np.exp(-((x - center) ** 2) / (4 * width**2) + 1j * momentum * x / hbar)
    return WaveFunction.from_vector(grid, v / np.linalg.norm(v))


def product_state(*states: WaveFunction) -> WaveFunction:
    vec = states[0].vector
    for s in states[1:]:
        vec = np.kron(vec, s.vector)
    return WaveFunction.from_vector(states[0].grid, vec, len(states))


class DenseOperator:
    """Dense complex matrix with a write-once eigendecomposition cache."""

    def __init__(self, entries, hermitian: bool = False):
        m = np.array(entries, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("operator must be a square matrix")
        if hermitian and np.max(np.abs(m - m.conj().T), initial=0.0) > 1e-12:
            raise ValueError("operator flagged Hermitian but is not (tolerance 1e-12)")
        m.setflags(write=False)
        self.entries = m
        self.hermitian_flag = hermitian

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @cached_property
    def eigh(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.hermitian_flag:
            raise ValueError("eigendecomposition requires a Hermitian operator")
        return np.linalg.eigh(self.entries)

    def propagator(self, t: float, hbar: float = HBAR) -> np.ndarray:
        """``exp(-i H t / hbar)`` from the cached eigendecomposition."""
        w, v = self.eigh
        return (v * np.exp(-1j * w * t / hbar)) @ v.conj().T

    def apply_propagator(self, vec: np.ndarray, t: float, hbar: float = HBAR) -> np.ndarray:
        if t == 0:
            return np.array(vec, dtype=complex)
        w, v = self.eigh
        return v @ (np.exp(-1j * w * t / hbar) * (v.conj().T @ vec))

    def __matmul__(self, other):
        return self.entries @ other

    def __repr__(self):
        return f"DenseOperator(dim={self.dim}, hermitian={self.hermitian_flag})"


def position_operator(grid: LatticeGrid) -> DenseOperator:
    return DenseOperator(np.diag(grid.positions), hermitian=True)


def kinetic_matrix(grid: LatticeGrid, mass: float, hbar: float = HBAR) -> np.ndarray:
    n, a = grid.n_sites, grid.spacing
    lap = -2.0 * np.eye(n) + np.eye(n, k=1) + np.eye(n, k=-1)
    if grid.boundary == "periodic":
        lap[0, -1] += 1.0
        lap[-1, 0] += 1.0
    return -(hbar**2) / (2.0 * mass * a**2) * lap


def embed(op: np.ndarray, k: int, particle_count: int) -> np.ndarray:
    """``I^(k-1) (x) op (x) I^(M-k)`` for a 1-based particle label ``k``."""
    if not 1 <= k <= particle_count:
        raise ValueError(f"label k={k} outside 1..{particle_count}")
    n = op.shape[0]
    check_capacity(n, particle_count)
    left = np.eye(n ** (k - 1))
    right = np.eye(n ** (particle_count - k))
    return np.kron(np.kron(left, op), right)


def embed_diagonal(diag: np.ndarray, k: int, particle_count: int) -> np.ndarray:
    """Diagonal of :func:`embed` for a diagonal single-particle operator."""
    n = diag.shape[-1]
    shape = [1] * particle_count
    shape[k - 1] = n
    full = np.broadcast_to(diag.reshape(diag.shape[:-1] + tuple(shape)),
                           diag.shape[:-1] + (n,) * particle_count)
    return full.reshape(diag.shape[:-1] + (n**particle_count,))


def hamiltonian(grid: LatticeGrid, mass: float = 1.0, potential=None,
                pair_potential: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
                particle_count: int = 1, hbar: float = HBAR) -> DenseOperator:
    """Finite-difference Hamiltonian on the ``particle_count``-fold tensor grid.

    ``pair_potential(x_k, x_l)`` is summed over unordered pairs ``k < l``.
    """
    if not mass > 0:
        raise ValueError("mass must satisfy m > 0")
    n = grid.n_sites
    dim = check_capacity(n, particle_count)
    v = np.zeros(n) if potential is None else np.asarray(potential, dtype=float)
    if v.shape != (n,):
        raise ValueError(f"potential must have length n_sites={n}")
    h1 = kinetic_matrix(grid, mass, hbar) + np.diag(v)
    if particle_count == 1 and pair_potential is None:
        return DenseOperator(h1, hermitian=True)
    hm = np.zeros((dim, dim))
    for k in range(1, particle_count + 1):
        hm += embed(h1, k, particle_count)
    if pair_potential is not None:
        x = grid.positions
        w = np.zeros(dim)
        for k in range(1, particle_count + 1):
            for l in range(k + 1, particle_count + 1):
                xk = embed_diagonal(x, k, particle_count)
                xl = embed_diagonal(x, l, particle_count)
                w += np.asarray(pair_potential(xk, xl), dtype=float)
        hm += np.diag(w)
    return DenseOperator(hm, hermitian=True)


def harmonic_potential(grid: LatticeGrid, mass: float = 1.0, omega: float = 1.0) -> np.ndarray:
    return 0.5 * mass * omega**2 * grid.positions**2


def evolve_unitary(H: DenseOperator, psi: WaveFunction, dt: float, hbar: float = HBAR) -> WaveFunction:
    if not H.hermitian_flag:
        raise ValueError("evolve_unitary requires a Hermitian Hamiltonian")
    if H.dim != psi.amplitudes.size:
        raise ValueError(f"dimension mismatch: H is {H.dim}, state is {psi.amplitudes.size}")
    vec = H.apply_propagator(psi.vector, dt, hbar)
    return WaveFunction.from_vector(psi.grid, vec, psi.particle_count)
