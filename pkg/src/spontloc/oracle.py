"""Deterministic master-equation oracles and ensemble statistics.

The oracles are deliberately built from different ingredients than the
simulators: the averaged kick uses overlaps of shifted meter packets instead
of the ``G`` tables, the diffusive generator is written with explicit matrix
products, and time integration is classical RK4 rather than exact
propagation through an eigendecomposition.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .lattice import HBAR, DenseOperator, embed_diagonal
from .meter import PointerPacket, ReductionKernel


def _matrix(op) -> np.ndarray:
    return op.entries if isinstance(op, DenseOperator) else np.asarray(op, dtype=complex)


def packet_overlap_matrix(packet: PointerPacket, positions: np.ndarray, kappa: float) -> np.ndarray:
    """``C[j, l] = sum_y f0(y - kappa x_j) conj(f0(y - kappa x_l)) h``.

    This equals the quadrature of ``g_j(y) conj(g_l(y)) |f0(y)|^2`` but never
    divides by ``f0``.
    """
    shifted = packet.evaluate(packet.y[:, None] - kappa * np.asarray(positions)[None, :])
    return (shifted.T * packet.h) @ shifted.conj()


def averaged_mixing_matrix(packet: PointerPacket, positions: np.ndarray, kappa: float,
                           particle_count: int = 1) -> np.ndarray:
    """Entrywise multiplier ``A`` with ``sum_y Psi[rho](y) |f0|^2 h = A * rho``."""
    c = packet_overlap_matrix(packet, positions, kappa)
    n = c.shape[0]
    M = particle_count
    out = 0.0
    for k in range(1, M + 1):
        # C^(k)[J, L] = C[j_k, l_k]
        idx = embed_diagonal(np.arange(n), k, M)
        out = out + c[idx[:, None], idx[None, :]]
    return out / M


def make_jump_master_rhs(H, kernel: ReductionKernel, nu: float, particle_count: int = 1,
                         hbar: float = HBAR) -> Callable[[np.ndarray], np.ndarray]:
    """``rho -> -(i/hbar)[H, rho] + M nu (sum_y Psi[rho](y)|f0|^2 h - rho)``."""
    h = _matrix(H)
    A = averaged_mixing_matrix(kernel.packet, kernel.positions, kernel.kappa, particle_count)
    rate = particle_count * nu

    def rhs(rho):
        return -1j / hbar * (h @ rho - rho @ h) + rate * (A * rho - rho)
    return rhs


def jump_master_rhs(rho, H, kernel: ReductionKernel, nu: float, particle_count: int = 1,
                    hbar: float = HBAR) -> np.ndarray:
    return make_jump_master_rhs(H, kernel, nu, particle_count, hbar)(np.asarray(rho, dtype=complex))


def make_diffusive_master_rhs(H, positions: np.ndarray, gamma: float, sigma2: float,
                              particle_count: int = 1, hbar: float = HBAR):
    """``rho -> -(i/hbar)[H,rho] + (gamma/hbar)^2 sigma2 sum_k (R_k rho R_k - {R_k^2, rho}/2)``."""
    h = _matrix(H)
    rate = (gamma / hbar) ** 2 * sigma2
    Rs = [np.diag(embed_diagonal(np.asarray(positions, dtype=float), k, particle_count)).astype(complex)
          for k in range(1, particle_count + 1)]
    R2 = [r @ r for r in Rs]

    def rhs(rho):
        out = -1j / hbar * (h @ rho - rho @ h)
        for r, r2 in zip(Rs, R2):
            out = out + rate * (r @ rho @ r - 0.5 * (r2 @ rho + rho @ r2))
        return out
    return rhs


def diffusive_master_rhs(rho, H, positions, gamma: float, sigma2: float, particle_count: int = 1,
                         hbar: float = HBAR) -> np.ndarray:
    return make_diffusive_master_rhs(H, positions, gamma, sigma2, particle_count, hbar)(
        np.asarray(rho, dtype=complex))


@dataclass
class OdeResult:
    times: np.ndarray
    states: np.ndarray
    error_estimate: float
    step_too_large: bool

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _rk4(rhs, y0, T, dt, sample_times):
    n_steps = max(1, int(np.ceil(T / dt - 1e-9)))
    h = T / n_steps
    grid_idx = np.rint(np.asarray(sample_times) / h).astype(int)
    if np.any(np.abs(grid_idx * h - sample_times) > 1e-9 * max(1.0, T)):
        raise ValueError("sample times must be multiples of the step")
    out = np.empty((len(sample_times),) + y0.shape, dtype=complex)
    y = np.array(y0, dtype=complex)
    for s in np.nonzero(grid_idx == 0)[0]:
        out[s] = y
    for step in range(1, n_steps + 1):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        for s in np.nonzero(grid_idx == step)[0]:
            out[s] = y
    return out


def ode_integrate(rhs, rho0, T: float, dt: float = 1e-3, sample_times: Optional[Sequence[float]] = None,
                  tol: float = 1e-8, estimate_error: bool = True) -> OdeResult:
    """Classical RK4 with a step-halving self-error estimate.

    The estimate is the max-entry difference between the ``dt`` and ``dt/2``
    solutions at the sample times; ``step_too_large`` is set when it exceeds ``tol``.
    """
    if T < 0 or dt <= 0:
        raise ValueError("need T >= 0 and dt > 0")
    st = np.array([T] if sample_times is None else sample_times, dtype=float)
    rho0 = np.asarray(rho0, dtype=complex)
    if T == 0:
        states = np.broadcast_to(rho0, (st.size,) + rho0.shape).copy()
        return OdeResult(st, states, 0.0, False)
    coarse = _rk4(rhs, rho0, T, dt, st)
    err = 0.0
    if estimate_error:
        fine = _rk4(rhs, rho0, T, dt / 2, st)
        err = float(np.max(np.abs(fine - coarse)))
    return OdeResult(st, coarse, err, err > tol)


def trace_distance(rho1, rho2, trace_tol: float = 1e-6) -> float:
    """``||rho1 - rho2||_1 / 2`` from the eigenvalues of the Hermitian difference."""
    a = np.asarray(rho1, dtype=complex)
    b = np.asarray(rho2, dtype=complex)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch {a.shape} vs {b.shape}")
    ta, tb = np.trace(a).real, np.trace(b).real
    if abs(ta - 1) > trace_tol or abs(tb - 1) > trace_tol:
        raise ValueError(f"trace mismatch: Tr rho1 = {ta}, Tr rho2 = {tb} (tolerance {trace_tol})")
    d = a - b
    d = 0.5 * (d + d.conj().T)
    return float(min(1.0, 0.5 * np.sum(np.abs(np.linalg.eigvalsh(d)))))


@dataclass
class EnsembleAverage:
    mean: np.ndarray
    sem: np.ndarray
    count: int


def ensemble_average(states: np.ndarray, densities: bool = False) -> EnsembleAverage:
    """Average of trajectory outer products (or density snapshots) with per-entry SEM.

    ``states`` has shape ``(n_traj, n_times, dim)`` for state vectors or
    ``(n_traj, n_times, dim, dim)`` for densities; a missing time axis is allowed.
    Unnormalized (linear-mode) vectors carry their likelihood weight in their
    norm, so the plain mean of ``chi chi^dag`` is already the weighted average.
    """
    s = np.asarray(states)
    n = s.shape[0]
    if n < 1:
        raise ValueError("empty ensemble")
    if densities:
        mean = s.mean(axis=0)
        var = (np.abs(s - mean) ** 2).sum(axis=0) / max(n - 1, 1)
    else:
        mean = np.einsum("n...i,n...j->...ij", s, s.conj()) / n
        # centered second pass in chunks, avoiding E|X|^2 - |EX|^2 cancellation
        dim = s.shape[-1]
        chunk = max(1, 4_000_000 // (dim * dim * max(1, int(np.prod(s.shape[1:-1])))))
        acc = np.zeros(mean.shape)
        for start in range(0, n, chunk):
            block = s[start:start + chunk]
            outer = np.einsum("n...i,n...j->n...ij", block, block.conj())
            acc += (np.abs(outer - mean) ** 2).sum(axis=0)
        var = acc / max(n - 1, 1)
    sem = np.sqrt(var / n) if n > 1 else np.zeros_like(var)
    return EnsembleAverage(mean, sem, n)


def normalize_trace(rho: np.ndarray) -> np.ndarray:
    return rho / np.trace(rho).real


@dataclass
class OracleReport:
    pairing: str
    times: np.ndarray
    trace_distance: np.ndarray
    sem_band: np.ndarray
    tolerance: float

    def __post_init__(self):
        if np.any((self.trace_distance < 0) | (self.trace_distance > 1)):
            raise ValueError("trace distances must lie in [0, 1]")

    @property
    def max_distance(self) -> float:
        return float(np.max(self.trace_distance))

    @property
    def max_sem(self) -> float:
        return float(np.max(self.sem_band))

    @property
    def passed(self) -> bool:
        """Agreement within tolerance, resolved by an ensemble whose noise band is also within it."""
        return self.max_distance <= self.tolerance and self.max_sem <= self.tolerance

    def rows(self):
        for t, d, s in zip(self.times, self.trace_distance, self.sem_band):
            yield float(t), float(d), float(s)


def sem_band(sem: np.ndarray) -> np.ndarray:
    """Scalar noise level per time: the Frobenius norm of the SEM matrix."""
    return np.sqrt(np.sum(sem**2, axis=(-2, -1)))


def compare_to_oracle(pairing: str, times, ensemble: EnsembleAverage, oracle_states,
                      tolerance: float, renormalize: bool = False) -> OracleReport:
    means = ensemble.mean if ensemble.mean.ndim == 3 else ensemble.mean[None]
    oracle_states = np.asarray(oracle_states)
    if oracle_states.ndim == 2:
        oracle_states = oracle_states[None]
    dists = np.array([trace_distance(normalize_trace(m) if renormalize else m, o)
                      for m, o in zip(means, oracle_states)])
    band = sem_band(ensemble.sem if ensemble.sem.ndim == 3 else ensemble.sem[None])
    return OracleReport(pairing, np.asarray(times, dtype=float), dists, band, tolerance)


def oracle_vs_oracle(pairing: str, times, states_a, states_b, tolerance: float) -> OracleReport:
    dists = np.array([trace_distance(a, b) for a, b in zip(states_a, states_b)])
    return OracleReport(pairing, np.asarray(times, dtype=float), dists, np.zeros(dists.size), tolerance)
