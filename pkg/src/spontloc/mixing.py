"""Indistinguishable particles: mixing reductions and density-operator trajectories.

A scatterer hits one of ``M`` identical particles, but which one is not
observable.  The a posteriori description is therefore the label average
``Psi(y)[rho] = (1/M) sum_k G(k, y) rho G(k, y)^dag`` where ``G(k, y)`` acts on
particle ``k`` only.  Since every ``G(k, y)`` is diagonal on the tensor grid
the kick is an entrywise product with outer products of diagonals.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import factorial
from typing import Optional, Sequence

import numpy as np

from .jumps import (TrajectoryRecord, _check_sample_times, _outcome_rows, inverse_cdf_index,
                    propagate_through, sample_poisson_times, trajectory_rng)
from .lattice import HBAR, DenseOperator, WaveFunction, check_capacity, embed, embed_diagonal
from .meter import ReductionKernel

HERMITIAN_TOL = 1e-12
EIGEN_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    entries: np.ndarray
    n_sites: int
    particle_count: int = 1

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=complex)
        dim = check_capacity(self.n_sites, self.particle_count)
        if m.shape != (dim, dim):
            raise ValueError(f"expected a {dim}x{dim} matrix, got {m.shape}")
        object.__setattr__(self, "entries", m)

    @classmethod
    def from_state(cls, psi: WaveFunction) -> "DensityMatrix":
        v = psi.vector
        return cls(np.outer(v, v.conj()), psi.grid.n_sites, psi.particle_count)

    @classmethod
    def maximally_mixed(cls, n_sites: int, particle_count: int = 1) -> "DensityMatrix":
        dim = check_capacity(n_sites, particle_count)
        return cls(np.eye(dim) / dim, n_sites, particle_count)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def trace_weight(self) -> float:
        return float(np.trace(self.entries).real)

    def hermiticity_deviation(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.entries + self.entries.conj().T))[0])

    def check(self, normalized: bool = False) -> None:
        if self.hermiticity_deviation() > HERMITIAN_TOL * max(1.0, self.trace_weight):
            raise ValueError("density matrix is not Hermitian")
        if self.min_eigenvalue() < -EIGEN_TOL * max(1.0, self.trace_weight):
            raise ValueError("density matrix has negative eigenvalues")
        if normalized and abs(self.trace_weight - 1) > 1e-10:
            raise ValueError(f"density matrix trace {self.trace_weight} != 1")

    def normalized(self) -> "DensityMatrix":
        return DensityMatrix(self.entries / self.trace_weight, self.n_sites, self.particle_count)

    def with_entries(self, entries: np.ndarray) -> "DensityMatrix":
        return DensityMatrix(entries, self.n_sites, self.particle_count)


def embed_single(op, k: int, particle_count: int) -> DenseOperator:
    """``I^(k-1) (x) op (x) I^(M-k)``."""
    m = op.entries if isinstance(op, DenseOperator) else np.asarray(op, dtype=complex)
    hermitian = op.hermitian_flag if isinstance(op, DenseOperator) else False
    return DenseOperator(embed(m, k, particle_count), hermitian=hermitian)


def kick_diagonals(g: np.ndarray, particle_count: int) -> np.ndarray:
    """Diagonals of ``G(k, y)`` for ``k = 1..M``, shape ``(M, n^M)``."""
    return np.stack([embed_diagonal(g, k, particle_count) for k in range(1, particle_count + 1)])


def _kernel_row(kernel: ReductionKernel, y: float) -> np.ndarray:
    return _outcome_rows(kernel, [y])[0]


def _mix(entries: np.ndarray, diags: np.ndarray) -> np.ndarray:
    out = np.zeros_like(entries)
    for d in diags:
        out += d[:, None] * entries * d.conj()[None, :]
    return out / diags.shape[0]


def mixing_kick(rho: DensityMatrix, kernel: ReductionKernel, y: float) -> DensityMatrix:
    """``(1/M) sum_k G(k, y) rho G(k, y)^dag``."""
    diags = kick_diagonals(_kernel_row(kernel, y), rho.particle_count)
    return rho.with_entries(_mix(rho.entries, diags))


def effect_diagonal(kernel: ReductionKernel, y: float, particle_count: int) -> np.ndarray:
    """Diagonal of ``E(y) = (1/M) sum_k G(k, y)^dag G(k, y)``."""
    diags = kick_diagonals(_kernel_row(kernel, y), particle_count)
    return np.mean(np.abs(diags) ** 2, axis=0)


def averaged_channel_matrix(kernel: ReductionKernel, particle_count: int) -> np.ndarray:
    """Entrywise multiplier of the nonselective channel ``sum_y Psi(y)[rho] |f0|^2 h``."""
    c = kernel.channel_matrix
    n = c.shape[0]
    out = np.zeros((n**particle_count,) * 2, dtype=complex)
    for k in range(1, particle_count + 1):
        idx = embed_diagonal(np.arange(n), k, particle_count)
        out += c[idx[:, None], idx[None, :]]
    return out / particle_count


def nonselective_mixing(rho: DensityMatrix, kernel: ReductionKernel) -> DensityMatrix:
    return rho.with_entries(averaged_channel_matrix(kernel, rho.particle_count) * rho.entries)


def site_marginals(rho: DensityMatrix) -> np.ndarray:
    """Single-particle occupation marginals of ``diag(rho)``, shape ``(M, n)``."""
    n, M = rho.n_sites, rho.particle_count
    p = np.diag(rho.entries).real.reshape((n,) * M)
    axes = range(M)
    return np.stack([p.sum(axis=tuple(a for a in axes if a != k)) for k in range(M)])


def mixing_outcome_law(kernel: ReductionKernel, rho: DensityMatrix) -> np.ndarray:
    """Unnormalized ``Tr{E(y) rho} |f0(y)|^2 h`` on the meter grid."""
    marg = site_marginals(rho)
    return (np.abs(kernel.table) ** 2 @ marg.mean(axis=0)) * kernel.packet.weights


def von_neumann_entropy(rho, trace_tol: float = 1e-8) -> float:
    """``-Tr rho ln rho`` with eigenvalues in ``[-1e-10, 0)`` clamped to zero."""
    m = rho.entries if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    tr = np.trace(m).real
    if abs(tr - 1) > trace_tol:
        raise ValueError(f"entropy requires a normalized density matrix (trace {tr})")
    lam = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
    if lam[0] < -EIGEN_TOL:
        raise ValueError(f"density matrix has eigenvalue {lam[0]} < -{EIGEN_TOL}")
    lam = lam[lam > 0]
    return float(max(0.0, -np.sum(lam * np.log(lam))))


def permutation_operator(n_sites: int, perm: Sequence[int]) -> np.ndarray:
    """Unitary permuting tensor factors: particle ``k`` goes to slot ``perm[k]``."""
    M = len(perm)
    dim = check_capacity(n_sites, M)
    idx = np.arange(dim).reshape((n_sites,) * M)
    moved = np.transpose(idx, np.argsort(perm)).reshape(-1)
    P = np.zeros((dim, dim))
    P[moved, np.arange(dim)] = 1.0
    return P


def symmetrize(psi: WaveFunction, particle_count: Optional[int] = None) -> WaveFunction:
    """Bosonic projection ``(1/M!) sum_pi P_pi psi``, renormalized."""
    M = psi.particle_count if particle_count is None else particle_count
    n = psi.grid.n_sites
    t = psi.vector.reshape((n,) * M)
    sym = sum(np.transpose(t, p) for p in itertools.permutations(range(M))) / factorial(M)
    vec = sym.reshape(-1)
    nrm = np.linalg.norm(vec)
    if nrm < 1e-14:
        raise ValueError("state has no symmetric component")
    return WaveFunction.from_vector(psi.grid, vec / nrm, M)


def _conjugate(entries: np.ndarray, H: DenseOperator, t: float, hbar: float) -> np.ndarray:
    if t == 0:
        return entries
    U = H.propagator(t, hbar)
    return U @ entries @ U.conj().T


def propagate_density(entries, H: DenseOperator, event_times, sample_times, kick, hbar=HBAR):
    """Density analogue of :func:`jumps.propagate_through`."""
    out = np.empty((len(sample_times),) + entries.shape, dtype=complex)
    t_cur, e = 0.0, 0
    for s_idx, s in enumerate(sample_times):
        while e < len(event_times) and event_times[e] < s:
            entries = _conjugate(entries, H, event_times[e] - t_cur, hbar)
            t_cur = event_times[e]
            entries = kick(e, entries)
            e += 1
        entries = _conjugate(entries, H, s - t_cur, hbar)
        t_cur = s
        out[s_idx] = entries
    return out


@dataclass
class DensityTrajectory:
    record: TrajectoryRecord
    states: np.ndarray
    particle_count: int

    @property
    def traces(self) -> np.ndarray:
        return np.einsum("tii->t", self.states).real

    def entropies(self) -> np.ndarray:
        return np.array([von_neumann_entropy(s / np.trace(s).real) for s in self.states])


def run_density_trajectory(config, H: DenseOperator, kernel: ReductionKernel, rho0: DensityMatrix,
                           index: int = 0) -> DensityTrajectory:
    """One seeded ``M``-particle density trajectory (events at intensity ``M nu``)."""
    if abs(rho0.trace_weight - 1) > 1e-10:
        raise ValueError("initial density matrix must have unit trace")
    M = rho0.particle_count
    st = _check_sample_times(config.sample_times, config.T)
    rng = trajectory_rng(config.seed, index)
    times = sample_poisson_times(M * config.nu, config.T, rng)
    idx = np.empty(times.size, dtype=np.int64)
    table = kernel.table
    tmpl = rho0

    if config.mode == "linear":
        cdf = np.cumsum(kernel.packet.weights)

        def kick(n, m):
            i = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), cdf.size - 1)
            idx[n] = i
            return _mix(m, kick_diagonals(table[i], M))
    elif config.mode == "normalized":
        def kick(n, m):
            i = inverse_cdf_index(mixing_outcome_law(kernel, tmpl.with_entries(m)), rng)
            idx[n] = i
            out = _mix(m, kick_diagonals(table[i], M))
            return out / np.trace(out).real
    else:
        raise ValueError(f"unknown mode {config.mode!r}")

    states = propagate_density(rho0.entries, H, times, st, kick, config.hbar)
    traces = np.einsum("tii->t", states).real
    rec = TrajectoryRecord(config.seed, index, M * config.nu, config.T, config.mode, times,
                           kernel.packet.y[idx], idx, st, states,
                           traces if config.mode == "linear" else None)
    return DensityTrajectory(rec, states, M)


def run_labeled_trajectory(config, H: DenseOperator, kernel: ReductionKernel, eta: WaveFunction,
                           index: int = 0) -> TrajectoryRecord:
    """Hidden-label pure trajectory under the input law (labels uniform in ``1..M``)."""
    M = eta.particle_count
    st = _check_sample_times(config.sample_times, config.T)
    rng = trajectory_rng(config.seed, index)
    times = sample_poisson_times(M * config.nu, config.T, rng)
    cdf = np.cumsum(kernel.packet.weights)
    idx = np.empty(times.size, dtype=np.int64)
    labels = np.empty(times.size, dtype=np.int64)

    def kick(n, vec):
        labels[n] = int(rng.integers(1, M + 1))
        i = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), cdf.size - 1)
        idx[n] = i
        return embed_diagonal(kernel.table[i], labels[n], M) * vec

    states = propagate_through(eta.vector, H, times, st, kick, config.hbar)
    return TrajectoryRecord(config.seed, index, M * config.nu, config.T, "linear", times,
                            kernel.packet.y[idx], idx, st, states,
                            np.sum(np.abs(states) ** 2, axis=1), labels)


@dataclass
class ConditionalExpectationReport:
    deviation: float
    assignments: int
    enumerated: np.ndarray
    iterated: np.ndarray


def conditional_expectation_check(H: DenseOperator, kernel: ReductionKernel, eta: WaveFunction,
                                  events, t: Optional[float] = None,
                                  hbar: float = HBAR) -> ConditionalExpectationReport:
    """Average over all ``M^n`` label assignments vs ``n`` iterated mixing kicks."""
    M = eta.particle_count
    events = list(events)
    n = len(events)
    if M**n > 64:
        raise ValueError(f"M^n = {M**n} label assignments exceed 64")
    times = np.array([e[0] for e in events], dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("events must be strictly time-ordered")
    if t is None:
        t = float(times[-1]) + 0.1 if n else 0.0
    if n and times[-1] >= t:
        raise ValueError("all events must precede the final time t")

    rows = _outcome_rows(kernel, [e[1] for e in events])
    full = [[np.diag(embed_diagonal(r, k, M)) for k in range(1, M + 1)] for r in rows]
    rho0 = np.outer(eta.vector, eta.vector.conj())
    enumerated = np.zeros_like(rho0)
    for labels in itertools.product(range(M), repeat=n):
        def kick(i, m, _labels=labels):
            g = full[i][_labels[i]]
            return g @ m @ g.conj().T
        enumerated += propagate_density(rho0, H, times, [t], kick, hbar)[0]
    enumerated /= M**n

    diags = [kick_diagonals(r, M) for r in rows]
    iterated = propagate_density(rho0, H, times, [t], lambda i, m: _mix(m, diags[i]), hbar)[0]
    dev = float(np.max(np.abs(enumerated - iterated)))
    return ConditionalExpectationReport(dev, M**n, enumerated, iterated)


def nonselective_entropy_path(rho0: DensityMatrix, kernel: ReductionKernel, kicks: int,
                              H: Optional[DenseOperator] = None, dt: float = 0.0,
                              hbar: float = HBAR) -> np.ndarray:
    """Entropy after each of ``kicks`` nonselective mixing steps (with optional free evolution)."""
    A = averaged_channel_matrix(kernel, rho0.particle_count)
    m = rho0.entries
    out = [von_neumann_entropy(m)]
    for _ in range(kicks):
        if H is not None and dt:
            m = _conjugate(m, H, dt, hbar)
        m = A * m
        m = m / np.trace(m).real
        out.append(von_neumann_entropy(m))
    return np.array(out)
