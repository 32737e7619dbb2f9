"""Many weak scatterings: mean-field and central (diffusive) limits.

With ``nu -> infinity`` and ``nu kappa = -gamma`` fixed the scattering turns
into a potential ``-gamma p0 R``.  With ``kappa = -gamma / sqrt(nu)`` it turns
into Wiener noise and the state obeys a diffusive stochastic equation
``d chi + K chi dt = gamma R chi dv``, with

    K = (i/hbar) H + (1/2) (gamma/hbar)^2 sigma2 R^2.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .jumps import trajectory_rng
from .lattice import HBAR, DenseOperator, embed_diagonal
from .meter import PointerPacket, ReductionKernel
from .oracle import make_diffusive_master_rhs, make_jump_master_rhs, ode_integrate, trace_distance

NOISE_KINDS = ("real_u", "complex_v")


@dataclass(frozen=True, eq=False)
class DiffusionParams:
    H: DenseOperator
    positions: np.ndarray
    gamma: float
    sigma2: float
    p0: float
    noise_kind: str
    dt: float
    noise_covariance: np.ndarray
    particle_count: int = 1
    hbar: float = HBAR

    def __post_init__(self):
        if self.noise_kind not in NOISE_KINDS:
            raise ValueError(f"noise_kind must be one of {NOISE_KINDS}")
        if not self.dt > 0:
            raise ValueError("step must satisfy dt > 0")

    @cached_property
    def R_diagonals(self) -> np.ndarray:
        """Diagonals of ``R(k)`` on the tensor grid, shape ``(M, n^M)``."""
        x = np.asarray(self.positions, dtype=float)
        M = self.particle_count
        return np.stack([embed_diagonal(x, k, M) for k in range(1, M + 1)])

    @property
    def R_bar(self) -> np.ndarray:
        return self.R_diagonals.mean(axis=0)

    @property
    def rate(self) -> float:
        """``(gamma / hbar)^2 sigma2``."""
        return (self.gamma / self.hbar) ** 2 * self.sigma2

    @cached_property
    def K(self) -> DenseOperator:
        r2 = np.sum(self.R_diagonals**2, axis=0)
        return DenseOperator(1j / self.hbar * self.H.entries + np.diag(0.5 * self.rate * r2))

    def hermitian_part_deviation(self) -> float:
        k = self.K.entries
        expected = np.diag(0.5 * self.rate * np.sum(self.R_diagonals**2, axis=0))
        return float(np.max(np.abs(0.5 * (k + k.conj().T) - expected)))


def diffusion_params(H: DenseOperator, positions, packet: PointerPacket, gamma: float, dt: float,
                     noise_kind: str = "complex_v", particle_count: int = 1,
                     hbar: Optional[float] = None) -> DiffusionParams:
    hb = packet.hbar if hbar is None else hbar
    return DiffusionParams(H, np.asarray(positions, dtype=float), float(gamma), packet.sigma2, packet.p0,
                           noise_kind, float(dt), packet.noise_covariance, particle_count, hb)


@dataclass(frozen=True, eq=False)
class NoisePath:
    seed: Optional[int]
    kind: str
    dt: float
    increments: np.ndarray


def _noise_factor(kind: str, packet_cov: np.ndarray, sigma2: float, dt: float):
    if kind == "real_u":
        return np.sqrt(sigma2 * dt)
    # (Re dv, Im dv) ~ N(0, cov dt); a semidefinite square root
    w, v = np.linalg.eigh(packet_cov * dt)
    return v * np.sqrt(np.clip(w, 0.0, None))


def _draw(kind, factor, rng, shape):
    if kind == "real_u":
        return factor * rng.standard_normal(shape)
    z = rng.standard_normal(shape + (2,)) @ factor.T
    return z[..., 0] + 1j * z[..., 1]


def wiener_increments(packet: PointerPacket, kind: str, dt: float, steps: int,
                      rng: np.random.Generator, seed: Optional[int] = None, scale: float = 1.0) -> NoisePath:
    """Gaussian increments: real ``du`` with variance ``sigma2 dt`` or complex ``dv``
    with the second moments of the centered osmotic velocity ``L'`` under ``mu0``.

    ``scale`` multiplies the increments (``sqrt(M)`` for the ``M``-particle ``dw``).
    """
    if kind not in NOISE_KINDS:
        raise ValueError(f"kind must be one of {NOISE_KINDS}")
    factor = _noise_factor(kind, packet.noise_covariance, packet.sigma2, dt)
    inc = scale * _draw(kind, factor, rng, (steps,))
    return NoisePath(seed, kind, dt, inc)


def mean_field_hamiltonian(H: DenseOperator, R, gamma: float, p0: float) -> DenseOperator:
    """``H - gamma p0 R``."""
    r = R.entries if isinstance(R, DenseOperator) else np.asarray(R, dtype=complex)
    if r.ndim == 1:
        r = np.diag(r)
    return DenseOperator(H.entries - gamma * p0 * r, hermitian=True)


def diffusive_sse_step(chi: np.ndarray, params: DiffusionParams, dv) -> np.ndarray:
    """Euler-Maruyama step of ``d chi = -K chi dt + gamma R chi dv``.

    ``chi`` may be a single vector or a batch ``(n_paths, dim)`` with ``dv`` of shape ``(n_paths,)``.
    """
    if params.noise_kind != "complex_v":
        raise ValueError("diffusive_sse_step needs complex_v noise")
    chi = np.asarray(chi, dtype=complex)
    dv = np.asarray(dv)
    drift = chi @ params.K.entries.T
    noise = params.gamma * params.R_bar * chi * (dv[..., None] if dv.ndim else dv)
    return chi - drift * params.dt + noise


def unitary_diffusive_step(psi: np.ndarray, params: DiffusionParams, du):
    """Stochastic Heun step of ``d psi + K psi dt = (i/hbar) gamma R psi du`` plus projection.

    In Stratonovich form the Ito correction cancels the Hermitian part of ``K``,
    leaving the drift ``-(i/hbar) H psi``; Heun integrates that form.  Returns
    ``(psi', defect)`` with ``defect = | ||psi'_unprojected|| - 1 |``.
    """
    if params.noise_kind != "real_u":
        raise ValueError("unitary_diffusive_step needs real_u noise")
    psi = np.asarray(psi, dtype=complex)
    du = np.asarray(du, dtype=float)
    du_b = du[..., None] if du.ndim else du
    h = params.H.entries.T
    coef = 1j * params.gamma / params.hbar * params.R_bar

    def drift(v):
        return -1j / params.hbar * (v @ h)

    a0 = drift(psi)
    b0 = coef * psi
    pred = psi + a0 * params.dt + b0 * du_b
    new = psi + 0.5 * (a0 + drift(pred)) * params.dt + 0.5 * (b0 + coef * pred) * du_b
    norm = np.linalg.norm(new, axis=-1)
    norm_in = np.linalg.norm(psi, axis=-1)
    defect = np.abs(norm / norm_in - 1.0)
    out = new / (norm / norm_in)[..., None] if new.ndim > 1 else new * (norm_in / norm)
    return out, defect


def diffusive_density_step(rho: np.ndarray, params: DiffusionParams, dw):
    """Euler-Maruyama step of the ``M``-particle diffusive density equation.

    ``d rho = -(K rho + rho K^dag) dt + rate sum_k R_k rho R_k dt + gamma (dw Rbar rho + rho Rbar dw*)``.
    Returns ``(rho', hermiticity_deviation)`` where the deviation is measured
    before symmetrization.
    """
    rho = np.asarray(rho, dtype=complex)
    K = params.K.entries
    Rd = params.R_diagonals
    rb = params.R_bar
    dw = np.asarray(dw)
    dwb = dw[..., None, None] if dw.ndim else dw
    drift = -(K @ rho + rho @ K.conj().T)
    for r in Rd:
        drift = drift + params.rate * r[:, None] * rho * r[None, :]
    noise = params.gamma * (dwb * rb[:, None] * rho + np.conj(dwb) * rho * rb[None, :])
    new = rho + drift * params.dt + noise
    herm = np.swapaxes(new, -1, -2).conj()
    dev = np.max(np.abs(new - herm), axis=(-2, -1))
    return 0.5 * (new + herm), dev


def _step_count(T: float, dt: float) -> int:
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError("T must be a positive multiple of dt")
    return n


def _sample_steps(sample_times, dt, n_steps):
    idx = np.rint(np.asarray(sample_times, dtype=float) / dt).astype(int)
    if np.any(idx < 0) or np.any(idx > n_steps):
        raise ValueError("sample times must lie in [0, T]")
    return idx


def path_noise(params: DiffusionParams, seed: int, n_paths: int, n_steps: int, scale: float = 1.0,
               packet_covariance: Optional[np.ndarray] = None) -> np.ndarray:
    """Increments for ``n_paths`` paths, path ``i`` drawn from its own counter-derived stream."""
    cov = params.noise_covariance if packet_covariance is None else packet_covariance
    factor = _noise_factor(params.noise_kind, cov, params.sigma2, params.dt)
    rows = [_draw(params.noise_kind, factor, trajectory_rng(seed, i), (n_steps,)) for i in range(n_paths)]
    return scale * np.stack(rows)


@dataclass
class DiffusiveRun:
    sample_times: np.ndarray
    states: np.ndarray
    defects: Optional[np.ndarray] = None
    hermiticity: Optional[np.ndarray] = None


def run_diffusive_sse(params: DiffusionParams, chi0: np.ndarray, T: float, n_paths: int, seed: int,
                      sample_times: Optional[Sequence[float]] = None) -> DiffusiveRun:
    n_steps = _step_count(T, params.dt)
    st = np.array([T] if sample_times is None else sample_times, dtype=float)
    sidx = _sample_steps(st, params.dt, n_steps)
    noise = path_noise(params, seed, n_paths, n_steps)
    chi = np.broadcast_to(np.asarray(chi0, dtype=complex), (n_paths, len(chi0))).copy()
    out = np.empty((n_paths, st.size, chi.shape[1]), dtype=complex)
    for s in np.nonzero(sidx == 0)[0]:
        out[:, s] = chi
    for step in range(1, n_steps + 1):
        chi = diffusive_sse_step(chi, params, noise[:, step - 1])
        for s in np.nonzero(sidx == step)[0]:
            out[:, s] = chi
    return DiffusiveRun(st, out)


def run_unitary_diffusion(params: DiffusionParams, psi0: np.ndarray, T: float, n_runs: int,
                          seed: int) -> DiffusiveRun:
    """Final states and per-run accumulated unprojected norm defect ``sum_steps defect``."""
    n_steps = _step_count(T, params.dt)
    noise = path_noise(params, seed, n_runs, n_steps)
    psi = np.broadcast_to(np.asarray(psi0, dtype=complex), (n_runs, len(psi0))).copy()
    total = np.zeros(n_runs)
    for step in range(n_steps):
        psi, d = unitary_diffusive_step(psi, params, noise[:, step])
        total += d
    return DiffusiveRun(np.array([T]), psi[:, None], defects=total)


def run_diffusive_density(params: DiffusionParams, rho0: np.ndarray, T: float, n_paths: int, seed: int,
                          sample_times: Optional[Sequence[float]] = None) -> DiffusiveRun:
    """Density paths driven by ``dw = sqrt(M) dv``."""
    n_steps = _step_count(T, params.dt)
    st = np.array([T] if sample_times is None else sample_times, dtype=float)
    sidx = _sample_steps(st, params.dt, n_steps)
    noise = path_noise(params, seed, n_paths, n_steps, scale=np.sqrt(params.particle_count))
    rho = np.broadcast_to(np.asarray(rho0, dtype=complex), (n_paths,) + np.shape(rho0)).copy()
    out = np.empty((n_paths, st.size) + rho.shape[1:], dtype=complex)
    herm = np.zeros(n_paths)
    for s in np.nonzero(sidx == 0)[0]:
        out[:, s] = rho
    for step in range(1, n_steps + 1):
        rho, dev = diffusive_density_step(rho, params, noise[:, step - 1])
        herm = np.maximum(herm, dev)
        for s in np.nonzero(sidx == step)[0]:
            out[:, s] = rho
    return DiffusiveRun(st, out, hermiticity=herm)


@dataclass
class ConvergenceReport:
    nus: np.ndarray
    errors: np.ndarray
    exponent: float

    @property
    def ratios(self) -> np.ndarray:
        return self.errors[:-1] / self.errors[1:]

    def rows(self):
        for nu, err in zip(self.nus, self.errors):
            yield float(nu), float(err), self.exponent


def fitted_exponent(nus, errors) -> float:
    """``-slope`` of ``log error`` against ``log nu``."""
    errors = np.asarray(errors, dtype=float)
    if np.any(errors <= 0):
        return float("nan")
    return float(-np.polyfit(np.log(nus), np.log(errors), 1)[0])


def _matrix_unit(dim, j, l):
    e = np.zeros((dim, dim), dtype=complex)
    e[j, l] = 1.0
    return e


def jump_generator_vs_diffusive(nus: Sequence[float], gamma: float, H: DenseOperator, positions,
                                packet: PointerPacket, sign: float = -1.0,
                                hbar: Optional[float] = None) -> ConvergenceReport:
    """``max_{j,l} max|(L_nu - L_inf)[E_jl]|`` at ``kappa = sign * gamma / sqrt(nu)``."""
    hb = packet.hbar if hbar is None else hbar
    x = np.asarray(positions, dtype=float)
    dim = x.size
    L_inf = make_diffusive_master_rhs(H, x, gamma, packet.sigma2, 1, hb)
    errors = []
    for nu in nus:
        kernel = ReductionKernel(packet, x, sign * gamma / np.sqrt(nu))
        L_nu = make_jump_master_rhs(H, kernel, nu, 1, hb)
        err = 0.0
        for j in range(dim):
            for l in range(dim):
                e = _matrix_unit(dim, j, l)
                err = max(err, float(np.max(np.abs(L_nu(e) - L_inf(e)))))
        errors.append(err)
    nus = np.asarray(nus, dtype=float)
    errors = np.asarray(errors)
    return ConvergenceReport(nus, errors, fitted_exponent(nus, errors) if gamma else float("nan"))


def mean_field_convergence(nus: Sequence[float], gamma: float, H: DenseOperator, positions,
                           packet: PointerPacket, rho0: np.ndarray, T: float = 1.0, dt: float = 1e-3,
                           hbar: Optional[float] = None) -> ConvergenceReport:
    """Trace distance between the jump oracle at ``kappa = -gamma/nu`` and ``H - gamma p0 R`` evolution."""
    hb = packet.hbar if hbar is None else hbar
    x = np.asarray(positions, dtype=float)
    U = mean_field_hamiltonian(H, x, gamma, packet.p0).propagator(T, hb)
    target = U @ rho0 @ U.conj().T
    errors = []
    for nu in nus:
        kernel = ReductionKernel(packet, x, -gamma / nu)
        res = ode_integrate(make_jump_master_rhs(H, kernel, nu, 1, hb), rho0, T, dt, estimate_error=False)
        errors.append(trace_distance(res.final, target))
    nus = np.asarray(nus, dtype=float)
    errors = np.asarray(errors)
    return ConvergenceReport(nus, errors, fitted_exponent(nus, errors))
