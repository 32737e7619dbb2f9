"""A single unsharp position measurement ("kick") and its joint-space model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .lattice import HBAR, MAX_DIM, CapacityError, DenseOperator, LatticeGrid, WaveFunction
from .meter import ReductionKernel, _require_normalized, output_density


@dataclass(frozen=True, eq=False)
class KickOutcome:
    y: float
    posterior: WaveFunction
    likelihood: float
    prior_norm: float


class ZeroLikelihoodError(ValueError):
    pass


def posterior_state(kernel: ReductionKernel, eta: WaveFunction, y: float) -> KickOutcome:
    """Condition ``eta`` on the pointer reading ``y``."""
    vec = _require_normalized(eta)
    with np.errstate(over="ignore", invalid="ignore"):
        unnorm = kernel(y) * vec
    with np.errstate(over="ignore", invalid="ignore"):
        prior_norm = float(np.vdot(unnorm, unnorm).real)
    if not np.isfinite(prior_norm):
        raise ValueError(f"G(y) eta is not representable at y={y}")
    if prior_norm == 0:
        raise ZeroLikelihoodError(f"G(y) eta vanishes at y={y}")
    f0y = complex(kernel.packet.evaluate(y))
    posterior = WaveFunction.from_vector(eta.grid, unnorm / np.sqrt(prior_norm))
    return KickOutcome(float(y), posterior, prior_norm * abs(f0y) ** 2, prior_norm)


def pointer_statistics(kernel: ReductionKernel, eta: WaveFunction) -> np.ndarray:
    return output_density(kernel, eta)


def sharp_cells(grid: LatticeGrid, kappa: float) -> np.ndarray:
    """Integer cell label ``floor(x_j / kappa)`` of every site."""
    ratio = kappa / grid.spacing
    m = int(round(ratio))
    if m < 1 or abs(ratio - m) > 1e-9:
        raise ValueError(f"cell width kappa={kappa} is not an integer multiple of a={grid.spacing}")
    # x_j / kappa = (2 j - n) / (2 m) exactly
    return (2 * np.arange(grid.n_sites) - grid.n_sites) // (2 * m)


def sharp_projection_stats(grid: LatticeGrid, kappa: float, eta: WaveFunction):
    """Probabilities of the pointer cells ``kappa * floor(x / kappa)``.

    Returns ``(cell_values, probabilities)`` with cells in increasing order.
    """
    labels = sharp_cells(grid, kappa)
    lo = labels.min()
    probs = np.bincount(labels - lo, weights=np.abs(eta.amplitudes) ** 2 * grid.spacing)
    cells = kappa * np.arange(lo, lo + probs.size)
    return cells, probs


def single_kick_evolve(H: DenseOperator, kernel: ReductionKernel, eta: WaveFunction, t0: float,
                       t: float, y: float, hbar: float = HBAR) -> WaveFunction:
    """Unnormalized state ``U(t) G(y) U(-t0) eta`` (kick at time 0, start at ``t0 <= 0``)."""
    if t0 > 0:
        raise ValueError("start time must satisfy t0 <= 0")
    if t < t0:
        raise ValueError(f"t={t} precedes the start time t0={t0}")
    vec = eta.vector
    if t <= 0:
        return WaveFunction.from_vector(eta.grid, H.apply_propagator(vec, t - t0, hbar))
    vec = kernel(y) * H.apply_propagator(vec, -t0, hbar)
    return WaveFunction.from_vector(eta.grid, H.apply_propagator(vec, t, hbar))


@dataclass
class JointModelReport:
    shift_deviation: float
    density_deviation: float
    nondemolition_commutator: float
    self_commutator: float
    early_commutator: float
    meter_points: int
    meter_step: float

    def passed(self, tol: float = 1e-8) -> bool:
        return max(self.shift_deviation, self.density_deviation,
                   self.nondemolition_commutator, self.self_commutator) <= tol


def meter_momentum(n_points: int, step: float, hbar: float = HBAR):
    """DFT matrix and momentum eigenvalues of the periodic meter grid."""
    fourier = np.fft.fft(np.eye(n_points), axis=0, norm="ortho")
    p = 2 * np.pi * hbar * np.fft.fftfreq(n_points, d=step)
    return fourier, p


def joint_model_check(H: DenseOperator, kernel: ReductionKernel, eta: Optional[WaveFunction] = None,
                      X: Optional[np.ndarray] = None, n_meter: int = 72, meter_step: float = 1.0 / 8,
                      r: float = 0.5, times: Sequence[float] = (-0.2, 0.3, 0.9),
                      commutators: bool = True, hbar: float = HBAR) -> JointModelReport:
    """Build particle (x) meter explicitly and check the reduced description against it.

    The meter is a periodic grid of ``n_meter`` points; ``S = exp(-i kappa R (x) P / hbar)``
    is assembled blockwise in the meter momentum basis.  The scattering happens at
    time 0 after free evolution from ``t0 = -r``.
    """
    n = kernel.n_sites
    dim = n * n_meter
    if dim > MAX_DIM:
        raise CapacityError(f"joint dimension {dim} exceeds {MAX_DIM}")
    kappa, x = kernel.kappa, kernel.positions
    packet = kernel.packet
    ym = (np.arange(n_meter) - n_meter / 2) * meter_step

    f = packet.evaluate(ym)
    scale = 1.0 / np.sqrt(np.sum(np.abs(f) ** 2) * meter_step)
    f = f * scale

    fourier, p = meter_momentum(n_meter, meter_step, hbar)
    blocks = [fourier.conj().T @ (np.exp(-1j * kappa * xj * p / hbar)[:, None] * fourier) for xj in x]
    S = np.zeros((dim, dim), dtype=complex)
    for j, b in enumerate(blocks):
        S[j * n_meter:(j + 1) * n_meter, j * n_meter:(j + 1) * n_meter] = b

    # (i) S |x_j> (x) f0 = |x_j> (x) f0(. - kappa x_j)
    shift_dev = 0.0
    for j, xj in enumerate(x):
        shifted = blocks[j] @ f
        exact = scale * packet.evaluate(ym - kappa * xj)
        shift_dev = max(shift_dev, float(np.max(np.abs(shifted - exact))))

    # (ii) pointer law from the joint state vs the reduced description
    if eta is None:
        c = np.ones(n, dtype=complex) / np.sqrt(n)
    else:
        c = _require_normalized(eta)
    joint = (S @ np.kron(c, f)).reshape(n, n_meter)
    p_joint = np.sum(np.abs(joint) ** 2, axis=0)
    p_reduced = (np.abs(kernel(ym)) ** 2 @ np.abs(c) ** 2) * np.abs(scale * packet.evaluate(ym)) ** 2
    density_dev = float(np.max(np.abs(p_joint - p_reduced)))

    if not commutators:
        return JointModelReport(shift_dev, density_dev, float("nan"), float("nan"), float("nan"),
                                n_meter, meter_step)

    # (iii) Heisenberg-picture commutators
    eye_m = np.eye(n_meter)
    U0 = lambda t: np.kron(H.propagator(t, hbar), eye_m)
    Q = np.kron(np.eye(n), np.diag(ym)) / (kappa if kappa else 1.0)
    Xop = np.kron(np.diag(x) if X is None else np.asarray(X), eye_m)

    def U1(t):
        return U0(t) @ (S if t > 0 else np.eye(dim)) @ U0(r)

    def heis(op, t):
        u = U1(t)
        return u.conj().T @ op @ u

    Ys = {t: (heis(Q, t) if t > 0 else np.zeros((dim, dim))) for t in times}
    Xs = {s: heis(Xop, s) for s in times}
    nondem = selfc = early = 0.0
    for s in times:
        for t in times:
            cyy = Ys[s] @ Ys[t] - Ys[t] @ Ys[s]
            selfc = max(selfc, float(np.max(np.abs(cyy))))
            cxy = float(np.max(np.abs(Xs[s] @ Ys[t] - Ys[t] @ Xs[s])))
            if s >= t:
                nondem = max(nondem, cxy)
            else:
                early = max(early, cxy)
    return JointModelReport(shift_dev, density_dev, nondem, selfc, early, n_meter, meter_step)
