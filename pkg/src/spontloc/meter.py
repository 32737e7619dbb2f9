"""Meter wave packets, reduction kernels and their quadrature tables.

The pointer lives on a truncated uniform grid ``y = -Y, -Y + h, ..., Y``.
Integrals against the input measure ``mu0 = |f0(y)|^2 dy`` are Riemann sums
on that grid, which for the smooth, rapidly decaying packets used here are
accurate to machine precision.

A reduction kernel ``G(y) = f0(y - kappa R) / f0(y)`` is diagonal in the
lattice site basis because ``R`` is the position operator, so it is stored as
a table ``g[y_index, site]`` of diagonal entries.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .lattice import HBAR, DenseOperator, WaveFunction

# fourth-order finite-difference stencils (interior, and one-sided rows for the
# first two points; the last two points use the mirrored rows)
_D1_INTERIOR = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_D1_EDGE = np.array([[-25.0, 48.0, -36.0, 16.0, -3.0, 0.0],
                     [-3.0, -10.0, 18.0, -6.0, 1.0, 0.0]]) / 12.0
_D2_INTERIOR = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
_D2_EDGE = np.array([[45.0, -154.0, 214.0, -156.0, 61.0, -10.0],
                     [10.0, -15.0, -4.0, 14.0, -6.0, 1.0]]) / 12.0


def _stencil_derivative(f: np.ndarray, h: float, order: int) -> np.ndarray:
    interior, edge, parity = ((_D1_INTERIOR, _D1_EDGE, -1.0) if order == 1
                              else (_D2_INTERIOR, _D2_EDGE, 1.0))
    n = f.size
    out = np.empty_like(f)
    out[2:-2] = sum(c * f[k:n - 4 + k] for k, c in enumerate(interior))
    head, tail = f[:6], f[-6:][::-1]
    out[:2] = edge @ head
    out[-2:] = (parity * (edge @ tail))[::-1]
    return out / h**order


def finite_difference(f: np.ndarray, h: float, order: int = 1) -> np.ndarray:
    """Fourth-order accurate derivative of samples ``f`` on a uniform grid."""
    f = np.asarray(f)
    if f.size < 6:
        raise ValueError("need at least 6 samples for the fourth-order stencils")
    return _stencil_derivative(f, h, order)


@dataclass(frozen=True, eq=False)
class PointerPacket:
    y: np.ndarray
    h: float
    half_width: float
    f0_values: np.ndarray
    kind: str
    boost: float = 0.0
    func: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hbar: float = HBAR

    @property
    def density(self) -> np.ndarray:
        """``|f0(y)|^2`` on the grid."""
        return np.abs(self.f0_values) ** 2

    @cached_property
    def weights(self) -> np.ndarray:
        """Quadrature weights of the input measure, ``|f0(y)|^2 h``."""
        return self.density * self.h

    @property
    def norm2(self) -> float:
        return float(np.sum(self.weights))

    def evaluate(self, y) -> np.ndarray:
        """``f0`` at arbitrary (off-grid) arguments."""
        y = np.asarray(y, dtype=float)
        if self.func is not None:
            return self.func(y)
        re = np.interp(y, self.y, self.f0_values.real, left=0.0, right=0.0)
        im = np.interp(y, self.y, self.f0_values.imag, left=0.0, right=0.0)
        return re + 1j * im

    @cached_property
    def first_derivative(self) -> np.ndarray:
        return finite_difference(self.f0_values, self.h, 1)

    @cached_property
    def second_derivative(self) -> np.ndarray:
        return finite_difference(self.f0_values, self.h, 2)

    @cached_property
    def log_derivative(self) -> np.ndarray:
        """``L'(y) = f0'(y) / f0(y)``, which is also the osmotic velocity ``d ln f0``."""
        return self.first_derivative / self.f0_values

    @cached_property
    def log_second_derivative(self) -> np.ndarray:
        """``L''(y) = f0''(y) / f0(y)``."""
        return self.second_derivative / self.f0_values

    @property
    def osmotic_velocity(self) -> np.ndarray:
        return self.log_derivative

    @cached_property
    def p0(self) -> float:
        """Mean meter momentum ``(f0, P f0)``."""
        val = np.sum(np.conj(self.f0_values) * (-1j * self.hbar) * self.first_derivative) * self.h
        return float(val.real)

    @cached_property
    def sigma2(self) -> float:
        """``hbar^2 (f0', f0')`` from the derivative table."""
        return float(self.hbar**2 * np.sum(np.abs(self.first_derivative) ** 2) * self.h)

    @cached_property
    def sigma2_spectral(self) -> float:
        """Second moment of ``P`` computed in the discrete momentum basis."""
        phi = np.fft.fft(self.f0_values)
        p = 2 * np.pi * self.hbar * np.fft.fftfreq(self.y.size, d=self.h)
        prob = np.abs(phi) ** 2
        return float(np.sum(p**2 * prob) / np.sum(prob))

    def mean(self, values) -> complex:
        """Expectation of ``values(y)`` under ``mu0``."""
        return complex(np.sum(np.asarray(values) * self.weights))

    @cached_property
    def noise_covariance(self) -> np.ndarray:
        """Covariance of ``(Re L', Im L')`` under ``mu0``; the per-unit-time law of ``dv``."""
        lp = self.log_derivative
        parts = np.stack([lp.real, lp.imag])
        centered = parts - (parts @ self.weights)[:, None]
        return (centered * self.weights) @ centered.T


def _meter_grid(half_width: float, h: float) -> np.ndarray:
    steps = 2.0 * half_width / h
    n = int(round(steps))
    if abs(steps - n) > 1e-9 * max(1.0, steps):
        raise ValueError(f"2Y/h must be an integer, got {steps}")
    return -half_width + h * np.arange(n + 1)


def _check_bounds(half_width: float, h: float) -> None:
    if half_width < 6:
        raise ValueError(f"meter grid too short: need Y >= 6, got Y={half_width}")
    if h > 1.0 / 64:
        raise ValueError(f"meter grid too coarse: need h <= 1/64, got h={h}")


def gaussian_function(boost: float = 0.0, hbar: float = HBAR) -> Callable[[np.ndarray], np.ndarray]:
    """``f0(y) = exp(-pi y^2 / 2) exp(i boost y / hbar)``, so ``|f0|^2 = exp(-pi y^2)``."""
    def f0(y):
        y = np.asarray(y, dtype=float)
        out = np.exp(-0.5 * np.pi * y**2)
        if boost:
            out = out * np.exp(1j * boost * y / hbar)
        return out.astype(complex)
    return f0


def gaussian_packet(Y: float = 8.0, h: float = 1.0 / 256, boost: float = 0.0,
                    hbar: float = HBAR) -> PointerPacket:
    _check_bounds(Y, h)
    y = _meter_grid(Y, h)
    func = gaussian_function(boost, hbar)
    kind = "gaussian_boosted" if boost else "gaussian"
    return PointerPacket(y, h, Y, func(y), kind, boost, func, hbar)


def custom_packet(f0, Y: float = 8.0, h: float = 1.0 / 256, hbar: float = HBAR) -> PointerPacket:
    """Packet from a callable ``f0(y)`` or from samples on the meter grid.

    The packet is renormalized on the grid.  Callables are evaluated exactly
    at shifted arguments; sampled packets are linearly interpolated.
    """
    _check_bounds(Y, h)
    y = _meter_grid(Y, h)
    if callable(f0):
        raw = np.asarray(f0(y), dtype=complex)
    else:
        raw = np.asarray(f0, dtype=complex)
        if raw.shape != y.shape:
            raise ValueError(f"expected {y.size} samples on the meter grid, got {raw.size}")
    if np.any(raw[1:-1] == 0):
        raise ValueError("custom packet vanishes in the grid interior; G(y) = f0(y - kR)/f0(y) undefined")
    scale = 1.0 / np.sqrt(np.sum(np.abs(raw) ** 2) * h)
    func = None
    if callable(f0):
        def func(arg, _f=f0, _s=scale):
            return _s * np.asarray(_f(np.asarray(arg, dtype=float)), dtype=complex)
    return PointerPacket(y, h, Y, raw * scale, "custom", 0.0, func, hbar)


def skewed_packet(skew: float = 0.5, Y: float = 8.0, h: float = 1.0 / 256, hbar: float = HBAR) -> PointerPacket:
    """Gaussian modulus with a cubic phase ``skew * (y^3 - 3 y / (2 pi))``.

    ``|f0|^2 = exp(-pi y^2)`` and the mean momentum vanishes, but the momentum
    distribution has a nonzero third moment.
    """
    def f0(y):
        y = np.asarray(y, dtype=float)
        return np.exp(-0.5 * np.pi * y**2 + 1j * skew * (y**3 - 1.5 * y / np.pi))
    return custom_packet(f0, Y, h, hbar)


def expansion_tables(packet: PointerPacket):
    """``(L', L'', p0, sigma2, w0)`` for the small-coupling expansion of ``G``."""
    if np.any(packet.f0_values[1:-1] == 0):
        raise ValueError("packet vanishes in the grid interior")
    return (packet.log_derivative, packet.log_second_derivative, packet.p0, packet.sigma2,
            packet.osmotic_velocity)


class ReductionKernel:
    """The family ``y -> G(y) = f0(y - kappa R) / f0(y)`` for diagonal ``R``."""

    def __init__(self, packet: PointerPacket, positions: np.ndarray, kappa: float):
        self.packet = packet
        self.positions = np.asarray(positions, dtype=float)
        self.kappa = float(kappa)
        if packet.kind.startswith("gaussian"):
            self.method = "closed"
        elif packet.func is not None:
            self.method = "quotient"
        else:
            self.method = "interp"

    @property
    def n_sites(self) -> int:
        return self.positions.size

    def closed_form(self, y) -> np.ndarray:
        """``exp(pi kappa x (y - kappa x / 2))`` times the boost phase."""
        y = np.asarray(y, dtype=float)[..., None]
        kx = self.kappa * self.positions
        out = np.exp(np.pi * kx * (y - 0.5 * kx))
        if self.packet.boost:
            out = out * np.exp(-1j * self.packet.boost * kx / self.packet.hbar)
        return out.astype(complex)

    def quotient(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)[..., None]
        return self.packet.evaluate(y - self.kappa * self.positions) / self.packet.evaluate(y)

    def __call__(self, y) -> np.ndarray:
        """Diagonal entries of ``G(y)``; broadcasts over an array of readings."""
        if self.kappa == 0:
            return np.ones(np.shape(y) + (self.n_sites,), dtype=complex)
        if self.method == "closed":
            return self.closed_form(y)
        return self.quotient(y)

    @cached_property
    def table(self) -> np.ndarray:
        """``G`` diagonals on every meter grid point, shape ``(n_y, n_sites)``."""
        if self.method != "interp" or self.kappa == 0:
            t = self(self.packet.y)
        else:
            t = self.packet.evaluate(self.packet.y[:, None] - self.kappa * self.positions) \
                / self.packet.f0_values[:, None]
        t.setflags(write=False)
        return t

    def operator(self, y: float) -> DenseOperator:
        g = self(y)
        return DenseOperator(np.diag(g), hermitian=bool(np.all(g.imag == 0)))

    @cached_property
    def effect_diagonal(self) -> np.ndarray:
        """Diagonal of ``sum_y G(y)^dag G(y) |f0(y)|^2 h``."""
        return np.abs(self.table).T ** 2 @ self.packet.weights

    @cached_property
    def channel_matrix(self) -> np.ndarray:
        """``C[j, l] = sum_y g_j(y) conj(g_l(y)) |f0(y)|^2 h``.

        The averaged kick ``sum_y G(y) rho G(y)^dag |f0|^2 h`` equals ``C * rho``
        entrywise.
        """
        t = self.table
        return (t * self.packet.weights[:, None]).T @ t.conj()


def reduction_kernel(packet: PointerPacket, R: DenseOperator, kappa: float) -> ReductionKernel:
    m = R.entries
    x = np.diag(m).real
    if np.max(np.abs(m - np.diag(np.diag(m))), initial=0.0) != 0 or np.any(np.diag(m).imag != 0):
        raise ValueError("R must be real diagonal (position coupling)")
    if abs(kappa) * np.max(np.abs(x)) > packet.half_width / 2:
        raise ValueError(f"shift off-grid: |kappa| max|x| = {abs(kappa) * np.max(np.abs(x))} > Y/2")
    return ReductionKernel(packet, x, kappa)


def povm_residual(kernel: ReductionKernel) -> float:
    return float(np.max(np.abs(kernel.effect_diagonal - 1.0)))


def _require_normalized(psi: WaveFunction, tol: float = 1e-8) -> np.ndarray:
    if abs(psi.norm2 - 1.0) > tol:
        raise ValueError(f"state must be normalized (||psi||^2 = {psi.norm2})")
    return psi.vector


def output_density(kernel: ReductionKernel, psi: WaveFunction) -> np.ndarray:
    """Pointer density ``p(y) = ||G(y) psi||^2 |f0(y)|^2`` on the meter grid."""
    vec = _require_normalized(psi)
    return (np.abs(kernel.table) ** 2 @ np.abs(vec) ** 2) * kernel.packet.density


def density_csv_rows(packet: PointerPacket, density: np.ndarray):
    return zip(packet.y, density)
