from __future__ import annotations

import numpy as np
import pytest

from spontloc.lattice import WaveFunction, build_grid, point_mass, position_operator
from spontloc.meter import (custom_packet, expansion_tables, finite_difference, gaussian_function,
                            gaussian_packet, output_density, povm_residual, reduction_kernel, skewed_packet)

from conftest import random_state


@pytest.fixture(scope="module")
def packet():
    return gaussian_packet()


@pytest.fixture(scope="module")
def kernel(packet):
    return reduction_kernel(packet, position_operator(build_grid(16, 0.25)), 0.3)


def test_packet_normalized_and_gaussian_density(packet):
    assert abs(packet.norm2 - 1) <= 1e-8
    assert np.max(np.abs(packet.density - np.exp(-np.pi * packet.y**2))) < 1e-15
    i0 = np.argmin(np.abs(packet.y))
    assert packet.y[i0] == 0.0 and packet.density[i0] == 1.0


def test_real_packet_moments(packet):
    assert packet.p0 == 0.0 or abs(packet.p0) < 1e-15
    # pi^2 int y^2 exp(-pi y^2) dy = pi/2
    assert abs(packet.sigma2 - np.pi / 2) <= 1e-6
    assert abs(packet.sigma2_spectral - packet.sigma2) <= 1e-6


def test_boosted_packet_mean_momentum():
    assert gaussian_packet(boost=1.0).p0 == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("Y, h", [(5.0, 1 / 256), (8.0, 1 / 32)])
def test_meter_grid_bounds(Y, h):
    with pytest.raises(ValueError, match="Y >= 6" if Y < 6 else "h <= 1/64"):
        gaussian_packet(Y, h)


def test_zero_coupling_is_identity(packet):
    k = reduction_kernel(packet, position_operator(build_grid(16, 0.25)), 0.0)
    assert np.array_equal(k.table, np.ones_like(k.table))
    assert povm_residual(k) == 0.0


def test_single_site_closed_form(packet):
    k = reduction_kernel(packet, position_operator(build_grid(2, 1.0)), 0.4)
    y = np.array([-1.0, 0.0, 0.37, 2.5])
    x = -1.0
    expected = np.exp(np.pi * 0.4 * x * (y - 0.4 * x / 2))
    assert np.allclose(k(y)[:, 0], expected, rtol=1e-14, atol=0)


def test_quotient_matches_closed_form(kernel):
    q, c = kernel.quotient(kernel.packet.y), kernel.closed_form(kernel.packet.y)
    # G grows like exp(pi kappa |x| Y) at the grid edge, so compare relative to |G|
    assert np.max(np.abs(q - c) / np.abs(c)) <= 1e-12


def test_kernel_is_hermitian_for_real_packet(kernel):
    assert np.all(kernel.table.imag == 0)


def test_povm_residual_default(kernel):
    assert povm_residual(kernel) <= 1e-8


def test_povm_residual_truncation_insensitive():
    R = position_operator(build_grid(16, 0.25))
    r8 = povm_residual(reduction_kernel(gaussian_packet(8.0), R, 0.3))
    r12 = povm_residual(reduction_kernel(gaussian_packet(12.0), R, 0.3))
    assert abs(r8 - r12) < 1e-10


@pytest.mark.parametrize("n", [4, 16, 64])
@pytest.mark.parametrize("kappa", [0.05, 0.3, 1.0])
def test_povm_residual_band(n, kappa):
    g = build_grid(n, 4.0 / n)
    assert povm_residual(reduction_kernel(gaussian_packet(), position_operator(g), kappa)) <= 1e-8


def test_shift_off_grid_rejected(packet):
    with pytest.raises(ValueError, match="off-grid"):
        reduction_kernel(packet, position_operator(build_grid(16, 1.0)), 0.6)


def test_output_density_point_mass(kernel):
    g = build_grid(16, 0.25)
    psi = point_mass(g, 3)
    x0 = g.positions[3]
    y = kernel.packet.y
    assert np.max(np.abs(output_density(kernel, psi) - np.exp(-np.pi * (y - 0.3 * x0) ** 2))) < 1e-12


def test_output_density_zero_coupling(packet, rng):
    g = build_grid(16, 0.25)
    k = reduction_kernel(packet, position_operator(g), 0.0)
    assert np.max(np.abs(output_density(k, random_state(g, rng)) - packet.density)) < 1e-15


def test_output_density_two_site_mixture(kernel):
    g = build_grid(16, 0.25)
    v = np.zeros(16, complex)
    v[2], v[13] = 0.6, 0.8j
    y = kernel.packet.y
    x = g.positions
    expected = 0.36 * np.exp(-np.pi * (y - 0.3 * x[2]) ** 2) + 0.64 * np.exp(-np.pi * (y - 0.3 * x[13]) ** 2)
    assert np.max(np.abs(output_density(kernel, WaveFunction.from_vector(g, v)) - expected)) < 1e-12


def test_output_density_mass(kernel, rng):
    g = build_grid(16, 0.25)
    res = povm_residual(kernel)
    for _ in range(100):
        p = output_density(kernel, random_state(g, rng))
        assert abs(p.sum() * kernel.packet.h - 1) <= res + 1e-14


def test_output_density_requires_normalized(kernel):
    with pytest.raises(ValueError):
        output_density(kernel, WaveFunction(build_grid(16, 0.25), np.ones(16)))


def test_expansion_tables_gaussian(packet):
    lp, lpp, p0, sigma2, w0 = expansion_tables(packet)
    y = packet.y
    inner = np.abs(y) <= 3
    assert np.max(np.abs(lp[inner] + np.pi * y[inner])) < 1e-6
    assert abs(packet.mean(lp)) < 1e-12
    # f0^dag L'' f0 = -(f0', f0') = -pi/2
    assert abs(packet.mean(lpp) + np.pi / 2) < 1e-6
    assert np.array_equal(w0, lp)


def test_noise_covariance_gaussian(packet):
    assert np.allclose(packet.noise_covariance, [[np.pi / 2, 0], [0, 0]], atol=1e-6)


def test_finite_difference_is_fourth_order():
    errs = []
    for n in (64, 128):
        y = np.linspace(0, 1, n + 1)
        errs.append(np.max(np.abs(finite_difference(np.sin(3 * y), y[1] - y[0]) - 3 * np.cos(3 * y))))
    assert 12 < errs[0] / errs[1] < 20


def test_custom_callable_matches_gaussian(packet):
    R = position_operator(build_grid(16, 0.25))
    k = reduction_kernel(custom_packet(gaussian_function()), R, 0.3)
    assert k.method == "quotient"
    ref = reduction_kernel(packet, R, 0.3)
    assert np.max(np.abs(k.table - ref.table) / np.abs(ref.table)) < 1e-12


def test_sampled_packet_interpolation_error_is_visible(packet):
    R = position_operator(build_grid(16, 0.25))
    k = reduction_kernel(custom_packet(packet.f0_values), R, 0.3)
    assert k.method == "interp"
    assert 1e-12 < povm_residual(k) < 1e-4


def test_custom_packet_rejects_interior_zero():
    with pytest.raises(ValueError, match="vanishes"):
        custom_packet(lambda y: np.exp(-np.pi * y**2 / 2) * y)


def test_skewed_packet_moments():
    s = 0.5
    p = skewed_packet(s)
    assert np.max(np.abs(p.density - np.exp(-np.pi * p.y**2))) < 1e-12
    assert abs(p.p0) < 1e-9
    # |f0'|^2 = |f0|^2 (pi^2 y^2 + s^2 (3 y^2 - 3/(2 pi))^2), Gaussian moments
    assert abs(p.sigma2 - (np.pi / 2 + 4.5 * s**2 / np.pi**2)) < 1e-6
    assert abs(p.sigma2_spectral - p.sigma2) < 1e-6
    k = reduction_kernel(p, position_operator(build_grid(16, 0.25)), 0.3)
    assert povm_residual(k) <= 1e-8
