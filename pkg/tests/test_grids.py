import numpy as np
import pytest

from mqclab import grids
from mqclab.grids import GaussianSpec, GridError, build_grid, gaussian_packet


def test_dac_p40_grid_values():
    g = build_grid(-15.0, 40.0, 0.25, 2, 0.05)
    assert g.dr == 0.05
    assert g.r_max == pytest.approx(30.0)
    assert g.n_points == 1201
    assert g.dp == pytest.approx(2.0 * np.pi / (2401 * 0.05), abs=1e-12)
    assert g.dp == pytest.approx(0.052338, abs=1e-6)


def test_k_rule_reduces_to_unit_spacing():
    g = build_grid(0.0, 0.0, 23.0 / (4.0 * np.pi), 1, np.inf)
    assert g.dr == pytest.approx(1.0, abs=1e-14)


def test_dac_p100_spacing():
    g = build_grid(-15.0, 100.0, 0.1, 2, 0.05)
    assert g.dr == pytest.approx(0.4 * np.pi / 46.0, rel=1e-12)
    assert g.dr == pytest.approx(0.02732, abs=1e-5)


@pytest.mark.parametrize("p0,sigma_r,k,cap", [
    (40.0, 0.25, 2, 0.05),
    (20.0, 0.5, 5, 0.05),
    (4.0, 2.5, 2, 0.015),
    (100.0, 0.1, 1, 0.1),
])
def test_momentum_lock_and_symmetry(p0, sigma_r, k, cap):
    g = build_grid(-15.0, p0, sigma_r, k, cap)
    n = g.n_points
    assert n % 2 == 1
    assert g.dp * (2 * n - 1) * g.dr == pytest.approx(2.0 * np.pi, rel=1e-14)
    assert np.allclose(np.diff(g.r_values), g.dr, atol=1e-12)
    assert np.allclose(np.diff(g.p_values), g.dp, atol=1e-12)
    # symmetry about 0 and about p0
    assert g.r_values[0] == pytest.approx(-g.r_values[-1])
    assert g.p_values[(n - 1) // 2] == pytest.approx(p0)
    assert g.momentum_locked


def test_rounding_enlarges_never_clips():
    g = build_grid(-15.0, 100.0, 0.1, 2, 0.05)
    assert g.r_max >= 30.0 - 1e-12
    assert (g.n_points - 1) // 2 * g.dr == pytest.approx(g.r_max)


def test_grid_rejections():
    with pytest.raises(GridError):
        build_grid(-15.0, 40.0, -0.1, 2, 0.05)
    with pytest.raises(GridError):
        build_grid(-15.0, 40.0, 0.25, 2, -1.0)
    with pytest.raises(GridError):
        build_grid(-15.0, 40.0, 0.25, 0, 0.05)
    with pytest.raises(GridError):
        build_grid(-15.0, -1.0, 0.25, 2, 0.05)
    with pytest.raises(GridError):
        build_grid(-15.0, 40.0, 0.25, 2, 1e-5, memory_budget_bytes=2**20)


def test_gaussian_spec_minimum_uncertainty():
    spec = GaussianSpec(-15.0, 40.0, 0.25)
    assert spec.sigma_r * spec.sigma_p == pytest.approx(0.5)
    assert GaussianSpec.from_sigma_p(0.0, 1.0, 2.0).sigma_r == pytest.approx(0.25)
    with pytest.raises(GridError):
        GaussianSpec(0.0, 0.0, -1.0)
    with pytest.raises(GridError):
        GaussianSpec(0.0, 0.0, 1.0, mixing_theta=7.0)


def test_packet_norm_and_moments():
    g = build_grid(-15.0, 40.0, 0.25, 2, 0.05)
    psi = gaussian_packet(GaussianSpec(-15.0, 40.0, 0.25), g)
    assert abs(psi.norm_squared() - 1.0) < 1e-10
    assert psi.mean_position() == pytest.approx(-15.0, abs=1e-6)
    assert grids.mean_momentum(psi) == pytest.approx(40.0, abs=3 * g.dp)


def test_packet_surface_split():
    g = build_grid(-4.0, 2.0, 0.5, 2, 0.25)
    psi0 = gaussian_packet(GaussianSpec(-4.0, 2.0, 0.5, 0.0), g)
    assert np.all(psi0.amplitudes[1] == 0.0)
    psi_mix = gaussian_packet(GaussianSpec(-4.0, 2.0, 0.5, np.pi / 4.0), g)
    pops = psi_mix.surface_populations()
    assert pops[0] == pytest.approx(0.5, abs=1e-12)
    assert pops[1] == pytest.approx(0.5, abs=1e-12)


def test_packet_support_rejected():
    g = build_grid(-4.0, 2.0, 0.5, 2, 0.25)
    with pytest.raises(GridError):
        gaussian_packet(GaussianSpec(-7.0, 2.0, 0.5), g)


def test_momentum_amplitudes_norm():
    g = build_grid(-4.0, 2.0, 0.5, 2, 0.25)
    psi = gaussian_packet(GaussianSpec(-4.0, 2.0, 0.5), g, basis="diabatic")
    phi = grids.momentum_amplitudes(psi)
    total = np.sum(np.abs(phi) ** 2) * g.dp
    assert total == pytest.approx(1.0, abs=1e-6)


def test_grid_serialization_roundtrip(tmp_path):
    g = build_grid(-15.0, 40.0, 0.25, 2, 0.05)
    path = tmp_path / "grid.csv"
    grids.save_grid(g, path)
    g2 = grids.load_grid(path)
    assert np.array_equal(g.r_values, g2.r_values)
    assert np.array_equal(g.p_values, g2.p_values)
    assert g.dp == g2.dp


def test_wavefunction_serialization_roundtrip(tmp_path):
    g = build_grid(-4.0, 2.0, 0.5, 2, 0.25)
    psi = gaussian_packet(GaussianSpec(-4.0, 2.0, 0.5, 0.3), g)
    path = tmp_path / "psi.csv"
    grids.save_wavefunction(psi, path)
    psi2 = grids.load_wavefunction(path)
    assert psi2.basis == psi.basis
    assert np.allclose(psi2.amplitudes, psi.amplitudes, atol=0, rtol=0)
