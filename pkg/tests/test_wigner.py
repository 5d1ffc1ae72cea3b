import numpy as np
import pytest

from mqclab import grids, models, wigner
from mqclab.grids import GaussianSpec, GridError, gaussian_packet, momentum_amplitudes
from mqclab.wigner import (
    partial_wigner_transform,
    pseudo_density,
    rotate_basis,
    coherence_magnitude,
    read_field_binary,
    write_field_binary,
    write_field_csv,
)


@pytest.fixture(scope="module")
def packet_and_grid():
    g = grids.build_grid(-4.0, 2.0, 0.5, 2, 0.25)
    psi = gaussian_packet(GaussianSpec(-4.0, 2.0, 0.5, 0.6), g, basis="diabatic")
    return psi, g


def gaussian_wigner(grid, r0, p0, sigma_r):
    """Analytic transform of a single-surface minimum-uncertainty packet."""
    sigma_p = grid.hbar / (2.0 * sigma_r)
    nr = np.exp(-0.5 * ((grid.r_values - r0) / sigma_r) ** 2) / (np.sqrt(2 * np.pi) * sigma_r)
    np_ = np.exp(-0.5 * ((grid.p_values - p0) / sigma_p) ** 2) / (np.sqrt(2 * np.pi) * sigma_p)
    return nr[:, None] * np_[None, :]


def test_single_surface_gaussian_matches_analytic():
    g = grids.build_grid(-4.0, 2.0, 0.5, 2, 0.25)
    psi = gaussian_packet(GaussianSpec(-4.0, 2.0, 0.5, 0.0), g, basis="diabatic")
    rho = partial_wigner_transform(psi)
    expected = gaussian_wigner(g, -4.0, 2.0, 0.5)
    assert np.abs(rho.data[..., 0, 0].real - expected).max() < 1e-8
    assert np.abs(rho.data[..., 1, 1]).max() == 0.0
    assert np.abs(rho.data[..., 0, 1]).max() == 0.0


def test_trace_integral_unity(packet_and_grid):
    psi, _ = packet_and_grid
    rho = partial_wigner_transform(psi)
    assert rho.trace_integral() == pytest.approx(1.0, abs=1e-6)


def test_position_marginal_identity(packet_and_grid):
    psi, g = packet_and_grid
    rho = partial_wigner_transform(psi)
    for i in range(2):
        marg = rho.data[..., i, i].real.sum(axis=1) * g.dp
        assert np.abs(marg - np.abs(psi.amplitudes[i]) ** 2).max() < 1e-8


def test_momentum_marginal_identity(packet_and_grid):
    psi, g = packet_and_grid
    rho = partial_wigner_transform(psi)
    phi = momentum_amplitudes(psi)
    for i in range(2):
        marg = rho.data[..., i, i].real.sum(axis=0) * g.dr
        assert np.abs(marg - np.abs(phi[i]) ** 2).max() < 1e-6


def test_hermiticity_and_real_diagonals(packet_and_grid):
    psi, _ = packet_and_grid
    rho = partial_wigner_transform(psi)
    assert rho.hermiticity_defect() < 1e-12
    assert np.abs(rho.data[..., 0, 0].imag).max() < 1e-10
    assert np.abs(rho.data[..., 1, 1].imag).max() < 1e-10


def test_adiabatic_input_rejected(packet_and_grid):
    psi, g = packet_and_grid
    psi_a = grids.Wavefunction("adiabatic", psi.amplitudes, g)
    with pytest.raises(ValueError):
        partial_wigner_transform(psi_a)


def test_unlocked_grid_rejected(packet_and_grid):
    psi, g = packet_and_grid
    lattice = grids.PhaseSpaceGrid.rectangular(g.r_values, g.p_values[:-2])
    bad = grids.Wavefunction("diabatic", psi.amplitudes, lattice)
    with pytest.raises(GridError):
        partial_wigner_transform(bad)


def test_rotate_basis_roundtrip(packet_and_grid, dac):
    psi, _ = packet_and_grid
    rho = partial_wigner_transform(psi)
    rho_a = rotate_basis(rho, dac, "to_adiabatic")
    assert rho_a.basis == "adiabatic"
    back = rotate_basis(rho_a, dac, "to_diabatic")
    assert np.abs(back.data - rho.data).max() < 1e-12
    with pytest.raises(ValueError):
        rotate_basis(rho, dac, "to_diabatic")


def test_rotate_basis_preserves_trace_and_frobenius(packet_and_grid, dac):
    psi, _ = packet_and_grid
    rho = partial_wigner_transform(psi)
    rho_a = rotate_basis(rho, dac, "to_adiabatic")
    tr_d = rho.data[..., 0, 0] + rho.data[..., 1, 1]
    tr_a = rho_a.data[..., 0, 0] + rho_a.data[..., 1, 1]
    assert np.abs(tr_d - tr_a).max() < 1e-12
    frob_d = np.sum(np.abs(rho.data) ** 2, axis=(-1, -2))
    frob_a = np.sum(np.abs(rho_a.data) ** 2, axis=(-1, -2))
    assert np.abs(frob_d - frob_a).max() < 1e-12


def test_pseudo_density_basis_independent(packet_and_grid, dac):
    psi, _ = packet_and_grid
    rho = partial_wigner_transform(psi)
    rho_a = rotate_basis(rho, dac, "to_adiabatic")
    assert np.abs(pseudo_density(rho) - pseudo_density(rho_a)).max() < 1e-12


def test_pseudo_density_signals_corruption(packet_and_grid):
    psi, g = packet_and_grid
    rho = partial_wigner_transform(psi)
    rho.data[..., 0, 0] += 1e-6j
    with pytest.raises(ValueError):
        pseudo_density(rho)


def test_coherence_magnitude(packet_and_grid, dac):
    psi, _ = packet_and_grid
    rho_a = rotate_basis(partial_wigner_transform(psi), dac, "to_adiabatic")
    mag = coherence_magnitude(rho_a)
    assert np.all(mag >= 0.0)
    assert np.abs(mag - np.abs(rho_a.data[..., 1, 0])).max() < 1e-15
    with pytest.raises(ValueError):
        coherence_magnitude(partial_wigner_transform(psi))


def test_diagonal_pwtm_has_zero_coherence():
    g = grids.build_grid(-4.0, 2.0, 0.5, 2, 0.25)
    psi = gaussian_packet(GaussianSpec(-4.0, 2.0, 0.5, 0.0), g, basis="diabatic")
    rho = partial_wigner_transform(psi)
    assert np.abs(rho.data[..., 0, 1]).max() == 0.0


def test_field_csv_and_binary_roundtrip(tmp_path, packet_and_grid):
    psi, g = packet_and_grid
    rho = partial_wigner_transform(psi)
    dens = pseudo_density(rho)
    bpath = tmp_path / "field.bin"
    write_field_binary(bpath, g, dens, rho.basis, "pseudo_density")
    g2, field, header = read_field_binary(bpath)
    assert np.array_equal(field, dens)
    assert header["kind"] == "pseudo_density"
    assert np.allclose(g2.r_values, g.r_values)
    # bit stability
    b2 = tmp_path / "field2.bin"
    write_field_binary(b2, g, dens, rho.basis, "pseudo_density")
    assert bpath.read_bytes() == b2.read_bytes()
    cpath = tmp_path / "field.csv"
    write_field_csv(cpath, g, dens, comment="test")
    first = cpath.read_text().splitlines()
    assert first[0] == "# test"
    assert first[1] == "R,P,value"


def test_diagonal_marginals_streaming(packet_and_grid):
    psi, g = packet_and_grid
    rho = partial_wigner_transform(psi)
    n_marg, eta = wigner.diagonal_marginals(psi, block_rows=17)
    for i in range(2):
        full_n = rho.data[..., i, i].real.sum(axis=1) * g.dp
        full_eta = rho.data[..., i, i].real.sum(axis=0) * g.dr
        assert np.abs(n_marg[i] - full_n).max() < 1e-13
        assert np.abs(eta[i] - full_eta).max() < 1e-13
