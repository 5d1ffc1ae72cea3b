import numpy as np
import pytest
from scipy.integrate import quad

from mqclab import constmodel as cm
from mqclab import grids, models, observables, wigner
from mqclab.grids import GaussianSpec, gaussian_packet
from mqclab.observables import (
    energy,
    marginal,
    mean_phase_point,
    negativity_index,
    population_difference,
    purity,
    wavefunction_marginal,
)


@pytest.fixture(scope="module")
def adiabatic_state(dac):
    g = grids.build_grid(-4.0, 2.0, 0.5, 2, 0.25)
    psi = gaussian_packet(GaussianSpec(-4.0, 2.0, 0.5, 0.5), g)
    psi_d = models.rotate_wavefunction(psi, dac, "diabatic")
    rho = wigner.rotate_basis(wigner.partial_wigner_transform(psi_d), dac, "to_adiabatic")
    return psi, psi_d, rho, g


def test_negativity_nonnegative_marginal_is_zero():
    x = np.linspace(-10, 10, 501)
    f = np.exp(-(x**2))
    assert negativity_index(f) == 0.0


def test_negativity_zero_everywhere_branch():
    assert negativity_index(np.zeros(100)) == 0.0
    assert negativity_index(np.full(100, 1e-15)) == 0.0


def test_negativity_balanced_lobes():
    x = np.linspace(-60, 60, 4001)
    f = cm.normal_density(x, 30.0, 1.0) - cm.normal_density(x, -30.0, 1.0)
    assert negativity_index(f) == pytest.approx(0.5, abs=1e-12)


def test_negativity_range_and_zero_iff():
    rng = np.random.default_rng(7)
    for _ in range(20):
        f = rng.normal(size=200)
        n = negativity_index(f)
        assert 0.0 <= n <= 1.0
        assert (n == 0.0) == bool(np.min(f) >= -observables.NEGATIVITY_ATOL)


def test_negativity_rejects_nonfinite():
    with pytest.raises(ValueError):
        negativity_index(np.array([1.0, np.nan]))


def six_gaussian_params():
    # centers separated by >= 50 sigma: fully split lobes
    return cm.ConstParams(d_coupling=500.0, gap=100.0, mass=200.0, p0=20.0, sigma_p=2.0)


def test_six_gaussian_negativity_quadrature_oracle():
    params = six_gaussian_params()
    t = 2.0e-3  # DEt = 100: all six centers >= 50 sigma apart
    p = np.linspace(-700.0, 740.0, 28801)

    def f(x):
        return cm.pert_marginal_closed_form(np.array([x]), t, params)[0]

    # independent oracle: adaptive quadrature of |f| and (|f|-f)/2, lobe by
    # lobe (the lobes are hundreds of sigma apart; a single global quad
    # window would miss them)
    hd, de_t = 500.0, 100.0
    centers = [20 - de_t, 20 + de_t, 20 + hd + de_t, 20 - hd + de_t,
               20 + hd - de_t, 20 - hd - de_t]
    abs_mass = neg_mass = 0.0
    for c in centers:
        lo, hi = c - 50.0, c + 50.0
        abs_mass += quad(lambda x: abs(f(x)), lo, hi, limit=200)[0]
        neg_mass += quad(lambda x: 0.5 * (abs(f(x)) - f(x)), lo, hi, limit=200)[0]
    oracle = neg_mass / abs_mass
    assert oracle == pytest.approx(0.25, abs=1e-3)

    values = cm.pert_marginal_closed_form(p, t, params)
    assert negativity_index(values) == pytest.approx(oracle, abs=1e-4)
    assert negativity_index(values) == pytest.approx(0.25, abs=1e-3)


def test_marginal_total_basis_independent(adiabatic_state, dac):
    _, psi_d, rho_a, _ = adiabatic_state
    rho_d = wigner.partial_wigner_transform(psi_d)
    for axis in ("R", "P"):
        total_d = marginal(rho_d, axis).values
        total_a = marginal(rho_a, axis).values
        assert np.abs(total_d - total_a).max() < 1e-10


def test_marginal_integral_unity(adiabatic_state):
    _, _, rho, _ = adiabatic_state
    for axis in ("R", "P"):
        assert marginal(rho, axis).integral() == pytest.approx(1.0, abs=1e-6)


def test_marginal_labels(adiabatic_state):
    _, _, rho, _ = adiabatic_state
    tot = marginal(rho, "P").values
    s0 = marginal(rho, "P", "surface0").values
    s1 = marginal(rho, "P", "surface1").values
    assert np.abs(tot - s0 - s1).max() < 1e-12
    with pytest.raises(ValueError):
        marginal(rho, "X")
    with pytest.raises(ValueError):
        marginal(rho, "P", "bogus")


def test_wavefunction_marginal_matches_pwtm(adiabatic_state):
    _, psi_d, _, g = adiabatic_state
    rho_d = wigner.partial_wigner_transform(psi_d)
    for axis, tol in (("R", 1e-8), ("P", 1e-6)):
        wv = wavefunction_marginal(psi_d, axis).values
        pw = marginal(rho_d, axis).values
        assert np.abs(wv - pw).max() < tol


def test_population_difference_pure_ground(adiabatic_state, dac):
    g = grids.build_grid(-4.0, 2.0, 0.5, 2, 0.25)
    psi = gaussian_packet(GaussianSpec(-4.0, 2.0, 0.5, 0.0), g)
    psi_d = models.rotate_wavefunction(psi, dac, "diabatic")
    rho = wigner.rotate_basis(wigner.partial_wigner_transform(psi_d), dac, "to_adiabatic")
    assert population_difference(rho) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        population_difference(wigner.partial_wigner_transform(psi_d))


def test_energy_free_gaussian():
    # flat zero surface: <H> = P0^2/2M + sigma_P^2/2M exactly
    m = models.constant_model(0.0, 0.0, 50.0)
    g = grids.build_grid(-4.0, 2.0, 0.5, 2, 0.25)
    psi = gaussian_packet(GaussianSpec(-4.0, 2.0, 0.5, 0.0), g)
    psi_d = models.rotate_wavefunction(psi, m, "diabatic")
    rho = wigner.rotate_basis(wigner.partial_wigner_transform(psi_d), m, "to_adiabatic")
    sigma_p = 1.0
    expected = (2.0**2 + sigma_p**2) / (2.0 * 50.0)
    assert energy(rho, m) == pytest.approx(expected, abs=1e-6)


def test_energy_constant_gap_ground():
    m = models.constant_model(0.0, 5.0, 50.0)
    g = grids.build_grid(-4.0, 2.0, 0.5, 2, 0.25)
    psi = gaussian_packet(GaussianSpec(-4.0, 2.0, 0.5, 0.0), g)
    psi_d = models.rotate_wavefunction(psi, m, "diabatic")
    rho = wigner.rotate_basis(wigner.partial_wigner_transform(psi_d), m, "to_adiabatic")
    sigma_p = 1.0
    expected = (2.0**2 + sigma_p**2) / 100.0  # ground surface sits at zero energy
    assert energy(rho, m) == pytest.approx(expected, abs=1e-6)


def test_purity_pure_state(adiabatic_state):
    _, _, rho, g = adiabatic_state
    assert purity(rho) == pytest.approx(1.0, abs=1e-4)


def test_purity_incoherent_mixture():
    # 50/50 mixture of two far-separated packets: S = 1/2 (oracle: the
    # analytic overlap of the two pure-state transforms is e^{-large})
    g = grids.build_grid(-9.0, 2.0, 1.0, 1, 0.4)
    a = gaussian_packet(GaussianSpec(-9.0, 2.0, 1.0, 0.0), g, basis="diabatic")
    b = gaussian_packet(GaussianSpec(9.0, 2.0, 1.0, 0.0), g, basis="diabatic")
    rho_a = wigner.partial_wigner_transform(a)
    rho_b = wigner.partial_wigner_transform(b)
    mixed = wigner.PWTDM("diabatic", 0.5 * (rho_a.data + rho_b.data), g)
    assert purity(mixed) == pytest.approx(0.5, abs=1e-3)


def test_mean_phase_point(adiabatic_state, dac):
    psi, psi_d, rho, g = adiabatic_state
    mean_r, mean_p = mean_phase_point(rho)
    assert mean_r == pytest.approx(-4.0, abs=3 * g.dr)
    assert mean_p == pytest.approx(2.0, abs=3 * g.dp)
    # basis invariance
    rho_d = wigner.partial_wigner_transform(psi_d)
    mr2, mp2 = mean_phase_point(rho_d)
    assert mr2 == pytest.approx(mean_r, abs=1e-10)
    assert mp2 == pytest.approx(mean_p, abs=1e-10)


def test_observable_record_row_format():
    rec = observables.ObservableRecord(
        t=1.0, trace=1.0, pop_diff=0.5, mean_r=-1.0, mean_p=2.0,
        energy=0.1, purity=1.0, neg_r=0.0, neg_p=0.01,
    )
    row = rec.as_row()
    assert len(row.split(",")) == 9
    assert observables.ObservableRecord.HEADER.startswith("t,trace,pop_diff")
