"""Expectation values, marginal densities, and the negativity index.

All reductions are plain Riemann sums with the grid weights dr, dp, in fixed
summation order, so repeated runs are bit-identical. The negativity index of
a marginal f is

    N[f] = 0                                  if |f| <= atol everywhere,
    N[f] = sum(|f| - f) / (2 sum(|f|))        otherwise,

which lies in [0, 1] and vanishes iff f is non-negative (the Riemann weights
cancel between numerator and denominator).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .grids import PhaseSpaceGrid, Wavefunction, momentum_amplitudes
from .models import ModelSpec, adiabatize
from .wigner import PWTDM, pseudo_density

__all__ = [
    "Marginal",
    "ObservableRecord",
    "marginal",
    "wavefunction_marginal",
    "negativity_index",
    "population_difference",
    "energy",
    "wavefunction_energy",
    "purity",
    "mean_phase_point",
    "NEGATIVITY_ATOL",
]

NEGATIVITY_ATOL = 1e-14

_LABELS = ("total", "surface0", "surface1", "coherence_re", "coherence_im")


@dataclass
class Marginal:
    """Real density over one phase-space axis, with its Riemann spacing."""

    axis: str  # 'R' | 'P'
    label: str
    basis: str
    values: np.ndarray
    coordinates: np.ndarray
    spacing: float

    def integral(self) -> float:
        return float(np.sum(self.values) * self.spacing)

    def negativity(self, atol: float = NEGATIVITY_ATOL) -> float:
        return negativity_index(self.values, atol=atol)


@dataclass
class ObservableRecord:
    """One sample of the observable time series (the CSV row schema)."""

    t: float
    trace: float
    pop_diff: float
    mean_r: float
    mean_p: float
    energy: float
    purity: float
    neg_r: float
    neg_p: float

    HEADER = "t,trace,pop_diff,mean_r,mean_p,energy,purity,neg_r,neg_p"

    def as_row(self) -> str:
        return ",".join(f"{getattr(self, f.name):.17g}" for f in fields(self))


def negativity_index(values: np.ndarray, atol: float = NEGATIVITY_ATOL) -> float:
    """Fraction of a marginal's mass that is negative, in [0, 1]."""
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError("negativity index needs finite marginal values")
    abssum = np.sum(np.abs(values))
    if np.all(np.abs(values) <= atol):
        return 0.0
    return float(np.sum(np.abs(values) - values) / (2.0 * abssum))


def marginal(rho: PWTDM, axis: str, label: str = "total") -> Marginal:
    """Riemann-sum marginal of a PWTDM over the complementary axis.

    The total marginal is basis independent; per-surface and coherence
    marginals are not (their meaning is tied to ``rho.basis``).
    """
    if axis not in ("R", "P"):
        raise ValueError(f"axis must be 'R' or 'P', not {axis!r}")
    if label not in _LABELS:
        raise ValueError(f"unknown marginal label {label!r}")
    rho.assert_hermitian(tol=1e-9)

    if label == "total":
        field = rho.data[..., 0, 0].real + rho.data[..., 1, 1].real
    elif label == "surface0":
        field = rho.data[..., 0, 0].real
    elif label == "surface1":
        field = rho.data[..., 1, 1].real
    elif label == "coherence_re":
        field = rho.data[..., 0, 1].real
    else:
        field = rho.data[..., 0, 1].imag

    grid = rho.grid
    if axis == "R":
        values = field.sum(axis=1) * grid.dp
        return Marginal("R", label, rho.basis, values, grid.r_values, grid.dr)
    values = field.sum(axis=0) * grid.dr
    return Marginal("P", label, rho.basis, values, grid.p_values, grid.dp)


def wavefunction_marginal(psi: Wavefunction, axis: str, label: str = "total") -> Marginal:
    """Marginal density straight from a wavefunction (no Wigner transform).

    For exact dynamics these equal the PWTDM marginals through the discrete
    marginal identities; they are the cheap evaluation used along TDSE runs.
    """
    if label not in ("total", "surface0", "surface1"):
        raise ValueError("wavefunction marginals exist for diagonal labels only")
    grid = psi.grid
    if axis == "R":
        dens = np.abs(psi.amplitudes) ** 2
        coords, spacing = grid.r_values, grid.dr
    elif axis == "P":
        dens = np.abs(momentum_amplitudes(psi)) ** 2
        coords, spacing = grid.p_values, grid.dp
    else:
        raise ValueError(f"axis must be 'R' or 'P', not {axis!r}")
    if label == "total":
        values = dens.sum(axis=0)
    else:
        values = dens[0] if label == "surface0" else dens[1]
    return Marginal(axis, label, psi.basis, values, coords, spacing)


def population_difference(rho: PWTDM) -> float:
    """<sigma_3> = integral (rho00 - rho11) dR dP, adiabatic basis."""
    if rho.basis != "adiabatic":
        raise ValueError("population difference is defined in the adiabatic basis")
    diff = rho.data[..., 0, 0].real - rho.data[..., 1, 1].real
    return float(diff.sum() * rho.grid.dr * rho.grid.dp)


def energy(rho: PWTDM, model: ModelSpec, grid: PhaseSpaceGrid | None = None) -> float:
    """<H_W> with H_W = P^2/(2M) + diag(E_alpha) in the adiabatic basis."""
    if rho.basis != "adiabatic":
        raise ValueError("energy expects the adiabatic PWTDM")
    grid = grid or rho.grid
    e = adiabatize(model, grid.r_values).e  # (n_r, 2)
    kin = grid.p_values**2 / (2.0 * model.mass)
    tr = rho.data[..., 0, 0] + rho.data[..., 1, 1]
    total = np.sum(kin[None, :] * tr) + np.sum(
        e[:, 0][:, None] * rho.data[..., 0, 0] + e[:, 1][:, None] * rho.data[..., 1, 1]
    )
    total *= grid.dr * grid.dp
    if abs(total.imag) > 1e-8:
        raise ValueError(f"energy has imaginary part {total.imag:.3e}")
    return float(total.real)


def wavefunction_energy(psi: Wavefunction, model: ModelSpec) -> float:
    """<H> = <T> + <V> for a diabatic wavefunction (native spectral kinetic)."""
    if psi.basis != "diabatic":
        raise ValueError("wavefunction energy expects the diabatic basis")
    grid = psi.grid
    n = grid.n_r
    xi = 2.0 * np.pi * grid.hbar * np.fft.fftfreq(n, grid.dr)
    spec = np.fft.fft(psi.amplitudes, axis=1)
    kin = np.sum(xi**2 / (2.0 * model.mass) * np.sum(np.abs(spec) ** 2, axis=0))
    kin *= grid.dr / n  # Parseval weight for the unnormalized FFT pair
    from .models import diabatic_potential

    v = diabatic_potential(model, grid.r_values)
    pot = np.einsum("in,nij,jn->", np.conj(psi.amplitudes), v, psi.amplitudes).real
    pot *= grid.dr
    return float(kin + pot)


def purity(rho: PWTDM, grid: PhaseSpaceGrid | None = None) -> float:
    """S = 2 pi hbar integral Tr(rho_W^2) dR dP; 1 for pure states."""
    grid = grid or rho.grid
    rho.assert_hermitian(tol=1e-9)
    sq = (
        np.abs(rho.data[..., 0, 0]) ** 2
        + np.abs(rho.data[..., 1, 1]) ** 2
        + 2.0 * np.abs(rho.data[..., 0, 1]) ** 2
    )
    return float(2.0 * np.pi * grid.hbar * sq.sum() * grid.dr * grid.dp)


def mean_phase_point(rho: PWTDM, grid: PhaseSpaceGrid | None = None) -> tuple[float, float]:
    """Pseudo-density-weighted (<R>, <P>), negative regions included."""
    grid = grid or rho.grid
    dens = pseudo_density(rho)
    total = dens.sum()
    mean_r = float(np.sum(grid.r_values[:, None] * dens) / total)
    mean_p = float(np.sum(grid.p_values[None, :] * dens) / total)
    return mean_r, mean_p
