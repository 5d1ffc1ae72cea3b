"""Two-level scattering models: diabatic potentials and adiabatization.

Two models are provided. The dual-avoided-crossing (DAC) scattering model

    V00 = 0,  V11 = -A exp(-B R^2) + E0,  V01 = V10 = C exp(-D R^2),

and a constant-coupling model whose adiabatic surfaces are flat (0 and E)
with an R-independent first-order coupling D, realized by the sinusoidal
diabatic matrix (E/2) I + (E/2) [[-cos 2DR, sin 2DR], [sin 2DR, cos 2DR]].

Adiabatization for the DAC path is fully analytic: the mixing angle is the
two-argument arctangent theta = atan2(2 V01, V00 - V11) (continuous along R
after unwrapping), eigenvalues are mean +- radius, and the derivative
coupling is d01 = theta'/2 built from the closed-form potential derivatives.
The transformation matrix used here,

    U = [[-sin(theta/2), cos(theta/2)], [cos(theta/2), sin(theta/2)]],

keeps the ground state in column 0 for every R (energy ordering e0 <= e1)
and makes d01 = +theta'/2 hold exactly; it differs from other common
conventions by a column sign, which is pure gauge. The constant model
bypasses the generic path and returns its exact closed-form adiabatic data
(in that model's own printed gauge, where d01 = +D).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import PhaseSpaceGrid, Wavefunction

__all__ = [
    "ModelSpec",
    "AdiabaticData",
    "DegenerateCrossingError",
    "dac_model",
    "constant_model",
    "diabatic_potential",
    "diabatic_gradient",
    "adiabatize",
    "coupling_profile",
    "rotate_wavefunction",
    "asymptotic_potential_ceiling",
]


class DegenerateCrossingError(ValueError):
    """V00 = V11 with V01 = 0: the two-level mixing angle is undefined."""


@dataclass(frozen=True)
class ModelSpec:
    """Closed-form diabatic potential matrix for a named model."""

    name: str  # 'dac' | 'constant'
    mass: float
    hbar: float = 1.0
    # DAC parameters
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0
    e0: float = 0.0
    # constant-model parameters
    d_coupling: float = 0.0
    gap: float = 0.0

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if self.name == "dac":
            if min(self.a, self.b, self.c, self.d) <= 0:
                raise ValueError("DAC parameters A, B, C, D must be positive")
        elif self.name != "constant":
            raise ValueError(f"unknown model {self.name!r}")


def dac_model(
    a: float = 0.1,
    b: float = 0.28,
    c: float = 0.015,
    d: float = 0.06,
    e0: float = 0.05,
    mass: float = 2000.0,
    hbar: float = 1.0,
) -> ModelSpec:
    """Dual-avoided-crossing model with the standard benchmark parameters."""
    return ModelSpec("dac", mass=mass, hbar=hbar, a=a, b=b, c=c, d=d, e0=e0)


def constant_model(
    d_coupling: float, gap: float, mass: float, hbar: float = 1.0
) -> ModelSpec:
    """Flat adiabatic surfaces (0, gap) with constant coupling d01 = d_coupling."""
    return ModelSpec("constant", mass=mass, hbar=hbar, d_coupling=d_coupling, gap=gap)


@dataclass(frozen=True)
class AdiabaticData:
    """Adiabatic surfaces, transformation matrix, and couplings at given R.

    All fields are arrays over the trailing shape of the input positions:
    ``e`` is (..., 2) with e[..., 0] <= e[..., 1]; ``u`` is (..., 2, 2)
    orthogonal with column alpha the adiabatic state alpha in the diabatic
    basis; ``d01`` the first-order coupling (d10 = -d01); ``g`` the (..., 2, 2)
    second-order coupling; ``f`` the (..., 2, 2) symmetric force matrix
    -U^T (dV/dR) U, whose diagonal is the Hellmann-Feynman force.
    """

    e: np.ndarray
    u: np.ndarray
    theta: np.ndarray
    d01: np.ndarray
    g: np.ndarray
    f: np.ndarray


def diabatic_potential(model: ModelSpec, r) -> np.ndarray:
    """V(R) as an (..., 2, 2) real symmetric array."""
    r = np.asarray(r, dtype=float)
    v = np.zeros(r.shape + (2, 2))
    if model.name == "dac":
        v[..., 1, 1] = -model.a * np.exp(-model.b * r**2) + model.e0
        off = model.c * np.exp(-model.d * r**2)
    else:
        e, dd = model.gap, model.d_coupling
        v[..., 0, 0] = 0.5 * e * (1.0 - np.cos(2.0 * dd * r))
        v[..., 1, 1] = 0.5 * e * (1.0 + np.cos(2.0 * dd * r))
        off = 0.5 * e * np.sin(2.0 * dd * r)
    v[..., 0, 1] = off
    v[..., 1, 0] = off
    return v


def diabatic_gradient(model: ModelSpec, r) -> np.ndarray:
    """dV/dR as an (..., 2, 2) real symmetric array, closed form."""
    r = np.asarray(r, dtype=float)
    dv = np.zeros(r.shape + (2, 2))
    if model.name == "dac":
        dv[..., 1, 1] = 2.0 * model.a * model.b * r * np.exp(-model.b * r**2)
        off = -2.0 * model.c * model.d * r * np.exp(-model.d * r**2)
    else:
        e, dd = model.gap, model.d_coupling
        dv[..., 0, 0] = e * dd * np.sin(2.0 * dd * r)
        dv[..., 1, 1] = -e * dd * np.sin(2.0 * dd * r)
        off = e * dd * np.cos(2.0 * dd * r)
    dv[..., 0, 1] = off
    dv[..., 1, 0] = off
    return dv


def _dac_theta_derivatives(model: ModelSpec, r: np.ndarray):
    """theta, theta', theta'' from the closed-form DAC matrix elements."""
    x = model.a * np.exp(-model.b * r**2) - model.e0  # V00 - V11
    y = 2.0 * model.c * np.exp(-model.d * r**2)  # 2 V01
    xp = -2.0 * model.a * model.b * r * np.exp(-model.b * r**2)
    yp = -4.0 * model.c * model.d * r * np.exp(-model.d * r**2)
    xpp = -2.0 * model.a * model.b * (1.0 - 2.0 * model.b * r**2) * np.exp(-model.b * r**2)
    ypp = -4.0 * model.c * model.d * (1.0 - 2.0 * model.d * r**2) * np.exp(-model.d * r**2)
    r2 = x**2 + y**2
    if np.any(r2 <= 0):
        raise DegenerateCrossingError("degenerate potential matrix at some R")
    theta = np.arctan2(y, x)
    if theta.ndim == 1 and theta.size > 1:
        theta = np.unwrap(theta)
    tp = (yp * x - xp * y) / r2
    tpp = ((ypp * x - xpp * y) - tp * (2.0 * x * xp + 2.0 * y * yp)) / r2
    return theta, tp, tpp


def adiabatize(model: ModelSpec, r) -> AdiabaticData:
    """Eigen-data, mixing angle, couplings, and force matrix at position(s) r."""
    r = np.asarray(r, dtype=float)
    if model.name == "constant":
        return _adiabatize_constant(model, r)

    theta, tp, tpp = _dac_theta_derivatives(model, r)
    v = diabatic_potential(model, r)
    mean = 0.5 * (v[..., 0, 0] + v[..., 1, 1])
    rad = np.hypot(0.5 * (v[..., 0, 0] - v[..., 1, 1]), v[..., 0, 1])
    e = np.stack([mean - rad, mean + rad], axis=-1)

    half = 0.5 * theta
    s, c = np.sin(half), np.cos(half)
    u = np.empty(r.shape + (2, 2))
    u[..., 0, 0] = -s
    u[..., 0, 1] = c
    u[..., 1, 0] = c
    u[..., 1, 1] = s

    d01 = 0.5 * tp
    g = np.empty(r.shape + (2, 2))
    g[..., 0, 0] = -(d01**2)
    g[..., 1, 1] = -(d01**2)
    g[..., 0, 1] = 0.5 * tpp
    g[..., 1, 0] = -0.5 * tpp

    dv = diabatic_gradient(model, r)
    f = -np.einsum("...ji,...jk,...kl->...il", u, dv, u)
    f = 0.5 * (f + np.swapaxes(f, -1, -2))  # symmetrize away roundoff
    return AdiabaticData(e=e, u=u, theta=theta, d01=d01, g=g, f=f)


def _adiabatize_constant(model: ModelSpec, r: np.ndarray) -> AdiabaticData:
    dd, gap = model.d_coupling, model.gap
    ones = np.ones_like(r)
    e = np.stack([np.zeros_like(r), gap * ones], axis=-1)
    cdr, sdr = np.cos(dd * r), np.sin(dd * r)
    u = np.empty(r.shape + (2, 2))
    u[..., 0, 0] = cdr
    u[..., 0, 1] = sdr
    u[..., 1, 0] = -sdr
    u[..., 1, 1] = cdr
    g = np.zeros(r.shape + (2, 2))
    g[..., 0, 0] = -(dd**2)
    g[..., 1, 1] = -(dd**2)
    f = np.zeros(r.shape + (2, 2))
    f[..., 0, 1] = -dd * gap
    f[..., 1, 0] = -dd * gap
    return AdiabaticData(
        e=e, u=u, theta=-2.0 * dd * r, d01=dd * ones, g=g, f=f
    )


def coupling_profile(model: ModelSpec, grid: PhaseSpaceGrid) -> AdiabaticData:
    """Vectorized adiabatic data along the grid's position axis.

    The angle is unwrapped along R, which keeps U and d01 continuous
    (gauge continuity: successive eigenvector columns overlap positively).
    """
    return adiabatize(model, grid.r_values)


def rotate_wavefunction(psi: Wavefunction, model: ModelSpec, to_basis: str) -> Wavefunction:
    """Transform a two-surface wavefunction between bases with U(R).

    psi_i(R) = sum_alpha U_{i alpha}(R) psi_alpha(R); the adiabatic components
    follow from the transpose (U is orthogonal).
    """
    if to_basis not in ("diabatic", "adiabatic"):
        raise ValueError(f"unknown basis tag {to_basis!r}")
    if psi.basis == to_basis:
        raise ValueError("rotation must change the basis tag")
    u = adiabatize(model, psi.grid.r_values).u  # (N, 2, 2)
    if to_basis == "diabatic":
        amps = np.einsum("nij,jn->in", u, psi.amplitudes)
    else:
        amps = np.einsum("nji,jn->in", u, psi.amplitudes)
    return Wavefunction(to_basis, amps, psi.grid)


def asymptotic_potential_ceiling(model: ModelSpec) -> float:
    """Maximum asymptotic surface energy, the V_max of the timestep rule."""
    if model.name == "dac":
        return max(0.0, model.e0)
    return model.gap
