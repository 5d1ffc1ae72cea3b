"""Phase-space lattices, Gaussian packets, and the shared Fourier convention.

All quantities are in atomic units. Every spectral operation in the package
uses the same forward transform

    phi(P) = (2*pi*hbar)**-0.5 * integral psi(R) exp(-i P R / hbar) dR,

discretized with plain Riemann weights. Momentum-space observables use the
zero-padded (2N-1)-point lattice, which is what locks the momentum spacing to
``dp = 2*pi*hbar / ((2N-1) dr)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GridError",
    "BoundaryViolation",
    "PhaseSpaceGrid",
    "GaussianSpec",
    "Wavefunction",
    "build_grid",
    "gaussian_packet",
    "momentum_amplitudes",
    "mean_momentum",
    "save_grid",
    "load_grid",
    "save_wavefunction",
    "load_wavefunction",
]

HBAR = 1.0

# Default memory budget for grid construction: a full 2x2 complex PWTDM on an
# N x N lattice must fit (64 bytes/point), with headroom for propagator
# coefficient tables.
DEFAULT_MEMORY_BUDGET_BYTES = 8 * 2**30


class GridError(ValueError):
    """Invalid lattice construction request."""


class BoundaryViolation(RuntimeError):
    """Wavepacket amplitude reached the edge band of the position box."""


@dataclass(frozen=True)
class PhaseSpaceGrid:
    """Uniform phase-space lattice shared by all solvers.

    ``build_grid`` produces the paper-rule lattice: an odd point count per
    axis, position axis symmetric about zero, momentum axis centered on the
    packet momentum, and the momentum spacing locked to
    ``2*pi*hbar/((2N-1)*dr)``. The ``rectangular`` constructor relaxes the
    locking and the equal point counts for the constant-coupling-model
    numerics; anything feeding the partial Wigner transform must be locked.
    """

    r_values: np.ndarray
    p_values: np.ndarray
    dr: float
    dp: float
    hbar: float = HBAR

    @property
    def n_r(self) -> int:
        return self.r_values.size

    @property
    def n_p(self) -> int:
        return self.p_values.size

    @property
    def n_points(self) -> int:
        if self.n_r != self.n_p:
            raise GridError("rectangular lattice has no single n_points")
        return self.n_r

    @property
    def r_max(self) -> float:
        return float(self.r_values[-1])

    @property
    def p_center(self) -> float:
        return float(self.p_values[(self.n_p - 1) // 2])

    @property
    def momentum_locked(self) -> bool:
        """True when dp obeys the (2N-1) rule that the Wigner transform needs."""
        if self.n_r != self.n_p or self.n_r % 2 == 0:
            return False
        lock = 2.0 * np.pi * self.hbar / ((2 * self.n_r - 1) * self.dr)
        return abs(self.dp - lock) <= 1e-12 * lock

    @classmethod
    def rectangular(cls, r_values, p_values, hbar: float = HBAR) -> "PhaseSpaceGrid":
        r_values = np.ascontiguousarray(r_values, dtype=float)
        p_values = np.ascontiguousarray(p_values, dtype=float)
        if r_values.size < 2 or p_values.size < 2:
            raise GridError("need at least two points per axis")
        dr = float(r_values[1] - r_values[0])
        dp = float(p_values[1] - p_values[0])
        for ax, d in ((r_values, dr), (p_values, dp)):
            if d <= 0 or not np.allclose(np.diff(ax), d, rtol=0, atol=1e-12 * abs(d)):
                raise GridError("axes must be uniform ascending")
        return cls(r_values, p_values, dr, dp, hbar)


def build_grid(
    r0: float,
    p0: float,
    sigma_r: float,
    k_points_per_wavelength: int = 2,
    dr_cap: float = 0.05,
    hbar: float = HBAR,
    memory_budget_bytes: int = DEFAULT_MEMORY_BUDGET_BYTES,
) -> PhaseSpaceGrid:
    """Construct the simulation lattice from the packet parameters.

    The spacing is the smaller of the fixed cap and k points per de Broglie
    wavelength, ``dr = min(dr_cap, 4*pi*sigma_r/(23 k))``; the half-extent is
    ``r_max = max(2|r0|, 23 k sigma_r / 4)``, enlarged minimally (rounding the
    point count up, never down) so the total count ``N = 2 r_max/dr + 1`` is
    an odd integer. The momentum axis has the same N points centered on p0
    with ``dp = 2 pi hbar / ((2N-1) dr)``.
    """
    if sigma_r <= 0:
        raise GridError("sigma_r must be positive")
    if dr_cap <= 0:
        raise GridError("dr_cap must be positive")
    if k_points_per_wavelength < 1:
        raise GridError("k must be a positive integer")
    if p0 < 0:
        raise GridError("p0 must be non-negative")

    dr = min(dr_cap, 4.0 * np.pi * sigma_r / (23.0 * k_points_per_wavelength))
    r_max = max(2.0 * abs(r0), 23.0 * k_points_per_wavelength * sigma_r / 4.0)
    # round the half-count up so the symmetric range never clips the packet
    n_half = int(np.ceil(r_max / dr - 1e-9))
    n = 2 * n_half + 1

    if 64 * n * n > memory_budget_bytes:
        raise GridError(
            f"grid of {n} x {n} points exceeds the memory budget "
            f"({64 * n * n / 2**30:.1f} GiB > {memory_budget_bytes / 2**30:.1f} GiB)"
        )

    dp = 2.0 * np.pi * hbar / ((2 * n - 1) * dr)
    idx = np.arange(n) - n_half
    return PhaseSpaceGrid(
        r_values=idx * dr,
        p_values=p0 + idx * dp,
        dr=dr,
        dp=dp,
        hbar=hbar,
    )


@dataclass(frozen=True)
class GaussianSpec:
    """Minimum-uncertainty Gaussian packet parameters.

    ``sigma_r * sigma_p = hbar/2`` is enforced; construct with either width
    and the other is implied. ``mixing_theta`` distributes the amplitude over
    the two surfaces as (cos theta, sin theta).
    """

    r0: float
    p0: float
    sigma_r: float
    mixing_theta: float = 0.0
    hbar: float = HBAR

    @property
    def sigma_p(self) -> float:
        return self.hbar / (2.0 * self.sigma_r)

    @classmethod
    def from_sigma_p(cls, r0, p0, sigma_p, mixing_theta=0.0, hbar=HBAR):
        return cls(r0, p0, hbar / (2.0 * sigma_p), mixing_theta, hbar)

    def __post_init__(self):
        if self.sigma_r <= 0:
            raise GridError("sigma_r must be positive")
        if not 0.0 <= self.mixing_theta < 2.0 * np.pi:
            raise GridError("mixing_theta must lie in [0, 2*pi)")


@dataclass
class Wavefunction:
    """Two-surface complex amplitude field over the position axis."""

    basis: str  # 'diabatic' | 'adiabatic'
    amplitudes: np.ndarray  # (2, N) complex
    grid: PhaseSpaceGrid

    def __post_init__(self):
        if self.basis not in ("diabatic", "adiabatic"):
            raise ValueError(f"unknown basis tag {self.basis!r}")
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (2, self.grid.n_r):
            raise ValueError("amplitudes must be (2, n_r)")

    def norm_squared(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.dr)

    def position_density(self) -> np.ndarray:
        """n(R): total position marginal, equal for both bases."""
        return np.sum(np.abs(self.amplitudes) ** 2, axis=0)

    def surface_populations(self) -> np.ndarray:
        return np.sum(np.abs(self.amplitudes) ** 2, axis=1) * self.grid.dr

    def mean_position(self) -> float:
        dens = self.position_density()
        return float(np.sum(self.grid.r_values * dens) * self.grid.dr)

    def copy(self) -> "Wavefunction":
        return Wavefunction(self.basis, self.amplitudes.copy(), self.grid)


def gaussian_packet(
    spec: GaussianSpec, grid: PhaseSpaceGrid, basis: str = "adiabatic"
) -> Wavefunction:
    """Sample the Gaussian packet on the grid and renormalize discretely.

    Amplitude profile: (2 pi)^(-1/4) sigma_R^(-1/2)
    exp(-((R-R0)/(2 sigma_R))^2 + i P0 R / hbar), split over the surfaces as
    (cos theta, sin theta). Rejects packets whose 5-sigma support leaves the
    box (wrap-around hazard under the periodic boundary model).
    """
    if abs(spec.r0) + 5.0 * spec.sigma_r > grid.r_max:
        raise GridError(
            f"packet support |r0|+5*sigma_r = {abs(spec.r0) + 5 * spec.sigma_r:.3f} "
            f"exceeds r_max = {grid.r_max:.3f}"
        )
    r = grid.r_values
    envelope = (2.0 * np.pi) ** (-0.25) / np.sqrt(spec.sigma_r) * np.exp(
        -(((r - spec.r0) / (2.0 * spec.sigma_r)) ** 2)
        + 1j * spec.p0 * r / grid.hbar
    )
    amps = np.vstack(
        [np.cos(spec.mixing_theta) * envelope, np.sin(spec.mixing_theta) * envelope]
    )
    amps /= np.sqrt(np.sum(np.abs(amps) ** 2) * grid.dr)
    return Wavefunction(basis, amps, grid)


def momentum_amplitudes(psi: Wavefunction, grid: PhaseSpaceGrid | None = None) -> np.ndarray:
    """phi_i(P_n) on the grid's momentum lattice via the padded transform.

    Evaluates (dr / sqrt(2 pi hbar)) * sum_l psi_i(R_l) exp(-i P_n R_l/hbar)
    at every grid momentum, realized as a (2N-1)-point FFT of the zero-padded
    amplitudes; exact for the locked lattice. ``sum_n |phi_i(P_n)|^2 dp`` is
    the surface-i momentum marginal.
    """
    grid = grid or psi.grid
    if not grid.momentum_locked:
        raise GridError("momentum amplitudes need the (2N-1)-locked square grid")
    n = grid.n_r
    pad = (n - 1) // 2
    length = 2 * n - 1
    hbar = grid.hbar
    p0 = grid.p_center
    # demodulate the momentum-center so the remaining phases are pure DFT modes
    work = psi.amplitudes * np.exp(-1j * p0 * grid.r_values / hbar)[None, :]
    padded = np.zeros((2, length), dtype=np.complex128)
    padded[:, pad : pad + n] = work
    spec = np.fft.fft(padded, axis=1)
    # DFT index l runs from the padded array start; shift to signed lattice
    nu = np.arange(n) - pad
    l0 = -(pad + pad)  # signed index of padded element 0: -(N-1)
    phase = np.exp(-2j * np.pi * nu * l0 / length)
    out = spec[:, nu % length] * phase[None, :]
    return out * grid.dr / np.sqrt(2.0 * np.pi * hbar)


def mean_momentum(psi: Wavefunction) -> float:
    """<P> from the padded momentum density on the grid lattice."""
    phi = momentum_amplitudes(psi)
    dens = np.sum(np.abs(phi) ** 2, axis=0)
    total = np.sum(dens) * psi.grid.dp
    return float(np.sum(psi.grid.p_values * dens) * psi.grid.dp / total)


# ---------------------------------------------------------------------------
# plain-text serialization: '# key value' header lines, then a CSV body
# ---------------------------------------------------------------------------

def _write_header(fh, pairs) -> None:
    for key, value in pairs:
        fh.write(f"# {key} {value!r}\n" if isinstance(value, str) else f"# {key} {value:.17g}\n")


def _read_header(lines):
    header = {}
    body_start = 0
    for i, line in enumerate(lines):
        if not line.startswith("#"):
            body_start = i
            break
        key, _, value = line[1:].strip().partition(" ")
        header[key] = value
    return header, body_start


def _grid_header_pairs(grid: PhaseSpaceGrid, fmt: str):
    return [
        ("format", fmt),
        ("n_r", grid.n_r),
        ("n_p", grid.n_p),
        ("dr", grid.dr),
        ("dp", grid.dp),
        ("r_center", float(grid.r_values[(grid.n_r - 1) // 2])),
        ("p_center", float(grid.p_values[(grid.n_p - 1) // 2])),
        ("hbar", grid.hbar),
    ]


def _grid_from_header(header: dict) -> PhaseSpaceGrid:
    n_r, n_p = int(header["n_r"]), int(header["n_p"])
    dr, dp = float(header["dr"]), float(header["dp"])
    # reproduce construction bit-for-bit: centered index times spacing
    return PhaseSpaceGrid(
        r_values=float(header["r_center"]) + (np.arange(n_r) - (n_r - 1) // 2) * dr,
        p_values=float(header["p_center"]) + (np.arange(n_p) - (n_p - 1) // 2) * dp,
        dr=dr,
        dp=dp,
        hbar=float(header["hbar"]),
    )


def save_grid(grid: PhaseSpaceGrid, path) -> None:
    """Header: counts, spacings, centers. Body: index,r,p rows."""
    with open(path, "w", encoding="utf-8") as fh:
        _write_header(fh, _grid_header_pairs(grid, "mqclab-grid-v1"))
        fh.write("index,r,p\n")
        n = max(grid.n_r, grid.n_p)
        for i in range(n):
            r = f"{grid.r_values[i]:.17g}" if i < grid.n_r else ""
            p = f"{grid.p_values[i]:.17g}" if i < grid.n_p else ""
            fh.write(f"{i},{r},{p}\n")


def load_grid(path) -> PhaseSpaceGrid:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header, _ = _read_header(lines)
    if header.get("format") != "'mqclab-grid-v1'":
        raise GridError(f"not a grid file: {path}")
    return _grid_from_header(header)


def save_wavefunction(psi: Wavefunction, path) -> None:
    """Header: basis + grid parameters. Body: r,re0,im0,re1,im1 rows."""
    g = psi.grid
    with open(path, "w", encoding="utf-8") as fh:
        _write_header(
            fh,
            [("basis", psi.basis)] + _grid_header_pairs(g, "mqclab-wavefunction-v1"),
        )
        fh.write("r,re0,im0,re1,im1\n")
        a = psi.amplitudes
        for i, r in enumerate(g.r_values):
            fh.write(
                f"{r:.17g},{a[0, i].real:.17g},{a[0, i].imag:.17g},"
                f"{a[1, i].real:.17g},{a[1, i].imag:.17g}\n"
            )


def load_wavefunction(path) -> Wavefunction:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header, body = _read_header(lines)
    if header.get("format") != "'mqclab-wavefunction-v1'":
        raise GridError(f"not a wavefunction file: {path}")
    grid = _grid_from_header(header)
    rows = np.array(
        [[float(x) for x in line.split(",")] for line in lines[body + 1 :] if line],
        dtype=float,
    )
    amps = np.vstack([rows[:, 1] + 1j * rows[:, 2], rows[:, 3] + 1j * rows[:, 4]])
    return Wavefunction(header["basis"].strip("'"), amps, grid)
