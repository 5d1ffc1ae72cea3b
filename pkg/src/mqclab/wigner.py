"""Discrete partial Wigner transform and the phase-space density matrix field.

The transform of a diabatic two-surface wavefunction,

    rho^ij(R, P) = (1/pi hbar) int psi_i(R-Q) psi_j*(R+Q) e^{2i P Q/hbar} dQ,

is discretized on the Q lattice of the grid spacing with each wavefunction
zero-padded by (N-1)/2 points on both sides, giving a length-(2N-1) Fourier
sum evaluated with phase exp(2i P_n Q / hbar). Together with the locked
momentum spacing dp = 2 pi hbar / ((2N-1) dr) this makes both discrete
marginal identities exact up to the (tiny) spectral mass outside the kept
momentum window:

    sum_n rho^ii(R_m, P_n) dp = |psi_i(R_m)|^2
    sum_m rho^ii(R_m, P_n) dr = |phi_i(P_n)|^2   (padded-transform spectrum)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import GridError, PhaseSpaceGrid, Wavefunction
from .models import ModelSpec, adiabatize

__all__ = [
    "PWTDM",
    "partial_wigner_transform",
    "rotate_basis",
    "pseudo_density",
    "coherence_magnitude",
    "diagonal_marginals",
    "write_field_csv",
    "write_field_binary",
    "read_field_binary",
]

_HERMITICITY_TOL = 1e-12
_IM_TRACE_TOL = 1e-10


@dataclass
class PWTDM:
    """Partial Wigner-transformed density matrix field.

    ``data`` is complex with shape (n_r, n_p, 2, 2) indexed
    (R index, P index, row, col) and is Hermitian at every grid point.
    """

    basis: str  # 'diabatic' | 'adiabatic'
    data: np.ndarray
    grid: PhaseSpaceGrid

    def __post_init__(self):
        if self.basis not in ("diabatic", "adiabatic"):
            raise ValueError(f"unknown basis tag {self.basis!r}")
        if self.data.shape != (self.grid.n_r, self.grid.n_p, 2, 2):
            raise ValueError("data must be (n_r, n_p, 2, 2)")

    def trace_integral(self) -> float:
        tr = self.data[..., 0, 0] + self.data[..., 1, 1]
        return float(np.sum(tr.real) * self.grid.dr * self.grid.dp)

    def hermiticity_defect(self) -> float:
        dagger = np.conj(np.swapaxes(self.data, -1, -2))
        return float(np.abs(self.data - dagger).max())

    def assert_hermitian(self, tol: float = _HERMITICITY_TOL) -> None:
        defect = self.hermiticity_defect()
        if defect > tol:
            raise ValueError(f"PWTDM Hermiticity defect {defect:.3e} > {tol:.1e}")

    def copy(self) -> "PWTDM":
        return PWTDM(self.basis, self.data.copy(), self.grid)


def _signed_offsets(length: int) -> np.ndarray:
    k = np.arange(length)
    return np.where(k <= (length - 1) // 2, k, k - length)


def _wigner_row_transform(corr: np.ndarray, n: int, p0_phase: np.ndarray) -> np.ndarray:
    """(N, 2N-1) circular correlation rows -> (N, N) transform values."""
    length = corr.shape[1]
    spec = np.fft.ifft(corr * p0_phase[None, :], axis=1) * length
    nu = np.arange(n) - (n - 1) // 2
    return spec[:, (2 * nu) % length]


def partial_wigner_transform(psi: Wavefunction, grid: PhaseSpaceGrid | None = None) -> PWTDM:
    """Transform a diabatic wavefunction into the diabatic PWTDM field.

    Adiabatic input is rejected: the adiabatic basis depends on R, so the
    state must be expanded in the R-independent diabatic basis first
    (``models.rotate_wavefunction``).
    """
    if psi.basis != "diabatic":
        raise ValueError("partial Wigner transform requires a diabatic wavefunction")
    grid = grid or psi.grid
    if not grid.momentum_locked:
        raise GridError("partial Wigner transform needs the (2N-1)-locked grid")

    n = grid.n_r
    pad = (n - 1) // 2
    length = 2 * n - 1
    hbar = grid.hbar

    padded = np.zeros((2, length), dtype=np.complex128)
    padded[:, pad : pad + n] = psi.amplitudes

    k = _signed_offsets(length)
    mpad = np.arange(n) + pad
    i_minus = (mpad[:, None] - k[None, :]) % length
    i_plus = (mpad[:, None] + k[None, :]) % length
    p0_phase = np.exp(2j * grid.p_center * k * grid.dr / hbar)
    scale = grid.dr / (np.pi * hbar)

    data = np.empty((n, n, 2, 2), dtype=np.complex128)
    # rho^ij needs psi_i(R-Q) psi_j*(R+Q); the diagonal pair plus (0,1)
    for i, j in ((0, 0), (1, 1), (0, 1)):
        corr = padded[i][i_minus] * np.conj(padded[j][i_plus])
        data[:, :, i, j] = scale * _wigner_row_transform(corr, n, p0_phase)
    data[:, :, 1, 0] = np.conj(data[:, :, 0, 1])
    # diagonals are real by symmetry of the correlation sequence
    data[:, :, 0, 0] = data[:, :, 0, 0].real
    data[:, :, 1, 1] = data[:, :, 1, 1].real
    return PWTDM("diabatic", data, grid)


def rotate_basis(rho: PWTDM, model: ModelSpec, direction: str) -> PWTDM:
    """Unitary conjugation rho -> U^T rho U (to adiabatic) or U rho U^T.

    The basis tag must flip; trace and Hermiticity are preserved exactly.
    """
    if direction not in ("to_adiabatic", "to_diabatic"):
        raise ValueError(f"unknown direction {direction!r}")
    target = "adiabatic" if direction == "to_adiabatic" else "diabatic"
    if rho.basis == target:
        raise ValueError(f"PWTDM is already {target}; rotation must flip the basis")
    u = adiabatize(model, rho.grid.r_values).u  # (n_r, 2, 2), real orthogonal
    if direction == "to_adiabatic":
        data = np.einsum("rji,rpjk,rkl->rpil", u, rho.data, u, optimize=True)
    else:
        data = np.einsum("rij,rpjk,rlk->rpil", u, rho.data, u, optimize=True)
    return PWTDM(target, data, rho.grid)


def pseudo_density(rho: PWTDM) -> np.ndarray:
    """Pointwise trace rho00 + rho11; basis independent, may be negative."""
    tr = rho.data[..., 0, 0] + rho.data[..., 1, 1]
    worst = np.abs(tr.imag).max()
    if worst > _IM_TRACE_TOL:
        raise ValueError(f"pseudo-density has imaginary part {worst:.3e}")
    return tr.real


def coherence_magnitude(rho: PWTDM) -> np.ndarray:
    """|rho01(R, P)| of the adiabatic coherence field."""
    if rho.basis != "adiabatic":
        raise ValueError("coherence magnitude is defined on the adiabatic PWTDM")
    return np.abs(rho.data[..., 0, 1])


def diagonal_marginals(psi: Wavefunction, block_rows: int = 256):
    """Per-surface marginals of the diagonal PWTDM elements, row-streamed.

    Returns (n, eta): n[i] is the position marginal of rho^ii summed over the
    grid momenta, eta[i] the momentum marginal summed over positions. The
    transform rows are built in blocks so the full (N x N) field never needs
    to be materialized; identical (to roundoff) to integrating the
    ``partial_wigner_transform`` output.
    """
    if psi.basis != "diabatic":
        raise ValueError("diagonal marginals require a diabatic wavefunction")
    grid = psi.grid
    if not grid.momentum_locked:
        raise GridError("partial Wigner transform needs the (2N-1)-locked grid")
    n = grid.n_r
    pad = (n - 1) // 2
    length = 2 * n - 1
    hbar = grid.hbar

    padded = np.zeros((2, length), dtype=np.complex128)
    padded[:, pad : pad + n] = psi.amplitudes
    k = _signed_offsets(length)
    p0_phase = np.exp(2j * grid.p_center * k * grid.dr / hbar)
    scale = grid.dr / (np.pi * hbar)
    nu = np.arange(n) - pad
    gather = (2 * nu) % length

    n_marg = np.empty((2, n))
    eta = np.zeros((2, n))
    for start in range(0, n, block_rows):
        rows = np.arange(start, min(start + block_rows, n)) + pad
        i_minus = (rows[:, None] - k[None, :]) % length
        i_plus = (rows[:, None] + k[None, :]) % length
        for i in range(2):
            corr = padded[i][i_minus] * np.conj(padded[i][i_plus])
            corr *= p0_phase[None, :]
            spec = np.fft.ifft(corr, axis=1) * length
            block = scale * spec[:, gather].real
            n_marg[i, start : start + rows.size] = block.sum(axis=1) * grid.dp
            eta[i] += block.sum(axis=0) * grid.dr
    return n_marg, eta


# ---------------------------------------------------------------------------
# field dumps: CSV (R, P, value) and a row-major binary block with text header
# ---------------------------------------------------------------------------

def write_field_csv(path, grid: PhaseSpaceGrid, field: np.ndarray, comment: str = "") -> None:
    """Dump a real scalar field as 'R,P,value' rows (row-major over R then P)."""
    if field.shape != (grid.n_r, grid.n_p):
        raise ValueError("field must be (n_r, n_p)")
    with open(path, "w", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write("R,P,value\n")
        for i, r in enumerate(grid.r_values):
            row = field[i]
            for j, p in enumerate(grid.p_values):
                fh.write(f"{r:.17g},{p:.17g},{row[j]:.17g}\n")


_BINARY_MAGIC = b"mqclab-field-v1\n"


def write_field_binary(path, grid: PhaseSpaceGrid, field: np.ndarray, basis: str, kind: str) -> None:
    """Row-major little-endian binary block preceded by a text header.

    Header lines: n_r, n_p, dr, dp, r_first, p_first, basis, kind, dtype.
    The payload follows the single 'end-header' line. Reals are written as
    float64, complex as complex128, always row-major (R index outermost).
    """
    if field.shape[:2] != (grid.n_r, grid.n_p):
        raise ValueError("field must lead with (n_r, n_p)")
    payload = np.ascontiguousarray(field)
    if payload.dtype.kind == "c":
        payload = payload.astype("<c16")
        dtype = "complex128"
    else:
        payload = payload.astype("<f8")
        dtype = "float64"
    shape = ",".join(str(s) for s in payload.shape)
    header = (
        f"n_r {grid.n_r}\nn_p {grid.n_p}\ndr {grid.dr:.17g}\ndp {grid.dp:.17g}\n"
        f"r_first {grid.r_values[0]:.17g}\np_first {grid.p_values[0]:.17g}\n"
        f"basis {basis}\nkind {kind}\ndtype {dtype}\nshape {shape}\nend-header\n"
    )
    with open(path, "wb") as fh:
        fh.write(_BINARY_MAGIC)
        fh.write(header.encode("utf-8"))
        fh.write(payload.tobytes())


def read_field_binary(path):
    """Read a binary field dump; returns (grid, field, header dict)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(_BINARY_MAGIC):
        raise ValueError(f"not a field dump: {path}")
    head_end = blob.index(b"end-header\n") + len(b"end-header\n")
    header = {}
    for line in blob[len(_BINARY_MAGIC) : head_end].decode("utf-8").splitlines()[:-1]:
        key, _, value = line.partition(" ")
        header[key] = value
    shape = tuple(int(s) for s in header["shape"].split(","))
    dtype = "<c16" if header["dtype"] == "complex128" else "<f8"
    field = np.frombuffer(blob[head_end:], dtype=dtype).reshape(shape).copy()
    n_r, n_p = int(header["n_r"]), int(header["n_p"])
    dr, dp = float(header["dr"]), float(header["dp"])
    grid = PhaseSpaceGrid(
        r_values=float(header["r_first"]) + dr * np.arange(n_r),
        p_values=float(header["p_first"]) + dp * np.arange(n_p),
        dr=dr,
        dp=dp,
    )
    return grid, field, header
