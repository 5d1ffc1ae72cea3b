"""Fused elementwise kernels for the QCLE stepper (numba when available).

Every kernel has a pure-numpy twin; the numba versions only remove the
temporaries, they implement the identical arithmetic.
"""

from __future__ import annotations

import numpy as np

try:  # pragma: no cover - exercised implicitly by the qcle tests
    import numba as _nb
except ImportError:  # pragma: no cover
    _nb = None

HAVE_NUMBA = _nb is not None


def _bloch_numpy(p00, p11, u, v, r11, r22, r33, a, b, c):
    x3 = 0.5 * (p00 - p11)
    x0 = 0.5 * (p00 + p11)
    u_new = r11 * u + a * v + b * x3
    v_new = -a * u + r22 * v - c * x3
    x3_new = -b * u - c * v + r33 * x3
    p00[...] = x0 + x3_new
    p11[...] = x0 - x3_new
    u[...] = u_new
    v[...] = v_new


def _kick_in_numpy(p00, p11, u, cc, ss, cs, cos2, out_a, out_b, out_u):
    out_a[...] = cc * p00 + ss * p11 + 2.0 * cs * u
    out_b[...] = ss * p00 + cc * p11 - 2.0 * cs * u
    out_u[...] = (p11 - p00) * cs + cos2 * u


def _kick_out_numpy(ah, bh, uh, cc, ss, cs, cos2, out_a, out_b, out_u):
    out_a[...] = cc * ah + ss * bh - 2.0 * cs * uh
    out_b[...] = ss * ah + cc * bh + 2.0 * cs * uh
    out_u[...] = (ah - bh) * cs + cos2 * uh


if HAVE_NUMBA:

    @_nb.njit(parallel=True, fastmath=True, cache=True)
    def _bloch_numba(p00, p11, u, v, r11, r22, r33, a, b, c):  # pragma: no cover
        np_, nr = p00.shape
        for i in _nb.prange(np_):
            for j in range(nr):
                x3 = 0.5 * (p00[i, j] - p11[i, j])
                x0 = 0.5 * (p00[i, j] + p11[i, j])
                uu = u[i, j]
                vv = v[i, j]
                un = r11[i, j] * uu + a[i, j] * vv + b[i, j] * x3
                vn = -a[i, j] * uu + r22[i, j] * vv - c[i, j] * x3
                xn = -b[i, j] * uu - c[i, j] * vv + r33[i, j] * x3
                p00[i, j] = x0 + xn
                p11[i, j] = x0 - xn
                u[i, j] = un
                v[i, j] = vn

    @_nb.njit(parallel=True, fastmath=True, cache=True)
    def _kick_in_numba(p00, p11, u, cc, ss, cs, cos2, out_a, out_b, out_u):  # pragma: no cover
        np_, nr = p00.shape
        for i in _nb.prange(np_):
            for j in range(nr):
                aa = p00[i, j]
                bb = p11[i, j]
                uu = u[i, j]
                out_a[i, j] = cc[j] * aa + ss[j] * bb + 2.0 * cs[j] * uu
                out_b[i, j] = ss[j] * aa + cc[j] * bb - 2.0 * cs[j] * uu
                out_u[i, j] = (bb - aa) * cs[j] + cos2[j] * uu

    @_nb.njit(parallel=True, fastmath=True, cache=True)
    def _kick_out_numba(ah, bh, uh, cc, ss, cs, cos2, out_a, out_b, out_u):  # pragma: no cover
        np_, nr = ah.shape
        for i in _nb.prange(np_):
            for j in range(nr):
                aa = ah[i, j]
                bb = bh[i, j]
                uu = uh[i, j]
                out_a[i, j] = cc[j] * aa + ss[j] * bb - 2.0 * cs[j] * uu
                out_b[i, j] = ss[j] * aa + cc[j] * bb + 2.0 * cs[j] * uu
                out_u[i, j] = (aa - bb) * cs[j] + cos2[j] * uu

    bloch = _bloch_numba
    kick_in = _kick_in_numba
    kick_out = _kick_out_numba
else:  # pragma: no cover

    def bloch(p00, p11, u, v, r11, r22, r33, a, b, c):
        _bloch_numpy(p00, p11, u, v, r11, r22, r33, a, b, c)

    def kick_in(p00, p11, u, cc, ss, cs, cos2, out_a, out_b, out_u):
        _kick_in_numpy(p00, p11, u, cc, ss, cs, cos2, out_a, out_b, out_u)

    def kick_out(ah, bh, uh, cc, ss, cs, cos2, out_a, out_b, out_u):
        _kick_out_numpy(ah, bh, uh, cc, ss, cs, cos2, out_a, out_b, out_u)


def set_threads(n: int) -> None:
    if HAVE_NUMBA:
        try:
            _nb.set_num_threads(max(1, n))
        except ValueError:  # pragma: no cover - more threads than numba has
            pass
