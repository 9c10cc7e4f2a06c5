"""Numba kernels for the density-matrix integrator.

All kernels operate on one spin block (a dense complex d_ph x d_ph array)
of the density matrix expressed in the X eigenbasis of the two driven
spins, where the Hamiltonian is block diagonal and phonon-only.  Ladder
structure is encoded per mode as (src, dst, sq) index triples: src holds
every phonon index with occupation >= 1 in that mode, dst = src shifted
one quantum down, sq = sqrt(occupation).
"""

import numba as nb
import numpy as np


@nb.njit(cache=True)
def ladder_apply(offsets, src, dst, sq, w, b, out):
    """out += sum_m (w[m] A_m^dag + conj(w[m]) A_m) @ b."""
    n_modes = offsets.size - 1
    ncol = b.shape[1]
    for m in range(n_modes):
        wm = w[m]
        wmc = np.conj(wm)
        for k in range(offsets[m], offsets[m + 1]):
            i = src[k]
            j = dst[k]
            ws = wm * sq[k]
            wcs = wmc * sq[k]
            for col in range(ncol):
                out[i, col] += ws * b[j, col]
                out[j, col] += wcs * b[i, col]


@nb.njit(cache=True)
def ladder_apply_vec(offsets, src, dst, sq, w, b, out):
    """Vector variant of ladder_apply for pure-state propagation."""
    n_modes = offsets.size - 1
    for m in range(n_modes):
        wm = w[m]
        wmc = np.conj(wm)
        for k in range(offsets[m], offsets[m + 1]):
            i = src[k]
            j = dst[k]
            out[i] += wm * sq[k] * b[j]
            out[j] += wmc * sq[k] * b[i]


@nb.njit(cache=True)
def conj_transpose(b, out):
    n = b.shape[0]
    for i in range(n):
        for j in range(n):
            out[i, j] = np.conj(b[j, i])


@nb.njit(cache=True)
def finish_commutator(u, v, b, dvec, noisy, out):
    """out = -i (u - v^dag) - noisy * (dvec[i] + dvec[j]) b[i, j] / 2."""
    n = u.shape[0]
    for i in range(n):
        di = dvec[i]
        for j in range(n):
            val = -1j * (u[i, j] - np.conj(v[j, i]))
            if noisy:
                val -= 0.5 * (di + dvec[j]) * b[i, j]
            out[i, j] = val


@nb.njit(cache=True)
def sandwich(src, dst, sq, gup, gdn, b, out):
    """out += gup A^dag b A + gdn A b A^dag for one mode."""
    n = src.size
    for r in range(n):
        i_s = src[r]
        i_d = dst[r]
        fr = sq[r]
        for c in range(n):
            f = fr * sq[c]
            out[i_s, src[c]] += gup * f * b[i_d, dst[c]]
            out[i_d, dst[c]] += gdn * f * b[i_s, src[c]]


@nb.njit(cache=True)
def axpy(alpha, x, y, out):
    """out = y + alpha * x, elementwise over equal-shape complex arrays."""
    xf = x.reshape(-1)
    yf = y.reshape(-1)
    of = out.reshape(-1)
    for i in range(xf.size):
        of[i] = yf[i] + alpha * xf[i]


@nb.njit(cache=True)
def rk4_update(y, k1, k2, k3, k4, h):
    yf = y.reshape(-1)
    a = k1.reshape(-1)
    b = k2.reshape(-1)
    c = k3.reshape(-1)
    d = k4.reshape(-1)
    w = h / 6.0
    for i in range(yf.size):
        yf[i] += w * (a[i] + 2.0 * (b[i] + c[i]) + d[i])
