# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled batch survival kernel.

Per cluster: assemble the dense Hamiltonian directly from bit arithmetic,
eigendecompose with LAPACK zheevd, then project the propagated state onto
the electron |0> block for every requested time.  The whole cluster loop
runs without the GIL so callers can thread over chunks.

Row-major/column-major note: the C-ordered Hermitian matrix handed to
LAPACK is read by it as its transpose, i.e. its conjugate.  The returned
"columns" are therefore the conjugated eigenvectors, laid out as rows of
the C array; the projection arithmetic below takes that into account.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, sin, sqrt
from libc.stdlib cimport free, malloc
from scipy.linalg.cython_lapack cimport zheevd

cnp.import_array()

BACKEND_NAME = "compiled"

cdef double complex S1[3][3][3]   # spin-1 x,y,z
cdef double complex IH[3][2][2]   # spin-1/2 x,y,z


def _init_tables():
    from .core import SPIN1_OPS, SPIN_HALF_OPS
    for a in range(3):
        for i in range(3):
            for j in range(3):
                S1[a][i][j] = SPIN1_OPS[a][i, j]
        for i in range(2):
            for j in range(2):
                IH[a][i][j] = SPIN_HALF_OPS[a][i, j]


_init_tables()


cdef inline void _assemble(double complex *h, int s, int nd, int dim,
                           const double *hyperfine, const double *positions,
                           const cnp.int32_t *sites,
                           double d_zfs, double gamma_e, double gamma_c,
                           double b_z, double dd_pref,
                           bint include_dipole) noexcept nogil:
    cdef Py_ssize_t i
    cdef int e, ep, a, b, p, q, u, v, u2, v2, nuc, m, bit
    cdef int shift, shift2, row, col, base, low, high
    cdef double mz, elec, dx, dy, dz, dist2, dist, pref
    cdef double rhat[3]
    cdef double tpq[3][3]
    cdef double coef
    cdef double complex sv, iv, val
    cdef const double *atensor

    for i in range(<Py_ssize_t> dim * dim):
        h[i] = 0

    # diagonal: electron levels + nuclear Zeeman
    for e in range(3):
        if e == 0:
            elec = d_zfs - gamma_e * b_z
        elif e == 1:
            elec = 0.0
        else:
            elec = d_zfs + gamma_e * b_z
        for nuc in range(nd):
            mz = 0.0
            for p in range(s):
                bit = (nuc >> (s - 1 - p)) & 1
                mz += 0.5 - bit
            i = e * nd + nuc
            h[i * dim + i] += elec - gamma_c * b_z * mz

    # hyperfine: sum_ab A[a,b] S_a I_b at each site
    for p in range(s):
        atensor = hyperfine + 9 * sites[p]
        shift = s - 1 - p
        for a in range(3):
            for b in range(3):
                coef = atensor[3 * a + b]
                if coef == 0.0:
                    continue
                for ep in range(3):
                    for e in range(3):
                        sv = S1[a][ep][e]
                        if sv == 0:
                            continue
                        for u in range(2):
                            for v in range(2):
                                iv = IH[b][u][v]
                                if iv == 0:
                                    continue
                                val = coef * sv * iv
                                for m in range(nd >> 1):
                                    low = m & ((1 << shift) - 1)
                                    high = (m >> shift) << (shift + 1)
                                    base = high | low
                                    row = ep * nd + (base | (u << shift))
                                    col = e * nd + (base | (v << shift))
                                    h[<Py_ssize_t> row * dim + col] += val

    if include_dipole and s > 1:
        for p in range(s):
            for q in range(p + 1, s):
                dx = positions[3 * sites[p]] - positions[3 * sites[q]]
                dy = positions[3 * sites[p] + 1] - positions[3 * sites[q] + 1]
                dz = positions[3 * sites[p] + 2] - positions[3 * sites[q] + 2]
                dist2 = dx * dx + dy * dy + dz * dz
                dist = sqrt(dist2)
                rhat[0] = dx / dist
                rhat[1] = dy / dist
                rhat[2] = dz / dist
                pref = dd_pref / (dist2 * dist)
                for a in range(3):
                    for b in range(3):
                        tpq[a][b] = -3.0 * pref * rhat[a] * rhat[b]
                    tpq[a][a] += pref
                shift = s - 1 - p
                shift2 = s - 1 - q
                for a in range(3):
                    for b in range(3):
                        for u in range(2):
                            for v in range(2):
                                if IH[a][u][v] == 0:
                                    continue
                                for u2 in range(2):
                                    for v2 in range(2):
                                        iv = IH[a][u][v] * IH[b][u2][v2]
                                        if iv == 0:
                                            continue
                                        val = tpq[a][b] * iv
                                        # nuclear patterns with bits p, q cleared
                                        for m in range(nd >> 2):
                                            base = _spread2(m, shift, shift2)
                                            row = base | (u << shift) | (u2 << shift2)
                                            col = base | (v << shift) | (v2 << shift2)
                                            for e in range(3):
                                                h[<Py_ssize_t> (e * nd + row) * dim
                                                  + (e * nd + col)] += val


cdef inline int _spread2(int m, int shift_hi, int shift_lo) noexcept nogil:
    # Insert two zero bits at positions shift_hi > shift_lo.
    cdef int low = m & ((1 << shift_lo) - 1)
    cdef int mid = m >> shift_lo
    cdef int midbits = mid & ((1 << (shift_hi - shift_lo - 1)) - 1)
    cdef int high = mid >> (shift_hi - shift_lo - 1)
    return (high << (shift_hi + 1)) | (midbits << (shift_lo + 1)) | low


def survival_batch(double[:, :, ::1] hyperfine, double[:, ::1] positions_m,
                   unsigned char[::1] orientations, cnp.int32_t[:, ::1] clusters,
                   double[::1] times, double d_zfs, double gamma_e,
                   double gamma_c, double b_z, double dd_pref,
                   bint include_dipole):
    """See nvzeno._survival_py.survival_batch; identical contract."""
    cdef int n_c = clusters.shape[0]
    cdef int s = clusters.shape[1]
    cdef int n_t = times.shape[0]
    cdef int nd = 1 << s
    cdef int dim = 3 * nd
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n_c, n_t))
    if n_c == 0:
        return out

    # zheevd workspace query
    cdef int lwork = -1, lrwork = -1, liwork = -1, info = 0
    cdef double complex wq, adum
    cdef double rwq, wdum
    cdef int iwq
    cdef char jobz = b'V', uplo = b'L'
    zheevd(&jobz, &uplo, &dim, &adum, &dim, &wdum, &wq, &lwork, &rwq, &lrwork,
           &iwq, &liwork, &info)
    if info != 0:
        raise RuntimeError(f"zheevd workspace query failed: info={info}")
    lwork = <int> wq.real
    lrwork = <int> rwq
    liwork = iwq

    cdef double complex *h = <double complex *> malloc(
        <size_t> dim * dim * sizeof(double complex))
    cdef double *lam = <double *> malloc(dim * sizeof(double))
    cdef double complex *work = <double complex *> malloc(
        <size_t> lwork * sizeof(double complex))
    cdef double *rwork = <double *> malloc(<size_t> lrwork * sizeof(double))
    cdef int *iwork = <int *> malloc(<size_t> liwork * sizeof(int))
    cdef double *wvr = <double *> malloc(dim * sizeof(double))
    cdef double *wvi = <double *> malloc(dim * sizeof(double))
    cdef double *ampr = <double *> malloc(nd * sizeof(double))
    cdef double *ampi = <double *> malloc(nd * sizeof(double))
    if h == NULL or lam == NULL or work == NULL or rwork == NULL \
            or iwork == NULL or wvr == NULL or wvi == NULL \
            or ampr == NULL or ampi == NULL:
        free(h); free(lam); free(work); free(rwork); free(iwork)
        free(wvr); free(wvi); free(ampr); free(ampi)
        raise MemoryError("kernel workspace allocation failed")

    cdef double[:, ::1] out_mv = out
    cdef int row, p, k, r, ti, idx0, nuc0, fail = 0
    cdef double t, theta, ct, st, cr, ci, zr, zi, ar, ai, psum
    cdef double complex zc
    cdef const cnp.int32_t *sites

    with nogil:
        for row in range(n_c):
            sites = &clusters[row, 0]
            _assemble(h, s, nd, dim, &hyperfine[0, 0, 0], &positions_m[0, 0],
                      sites, d_zfs, gamma_e, gamma_c, b_z, dd_pref,
                      include_dipole)
            zheevd(&jobz, &uplo, &dim, h, &dim, lam, work, &lwork, rwork,
                   &lrwork, iwork, &liwork, &info)
            if info != 0:
                fail = info
                break
            nuc0 = 0
            for p in range(s):
                nuc0 = (nuc0 << 1) | orientations[sites[p]]
            idx0 = nd + nuc0
            for ti in range(n_t):
                t = times[ti]
                for k in range(dim):
                    theta = lam[k] * t
                    ct = cos(theta)
                    st = sin(theta)
                    # h row k holds conj(v_k); its idx0 entry is <v_k|psi0>
                    zc = h[<Py_ssize_t> k * dim + idx0]
                    cr = zc.real
                    ci = zc.imag
                    # w_k = exp(-i lam_k t) <v_k|psi0>
                    wvr[k] = ct * cr + st * ci
                    wvi[k] = ct * ci - st * cr
                for r in range(nd):
                    ampr[r] = 0.0
                    ampi[r] = 0.0
                for k in range(dim):
                    zr = wvr[k]
                    zi = wvi[k]
                    for r in range(nd):
                        # amp_r += conj(h[k, nd+r]) * w_k = v_k[nd+r] * w_k
                        zc = h[<Py_ssize_t> k * dim + nd + r]
                        ar = zc.real
                        ai = zc.imag
                        ampr[r] += ar * zr + ai * zi
                        ampi[r] += ar * zi - ai * zr
                psum = 0.0
                for r in range(nd):
                    psum += ampr[r] * ampr[r] + ampi[r] * ampi[r]
                out_mv[row, ti] = psum

    free(h); free(lam); free(work); free(rwork); free(iwork)
    free(wvr); free(wvi); free(ampr); free(ampi)
    if fail != 0:
        raise RuntimeError(f"zheevd failed on cluster {row}: info={fail}")
    return out
