"""Pure-numpy batch survival kernel.

Same contract as the compiled extension ``_survival``: given per-site
hyperfine tensors and a batch of same-size clusters, return the electron
|0>-block survival probability of every cluster on a shared time grid.
Selected automatically when the compiled kernel is not importable.

Assembly works on a (3, 2^s, 3, 2^s) view of the Hamiltonian with bit
arithmetic on the nuclear index, so no operator ever materializes beyond
the cluster matrix itself.
"""

from __future__ import annotations

import numpy as np

from .core import SPIN1_OPS, SPIN_HALF_OPS

BACKEND_NAME = "python"

_PAULI_PAIRS = ((0, 0), (0, 1), (1, 0), (1, 1))


def _assemble(hyperfine: np.ndarray, positions_m: np.ndarray,
              sites: np.ndarray, d_zfs: float, gamma_e: float,
              gamma_c: float, b_z: float, dd_pref: float,
              include_dipole: bool) -> np.ndarray:
    s = len(sites)
    nd = 1 << s
    h4 = np.zeros((3, nd, 3, nd), dtype=complex)

    elec_diag = np.array([d_zfs - gamma_e * b_z, 0.0, d_zfs + gamma_e * b_z])
    nidx = np.arange(nd)
    m_z = np.zeros(nd)
    for p in range(s):
        bit = (nidx >> (s - 1 - p)) & 1
        m_z += 0.5 - bit
    diag_nuc = -gamma_c * b_z * m_z
    for e in range(3):
        h4[e, nidx, e, nidx] += elec_diag[e] + diag_nuc

    for p in range(s):
        shift = s - 1 - p
        n0 = nidx[((nidx >> shift) & 1) == 0]
        n1 = n0 | (1 << shift)
        rows = (n0, n1)
        a_tensor = hyperfine[sites[p]]
        for a in range(3):
            s_a = SPIN1_OPS[a]
            for b in range(3):
                coef = a_tensor[a, b]
                if coef == 0.0:
                    continue
                i_b = SPIN_HALF_OPS[b]
                for ep in range(3):
                    for e in range(3):
                        if s_a[ep, e] == 0:
                            continue
                        for u, v in _PAULI_PAIRS:
                            w = i_b[u, v]
                            if w == 0:
                                continue
                            h4[ep, rows[u], e, rows[v]] += coef * s_a[ep, e] * w

    if include_dipole and s > 1:
        for p in range(s):
            for q in range(p + 1, s):
                r_vec = positions_m[sites[p]] - positions_m[sites[q]]
                dist = float(np.linalg.norm(r_vec))
                rhat = r_vec / dist
                t_pq = (dd_pref / dist**3) * (np.eye(3) - 3.0 * np.outer(rhat, rhat))
                sh_p, sh_q = s - 1 - p, s - 1 - q
                both0 = nidx[(((nidx >> sh_p) & 1) == 0) & (((nidx >> sh_q) & 1) == 0)]
                for a in range(3):
                    i_a = SPIN_HALF_OPS[a]
                    for b in range(3):
                        coef = t_pq[a, b]
                        i_b = SPIN_HALF_OPS[b]
                        for u, v in _PAULI_PAIRS:
                            if i_a[u, v] == 0:
                                continue
                            for u2, v2 in _PAULI_PAIRS:
                                w = i_a[u, v] * i_b[u2, v2] * coef
                                if w == 0:
                                    continue
                                r_i = both0 | (u << sh_p) | (u2 << sh_q)
                                c_i = both0 | (v << sh_p) | (v2 << sh_q)
                                for e in range(3):
                                    h4[e, r_i, e, c_i] += w

    return h4.reshape(3 * nd, 3 * nd)


def survival_batch(hyperfine: np.ndarray, positions_m: np.ndarray,
                   orientations: np.ndarray, clusters: np.ndarray,
                   times: np.ndarray, d_zfs: float, gamma_e: float,
                   gamma_c: float, b_z: float, dd_pref: float,
                   include_dipole: bool) -> np.ndarray:
    """Survival curves for a batch of same-size clusters.

    Args:
        hyperfine: (N, 3, 3) per-site coupling tensors, rad/s.
        positions_m: (N, 3) site positions in metres.
        orientations: (N,) uint8, 0 = field-aligned level, 1 = flipped;
            defines the initial nuclear product state.
        clusters: (n_c, s) int array of site indices, each row sorted.
        times: (T,) seconds.
        dd_pref: mu0*hbar*gamma_c^2/(4 pi), used only when include_dipole.

    Returns:
        (n_c, T) float64 array of survival probabilities.
    """
    clusters = np.asarray(clusters)
    times = np.asarray(times, dtype=float)
    n_c, s = clusters.shape if clusters.ndim == 2 else (0, 0)
    nd = 1 << s
    out = np.empty((n_c, len(times)))
    for row in range(n_c):
        sites = clusters[row]
        h = _assemble(hyperfine, positions_m, sites, d_zfs, gamma_e,
                      gamma_c, b_z, dd_pref, include_dipole)
        lam, vec = np.linalg.eigh(h)
        nuc0 = 0
        for p in range(s):
            nuc0 = (nuc0 << 1) | int(orientations[sites[p]])
        idx0 = nd + nuc0
        coeff = vec[idx0, :].conj()
        block = vec[nd:2 * nd, :]
        weights = np.exp(-1j * np.outer(times, lam)) * coeff[None, :]
        amps = weights @ block.T
        out[row] = np.einsum("ij,ij->i", amps, amps.conj()).real
    return out
