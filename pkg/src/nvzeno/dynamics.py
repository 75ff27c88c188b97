"""Cluster Hamiltonians and exact survival-probability propagation.

The central spin is the full spin-1 electron triplet (|+1>, |0>, |-1>); no
secular or rotating-wave truncation is applied anywhere.  A cluster couples
the electron to a subset of bath spins:

    H = d_zfs * Sz^2 - gamma_e * B_z * Sz        (electron)
        - gamma_c * B_z * sum_i Iz_i             (nuclear Zeeman)
        + sum_i  S . A_i . I_i                   (hyperfine, full tensor)
        + sum_i<j I_i . T_ij . I_j               (optional intra-bath dipole)

All terms in rad/s.  The composite basis is electron (slowest index) then
bath sites in cluster order; each nuclear factor orders its levels
(m_I = +1/2, m_I = -1/2).

The survival probability is the population remaining in the electron |0>
sub-block: one Hermitian eigendecomposition serves an entire time grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bathgen import Bath
from .core import (
    DEFAULT_CONSTANTS,
    IDENTITY2,
    IDENTITY3,
    PhysConstants,
    SPIN1_OPS,
    SPIN1_Z,
    SPIN_HALF_OPS,
    SPIN_HALF_Z,
    dipole_coupling_tensor,
    kron_assemble,
)
from .errors import NumericalError


@dataclass(frozen=True)
class NvParams:
    """Electron-spin parameters: splitting, gyromagnetic ratios, field."""

    d_zfs: float
    gamma_e: float
    gamma_c: float
    b_z: float

    @classmethod
    def from_constants(cls, b_z: float,
                       constants: PhysConstants = DEFAULT_CONSTANTS) -> "NvParams":
        return cls(constants.d_zfs, constants.gamma_e, constants.gamma_c, b_z)

    @property
    def omega_a(self) -> float:
        """Splitting of the |0> -> |-1> electron transition, rad/s (signed)."""
        return self.d_zfs + self.gamma_e * self.b_z


@dataclass
class ClusterHamiltonian:
    """Dense Hamiltonian for the electron plus one bath-site subset."""

    sites: tuple[int, ...]
    matrix: np.ndarray
    nv: NvParams
    include_nuclear_dipole: bool = False

    @property
    def n_nuclei(self) -> int:
        return len(self.sites)

    @property
    def dim(self) -> int:
        return 3 * 2 ** self.n_nuclei


@dataclass
class SurvivalCurve:
    """P(t) on a time grid, with bookkeeping about how it was produced.

    method is "exact" or "cce-M"; metadata carries seeds, counters and
    whatever else the producing routine wants on the record.
    """

    times: np.ndarray
    values: np.ndarray
    method: str
    metadata: dict = field(default_factory=dict)


def build_cluster_hamiltonian(nv: NvParams, bath: Bath,
                              sites: tuple[int, ...] | list[int],
                              include_nuclear_dipole: bool = False) -> ClusterHamiltonian:
    """Assemble the dense Hamiltonian for the electron plus the given sites.

    Args:
        sites: bath site indices; stored sorted ascending.
        include_nuclear_dipole: add the intra-bath dipolar couplings
            (off by default; they are kHz-scale and frozen on the
            relaxation timescales of interest).
    """
    sites = tuple(sorted(int(s) for s in sites))
    n = len(sites)
    eye_chain = [IDENTITY3] + [IDENTITY2] * n

    h_nv = nv.d_zfs * (SPIN1_Z @ SPIN1_Z) - nv.gamma_e * nv.b_z * SPIN1_Z
    ops = list(eye_chain)
    ops[0] = h_nv
    h_total = kron_assemble(ops)

    for p, site in enumerate(sites):
        ops = list(eye_chain)
        ops[1 + p] = -nv.gamma_c * nv.b_z * SPIN_HALF_Z
        h_total = h_total + kron_assemble(ops)

        a_tensor = bath.hyperfine[site]
        for a in range(3):
            for b in range(3):
                ops = list(eye_chain)
                ops[0] = SPIN1_OPS[a]
                ops[1 + p] = a_tensor[a, b] * SPIN_HALF_OPS[b]
                h_total = h_total + kron_assemble(ops)

    if include_nuclear_dipole:
        positions = bath.positions_m
        for p in range(n):
            for q in range(p + 1, n):
                t_pq = dipole_coupling_tensor(
                    positions[sites[p]] - positions[sites[q]],
                    nv.gamma_c, nv.gamma_c, bath.constants)
                for a in range(3):
                    for b in range(3):
                        ops = list(eye_chain)
                        ops[1 + p] = SPIN_HALF_OPS[a]
                        ops[1 + q] = t_pq[a, b] * SPIN_HALF_OPS[b]
                        h_total = h_total + kron_assemble(ops)

    return ClusterHamiltonian(sites, h_total, nv, include_nuclear_dipole)


def electron_cluster(nv: NvParams) -> ClusterHamiltonian:
    """The bare electron (empty cluster): 3x3, eigenvalues
    {d_zfs - gamma_e B, 0, d_zfs + gamma_e B}."""
    h_nv = nv.d_zfs * (SPIN1_Z @ SPIN1_Z) - nv.gamma_e * nv.b_z * SPIN1_Z
    return ClusterHamiltonian((), np.asarray(h_nv, dtype=complex), nv)


def _initial_index(n: int, orientations: np.ndarray | None) -> int:
    """Basis index of |0>_electron x (product nuclear state).

    orientations: per-site level choice, 0 = field-aligned (m_I = +1/2),
    1 = flipped.  None means all aligned; that is the polarized bath whose
    electron-flip channel becomes resonant near the level anticrossing.
    """
    nuc = 0
    if orientations is not None:
        for o in orientations:
            nuc = (nuc << 1) | int(o)
    else:
        nuc = 0
    return (1 << n) + nuc  # electron |0> is index 1 of 3


def survival_exact(ham: ClusterHamiltonian, times: np.ndarray,
                   orientations: np.ndarray | None = None) -> SurvivalCurve:
    """Propagate |0> x (product bath state) and record the |0>-block norm.

    P(t) = sum over bath configurations of |<0, config| psi(t)>|^2, from a
    single eigendecomposition of the cluster Hamiltonian.
    """
    times = np.asarray(times, dtype=float)
    n = ham.n_nuclei
    dim = ham.dim
    nuc_dim = 1 << n
    idx0 = _initial_index(n, orientations)

    lam, vec = np.linalg.eigh(ham.matrix)
    coeff = vec[idx0, :].conj()
    block = vec[nuc_dim:2 * nuc_dim, :]            # electron |0> rows
    weights = np.exp(-1j * np.outer(times, lam)) * coeff[None, :]
    amps = weights @ block.T                       # (n_t, nuc_dim)
    values = np.einsum("ij,ij->i", amps, amps.conj()).real
    if not np.all(np.isfinite(values)):
        raise NumericalError("non-finite survival values")
    return SurvivalCurve(times, values, "exact",
                         {"sites": ham.sites, "dim": dim})


def unitarity_check(ham: ClusterHamiltonian, t: float) -> float:
    """Max-abs deviation of U(t)^dag U(t) from the identity."""
    lam, vec = np.linalg.eigh(ham.matrix)
    u = (vec * np.exp(-1j * lam * t)[None, :]) @ vec.conj().T
    dev = u.conj().T @ u - np.eye(ham.dim)
    return float(np.abs(dev).max())


def denominator_unity_residual(nv: NvParams, times: np.ndarray) -> float:
    """Residual of the uncoupled-electron survival against exactly 1.

    The correlation-expansion normalization divides every cluster factor by
    the bare-electron survival; because |0> is an eigenstate of the electron
    Hamiltonian that denominator is identically 1.  This computes
    max_t | |<0| exp(-i H_el t) |0>|^2 - 1 | so the assumption is checked,
    not assumed.
    """
    curve = survival_exact(electron_cluster(nv), times)
    return float(np.abs(curve.values - 1.0).max())
