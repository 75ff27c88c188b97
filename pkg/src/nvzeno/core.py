"""Physical constants, spin operators and small tensor-algebra helpers.

Unit contract, used everywhere in the package:

* energies and couplings are angular frequencies in rad/s (hbar = 1 in all
  Hamiltonians; the hbar that converts a dipolar energy to an angular
  frequency is folded into the coupling tensors),
* magnetic fields in tesla,
* lengths in metres,
* times in seconds.

Gyromagnetic ratios carry their sign: ``GAMMA_E`` is negative, ``GAMMA_C``
positive.  The zero-field splitting uses the angular-frequency convention
``2*pi * 2.87 GHz``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BudgetError

HBAR = 1.054571817e-34          # J s
MU0 = 4.0e-7 * np.pi            # T m / A

D_ZFS = 2.0 * np.pi * 2.87e9    # rad/s
GAMMA_E = -1.76e11              # rad / (s T), electron
GAMMA_C = 6.73e7                # rad / (s T), carbon-13
LATTICE_A = 3.567e-10           # m, conventional diamond cell
ABUNDANCE_C13 = 0.011


@dataclass(frozen=True)
class PhysConstants:
    """Bundle of physical constants so alternative values can be injected."""

    d_zfs: float = D_ZFS
    gamma_e: float = GAMMA_E
    gamma_c: float = GAMMA_C
    mu0: float = MU0
    hbar: float = HBAR
    lattice_a: float = LATTICE_A


DEFAULT_CONSTANTS = PhysConstants()


def _ro(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a

# Electron spin-1 operators in the (|+1>, |0>, |-1>) basis.
SPIN1_Z = _ro(np.diag([1.0, 0.0, -1.0]).astype(complex))
SPIN1_X = _ro(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex) / np.sqrt(2.0))
SPIN1_Y = _ro(np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]], dtype=complex) / np.sqrt(2.0))
SPIN1_OPS = (SPIN1_X, SPIN1_Y, SPIN1_Z)

# Nuclear spin-1/2 operators in the (m_I=+1/2, m_I=-1/2) basis.
SPIN_HALF_X = _ro(np.array([[0, 0.5], [0.5, 0]], dtype=complex))
SPIN_HALF_Y = _ro(np.array([[0, -0.5j], [0.5j, 0]], dtype=complex))
SPIN_HALF_Z = _ro(np.array([[0.5, 0], [0, -0.5]], dtype=complex))
SPIN_HALF_OPS = (SPIN_HALF_X, SPIN_HALF_Y, SPIN_HALF_Z)

IDENTITY3 = _ro(np.eye(3, dtype=complex))
IDENTITY2 = _ro(np.eye(2, dtype=complex))

# Above this Hilbert-space dimension a dense matrix stops being sane on a
# desk machine; kron_assemble refuses rather than thrash.
MAX_KRON_DIM = 1 << 17


def dipole_coupling_tensor(r: np.ndarray, gamma1: float, gamma2: float,
                           constants: PhysConstants = DEFAULT_CONSTANTS) -> np.ndarray:
    """Point-dipole coupling tensor between two magnetic moments.

    Returns the 3x3 symmetric traceless tensor

        T = (mu0 * hbar * gamma1 * gamma2 / (4 pi |r|^3)) * (1 - 3 rhat rhat^T)

    in rad/s, so that a bilinear spin coupling reads ``S . T . I``.

    Args:
        r: separation vector in metres, shape (3,).
        gamma1, gamma2: gyromagnetic ratios in rad/(s T), signs included.

    Raises:
        ValueError: on a zero separation vector.
    """
    r = np.asarray(r, dtype=float)
    if r.shape != (3,):
        raise ValueError(f"separation vector must have shape (3,), got {r.shape}")
    dist = float(np.linalg.norm(r))
    if dist == 0.0:
        raise ValueError("dipole tensor undefined for zero separation")
    rhat = r / dist
    pref = constants.mu0 * constants.hbar * gamma1 * gamma2 / (4.0 * np.pi * dist**3)
    return pref * (np.eye(3) - 3.0 * np.outer(rhat, rhat))


def kron_assemble(ops: list[np.ndarray] | tuple[np.ndarray, ...]) -> np.ndarray:
    """Kronecker product of a list of operators, left factor slowest.

    The composite basis index runs fastest over the last operator, i.e.
    ``kron_assemble([A, B])[i*dimB + j, k*dimB + l] = A[i, k] * B[j, l]``.

    Raises:
        BudgetError: if the composite dimension would exceed ``MAX_KRON_DIM``.
    """
    if len(ops) == 0:
        return np.eye(1, dtype=complex)
    dim = 1
    for op in ops:
        dim *= op.shape[0]
    if dim > MAX_KRON_DIM:
        raise BudgetError(
            f"composite dimension {dim} exceeds kron limit {MAX_KRON_DIM}")
    out = np.asarray(ops[0], dtype=complex)
    for op in ops[1:]:
        out = np.kron(out, op)
    return out


def anticrossing_field(constants: PhysConstants = DEFAULT_CONSTANTS) -> float:
    """Field (tesla) where the bare |0> and |-1> electron levels cross.

    Solves d_zfs + gamma_e * B = 0 for B; no nuclear or hyperfine shifts.
    """
    return constants.d_zfs / abs(constants.gamma_e)


def nuclear_resonance_field(constants: PhysConstants = DEFAULT_CONSTANTS) -> float:
    """Field (tesla) where the electron |0> -> |-1> flip exactly pays for a
    nuclear spin flip, i.e. d_zfs + (gamma_e + gamma_c) * B = 0.

    At this field the double-flip channel out of the polarized bath state is
    degenerate up to hyperfine shifts, which makes bath-induced relaxation
    fastest.  Sits a fraction of a percent above the bare anticrossing.
    """
    return constants.d_zfs / (abs(constants.gamma_e) - constants.gamma_c)
