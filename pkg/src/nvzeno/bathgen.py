"""Random carbon-13 baths on the diamond lattice around a single defect spin.

Geometry: conventional FCC cell (edge ``LATTICE_A``) with the two-atom
diamond basis.  The defect occupies a nearest-neighbour pair of lattice
sites; coordinates are rotated so that the pair axis ([111] in the cubic
frame) becomes +z and the origin sits at the midpoint of the pair.  Both
defect sites are excluded from the bath.

Site positions are stored in nanometres; this is the unit used in the JSON
serialization, and keeping it authoritative internally makes the round trip
bit-exact.  Metre-valued arrays for Hamiltonian work are derived views.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    ABUNDANCE_C13,
    DEFAULT_CONSTANTS,
    PhysConstants,
    dipole_coupling_tensor,
)
from .errors import BudgetError, ConfigError

PRNG_NAME = "philox4x64"

_FCC_FRAC = np.array([
    [0.0, 0.0, 0.0],
    [0.0, 0.5, 0.5],
    [0.5, 0.0, 0.5],
    [0.5, 0.5, 0.0],
])
_BASIS_FRAC = np.array([
    [0.0, 0.0, 0.0],
    [0.25, 0.25, 0.25],
])

# Carbon number density: 8 atoms per conventional cell.
_ATOMS_PER_CELL = 8


def _rotation_111_to_z() -> np.ndarray:
    """Rodrigues rotation taking the cubic [111] direction onto +z."""
    u = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)
    z = np.array([0.0, 0.0, 1.0])
    axis = np.cross(u, z)
    s = np.linalg.norm(axis)
    c = float(u @ z)
    axis = axis / s
    k = np.array([
        [0.0, -axis[2], axis[1]],
        [axis[2], 0.0, -axis[0]],
        [-axis[1], axis[0], 0.0],
    ])
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


_ROT = _rotation_111_to_z()


@dataclass(frozen=True)
class BathConfig:
    """Inputs that fully determine a sampled bath."""

    seed: int
    n_spins: int
    abundance: float = ABUNDANCE_C13
    r_min_m: float = 0.5e-9
    r_max_m: float | None = None     # None: sized automatically from n_spins
    b_z: float = 0.102498            # tesla
    site_cap: int = 2_000_000

    def validate(self) -> None:
        if self.n_spins < 0:
            raise ConfigError(f"n_spins must be >= 0, got {self.n_spins}")
        if not 0.0 < self.abundance <= 1.0:
            raise ConfigError(f"abundance must lie in (0, 1], got {self.abundance}")
        if self.r_min_m < 0.0:
            raise ConfigError(f"r_min must be >= 0, got {self.r_min_m}")
        if self.r_max_m is not None and self.r_max_m <= self.r_min_m:
            raise ConfigError("r_max must exceed r_min")


@dataclass(frozen=True)
class NuclearSite:
    """One bath spin: position, hyperfine tensor and bare line position."""

    index: int
    position_nm: np.ndarray      # shape (3,)
    hyperfine: np.ndarray        # shape (3, 3), rad/s
    omega: float                 # rad/s

    @property
    def position_m(self) -> np.ndarray:
        return self.position_nm * 1e-9


@dataclass
class Bath:
    """A sampled bath: per-site arrays plus the generating configuration.

    ``positions_nm`` rows are sorted by ascending distance from the defect.
    """

    config: BathConfig
    positions_nm: np.ndarray     # (n, 3)
    hyperfine: np.ndarray        # (n, 3, 3) rad/s
    omegas: np.ndarray           # (n,) rad/s
    n_sites_scanned: int = 0
    r_enumerated_m: float = 0.0
    constants: PhysConstants = field(default=DEFAULT_CONSTANTS, repr=False)

    def __len__(self) -> int:
        return self.positions_nm.shape[0]

    @property
    def positions_m(self) -> np.ndarray:
        return self.positions_nm * 1e-9

    @property
    def sites(self) -> tuple[NuclearSite, ...]:
        return tuple(
            NuclearSite(i, self.positions_nm[i], self.hyperfine[i], float(self.omegas[i]))
            for i in range(len(self))
        )

    def subset(self, n: int) -> "Bath":
        """The innermost n sites as a bath of their own (nested families)."""
        if not 0 <= n <= len(self):
            raise ConfigError(f"subset size {n} outside [0, {len(self)}]")
        cfg = BathConfig(
            seed=self.config.seed, n_spins=n, abundance=self.config.abundance,
            r_min_m=self.config.r_min_m, r_max_m=self.config.r_max_m,
            b_z=self.config.b_z, site_cap=self.config.site_cap)
        return Bath(cfg, self.positions_nm[:n].copy(), self.hyperfine[:n].copy(),
                    self.omegas[:n].copy(), self.n_sites_scanned,
                    self.r_enumerated_m, self.constants)


def _enumerate_sites_nm(r_max_nm: float, site_cap: int,
                        a_nm: float) -> np.ndarray:
    """All carbon sites within r_max of the defect midpoint, excluding the
    defect pair itself.  Returns (n, 3) positions in nm sorted by distance
    (ties broken lexicographically, so the order is a fixed total order).
    """
    density_per_nm3 = _ATOMS_PER_CELL / a_nm**3
    estimate = 4.19 * r_max_nm**3 * density_per_nm3
    if estimate > 1.2 * site_cap + 100:
        raise BudgetError(
            f"r_max {r_max_nm:.3g} nm implies ~{estimate:.3g} lattice sites, "
            f"over the cap of {site_cap}")

    midpoint_frac = np.array([0.125, 0.125, 0.125])
    ncell = int(np.ceil(r_max_nm / a_nm)) + 2
    rng_cells = np.arange(-ncell, ncell + 1)
    ii, jj, kk = np.meshgrid(rng_cells, rng_cells, rng_cells, indexing="ij")
    cells = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1).astype(float)

    chunks = []
    for fcc_i, f in enumerate(_FCC_FRAC):
        for basis_i, b in enumerate(_BASIS_FRAC):
            frac = cells + f + b - midpoint_frac
            pos = frac @ _ROT.T * a_nm
            r2 = np.einsum("ij,ij->i", pos, pos)
            keep = r2 <= r_max_nm**2
            if fcc_i == 0:
                # Drop the defect pair: cell (0,0,0), fcc offset 0, both
                # basis atoms.  Integer identity, no float matching.
                origin = np.all(cells == 0.0, axis=1)
                keep &= ~origin
            chunks.append(pos[keep])
    sites = np.concatenate(chunks, axis=0)
    if sites.shape[0] > site_cap:
        raise BudgetError(
            f"{sites.shape[0]} lattice sites exceed the cap of {site_cap}")
    order = sorted(range(sites.shape[0]),
                   key=lambda i: (sites[i] @ sites[i], sites[i, 0], sites[i, 1], sites[i, 2]))
    return sites[order]


def enumerate_lattice(r_max_m: float, site_cap: int = 2_000_000,
                      constants: PhysConstants = DEFAULT_CONSTANTS) -> np.ndarray:
    """Carbon sites within ``r_max_m`` of the defect, in metres.

    Sorted by ascending distance; the defect's own pair of sites is excluded.
    """
    if r_max_m <= 0:
        return np.zeros((0, 3))
    nm = _enumerate_sites_nm(r_max_m * 1e9, site_cap, constants.lattice_a * 1e9)
    return nm * 1e-9


def _auto_r_max_m(config: BathConfig, constants: PhysConstants) -> float:
    """Radius giving ~(4 n + 10) expected occupied sites outside r_min, so a
    shortfall is vanishingly unlikely while the enumeration stays small."""
    density = _ATOMS_PER_CELL / constants.lattice_a**3
    target = 4.0 * config.n_spins + 10.0
    vol = target / (config.abundance * density)
    return (3.0 * vol / (4.0 * np.pi) + config.r_min_m**3) ** (1.0 / 3.0)


def sample_bath(config: BathConfig,
                constants: PhysConstants = DEFAULT_CONSTANTS) -> Bath:
    """Draw a bath: every lattice site at distance >= r_min is occupied
    independently with probability ``abundance``; occupied sites are taken
    nearest-first until ``n_spins`` are collected.

    Uses the counter-based Philox generator, one uniform per candidate site
    in distance order, which makes baths with the same seed nested: the
    n-spin bath is the inner prefix of any larger bath drawn with the same
    seed and abundance.

    Raises:
        ConfigError: if the enumerated region cannot supply n_spins sites.
    """
    config.validate()
    r_max_m = config.r_max_m if config.r_max_m is not None \
        else _auto_r_max_m(config, constants)
    a_nm = constants.lattice_a * 1e9
    sites_nm = _enumerate_sites_nm(r_max_m * 1e9, config.site_cap, a_nm)

    r_min_nm = config.r_min_m * 1e9
    r2 = np.einsum("ij,ij->i", sites_nm, sites_nm)
    candidates = sites_nm[r2 >= r_min_nm**2]

    rng = np.random.Generator(np.random.Philox(key=config.seed))
    uniforms = rng.random(candidates.shape[0])
    occupied = uniforms < config.abundance
    hits = np.flatnonzero(occupied)
    if hits.size < config.n_spins:
        raise ConfigError(
            f"only {hits.size} occupied sites within r_max={r_max_m * 1e9:.3g} nm; "
            f"need {config.n_spins}. Increase r_max.")
    take = hits[:config.n_spins]
    scanned = int(take[-1]) + 1 if config.n_spins > 0 else 0
    chosen_nm = candidates[take]

    n = config.n_spins
    hyperfine = np.zeros((n, 3, 3))
    omegas = np.zeros(n)
    for i in range(n):
        a_tensor = dipole_coupling_tensor(
            chosen_nm[i] * 1e-9, constants.gamma_c, constants.gamma_e, constants)
        hyperfine[i] = a_tensor
        omegas[i] = -constants.gamma_c * config.b_z - a_tensor[2, 2]

    return Bath(config, chosen_nm, hyperfine, omegas,
                n_sites_scanned=scanned, r_enumerated_m=r_max_m,
                constants=constants)


def spectral_weights(bath: Bath) -> tuple[np.ndarray, np.ndarray]:
    """Line positions and weights of the bath's flip spectral density.

    Each site contributes a line at its splitting ``omega_j`` with weight
    equal to the squared coupling element of the resonant double-flip channel
    (electron |0> -> |-1> with the field-aligned nucleus flipping back):

        w_j = |<-1, flipped| S.A.I |0, aligned>|^2
            = ((A_xx - A_yy)^2 + 4 A_xy^2) / 8

    which closes to 9 (mu0 hbar gamma_c gamma_e)^2 (x^2+y^2)^2 /
    (128 pi^2 r^10) and vanishes for a site on the defect axis.

    Returns:
        (omegas, weights), both shape (n,), in bath site order; weights in
        (rad/s)^2.
    """
    axx = bath.hyperfine[:, 0, 0]
    ayy = bath.hyperfine[:, 1, 1]
    axy = bath.hyperfine[:, 0, 1]
    weights = ((axx - ayy) ** 2 + 4.0 * axy**2) / 8.0
    return bath.omegas.copy(), weights


# ---------------------------------------------------------------------------
# serialization

def _cfg_to_dict(config: BathConfig) -> dict:
    return {
        "seed": config.seed,
        "n_spins": config.n_spins,
        "abundance": config.abundance,
        "r_min_nm": config.r_min_m * 1e9,
        "r_max_nm": None if config.r_max_m is None else config.r_max_m * 1e9,
        "b_field_tesla": config.b_z,
        "site_cap": config.site_cap,
        "prng": PRNG_NAME,
    }


_TENSOR_KEYS = ("xx", "yy", "zz", "xy", "xz", "yz")
_TENSOR_IDX = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


def bath_to_json(bath: Bath) -> str:
    """Serialize a bath.  Floats go through repr (shortest round-trip form),
    so load(dump(bath)) reproduces every stored value bit-exactly."""
    sites = []
    for i in range(len(bath)):
        a_tensor = bath.hyperfine[i]
        sites.append({
            "index": i,
            "position_nm": [float(x) for x in bath.positions_nm[i]],
            "hyperfine_rad_s": {k: float(a_tensor[r][c])
                                for k, (r, c) in zip(_TENSOR_KEYS, _TENSOR_IDX)},
            "omega_rad_s": float(bath.omegas[i]),
        })
    doc = {
        "config": _cfg_to_dict(bath.config),
        "generation": {
            "n_sites_scanned": bath.n_sites_scanned,
            "r_enumerated_nm": bath.r_enumerated_m * 1e9,
            "lattice_a_nm": bath.constants.lattice_a * 1e9,
        },
        "sites": sites,
    }
    return json.dumps(doc, indent=1)


def bath_from_json(text: str,
                   constants: PhysConstants = DEFAULT_CONSTANTS) -> Bath:
    doc = json.loads(text)
    c = doc["config"]
    config = BathConfig(
        seed=c["seed"], n_spins=c["n_spins"], abundance=c["abundance"],
        r_min_m=c["r_min_nm"] * 1e-9,
        r_max_m=None if c["r_max_nm"] is None else c["r_max_nm"] * 1e-9,
        b_z=c["b_field_tesla"], site_cap=c["site_cap"])
    n = len(doc["sites"])
    positions = np.zeros((n, 3))
    hyperfine = np.zeros((n, 3, 3))
    omegas = np.zeros(n)
    for rec in doc["sites"]:
        i = rec["index"]
        positions[i] = rec["position_nm"]
        for k, (r, col) in zip(_TENSOR_KEYS, _TENSOR_IDX):
            hyperfine[i, r, col] = rec["hyperfine_rad_s"][k]
            hyperfine[i, col, r] = rec["hyperfine_rad_s"][k]
        omegas[i] = rec["omega_rad_s"]
    gen = doc.get("generation", {})
    return Bath(config, positions, hyperfine, omegas,
                n_sites_scanned=gen.get("n_sites_scanned", 0),
                r_enumerated_m=gen.get("r_enumerated_nm", 0.0) * 1e-9,
                constants=constants)


def save_bath(bath: Bath, path: str | Path) -> None:
    Path(path).write_text(bath_to_json(bath))


def load_bath(path: str | Path,
              constants: PhysConstants = DEFAULT_CONSTANTS) -> Bath:
    return bath_from_json(Path(path).read_text(), constants)
