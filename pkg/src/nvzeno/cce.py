"""Cluster-correlation expansion of the central-spin survival probability.

The survival probability of the defect's m_s = 0 level in a bath of N
nuclei is factorized over clusters: the order-M approximation multiplies
the correlation factors of every cluster with at most M spins, where the
correlation factor of a cluster divides its bare survival curve by the
factors of all proper subclusters.  At M = N the product telescopes back
to the exact N-spin curve, which is the main internal consistency check.

Near the level anticrossing single-spin curves can pass close to zero
(deep resonant flip-flops), which makes higher-order factors swing over
hundreds of decades even though the telescoped product stays in [0, 1].
Everything is therefore accumulated as log magnitudes: each factor
contributes log|P~_c| to a per-time accumulator, and stored factors keep
their log form so subcluster products can never overflow.  Signs are
tracked separately; bare curves are norms squared and hence nonnegative,
so a negative factor is flagged as a diagnostic rather than expected.

A guarded division protects the product where the expansion leaves its
validity regime: if any proper subcluster factor magnitude drops below
``DIVISION_GUARD`` at a time point, the cluster's factor at that point
is set to 1 and a counter increments.

Normalization note: because the m_s = 0 level is an exact eigenstate of
the bare defect Hamiltonian, the spin-free reference factor is unity and
never needs to divide anything.  That property is cheap to measure, so
`cce_survival` verifies it on every run instead of assuming it.

All bare cluster curves go through :func:`nvzeno.kernel.survival_batch`,
including the full-register curve from :func:`exact_survival_full`; with
a fixed backend the telescoping comparison is then exact to rounding.
"""

from __future__ import annotations

import hashlib
import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernel
from .bathgen import Bath, bath_to_json
from .dynamics import NvParams, SurvivalCurve, denominator_unity_residual
from .errors import BudgetError, ConfigError, NumericalError

# Sub-factors with a magnitude below this trigger the division guard.
DIVISION_GUARD = 1e-9
_LOG_GUARD = math.log(DIVISION_GUARD)

# Largest tolerated deviation of the spin-free reference factor from 1.
DENOMINATOR_TOL = 1e-12

# Full diagonalization above this register size would need > 4 GB of
# eigenvector storage; refuse instead of swapping.
EXACT_MAX_SPINS = 12

DEFAULT_CLUSTER_BUDGET = 2_000_000


@dataclass(frozen=True)
class ClusterPolicy:
    """How far the expansion runs and which clusters it may visit.

    max_order          largest cluster size M entering the product
    diameter_cutoff_m  if set, keep only clusters whose spins are pairwise
                       closer than this distance (every subset of such a
                       cluster qualifies too, so the recursion stays closed)
    budget             hard cap on the total number of enumerated clusters
    """

    max_order: int
    diameter_cutoff_m: float | None = None
    budget: int = DEFAULT_CLUSTER_BUDGET

    def validate(self, n_spins: int) -> None:
        if self.max_order < 1:
            raise ConfigError(f"max_order must be >= 1, got {self.max_order}")
        if self.max_order > n_spins:
            raise ConfigError(
                f"max_order {self.max_order} exceeds bath size {n_spins}"
            )
        if self.diameter_cutoff_m is not None and self.diameter_cutoff_m <= 0:
            raise ConfigError("diameter_cutoff_m must be positive when set")
        if self.budget < 1:
            raise ConfigError("cluster budget must be positive")


def enumerate_clusters(
    n_spins: int,
    policy: ClusterPolicy,
    positions_m: np.ndarray | None = None,
) -> list[np.ndarray]:
    """List clusters per order, ascending in size, rows lexicographic.

    Returns one int32 array of shape (count_k, k) for each k = 1..M.
    Without a diameter cutoff every subset of the bath qualifies and the
    total count is known in closed form, so the budget is checked before
    anything is built.  With a cutoff the clusters are grown depth-first
    as cliques of the proximity graph and counted as they appear.
    """
    policy.validate(n_spins)
    m = policy.max_order
    if policy.diameter_cutoff_m is None:
        total = sum(math.comb(n_spins, k) for k in range(1, m + 1))
        if total > policy.budget:
            raise BudgetError(
                f"all-subsets enumeration needs {total} clusters for "
                f"n_spins={n_spins}, max_order={m}, over the budget of "
                f"{policy.budget}; raise the budget or set a diameter cutoff"
            )
        return [
            np.fromiter(
                itertools.chain.from_iterable(
                    itertools.combinations(range(n_spins), k)
                ),
                dtype=np.int32,
            ).reshape(-1, k)
            for k in range(1, m + 1)
        ]

    if positions_m is None:
        raise ConfigError("a diameter cutoff needs the spin positions")
    positions_m = np.asarray(positions_m, dtype=float)
    if positions_m.shape != (n_spins, 3):
        raise ConfigError(
            f"positions_m must have shape ({n_spins}, 3), got {positions_m.shape}"
        )
    delta = positions_m[:, None, :] - positions_m[None, :, :]
    adjacency = np.einsum("ijk,ijk->ij", delta, delta) <= policy.diameter_cutoff_m**2
    np.fill_diagonal(adjacency, False)

    out: list[list[tuple[int, ...]]] = [[] for _ in range(m)]
    count = 0

    def grow(members: tuple[int, ...], candidates: np.ndarray) -> None:
        nonlocal count
        for pos, v in enumerate(candidates):
            cluster = members + (int(v),)
            count += 1
            if count > policy.budget:
                raise BudgetError(
                    f"cluster enumeration exceeded the budget of "
                    f"{policy.budget}; tighten the diameter cutoff"
                )
            out[len(cluster) - 1].append(cluster)
            if len(cluster) < m:
                rest = candidates[pos + 1 :]
                grow(cluster, rest[adjacency[v, rest]])

    indices = np.arange(n_spins)
    for i in range(n_spins):
        grow((), np.array([i]))
        if m > 1:
            later = indices[i + 1 :]
            grow((i,), later[adjacency[i, later]])

    return [
        np.array(out[k - 1], dtype=np.int32).reshape(-1, k)
        for k in range(1, m + 1)
    ]


def correlation_factor(
    raw, subfactors, eps: float = DIVISION_GUARD
) -> tuple[np.ndarray, int]:
    """Reference (linear-space) correlation factor of one cluster.

    ``raw`` is the cluster's bare survival curve, ``subfactors`` the
    factors of all proper subclusters on the same grid.  Where any
    subfactor magnitude is below ``eps``, the result is 1 and the
    guard counter (second return value) grows by the number of such
    time points.  The expansion pipeline computes the same quantity in
    log space; this form exists for small cases and cross-checks.
    """
    raw = np.asarray(raw, dtype=float)
    guarded = np.zeros(raw.shape, dtype=bool)
    denominator = np.ones_like(raw)
    for sub in subfactors:
        sub = np.asarray(sub, dtype=float)
        guarded |= np.abs(sub) < eps
        denominator = denominator * sub
    factor = np.where(guarded, 1.0, raw / np.where(guarded, 1.0, denominator))
    return factor, int(np.count_nonzero(guarded))


class CorrelationTable:
    """Log-magnitude correlation factors keyed by cluster.

    Factors are held as log|P~_c| arrays (-inf marks an exact zero);
    signs are not stored because bare curves are nonnegative and guarded
    factors are 1.  ``factor`` exponentiates for inspection; the values
    can overflow to inf for strongly diverging clusters, which is why
    the pipeline itself never leaves log space.
    """

    def __init__(self) -> None:
        self._orders: dict[int, dict[tuple[int, ...], np.ndarray]] = {}

    def store_log(self, cluster: tuple[int, ...], log_factor: np.ndarray) -> None:
        self._orders.setdefault(len(cluster), {})[cluster] = log_factor

    def log_factor(self, cluster: tuple[int, ...]) -> np.ndarray:
        return self._orders[len(cluster)][cluster]

    def factor(self, cluster: tuple[int, ...]) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self._orders[len(cluster)][cluster])

    def subcluster_fold(
        self, cluster: tuple[int, ...], n_times: int
    ) -> tuple[np.ndarray, np.ndarray]:
        """Summed subcluster logs and the guard mask for one cluster.

        Returns ``(denominator_log, guarded)`` where ``guarded`` marks
        time points at which some proper subcluster factor magnitude is
        below the division guard.
        """
        denominator_log = np.zeros(n_times)
        guarded = np.zeros(n_times, dtype=bool)
        for size in range(1, len(cluster)):
            stored = self._orders[size]
            for sub in itertools.combinations(cluster, size):
                sub_log = stored[sub]
                guarded |= sub_log < _LOG_GUARD
                denominator_log = denominator_log + sub_log
        return denominator_log, guarded

    @property
    def orders(self) -> tuple[int, ...]:
        return tuple(sorted(self._orders))

    def count(self, order: int) -> int:
        return len(self._orders.get(order, {}))


@dataclass
class CceResult:
    """Survival curves through each expansion order plus run diagnostics.

    order_survival[k-1] is the cumulative product over all clusters with
    at most k spins, i.e. the order-k approximation on the shared grid.
    Intermediate orders may overflow to inf where the expansion diverges
    (the guard counter and max_log_factor expose that); the top order is
    the quantity of interest.
    """

    times: np.ndarray
    order_survival: np.ndarray
    cluster_counts: dict[int, int]
    guard_count: int
    negative_factor_points: int
    max_log_factor: float
    min_log_factor: float
    denominator_residual: float
    backend: str
    metadata: dict = field(default_factory=dict)

    @property
    def max_order(self) -> int:
        return self.order_survival.shape[0]

    @property
    def values(self) -> np.ndarray:
        return self.order_survival[-1]

    def curve(self, order: int | None = None) -> SurvivalCurve:
        if order is None:
            order = self.max_order
        if not 1 <= order <= self.max_order:
            raise ConfigError(
                f"order must be in 1..{self.max_order}, got {order}"
            )
        meta = {
            "order": order,
            "cluster_counts": dict(self.cluster_counts),
            "guard_count": self.guard_count,
            "negative_factor_points": self.negative_factor_points,
            "max_log_factor": self.max_log_factor,
            "min_log_factor": self.min_log_factor,
            "denominator_residual": self.denominator_residual,
            "backend": self.backend,
        }
        meta.update(self.metadata)
        return SurvivalCurve(
            times=self.times.copy(),
            values=self.order_survival[order - 1].copy(),
            method=f"cce-{order}",
            metadata=meta,
        )


def _checked_times(times) -> np.ndarray:
    times = np.ascontiguousarray(times, dtype=np.float64)
    if times.ndim != 1 or times.size == 0:
        raise ConfigError("times must be a non-empty 1-D array")
    if not np.all(np.isfinite(times)):
        raise ConfigError("times must be finite")
    if np.any(times < 0):
        raise ConfigError("times must be non-negative")
    return times


def _checked_orientations(orientations, n_spins: int) -> np.ndarray:
    if orientations is None:
        return np.zeros(n_spins, dtype=np.int32)
    orientations = np.ascontiguousarray(orientations, dtype=np.int32)
    if orientations.shape != (n_spins,):
        raise ConfigError(
            f"orientations must have shape ({n_spins},), got {orientations.shape}"
        )
    if np.any((orientations != 0) & (orientations != 1)):
        raise ConfigError("orientations must consist of 0/1 entries")
    return orientations


def _cache_key(
    bath: Bath,
    order: int,
    times: np.ndarray,
    orientations: np.ndarray,
    include_nuclear_dipole: bool,
    policy: ClusterPolicy,
    backend: str,
) -> str:
    digest = hashlib.sha256()
    digest.update(bath_to_json(bath).encode())
    digest.update(times.tobytes())
    digest.update(orientations.tobytes())
    digest.update(
        f"|order={order}|dipole={int(include_nuclear_dipole)}"
        f"|cutoff={policy.diameter_cutoff_m!r}|backend={backend}".encode()
    )
    return digest.hexdigest()


def _raw_order(
    bath: Bath,
    nv: NvParams,
    clusters: np.ndarray,
    times: np.ndarray,
    orientations: np.ndarray,
    include_nuclear_dipole: bool,
    n_threads: int,
    chunk_size: int,
    impl,
    report,
) -> np.ndarray:
    """Bare survival curves for one order, chunked and order-preserving."""
    if clusters.shape[0] == 0:
        return np.empty((0, times.size))
    chunks = [
        clusters[i : i + chunk_size]
        for i in range(0, clusters.shape[0], chunk_size)
    ]

    def run(chunk: np.ndarray) -> np.ndarray:
        return kernel.survival_batch(
            bath,
            nv,
            chunk,
            times,
            orientations=orientations,
            include_nuclear_dipole=include_nuclear_dipole,
            impl=impl,
        )

    parts: list[np.ndarray] = []
    if n_threads <= 1 or len(chunks) == 1:
        for chunk in chunks:
            parts.append(run(chunk))
            report(chunk.shape[0])
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            for part in pool.map(run, chunks):
                parts.append(part)
                report(part.shape[0])
    return np.concatenate(parts, axis=0)


def cce_survival(
    bath: Bath,
    nv: NvParams,
    times,
    policy: ClusterPolicy,
    *,
    orientations=None,
    include_nuclear_dipole: bool = False,
    n_threads: int = 1,
    chunk_size: int = 512,
    cache_dir: str | None = None,
    progress=None,
    impl=None,
) -> CceResult:
    """Run the expansion through ``policy.max_order`` on a shared time grid.

    The fold order is fixed (orders ascending, clusters lexicographic
    within an order) and chunking only affects batching of the
    eigensolver calls, so results are independent of ``n_threads`` and
    ``chunk_size``.  Stored factors cover orders 1..M-1; order-M factors
    stream straight into the accumulator.

    ``progress``, when given, is called as ``progress(order, done, total)``
    after every chunk, with ``done``/``total`` counting clusters across
    the whole run.
    """
    times = _checked_times(times)
    orientations = _checked_orientations(orientations, len(bath))
    if n_threads < 1:
        raise ConfigError("n_threads must be >= 1")
    if chunk_size < 1:
        raise ConfigError("chunk_size must be >= 1")

    residual = denominator_unity_residual(nv, times)
    if not residual <= DENOMINATOR_TOL:
        raise NumericalError(
            "spin-free reference factor deviates from unity by "
            f"{residual:.3e} (tolerance {DENOMINATOR_TOL:.0e})"
        )

    cluster_arrays = enumerate_clusters(
        len(bath),
        policy,
        positions_m=bath.positions_m if policy.diameter_cutoff_m is not None else None,
    )
    total_clusters = sum(arr.shape[0] for arr in cluster_arrays)
    done = 0

    backend = kernel.get_backend() if impl is None else impl.BACKEND_NAME
    n_t = times.size
    accum_log = np.zeros(n_t)
    negative_parity = np.zeros(n_t, dtype=np.int64)
    guard_count = 0
    negative_points = 0
    max_log_factor = 0.0
    min_log_factor = 0.0
    table = CorrelationTable()
    order_survival = np.empty((policy.max_order, n_t))
    cluster_counts: dict[int, int] = {}

    for order, clusters in enumerate(cluster_arrays, start=1):
        cluster_counts[order] = int(clusters.shape[0])

        def report(n_done: int, _order: int = order) -> None:
            nonlocal done
            done += n_done
            if progress is not None:
                progress(_order, done, total_clusters)

        raw = None
        cache_path = None
        if cache_dir is not None:
            key = _cache_key(
                bath, order, times, orientations,
                include_nuclear_dipole, policy, backend,
            )
            cache_path = os.path.join(cache_dir, f"order{order}_{key}.npz")
            if os.path.exists(cache_path):
                with np.load(cache_path, allow_pickle=False) as hit:
                    if hit["clusters"].shape == clusters.shape and np.array_equal(
                        hit["clusters"], clusters
                    ):
                        raw = hit["raw"]
                        report(clusters.shape[0])
        if raw is None:
            raw = _raw_order(
                bath, nv, clusters, times, orientations,
                include_nuclear_dipole, n_threads, chunk_size, impl, report,
            )
            if cache_path is not None:
                os.makedirs(cache_dir, exist_ok=True)
                np.savez(cache_path, clusters=clusters, raw=raw)

        store = order < policy.max_order
        for row, cluster_row in zip(raw, clusters):
            cluster = tuple(int(i) for i in cluster_row)
            denominator_log, guarded = table.subcluster_fold(cluster, n_t)
            negative = row < 0.0
            if negative.any():
                negative_points += int(np.count_nonzero(negative & ~guarded))
                negative_parity += negative & ~guarded
            with np.errstate(divide="ignore"):
                raw_log = np.log(np.abs(row))
            factor_log = np.where(guarded, 0.0, raw_log - denominator_log)
            if np.isnan(factor_log).any():
                raise NumericalError(
                    f"non-finite correlation factor for cluster {cluster}"
                )
            guard_count += int(np.count_nonzero(guarded))
            finite = factor_log[np.isfinite(factor_log)]
            if finite.size:
                max_log_factor = max(max_log_factor, float(np.abs(finite).max()))
                min_log_factor = min(min_log_factor, float(finite.min()))
            accum_log += factor_log
            if store:
                table.store_log(cluster, factor_log)

        sign = np.where(negative_parity % 2 == 1, -1.0, 1.0)
        with np.errstate(over="ignore"):
            order_survival[order - 1] = sign * np.exp(accum_log)

    return CceResult(
        times=times,
        order_survival=order_survival,
        cluster_counts=cluster_counts,
        guard_count=guard_count,
        negative_factor_points=negative_points,
        max_log_factor=max_log_factor,
        min_log_factor=min_log_factor,
        denominator_residual=residual,
        backend=backend,
        metadata={
            "n_spins": len(bath),
            "include_nuclear_dipole": include_nuclear_dipole,
            "diameter_cutoff_m": policy.diameter_cutoff_m,
        },
    )


def exact_survival_full(
    bath: Bath,
    nv: NvParams,
    times,
    *,
    orientations=None,
    include_nuclear_dipole: bool = False,
    impl=None,
) -> SurvivalCurve:
    """Exact survival of the full register, no cluster factorization.

    Routed through the same batch kernel as the expansion so that the
    order-N telescoping identity can be checked at rounding precision.
    Refuses baths larger than ``EXACT_MAX_SPINS``.
    """
    times = _checked_times(times)
    n = len(bath)
    if n > EXACT_MAX_SPINS:
        raise ConfigError(
            f"exact diagonalization supports at most {EXACT_MAX_SPINS} "
            f"spins, got {n}"
        )
    orientations = _checked_orientations(orientations, n)
    cluster = np.arange(n, dtype=np.int32)[None, :]
    values = kernel.survival_batch(
        bath,
        nv,
        cluster,
        times,
        orientations=orientations,
        include_nuclear_dipole=include_nuclear_dipole,
        impl=impl,
    )[0]
    backend = kernel.get_backend() if impl is None else impl.BACKEND_NAME
    return SurvivalCurve(
        times=times,
        values=values,
        method="exact",
        metadata={"n_spins": n, "backend": backend},
    )


def write_survival_csv(path, curve: SurvivalCurve, header: dict | None = None) -> None:
    """Write a survival curve with commented key/value headers.

    Values use repr-precision floats so a read back is bit exact.
    Callers put volatile data (timestamps) elsewhere; everything written
    here should be reproducible from the inputs.
    """
    lines = [f"# method: {curve.method}"]
    merged: dict = {}
    for key, value in curve.metadata.items():
        merged[key] = value
    if header:
        merged.update(header)
    for key, value in merged.items():
        text = str(value).replace("\n", " ")
        lines.append(f"# {key}: {text}")
    lines.append("t_seconds,survival")
    for t, p in zip(curve.times, curve.values):
        lines.append(f"{t:.17g},{p:.17g}")
    with open(path, "w") as handle:
        handle.write("\n".join(lines) + "\n")


def read_survival_csv(path) -> SurvivalCurve:
    """Read back a curve written by :func:`write_survival_csv`."""
    header: dict[str, str] = {}
    times: list[float] = []
    values: list[float] = []
    with open(path) as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if ":" in body:
                    key, _, value = body.partition(":")
                    header[key.strip()] = value.strip()
                continue
            if line.startswith("t_seconds"):
                continue
            t_text, _, p_text = line.partition(",")
            times.append(float(t_text))
            values.append(float(p_text))
    method = header.pop("method", "unknown")
    return SurvivalCurve(
        times=np.array(times),
        values=np.array(values),
        method=method,
        metadata=header,
    )
