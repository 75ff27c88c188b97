import itertools
import math

import numpy as np
import pytest

from conftest import make_bath
from nvzeno import bathgen, cce, dynamics, kernel
from nvzeno.errors import BudgetError, ConfigError


def _policy(order, **kw):
    return cce.ClusterPolicy(max_order=order, **kw)


def test_policy_validation():
    with pytest.raises(ConfigError):
        _policy(0).validate(5)
    with pytest.raises(ConfigError):
        _policy(6).validate(5)
    with pytest.raises(ConfigError):
        _policy(2, diameter_cutoff_m=0.0).validate(5)
    with pytest.raises(ConfigError):
        _policy(2, budget=0).validate(5)
    _policy(5).validate(5)


def test_enumeration_counts_and_order():
    arrays = cce.enumerate_clusters(7, _policy(3))
    assert len(arrays) == 3
    for k, arr in enumerate(arrays, start=1):
        assert arr.shape == (math.comb(7, k), k)
        assert arr.dtype == np.int32
        rows = [tuple(r) for r in arr]
        assert rows == sorted(rows)
        assert rows == list(itertools.combinations(range(7), k))


def test_enumeration_budget_checked_up_front():
    with pytest.raises(BudgetError):
        cce.enumerate_clusters(30, _policy(4, budget=1000))


def test_cutoff_enumeration_matches_bruteforce(small_bath):
    pos = small_bath.positions_m
    # cutoff between the extremes so some pairs survive and some don't
    dists = np.linalg.norm(pos[:, None] - pos[None, :], axis=-1)
    cutoff = float(np.median(dists[np.triu_indices(len(pos), 1)]))
    arrays = cce.enumerate_clusters(
        len(pos), _policy(3, diameter_cutoff_m=cutoff), positions_m=pos)
    got = {tuple(r) for arr in arrays for r in arr}
    want = set()
    for k in range(1, 4):
        for combo in itertools.combinations(range(len(pos)), k):
            if all(dists[a, b] <= cutoff
                   for a, b in itertools.combinations(combo, 2)):
                want.add(combo)
    assert got == want
    # closure: every proper subset of an admitted cluster is admitted
    for cluster in got:
        for size in range(1, len(cluster)):
            for sub in itertools.combinations(cluster, size):
                assert sub in got
    with pytest.raises(BudgetError):
        cce.enumerate_clusters(
            len(pos), _policy(3, diameter_cutoff_m=cutoff, budget=3),
            positions_m=pos)


def test_cutoff_needs_positions():
    with pytest.raises(ConfigError):
        cce.enumerate_clusters(4, _policy(2, diameter_cutoff_m=1e-9))


def test_correlation_factor_reference():
    raw = np.array([0.5, 0.5, 0.5])
    subs = [np.array([1.0, 1e-12, 1.0]), np.array([1.0, 1.0, 0.5])]
    factor, guarded = cce.correlation_factor(raw, subs)
    assert guarded == 1
    assert np.allclose(factor, [0.5, 1.0, 1.0])
    # order 1: no subclusters, the factor is the bare curve untouched
    factor, guarded = cce.correlation_factor(raw, [])
    assert guarded == 0
    assert np.array_equal(factor, raw)


def test_first_order_is_product_of_singles(nv_params, small_bath, short_grid):
    res = cce.cce_survival(small_bath, nv_params, short_grid, _policy(2))
    singles = kernel.survival_batch(
        small_bath, nv_params,
        np.arange(len(small_bath), dtype=np.int32)[:, None], short_grid)
    assert np.allclose(res.order_survival[0], np.prod(singles, axis=0),
                       rtol=0.0, atol=1e-12)


def test_survival_starts_at_one(nv_params, small_bath, short_grid):
    res = cce.cce_survival(small_bath, nv_params, short_grid, _policy(3))
    assert np.allclose(res.order_survival[:, 0], 1.0, rtol=0.0, atol=1e-12)


def test_telescoping_matches_exact(nv_params):
    """At M = N the factorization is an identity: the expansion must
    reproduce the unfactorized register curve to rounding error."""
    times = np.linspace(0.0, 2e-4, 60)
    for seed in (3, 7, 11):
        n = 3 + seed % 3
        bath = make_bath(seed, n)
        res = cce.cce_survival(bath, nv_params, times, _policy(n))
        exact = cce.exact_survival_full(bath, nv_params, times)
        assert np.max(np.abs(res.values - exact.values)) < 1e-10
        assert res.denominator_residual <= 1e-12


def test_relabeling_invariance(nv_params, weak_bath, short_grid):
    """Site numbering is bookkeeping; any permutation of the bath arrays
    yields the same curves because the cluster set maps onto itself.
    Permuting reorders each cluster's tensor factors, so the eigensolver
    sees a different matrix for the same physics; its backward error puts
    a floor of roughly eps*|H|*t ~ 1e-10 under the comparison.  Checked
    on the perturbative bath because near a deep null of a cluster curve
    that floor gets amplified through the division."""
    perm = np.array([5, 2, 7, 0, 4, 1, 6, 3])
    shuffled = bathgen.Bath(
        weak_bath.config,
        weak_bath.positions_nm[perm].copy(),
        weak_bath.hyperfine[perm].copy(),
        weak_bath.omegas[perm].copy(),
        weak_bath.n_sites_scanned,
        weak_bath.r_enumerated_m,
        weak_bath.constants)
    a = cce.cce_survival(weak_bath, nv_params, short_grid, _policy(3))
    b = cce.cce_survival(shuffled, nv_params, short_grid, _policy(3))
    assert np.max(np.abs(a.order_survival - b.order_survival)) < 1e-9


def test_bitwise_determinism(nv_params, small_bath, short_grid):
    a = cce.cce_survival(small_bath, nv_params, short_grid, _policy(3))
    b = cce.cce_survival(small_bath, nv_params, short_grid, _policy(3))
    assert np.array_equal(a.order_survival, b.order_survival)


def test_chunking_and_threads_do_not_change_results(
        nv_params, small_bath, short_grid):
    base = cce.cce_survival(small_bath, nv_params, short_grid, _policy(3))
    tiny = cce.cce_survival(small_bath, nv_params, short_grid, _policy(3),
                            chunk_size=1)
    threaded = cce.cce_survival(small_bath, nv_params, short_grid, _policy(3),
                                n_threads=3, chunk_size=2)
    assert np.array_equal(base.order_survival, tiny.order_survival)
    assert np.array_equal(base.order_survival, threaded.order_survival)


def test_guard_fires_on_vanishing_subfactor(nv_params):
    """This bath and grid land a point where an order-5 factor magnitude
    drops to ~5e-10, under the division guard.  The full-order product
    is forced to 1 at that point only; telescoping elsewhere stays exact."""
    bath = make_bath(4, 6)
    times = np.linspace(0.0, 2e-4, 100)
    res = cce.cce_survival(bath, nv_params, times, _policy(6))
    assert res.guard_count >= 1
    assert np.all(np.isfinite(res.values))
    exact = cce.exact_survival_full(bath, nv_params, times)
    diff = np.abs(res.values - exact.values)
    off = np.where(diff > 1e-10)[0]
    assert 1 <= off.size <= res.guard_count
    assert np.delete(diff, off).max() < 1e-12


def test_progress_reporting(nv_params, small_bath, short_grid):
    calls = []
    cce.cce_survival(small_bath, nv_params, short_grid, _policy(2),
                     chunk_size=2,
                     progress=lambda o, d, t: calls.append((o, d, t)))
    total = len(small_bath) + math.comb(len(small_bath), 2)
    assert calls[-1] == (2, total, total)
    assert [d for _, d, _ in calls] == sorted(d for _, d, _ in calls)


def test_cache_round_trip(tmp_path, nv_params, small_bath, short_grid):
    cache = str(tmp_path / "cache")
    first = cce.cce_survival(small_bath, nv_params, short_grid, _policy(3),
                             cache_dir=cache)
    files = sorted(p.name for p in (tmp_path / "cache").iterdir())
    assert len(files) == 3
    second = cce.cce_survival(small_bath, nv_params, short_grid, _policy(3),
                              cache_dir=cache)
    assert np.array_equal(first.order_survival, second.order_survival)
    # a different expansion depth must not be served from the same entries
    other = cce.cce_survival(small_bath, nv_params, short_grid, _policy(2),
                             cache_dir=cache)
    uncached = cce.cce_survival(small_bath, nv_params, short_grid, _policy(2))
    assert np.array_equal(other.order_survival, uncached.order_survival)


def test_input_validation(nv_params, small_bath, short_grid):
    with pytest.raises(ConfigError):
        cce.cce_survival(small_bath, nv_params, [], _policy(2))
    with pytest.raises(ConfigError):
        cce.cce_survival(small_bath, nv_params, [-1e-6, 0.0], _policy(2))
    with pytest.raises(ConfigError):
        cce.cce_survival(small_bath, nv_params, [[0.0, 1e-6]], _policy(2))
    with pytest.raises(ConfigError):
        cce.cce_survival(small_bath, nv_params, short_grid, _policy(2),
                         orientations=np.zeros(3, dtype=np.int32))
    with pytest.raises(ConfigError):
        cce.cce_survival(small_bath, nv_params, short_grid, _policy(2),
                         orientations=np.full(len(small_bath), 2))
    with pytest.raises(ConfigError):
        cce.cce_survival(small_bath, nv_params, short_grid, _policy(2),
                         n_threads=0)
    with pytest.raises(ConfigError):
        cce.cce_survival(small_bath, nv_params, short_grid, _policy(2),
                         chunk_size=0)
    with pytest.raises(ConfigError):
        cce.exact_survival_full(make_bath(1, 2), nv_params, [[1e-6]])


def test_exact_full_refuses_large_registers(nv_params):
    bath = make_bath(2, cce.EXACT_MAX_SPINS + 1, r_min_m=1.5e-9)
    with pytest.raises(ConfigError):
        cce.exact_survival_full(bath, nv_params, np.linspace(0, 1e-5, 4))


def test_result_curve_accessor(nv_params, small_bath, short_grid):
    res = cce.cce_survival(small_bath, nv_params, short_grid, _policy(3))
    assert res.max_order == 3
    one = res.curve(1)
    assert np.array_equal(one.values, res.order_survival[0])
    assert one.method == "cce-1"
    top = res.curve()
    assert np.array_equal(top.values, res.values)
    with pytest.raises(ConfigError):
        res.curve(0)
    with pytest.raises(ConfigError):
        res.curve(4)


def test_csv_round_trip(tmp_path, nv_params, small_bath, short_grid):
    res = cce.cce_survival(small_bath, nv_params, short_grid, _policy(2))
    curve = res.curve()
    path = tmp_path / "curve.csv"
    cce.write_survival_csv(path, curve, header={"note": "round trip"})
    back = cce.read_survival_csv(path)
    assert np.array_equal(back.times, curve.times)
    assert np.array_equal(back.values, curve.values)
    assert back.method == "cce-2"
    assert back.metadata["note"] == "round trip"
    assert back.metadata["n_spins"] == str(len(small_bath))
