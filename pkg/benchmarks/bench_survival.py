"""Compare the compiled batch kernel against the pure-Python fallback.

Times the same cluster batches through both implementations and checks
they agree, so the speedup number is for identical work.  Run from the
repository root:

    python benchmarks/bench_survival.py [--spins 40] [--points 200]
"""

import argparse
import os
import time

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
             "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np

from nvzeno import _survival_py, bathgen, dynamics, kernel

try:
    from nvzeno import _survival as _compiled
except ImportError:
    _compiled = None


def run_case(bath, nv, clusters, times, impl, repeats):
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = kernel.survival_batch(bath, nv, clusters, times, impl=impl)
        best = min(best, time.perf_counter() - t0)
    return best, out


def all_clusters(n, k, rng, cap):
    import itertools

    combos = list(itertools.combinations(range(n), k))
    if len(combos) > cap:
        combos = [combos[i] for i in rng.choice(len(combos), cap,
                                                replace=False)]
    return np.array(combos, dtype=np.int32)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--spins", type=int, default=40)
    parser.add_argument("--points", type=int, default=200)
    parser.add_argument("--seed", type=int, default=12)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--cap", type=int, default=400,
                        help="max clusters per order")
    args = parser.parse_args()

    if _compiled is None:
        print("compiled extension not available; nothing to compare")
        return

    cfg = bathgen.BathConfig(seed=args.seed, n_spins=args.spins,
                             b_z=1024.98e-4)
    bath = bathgen.sample_bath(cfg)
    nv = dynamics.NvParams.from_constants(b_z=cfg.b_z)
    times = np.linspace(0.0, 2.0e-4, args.points)
    rng = np.random.default_rng(args.seed)

    print(f"bath: {args.spins} spins, {args.points} time points, "
          f"best of {args.repeats}")
    print(f"{'order':>5} {'clusters':>8} {'dim':>4} "
          f"{'python':>10} {'compiled':>10} {'speedup':>8} {'max diff':>10}")
    for order in (1, 2, 3, 4):
        clusters = all_clusters(args.spins, order, rng, args.cap)
        t_py, out_py = run_case(bath, nv, clusters, times, _survival_py,
                                args.repeats)
        t_c, out_c = run_case(bath, nv, clusters, times, _compiled,
                              args.repeats)
        diff = float(np.max(np.abs(out_py - out_c)))
        dim = 3 * 2 ** order
        print(f"{order:>5} {clusters.shape[0]:>8} {dim:>4} "
              f"{t_py:>9.3f}s {t_c:>9.3f}s {t_py / t_c:>7.1f}x "
              f"{diff:>10.2e}")


if __name__ == "__main__":
    main()
