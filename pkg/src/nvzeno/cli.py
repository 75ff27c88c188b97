"""Config-driven batch driver: bath generation, cluster-expansion sweep,
repeated-measurement analysis, plot-ready CSV output.

The config is a single JSON document whose physical keys carry explicit
unit suffixes (``b_field_gauss``, ``t_max_us``); everything is converted
to SI on load.  Every data file embeds the sha256 of the canonical
config, and rerunning a config reproduces the data files byte for byte.
Timestamps and wall-clock numbers live only in meta.json.

BLAS thread-pool environment variables are pinned before numpy is first
imported, which is why the heavyweight imports hide inside functions
(the package __init__ is lazy for the same reason).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from .errors import BudgetError, ConfigError, NumericalError, NvzenoError

_BLAS_ENV = (
    "OPENBLAS_NUM_THREADS",
    "OMP_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)

_REQUIRED_KEYS = {
    "seed", "n_spins", "cce_order", "t_max_us", "n_points", "tau_grid_us",
}
_OPTIONAL_KEYS = {
    "b_field_gauss", "abundance", "r_min_nm", "r_max_nm", "site_cap",
    "comparisons", "threads", "include_nuclear_dipole",
    "diameter_cutoff_nm", "cluster_budget", "cache", "progress_every",
}

GAUSS_TO_TESLA = 1e-4
DEFAULT_B_GAUSS = 1024.98
BROADENING_TAU_US = 12.0


def _pin_blas_threads() -> None:
    # must run before numpy's first import anywhere in the process
    for var in _BLAS_ENV:
        os.environ.setdefault(var, "1")


class ExperimentConfig:
    """Validated, SI-converted experiment description."""

    def __init__(self, doc: dict):
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a JSON object")
        unknown = set(doc) - _REQUIRED_KEYS - _OPTIONAL_KEYS
        if unknown:
            raise ConfigError(
                f"unknown config keys {sorted(unknown)}; "
                "unit-suffixed keys are spelled exactly (e.g. t_max_us)"
            )
        missing = _REQUIRED_KEYS - set(doc)
        if missing:
            raise ConfigError(f"missing config keys {sorted(missing)}")

        self.seed = _as_int(doc, "seed", minimum=0)
        self.n_spins = _as_int(doc, "n_spins", minimum=1)
        self.cce_order = _as_int(doc, "cce_order", minimum=1)
        self.n_points = _as_int(doc, "n_points", minimum=2)
        self.t_max_s = _as_float(doc, "t_max_us", positive=True) * 1e-6
        self.b_z = float(doc.get("b_field_gauss", DEFAULT_B_GAUSS)) * GAUSS_TO_TESLA
        if self.b_z <= 0.0:
            raise ConfigError("b_field_gauss must be positive")
        self.abundance = float(doc.get("abundance", 0.011))
        self.r_min_m = float(doc.get("r_min_nm", 0.5)) * 1e-9
        r_max_nm = doc.get("r_max_nm")
        self.r_max_m = None if r_max_nm is None else float(r_max_nm) * 1e-9
        self.site_cap = int(doc.get("site_cap", 2_000_000))
        self.threads = _as_int(doc, "threads", minimum=1) if "threads" in doc else 1
        self.include_nuclear_dipole = bool(doc.get("include_nuclear_dipole", False))
        cutoff_nm = doc.get("diameter_cutoff_nm")
        self.diameter_cutoff_m = None if cutoff_nm is None else float(cutoff_nm) * 1e-9
        self.cluster_budget = int(doc.get("cluster_budget", 2_000_000))
        self.cache = bool(doc.get("cache", False))
        self.progress_every = int(doc.get("progress_every", 0))

        taus = doc.get("tau_grid_us")
        if not isinstance(taus, list) or not taus:
            raise ConfigError("tau_grid_us must be a nonempty list")
        self.tau_grid_s = []
        for t in taus:
            tv = float(t) * 1e-6
            if tv <= 0.0:
                raise ConfigError(f"tau values must be positive, got {t} us")
            if tv > self.t_max_s * (1.0 + 1e-12):
                raise ConfigError(f"tau {t} us exceeds t_max")
            self.tau_grid_s.append(tv)

        comparisons = doc.get("comparisons", [])
        if not isinstance(comparisons, list):
            raise ConfigError("comparisons must be a list of [N, M] pairs")
        self.comparisons: list[tuple[int, int]] = []
        for entry in comparisons:
            if (not isinstance(entry, (list, tuple)) or len(entry) != 2):
                raise ConfigError(f"bad comparison entry {entry!r}; want [N, M]")
            n, m = int(entry[0]), int(entry[1])
            if n < 1 or m < 1:
                raise ConfigError(f"comparison sizes must be >= 1, got {entry}")
            if m > n:
                raise ConfigError(f"comparison order {m} exceeds bath size {n}")
            self.comparisons.append((n, m))

        if self.cce_order > self.n_spins:
            raise ConfigError(
                f"cce_order {self.cce_order} exceeds n_spins {self.n_spins}"
            )

        canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        self.sha256 = hashlib.sha256(canonical.encode()).hexdigest()
        self.raw = doc


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return ExperimentConfig(doc)


def _as_int(doc: dict, key: str, minimum: int) -> int:
    try:
        val = int(doc[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {key} must be an integer") from exc
    if val < minimum:
        raise ConfigError(f"config key {key} must be >= {minimum}, got {val}")
    return val


def _as_float(doc: dict, key: str, positive: bool = False) -> float:
    try:
        val = float(doc[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {key} must be a number") from exc
    if positive and val <= 0.0:
        raise ConfigError(f"config key {key} must be positive, got {val}")
    return val


def _time_grid(config: ExperimentConfig):
    import numpy as np

    base = np.linspace(0.0, config.t_max_s, config.n_points)
    return np.union1d(base, np.asarray(config.tau_grid_s))


def _bath_family(config: ExperimentConfig):
    from . import bathgen

    n_max = max([config.n_spins] + [n for n, _ in config.comparisons])
    bath_cfg = bathgen.BathConfig(
        seed=config.seed,
        n_spins=n_max,
        abundance=config.abundance,
        r_min_m=config.r_min_m,
        r_max_m=config.r_max_m,
        b_z=config.b_z,
        site_cap=config.site_cap,
    )
    return bathgen.sample_bath(bath_cfg)


def _progress_printer(config: ExperimentConfig, label: str):
    if config.progress_every <= 0:
        return None
    state = {"done": 0, "next": config.progress_every}

    def report(n: int) -> None:
        state["done"] += n
        if state["done"] >= state["next"]:
            print(f"[{label}] {state['done']} clusters", file=sys.stderr)
            state["next"] += config.progress_every

    return report


def _csv_header(config: ExperimentConfig) -> dict:
    return {"config_sha256": config.sha256}


def _run_curve(config: ExperimentConfig, bath, order: int, times, label: str,
               cache_dir=None):
    from . import cce, dynamics

    nv = dynamics.NvParams.from_constants(b_z=config.b_z)
    policy = cce.ClusterPolicy(
        max_order=order,
        diameter_cutoff_m=config.diameter_cutoff_m,
        budget=config.cluster_budget,
    )
    return cce.cce_survival(
        bath, nv, times, policy,
        include_nuclear_dipole=config.include_nuclear_dipole,
        n_threads=config.threads,
        cache_dir=cache_dir,
        progress=_progress_printer(config, label),
    )


def run_convergence_study(config: ExperimentConfig, out_dir: Path,
                          bath=None, cache_dir=None) -> dict:
    """One survival CSV per (N, M) variant off a shared seed-derived bath
    family, plus a summary CSV of successive pairwise differences."""
    import numpy as np

    from . import cce

    out_dir = Path(out_dir)
    if bath is None:
        bath = _bath_family(config)
    times = _time_grid(config)

    variants: list[tuple[int, int]] = []
    for pair in config.comparisons:
        if pair in variants:
            print(f"warning: duplicate comparison variant {pair} dropped",
                  file=sys.stderr)
            continue
        variants.append(pair)

    written = []
    curves = {}
    diagnostics = {}
    for n, m in variants:
        label = f"N{n}_M{m}"
        result = _run_curve(config, bath.subset(n), m, times, label,
                            cache_dir=cache_dir)
        curve = result.curve()
        curves[(n, m)] = curve
        name = f"survival_{label}.csv"
        cce.write_survival_csv(out_dir / name, curve, header=_csv_header(config))
        written.append(name)
        diagnostics[label] = {
            "divide_guard_events": result.guard_count,
            "negative_factor_points": result.negative_factor_points,
        }

    lines = [f"# config_sha256: {config.sha256}",
             "variant_a,variant_b,max_abs_diff"]
    for (na, ma), (nb, mb) in zip(variants, variants[1:]):
        diff = float(np.max(np.abs(curves[(na, ma)].values
                                   - curves[(nb, mb)].values)))
        lines.append(f"N{na}_M{ma},N{nb}_M{mb},{diff:.17g}")
    summary = out_dir / "convergence_summary.csv"
    summary.write_text("\n".join(lines) + "\n", encoding="ascii")
    written.append(summary.name)
    return {"files": written, "diagnostics": diagnostics}


def run_zeno_study(config: ExperimentConfig, out_dir: Path,
                   bath=None, cache_dir=None) -> dict:
    """Undisturbed curve, one repeated-measurement curve per tau, and the
    rate/spectrum report."""
    import numpy as np

    from . import bathgen, cce, dynamics, zeno

    out_dir = Path(out_dir)
    if bath is None:
        bath = _bath_family(config)
    bath_main = bath.subset(config.n_spins)
    times = _time_grid(config)

    result = _run_curve(config, bath_main, config.cce_order, times,
                        f"N{config.n_spins}_M{config.cce_order}",
                        cache_dir=cache_dir)
    curve = result.curve()
    written = []
    cce.write_survival_csv(out_dir / "survival.csv", curve,
                           header=_csv_header(config))
    written.append("survival.csv")

    taus = np.asarray(config.tau_grid_s)
    for idx, tau in enumerate(taus):
        p_tau = zeno.survival_at(curve, float(tau))
        n_meas = int(np.floor(config.t_max_s / tau + 1e-9))
        ts = tau * np.arange(n_meas + 1)
        vals = np.array([
            zeno.repeated_measurement_survival(p_tau, k)
            for k in range(n_meas + 1)
        ])
        measured = dynamics.SurvivalCurve(
            times=ts, values=vals, method=f"measured(tau={float(tau)!r})",
            metadata={"tau_s": float(tau), "p_tau": p_tau,
                      "n_measurements": n_meas},
        )
        name = f"measured_tau_{idx:02d}.csv"
        cce.write_survival_csv(out_dir / name, measured,
                               header=_csv_header(config))
        written.append(name)

    nv = dynamics.NvParams.from_constants(b_z=config.b_z)
    spectrum = bathgen.spectral_weights(bath_main)
    report = zeno.zeno_report(curve, taus, spectrum, nv.omega_a)
    tau_star = float(taus[np.argmin(np.abs(taus - BROADENING_TAU_US * 1e-6))])
    zeno.write_zeno_csv(out_dir / "zeno_report.csv", report, tau_star,
                        header=_csv_header(config))
    written.append("zeno_report.csv")

    return {
        "files": written,
        "diagnostics": {
            "divide_guard_events": result.guard_count,
            "negative_factor_points": result.negative_factor_points,
            "rate_clamp_events": report.diagnostics["rate_clamp_events"],
            "backend": result.backend,
        },
    }


def _write_bath_json(config: ExperimentConfig, bath, out_dir: Path) -> str:
    from . import bathgen

    doc = json.loads(bathgen.bath_to_json(bath))
    doc["config_sha256"] = config.sha256
    (out_dir / "bath.json").write_text(
        json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="ascii")
    return "bath.json"


def _cmd_simulate(args) -> int:
    config = load_config(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache_dir = None
    if config.cache:
        cache_dir = out_dir / "cache"
        cache_dir.mkdir(exist_ok=True)

    started = time.time()
    meta = {
        "config_sha256": config.sha256,
        "config": config.raw,
        "started_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
        "stages": {},
        "diagnostics": {},
        "files": [],
    }

    t0 = time.time()
    bath = _bath_family(config)
    meta["stages"]["bath_s"] = time.time() - t0
    meta["files"].append(_write_bath_json(config, bath, out_dir))

    t0 = time.time()
    zeno_out = run_zeno_study(config, out_dir, bath=bath, cache_dir=cache_dir)
    meta["stages"]["zeno_s"] = time.time() - t0
    meta["files"].extend(zeno_out["files"])
    meta["diagnostics"].update(zeno_out["diagnostics"])

    if config.comparisons:
        t0 = time.time()
        conv_out = run_convergence_study(config, out_dir, bath=bath,
                                         cache_dir=cache_dir)
        meta["stages"]["convergence_s"] = time.time() - t0
        meta["files"].extend(conv_out["files"])
        meta["diagnostics"]["convergence"] = conv_out["diagnostics"]

    meta["wall_s"] = time.time() - started
    meta["versions"] = _versions()
    (out_dir / "meta.json").write_text(
        json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="ascii")
    return 0


def _cmd_validate(args) -> int:
    config = load_config(args.config)
    print(f"config ok, sha256 {config.sha256}")
    return 0


def _cmd_oracle(args) -> int:
    config = load_config(args.config)
    from . import cce, dynamics

    if config.n_spins > cce.EXACT_MAX_SPINS:
        raise ConfigError(
            f"oracle mode caps the bath at {cce.EXACT_MAX_SPINS} spins, "
            f"got {config.n_spins}"
        )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    bath = _bath_family(config).subset(config.n_spins)
    nv = dynamics.NvParams.from_constants(b_z=config.b_z)
    curve = cce.exact_survival_full(
        bath, nv, _time_grid(config),
        include_nuclear_dipole=config.include_nuclear_dipole)
    cce.write_survival_csv(out_dir / "survival_exact.csv", curve,
                           header=_csv_header(config))
    meta = {
        "config_sha256": config.sha256,
        "started_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "files": [_write_bath_json(config, bath, out_dir),
                  "survival_exact.csv"],
        "versions": _versions(),
    }
    (out_dir / "meta.json").write_text(
        json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="ascii")
    return 0


def _versions() -> dict:
    import numpy
    import scipy

    from . import __version__, kernel

    return {
        "package": __version__,
        "python": sys.version.split()[0],
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "survival_backend": kernel.get_backend(),
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nvzeno",
        description="central-spin relaxation and repeated-measurement studies",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="full sweep from a JSON config")
    p_sim.add_argument("config")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.set_defaults(func=_cmd_simulate)

    p_val = sub.add_parser("validate", help="schema-check a config and exit")
    p_val.add_argument("config")
    p_val.set_defaults(func=_cmd_validate)

    p_orc = sub.add_parser(
        "oracle", help="exact full-bath propagation (small baths only)")
    p_orc.add_argument("config")
    p_orc.add_argument("--out", required=True, help="output directory")
    p_orc.set_defaults(func=_cmd_oracle)

    return parser


def main(argv=None) -> int:
    _pin_blas_threads()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except BudgetError as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return 3
    except (NumericalError,) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except NvzenoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
