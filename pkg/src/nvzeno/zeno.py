"""Repeated-measurement survival, effective decay rates, and the
spectral-overlap rate model.

The undisturbed survival curve P(t) comes from the cluster expansion.
Interrupting the evolution every tau seconds with an ideal projective
measurement of the central spin resets system-bath correlations, so the
survival after n intervals is P(tau)**n and the decay is effectively
exponential with rate R_eff(tau) = -ln P(tau) / tau.  For short tau the
undisturbed decay is quadratic in time, R_eff grows linearly with tau,
and frequent measurement suppresses the decay.

The rate can also be predicted without propagating anything: the
measurement broadens the central-spin transition into a sinc^2 profile
F(omega, tau) of width ~1/tau around the electron splitting omega_a, and
the bath contributes a line spectrum G(omega) of coupling-weighted
transition frequencies.  The golden-rule style overlap
2*pi * integral F*G d(omega) reproduces the simulated rate in the
perturbative regime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import SurvivalCurve
from .errors import ConfigError

CLAMP_FLOOR = 1e-15


def repeated_measurement_survival(p_tau: float, n: int) -> float:
    """Survival probability after n ideal measurements spaced tau apart.

    p_tau is the single-interval survival; the result is p_tau**n.
    Values above 1 (cluster-expansion overshoot) are clamped to 1.
    """
    if n < 0:
        raise ConfigError(f"measurement count must be nonnegative, got {n}")
    if p_tau <= 0.0:
        raise ConfigError(
            f"single-interval survival must be positive, got {p_tau}"
        )
    return min(p_tau, 1.0) ** n


def survival_at(curve: SurvivalCurve, tau: float) -> float:
    """P(tau) by linear interpolation on the curve's grid."""
    times = curve.times
    if tau <= 0.0:
        raise ConfigError(f"tau must be positive, got {tau}")
    if tau < times[0] or tau > times[-1]:
        raise ConfigError(
            f"tau={tau} outside curve grid [{times[0]}, {times[-1]}]"
        )
    return float(np.interp(tau, times, curve.values))


def effective_rate(curve: SurvivalCurve, tau: float) -> float:
    """Effective decay rate -ln P(tau) / tau of the interrupted evolution.

    P is clamped into [CLAMP_FLOOR, 1] inside the logarithm, so the rate
    is nonnegative and finite even when the curve overshoots 1 or decays
    to numerical zero.
    """
    p = survival_at(curve, tau)
    p = min(max(p, CLAMP_FLOOR), 1.0)
    return -math.log(p) / tau


def rate_curve(
    curve: SurvivalCurve, taus: np.ndarray
) -> tuple[np.ndarray, int]:
    """Effective rates over a tau grid, plus the number of clamp events."""
    taus = np.asarray(taus, dtype=np.float64)
    p = np.interp(taus, curve.times, curve.values)
    if np.any(taus <= 0.0):
        raise ConfigError("tau grid must be positive")
    if taus.max() > curve.times[-1] or taus.min() < curve.times[0]:
        raise ConfigError("tau grid extends beyond the curve grid")
    clamped = int(np.count_nonzero((p < CLAMP_FLOOR) | (p > 1.0)))
    p = np.clip(p, CLAMP_FLOOR, 1.0)
    return -np.log(p) / taus, clamped


def broadening(omega, tau: float, omega_a: float):
    """Measurement-induced line profile (tau/2pi) sinc^2((omega-omega_a) tau/2).

    Peaks at tau/2pi on resonance, first null at |omega - omega_a| =
    2pi/tau, unit integral over omega.  Accepts scalar or array omega.
    """
    if tau <= 0.0:
        raise ConfigError(f"tau must be positive, got {tau}")
    # np.sinc(x) is sin(pi x)/(pi x); rescale the argument accordingly.
    x = (np.asarray(omega, dtype=np.float64) - omega_a) * tau / 2.0
    val = tau / (2.0 * np.pi) * np.sinc(x / np.pi) ** 2
    if np.ndim(omega) == 0:
        return float(val)
    return val


def overlap_rate(spectrum, tau: float, omega_a: float) -> float:
    """Decay rate 2pi * sum_j F(omega_j, tau) * w_j from the line spectrum.

    The summation order is fixed (ascending omega_j, then weight), so the
    result is bit-reproducible under permutation of the input list.
    """
    omegas, weights = _spectrum_arrays(spectrum)
    if omegas.size == 0:
        return 0.0
    order = np.lexsort((weights, omegas))
    omegas = omegas[order]
    weights = weights[order]
    f = broadening(omegas, tau, omega_a)
    return float(2.0 * np.pi * np.sum(f * weights))


def smoothed_density(spectrum, omega, sigma: float | None = None):
    """Gaussian-smoothed spectral density G_sigma(omega).

    The discrete line spectrum is exact; this coarse-grained variant
    exists for the long-tau comparison, where the steady rate approaches
    2pi G(omega_a) of a continuum bath.  Default bandwidth: the median
    spacing of the sorted line frequencies.
    """
    omegas, weights = _spectrum_arrays(spectrum)
    if omegas.size == 0:
        raise ConfigError("cannot smooth an empty spectrum")
    if sigma is None:
        if omegas.size < 2:
            raise ConfigError(
                "smoothing bandwidth required for a single-line spectrum"
            )
        spacings = np.diff(np.sort(omegas))
        sigma = float(np.median(spacings))
        if sigma <= 0.0:
            sigma = float(np.std(omegas)) or 1.0
    if sigma <= 0.0:
        raise ConfigError(f"smoothing bandwidth must be positive, got {sigma}")
    om = np.atleast_1d(np.asarray(omega, dtype=np.float64))
    norm = 1.0 / (sigma * math.sqrt(2.0 * math.pi))
    dens = norm * np.sum(
        weights[:, None]
        * np.exp(-0.5 * ((om[None, :] - omegas[:, None]) / sigma) ** 2),
        axis=0,
    )
    if np.ndim(omega) == 0:
        return float(dens[0])
    return dens


def plateau_rate(spectrum, omega_a: float, sigma: float | None = None) -> float:
    """Long-tau limit 2pi G_sigma(omega_a) of the overlap rate."""
    return 2.0 * math.pi * smoothed_density(spectrum, omega_a, sigma=sigma)


@dataclass
class RegimeFit:
    """Two-regime characterization of a survival curve.

    gaussian_kappa fits P = exp(-(kappa t)^2) on the initial segment,
    exp_rate fits P = exp(-(R t + a)) on the tail, crossover_t is where
    the two models' residuals cross.
    """

    gaussian_kappa: float
    exp_rate: float
    crossover_t: float
    quadratic_window: tuple[float, float]
    exponential_window: tuple[float, float]
    quadratic_r2: float
    exponential_r2: float
    quadratic_poor: bool
    exponential_poor: bool


def regime_fit(
    curve: SurvivalCurve,
    *,
    head_fraction: float = 0.10,
    tail_fraction: float = 0.30,
    monotone_tol: float | None = None,
    poor_r2: float = 0.90,
) -> RegimeFit:
    """Fit the quadratic (Gaussian) head and exponential tail of a curve.

    -ln P is regressed against t^2 through the origin on the leading
    head_fraction of the grid and affinely against t on the trailing
    tail_fraction.  The crossover is the first time beyond the head
    window where the exponential model's residual drops below the
    quadratic model's.  A regime whose goodness of fit falls below
    poor_r2 is flagged rather than rejected.
    """
    times = curve.times
    p = curve.values
    if times.size < 10:
        raise ConfigError("curve too short for a two-regime fit")
    rise = np.diff(p)
    span = float(p.max() - p.min())
    if monotone_tol is None:
        monotone_tol = max(0.25 * span, 1e-6)
    if rise.size and float(rise.max()) > monotone_tol:
        raise ConfigError(
            "curve is non-monotone beyond tolerance; regime fit undefined"
        )
    y = -np.log(np.clip(p, CLAMP_FLOOR, 1.0))

    n = times.size
    n_head = max(int(math.ceil(head_fraction * n)), 3)
    n_tail = max(int(math.ceil(tail_fraction * n)), 3)
    head = slice(0, n_head)
    tail = slice(n - n_tail, n)

    t2 = times[head] ** 2
    denom = float(np.dot(t2, t2))
    if denom == 0.0:
        raise ConfigError("head window has no nonzero times")
    kappa_sq = float(np.dot(t2, y[head])) / denom
    kappa_sq = max(kappa_sq, 0.0)
    quad_pred_head = kappa_sq * t2
    quad_r2 = _r_squared(y[head], quad_pred_head)

    coeffs = np.polyfit(times[tail], y[tail], 1)
    exp_rate = float(coeffs[0])
    exp_r2 = _r_squared(y[tail], np.polyval(coeffs, times[tail]))

    quad_resid = np.abs(y - kappa_sq * times**2)
    exp_resid = np.abs(y - np.polyval(coeffs, times))
    crossover_t = float(times[-1])
    for i in range(n_head, n):
        if exp_resid[i] < quad_resid[i]:
            crossover_t = float(times[i])
            break

    return RegimeFit(
        gaussian_kappa=math.sqrt(kappa_sq),
        exp_rate=exp_rate,
        crossover_t=crossover_t,
        quadratic_window=(float(times[0]), float(times[n_head - 1])),
        exponential_window=(float(times[n - n_tail]), float(times[-1])),
        quadratic_r2=quad_r2,
        exponential_r2=exp_r2,
        quadratic_poor=quad_r2 < poor_r2,
        exponential_poor=exp_r2 < poor_r2,
    )


@dataclass
class ZenoReport:
    """Rates, spectrum, and diagnostics of one repeated-measurement study."""

    tau_grid: np.ndarray
    r_sim: np.ndarray
    r_model: np.ndarray
    omega_a: float
    spectrum_omegas: np.ndarray
    spectrum_weights: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def zeno_report(curve: SurvivalCurve, taus, spectrum, omega_a: float) -> ZenoReport:
    taus = np.asarray(taus, dtype=np.float64)
    if taus.size == 0:
        raise ConfigError("tau grid is empty")
    r_sim, clamped = rate_curve(curve, taus)
    r_model = np.array(
        [overlap_rate(spectrum, t, omega_a) for t in taus]
    )
    omegas, weights = _spectrum_arrays(spectrum)
    order = np.lexsort((weights, omegas))
    return ZenoReport(
        tau_grid=taus,
        r_sim=r_sim,
        r_model=r_model,
        omega_a=omega_a,
        spectrum_omegas=omegas[order],
        spectrum_weights=weights[order],
        diagnostics={"rate_clamp_events": clamped},
    )


def write_zeno_csv(path, report: ZenoReport, tau_star: float, header=None) -> None:
    """Sectioned CSV: rates per tau, the line spectrum, and the broadening
    profile evaluated at a designated tau_star."""
    om_grid = report.omega_a + np.linspace(-1.0, 1.0, 401) * (
        8.0 * np.pi / tau_star
    )
    f_vals = broadening(om_grid, tau_star, report.omega_a)
    lines = []
    if header:
        for key, val in header.items():
            lines.append(f"# {key}: {val}")
    for key, val in sorted(report.diagnostics.items()):
        lines.append(f"# {key}: {val}")
    lines.append(f"# omega_a_rad_per_s: {report.omega_a!r}")
    lines.append(f"# tau_star_s: {tau_star!r}")
    lines.append("#SECTION rates")
    lines.append("tau_s,R_sim_per_s,R_model_per_s")
    for tau, rs, rm in zip(report.tau_grid, report.r_sim, report.r_model):
        lines.append(f"{tau:.17g},{rs:.17g},{rm:.17g}")
    lines.append("#SECTION spectrum")
    lines.append("omega_j_rad_per_s,weight_rad2_per_s2")
    for om, w in zip(report.spectrum_omegas, report.spectrum_weights):
        lines.append(f"{om:.17g},{w:.17g}")
    lines.append("#SECTION broadening")
    lines.append("omega_rad_per_s,F_s")
    for om, fv in zip(om_grid, f_vals):
        lines.append(f"{om:.17g},{fv:.17g}")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _spectrum_arrays(spectrum) -> tuple[np.ndarray, np.ndarray]:
    # accepts (omegas, weights) arrays or an iterable of (omega, weight)
    if isinstance(spectrum, tuple) and len(spectrum) == 2:
        om, w = spectrum
        om = np.asarray(om, dtype=np.float64)
        w = np.asarray(w, dtype=np.float64)
        if om.ndim == 1 and w.shape == om.shape:
            return om, w
    pairs = list(spectrum)
    if not pairs:
        return np.empty(0), np.empty(0)
    arr = np.asarray(pairs, dtype=np.float64)
    return arr[:, 0].copy(), arr[:, 1].copy()


def _r_squared(y, pred) -> float:
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return 1.0 - ss_res / ss_tot
