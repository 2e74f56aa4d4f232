"""Performance estimators computed from average dynamics.

Hit probabilities follow the transduction-and-persistence estimate: the
probability that population enters the monitored subspace and survives the
minimum dwell t_min needed to register a threshold crossing,

    Pi(t) = [x† G(t_min) x / x†x] ( x† rho(t - t_min)
            - (x† A x / x†x) ∫_{t0}^{t - t_min} x† rho(τ) dτ ).

For a stable monitored subspace the bracket reduces to the monitored
population at the shifted time. Dark counts combine a thermal hit term with
the Gaussian amplifier-noise crossing rate.
"""

from __future__ import annotations

import itertools
import warnings
from typing import NamedTuple, Optional

import numpy as np
import scipy.special

from .hierarchy import StateTrajectory
from .liouvillian import Liouvillian, propagate_vector, spectrum
from .model import AmplifierChannel, DetectorSpec, PulseEnvelope
from .numerics import Array, vectorize

CLAMP_WARN = 1e-6


class TimingMetrics(NamedTuple):
    mu: float          # latency (ns)
    sigma: float       # total jitter (ns)
    sigma_sys: float   # detector-added jitter (ns)
    sigma0: float      # pulse-limited jitter floor (ns)


def _cumtrapz(y: Array, x: Array) -> Array:
    out = np.zeros_like(y, dtype=float)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(x))
    return out


def _shifted(grid: Array, series: Array, t_min: float) -> Array:
    """series(t - t_min) on the grid, zero before the grid start."""
    if t_min == 0.0:
        return series.astype(float, copy=True)
    return np.interp(grid - t_min, grid, series, left=0.0)


def hit_probability(liou: Liouvillian, trajectory: StateTrajectory,
                    channel: AmplifierChannel, t_min: Optional[float] = None) -> Array:
    """Per-channel hit probability series Pi(t) from the average trajectory.

    The quadratic forms are normalized by the monitored rank so the stay
    probability starts at 1 for any projector rank. Values are clamped to
    [0, 1]; clamping beyond 1e-6 emits a warning (the expression is an upper
    bound and can exceed 1 outside its regime).
    """
    grid = trajectory.grid
    if t_min is None:
        t_min = channel.min_dwell()
    if t_min < 0 or t_min > grid[-1] - grid[0]:
        raise ValueError(f"t_min = {t_min:g} outside the trajectory span")
    d = trajectory.dim
    x_diag = channel.projector_diag(d)
    rank = float(x_diag.sum())
    x_vec = vectorize(np.diag(x_diag).astype(complex))

    stay = propagate_vector(liou, x_vec, t_min)
    k0 = float(np.real(x_vec.conj() @ stay)) / rank
    a0 = float(np.real(x_vec.conj() @ liou.apply(x_vec))) / rank

    p = trajectory.populations @ x_diag
    cum = _cumtrapz(p, grid)
    pi = k0 * (_shifted(grid, p, t_min) - a0 * _shifted(grid, cum, t_min))
    over = float(np.max(pi) - 1.0)
    under = float(-np.min(pi))
    if over > CLAMP_WARN or under > CLAMP_WARN:
        warnings.warn(
            f"hit probability clamped (max excess {max(over, under):.2e}); "
            "the estimate is outside its validity regime", stacklevel=2)
    return np.clip(pi, 0.0, 1.0)


def efficiency(liou: Liouvillian, trajectory: StateTrajectory, n_photons: int = 1,
               t_min: Optional[float] = None) -> Array:
    """Detection probability series P_N(t).

    N = 1 sums the per-channel hit probabilities. N >= 2 needs per-element
    channels and sums joint monitored populations over N-element subsets at
    the dwell-shifted time.
    """
    spec = liou.spec
    channels = spec.amplifiers
    if n_photons < 1:
        raise ValueError("photon number must be >= 1")
    if n_photons == 1:
        total = np.zeros(trajectory.grid.size)
        for ch in channels:
            total = total + hit_probability(liou, trajectory, ch, t_min)
        return np.clip(total, 0.0, 1.0)
    if n_photons > len(channels):
        raise ValueError(
            f"N = {n_photons} exceeds the number of channels ({len(channels)})")
    d = trajectory.dim
    shift = channels[0].min_dwell() if t_min is None else t_min
    joint = np.zeros(d)
    for subset in itertools.combinations(channels, n_photons):
        diag = np.ones(d)
        for ch in subset:
            diag = diag * ch.projector_diag(d)
        joint += diag
    series = trajectory.populations @ joint
    return np.clip(_shifted(trajectory.grid, series, shift), 0.0, 1.0)


def dark_count_rate(channel: AmplifierChannel, thermal_hit_prob: float = 0.0) -> float:
    """Dark rate r_i = thermal/t_m + (0.5/t_m) erfc(2 sqrt(k t_m) dI)."""
    if channel.t_m <= 0:
        raise ValueError("integration window must be positive")
    delta_i = channel.threshold()        # gap to the no-hit signal level (0)
    noise = 0.5 / channel.t_m * scipy.special.erfc(
        2.0 * np.sqrt(channel.rate * channel.t_m) * delta_i)
    return float(thermal_hit_prob / channel.t_m + noise)


def total_dark_rate(channels, n_photons: int = 1,
                    thermal_hit_probs: Optional[list] = None) -> float:
    """R_N through the same channel-combination map as the efficiency."""
    rates = [dark_count_rate(ch, 0.0 if thermal_hit_probs is None else thermal_hit_probs[i])
             for i, ch in enumerate(channels)]
    if n_photons == 1:
        return float(sum(rates))
    total = 0.0
    for subset in itertools.combinations(rates, n_photons):
        total += float(np.prod(subset))
    return total


def calibrate_threshold(k: float, t_m: float, dark_prob: float) -> float:
    """Threshold gap dI with noise-crossing probability ``dark_prob`` per
    disjoint window: 0.5 erfc(2 sqrt(k t_m) dI) = dark_prob."""
    if not 0 < dark_prob < 0.5:
        raise ValueError("dark probability must be in (0, 0.5)")
    if k <= 0 or t_m <= 0:
        raise ValueError("k and t_m must be positive")
    return float(scipy.special.erfcinv(2.0 * dark_prob) / (2.0 * np.sqrt(k * t_m)))


def amplification_bound(r1: float, t_m: float) -> float:
    """Minimal (2k)^{1/2} chi sustaining dark rate r1 at window t_m."""
    arg = 2.0 * t_m * r1
    if not 0.0 < arg < 1.0:
        raise ValueError(f"2 t_m R1 = {arg:g} outside (0, 1)")
    return float(scipy.special.erfcinv(arg) / np.sqrt(2.0 * t_m))


def ideal_arrival_distribution(pulse: PulseEnvelope, n_photons: int, grid: Array) -> Array:
    """Arrival-time density of the last of N photons for an ideal intensity
    detector: N |E|^2 CDF^{N-1}, normalized on the grid."""
    if n_photons < 1:
        raise ValueError("photon number must be >= 1")
    grid = np.asarray(grid, dtype=float)
    w = pulse.intensity(grid)
    cdf = _cumtrapz(w, grid)
    f = n_photons * w * np.where(cdf > 0, cdf, 0.0) ** (n_photons - 1)
    total = cdf[-1] ** n_photons
    if total <= 0:
        raise ValueError("pulse has no support on the grid")
    return f / total


def timing_metrics(grid: Array, p_series: Array, f_density: Array) -> TimingMetrics:
    """Latency and jitter of the detection-time density g = dP/dt / P(inf)
    relative to the ideal arrival density f."""
    grid = np.asarray(grid, dtype=float)
    p_inf = float(p_series[-1])
    if p_inf <= 0:
        raise ValueError("vanishing detection probability")
    g = np.gradient(p_series, grid) / p_inf
    norm_f = np.trapezoid(f_density, grid)
    f = f_density / norm_f
    mean_g = np.trapezoid(grid * g, grid)
    mean_f = np.trapezoid(grid * f, grid)
    var_g = np.trapezoid(grid**2 * g, grid) - mean_g**2
    var_f = np.trapezoid(grid**2 * f, grid) - mean_f**2
    mu = mean_g - mean_f
    sigma = float(np.sqrt(max(var_g, 0.0)))
    sigma0 = float(np.sqrt(max(var_f, 0.0)))
    gap = var_g - var_f
    if gap < 0 and abs(gap) > 1e-9:
        warnings.warn(f"sigma^2 - sigma0^2 = {gap:.3e} clamped to 0", stacklevel=2)
    sigma_sys = float(np.sqrt(max(gap, 0.0)))
    return TimingMetrics(float(mu), sigma, sigma_sys, sigma0)


def ideality_check(liou: Liouvillian, spec: DetectorSpec,
                   pulse: Optional[PulseEnvelope] = None) -> dict:
    """Structural ideality diagnostics.

    Reports the persistent-mode structure, the monitored-subspace leak rate,
    the architecture's rate-matching residual and its predicted terminal
    efficiency (recognized builder families only), and the wide-pulse figure.
    """
    from . import reference

    d = spec.dim
    out: dict = {"architecture": None, "ideal": False}

    if liou.dim <= 4096:
        eigs = spectrum(liou)
        out["persistent_count"] = sum(1 for _, lab in eigs if lab == "persistent")
    else:
        from .liouvillian import persistent_modes
        out["persistent_count"] = len(persistent_modes(liou))

    leaks = []
    for ch in spec.amplifiers:
        x_diag = ch.projector_diag(d)
        x_vec = vectorize(np.diag(x_diag).astype(complex))
        a0 = float(np.real(x_vec.conj() @ liou.apply(x_vec))) / float(x_diag.sum())
        leaks.append(-a0)
    out["monitored_leak_rates"] = leaks
    stable = all(abs(r) <= 1e-10 * max(liou.norm_bound(), 1.0) for r in leaks)
    out["monitored_stable"] = stable

    arch = spec.architecture or {}
    family = arch.get("family")
    out["architecture"] = family
    sigma = pulse.width if (pulse is not None and pulse.shape == "gaussian") else (
        pulse.sigma() if pulse is not None else None)

    residual = None
    predicted = None
    rate_sum = None
    if family == "three_state":
        g2, G2 = arch["gamma2"], arch["Gamma2"]
        residual = abs(np.sqrt(g2) - np.sqrt(G2))
        predicted = reference.three_state_efficiency(g2, G2)
        if "dephasing" in arch:
            predicted = reference.three_state_dephased(g2, G2, arch["dephasing"]["kappa2"])
        if "reset" in arch:
            predicted *= reference.reset_efficiency(
                arch["reset"]["delta2"], spec.amplifiers[0].min_dwell())
        rate_sum = g2 + G2
    elif family == "two_state":
        rate_sum = arch["gamma2"]
        predicted = None
    elif family == "array":
        n, g2, G2 = arch["n"], arch["gamma2"], arch["Gamma2"]
        residual = abs(np.sqrt(G2) - np.sqrt(n * g2))
        predicted = reference.three_state_efficiency(n * g2, G2)
        rate_sum = n * g2 + G2
    elif family == "band":
        n, g2, G2 = arch["n"], arch["gamma2"], arch["Gamma2"]
        z2 = arch["distribution"].get("zeta2", 0.0)
        residual = abs(n * g2 - G2 - z2)
        if arch["amplify"] == "shelved-C":
            predicted = reference.band_shelved_efficiency(n, g2, z2, G2)
        else:
            kchi2 = arch["k"] * arch["chi"] ** 2
            predicted = reference.band_zeno_efficiency(n, g2, z2, kchi2)
        rate_sum = n * g2 + G2 + z2
    elif family == "quadratic":
        theta, axis = arch["theta"], arch["axis"]
        predicted = reference.quadratic_candidates(theta, axis[2])[1]
        residual = abs(predicted - 1.0)
        rate_sum = None

    out["rate_matching_residual"] = residual
    out["predicted_efficiency"] = predicted
    if sigma is not None and rate_sum is not None:
        out["wide_pulse_figure"] = rate_sum * sigma
    elif sigma is not None:
        out["wide_pulse_figure"] = liou.norm_bound() * sigma / 4.0

    out["ideal"] = bool(
        stable
        and out["persistent_count"] >= 2
        and predicted is not None
        and abs(predicted - 1.0) < 1e-9
        and (out.get("wide_pulse_figure", np.inf) >= 10.0)
    )
    return out


def report_json(report: dict) -> dict:
    """JSON-friendly copy of a metrics/ideality report."""
    out = {}
    for key, val in report.items():
        if isinstance(val, np.ndarray):
            out[key] = val.tolist()
        elif isinstance(val, (np.floating, np.integer)):
            out[key] = val.item()
        elif isinstance(val, list):
            out[key] = [v.item() if isinstance(v, (np.floating, np.integer)) else v for v in val]
        else:
            out[key] = val
    return out
