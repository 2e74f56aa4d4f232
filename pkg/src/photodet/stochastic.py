"""Measurement unraveling, records, hit detection, Monte Carlo aggregation.

Each trajectory conditions the hierarchy on its measurement noise: every
auxiliary level is driven by the same per-channel Wiener increments through
sqrt(2k) (X rho + rho X - 2 <X> rho) dW, with <X> taken on the reconstructed
physical state (this keeps the reconstruction linear and reduces to the
standard conditioned master equation for a single level).

Stepping uses the Kraus-form first-order scheme: with
M = 1 - i Heff dt + sum_c X_c (sqrt(2 k_c) dW_c + 2 k_c <X_c> dt), every level
advances as M rho M† + dt (L rho L† + sum Y rho Y† + field couplings), then
all levels share one normalization by the physical trace. This agrees with
Euler-Maruyama to the same weak order while keeping the physical state
positive for any noise draw — plain Euler-Maruyama overshoots and diverges at
strong amplification for the step sizes admitted here (the squared-noise term
of M rho M† realizes the amplifier jump, so it is excluded from the
deterministic part).

Randomness is counter-based: channel c of trajectory j draws from a Philox
stream keyed by SeedSequence(master_seed, spawn_key=(j, c)), so results are
bit-identical for any chunking or worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._engine import MatterOps
from .hierarchy import LevelPlan, StateTrajectory, _closure_levels, _check_grid
from .model import DetectorSpec, FieldState, PulseEnvelope
from .numerics import Array

TRACE_TOL = 1e-3


def noise_stream(master_seed: int, traj_index: int, channel: int, n: int) -> Array:
    """Standard-normal draws for one (trajectory, channel) pair."""
    seq = np.random.SeedSequence(master_seed, spawn_key=(traj_index, channel))
    return np.random.Generator(np.random.Philox(seq)).standard_normal(n)


@dataclass
class MeasurementRecord:
    """One channel's raw increments and windowed output for one trajectory."""

    channel: int
    grid: Array
    raw_increments: Array        # dI per step, length n_t - 1
    integrated: Array            # I(t) on the grid; valid from ``valid_from``
    valid_from: int              # first grid index with a full window behind it
    t_m: float
    dt: float
    threshold: float
    window: str                  # 'sliding' | 'disjoint'
    master_seed: int
    traj_index: int


@dataclass
class HitEvent:
    channel: int
    time: float
    dwell: float


@dataclass
class EnsembleResult:
    n_traj: int
    hits: list                    # per-trajectory list[HitEvent]
    efficiency: float
    stderr: float
    hist_counts: Array
    hist_edges: Array
    master_seed: int
    diagnostics: dict = field(default_factory=dict)


def commensurate_grid(t_start: float, t_end: float, dt_max: float, t_m: float) -> Array:
    """Uniform grid whose step divides the integration window t_m exactly."""
    if t_end <= t_start or dt_max <= 0 or t_m <= 0:
        raise ValueError("need t_end > t_start, dt_max > 0, t_m > 0")
    dt = t_m / math.ceil(t_m / dt_max)
    n = int(math.ceil((t_end - t_start) / dt - 1e-9))
    return t_start + dt * np.arange(n + 1)


def _window_steps(t_m: float, dt: float) -> int:
    w = int(round(t_m / dt))
    if abs(w * dt - t_m) > 1e-6 * max(t_m, 1.0):
        raise ValueError(f"t_m = {t_m:g} is not a multiple of dt = {dt:g}; "
                         "build the grid with commensurate_grid()")
    if w < 1:
        raise ValueError("integration window shorter than one step")
    return w


def _integrate_window(raw: Array, dt: float, t_m: float) -> tuple[Array, int]:
    """Moving-window average of increments; entries before a full window are 0."""
    w = _window_steps(t_m, dt)
    n_t = raw.shape[-1] + 1
    cs = np.zeros(raw.shape[:-1] + (n_t,))
    np.cumsum(raw, axis=-1, out=cs[..., 1:])
    out = np.zeros_like(cs)
    out[..., w:] = (cs[..., w:] - cs[..., :-w]) / t_m
    return out, w


def _validate_stochastic_grid(spec: DetectorSpec, grid: Array) -> float:
    diffs = np.diff(grid)
    dt = float(diffs[0])
    if np.max(np.abs(diffs - dt)) > 1e-9 * dt:
        raise ValueError("stochastic integration needs a uniform grid")
    limits = []
    for ch in spec.amplifiers:
        if ch.rate <= 0:
            raise ValueError("every amplifier channel needs k > 0 for unraveling")
        limits.append(ch.t_m / 20.0)
        limits.append(1.0 / (10.0 * 2.0 * ch.rate * ch.chi**2))
    if limits and dt > min(limits) * (1 + 1e-9):
        raise ValueError(
            f"dt = {dt:g} too coarse for unraveling; need dt <= {min(limits):g} "
            "(t_m/20 and 1/(10 max 2 k chi^2))")
    return dt


def _simulate_batch(spec: DetectorSpec, pulse: PulseEnvelope, field_state: FieldState,
                    grid: Array, master_seed: int, traj_ids: Sequence[int],
                    collect_states: bool = False):
    """Euler-Maruyama on a batch of trajectories.

    Returns (increments (B, n_steps, n_ch), expectations (B, n_t, n_ch),
    populations (B, n_t, d) or None, trace diagnostics).
    """
    ops = MatterOps(spec)
    levels = _closure_levels(field_state)
    couples = any(n + m > 0 for n, m in levels)
    grid = _check_grid(grid, pulse, couples)
    dt = _validate_stochastic_grid(spec, grid)
    plan = LevelPlan(levels, ops)
    recon = plan.recon_terms(field_state.coeffs)

    d = spec.dim
    n_t = grid.size
    n_steps = n_t - 1
    chans = spec.amplifiers
    n_ch = len(chans)
    batch = len(traj_ids)

    xi = np.empty((batch, n_steps, n_ch))
    for b, tid in enumerate(traj_ids):
        for c in range(n_ch):
            xi[b, :, c] = noise_stream(master_seed, int(tid), c, n_steps)

    e_grid = np.asarray(pulse.amplitude(grid), dtype=complex) if couples \
        else np.zeros(n_t, complex)
    sq2k = np.array([math.sqrt(2.0 * ch.rate) for ch in chans])
    four_k = np.array([4.0 * ch.rate for ch in chans])
    xd_mat = np.array([ch.x_diag(d) for ch in chans]) if n_ch else np.zeros((0, d))
    sqrt_dt = math.sqrt(dt)
    m_base = np.eye(d, dtype=complex) - 1j * dt * ops.heff
    diag_ix = np.arange(d)

    y = plan.initial_stack(np.asarray(spec.initial_state, dtype=complex), batch=(batch,))
    exps = np.empty((batch, n_t, n_ch))
    pops = np.empty((batch, n_t, d)) if collect_states else None
    states = np.empty((batch, n_t, d, d), dtype=complex) if collect_states else None

    phys = plan.reconstruct(y, recon)
    exps[:, 0] = ops.expect_channels(phys)
    if collect_states:
        pops[:, 0] = np.einsum("bjj->bj", phys).real
        states[:, 0] = phys
    max_trace_dev = 0.0

    for i in range(n_steps):
        # Kraus operator per trajectory (noise enters on the monitored diagonal)
        m = np.broadcast_to(m_base, (batch, d, d)).copy()
        if n_ch:
            coef = xi[:, i, :] * (sq2k * sqrt_dt) + exps[:, i, :] * (four_k * dt)
            m[:, diag_ix, diag_ix] += coef @ xd_mat
        mh = np.conj(np.swapaxes(m, -1, -2))
        y_new = np.matmul(m[:, None], np.matmul(y, mh[:, None]))
        det = ops.jumps_no_amp(y)
        if det is not None:
            y_new += dt * det
        beta = plan.coupling_rhs(e_grid[i], y)
        if beta is not None:
            y_new += dt * beta

        phys = plan.reconstruct(y_new, recon)
        tr = np.einsum("bjj->b", phys).real
        # pre-normalization spread is the Kraus outcome weight, O(sqrt(dt));
        # rare small values are legitimate unlikely branches, only tr <= 0
        # would signal a genuine breakdown
        max_trace_dev = max(max_trace_dev, float(np.max(np.abs(tr - 1.0))))
        if not np.all(np.isfinite(tr)) or np.min(tr) <= 1e-9:
            raise RuntimeError(
                f"conditioned state lost normalization at step {i} "
                f"(trace range [{np.min(tr):.3g}, {np.max(tr):.3g}]); reduce dt")
        y = y_new / tr[:, None, None, None]
        phys = phys / tr[:, None, None]
        exps[:, i + 1] = ops.expect_channels(phys)
        if collect_states:
            pops[:, i + 1] = np.einsum("bjj->bj", phys).real
            states[:, i + 1] = phys

    inv_sqrt8k = np.array([1.0 / math.sqrt(8.0 * ch.rate) for ch in chans])
    signal = 0.5 * (exps[:, :-1, :] + exps[:, 1:, :]) * dt
    increments = signal + xi * sqrt_dt * inv_sqrt8k[None, None, :]
    diag = {"max_trace_dev": max_trace_dev}
    if max_trace_dev > TRACE_TOL:
        diag["warnings"] = [f"per-step trace deviation {max_trace_dev:.2e}"]
    return increments, exps, pops, states, diag


def _records_for(spec, grid, increments, dt, window, master_seed, traj_index):
    records = []
    for c, ch in enumerate(spec.amplifiers):
        integ, w = _integrate_window(increments[:, c], dt, ch.t_m)
        records.append(MeasurementRecord(
            channel=c, grid=grid, raw_increments=increments[:, c], integrated=integ,
            valid_from=w, t_m=ch.t_m, dt=dt, threshold=ch.threshold(), window=window,
            master_seed=master_seed, traj_index=traj_index))
    if spec.summed_readout and len(records) > 1:
        records = [combine_records(records)]
    return records


def combine_records(records: list) -> MeasurementRecord:
    """Sum per-channel records into one discriminator input (noise grows as
    sqrt(n_channels)); threshold defaults to the first channel's."""
    base = records[0]
    raw = sum(r.raw_increments for r in records)
    integ, w = _integrate_window(raw, base.dt, base.t_m)
    return MeasurementRecord(
        channel=-1, grid=base.grid, raw_increments=raw, integrated=integ,
        valid_from=w, t_m=base.t_m, dt=base.dt, threshold=base.threshold,
        window=base.window, master_seed=base.master_seed, traj_index=base.traj_index)


def unravel(spec: DetectorSpec, pulse: PulseEnvelope, field_state: FieldState,
            grid: Array, seed: int, *, window: str = "sliding", traj_index: int = 0):
    """Single conditioned trajectory: (StateTrajectory, list[MeasurementRecord]).

    ``traj_index`` selects the noise stream, reproducing the matching member
    of a `monte_carlo` ensemble run with the same master seed.
    """
    if window not in ("sliding", "disjoint"):
        raise ValueError(f"unknown window mode {window!r}")
    grid = np.asarray(grid, dtype=float)
    increments, exps, pops, states, diag = _simulate_batch(
        spec, pulse, field_state, grid, seed, [traj_index], collect_states=True)
    d = spec.dim
    saved = np.arange(grid.size)
    # vec_F(rho) = rho.T flattened in C order
    vec_states = np.ascontiguousarray(states[0].transpose(0, 2, 1)).reshape(grid.size, d * d)
    traj = StateTrajectory(
        grid=grid, populations=pops[0], expectations=exps[0], saved_indices=saved,
        states=vec_states, dim=d, diagnostics=diag)
    records = _records_for(spec, grid, increments[0], float(grid[1] - grid[0]),
                           window, seed, traj_index)
    return traj, records


def detect_hits(records: list, thresholds: Optional[dict] = None) -> list:
    """First-crossing hit per record. ``thresholds`` optionally overrides the
    per-channel stored thresholds, keyed by channel index."""
    hits = []
    for rec in records:
        thr = rec.threshold if thresholds is None else thresholds.get(rec.channel, rec.threshold)
        integ = rec.integrated
        if rec.window == "disjoint":
            w = rec.valid_from
            idx = np.arange(w, integ.size, w)
        else:
            idx = np.arange(rec.valid_from, integ.size)
        if idx.size == 0:
            continue
        above = integ[idx] >= thr
        if not above.any():
            continue
        k = idx[int(np.argmax(above))]
        below = np.nonzero(integ[k:] < thr)[0]
        dwell = (rec.grid[k + below[0]] - rec.grid[k]) if below.size else (rec.grid[-1] - rec.grid[k])
        hits.append(HitEvent(channel=rec.channel, time=float(rec.grid[k]), dwell=float(dwell)))
    return hits


def monte_carlo(spec: DetectorSpec, pulse: PulseEnvelope, field_state: FieldState,
                grid: Array, n_traj: int, master_seed: int, *, chunk: int = 256,
                window: str = "sliding", bin_width: Optional[float] = None) -> EnsembleResult:
    """Ensemble of conditioned trajectories with hit statistics.

    Efficiency is the fraction of trajectories with at least one hit on any
    channel; the histogram collects first-hit times. Chunking is a memory
    knob only — results are independent of it.
    """
    if n_traj < 1:
        raise ValueError("need at least one trajectory")
    if window not in ("sliding", "disjoint"):
        raise ValueError(f"unknown window mode {window!r}")
    grid = np.asarray(grid, dtype=float)
    dt = float(grid[1] - grid[0])
    all_hits: list = []
    first_times: list = []
    max_trace = 0.0
    for start in range(0, n_traj, chunk):
        ids = range(start, min(start + chunk, n_traj))
        increments, _, _, _, diag = _simulate_batch(
            spec, pulse, field_state, grid, master_seed, list(ids))
        max_trace = max(max_trace, diag["max_trace_dev"])
        for b, tid in enumerate(ids):
            records = _records_for(spec, grid, increments[b], dt, window,
                                   master_seed, tid)
            hits = detect_hits(records)
            all_hits.append(hits)
            if hits:
                first_times.append(min(h.time for h in hits))
    n_hit = sum(1 for h in all_hits if h)
    p = n_hit / n_traj
    se = math.sqrt(p * (1 - p) / n_traj)
    if bin_width is None:
        bin_width = max((grid[-1] - grid[0]) / 50.0, dt)
    edges = np.arange(grid[0], grid[-1] + bin_width, bin_width)
    counts, edges = np.histogram(first_times, bins=edges)
    return EnsembleResult(
        n_traj=n_traj, hits=all_hits, efficiency=p, stderr=se,
        hist_counts=counts, hist_edges=edges, master_seed=master_seed,
        diagnostics={"max_trace_dev": max_trace})
