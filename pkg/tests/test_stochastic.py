import numpy as np
import pytest
import scipy.special

from photodet import hierarchy, stochastic
from photodet.model import FieldState, build_degenerate_array, build_three_state, build_two_state, gaussian_pulse
from photodet.stochastic import (
    MeasurementRecord,
    commensurate_grid,
    detect_hits,
    monte_carlo,
    noise_stream,
    unravel,
)

PULSE = gaussian_pulse(1.0)


def vacuum_increments(spec, grid, seed, n_traj):
    inc, *_ = stochastic._simulate_batch(spec, PULSE, FieldState.fock(0), grid,
                                         seed, list(range(n_traj)))
    return inc


class TestNoiseStreams:
    def test_reproducible(self):
        a = noise_stream(7, 3, 0, 100)
        b = noise_stream(7, 3, 0, 100)
        assert np.array_equal(a, b)

    def test_streams_independent(self):
        a = noise_stream(7, 0, 0, 20000)
        b = noise_stream(7, 1, 0, 20000)
        c = noise_stream(7, 0, 1, 20000)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.03
        assert abs(np.corrcoef(a, c)[0, 1]) < 0.03

    def test_martingale_mean(self):
        spec = build_two_state(1.0, chi=1.0, k=1.0, t_m=1.0)
        grid = commensurate_grid(0.0, 200.0, 0.05, 1.0)
        inc = vacuum_increments(spec, grid, 11, 10)
        n = inc.size
        dt = grid[1] - grid[0]
        # increments are dW / sqrt(8k) here; mean bounded by 3 sigma
        sigma = np.sqrt(dt / 8.0)
        assert abs(inc.mean()) <= 3 * sigma / np.sqrt(n)


class TestVacuumStatistics:
    def test_window_variance(self):
        k, t_m = 2.0, 1.0
        spec = build_two_state(1.0, chi=1.0, k=k, t_m=t_m)
        grid = commensurate_grid(0.0, 400.0, 0.025, t_m)
        inc = vacuum_increments(spec, grid, 5, 12)
        w = int(round(t_m / (grid[1] - grid[0])))
        nwin = inc.shape[1] // w
        wins = inc[:, :nwin * w, 0].reshape(12, nwin, w).sum(axis=2) / t_m
        var = wins.var()
        target = 1.0 / (8 * k * t_m)
        n = wins.size
        assert abs(var - target) < 4 * target * np.sqrt(2.0 / n)

    def test_crossing_rate_matches_erfc(self):
        k, t_m = 1.0, 1.0
        spec = build_two_state(1.0, chi=1.0, k=k, t_m=t_m)
        grid = commensurate_grid(0.0, 500.0, 0.05, t_m)
        inc = vacuum_increments(spec, grid, 42, 20)
        w = int(round(t_m / (grid[1] - grid[0])))
        nwin = inc.shape[1] // w
        wins = inc[:, :nwin * w, 0].reshape(20, nwin, w).sum(axis=2) / t_m
        for delta_i in (0.2, 0.35):
            p_emp = (wins >= delta_i).mean()
            p_th = 0.5 * scipy.special.erfc(2 * np.sqrt(k * t_m) * delta_i)
            se = np.sqrt(p_th * (1 - p_th) / wins.size)
            assert abs(p_emp - p_th) < 3 * se


class TestConditionedDynamics:
    def test_ensemble_mean_matches_average(self):
        spec = build_three_state(1.0, 1.0, chi=1.0, k=2.0, t_m=1.0)
        grid = commensurate_grid(-8.0, 12.0, 0.0025, 1.0)
        n = 300
        _, _, pops, _, _ = stochastic._simulate_batch(
            spec, PULSE, FieldState.fock(1), grid, 7, list(range(n)),
            collect_states=True)
        _, det = hierarchy.propagate(spec, PULSE, FieldState.fock(1), grid)
        mean = pops[:, -1, 2].mean()
        se = pops[:, -1, 2].std() / np.sqrt(n)
        assert abs(mean - det.populations[-1, 2]) < 3 * se + 1e-3

    def test_normalized_trace_exact(self):
        spec = build_three_state(1.0, 1.0, chi=1.0, k=4.0, t_m=1.0)
        grid = commensurate_grid(-8.0, 10.0, 0.002, 1.0)
        traj, _ = unravel(spec, PULSE, FieldState.fock(1), grid, seed=5)
        assert np.max(np.abs(traj.populations.sum(axis=1) - 1.0)) < 1e-10

    def test_jump_like_at_strong_amplification(self):
        spec = build_three_state(1.0, 1.0, chi=1.0, k=50.0, t_m=0.5)
        grid = commensurate_grid(-8.0, 10.0, 1.0 / (10 * 2 * 50.0), 0.5)
        frac = []
        for seed_traj in range(6):
            traj, _ = unravel(spec, PULSE, FieldState.fock(1), grid, seed=21,
                              traj_index=seed_traj)
            pc = traj.populations[:, 2]
            frac.append(np.mean((pc < 0.05) | (pc > 0.95)))
        assert np.mean(frac) > 0.95

    def test_positivity_of_conditioned_state(self):
        spec = build_two_state(1.0, chi=1.0, k=32.0, t_m=15.0)
        grid = commensurate_grid(-8.0, 20.0, 1.0 / 640, 15.0)
        traj, _ = unravel(spec, PULSE, FieldState.fock(1), grid, seed=3)
        assert traj.populations.min() > -1e-9


class TestDeterminism:
    def test_unravel_bitwise(self):
        spec = build_three_state(1.0, 1.0, chi=1.0, k=2.0, t_m=1.0)
        grid = commensurate_grid(-8.0, 10.0, 0.005, 1.0)
        t1, r1 = unravel(spec, PULSE, FieldState.fock(1), grid, seed=9)
        t2, r2 = unravel(spec, PULSE, FieldState.fock(1), grid, seed=9)
        assert np.array_equal(t1.populations, t2.populations)
        assert np.array_equal(r1[0].integrated, r2[0].integrated)

    def test_chunking_invariance(self):
        spec = build_three_state(1.0, 1.0, chi=1.0, k=2.0, t_m=1.0)
        grid = commensurate_grid(-8.0, 10.0, 0.01, 1.0)
        e1 = monte_carlo(spec, PULSE, FieldState.fock(1), grid, 40, 3, chunk=7)
        e2 = monte_carlo(spec, PULSE, FieldState.fock(1), grid, 40, 3, chunk=40)
        assert e1.efficiency == e2.efficiency
        assert np.array_equal(e1.hist_counts, e2.hist_counts)
        for h1, h2 in zip(e1.hits, e2.hits):
            assert [(h.channel, h.time) for h in h1] == [(h.channel, h.time) for h in h2]

    def test_batch_matches_single(self):
        spec = build_three_state(1.0, 1.0, chi=1.0, k=2.0, t_m=1.0)
        grid = commensurate_grid(-8.0, 10.0, 0.01, 1.0)
        inc_batch, *_ = stochastic._simulate_batch(
            spec, PULSE, FieldState.fock(1), grid, 13, [0, 1, 2])
        _, recs = unravel(spec, PULSE, FieldState.fock(1), grid, 13, traj_index=2)
        assert np.array_equal(inc_batch[2, :, 0], recs[0].raw_increments)


class TestDetectHits:
    def make_record(self, values, t_m=1.0, dt=0.1, threshold=0.5, window="sliding"):
        grid = dt * np.arange(values.size + 1)
        integ, w = stochastic._integrate_window(values, dt, t_m)
        return MeasurementRecord(channel=0, grid=grid, raw_increments=values,
                                 integrated=integ, valid_from=w, t_m=t_m, dt=dt,
                                 threshold=threshold, window=window,
                                 master_seed=0, traj_index=0)

    def test_no_hits_on_zero_record(self):
        rec = self.make_record(np.zeros(100))
        assert detect_hits([rec]) == []

    def test_constant_record_first_window(self):
        chi, dt, t_m = 1.0, 0.1, 1.0
        rec = self.make_record(np.full(100, chi * dt), threshold=chi / 2)
        hits = detect_hits([rec])
        assert len(hits) == 1
        assert hits[0].time == pytest.approx(t_m)      # first full window
        assert hits[0].dwell == pytest.approx(rec.grid[-1] - t_m)

    def test_threshold_override(self):
        rec = self.make_record(np.full(100, 0.1 * 0.3))
        assert detect_hits([rec]) == []                  # 0.3 < 0.5 default
        hits = detect_hits([rec], thresholds={0: 0.2})
        assert len(hits) == 1

    def test_disjoint_evaluation_points(self):
        vals = np.zeros(100)
        vals[12:18] = 1.0      # bump inside the second window
        rec = self.make_record(vals, window="disjoint")
        hits = detect_hits([rec])
        assert len(hits) == 1
        assert hits[0].time == pytest.approx(2.0)       # window boundary only


class TestCombineRecords:
    def test_summed_noise_grows(self):
        n = 4
        spec = build_degenerate_array(n, 1.0, 2.0, chi=1.0, k=1.0, t_m=1.0,
                                      scheme="per-element-summed")
        grid = commensurate_grid(0.0, 150.0, 0.05, 1.0)
        inc, *_ = stochastic._simulate_batch(spec, PULSE, FieldState.fock(0),
                                             grid, 17, list(range(4)))
        combined = inc.sum(axis=2)
        w = 20
        nwin = combined.shape[1] // w
        wins = combined[:, :nwin * w].reshape(4, nwin, w).sum(axis=2) / 1.0
        var = wins.var()
        target = n / (8 * 1.0 * 1.0)     # n times the single-channel variance
        assert abs(var - target) < 5 * target * np.sqrt(2.0 / wins.size)

    def test_summed_readout_single_record(self):
        spec = build_degenerate_array(2, 1.0, 1.0, chi=1.0, k=1.0, t_m=1.0,
                                      scheme="per-element-summed")
        grid = commensurate_grid(-8.0, 9.0, 0.02, 1.0)
        _, recs = unravel(spec, PULSE, FieldState.fock(1), grid, seed=4)
        assert len(recs) == 1 and recs[0].channel == -1


class TestPreconditions:
    def test_uniform_grid_required(self):
        spec = build_two_state(1.0, chi=1.0, k=1.0, t_m=1.0)
        grid = np.concatenate([np.arange(-8, 0, 0.01), np.arange(0, 9, 0.02)])
        with pytest.raises(ValueError, match="uniform"):
            unravel(spec, PULSE, FieldState.fock(1), grid, seed=0)

    def test_dt_cap_from_amplification(self):
        spec = build_two_state(1.0, chi=1.0, k=50.0, t_m=1.0)
        grid = commensurate_grid(-8.0, 9.0, 0.01, 1.0)   # 0.01 > 1/(10*100)
        with pytest.raises(ValueError, match="dt"):
            unravel(spec, PULSE, FieldState.fock(1), grid, seed=0)

    def test_k_zero_rejected(self):
        from photodet.model import AmplifierChannel, DetectorSpec
        base = build_two_state(1.0)
        spec = DetectorSpec(dim=2, H=base.H, L=base.L, S=base.S,
                            amplifiers=(AmplifierChannel((1,), (1.0,), rate=0.0),))
        grid = commensurate_grid(-8.0, 9.0, 0.01, 1.0)
        with pytest.raises(ValueError, match="k > 0"):
            unravel(spec, PULSE, FieldState.fock(1), grid, seed=0)

    def test_window_mode_validated(self):
        spec = build_two_state(1.0, chi=1.0, k=1.0, t_m=1.0)
        grid = commensurate_grid(-8.0, 9.0, 0.02, 1.0)
        with pytest.raises(ValueError):
            unravel(spec, PULSE, FieldState.fock(1), grid, seed=0, window="bogus")
        with pytest.raises(ValueError):
            monte_carlo(spec, PULSE, FieldState.fock(1), grid, 0, 1)


class TestEnsembleResult:
    def test_efficiency_and_stderr(self):
        spec = build_three_state(1.0, 1.0, chi=1.0, k=8.0, t_m=1.0, i_hit=0.5)
        grid = commensurate_grid(-8.0, 12.0, 1.0 / 160, 1.0)
        ens = monte_carlo(spec, PULSE, FieldState.fock(1), grid, 60, 19)
        assert 0.0 <= ens.efficiency <= 1.0
        assert ens.stderr == pytest.approx(
            np.sqrt(ens.efficiency * (1 - ens.efficiency) / 60))
        assert ens.hist_counts.sum() == sum(1 for h in ens.hits if h)
