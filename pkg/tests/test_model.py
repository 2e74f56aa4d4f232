import numpy as np
import pytest

from photodet import hierarchy, model
from photodet.model import (
    AmplifierChannel,
    DetectorSpec,
    FieldState,
    add_dephasing,
    add_reset,
    build_band,
    build_degenerate_array,
    build_quadratic,
    build_three_state,
    build_two_state,
    custom_pulse,
    field_from_dict,
    field_to_dict,
    gaussian_pulse,
    pulse_from_dict,
    pulse_to_dict,
    spec_from_dict,
    spec_to_dict,
    square_pulse,
)
from photodet.numerics import is_hermitian, is_unitary


def quad_norm(pulse, n=200001):
    lo, hi = pulse.support()
    ts = np.linspace(lo, hi, n)
    return np.trapezoid(pulse.intensity(ts), ts)


class TestPulses:
    def test_gaussian_normalized(self):
        assert quad_norm(gaussian_pulse(1.0)) == pytest.approx(1.0, abs=1e-6)
        assert quad_norm(gaussian_pulse(0.3, center=5.0)) == pytest.approx(1.0, abs=1e-6)

    def test_gaussian_finite_support(self):
        p = gaussian_pulse(1.0)
        assert p.amplitude(8.5) == 0.0
        assert p.amplitude(-9.0) == 0.0
        assert abs(p.amplitude(7.99)) > 0

    def test_gaussian_sigma_is_jitter_floor(self):
        assert gaussian_pulse(1.3).sigma() == pytest.approx(1.3)

    def test_invalid_width(self):
        with pytest.raises(ValueError):
            gaussian_pulse(0.0)
        with pytest.raises(ValueError):
            square_pulse(-1.0)

    def test_square_normalized(self):
        p = square_pulse(2.0, center=1.0)
        assert quad_norm(p) == pytest.approx(1.0, abs=1e-6)
        assert p.amplitude(1.0) == pytest.approx(2.0**-0.5)

    def test_custom_renormalized(self):
        ts = np.linspace(-3, 3, 61)
        vals = 5.0 * np.exp(-ts**2)    # deliberately unnormalized
        p = custom_pulse(ts, vals)
        assert quad_norm(p) == pytest.approx(1.0, abs=1e-6)

    def test_custom_needs_monotone_samples(self):
        with pytest.raises(ValueError):
            custom_pulse([0, 1, 1, 2], [1, 1, 1, 1])


class TestFieldState:
    def test_fock(self):
        f = FieldState.fock(2)
        assert f.n_max == 2
        assert np.trace(f.coeffs) == pytest.approx(1.0)
        assert f.purity() == pytest.approx(1.0)

    def test_from_coeffs_validation(self):
        good = np.diag([0.5, 0.5]).astype(complex)
        FieldState.from_coeffs(good)
        with pytest.raises(ValueError):
            FieldState.from_coeffs(np.array([[0.5, 0.3], [0.1, 0.5]]))
        with pytest.raises(ValueError):
            FieldState.from_coeffs(np.diag([0.7, 0.7]))
        with pytest.raises(ValueError):
            FieldState.from_coeffs(np.array([[1.5, 0], [0, -0.5]]))

    def test_negative_photon_number(self):
        with pytest.raises(ValueError):
            FieldState.fock(-1)


class TestAmplifierChannel:
    def test_projector_and_operator(self):
        ch = AmplifierChannel((1, 2), (0.5, 0.5), rate=2.0)
        x = ch.operator(4)
        assert is_hermitian(x) and np.allclose(np.diag(x), [0, 0.5, 0.5, 0])
        p = np.diag(ch.projector_diag(4))
        assert np.allclose(p @ p, p)       # idempotent projector

    def test_min_dwell_consistency(self):
        ch = AmplifierChannel((1,), (2.0,), rate=1.0, t_m=10.0, i_hit=0.5)
        assert ch.min_dwell() == pytest.approx(0.5 * 10.0 / 2.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            AmplifierChannel((1, 1), (1.0, 1.0), rate=1.0)
        with pytest.raises(ValueError):
            AmplifierChannel((1,), (1.0,), rate=-1.0)
        with pytest.raises(ValueError):
            AmplifierChannel((1,), (1.0, 2.0), rate=1.0)


class TestTwoState:
    def test_matrices(self):
        g, w1, chi = 1.5, 2.0, 0.7
        spec = build_two_state(g, w1, chi, k=1.0)
        assert np.allclose(spec.L, [[0, g], [0, 0]])
        assert np.allclose(spec.H, np.diag([0, w1]))
        assert np.allclose(spec.amplifiers[0].operator(2), np.diag([0, chi]))
        assert np.array_equal(spec.S, np.eye(2))

    def test_ground_state_stationary(self):
        assert build_two_state(1.0).is_stationary()

    def test_decoupled_limit(self):
        spec = build_two_state(0.0)
        pulse = gaussian_pulse(0.5)
        grid = hierarchy.default_grid(spec, pulse)
        _, traj = hierarchy.propagate(spec, pulse, FieldState.fock(1), grid)
        assert np.max(np.abs(traj.populations - traj.populations[0])) < 1e-12

    def test_invalid_rates(self):
        with pytest.raises(ValueError):
            build_two_state(1.0, k=0.0)


class TestThreeState:
    def test_matrices(self):
        g, G = 1.0, 2.0
        spec = build_three_state(g, G, omega1=0.5, omega_c=0.1)
        expect_l = np.zeros((3, 3)); expect_l[0, 1] = g
        expect_y = np.zeros((3, 3)); expect_y[2, 1] = G
        assert np.allclose(spec.L, expect_l)
        assert np.allclose(spec.baths[0], expect_y)
        assert np.allclose(spec.H, np.diag([0, 0.5, 0.1]))

    def test_no_shelving_limit(self):
        """Gamma -> 0 reduces to two-state dynamics: C never populates.

        The shelf monitor adds no coherence damping, so the matching two-state
        reference carries negligible amplification back-action."""
        spec = build_three_state(1.0, 0.0)
        pulse = gaussian_pulse(1.0)
        grid = hierarchy.default_grid(spec, pulse)
        _, traj = hierarchy.propagate(spec, pulse, FieldState.fock(1), grid)
        two = build_two_state(1.0, chi=1e-9, k=1.0)
        _, traj2 = hierarchy.propagate(two, pulse, FieldState.fock(1), grid)
        assert np.max(np.abs(traj.populations[:, 2])) < 1e-12
        assert np.max(np.abs(traj.populations[:, 1] - traj2.populations[:, 1])) < 1e-9


class TestDephasingAndReset:
    def test_zero_rate_no_effect(self):
        spec = build_three_state(1.0, 1.0)
        spec_k = add_dephasing(spec, 0.0, 1)
        pulse = gaussian_pulse(1.0)
        grid = hierarchy.default_grid(spec_k, pulse)
        _, t0 = hierarchy.propagate(spec, pulse, FieldState.fock(1), grid)
        _, t1 = hierarchy.propagate(spec_k, pulse, FieldState.fock(1), grid)
        assert np.max(np.abs(t0.populations - t1.populations)) < 1e-12

    def test_dephasing_preserves_undriven_populations(self):
        rho0 = np.diag([0.4, 0.6, 0.0]).astype(complex)
        base = build_three_state(1.0, 0.0)
        spec = DetectorSpec(dim=3, H=base.H, L=np.zeros((3, 3)), S=np.eye(3),
                            amplifiers=base.amplifiers, initial_state=rho0)
        spec = add_dephasing(spec, 2.0, 1)
        pulse = gaussian_pulse(1.0)
        grid = hierarchy.default_grid(spec, pulse)
        _, traj = hierarchy.propagate(spec, pulse, FieldState.fock(0), grid,
                                      stability_check=True)
        assert np.max(np.abs(traj.populations - traj.populations[0])) < 1e-10

    def test_reset_appends_bath(self):
        spec = add_reset(build_three_state(1.0, 1.0), 0.5, 2, 0)
        assert len(spec.baths) == 2
        assert spec.baths[1][0, 2] == pytest.approx(0.5)

    def test_index_errors(self):
        spec = build_three_state(1.0, 1.0)
        with pytest.raises(ValueError):
            add_dephasing(spec, 1.0, 5)
        with pytest.raises(ValueError):
            add_reset(spec, 1.0, 0, 7)


class TestQuadratic:
    def test_zero_angle_is_identity(self):
        spec = build_quadratic(0.0, (1, 0, 0))
        assert np.allclose(spec.S, np.eye(2))
        assert np.count_nonzero(spec.L) == 0

    def test_z_axis_no_transfer(self):
        spec = build_quadratic(np.pi, (0, 0, 1))
        pulse = gaussian_pulse(1.0)
        grid = hierarchy.default_grid(spec, pulse)
        _, traj = hierarchy.propagate(spec, pulse, FieldState.fock(1), grid)
        assert np.max(traj.populations[:, 1]) < 1e-12

    def test_non_unit_axis_rejected(self):
        with pytest.raises(ValueError):
            build_quadratic(1.0, (1, 1, 0))


class TestDegenerateArray:
    def test_single_element_reduces_to_three_state(self):
        arr = build_degenerate_array(1, 1.2, 0.8, chi=0.5, k=1.0)
        ref = build_three_state(1.2, 0.8, chi=0.5, k=1.0)
        assert np.allclose(arr.L, ref.L)
        assert np.allclose(arr.baths[0], ref.baths[0])
        from photodet.liouvillian import build, spectrum
        ea = sorted(np.round([e for e, _ in spectrum(build(arr))], 9).tolist(),
                    key=lambda z: (z.real, z.imag))
        er = sorted(np.round([e for e, _ in spectrum(build(ref))], 9).tolist(),
                    key=lambda z: (z.real, z.imag))
        assert ea == er

    def test_collective_coupling(self):
        spec = build_degenerate_array(2, 1.0, 1.0)
        # L lowers each element: entries gamma at |00><10| and |00><01|
        assert spec.L[0, 3] == pytest.approx(1.0)   # |00><10|
        assert spec.L[0, 1] == pytest.approx(1.0)   # |00><01|

    def test_schemes(self):
        single = build_degenerate_array(2, 1.0, 1.0, scheme="single-combined")
        indiv = build_degenerate_array(2, 1.0, 1.0, scheme="per-element-individual")
        summed = build_degenerate_array(2, 1.0, 1.0, scheme="per-element-summed")
        assert len(single.amplifiers) == 1 and len(single.amplifiers[0].levels) > 1
        assert len(indiv.amplifiers) == 2 and not indiv.summed_readout
        assert len(summed.amplifiers) == 2 and summed.summed_readout

    def test_size_cap(self):
        with pytest.raises(ValueError):
            build_degenerate_array(5, 1.0, 1.0)
        with pytest.raises(ValueError):
            build_degenerate_array(0, 1.0, 1.0)


class TestBand:
    def test_narrow_single_state_matches_two_state(self):
        spec_b = build_band(1, 1.0, ("lorentzian", 1e-6), chi=0.7, k=1.0)
        spec_2 = build_two_state(1.0, chi=0.7, k=1.0)
        pulse = gaussian_pulse(1.0)
        grid = hierarchy.default_grid(spec_2, pulse)
        _, tb = hierarchy.propagate(spec_b, pulse, FieldState.fock(1), grid)
        _, t2 = hierarchy.propagate(spec_2, pulse, FieldState.fock(1), grid)
        assert np.max(np.abs(tb.populations - t2.populations)) < 1e-8

    def test_lorentzian_placement(self):
        from photodet.model import lorentzian_band_frequencies
        w = lorentzian_band_frequencies(101, zeta=2.0)   # scale a = 2
        assert w[50] == pytest.approx(0.0, abs=1e-12)    # median state on center
        assert np.max(w) <= 20 * 2.0 + 1e-12             # truncation
        assert np.allclose(w, -w[::-1])                  # symmetric

    def test_shelved_needs_gamma(self):
        with pytest.raises(ValueError):
            build_band(4, 1.0, ("lorentzian", 1.0), amplify="shelved-C")

    def test_custom_frequencies(self):
        spec = build_band(3, 1.0, ("custom", [-1.0, 0.0, 1.0]))
        assert np.allclose(np.diag(spec.H), [0, -1, 0, 1])


@pytest.mark.parametrize("make", [
    lambda: build_two_state(1.0, 0.3, 0.5, 1.0),
    lambda: build_three_state(1.0, 2.0, 0.0, 0.0, 1.0, 2.0),
    lambda: add_dephasing(build_three_state(1.0, 1.0), 0.7, 1),
    lambda: add_reset(build_three_state(1.0, 1.0), 0.3, 2, 0),
    lambda: build_quadratic(1.2, (0.6, 0.8, 0.0)),
    lambda: build_degenerate_array(3, 1.0, np.sqrt(3.0)),
    lambda: build_band(16, 0.5, ("lorentzian", 1.0), Gamma=1.0, amplify="shelved-C"),
    lambda: build_band(8, 0.5, ("lorentzian", 1.0), amplify="band-direct"),
])
def test_builder_invariants(make):
    spec = make()
    spec.validate()
    assert is_hermitian(spec.H)
    assert is_unitary(spec.S)
    for ch in spec.amplifiers:
        p = np.diag(ch.projector_diag(spec.dim))
        assert np.allclose(p @ p, p)


class TestSerialization:
    def test_pulse_round_trip(self):
        for p in (gaussian_pulse(1.5, 0.3, 2.0), square_pulse(2.0, 1.0)):
            q = pulse_from_dict(pulse_to_dict(p))
            assert q.shape == p.shape and q.width == p.width and q.center == p.center

    def test_field_round_trip(self):
        f = FieldState.fock(2)
        g = field_from_dict(field_to_dict(f))
        assert np.allclose(f.coeffs, g.coeffs)
        assert field_from_dict({"fock": 1}).n_max == 1

    def test_spec_round_trip_matrices(self):
        spec = build_three_state(1.0, 2.0, 0.1, 0.0, 0.5, 1.5)
        spec2 = spec_from_dict(spec_to_dict(spec))
        assert np.allclose(spec.H, spec2.H)
        assert np.allclose(spec.L, spec2.L)
        assert np.allclose(spec.baths[0], spec2.baths[0])
        assert spec.amplifiers[0].rate == spec2.amplifiers[0].rate

    def test_spec_from_builder_config(self):
        spec = spec_from_dict({"builder": "two_state",
                               "params": {"gamma": 1.0, "chi": 0.5, "k": 2.0}})
        assert spec.dim == 2 and spec.amplifiers[0].rate == 2.0
        with pytest.raises(ValueError):
            spec_from_dict({"builder": "not_a_builder"})
        with pytest.raises(ValueError):
            spec_from_dict({})
