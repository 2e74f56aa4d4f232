import numpy as np
import pytest
import scipy.linalg

from photodet.numerics import (
    devectorize,
    expm,
    expm_action,
    hamiltonian_superop,
    is_diagonal,
    is_hermitian,
    is_unitary,
    kron,
    lindblad_superop,
    ode_step_sequence,
    sandwich_superop,
    vectorize,
)
from conftest import random_complex, random_density

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)


class TestKron:
    def test_identity(self):
        assert np.array_equal(kron(np.eye(2), np.eye(2)), np.eye(4))

    def test_diagonal_structure(self):
        assert np.allclose(kron(SZ, np.eye(2)), np.diag([1, 1, -1, -1]))

    def test_index_formula(self, rng):
        a = random_complex(rng, (2, 2))
        b = random_complex(rng, (3, 3))
        out = kron(a, b)
        assert out.shape == (6, 6)
        for i, j, k, l in [(0, 1, 2, 0), (1, 0, 1, 2), (1, 1, 0, 1)]:
            assert out[i * 3 + k, j * 3 + l] == pytest.approx(a[i, j] * b[k, l])


class TestVectorize:
    def test_identity(self):
        assert np.array_equal(vectorize(np.eye(2)), [1, 0, 0, 1])

    def test_index_convention(self):
        rho = np.zeros((2, 2))
        rho[0, 1] = 1.0           # |0><1| sits at index 1*2+0 = 2
        v = vectorize(rho)
        assert v[2] == 1.0 and np.count_nonzero(v) == 1

    def test_round_trip(self, rng):
        rho = random_complex(rng, (5, 5))
        assert np.array_equal(devectorize(vectorize(rho)), rho)

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            vectorize(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            devectorize(np.zeros(5))


class TestSandwich:
    def test_identity(self):
        assert np.array_equal(sandwich_superop(np.eye(3), np.eye(3)), np.eye(9))

    def test_matches_direct_product(self, rng):
        o = random_complex(rng, (2, 2))
        q = random_complex(rng, (2, 2))
        rho = random_complex(rng, (2, 2))
        lhs = devectorize(sandwich_superop(o, q) @ vectorize(rho))
        assert np.allclose(lhs, o @ rho @ q, atol=1e-13)

    def test_bit_flip(self):
        rho0 = np.diag([1.0, 0.0]).astype(complex)
        out = sandwich_superop(SX, SX) @ vectorize(rho0)
        assert np.allclose(out, vectorize(np.diag([0.0, 1.0])))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            sandwich_superop(np.eye(2), np.eye(3))


class TestLindblad:
    def test_null_operator(self):
        assert np.array_equal(lindblad_superop(np.zeros((3, 3))), np.zeros((9, 9)))

    def test_spontaneous_decay_rates(self):
        gamma = 1.3
        op = gamma * np.array([[0, 1], [0, 0]], dtype=complex)
        rho = np.diag([0.0, 1.0]).astype(complex)
        drho = devectorize(lindblad_superop(op) @ vectorize(rho))
        assert drho[1, 1] == pytest.approx(-gamma**2)
        assert drho[0, 0] == pytest.approx(gamma**2)

    def test_trace_free(self, rng):
        op = random_complex(rng, (4, 4))
        rho = random_density(rng, 4)
        drho = devectorize(lindblad_superop(op) @ vectorize(rho))
        assert abs(np.trace(drho)) < 1e-12

    def test_hermiticity_preserved(self, rng):
        op = random_complex(rng, (3, 3))
        rho = random_density(rng, 3)
        drho = devectorize(lindblad_superop(op) @ vectorize(rho))
        assert np.max(np.abs(drho - drho.conj().T)) < 1e-12


class TestExpm:
    def test_zero(self):
        assert np.allclose(expm(np.zeros((4, 4))), np.eye(4))

    def test_diagonal(self):
        d = np.array([0.3, -1.2 + 0.5j, 2.0])
        assert np.allclose(expm(np.diag(d)), np.diag(np.exp(d)), rtol=1e-13)

    def test_nilpotent(self):
        t = 0.7
        a = np.array([[0, t], [0, 0]], dtype=complex)
        assert np.allclose(expm(a), [[1, t], [0, 1]], atol=1e-15)

    def test_inverse_property(self, rng):
        a = random_complex(rng, (6, 6))
        a *= 10.0 / np.linalg.norm(a, 2)
        assert np.allclose(expm(a) @ expm(-a), np.eye(6), atol=1e-10)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            expm(np.array([[np.inf, 0], [0, 0.0]]))


class TestExpmAction:
    def test_t_zero(self, rng):
        a = random_complex(rng, (4, 4))
        v = random_complex(rng, 4)
        assert np.array_equal(expm_action(a, v, 0.0), v)

    def test_diagonal_scaling(self):
        d = np.array([-1.0, 0.5j, 2.0])
        v = np.ones(3, dtype=complex)
        out = expm_action(np.diag(d), v, 0.7)
        assert np.allclose(out, np.exp(0.7 * d), rtol=1e-12)

    @pytest.mark.parametrize("dim", [8, 32, 64])
    def test_against_dense_expm(self, rng, dim):
        a = random_complex(rng, (dim, dim))
        a /= np.linalg.norm(a, 2)
        v = random_complex(rng, dim)
        t = 1.7
        ref = expm(a * t) @ v
        out = expm_action(a, v, t)
        assert np.max(np.abs(out - ref)) < 1e-10 * max(1.0, np.max(np.abs(ref)))


class TestOdeStepSequence:
    def test_trivial_constant(self):
        grid = np.linspace(0, 1, 11)
        y = ode_step_sequence(np.zeros((2, 2)), None, np.array([1.0, 2.0]), grid)
        assert np.allclose(y, np.tile([1.0, 2.0], (11, 1)))

    def test_exponential_decay(self):
        grid = np.arange(0, 1 + 5e-4, 1e-3)
        y = ode_step_sequence(np.array([[-1.0]]), None, np.array([1.0]), grid)
        assert abs(y[-1, 0] - np.exp(-1)) < 1e-8

    def test_driven_relaxation(self):
        grid = np.arange(0, 2 + 5e-4, 1e-3)
        y = ode_step_sequence(np.array([[-1.0]]), lambda t: np.array([1.0]),
                              np.array([0.0]), grid)
        assert np.max(np.abs(y[:, 0] - (1 - np.exp(-grid)))) < 1e-8

    def test_fourth_order_convergence(self, rng):
        a = random_complex(rng, (3, 3))
        a /= np.linalg.norm(a, 2)
        y0 = random_complex(rng, 3)
        exact = expm(a) @ y0
        errs = []
        for n in (20, 40):
            grid = np.linspace(0, 1, n + 1)
            y = ode_step_sequence(a, None, y0, grid)
            errs.append(np.max(np.abs(y[-1] - exact)))
        ratio = errs[0] / errs[1]
        assert 12 < ratio < 20   # ~16x from halving the step

    def test_matches_expm_propagation(self, rng):
        a = random_complex(rng, (4, 4))
        a /= np.linalg.norm(a, 2)
        y0 = random_complex(rng, 4)
        grid = np.arange(0, 1 + 0.005, 0.01)
        y = ode_step_sequence(a, None, y0, grid)
        assert np.max(np.abs(y[-1] - expm(a) @ y0)) < 1e-6

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            ode_step_sequence(np.eye(1), None, np.array([1.0]), np.array([]))
        with pytest.raises(ValueError):
            ode_step_sequence(np.eye(1), None, np.array([1.0]), np.array([0.0, 0.0, 1.0]))


class TestPredicates:
    def test_hermitian(self, rng):
        rho = random_density(rng, 4)
        assert is_hermitian(rho)
        assert not is_hermitian(rho + 1e-3 * 1j * np.eye(4))

    def test_unitary(self):
        th = 0.4
        u = scipy.linalg.expm(-1j * th * SX)
        assert is_unitary(u)
        assert not is_unitary(1.1 * u)

    def test_diagonal(self):
        assert is_diagonal(np.diag([1.0, 2.0]))
        assert not is_diagonal(SX)


def test_hamiltonian_superop_is_commutator(rng):
    h = random_density(rng, 3)
    rho = random_density(rng, 3)
    out = devectorize(hamiltonian_superop(h) @ vectorize(rho))
    assert np.allclose(out, -1j * (h @ rho - rho @ h), atol=1e-13)
