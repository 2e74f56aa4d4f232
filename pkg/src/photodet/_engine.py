"""Internal matter-level operator machinery.

Applies the average-dynamics generator and the field-coupling maps directly to
d x d density matrices (batched over arbitrary leading axes). Large systems
get structure-aware strategies built symbolically from the spec constituents:
diagonal-plus-factored effective Hamiltonian (diagonal H and bath anticommutator
with an SVD-factored dipole coupling), scatter-gather sparse bath jumps, and
diagonal amplifier jumps. Small systems use plain dense products. Both paths
implement the same maps and are cross-checked in the test suite.

Not a public module; everything here is reachable through the documented
surfaces of `liouvillian`, `hierarchy` and `stochastic`.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse

from .numerics import (
    Array,
    hamiltonian_superop,
    is_diagonal,
    lindblad_superop,
    sandwich_superop,
    spectral_norm,
)

DENSE_DIM_THRESHOLD = 48       # below this, plain dense products win
LOWRANK_MAX = 8                # SVD rank cap for the factored dipole coupling
BATH_COO_BUDGET = 1 << 20      # max triplet pairs for the sparse bath jump


def _svd_factor(m: Array, rmax: int = LOWRANK_MAX):
    """Return (U, Vh) with m = U @ Vh and U of width rank, or None if rank > rmax."""
    u, s, vh = np.linalg.svd(m)
    cut = s > max(1e-14 * s[0] if s.size else 0.0, 1e-14)
    r = int(np.count_nonzero(cut))
    if r == 0:
        return np.zeros((m.shape[0], 0), complex), np.zeros((0, m.shape[1]), complex)
    if r > rmax:
        return None
    return u[:, :r] * s[:r], vh[:r]


class MatterOps:
    """Precompiled application of the generator and coupling maps for one spec."""

    def __init__(self, spec, dense_threshold: int = DENSE_DIM_THRESHOLD):
        self.spec = spec
        d = spec.dim
        self.d = d
        self.h = np.asarray(spec.H, dtype=complex)
        self.l_op = np.asarray(spec.L, dtype=complex)
        self.s_op = np.asarray(spec.S, dtype=complex)
        self.s_is_identity = np.array_equal(self.s_op, np.eye(d))
        self.baths = [np.asarray(y, dtype=complex) for y in spec.baths]

        self.x_diags = np.array([ch.x_diag(d) for ch in spec.amplifiers], dtype=float)
        self.x_rates = np.array([ch.rate for ch in spec.amplifiers], dtype=float)
        if self.x_diags.size:
            self.w_amp = np.einsum(
                "c,ci,cj->ij", 2 * self.x_rates, self.x_diags, self.x_diags)
            kx = np.einsum("c,ci->i", 2 * self.x_rates, self.x_diags**2)
        else:
            self.w_amp = None
            kx = np.zeros(d)

        ky = sum((y.conj().T @ y for y in self.baths), np.zeros((d, d), complex))
        self.k_total = self.l_op.conj().T @ self.l_op + ky + np.diag(kx)
        self.heff = self.h - 0.5j * self.k_total
        self._heff_dagger = self.heff.conj().T
        self._l_dagger = self.l_op.conj().T

        self._bound = (
            2 * spectral_norm(self.h)
            + 4 * spectral_norm(self.l_op) ** 2
            + 4 * spectral_norm(ky)
            + 4 * (np.max(kx) if kx.size else 0.0)
        )

        self.dense_mode = d <= dense_threshold

        # bath jumps: scatter-gather sparse superoperator whenever the bath
        # operators are sparse, stacked matmuls otherwise
        self._bath_coo = None
        self._bath_stack = None
        self._bath_stack_h = None
        if self.baths:
            pairs = sum(np.count_nonzero(y) ** 2 for y in self.baths)
            if pairs <= BATH_COO_BUDGET and pairs < len(self.baths) * d**2:
                self._bath_coo = self._build_bath_coo()
            else:
                self._bath_stack = np.array(self.baths)
                self._bath_stack_h = np.swapaxes(self._bath_stack, -1, -2).conj()

        # dipole coupling: SVD factorization for the structured path
        self._l_fac = None
        self._l_nonzero = bool(np.count_nonzero(self.l_op))
        if not self.dense_mode and self._l_nonzero:
            fac = _svd_factor(self.l_op)
            if fac is not None:
                lu, lvh = fac
                self._l_fac = (lu, lvh, lu.conj().T, lvh.conj().T)  # Lu, LvH, LuH, Lv

        # effective Hamiltonian: diagonal + factored-L†L form when H and the
        # bath anticommutator are diagonal and L factors
        self._heff_diag = None
        if not self.dense_mode and self._l_fac is not None \
                and is_diagonal(self.h, 0.0) and is_diagonal(ky, 0.0):
            lu, lvh, luh, lv = self._l_fac
            self._heff_diag = np.diag(self.h) - 0.5j * (np.diag(ky) + kx)
            self._heff_core = luh @ lu                    # r x r, Hermitian PSD

    def _build_bath_coo(self):
        d = self.d
        rows, cols, vals = [], [], []
        for y in self.baths:
            r, c = np.nonzero(y)
            v = y[r, c]
            # (Y rho Y†)[r1, r2] += v1 conj(v2) rho[c1, c2]
            rows.append(np.repeat(r, r.size) * d + np.tile(r, r.size))
            cols.append(np.repeat(c, c.size) * d + np.tile(c, c.size))
            vals.append(np.repeat(v, v.size) * np.tile(v.conj(), v.size))
        return scipy.sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(d * d, d * d))

    # -- appliers (rho has shape (..., d, d)) --------------------------------

    def heff_commutator(self, rho: Array) -> Array:
        """-i (Heff rho - rho Heff†), the non-jump part of the generator."""
        if self._heff_diag is None:
            return -1j * (self.heff @ rho - rho @ self._heff_dagger)
        dv = self._heff_diag
        lu, lvh, luh, lv = self._l_fac
        core = self._heff_core
        left = dv[:, None] * rho - 0.5j * (lv @ (core @ (lvh @ rho)))
        right = rho * dv.conj()[None, :] + 0.5j * (((rho @ lv) @ core) @ lvh)
        return -1j * (left - right)

    def _l_jump(self, rho: Array):
        if not self._l_nonzero:
            return None
        if self._l_fac is None:
            return (self.l_op @ rho) @ self._l_dagger
        lu, lvh, luh, lv = self._l_fac
        return lu @ ((lvh @ rho @ lv) @ luh)

    def _bath_jump(self, rho: Array):
        if not self.baths:
            return None
        if self._bath_coo is not None:
            shape = rho.shape
            flat = rho.reshape(-1, self.d * self.d)
            out = self._bath_coo.dot(flat.T).T
            return np.ascontiguousarray(out).reshape(shape)
        t = np.matmul(self._bath_stack, rho[..., None, :, :])
        return np.matmul(t, self._bath_stack_h).sum(axis=-3)

    def jumps(self, rho: Array) -> Array:
        out = self.jumps_no_amp(rho)
        if self.w_amp is not None:
            amp = self.w_amp * rho
            out = amp if out is None else out + amp
        if out is None:
            out = np.zeros_like(rho)
        return out

    def jumps_no_amp(self, rho: Array):
        """Dipole and bath jump terms only (the amplifier jump is realized by
        the squared noise term of the Kraus-form stochastic step)."""
        out = None
        for piece in (self._l_jump(rho), self._bath_jump(rho)):
            if piece is not None:
                out = piece if out is None else out + piece
        return out

    def apply_generator(self, rho: Array) -> Array:
        """Action of the full vectorized generator, in d x d matrix form."""
        return self.heff_commutator(rho) + self.jumps(rho)

    def lplus(self, rho: Array) -> Array:
        """[S rho, L†], the raising field coupling."""
        t = rho if self.s_is_identity else self.s_op @ rho
        if self._l_fac is None:
            return t @ self._l_dagger - self._l_dagger @ t
        lu, lvh, luh, lv = self._l_fac
        return (t @ lv) @ luh - lv @ (luh @ t)

    def lminus(self, rho: Array) -> Array:
        """[L, rho S†], the lowering field coupling."""
        t = rho if self.s_is_identity else rho @ self.s_op.conj().T
        if self._l_fac is None:
            return self.l_op @ t - t @ self.l_op
        lu, lvh, luh, lv = self._l_fac
        return lu @ (lvh @ t) - (t @ lu) @ lvh

    def sscatter(self, rho: Array) -> Array:
        """S rho S† - rho; identically zero when S is the identity."""
        if self.s_is_identity:
            return np.zeros_like(rho)
        return self.s_op @ rho @ self.s_op.conj().T - rho

    def expect_channels(self, rho: Array) -> Array:
        """<X_i> for every amplifier channel; shape (..., n_channels)."""
        pops = np.einsum("...jj->...j", rho).real
        if not self.x_diags.size:
            return np.zeros(pops.shape[:-1] + (0,))
        return pops @ self.x_diags.T

    def norm_bound(self) -> float:
        """Upper estimate of the generator's spectral norm (grid guidance)."""
        return self._bound

    # -- superoperator assembly ----------------------------------------------

    def dense_generator(self) -> Array:
        a = hamiltonian_superop(self.h) + lindblad_superop(self.l_op)
        for y in self.baths:
            a = a + lindblad_superop(y)
        for rate, xd in zip(self.x_rates, self.x_diags):
            a = a + lindblad_superop(np.sqrt(2 * rate) * np.diag(xd).astype(complex))
        return a

    def dense_lplus(self) -> Array:
        ld = self._l_dagger
        return sandwich_superop(self.s_op, ld) - sandwich_superop(ld @ self.s_op, np.eye(self.d))

    def dense_lminus(self) -> Array:
        sd = self.s_op.conj().T
        return sandwich_superop(self.l_op, sd) - sandwich_superop(np.eye(self.d), sd @ self.l_op)

    def dense_sscatter(self) -> Array:
        return sandwich_superop(self.s_op, self.s_op.conj().T) - np.eye(self.d**2)

    def sparse_generator(self) -> scipy.sparse.csr_matrix:
        """Structural sparse form of the generator (same values as dense)."""
        d = self.d

        def sw(o, q):
            return scipy.sparse.kron(scipy.sparse.csr_matrix(q).T,
                                     scipy.sparse.csr_matrix(o), format="csr")

        def diss(o):
            oc = scipy.sparse.csr_matrix(o)
            oo = (oc.conj().T @ oc).toarray()
            return sw(o, o.conj().T) - 0.5 * sw(oo, np.eye(d)) - 0.5 * sw(np.eye(d), oo)

        a = -1j * (sw(self.h, np.eye(d)) - sw(np.eye(d), self.h))
        a = a + diss(self.l_op)
        for y in self.baths:
            a = a + diss(y)
        for rate, xd in zip(self.x_rates, self.x_diags):
            a = a + diss(np.sqrt(2 * rate) * np.diag(xd).astype(complex))
        a = scipy.sparse.csr_matrix(a)
        a.eliminate_zeros()
        return a
