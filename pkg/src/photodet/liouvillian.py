"""Vectorized generator, Green's functions, spectral analysis, Dyson expansion.

The generator A acts on column-stacked density vectors (see `numerics`). It is
exposed three ways: matrix-free application through the structured engine (any
dimension), a structural sparse matrix, and a dense matrix for systems small
enough to exponentiate (d^2 entries per side capped). Green's functions
exploit detected invariant blocks when available.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
import scipy.sparse
import scipy.sparse.csgraph
import scipy.sparse.linalg

from ._engine import MatterOps
from .model import DetectorSpec
from .numerics import Array, devectorize, expm, vectorize

DENSE_SUPEROP_CAP = 4500      # largest d^2 for which dense A is materialized
DENSE_SPECTRUM_CAP = 4096
PERSISTENT_REL_TOL = 1e-10


class Liouvillian:
    """Vectorized average-dynamics generator for one detector specification."""

    def __init__(self, spec: DetectorSpec):
        self.spec = spec
        self.ops = MatterOps(spec)
        self.d = spec.dim
        self.dim = spec.dim**2
        self.block_structure: Optional[list[list[int]]] = None
        self._dense_a: Optional[Array] = None
        self._sparse_a = None

    # -- matrix views --------------------------------------------------------

    def _require_dense(self) -> Array:
        if self._dense_a is None:
            if self.dim > DENSE_SUPEROP_CAP:
                raise ValueError(
                    f"dense generator of dimension {self.dim} exceeds the cap "
                    f"{DENSE_SUPEROP_CAP}; use apply()/sparse_matrix() instead")
            self._dense_a = self.ops.dense_generator()
        return self._dense_a

    @property
    def A(self) -> Array:
        return self._require_dense()

    @property
    def Lplus(self) -> Array:
        return self.ops.dense_lplus()

    @property
    def Lminus(self) -> Array:
        return self.ops.dense_lminus()

    @property
    def Ssuper(self) -> Array:
        return self.ops.dense_sscatter()

    def sparse_matrix(self) -> scipy.sparse.csr_matrix:
        if self._sparse_a is None:
            self._sparse_a = self.ops.sparse_generator()
        return self._sparse_a

    def apply(self, rho_vec: Array) -> Array:
        """Matrix-free A @ rho_vec for a vectorized density."""
        return vectorize(self.ops.apply_generator(devectorize(rho_vec)))

    def norm_bound(self) -> float:
        return self.ops.norm_bound()

    def trace_defect(self, n_probes: int = 12, seed: int = 0) -> float:
        """max |Tr(A[rho])| over random Hermitian probes (trace preservation)."""
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n_probes):
            m = rng.normal(size=(self.d, self.d)) + 1j * rng.normal(size=(self.d, self.d))
            rho = m @ m.conj().T
            rho /= np.trace(rho).real
            worst = max(worst, abs(np.trace(self.ops.apply_generator(rho))))
        return float(worst)


def build(spec: DetectorSpec) -> Liouvillian:
    """Assemble the vectorized generator and coupling maps for ``spec``."""
    spec.validate()
    return Liouvillian(spec)


def greens_function(liou: Liouvillian, t: float) -> Array:
    """exp(A t); uses the block partition when one has been detected."""
    if t < 0:
        raise ValueError(f"Green's function needs t >= 0, got {t}")
    if liou.block_structure is not None and len(liou.block_structure) > 1:
        a = liou.sparse_matrix()
        out = np.zeros((liou.dim, liou.dim), dtype=complex)
        for block in liou.block_structure:
            idx = np.asarray(block)
            sub = a[np.ix_(idx, idx)].toarray()
            out[np.ix_(idx, idx)] = expm(sub * t)
        return out
    return expm(liou.A * t)


def propagate_vector(liou: Liouvillian, rho_vec: Array, t: float, *,
                     steps_per_unit_norm: float = 4.0) -> Array:
    """exp(A t) @ rho_vec by RK4 on the matrix-free generator (any dimension)."""
    if t < 0:
        raise ValueError("propagation time must be >= 0")
    if t == 0:
        return np.asarray(rho_vec, dtype=complex).copy()
    bound = max(liou.norm_bound(), 1e-12)
    n = max(2, int(math.ceil(t * bound * steps_per_unit_norm)))
    h = t / n
    rho = devectorize(rho_vec)
    for _ in range(n):
        k1 = liou.ops.apply_generator(rho)
        k2 = liou.ops.apply_generator(rho + (h / 2) * k1)
        k3 = liou.ops.apply_generator(rho + (h / 2) * k2)
        k4 = liou.ops.apply_generator(rho + h * k3)
        rho = rho + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    return vectorize(rho)


def _classify(eig: complex, scale: float) -> str:
    tol = PERSISTENT_REL_TOL * max(scale, 1.0)
    if eig.real >= -tol and abs(eig.imag) <= tol:
        return "persistent"
    if abs(eig.imag) <= tol:
        return "decaying"
    return "oscillatory-decaying"


def spectrum(liou: Liouvillian) -> list[tuple[complex, str]]:
    """All eigenvalues of A with persistence classification (dense systems)."""
    if liou.dim > DENSE_SPECTRUM_CAP:
        raise ValueError(
            f"full spectrum of dimension {liou.dim} is not supported; "
            "use persistent_modes() for the near-zero part")
    try:
        eigs = np.linalg.eigvals(liou.A)
    except np.linalg.LinAlgError as err:  # pragma: no cover - library failure
        raise RuntimeError(f"eigensolver failed: {err}") from err
    scale = liou.norm_bound()
    return [(complex(e), _classify(e, scale)) for e in eigs]


def persistent_modes(liou: Liouvillian, k: int = 8) -> list[complex]:
    """Near-zero eigenvalues (persistent part of the spectrum). Works at any
    dimension via sparse shift-invert when the dense path is unavailable."""
    if liou.dim <= DENSE_SPECTRUM_CAP:
        return [e for e, lab in spectrum(liou) if lab == "persistent"]
    a = liou.sparse_matrix().tocsc()
    shift = -1e-9 * max(liou.norm_bound(), 1.0)
    vals = scipy.sparse.linalg.eigs(a, k=min(k, liou.dim - 2), sigma=shift,
                                    return_eigenvectors=False)
    scale = liou.norm_bound()
    return [complex(v) for v in vals if _classify(complex(v), scale) == "persistent"]


def detect_blocks(liou: Liouvillian) -> list[list[int]]:
    """Invariant blocks: connected components of the structural sparsity
    pattern of A (exact zeros only). Stored on the Liouvillian and used by
    `greens_function`."""
    a = liou.sparse_matrix()
    sym = (abs(a) + abs(a).T).tocsr()
    n_comp, labels = scipy.sparse.csgraph.connected_components(sym, directed=False)
    blocks = [[] for _ in range(n_comp)]
    for i, lab in enumerate(labels):
        blocks[lab].append(i)
    blocks.sort(key=lambda b: (len(b), b[0]))
    liou.block_structure = blocks
    return blocks


def dyson_greens(liou: Optional[Liouvillian], split: tuple[Array, Array], t: float,
                 order: int, *, steps: int = 400) -> Array:
    """Truncated Dyson series for exp((A0 + A1) t) with diagonal A0.

    g(t) = exp(A0 t) is exact; successive terms fold in A1 through repeated
    convolution on a shared uniform grid (trapezoidal, stepped with the exact
    diagonal semigroup). When ``liou`` is given, A0 + A1 is checked against
    its dense generator.
    """
    a0, a1 = (np.asarray(m, dtype=complex) for m in split)
    if order < 0:
        raise ValueError("order must be >= 0")
    if np.max(np.abs(a0 - np.diag(np.diag(a0)))) > 0:
        raise ValueError("A0 must be diagonal")
    if liou is not None:
        total = liou.A
        if np.max(np.abs((a0 + a1) - total)) > 1e-12 * max(1.0, np.max(np.abs(total))):
            raise ValueError("A0 + A1 does not reproduce the generator")
    d0 = np.diag(a0)
    m = a0.shape[0]
    if t == 0:
        return np.eye(m, dtype=complex)
    h = t / steps
    gh = np.exp(d0 * h)                      # one-step diagonal propagator
    gs = np.exp(np.outer(np.arange(steps + 1) * h, d0))  # g(t_k) diagonals

    total_t = np.diag(gs[-1]).astype(complex)
    term = gs[:, :, None] * np.eye(m)[None, :, :]   # T_0(t_k) = g(t_k)
    for _ in range(order):
        f = a1[None, :, :] @ term                   # A1 T_m(t_k)
        nxt = np.zeros_like(term)
        acc = np.zeros((m, m), dtype=complex)
        for k in range(steps):
            acc = gh[:, None] * (acc + (h / 2) * f[k]) + (h / 2) * f[k + 1]
            nxt[k + 1] = acc
        term = nxt
        total_t = total_t + term[-1]
    return total_t
