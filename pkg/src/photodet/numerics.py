"""Dense complex linear algebra and integration primitives.

Matrices and vectors are plain ``numpy.ndarray`` (complex128). A density matrix
``rho`` of dimension n is flattened column-by-column, ``vec[i*n + j] = rho[j, i]``,
so that a sandwich ``O rho Q`` becomes the matrix ``(Q^T kron O)`` acting on the
flattened vector.

All functions are pure; nothing here keeps state.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

Array = np.ndarray

MACHINE_TOL = 1e-13


def _as_square(m: Array, name: str = "matrix") -> Array:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    return m


def is_hermitian(m: Array, tol: float = 1e-10) -> bool:
    m = _as_square(m)
    return bool(np.max(np.abs(m - m.conj().T)) <= tol * max(1.0, np.max(np.abs(m))))


def is_unitary(m: Array, tol: float = 1e-10) -> bool:
    m = _as_square(m)
    return bool(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))) <= tol)


def is_diagonal(m: Array, tol: float = 1e-10) -> bool:
    m = _as_square(m)
    off = m - np.diag(np.diag(m))
    return bool(np.max(np.abs(off)) <= tol * max(1.0, np.max(np.abs(m))))


def kron(a: Array, b: Array) -> Array:
    """Kronecker product, ``(a kron b)[i*br + k, j*bc + l] = a[i, j] b[k, l]``."""
    return np.kron(np.asarray(a), np.asarray(b))


def vectorize(rho: Array) -> Array:
    """Flatten a square matrix column-by-column: ``out[i*n + j] = rho[j, i]``."""
    rho = _as_square(rho, "rho")
    return rho.flatten(order="F")


def devectorize(v: Array) -> Array:
    """Inverse of :func:`vectorize`."""
    v = np.asarray(v)
    if v.ndim != 1:
        raise ValueError(f"expected a vector, got shape {v.shape}")
    n = int(round(np.sqrt(v.size)))
    if n * n != v.size:
        raise ValueError(f"length {v.size} is not a perfect square")
    return v.reshape((n, n), order="F")


def sandwich_superop(o: Array, q: Array) -> Array:
    """Matrix of ``rho -> o @ rho @ q`` on vectorized densities: ``q.T kron o``."""
    o = _as_square(o, "o")
    q = _as_square(q, "q")
    if o.shape != q.shape:
        raise ValueError(f"dimension mismatch: {o.shape} vs {q.shape}")
    return np.kron(q.T, o)


def hamiltonian_superop(h: Array) -> Array:
    """Matrix of ``rho -> -i [h, rho]`` on vectorized densities."""
    h = _as_square(h, "h")
    eye = np.eye(h.shape[0])
    return -1j * (sandwich_superop(h, eye) - sandwich_superop(eye, h))


def lindblad_superop(o: Array) -> Array:
    """Matrix of the dissipator ``rho -> o rho o† - (o†o rho + rho o†o)/2``."""
    o = _as_square(o, "o")
    od = o.conj().T
    oo = od @ o
    eye = np.eye(o.shape[0])
    return (
        sandwich_superop(o, od)
        - 0.5 * sandwich_superop(oo, eye)
        - 0.5 * sandwich_superop(eye, oo)
    )


def expm(a: Array) -> Array:
    """Matrix exponential (scaling-and-squaring with a Padé-13 rational core)."""
    a = _as_square(a, "a")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix exponential of non-finite entries")
    return scipy.linalg.expm(a)


def expm_action(a: Array, v: Array, t: float) -> Array:
    """``expm(a*t) @ v`` without forming the full exponential."""
    a = _as_square(a, "a")
    v = np.asarray(v)
    if v.shape[0] != a.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} acting on {v.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix exponential of non-finite entries")
    if t == 0.0:
        return v.astype(complex, copy=True)
    return scipy.sparse.linalg.expm_multiply(a * t, v.astype(complex))


def ode_step_sequence(
    generator: Array | Callable[[float], Array],
    inhomogeneity: Callable[[float], Array] | None,
    y0: Array,
    grid: Sequence[float],
) -> Array:
    """Classical 4th-order Runge-Kutta for ``dy/dt = A(t) y + b(t)`` on a grid.

    ``generator`` is either a constant matrix or a callable ``t -> matrix``;
    ``inhomogeneity`` is ``None`` or a callable ``t -> vector``. Returns the
    solution at every grid point, shape ``(len(grid), len(y0))``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("grid must be a non-empty 1-d array")
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    y = np.asarray(y0, dtype=complex).copy()

    if callable(generator):
        gen = generator
    else:
        a_const = np.asarray(generator, dtype=complex)
        gen = lambda t: a_const  # noqa: E731

    if inhomogeneity is None:
        rhs = lambda t, yy: gen(t) @ yy  # noqa: E731
    else:
        rhs = lambda t, yy: gen(t) @ yy + inhomogeneity(t)  # noqa: E731

    out = np.empty((grid.size, y.size), dtype=complex)
    out[0] = y
    for i in range(grid.size - 1):
        t, h = grid[i], grid[i + 1] - grid[i]
        k1 = rhs(t, y)
        k2 = rhs(t + h / 2, y + h / 2 * k1)
        k3 = rhs(t + h / 2, y + h / 2 * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i + 1] = y
    return out


def spectral_norm(m: Array) -> float:
    """Largest singular value."""
    m = np.asarray(m)
    if m.size == 0:
        return 0.0
    return float(np.linalg.norm(m, 2))
