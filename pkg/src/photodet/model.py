"""Detector specifications, pulse envelopes, field states and architecture builders.

Conventions
-----------
Times in ns, rates in 1/ns, couplings in sqrt(1/ns). All dynamics run in the
frame rotating at the pulse carrier: the diagonal of ``H`` holds detunings from
the carrier (0 = resonant) and envelopes enter without explicit carrier phases.
``PulseEnvelope.carrier`` is retained for bookkeeping and serialization only.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .numerics import Array, is_hermitian, is_unitary, spectral_norm

GAUSSIAN_SUPPORT_SIGMAS = 8.0
MAX_ARRAY_ELEMENTS = 4


# ---------------------------------------------------------------------------
# pulses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PulseEnvelope:
    """Temporal profile E(t) of the single-mode wavepacket, normalized to
    ``int |E(t)|^2 dt = 1`` over its (finite) support."""

    shape: str                      # 'gaussian' | 'square' | 'custom'
    center: float                   # t_c (ns)
    width: float                    # sigma_E for gaussian, full width for square (ns)
    carrier: float = 0.0            # omega_E (rad/ns), bookkeeping only
    samples: Optional[tuple] = None  # (times, values) for custom shapes
    _spline: object = field(default=None, repr=False, compare=False)

    def support(self) -> tuple[float, float]:
        if self.shape == "gaussian":
            w = GAUSSIAN_SUPPORT_SIGMAS * self.width
            return (self.center - w, self.center + w)
        if self.shape == "square":
            return (self.center - self.width / 2, self.center + self.width / 2)
        times = self.samples[0]
        return (float(times[0]), float(times[-1]))

    def amplitude(self, t):
        """Envelope E(t); complex in general, real for the built-in shapes."""
        t = np.asarray(t, dtype=float)
        if self.shape == "gaussian":
            s = self.width
            a = (2 * np.pi * s**2) ** (-0.25) * np.exp(-((t - self.center) ** 2) / (4 * s**2))
            lo, hi = self.support()
            return np.where((t >= lo) & (t <= hi), a, 0.0)
        if self.shape == "square":
            lo, hi = self.support()
            return np.where((t >= lo) & (t <= hi), self.width**-0.5, 0.0)
        lo, hi = self.support()
        vals = self._spline(np.clip(t, lo, hi))
        return np.where((t >= lo) & (t <= hi), vals, 0.0)

    def intensity(self, t):
        return np.abs(self.amplitude(t)) ** 2

    def sigma(self) -> float:
        """Standard deviation of |E|^2 (the N=1 jitter floor)."""
        if self.shape == "gaussian":
            return self.width
        lo, hi = self.support()
        ts = np.linspace(lo, hi, 20001)
        w = self.intensity(ts)
        m = np.trapezoid(w * ts, ts)
        return float(np.sqrt(np.trapezoid(w * ts**2, ts) - m**2))


def gaussian_pulse(sigma: float, center: float = 0.0, carrier: float = 0.0) -> PulseEnvelope:
    """Gaussian wavepacket: |E(t)|^2 is the normal density with std ``sigma``."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return PulseEnvelope("gaussian", float(center), float(sigma), float(carrier))


def square_pulse(width: float, center: float = 0.0, carrier: float = 0.0) -> PulseEnvelope:
    if width <= 0:
        raise ValueError(f"width must be positive, got {width}")
    return PulseEnvelope("square", float(center), float(width), float(carrier))


def custom_pulse(times: Sequence[float], values: Sequence[complex], carrier: float = 0.0) -> PulseEnvelope:
    """Sampled envelope; cubic interpolation, renormalized on load."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=complex)
    if times.ndim != 1 or times.size < 4 or np.any(np.diff(times) <= 0):
        raise ValueError("need at least 4 strictly increasing sample times")
    if np.isrealobj(np.asarray(values)) or np.max(np.abs(values.imag)) == 0:
        values = values.real
    spline = CubicSpline(times, values)
    dense = np.linspace(times[0], times[-1], max(4 * times.size, 4001))
    norm = np.trapezoid(np.abs(spline(dense)) ** 2, dense)
    if norm <= 0:
        raise ValueError("custom pulse has zero norm")
    spline = CubicSpline(times, values / np.sqrt(norm))
    center = float(np.trapezoid(dense * np.abs(spline(dense)) ** 2, dense))
    width = float(times[-1] - times[0])
    pulse = PulseEnvelope("custom", center, width, float(carrier),
                          samples=(tuple(times), tuple(values / np.sqrt(norm))))
    object.__setattr__(pulse, "_spline", spline)
    return pulse


# ---------------------------------------------------------------------------
# field states
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldState:
    """Fock-basis coefficients c_{N,M} of the incoming wavepacket state."""

    n_max: int
    coeffs: Array   # (n_max+1, n_max+1) complex, Hermitian, trace 1, PSD

    @classmethod
    def fock(cls, n: int) -> "FieldState":
        if n < 0:
            raise ValueError("photon number must be >= 0")
        c = np.zeros((n + 1, n + 1), dtype=complex)
        c[n, n] = 1.0
        return cls(n, c)

    @classmethod
    def from_coeffs(cls, coeffs: Array, tol: float = 1e-8) -> "FieldState":
        c = np.asarray(coeffs, dtype=complex)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"coefficient table must be square, got {c.shape}")
        if not is_hermitian(c, tol):
            raise ValueError("field coefficients must be Hermitian")
        if abs(np.trace(c) - 1.0) > 1e-7:
            raise ValueError(f"field coefficients must have trace 1, got {np.trace(c):.6g}")
        if np.min(np.linalg.eigvalsh(c)) < -tol:
            raise ValueError("field coefficients must be positive semidefinite")
        return cls(c.shape[0] - 1, c)

    def purity(self) -> float:
        return float(np.real(np.trace(self.coeffs @ self.coeffs)))


# ---------------------------------------------------------------------------
# amplification channels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AmplifierChannel:
    """Continuous weak measurement of a set of internal levels.

    ``X = sum_j weights[j] |levels[j]><levels[j]|`` is the amplified signal
    operator; ``x = sum_j |levels[j]><levels[j]|`` the monitored projector.
    """

    levels: tuple[int, ...]
    weights: tuple[float, ...]      # chi per level
    rate: float                     # k (1/ns)
    t_m: float = 1.0                # integration window (ns)
    i_hit: Optional[float] = None   # hit threshold (signal units); default chi/2
    t_min: Optional[float] = None   # minimum dwell; default i_hit * t_m / chi
    label: str = ""

    def __post_init__(self):
        if len(self.levels) != len(self.weights):
            raise ValueError("levels and weights must have equal length")
        if len(set(self.levels)) != len(self.levels):
            raise ValueError("monitored levels must be distinct")
        if self.rate < 0:
            raise ValueError("measurement rate must be >= 0")
        if self.t_m <= 0:
            raise ValueError("integration window must be positive")

    @property
    def chi(self) -> float:
        """Signal amplitude scale (largest weight)."""
        return float(max(abs(w) for w in self.weights))

    def threshold(self) -> float:
        return self.chi / 2 if self.i_hit is None else float(self.i_hit)

    def min_dwell(self) -> float:
        """t_min; defaults to the i_hit * t_m / chi window-crossing estimate."""
        if self.t_min is not None:
            return float(self.t_min)
        return self.threshold() * self.t_m / self.chi

    def x_diag(self, dim: int) -> Array:
        """Diagonal of the signal operator X."""
        d = np.zeros(dim)
        for lv, w in zip(self.levels, self.weights):
            if not 0 <= lv < dim:
                raise ValueError(f"monitored level {lv} out of range for dim {dim}")
            d[lv] = w
        return d

    def operator(self, dim: int) -> Array:
        return np.diag(self.x_diag(dim)).astype(complex)

    def projector_diag(self, dim: int) -> Array:
        d = np.zeros(dim)
        for lv in self.levels:
            d[lv] = 1.0
        return d

    def projector(self, dim: int) -> Array:
        return np.diag(self.projector_diag(dim)).astype(complex)


# ---------------------------------------------------------------------------
# detector specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DetectorSpec:
    """Matter-system model: internal Hamiltonian (detunings), dipole coupling L,
    scattering unitary S, bath operators, amplification channels."""

    dim: int
    H: Array
    L: Array
    S: Array
    baths: tuple[Array, ...] = ()
    amplifiers: tuple[AmplifierChannel, ...] = ()
    initial_state: Optional[Array] = None
    architecture: Optional[dict] = None
    summed_readout: bool = False    # scheme iii: one discriminator on the summed record

    def __post_init__(self):
        H = np.asarray(self.H, dtype=complex)
        L = np.asarray(self.L, dtype=complex)
        S = np.asarray(self.S, dtype=complex)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "baths", tuple(np.asarray(y, dtype=complex) for y in self.baths))
        rho0 = self.initial_state
        if rho0 is None:
            rho0 = np.zeros((self.dim, self.dim), dtype=complex)
            rho0[0, 0] = 1.0
        object.__setattr__(self, "initial_state", np.asarray(rho0, dtype=complex))
        for name, m in (("H", H), ("L", L), ("S", S), ("initial_state", self.initial_state)):
            if m.shape != (self.dim, self.dim):
                raise ValueError(f"{name} must be {self.dim}x{self.dim}, got {m.shape}")
        for y in self.baths:
            if y.shape != (self.dim, self.dim):
                raise ValueError(f"bath operator must be {self.dim}x{self.dim}, got {y.shape}")

    def validate(self, tol: float = 1e-10) -> list[str]:
        """Hard invariants raise; returns a list of soft warnings."""
        if not is_hermitian(self.H, tol):
            raise ValueError("H must be Hermitian")
        if not is_unitary(self.S, tol):
            raise ValueError("S must be unitary")
        rho0 = self.initial_state
        if not is_hermitian(rho0, 1e-9):
            raise ValueError("initial state must be Hermitian")
        if abs(np.trace(rho0) - 1.0) > 1e-9:
            raise ValueError("initial state must have unit trace")
        if np.min(np.linalg.eigvalsh(rho0)) < -1e-9:
            raise ValueError("initial state must be positive semidefinite")
        for ch in self.amplifiers:
            ch.x_diag(self.dim)  # range check
        warnings = []
        if not self.is_stationary():
            warnings.append("initial state is not stationary under the full generator")
        return warnings

    def is_stationary(self, tol: float = 1e-9) -> bool:
        from ._engine import MatterOps  # deferred: engine depends on model

        ops = MatterOps(self)
        drift = ops.apply_generator(self.initial_state)
        scale = max(ops.norm_bound(), 1.0)
        return bool(np.max(np.abs(drift)) <= tol * scale)

    def rate_scale(self) -> float:
        """Coarse magnitude of the fastest internal rate (used for grid defaults)."""
        ky = sum(spectral_norm(y) ** 2 for y in self.baths)
        kx = sum(2 * ch.rate * ch.chi**2 for ch in self.amplifiers)
        return 2 * spectral_norm(self.H) + 4 * spectral_norm(self.L) ** 2 + 4 * ky + 4 * kx


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def _ket_bra(dim: int, i: int, j: int) -> Array:
    m = np.zeros((dim, dim), dtype=complex)
    m[i, j] = 1.0
    return m


def build_two_state(gamma: float, omega1: float = 0.0, chi: float = 1.0, k: float = 1.0,
                    t_m: float = 1.0, i_hit: Optional[float] = None) -> DetectorSpec:
    """Two-level absorber with the excited state directly amplified.

    ``omega1`` is the detuning of the excited state from the pulse carrier.
    """
    if gamma < 0 or k <= 0:
        raise ValueError("gamma must be >= 0 and k > 0")
    spec = DetectorSpec(
        dim=2,
        H=np.diag([0.0, omega1]).astype(complex),
        L=gamma * _ket_bra(2, 0, 1),
        S=np.eye(2, dtype=complex),
        amplifiers=(AmplifierChannel((1,), (chi,), k, t_m=t_m, i_hit=i_hit, label="excited"),),
        architecture={"family": "two_state", "gamma2": gamma**2, "omega1": omega1,
                      "chi": chi, "k": k},
    )
    spec.validate()
    return spec


def build_three_state(gamma: float, Gamma: float, omega1: float = 0.0, omega_c: float = 0.0,
                      chi: float = 1.0, k: float = 1.0, t_m: float = 1.0,
                      i_hit: Optional[float] = None) -> DetectorSpec:
    """Absorber with an incoherent decay into an amplified shelving state C."""
    if gamma < 0 or Gamma < 0 or k <= 0:
        raise ValueError("gamma, Gamma must be >= 0 and k > 0")
    spec = DetectorSpec(
        dim=3,
        H=np.diag([0.0, omega1, omega_c]).astype(complex),
        L=gamma * _ket_bra(3, 0, 1),
        S=np.eye(3, dtype=complex),
        baths=(Gamma * _ket_bra(3, 2, 1),),
        amplifiers=(AmplifierChannel((2,), (chi,), k, t_m=t_m, i_hit=i_hit, label="shelf"),),
        architecture={"family": "three_state", "gamma2": gamma**2, "Gamma2": Gamma**2,
                      "omega1": omega1, "chi": chi, "k": k},
    )
    spec.validate()
    return spec


def add_dephasing(spec: DetectorSpec, kappa: float, level: int) -> DetectorSpec:
    """Append a pure-dephasing bath ``kappa |level><level|``."""
    if not 0 <= level < spec.dim:
        raise ValueError(f"level {level} out of range for dim {spec.dim}")
    arch = dict(spec.architecture or {})
    arch["dephasing"] = {"kappa2": kappa**2, "level": level}
    return replace(spec, baths=spec.baths + (kappa * _ket_bra(spec.dim, level, level),),
                   architecture=arch)


def add_reset(spec: DetectorSpec, delta: float, from_level: int, to_level: int) -> DetectorSpec:
    """Append an incoherent reset ``delta |to><from|``."""
    for lv in (from_level, to_level):
        if not 0 <= lv < spec.dim:
            raise ValueError(f"level {lv} out of range for dim {spec.dim}")
    arch = dict(spec.architecture or {})
    arch["reset"] = {"delta2": delta**2, "from": from_level, "to": to_level}
    return replace(spec, baths=spec.baths + (delta * _ket_bra(spec.dim, to_level, from_level),),
                   architecture=arch)


def build_quadratic(theta: float, axis: Sequence[float], omega1: float = 0.0,
                    chi: float = 1.0, k: float = 1.0, t_m: float = 1.0,
                    i_hit: Optional[float] = None) -> DetectorSpec:
    """Two-level system coupled through the scattering unitary
    ``S = exp(-i (a . sigma) theta / 2)`` instead of the dipole term."""
    a = np.asarray(axis, dtype=float)
    if a.shape != (3,) or abs(np.linalg.norm(a) - 1.0) > 1e-10:
        raise ValueError("axis must be a unit 3-vector")
    if k <= 0:
        raise ValueError("k must be > 0")
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, -1j], [1j, 0]], dtype=complex)
    sz = np.array([[1, 0], [0, -1]], dtype=complex)
    n_sigma = a[0] * sx + a[1] * sy + a[2] * sz
    S = np.cos(theta / 2) * np.eye(2) - 1j * np.sin(theta / 2) * n_sigma
    spec = DetectorSpec(
        dim=2,
        H=np.diag([0.0, omega1]).astype(complex),
        L=np.zeros((2, 2), dtype=complex),
        S=S,
        amplifiers=(AmplifierChannel((1,), (chi,), k, t_m=t_m, i_hit=i_hit, label="excited"),),
        architecture={"family": "quadratic", "theta": theta, "axis": tuple(a),
                      "chi": chi, "k": k},
    )
    spec.validate()
    return spec


def build_degenerate_array(n: int, gamma: float, Gamma: float, omega1: float = 0.0,
                           omega_c: float = 0.0, chi: float = 1.0, k: float = 1.0,
                           t_m: float = 1.0, i_hit: Optional[float] = None,
                           scheme: str = "per-element-individual") -> DetectorSpec:
    """n identical shelving elements collectively coupled to the field.

    The Hilbert space is the full n-fold tensor product of three-level elements
    (supported up to n = 4). ``scheme`` selects the amplification layout:
    'single-combined' (one channel over all C states), 'per-element-individual'
    (n channels, hits processed separately), 'per-element-summed' (n channels,
    one discriminator on the summed record).
    """
    if n < 1:
        raise ValueError("element count must be >= 1")
    if n > MAX_ARRAY_ELEMENTS:
        raise ValueError(
            f"degenerate arrays are supported up to n = {MAX_ARRAY_ELEMENTS} "
            f"(full tensor basis); got n = {n}")
    if scheme not in ("single-combined", "per-element-individual", "per-element-summed"):
        raise ValueError(f"unknown amplification scheme {scheme!r}")
    dim = 3**n
    # level index of the product basis state with element i in local state s
    def idx(local: Sequence[int]) -> int:
        out = 0
        for s in local:
            out = 3 * out + s
        return out

    energies = np.zeros(dim)
    local_energy = np.array([0.0, omega1, omega_c])
    L = np.zeros((dim, dim), dtype=complex)
    baths = []
    c_levels: list[list[int]] = [[] for _ in range(n)]
    for states in itertools.product(range(3), repeat=n):
        j = idx(states)
        energies[j] = sum(local_energy[s] for s in states)
        for i, s in enumerate(states):
            if s == 1:
                lowered = list(states)
                lowered[i] = 0
                L[idx(lowered), j] += gamma
            if s == 2:
                c_levels[i].append(j)
    for i in range(n):
        y = np.zeros((dim, dim), dtype=complex)
        for states in itertools.product(range(3), repeat=n):
            if states[i] == 1:
                shelved = list(states)
                shelved[i] = 2
                y[idx(shelved), idx(states)] = Gamma
        baths.append(y)

    if scheme == "single-combined":
        all_c = sorted(set(lv for levels in c_levels for lv in levels))
        chans = (AmplifierChannel(tuple(all_c), (chi,) * len(all_c), k, t_m=t_m,
                                  i_hit=i_hit, label="combined"),)
        summed = False
    else:
        chans = tuple(
            AmplifierChannel(tuple(sorted(c_levels[i])), (chi,) * len(c_levels[i]), k,
                             t_m=t_m, i_hit=i_hit, label=f"element{i}")
            for i in range(n))
        summed = scheme == "per-element-summed"

    spec = DetectorSpec(
        dim=dim,
        H=np.diag(energies).astype(complex),
        L=L,
        S=np.eye(dim, dtype=complex),
        baths=tuple(baths),
        amplifiers=chans,
        architecture={"family": "array", "n": n, "gamma2": gamma**2, "Gamma2": Gamma**2,
                      "scheme": scheme, "chi": chi, "k": k},
        summed_readout=summed,
    )
    spec.validate()
    return spec


def lorentzian_band_frequencies(n: int, zeta: float, cutoff_scale: float = 20.0) -> Array:
    """Deterministic inverse-CDF placement of n states under a Lorentzian density
    with scale (half width) ``zeta^2 / 2``, truncated symmetrically."""
    a = zeta**2 / 2.0
    u = (np.arange(n) + 0.5) / n
    w = a * np.tan(np.pi * (u - 0.5))
    if a > 0:
        w = np.clip(w, -cutoff_scale * a, cutoff_scale * a)
    return w


def build_band(n: int, gamma: float, distribution, Gamma: Optional[float] = None,
               chi: float = 1.0, k: float = 1.0, t_m: float = 1.0,
               i_hit: Optional[float] = None, amplify: str = "band-direct") -> DetectorSpec:
    """Ground state coupled to a band of n excited states, optionally shelving.

    ``distribution`` is ``('lorentzian', zeta)`` or ``('custom', [omega_i])``
    with detunings from the carrier. ``amplify`` selects 'band-direct'
    (monitor the band) or 'shelved-C' (monitor a common shelf fed at rate
    Gamma from every band state).
    """
    if n < 1:
        raise ValueError("state count must be >= 1")
    kind = distribution[0]
    if kind == "lorentzian":
        zeta = float(distribution[1])
        omegas = lorentzian_band_frequencies(n, zeta)
        dist_meta = {"kind": "lorentzian", "zeta2": zeta**2}
    elif kind == "custom":
        omegas = np.asarray(distribution[1], dtype=float)
        if omegas.shape != (n,):
            raise ValueError(f"need {n} custom frequencies, got {omegas.shape}")
        dist_meta = {"kind": "custom"}
    else:
        raise ValueError(f"unknown distribution {kind!r}")
    if amplify not in ("band-direct", "shelved-C"):
        raise ValueError(f"unknown amplification mode {amplify!r}")
    shelved = amplify == "shelved-C"
    if shelved and (Gamma is None or Gamma <= 0):
        raise ValueError("shelved-C amplification needs Gamma > 0")

    has_c = Gamma is not None and Gamma > 0
    dim = 1 + n + (1 if has_c else 0)
    energies = np.concatenate([[0.0], omegas, [0.0]] if has_c else [[0.0], omegas])
    L = np.zeros((dim, dim), dtype=complex)
    L[0, 1:n + 1] = gamma
    baths = []
    if has_c:
        c_index = dim - 1
        for i in range(1, n + 1):
            y = np.zeros((dim, dim), dtype=complex)
            y[c_index, i] = Gamma
            baths.append(y)
    if shelved:
        chans = (AmplifierChannel((dim - 1,), (chi,), k, t_m=t_m, i_hit=i_hit, label="shelf"),)
    else:
        band = tuple(range(1, n + 1))
        chans = (AmplifierChannel(band, (chi,) * n, k, t_m=t_m, i_hit=i_hit, label="band"),)

    spec = DetectorSpec(
        dim=dim,
        H=np.diag(energies).astype(complex),
        L=L,
        S=np.eye(dim, dtype=complex),
        baths=tuple(baths),
        amplifiers=chans,
        architecture={"family": "band", "n": n, "gamma2": gamma**2,
                      "Gamma2": (Gamma**2 if Gamma else 0.0),
                      "distribution": dist_meta, "amplify": amplify,
                      "chi": chi, "k": k},
    )
    spec.validate()
    return spec


# ---------------------------------------------------------------------------
# serialization (JSON-compatible dicts; schema documented in the cli module)
# ---------------------------------------------------------------------------


def _matrix_to_json(m: Array):
    m = np.asarray(m, dtype=complex)
    return {"re": m.real.tolist(), "im": m.imag.tolist()}


def _matrix_from_json(d) -> Array:
    return np.asarray(d["re"], dtype=float) + 1j * np.asarray(d["im"], dtype=float)


_BUILDERS = {
    "two_state": build_two_state,
    "three_state": build_three_state,
    "quadratic": build_quadratic,
    "degenerate_array": build_degenerate_array,
    "band": build_band,
}


def spec_from_dict(cfg: dict) -> DetectorSpec:
    """Build a DetectorSpec from a config mapping: either
    ``{"builder": name, "params": {...}, "dephasing": {...}?, "reset": {...}?}``
    or explicit matrices ``{"matrices": {...}}``."""
    if "builder" in cfg:
        name = cfg["builder"]
        if name not in _BUILDERS:
            raise ValueError(f"unknown builder {name!r}; options: {sorted(_BUILDERS)}")
        params = dict(cfg.get("params", {}))
        if name == "band" and "distribution" in params:
            params["distribution"] = tuple(params["distribution"])
        spec = _BUILDERS[name](**params)
        if "dephasing" in cfg:
            d = cfg["dephasing"]
            spec = add_dephasing(spec, d["kappa"], d["level"])
        if "reset" in cfg:
            d = cfg["reset"]
            spec = add_reset(spec, d["delta"], d["from"], d["to"])
        return spec
    if "matrices" in cfg:
        m = cfg["matrices"]
        dim = len(m["H"]["re"])
        chans = tuple(
            AmplifierChannel(tuple(c["levels"]), tuple(c["weights"]), c["rate"],
                             t_m=c.get("t_m", 1.0), i_hit=c.get("i_hit"),
                             t_min=c.get("t_min"), label=c.get("label", ""))
            for c in cfg.get("amplifiers", []))
        spec = DetectorSpec(
            dim=dim,
            H=_matrix_from_json(m["H"]),
            L=_matrix_from_json(m["L"]) if "L" in m else np.zeros((dim, dim)),
            S=_matrix_from_json(m["S"]) if "S" in m else np.eye(dim),
            baths=tuple(_matrix_from_json(y) for y in m.get("baths", [])),
            amplifiers=chans,
            initial_state=_matrix_from_json(m["initial_state"]) if "initial_state" in m else None,
        )
        spec.validate()
        return spec
    raise ValueError("detector config needs either 'builder' or 'matrices'")


def spec_to_dict(spec: DetectorSpec) -> dict:
    out = {
        "matrices": {
            "H": _matrix_to_json(spec.H),
            "L": _matrix_to_json(spec.L),
            "S": _matrix_to_json(spec.S),
            "baths": [_matrix_to_json(y) for y in spec.baths],
            "initial_state": _matrix_to_json(spec.initial_state),
        },
        "amplifiers": [
            {"levels": list(ch.levels), "weights": list(ch.weights), "rate": ch.rate,
             "t_m": ch.t_m, "i_hit": ch.i_hit, "t_min": ch.t_min, "label": ch.label}
            for ch in spec.amplifiers
        ],
    }
    if spec.architecture:
        out["architecture"] = spec.architecture
    return out


def pulse_from_dict(cfg: dict) -> PulseEnvelope:
    shape = cfg.get("shape", "gaussian")
    if shape == "gaussian":
        return gaussian_pulse(cfg["sigma"], cfg.get("center", 0.0), cfg.get("carrier", 0.0))
    if shape == "square":
        return square_pulse(cfg["width"], cfg.get("center", 0.0), cfg.get("carrier", 0.0))
    if shape == "custom":
        return custom_pulse(cfg["times"], cfg["values"], cfg.get("carrier", 0.0))
    raise ValueError(f"unknown pulse shape {shape!r}")


def pulse_to_dict(pulse: PulseEnvelope) -> dict:
    if pulse.shape == "gaussian":
        return {"shape": "gaussian", "sigma": pulse.width, "center": pulse.center,
                "carrier": pulse.carrier}
    if pulse.shape == "square":
        return {"shape": "square", "width": pulse.width, "center": pulse.center,
                "carrier": pulse.carrier}
    times, values = pulse.samples
    return {"shape": "custom", "times": list(times),
            "values": [complex(v).real for v in values], "carrier": pulse.carrier}


def field_from_dict(cfg: dict) -> FieldState:
    if "fock" in cfg:
        return FieldState.fock(int(cfg["fock"]))
    if "coeffs" in cfg:
        return FieldState.from_coeffs(_matrix_from_json(cfg["coeffs"]))
    raise ValueError("field config needs either 'fock' or 'coeffs'")


def field_to_dict(field_state: FieldState) -> dict:
    return {"coeffs": _matrix_to_json(field_state.coeffs)}
