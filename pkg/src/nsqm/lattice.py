"""Finite lattice stand-in for the hyperfinite line.

The grid has points x_j = j*d for j = -M..M.  Boundary conditions are
periodic, so the site j = M is the periodic image of j = -M and the ring
carries 2M distinct sites.  Every field stores all 2M+1 values; the last
entry is ignored on input and rewritten as the image of the first on output.

Plane waves are phi_k(x_j) = exp(i k j pi / M) / sqrt(2M) for k = -M+1..M.
They are exact eigenvectors of the periodic band matrix with eigenvalue
-(2/d)^2 sin^2(k pi / 2M), which gives the bounded dispersion relation
omega(k) = (2/d) sin(|k| pi / 2M).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from nsqm.errors import DomainError, ShapeError, ValidationError


class ModeClass(enum.Enum):
    STANDARD = "standard"
    NONSTANDARD = "nonstandard"


@dataclass(frozen=True)
class LatticeSpec:
    """Finite-scale lattice parameters.

    Parameters
    ----------
    grid_count : int
        M, so that grid indices run over -M..M.
    step : float
        Grid step d.  The scale N is 1/d.
    standard_fraction : float
        Modes with |k| < standard_fraction * M are Standard.
    mass : float
        Klein-Gordon mass m (0 for the massless wave equation).
    """

    grid_count: int
    step: float
    standard_fraction: float = 0.1
    mass: float = 0.0

    def __post_init__(self) -> None:
        if int(self.grid_count) != self.grid_count or self.grid_count < 2:
            raise ValidationError(f"grid_count must be an integer >= 2, got {self.grid_count}")
        if not (self.step > 0 and math.isfinite(self.step)):
            raise ValidationError(f"step must be positive and finite, got {self.step}")
        if not 0.0 < self.standard_fraction < 1.0:
            raise ValidationError("standard_fraction must lie strictly between 0 and 1")
        if not self.mass >= 0.0:
            raise ValidationError("mass must be non-negative")
        object.__setattr__(self, "grid_count", int(self.grid_count))

    @property
    def scale(self) -> float:
        """N = 1/d."""
        return 1.0 / self.step

    @property
    def n_points(self) -> int:
        return 2 * self.grid_count + 1

    @property
    def half_length(self) -> float:
        """L = M d, the grid spans [-L, L]."""
        return self.grid_count * self.step

    def positions(self) -> np.ndarray:
        j = np.arange(-self.grid_count, self.grid_count + 1)
        return j * self.step

    @classmethod
    def from_scale(cls, n: float, **kwargs) -> "LatticeSpec":
        """Lattice with M = N^2 and d = 1/N."""
        n_int = int(round(n))
        return cls(grid_count=n_int * n_int, step=1.0 / n, **kwargs)


@dataclass(frozen=True)
class WaveField:
    """Complex amplitudes at grid indices -M..M and a time label."""

    values: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=complex)
        if arr.ndim != 1:
            raise ShapeError("WaveField values must be one-dimensional")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class SpectralMode:
    k: int
    omega: float
    wave_number: float
    classification: ModeClass = field(default=ModeClass.STANDARD)


def _check_k(k, spec: LatticeSpec, signed: bool = False) -> np.ndarray:
    arr = np.asarray(k)
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise DomainError("mode index must be an integer")
        arr = arr.astype(np.int64)
    lo = -spec.grid_count if signed else 0
    if np.any(arr < lo) or np.any(arr > spec.grid_count):
        raise DomainError(f"mode index out of range [{lo}, {spec.grid_count}]: {k}")
    return arr


def _check_field(u: WaveField, spec: LatticeSpec) -> None:
    if len(u) != spec.n_points:
        raise ShapeError(f"field has {len(u)} values, lattice needs {spec.n_points}")


def _massless_omega(k_abs: np.ndarray, spec: LatticeSpec) -> np.ndarray:
    return (2.0 / spec.step) * np.sin(k_abs * np.pi / (2 * spec.grid_count))


def dispersion(k, spec: LatticeSpec):
    """Angular frequency omega(k) for 0 <= k <= M.

    Massless: (2/d) sin(k pi / 2M).  Massive: sqrt(m^2 + omega^2).
    Accepts a scalar or an array of indices.
    """
    arr = _check_k(k, spec)
    w = _massless_omega(arr, spec)
    if spec.mass > 0:
        w = np.sqrt(spec.mass**2 + w * w)
    return float(w) if np.ndim(w) == 0 else w


def wave_number(k, spec: LatticeSpec):
    """p = k pi / (M d), so that exp(i p x_j) = exp(i k j pi / M).

    Equals k pi / N when M = N^2 and d = 1/N.
    """
    arr = _check_k(k, spec, signed=True)
    p = arr * np.pi / spec.half_length
    return float(p) if np.ndim(p) == 0 else p


def group_velocity(k, spec: LatticeSpec):
    """d omega / d p = cos(k pi / 2M), scaled by omega/omega_m when massive."""
    arr = _check_k(k, spec)
    theta = arr * np.pi / (2 * spec.grid_count)
    v = np.cos(theta)
    # cos(pi/2) is 6e-17 in floating point; the band edge is exactly zero
    v = np.where(arr == spec.grid_count, 0.0, v)
    if spec.mass > 0:
        w = _massless_omega(arr, spec)
        v = v * w / np.sqrt(spec.mass**2 + w * w)
    return float(v) if np.ndim(v) == 0 else v


def classify_mode(k, spec: LatticeSpec) -> ModeClass:
    """Standard iff |k| < standard_fraction * M (half-open split)."""
    kk = int(abs(int(_check_k(k, spec, signed=True))))
    if kk < spec.standard_fraction * spec.grid_count:
        return ModeClass.STANDARD
    return ModeClass.NONSTANDARD


def spectral_mode(k: int, spec: LatticeSpec) -> SpectralMode:
    return SpectralMode(
        k=int(k),
        omega=dispersion(abs(k), spec),
        wave_number=wave_number(k, spec),
        classification=classify_mode(k, spec),
    )


def ring_distance(k1: int, k2: int, spec: LatticeSpec) -> int:
    """Distance between mode indices on the 2M-periodic index ring."""
    diff = (int(k1) - int(k2)) % (2 * spec.grid_count)
    return min(diff, 2 * spec.grid_count - diff)


def _ring(u: WaveField) -> np.ndarray:
    return u.values[:-1]


def _close(ring: np.ndarray, time: float) -> WaveField:
    return WaveField(np.concatenate([ring, ring[:1]]), time)


def plane_wave(k: int, spec: LatticeSpec, time: float = 0.0) -> WaveField:
    """Normalized plane wave exp(i k j pi / M)/sqrt(2M), -M <= k <= M."""
    kk = int(_check_k(k, spec, signed=True))
    m2 = 2 * spec.grid_count
    j = np.arange(-spec.grid_count, spec.grid_count + 1, dtype=np.int64)
    # exact integer reduction keeps the phase accurate for large k*j
    phase = np.pi * ((kk * j) % m2) / spec.grid_count
    return WaveField(np.exp(1j * phase) / math.sqrt(m2), time)


def sample_function(fn: Callable[[np.ndarray], np.ndarray], spec: LatticeSpec, time: float = 0.0) -> WaveField:
    """Sample fn on the distinct ring sites and close periodically."""
    x = spec.positions()[:-1]
    return _close(np.asarray(fn(x), dtype=complex), time)


def delta_field(spec: LatticeSpec) -> WaveField:
    """Spike sqrt(N) at x = 0, with unit weighted norm."""
    vals = np.zeros(spec.n_points, dtype=complex)
    vals[spec.grid_count] = math.sqrt(spec.scale)
    return WaveField(vals)


def _weights(spec: LatticeSpec) -> np.ndarray:
    w = np.ones(spec.n_points)
    w[0] = w[-1] = 0.5
    return w


def scalar_product(u: WaveField, v: WaveField, spec: LatticeSpec, weighted: bool = True) -> complex:
    """Discrete scalar product.

    weighted=True gives d * sum u* v (the integral form); weighted=False gives
    the unit-weight mode product.  The two end points share one ring site and
    carry half weight each.
    """
    if len(u) != len(v):
        raise ShapeError(f"length mismatch: {len(u)} vs {len(v)}")
    _check_field(u, spec)
    if u is v:
        # exact real result for the norm
        s = np.sum(_weights(spec) * (u.values.real**2 + u.values.imag**2)) + 0j
    else:
        s = np.sum(_weights(spec) * np.conj(u.values) * v.values)
    return complex(s * spec.step) if weighted else complex(s)


def norm(u: WaveField, spec: LatticeSpec) -> float:
    return scalar_product(u, u, spec).real


def apply_band_matrix(u: WaveField, spec: LatticeSpec) -> WaveField:
    """(u_{j+1} - 2u_j + u_{j-1}) / d^2 with periodic wrap-around."""
    _check_field(u, spec)
    r = _ring(u)
    out = ((np.roll(r, -1) + np.roll(r, 1)) - 2.0 * r) / spec.step**2
    return _close(out, u.time)


def _ring_omegas(spec: LatticeSpec) -> np.ndarray:
    # FFT bin q holds mode k = q (q <= M) or k = q - 2M; sin is symmetric
    q = np.arange(2 * spec.grid_count)
    w = (2.0 / spec.step) * np.sin(q * np.pi / (2 * spec.grid_count))
    if spec.mass > 0:
        w = np.sqrt(spec.mass**2 + w * w)
    return w


def _ring_mode_indices(spec: LatticeSpec) -> np.ndarray:
    q = np.arange(2 * spec.grid_count)
    return np.where(q <= spec.grid_count, q, q - 2 * spec.grid_count)


def evolve_wave(u: WaveField, t: float, spec: LatticeSpec) -> WaveField:
    """Multiply every plane-wave coefficient by exp(i omega(k) t)."""
    _check_field(u, spec)
    if not math.isfinite(t):
        raise DomainError("t must be finite")
    coeffs = np.fft.fft(_ring(u))
    coeffs *= np.exp(1j * _ring_omegas(spec) * t)
    return _close(np.fft.ifft(coeffs), u.time + t)


def project_sector(u: WaveField, spec: LatticeSpec, sector: ModeClass) -> WaveField:
    """Keep only the plane-wave components of one spectral sector."""
    _check_field(u, spec)
    return _close(np.fft.ifft(np.fft.fft(_ring(u)) * sector_mask(spec, sector)), u.time)


def sector_mask(spec: LatticeSpec, sector: ModeClass) -> np.ndarray:
    """Boolean mask over FFT bins selecting one sector."""
    k = np.abs(_ring_mode_indices(spec))
    standard = k < spec.standard_fraction * spec.grid_count
    return standard if sector is ModeClass.STANDARD else ~standard


def grid_index(x, spec: LatticeSpec) -> np.ndarray:
    """Nearest grid index j (in -M..M) for positions x."""
    j = np.rint(np.asarray(x, dtype=float) / spec.step).astype(np.int64)
    return np.clip(j, -spec.grid_count, spec.grid_count)


def band_edge_velocity_bound(m0: int, spec: LatticeSpec) -> float:
    """Upper bound sin(pi m0 / 2M) on v(k) for k >= M - m0."""
    return math.sin(math.pi * m0 / (2 * spec.grid_count))
