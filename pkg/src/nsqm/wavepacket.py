"""Wave packets with a nonstandard component.

A spike at the origin evolves into two light-cone peaks plus a slow tail
produced by band-edge modes.  Away from the cone edges the tail follows the
stationary-phase form

    |Psi(t, x)| = c / (sqrt(pi) (t^2 - x^2)^(1/4)),

with the phase evaluated at the stationary mode kappa(x) = (2M/pi) arccos(|x|/t)
obtained from d omega / d k of the implemented dispersion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate

from nsqm.errors import DomainError, ShapeError, ValidationError
from nsqm.lattice import (
    LatticeSpec,
    ModeClass,
    WaveField,
    classify_mode,
    dispersion,
    evolve_wave,
    grid_index,
    project_sector,
    ring_distance,
    scalar_product,
    sector_mask,
    wave_number,
)

# ---------------------------------------------------------------------------
# delta initial condition


def delta_evolution_direct(spec: LatticeSpec, t: float, sample_points) -> np.ndarray:
    """Evolve the spike sqrt(N) delta_{j0} by direct mode summation.

    Psi(t, x_j) = sqrt(N)/(2M) sum_{k=-M+1}^{M} exp(i omega(k) t) exp(i k j pi/M),
    which is (1/2) N^(-3/2) sum_k [exp(i(wt - px)) + exp(i(wt + px))] when M = N^2.
    Sample points are snapped to the nearest grid site.  Cost is O(M) per point.
    """
    if t < 0:
        raise DomainError("t must be non-negative")
    x = np.atleast_1d(np.asarray(sample_points, dtype=float))
    if np.any(np.abs(x) >= spec.half_length):
        raise DomainError("sample points must lie inside (-Md, Md)")
    m = spec.grid_count
    j = grid_index(x, spec)
    k = np.arange(-m + 1, m + 1, dtype=np.int64)
    time_phase = np.exp(1j * dispersion(np.abs(k), spec) * t)
    pref = math.sqrt(spec.scale) / (2 * m)
    out = np.empty(x.shape[0], dtype=complex)
    for i, jj in enumerate(j):
        space = np.pi * ((k * jj) % (2 * m)) / m
        out[i] = pref * np.sum(time_phase * np.exp(1j * space))
    return out


# ---------------------------------------------------------------------------
# stationary-phase tail


def stationary_mode(x, t: float, spec: LatticeSpec):
    """Stationary mode index kappa(x) = (2M/pi) arccos(|x|/t)."""
    return (2 * spec.grid_count / np.pi) * np.arccos(np.abs(np.asarray(x, dtype=float)) / t)


def calibrate_prefactor(v: float = 1.0) -> float:
    """Constant c with c^2 * integral_{-vt}^{vt} dx/(pi sqrt(t^2 - x^2)) = 1.

    The integral is scale free, so t drops out.  For v = 1 the result is 1.
    """
    if not 0 < v <= 1:
        raise DomainError("v must lie in (0, 1]")
    val, _ = integrate.quad(lambda u: 1.0 / (np.pi * np.sqrt(1.0 - u * u)), -v, v, limit=200)
    return 1.0 / math.sqrt(val)


@dataclass(frozen=True)
class SingularityTail:
    """Stationary-phase tail of a lattice spike after time t.

    `step` enters only the phase (the modulus is scale free).
    """

    t: float
    step: float
    v: float = 1.0
    prefactor: float = 1.0

    def __post_init__(self) -> None:
        if not self.t > 0:
            raise DomainError("tail time must be positive")
        if not 0 < self.v <= 1:
            raise DomainError("velocity cap must lie in (0, 1]")

    def phase(self, x) -> np.ndarray:
        """omega(kappa) t - kappa pi |x|/(M d) - pi/4 at the stationary mode."""
        ax = np.abs(np.asarray(x, dtype=float))
        root = np.sqrt(np.maximum(self.t * self.t - ax * ax, 0.0))
        return (2.0 / self.step) * (root - ax * np.arccos(np.minimum(ax / self.t, 1.0))) - np.pi / 4


def make_tail(t: float, spec: LatticeSpec, v: float = 1.0) -> SingularityTail:
    """Tail with calibrated prefactor."""
    return SingularityTail(t=t, step=spec.step, v=v, prefactor=calibrate_prefactor(v))


@dataclass(frozen=True)
class TailSample:
    value: np.ndarray
    in_cone: np.ndarray


def tail_closed_form(tail: SingularityTail, x) -> TailSample:
    """Closed-form tail amplitude; zero with in_cone False where |x| >= v t."""
    xa = np.asarray(x, dtype=float)
    inside = np.abs(xa) < tail.v * tail.t
    safe = np.where(inside, xa, 0.0)
    mod = tail.prefactor / (math.sqrt(math.pi) * (tail.t**2 - safe**2) ** 0.25)
    val = np.where(inside, mod * np.exp(1j * tail.phase(safe)), 0.0)
    return TailSample(value=val, in_cone=inside)


def tail_density(tail: SingularityTail, x):
    xa = np.asarray(x, dtype=float)
    inside = np.abs(xa) < tail.v * tail.t
    safe = np.where(inside, xa, 0.0)
    return np.where(inside, tail.prefactor**2 / (np.pi * np.sqrt(tail.t**2 - safe**2)), 0.0)


def tail_norm(tail: SingularityTail, spec: LatticeSpec, edge_cells: int | None = 8) -> float:
    """Lattice integral d sum_j |Psi(x_j)|^2 over the cone.

    Interior sites use the cell-midpoint rule.  The last `edge_cells` cells next
    to each inverse-square-root endpoint are integrated exactly, since a plain
    lattice sum converges there only like sqrt(d/t).  edge_cells=None gives the
    bare lattice sum over sites strictly inside the cone.
    """
    d = spec.step
    edge = tail.v * tail.t
    j_in = math.ceil(edge / d) - 1
    if edge_cells is None:
        j = np.arange(-j_in, j_in + 1)
        return float(d * np.sum(tail_density(tail, j * d)))
    j_max = j_in - edge_cells
    c2 = tail.prefactor**2
    if j_max < 0:
        return float(2 * c2 / np.pi * math.asin(tail.v))
    j = np.arange(-j_max, j_max + 1)
    interior = d * np.sum(tail_density(tail, j * d))
    a = (j_max + 0.5) * d
    ends = 2 * c2 / np.pi * (math.asin(tail.v) - math.asin(a / tail.t))
    return float(interior + ends)


# ---------------------------------------------------------------------------
# propagating packets


@dataclass(frozen=True)
class PropagatingPacket:
    """Standard packet plus singularity sites weighted by it."""

    standard: WaveField
    singularity_positions: tuple
    weights: tuple
    t0: float = 0.0
    v: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "singularity_positions", tuple(float(x) for x in self.singularity_positions))
        object.__setattr__(self, "weights", tuple(complex(w) for w in self.weights))
        if len(self.weights) != len(self.singularity_positions):
            raise ShapeError("one weight per singularity position is required")


def singularity_weights(standard: WaveField, positions, spec: LatticeSpec) -> np.ndarray:
    """phi_S(X_l) normalized so that sum |w_l|^2 = 1."""
    j = grid_index(positions, spec) + spec.grid_count
    w = standard.values[j]
    total = math.sqrt(float(np.sum(np.abs(w) ** 2)))
    if total == 0:
        raise ValidationError("standard packet vanishes at every singularity site")
    return w / total


def packet_from_standard(standard: WaveField, positions, spec: LatticeSpec, t0: float = 0.0, v: float = 1.0) -> PropagatingPacket:
    w = singularity_weights(standard, positions, spec)
    return PropagatingPacket(standard, tuple(positions), tuple(w), t0=t0, v=v)


def build_ns_component(packet: PropagatingPacket, spec: LatticeSpec, t: float, sample_points) -> np.ndarray:
    """sum_l w_l Psi(t - t0, x - X_l) with the closed-form tail."""
    w = np.asarray(packet.weights)
    if abs(float(np.sum(np.abs(w) ** 2)) - 1.0) > 1e-10:
        raise ValidationError("singularity weights must satisfy sum |w|^2 = 1")
    x = np.asarray(sample_points, dtype=float)
    tail = make_tail(t - packet.t0, spec, v=packet.v)
    out = np.zeros(x.shape, dtype=complex)
    for wl, xl in zip(w, packet.singularity_positions):
        out += wl * tail_closed_form(tail, x - xl).value
    return out


def packet_components(packet: PropagatingPacket, spec: LatticeSpec, t: float) -> tuple[WaveField, WaveField]:
    """Standard and nonstandard lattice fields at time t, each confined to its sector."""
    s = evolve_wave(packet.standard, t - packet.standard.time, spec)
    s = project_sector(s, spec, ModeClass.STANDARD)
    x = spec.positions()[:-1]
    ns_ring = build_ns_component(packet, spec, t, x)
    ns = WaveField(np.concatenate([ns_ring, ns_ring[:1]]), t)
    return s, project_sector(ns, spec, ModeClass.NONSTANDARD)


# ---------------------------------------------------------------------------
# two-particle composition


@dataclass(frozen=True)
class TwoParticleComposite:
    """S1 (x) S2 + NS1 (x) NS2, with no mixed-sector terms."""

    s1: WaveField
    s2: WaveField
    ns1: WaveField
    ns2: WaveField

    @property
    def terms(self) -> tuple:
        return ((self.s1, self.s2), (self.ns1, self.ns2))

    def evaluate(self, x1, x2, spec: LatticeSpec) -> np.ndarray:
        j1 = grid_index(x1, spec) + spec.grid_count
        j2 = grid_index(x2, spec) + spec.grid_count
        return self.s1.values[j1] * self.s2.values[j2] + self.ns1.values[j1] * self.ns2.values[j2]

    def on_grid(self) -> np.ndarray:
        """Amplitude on the ring x ring grid (distinct sites only)."""
        return np.outer(self.s1.values[:-1], self.s2.values[:-1]) + np.outer(
            self.ns1.values[:-1], self.ns2.values[:-1]
        )


def compose_two_particle(p1: PropagatingPacket, p2: PropagatingPacket, spec: LatticeSpec, t: float) -> TwoParticleComposite:
    s1, ns1 = packet_components(p1, spec, t)
    s2, ns2 = packet_components(p2, spec, t)
    return TwoParticleComposite(s1, s2, ns1, ns2)


def sector_weights(amplitude: np.ndarray, spec: LatticeSpec) -> dict:
    """Fraction of the squared 2D spectrum in each (sector1, sector2) block."""
    spec2 = np.abs(np.fft.fft2(amplitude)) ** 2
    total = float(np.sum(spec2))
    masks = {c: sector_mask(spec, c) for c in ModeClass}
    out = {}
    for a in ModeClass:
        for b in ModeClass:
            out[(a, b)] = float(np.sum(spec2[np.ix_(masks[a], masks[b])])) / total if total else 0.0
    return out


# ---------------------------------------------------------------------------
# bound states


@dataclass(frozen=True)
class BoundStateNS:
    """Stationary standard state with a cosine-weighted nonstandard extension."""

    phi_S: WaveField
    momenta: tuple
    omegas: tuple = field(default=())
    singularity_positions: tuple | None = None


def validate_spectrum(momenta: Sequence[int], spec: LatticeSpec) -> None:
    for k in momenta:
        if classify_mode(k, spec) is not ModeClass.NONSTANDARD:
            raise DomainError(f"momentum {k} is not in the nonstandard band")
    ks = list(momenta)
    for a in range(len(ks)):
        for b in range(a + 1, len(ks)):
            if ring_distance(ks[a], ks[b], spec) < spec.standard_fraction * spec.grid_count:
                raise DomainError(f"momentum difference {ks[a]} - {ks[b]} is standard")


def bound_state(phi_S: WaveField, momenta: Sequence[int], spec: LatticeSpec, positions=None) -> BoundStateNS:
    validate_spectrum(momenta, spec)
    omegas = tuple(float(dispersion(abs(int(k)), spec)) for k in momenta)
    pos = None if positions is None else tuple(float(x) for x in positions)
    return BoundStateNS(phi_S, tuple(int(k) for k in momenta), omegas, pos)


def generate_momenta(count: int, spec: LatticeSpec, rng: np.random.Generator, min_gap: int | None = None, max_tries: int = 100_000) -> tuple:
    """Random signed mode indices from the nonstandard band with a minimum ring gap.

    The default gap makes every pairwise difference nonstandard as well.
    """
    m = spec.grid_count
    lo = math.ceil(spec.standard_fraction * m)
    gap = lo if min_gap is None else int(min_gap)
    chosen: list[int] = []
    tries = 0
    while len(chosen) < count:
        tries += 1
        if tries > max_tries:
            raise ValidationError(f"could not place {count} momenta with gap {gap} in the nonstandard band")
        k = int(rng.integers(lo, m + 1)) * (1 if rng.random() < 0.5 else -1)
        if all(ring_distance(k, c, spec) >= gap for c in chosen):
            chosen.append(k)
    return tuple(chosen)


def bound_ns_field(state: BoundStateNS, t: float, spec: LatticeSpec) -> WaveField:
    """Psi_NS(t, x_j) = sum_r cos(omega_r t) exp(i p_r x_j) phi_S(x_j) on the grid."""
    m = spec.grid_count
    j = np.arange(-m, m + 1, dtype=np.int64)
    g = np.zeros(spec.n_points, dtype=complex)
    for k, w in zip(state.momenta, state.omegas):
        g += math.cos(w * t) * np.exp(1j * np.pi * ((k * j) % (2 * m)) / m)
    return WaveField(g * state.phi_S.values, t)


def ns_overlap(a: BoundStateNS, b: BoundStateNS, t: float, spec: LatticeSpec) -> complex:
    """sum_r cos^2(omega_r t) <phi_S^a | phi_S^b>."""
    if sorted(a.momenta) != sorted(b.momenta):
        raise DomainError("overlap is defined only for states sharing a momentum set")
    factor = sum(math.cos(w * t) ** 2 for w in a.omegas)
    return factor * scalar_product(a.phi_S, b.phi_S, spec)


def expand_in_basis(state: WaveField, basis: Sequence[WaveField], spec: LatticeSpec) -> np.ndarray:
    """Raw overlaps C_l = <psi_l | Psi>."""
    for b in basis:
        if len(b) != len(state):
            raise ShapeError("basis element and state lengths differ")
    return np.array([scalar_product(b, state, spec) for b in basis], dtype=complex)


def gaussian_field(spec: LatticeSpec, center: float = 0.0, width: float = 1.0, momentum: float = 0.0) -> WaveField:
    """Normalized Gaussian pi^(-1/4) w^(-1/2) exp(-(x-c)^2/2w^2 + i k x)."""
    x = spec.positions()
    vals = np.exp(-((x - center) ** 2) / (2 * width**2) + 1j * momentum * x) / (math.pi**0.25 * math.sqrt(width))
    vals[-1] = vals[0]
    return WaveField(vals)
