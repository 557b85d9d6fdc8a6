"""Oscillator-ensemble matrix elements and their monad-sampled statistics.

xi(t) = sum_s A_s exp(i Omega_s t) is evaluated at a time drawn uniformly from
the window [t - eta, t + eta].  When Omega_min * eta >> 1 the draws behave as
a zero-mean random variable with correlation Xi(tau) = sum_s |A_s|^2 cos(Omega_s tau).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from nsqm.errors import ValidationError
from nsqm.lattice import LatticeSpec, dispersion, ring_distance, wave_number
from nsqm.wavepacket import generate_momenta

MONAD_WARN_RATIO = 100.0
_CHUNK = 2_000_000  # elements per frequency x time block


@dataclass(frozen=True)
class FrequencyEnsemble:
    frequencies: np.ndarray
    amplitudes: np.ndarray
    pair_label: tuple = (0, 1)
    omega_min: float | None = None
    omega_max: float | None = None

    def __post_init__(self) -> None:
        f = np.asarray(self.frequencies, dtype=float)
        a = np.asarray(self.amplitudes, dtype=complex)
        if f.ndim != 1 or f.shape != a.shape or f.size == 0:
            raise ValidationError("frequencies and amplitudes must be non-empty 1-D arrays of equal length")
        lo = float(f.min()) if self.omega_min is None else float(self.omega_min)
        hi = float(f.max()) if self.omega_max is None else float(self.omega_max)
        if not 0 < lo <= hi:
            raise ValidationError("frequency bounds must satisfy 0 < omega_min <= omega_max")
        if f.min() < lo or f.max() > hi:
            raise ValidationError("frequencies fall outside [omega_min, omega_max]")
        for name, arr in (("frequencies", f), ("amplitudes", a)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "omega_min", lo)
        object.__setattr__(self, "omega_max", hi)
        object.__setattr__(self, "pair_label", tuple(self.pair_label))

    @property
    def xi0(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    @property
    def c0(self) -> float:
        """pi Xi0 / (2 Omega_max)."""
        return math.pi * self.xi0 / (2 * self.omega_max)


def make_ensemble(
    count: int,
    omega_min: float,
    omega_max: float,
    xi0: float,
    rng: np.random.Generator,
    distribution: str = "uniform",
    pair_label: tuple = (0, 1),
) -> FrequencyEnsemble:
    """Random frequencies with A_s = sqrt(xi0/count) exp(i theta_s)."""
    if count < 1:
        raise ValidationError("count must be positive")
    if not 0 < omega_min < omega_max:
        raise ValidationError("need 0 < omega_min < omega_max")
    if distribution == "uniform":
        freqs = rng.uniform(omega_min, omega_max, count)
    elif distribution == "loguniform":
        freqs = np.exp(rng.uniform(math.log(omega_min), math.log(omega_max), count))
    else:
        raise ValidationError(f"unknown frequency distribution {distribution!r}")
    phases = rng.uniform(0, 2 * math.pi, count)
    amps = math.sqrt(xi0 / count) * np.exp(1j * phases)
    return FrequencyEnsemble(freqs, amps, pair_label, omega_min, omega_max)


@dataclass(frozen=True)
class MonadSampler:
    """Uniform sampling of 2 n0 + 1 points in [t - eta, t + eta]."""

    eta: float
    half_points: int = 1_000_000
    omega_min: float | None = None

    def __post_init__(self) -> None:
        if not self.eta >= 0:
            raise ValidationError("eta must be non-negative")
        if self.half_points < 1:
            raise ValidationError("half_points must be positive")
        if self.omega_min is not None:
            self.check(self.omega_min)

    @property
    def points_per_monad(self) -> int:
        return 2 * self.half_points + 1

    def check(self, omega_min: float) -> bool:
        ok = omega_min * self.eta >= MONAD_WARN_RATIO
        if not ok:
            warnings.warn(
                f"omega_min * eta = {omega_min * self.eta:.3g} < {MONAD_WARN_RATIO:g}; "
                "monad samples will not be zero mean",
                RuntimeWarning,
                stacklevel=3,
            )
        return ok

    def draw_times(self, t: float, rng: np.random.Generator, size: int) -> np.ndarray:
        j = rng.integers(-self.half_points, self.half_points + 1, size=size)
        return t + j * (self.eta / self.half_points)


def evaluate_xi(ens: FrequencyEnsemble, times) -> np.ndarray:
    """sum_s A_s exp(i Omega_s t) at each time, blocked to bound memory."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    out = np.empty(times.shape[0], dtype=complex)
    step = max(1, _CHUNK // ens.frequencies.size)
    for i in range(0, times.shape[0], step):
        tt = times[i : i + step]
        out[i : i + step] = np.exp(1j * np.outer(tt, ens.frequencies)) @ ens.amplitudes
    return out


def sample_xi(t: float, ens: FrequencyEnsemble, sampler: MonadSampler, rng: np.random.Generator, size: int | None = None):
    """xi at times drawn from the monad window around t."""
    sampler.check(ens.omega_min)
    n = 1 if size is None else int(size)
    vals = evaluate_xi(ens, sampler.draw_times(t, rng, n))
    return complex(vals[0]) if size is None else vals


def correlation_closed(ens: FrequencyEnsemble, tau):
    """Xi(tau) = sum_s |A_s|^2 cos(Omega_s tau)."""
    tau = np.asarray(tau, dtype=float)
    flat = np.atleast_1d(tau).ravel()
    w = np.abs(ens.amplitudes) ** 2
    out = np.empty(flat.shape[0])
    step = max(1, _CHUNK // ens.frequencies.size)
    for i in range(0, flat.shape[0], step):
        out[i : i + step] = np.cos(np.outer(flat[i : i + step], ens.frequencies)) @ w
    return float(out[0]) if tau.ndim == 0 else out.reshape(tau.shape)


@dataclass(frozen=True)
class CorrelationEstimate:
    lags: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    closed: np.ndarray
    xi0: float
    c0: float
    trials: int = 0

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("tau,xi_closed,xi_empirical,stderr\n")
            for row in zip(self.lags, self.closed, self.values, self.stderr):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def correlation_empirical(
    ens: FrequencyEnsemble,
    sampler: MonadSampler,
    t: float,
    taus: Sequence[float],
    trials: int,
    rng: np.random.Generator,
    other: FrequencyEnsemble | None = None,
) -> CorrelationEstimate:
    """Monte Carlo estimate of Re <conj(xi_a(t')) xi_b(t' + tau)> over the monad.

    With `other` given the estimate is the cross-pair correlation, whose
    closed form is zero.
    """
    if trials < 100:
        raise ValidationError("trials must be at least 100")
    sampler.check(ens.omega_min)
    ens_b = ens if other is None else other
    taus = np.asarray(taus, dtype=float)
    t0 = sampler.draw_times(t, rng, trials)
    xa = np.conj(evaluate_xi(ens, t0))
    vals = np.empty(taus.shape[0])
    errs = np.empty(taus.shape[0])
    for i, tau in enumerate(taus):
        prod = (xa * evaluate_xi(ens_b, t0 + tau)).real
        vals[i] = prod.mean()
        errs[i] = prod.std(ddof=1) / math.sqrt(trials)
    closed = correlation_closed(ens, taus) if other is None else np.zeros_like(taus)
    return CorrelationEstimate(taus, vals, errs, np.atleast_1d(closed), ens.xi0, ens.c0, trials)


def pre_delta_sample(ens: FrequencyEnsemble, g: Callable[[np.ndarray], np.ndarray], grid) -> float:
    """Trapezoid quadrature of Xi(tau) g(tau) over a uniform grid."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 3:
        raise ValidationError("grid must be a 1-D array with at least 3 points")
    spacing = float(np.max(np.diff(grid)))
    limit = math.pi / (4 * ens.omega_max)
    if spacing > limit:
        raise ValidationError(
            f"grid spacing {spacing:.3g} exceeds pi/(4 Omega_max) = {limit:.3g}; "
            "the fastest oscillation would be under-resolved"
        )
    return float(integrate.trapezoid(correlation_closed(ens, grid) * g(grid), grid))


def pre_delta_gaussian_exact(ens: FrequencyEnsemble, width: float) -> float:
    """Exact integral of Xi against g(tau) = exp(-tau^2/2w^2).

    Equals sum_s |A_s|^2 sqrt(2 pi) w exp(-Omega_s^2 w^2/2), the Fourier
    transform of g sampled at the ensemble frequencies.
    """
    w2 = np.abs(ens.amplitudes) ** 2
    return float(np.sum(w2 * math.sqrt(2 * math.pi) * width * np.exp(-(ens.frequencies * width) ** 2 / 2)))


def variance_scaling(A: int, lam: int, v0: float, f_lm: float) -> float:
    """sigma^2 = f v0^2 lambda^(2(A-1))."""
    _check_scaling_args(A, lam)
    try:
        val = f_lm * v0 * v0 * float(lam) ** (2 * (A - 1))
    except OverflowError:
        val = math.inf
    if math.isinf(val):
        raise OverflowError("variance overflows in linear domain; use log_variance_scaling")
    return val


def log_variance_scaling(A: int, lam: int, v0: float, f_lm: float) -> float:
    """log sigma^2, exact for any A and lambda."""
    _check_scaling_args(A, lam)
    if f_lm <= 0 or v0 == 0:
        raise ValidationError("log domain needs f_lm > 0 and v0 != 0")
    return math.log(f_lm) + 2 * math.log(abs(v0)) + 2 * (A - 1) * math.log(lam)


def _check_scaling_args(A: int, lam: int) -> None:
    if int(A) != A or A < 1:
        raise ValidationError("A must be an integer >= 1")
    if int(lam) != lam or lam < 1:
        raise ValidationError("lambda must be an integer >= 1")


MAX_DIRECT_LAMBDA = 8
MAX_DIRECT_PARTICLES = 4


def matrix_element_direct(
    momenta_l: Sequence[int],
    momenta_m: Sequence[int] | None,
    X_l: float,
    X_m: float,
    overlap: complex,
    t: float,
    spec: LatticeSpec,
    n_particles: int = 2,
    v0: float = 1.0,
    spectator_momenta: Sequence[Sequence[int]] | None = None,
) -> complex:
    """Brute-force many-body matrix element between two detector states.

    v0 I sum' delta(r1 - r1' + r2' - r2) exp(i (p_r1 - p_r1')(X_l - X_m))
       cos(w_r1 t) cos(w_r1' t) cos(w_r2 t) cos(w_r2' t) prod_{n=2}^{A} S(t),

    where (r1, r1') run over state l, (r2, r2') over state m, terms with
    r1 = r2 and r1' = r2' are excluded, and each spectator particle
    contributes S(t) = sum_r cos^4(w_r t).

    spectator_momenta gives one mode set per spectator (n_particles - 1 of
    them).  When omitted every spectator reuses the state-l spectrum.
    """
    ml = np.asarray(momenta_l, dtype=np.int64)
    mm = ml if momenta_m is None else np.asarray(momenta_m, dtype=np.int64)
    if max(ml.size, mm.size) > MAX_DIRECT_LAMBDA or n_particles > MAX_DIRECT_PARTICLES:
        raise ValidationError(
            f"direct evaluation capped at lambda <= {MAX_DIRECT_LAMBDA} and A <= {MAX_DIRECT_PARTICLES}"
        )
    if n_particles < 1:
        raise ValidationError("n_particles must be >= 1")
    if ml.size == 0 or mm.size == 0 or overlap == 0:
        return 0j
    cl = np.cos(dispersion(np.abs(ml), spec) * t)
    cm = np.cos(dispersion(np.abs(mm), spec) * t)
    pl = wave_number(ml, spec)
    # axes: r1, r1', r2, r2'
    k1, k1p, k2, k2p = np.ix_(ml, ml, mm, mm)
    keep = (k1 - k1p + k2p - k2) == 0
    keep &= ~((k1 == k2) & (k1p == k2p))
    phase = np.exp(1j * (pl[:, None] - pl[None, :]) * (X_l - X_m))[:, :, None, None]
    amp = cl[:, None, None, None] * cl[None, :, None, None] * cm[None, None, :, None] * cm[None, None, None, :]
    core = np.sum(np.where(keep, phase * amp, 0.0))
    if spectator_momenta is None:
        spectator = float(np.sum(cl**4)) ** (n_particles - 1)
    else:
        if len(spectator_momenta) != n_particles - 1:
            raise ValidationError("need one spectator mode set per extra particle")
        spectator = 1.0
        for ks in spectator_momenta:
            ks = np.asarray(ks, dtype=np.int64)
            spectator *= float(np.sum(np.cos(dispersion(np.abs(ks), spec) * t) ** 4))
    return complex(v0 * overlap * core * spectator)


def amplification_exponent(
    lambdas: Sequence[int],
    spec: LatticeSpec,
    rng: np.random.Generator,
    n_particles: int = 2,
    n_times: int = 400,
    t_max: float = 50.0,
    shared_spectrum: bool = False,
    n_sets: int = 1,
) -> float:
    """Fitted exponent of the time-averaged |element|^2 ratio A-body / 1-body vs lambda.

    By default each spectator particle carries its own independently drawn
    mode set.  shared_spectrum=True reuses the state-l set, which locks the
    spectator factor to the core cosines and lowers the small-lambda slope.
    The ratio is averaged over n_sets independent draws per lambda.
    """
    logs_l, logs_r = [], []
    times = rng.uniform(0, t_max, n_times)
    for lam in lambdas:
        ratios = []
        for _ in range(n_sets):
            ks = generate_momenta(int(lam), spec, rng)
            extra = None
            if not shared_spectrum:
                extra = [generate_momenta(int(lam), spec, rng) for _ in range(n_particles - 1)]
            many = np.mean(
                [
                    abs(matrix_element_direct(ks, None, 0.3, -0.2, 1.0, t, spec, n_particles, spectator_momenta=extra)) ** 2
                    for t in times
                ]
            )
            one = np.mean([abs(matrix_element_direct(ks, None, 0.3, -0.2, 1.0, t, spec, 1)) ** 2 for t in times])
            ratios.append(many / one)
        logs_l.append(math.log(lam))
        logs_r.append(math.log(np.mean(ratios)))
    slope = np.polyfit(logs_l, logs_r, 1)[0]
    return float(slope)


def photon_matrix_element(
    positions: Sequence[float],
    packet_values: Sequence[complex],
    x0: float,
    momenta: Sequence[int],
    t: float,
    spec: LatticeSpec,
) -> complex:
    """N^(-1/2) sum_{l,r,r'} exp(-i(p_r - p_r')(X_l - x0)) exp(-i w_rr' t) Phi(X_l) cos(w_r t) cos(w_r' t).

    w_rr' is the dispersion at the ring distance between the two mode indices.
    """
    ks = np.asarray(momenta, dtype=np.int64)
    if ks.size == 0:
        raise ValidationError("momentum set must be non-empty")
    X = np.asarray(positions, dtype=float)
    phi = np.asarray(packet_values, dtype=complex)
    if X.shape != phi.shape:
        raise ValidationError("one packet value per position is required")
    p = wave_number(ks, spec)
    c = np.cos(dispersion(np.abs(ks), spec) * t)
    diff = np.array([[ring_distance(a, b, spec) for b in ks] for a in ks])
    w_rr = dispersion(diff, spec)
    dp = p[:, None] - p[None, :]
    pair = np.exp(-1j * w_rr * t) * np.outer(c, c)
    total = 0j
    for xl, fl in zip(X, phi):
        total += fl * np.sum(np.exp(-1j * dp * (xl - x0)) * pair)
    return complex(total / math.sqrt(spec.scale))


def frequency_3d(k, spec: LatticeSpec) -> float:
    """(2/d) sqrt(sum_axis sin^2(k_a pi / 2M)) for a mode vector k."""
    k = np.asarray(k, dtype=float)
    return float((2 / spec.step) * np.sqrt(np.sum(np.sin(k * np.pi / (2 * spec.grid_count)) ** 2)))
