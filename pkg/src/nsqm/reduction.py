"""Stochastic reduction of a finite set of complex amplitudes.

Each active amplitude obeys the Ito equation

    i dC_l = sum_m dB_lm C_m + i sum_m D_lm C_m dt,
    D_lm = -sigma_lm^2 conj(C_m) / (2 conj(C_l)),

so the drift of C_l is -C_l a_l / (2 p_l) dt with p_l = |C_l|^2 and
a_l = sum_m sigma_lm^2 p_m.  The drift is applied radially as
C_l <- C_l sqrt(1 - a_l dt / p_l), which moves p_l by exactly -a_l dt.
When p_l <= a_l dt the drift cannot be applied in full.  The amplitude is
then set to zero and, with probability p_l / (a_l dt), left active so the
noise refeeds it with expected weight a_l dt; otherwise it is absorbed for
good.  Either way E[p_l] is unchanged, so the martingale property survives
coarse steps.  Always absorbing would lose weight p_l and clamping without
absorption would gain it, biasing Born frequencies at order sigma^2 dt.
The uniform variate for this choice comes from one extra normal per step.
Amplitudes falling under the absorption floor are absorbed outright.

Noise increments are Hermitian by default: dB_ml = conj(dB_lm), dB_ll = 0,
each upper pair an independent circular Gaussian with
E|dB_lm|^2 = sigma_lm^2 dt.

Every trajectory draws from its own Philox stream keyed by (seed, index), so
results do not depend on how trajectories are spread over threads.  Normals
are drawn in growing blocks; a block of shape (k, n) holds exactly the values
k successive draws of size n would give, so the compiled kernel and the
step-by-step numpy route consume identical streams.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from nsqm.errors import DomainError, ShapeError, ValidationError

DEFAULT_FLOOR = 1e-8
DEFAULT_THRESHOLD = 1e-3
NORM_TOL = 1e-9
FIRST_CHUNK = 1024
MAX_CHUNK = 16384
BLOCK_SIZE = 256
BATCH_SIZE = 4096
BATCH_NORMAL_ROWS = 1 << 16

HERMITIAN = "hermitian"
INDEPENDENT = "independent"

# kernel status codes
_RUNNING = 0
_STOPPED = 1


@dataclass(frozen=True)
class AmplitudeState:
    """Reduction amplitudes C_l with unit total weight."""

    amplitudes: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        c = np.asarray(self.amplitudes, dtype=complex)
        if c.ndim != 1 or c.size < 1:
            raise ShapeError("amplitudes must be a non-empty 1-D sequence")
        total = float(np.sum(np.abs(c) ** 2))
        if abs(total - 1.0) > NORM_TOL:
            raise ValidationError(f"squared amplitudes must sum to 1 (got {total:.12g})")
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "amplitudes", c)

    @classmethod
    def from_weights(cls, weights, phases=None, time: float = 0.0) -> "AmplitudeState":
        """Amplitudes sqrt(w_l) exp(i phase_l)."""
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or w.size < 1:
            raise ShapeError("weights must be a non-empty 1-D sequence")
        if np.any(w < 0):
            raise ValidationError("weights must be non-negative")
        if abs(float(w.sum()) - 1.0) > NORM_TOL:
            raise ValidationError(f"weights must sum to 1 (got {float(w.sum()):.12g})")
        ph = np.zeros_like(w) if phases is None else np.asarray(phases, dtype=float)
        if ph.shape != w.shape:
            raise ShapeError("one phase per weight is required")
        return cls(np.sqrt(w) * np.exp(1j * ph), time)

    @property
    def n(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


@dataclass(frozen=True)
class NoiseSpec:
    """Coupling matrix sigma_lm, time step and increment structure."""

    sigma: np.ndarray
    dt: float | None = None
    structure: str = HERMITIAN

    def __post_init__(self) -> None:
        s = np.array(self.sigma, dtype=float)
        if s.ndim == 0:
            raise ShapeError("sigma must be a square matrix")
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ShapeError("sigma must be a square matrix")
        if not np.all(np.isfinite(s)) or np.any(s < 0):
            raise ValidationError("sigma entries must be finite and non-negative")
        if not np.array_equal(s, s.T):
            raise ValidationError("sigma must be symmetric")
        if np.any(np.diag(s) != 0):
            raise ValidationError("sigma must have a zero diagonal")
        if self.structure not in (HERMITIAN, INDEPENDENT):
            raise ValidationError(f"structure must be {HERMITIAN!r} or {INDEPENDENT!r}")
        dt = self.dt
        if dt is None:
            peak = float(s.max()) if s.size else 0.0
            dt = 1e-4 / peak**2 if peak > 0 else 1e-4
        if not (dt > 0 and math.isfinite(dt)):
            raise ValidationError("dt must be positive and finite")
        s.flags.writeable = False
        object.__setattr__(self, "sigma", s)
        object.__setattr__(self, "dt", float(dt))

    @classmethod
    def uniform(cls, n: int, sigma: float, dt: float | None = None, structure: str = HERMITIAN) -> "NoiseSpec":
        s = np.full((n, n), float(sigma))
        np.fill_diagonal(s, 0.0)
        return cls(s, dt, structure)

    @property
    def n(self) -> int:
        return self.sigma.shape[0]

    @property
    def n_normals(self) -> int:
        """Standard normals consumed per step."""
        pairs = self.n * (self.n - 1) // 2
        if pairs == 0:
            return 0
        # the last column feeds the boundary rule
        return (4 * pairs if self.structure == INDEPENDENT else 2 * pairs) + 1


@dataclass(frozen=True)
class TrajectoryResult:
    survivor: int | None
    steps: int
    final_state: AmplitudeState
    max_norm_drift: float


@dataclass(frozen=True)
class EnsembleStats:
    """Aggregated reduction ensemble.

    times holds the recording times; mean_weights[t, l] and weight_stderr
    the ensemble mean of |C_l|^2 and its standard error; product_moments
    [t, q] the mean of |C_l|^2 |C_m|^2 for pairs[q] = (l, m).
    """

    survivor_counts: np.ndarray
    times: np.ndarray
    pairs: tuple
    product_moments: np.ndarray
    product_stderr: np.ndarray
    mean_weights: np.ndarray
    weight_stderr: np.ndarray
    norm_audit: float
    survivors: np.ndarray
    steps: np.ndarray
    initial_weights: np.ndarray
    dt: float

    @property
    def n_traj(self) -> int:
        return int(self.survivors.shape[0])

    @property
    def completed(self) -> int:
        return int(np.sum(self.survivors >= 0))

    def frequencies(self) -> np.ndarray:
        return self.survivor_counts / self.n_traj

    def trajectories_to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trajectory_id", "survivor", "steps"])
            for i, (s, k) in enumerate(zip(self.survivors, self.steps)):
                w.writerow([i, "" if s < 0 else int(s), int(k)])

    def moments_to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "pair", "product_moment", "stderr"])
            for i, t in enumerate(self.times):
                for q, (l, m) in enumerate(self.pairs):
                    w.writerow([repr(float(t)), f"{l}-{m}", repr(float(self.product_moments[i, q])), repr(float(self.product_stderr[i, q]))])


@dataclass(frozen=True)
class MartingaleReport:
    max_z: np.ndarray
    worst: float
    passed: bool
    final_gap: float | None
    tolerance: float = 3.0


def drift_matrix(state: AmplitudeState, noise: NoiseSpec, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """D_lm = -sigma_lm^2 conj(C_m) / (2 conj(C_l)), zero on the diagonal.

    Raises DomainError naming the absorbed index when some |C_l|^2 with a
    non-zero coupling lies below the absorption floor.
    """
    _check_sizes(state, noise)
    c = state.amplitudes
    s2 = noise.sigma**2
    small = np.abs(c) ** 2 < floor
    for l in np.nonzero(small)[0]:
        if np.any(s2[l] > 0):
            raise DomainError(f"amplitude {l} is below the absorption floor; it must be absorbed, not divided by")
    with np.errstate(divide="ignore", invalid="ignore"):
        d = -s2 * np.conj(c)[None, :] / (2 * np.conj(c)[:, None])
    d[small, :] = 0.0
    np.fill_diagonal(d, 0.0)
    return d


def _check_sizes(state: AmplitudeState, noise: NoiseSpec) -> None:
    if state.n != noise.n:
        raise ShapeError(f"state has {state.n} amplitudes, noise couples {noise.n}")


@numba.njit(cache=True, nogil=True)
def _advance(c, active, s2, sig, dt, normals, independent, drift_sign, floor, threshold,
             record_every, step0, records, max_steps, out):
    """Advance c in place over the rows of `normals`.

    out[0] receives the number of steps taken, out[1] the largest raw norm
    drift, out[2] the status (1 once a survivor is reached).
    """
    n = c.shape[0]
    n_rows = normals.shape[0]
    n_cols = normals.shape[1]
    re = np.empty(n)
    im = np.empty(n)
    ore = np.empty(n)
    oim = np.empty(n)
    p = np.empty(n)
    a = np.empty(n)
    for l in range(n):
        re[l] = c[l].real
        im[l] = c[l].imag
    half = math.sqrt(dt / 2.0)
    worst = out[1]
    taken = 0
    status = _RUNNING
    for row in range(n_rows):
        if step0 + taken >= max_steps:
            break
        for l in range(n):
            ore[l] = re[l]
            oim[l] = im[l]
            p[l] = re[l] * re[l] + im[l] * im[l]
        for l in range(n):
            acc = 0.0
            if active[l]:
                for m in range(n):
                    if active[m]:
                        acc += s2[l, m] * p[m]
            a[l] = acc
        # radial drift p_l -> p_l - a_l dt; see _boundary for overshoots
        u = -1.0
        for l in range(n):
            if active[l] and a[l] > 0.0:
                step_p = drift_sign * a[l] * dt
                if p[l] > step_p:
                    f = math.sqrt(1.0 - step_p / p[l])
                    re[l] *= f
                    im[l] *= f
                else:
                    if u < 0.0:
                        u = 0.5 * math.erfc(-normals[row, n_cols - 1] / math.sqrt(2.0))
                    re[l] = 0.0
                    im[l] = 0.0
                    if u >= p[l] / step_p:
                        active[l] = False
        # -i dB_lm C_m with dB = x + i y gives (y Cr + x Ci) + i (y Ci - x Cr)
        k = 0
        for l in range(n):
            for m in range(l + 1, n):
                w = sig[l, m] * half
                x = w * normals[row, k]
                y = w * normals[row, k + 1]
                k += 2
                if independent:
                    x2 = w * normals[row, k]
                    y2 = w * normals[row, k + 1]
                    k += 2
                else:
                    x2 = x
                    y2 = -y
                if active[l] and active[m]:
                    re[l] += y * ore[m] + x * oim[m]
                    im[l] += y * oim[m] - x * ore[m]
                    re[m] += y2 * ore[l] + x2 * oim[l]
                    im[m] += y2 * oim[l] - x2 * ore[l]
        total = 0.0
        for l in range(n):
            total += re[l] * re[l] + im[l] * im[l]
        drift = abs(total - 1.0)
        if drift > worst:
            worst = drift
        for l in range(n):
            if active[l] and re[l] * re[l] + im[l] * im[l] < floor:
                re[l] = 0.0
                im[l] = 0.0
                active[l] = False
        total = 0.0
        for l in range(n):
            total += re[l] * re[l] + im[l] * im[l]
        scale = 1.0 / math.sqrt(total)
        best = 0.0
        for l in range(n):
            re[l] *= scale
            im[l] *= scale
            q = re[l] * re[l] + im[l] * im[l]
            if q > best:
                best = q
        taken += 1
        s = step0 + taken
        if record_every > 0 and s % record_every == 0:
            r = s // record_every
            if r < records.shape[0]:
                for l in range(n):
                    records[r, l] = re[l] * re[l] + im[l] * im[l]
        if best >= 1.0 - threshold:
            status = _STOPPED
            break
    for l in range(n):
        c[l] = re[l] + 1j * im[l]
    out[0] = taken
    out[1] = worst
    out[2] = status


def step(
    state: AmplitudeState,
    noise: NoiseSpec,
    rng: np.random.Generator,
    floor: float = DEFAULT_FLOOR,
    drift_sign: float = 1.0,
    return_drift: bool = False,
):
    """One Euler-Maruyama step with absorption and renormalization.

    Uses the same arithmetic as the compiled kernel but in plain numpy.
    With return_drift=True the raw norm drift |sum |C|^2 - 1| before
    absorption and renormalization is returned as well.
    """
    _check_sizes(state, noise)
    g = rng.standard_normal(noise.n_normals)
    c, drift = _numpy_update(state.amplitudes.copy(), np.abs(state.amplitudes) ** 2 >= floor, noise, g, floor, drift_sign)
    new = AmplitudeState(c, state.time + noise.dt)
    return (new, drift) if return_drift else new


def _numpy_update(c, active, noise: NoiseSpec, g, floor, drift_sign):
    n = c.shape[0]
    dt = noise.dt
    s2 = noise.sigma**2
    old = c.copy()
    p = np.abs(c) ** 2
    act = active.astype(float)
    a = act * (s2 @ (act * p))
    active = active.copy()
    u = 0.5 * math.erfc(-g[-1] / math.sqrt(2.0)) if g.size else 1.0
    for l in np.nonzero(active & (a > 0))[0]:
        step_p = drift_sign * a[l] * dt
        if p[l] > step_p:
            c[l] = c[l] * math.sqrt(1.0 - step_p / p[l])
        else:
            c[l] = 0.0
            active[l] = u < p[l] / step_p
    db = _increments(noise, g)
    mask = np.outer(active, active)
    np.fill_diagonal(mask, False)
    c[active] = c[active] - 1j * ((db * mask) @ old)[active]
    drift = abs(float(np.sum(np.abs(c) ** 2)) - 1.0)
    dead = active & (np.abs(c) ** 2 < floor)
    c[dead] = 0.0
    if n and not np.any(np.abs(c) > 0):
        raise AssertionError("all amplitudes absorbed in one step")
    c = c / math.sqrt(float(np.sum(np.abs(c) ** 2)))
    return c, drift


def _increments(noise: NoiseSpec, g) -> np.ndarray:
    n = noise.n
    half = math.sqrt(noise.dt / 2.0)
    db = np.zeros((n, n), dtype=complex)
    k = 0
    for l in range(n):
        for m in range(l + 1, n):
            s = noise.sigma[l, m] * half
            db[l, m] = s * (g[k] + 1j * g[k + 1])
            k += 2
            if noise.structure == INDEPENDENT:
                db[m, l] = s * (g[k] + 1j * g[k + 1])
                k += 2
            else:
                db[m, l] = np.conj(db[l, m])
    return db


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based substream for trajectory `index` under `seed`."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


def _check_run_args(threshold: float, floor: float, max_steps: int) -> None:
    if not 0 < threshold <= 1e-2:
        raise ValidationError("survivor_threshold must lie in (0, 1e-2]")
    if not 0 < floor < threshold:
        raise ValidationError("absorption_floor must be positive and below the survivor threshold")
    if max_steps < 1:
        raise ValidationError("max_steps must be positive")


def _survivor(c: np.ndarray, threshold: float) -> int | None:
    p = np.abs(c) ** 2
    top = int(np.argmax(p))
    return top if p[top] >= 1.0 - threshold else None


def _simulate(c0, noise, max_steps, threshold, floor, rng, drift_sign, record_every, records):
    """Run one trajectory through the kernel; returns (c, steps, worst, stopped)."""
    c = np.array(c0, dtype=np.complex128)
    active = np.abs(c) ** 2 >= floor
    c[~active] = 0.0
    c /= math.sqrt(float(np.sum(np.abs(c) ** 2)))
    if records is not None:
        records[0] = np.abs(c) ** 2
    if _survivor(c, threshold) is not None or noise.n == 1:
        return c, 0, 0.0, True
    s2 = noise.sigma**2
    sig = np.ascontiguousarray(noise.sigma)
    independent = noise.structure == INDEPENDENT
    out = np.zeros(3)
    rec = records if records is not None else np.zeros((0, noise.n))
    steps = 0
    worst = 0.0
    chunk = FIRST_CHUNK
    while steps < max_steps:
        rows = min(chunk, max_steps - steps)
        chunk = min(2 * chunk, MAX_CHUNK)
        normals = rng.standard_normal((rows, noise.n_normals))
        out[1] = worst
        _advance(c, active, s2, sig, noise.dt, normals, independent, float(drift_sign), floor, threshold,
                 record_every, steps, rec, max_steps, out)
        steps += int(out[0])
        worst = out[1]
        if out[2] == _STOPPED:
            return c, steps, worst, True
    return c, steps, worst, False


def run_trajectory(
    C0: AmplitudeState,
    noise: NoiseSpec,
    max_steps: int = 10**6,
    survivor_threshold: float = DEFAULT_THRESHOLD,
    rng: np.random.Generator | None = None,
    absorption_floor: float = DEFAULT_FLOOR,
    drift_sign: float = 1.0,
    seed: int = 0,
) -> TrajectoryResult:
    """Iterate the reduction until one weight reaches 1 - survivor_threshold.

    Without an explicit rng the trajectory uses substream 0 of `seed`.
    """
    _check_sizes(C0, noise)
    _check_run_args(survivor_threshold, absorption_floor, max_steps)
    rng = trajectory_rng(seed, 0) if rng is None else rng
    c, steps, worst, stopped = _simulate(
        C0.amplitudes, noise, max_steps, survivor_threshold, absorption_floor, rng, drift_sign, 0, None
    )
    survivor = _survivor(c, survivor_threshold) if stopped else None
    return TrajectoryResult(survivor, steps, AmplitudeState(c, C0.time + steps * noise.dt), worst)


def run_trajectory_reference(
    C0: AmplitudeState,
    noise: NoiseSpec,
    max_steps: int,
    survivor_threshold: float = DEFAULT_THRESHOLD,
    rng: np.random.Generator | None = None,
    absorption_floor: float = DEFAULT_FLOOR,
    drift_sign: float = 1.0,
    seed: int = 0,
) -> TrajectoryResult:
    """Pure numpy loop over `step`; an independent route to run_trajectory."""
    _check_sizes(C0, noise)
    _check_run_args(survivor_threshold, absorption_floor, max_steps)
    rng = trajectory_rng(seed, 0) if rng is None else rng
    c = np.array(C0.amplitudes)
    c[np.abs(c) ** 2 < absorption_floor] = 0.0
    state = AmplitudeState(c / math.sqrt(float(np.sum(np.abs(c) ** 2))), C0.time)
    worst = 0.0
    steps = 0
    survivor = _survivor(state.amplitudes, survivor_threshold)
    while survivor is None and steps < max_steps and noise.n > 1:
        state, drift = step(state, noise, rng, absorption_floor, drift_sign, return_drift=True)
        worst = max(worst, drift)
        steps += 1
        survivor = _survivor(state.amplitudes, survivor_threshold)
    return TrajectoryResult(survivor, steps, state, worst)


def _run_block(args):
    (c0, noise, start, stop, seed, max_steps, threshold, floor, drift_sign, record_every, n_rec) = args
    count = stop - start
    survivors = np.full(count, -1, dtype=np.int64)
    steps = np.zeros(count, dtype=np.int64)
    worst = np.zeros(count)
    records = np.zeros((count, n_rec, noise.n)) if n_rec else None
    for i in range(count):
        rec = records[i] if records is not None else None
        if rec is not None:
            rec[:] = np.nan
        c, k, w, stopped = _simulate(
            c0, noise, max_steps, threshold, floor, trajectory_rng(seed, start + i), drift_sign, record_every, rec
        )
        if stopped:
            s = _survivor(c, threshold)
            survivors[i] = -1 if s is None else s
        steps[i] = k
        worst[i] = w
        if rec is not None:
            # hold the final weights after the trajectory stops
            done = np.isnan(rec[:, 0])
            rec[done] = np.abs(c) ** 2
    return survivors, steps, worst, records


def _pairs(n: int) -> tuple:
    return tuple((l, m) for l in range(n) for m in range(l + 1, n))


def run_ensemble(
    C0: AmplitudeState,
    noise: NoiseSpec,
    n_traj: int,
    max_steps: int = 10**6,
    survivor_threshold: float = DEFAULT_THRESHOLD,
    seed: int = 0,
    absorption_floor: float = DEFAULT_FLOOR,
    record_every: int = 0,
    n_records: int = 0,
    threads: int = 1,
    drift_sign: float = 1.0,
) -> EnsembleStats:
    """Run n_traj independent trajectories and aggregate them.

    Trajectory i always uses substream (seed, i).  Moments are recorded at
    times k * record_every * dt for k = 0..n_records; a trajectory that has
    stopped keeps contributing its final weights.  Aggregation runs in a
    fixed order, so the output is identical for any thread count.
    """
    _check_sizes(C0, noise)
    _check_run_args(survivor_threshold, absorption_floor, max_steps)
    if n_traj < 1:
        raise ValidationError("n_traj must be at least 1")
    if threads < 1:
        raise ValidationError("threads must be at least 1")
    if record_every < 0 or n_records < 0:
        raise ValidationError("record_every and n_records must be non-negative")
    n_rec = n_records + 1 if record_every > 0 else 1
    every = record_every if record_every > 0 else 0
    blocks = [
        (C0.amplitudes, noise, a, min(a + BLOCK_SIZE, n_traj), seed, max_steps, survivor_threshold,
         absorption_floor, drift_sign, every, n_rec)
        for a in range(0, n_traj, BLOCK_SIZE)
    ]
    if threads == 1:
        parts = [_run_block(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_run_block, blocks))
    survivors = np.concatenate([p[0] for p in parts])
    steps = np.concatenate([p[1] for p in parts])
    worst = float(max(np.max(p[2]) for p in parts))
    rec = np.concatenate([p[3] for p in parts], axis=0)
    pairs = _pairs(noise.n)
    counts = np.bincount(survivors[survivors >= 0], minlength=noise.n).astype(np.int64)
    mean_w = rec.mean(axis=0)
    se_w = rec.std(axis=0, ddof=1) / math.sqrt(n_traj) if n_traj > 1 else np.zeros_like(mean_w)
    if pairs:
        prods = np.stack([rec[:, :, l] * rec[:, :, m] for l, m in pairs], axis=-1)
        pm = prods.mean(axis=0)
        pse = prods.std(axis=0, ddof=1) / math.sqrt(n_traj) if n_traj > 1 else np.zeros_like(pm)
    else:
        pm = np.zeros((n_rec, 0))
        pse = np.zeros((n_rec, 0))
    times = np.arange(n_rec) * every * noise.dt
    return EnsembleStats(
        survivor_counts=counts,
        times=times,
        pairs=pairs,
        product_moments=pm,
        product_stderr=pse,
        mean_weights=mean_w,
        weight_stderr=se_w,
        norm_audit=worst,
        survivors=survivors,
        steps=steps,
        initial_weights=C0.weights.copy(),
        dt=noise.dt,
    )


def verify_martingale(stats: EnsembleStats, C0: AmplitudeState, n_se: float = 3.0) -> MartingaleReport:
    """Check <|C_l(t)|^2> = |C_l(0)|^2 within n_se standard errors at every recorded time.

    Points whose standard error is at rounding level must match to 1e-12.  When
    every trajectory completed, final_gap is the largest difference between
    the final mean weight and the survivor frequency.
    """
    p0 = C0.weights
    if stats.mean_weights.shape[1] != p0.shape[0]:
        raise ShapeError("stats and initial state have different sizes")
    dev = np.abs(stats.mean_weights - p0[None, :])
    se = stats.weight_stderr
    # a standard error at rounding level means every trajectory agrees
    exact = se <= 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(exact, np.where(dev <= 1e-12, 0.0, np.inf), dev / se)
    max_z = z.max(axis=0)
    worst = float(max_z.max())
    gap = None
    if stats.completed == stats.n_traj:
        gap = float(np.max(np.abs(stats.mean_weights[-1] - stats.frequencies())))
    return MartingaleReport(max_z, worst, bool(worst < n_se), gap, n_se)


def fit_product_decay(stats: EnsembleStats, pair_index: int = 0, t_max: float | None = None) -> float:
    """Least-squares slope of log <|C_l|^2 |C_m|^2> against t up to t_max."""
    t = stats.times
    y = stats.product_moments[:, pair_index]
    keep = (y > 0) & (t <= (t[-1] if t_max is None else t_max))
    if np.sum(keep) < 3:
        raise ValidationError("need at least three positive recorded moments to fit")
    return float(np.polyfit(t[keep], np.log(y[keep]), 1)[0])


def mean_raw_drift(C0: AmplitudeState, noise: NoiseSpec, n_steps: int, rng: np.random.Generator) -> float:
    """Mean pre-renormalization norm drift over n_steps steps taken from C0."""
    total = 0.0
    for _ in range(n_steps):
        _, d = step(C0, noise, rng, return_drift=True)
        total += d
    return total / n_steps


def reduction_time_scaling(sigmas, n_traj: int, dt: float, seed: int = 0, weights=(0.5, 0.5),
                           survivor_threshold: float = 1e-2) -> tuple[np.ndarray, float]:
    """Mean reduction time per sigma and the fitted log-log slope."""
    C0 = AmplitudeState.from_weights(weights)
    n = C0.n
    times = []
    for s in sigmas:
        stats = run_ensemble(C0, NoiseSpec.uniform(n, s, dt), n_traj, survivor_threshold=survivor_threshold, seed=seed)
        times.append(float(np.mean(stats.steps)) * dt)
    times = np.array(times)
    slope = float(np.polyfit(np.log(sigmas), np.log(times), 1)[0])
    return times, slope


@numba.njit(cache=True, nogil=True)
def _batch_advance(amps, survivors, s2, sig, dt, normals, independent, floor, threshold, max_steps,
                   c, active, progress):
    """Reduce rows of `amps` in order, consuming `normals` as one shared stream.

    progress holds (row, steps taken by that row, next normal row, started).
    Returns when every row is done or the normals run out.
    """
    k, n = amps.shape
    rec = np.zeros((0, n))
    out = np.zeros(3)
    while progress[0] < k:
        i = progress[0]
        if progress[3] == 0:
            total = 0.0
            for l in range(n):
                c[l] = amps[i, l]
                q = c[l].real ** 2 + c[l].imag ** 2
                active[l] = q >= floor
                if not active[l]:
                    c[l] = 0.0
                    q = 0.0
                total += q
            best = 0.0
            top = 0
            for l in range(n):
                c[l] = c[l] / math.sqrt(total)
                q = c[l].real ** 2 + c[l].imag ** 2
                if q > best:
                    best = q
                    top = l
            progress[1] = 0
            progress[3] = 1
            if best >= 1.0 - threshold or n == 1:
                survivors[i] = top
                progress[0] += 1
                progress[3] = 0
                continue
        start = progress[2]
        if start >= normals.shape[0]:
            return
        out[0] = 0.0
        out[1] = 0.0
        out[2] = _RUNNING
        _advance(c, active, s2, sig, dt, normals[start:], independent, 1.0, floor, threshold,
                 0, progress[1], rec, max_steps, out)
        taken = int(out[0])
        progress[2] += taken
        progress[1] += taken
        if out[2] == _STOPPED or progress[1] >= max_steps:
            if out[2] == _STOPPED:
                best = 0.0
                top = 0
                for l in range(n):
                    q = c[l].real ** 2 + c[l].imag ** 2
                    if q > best:
                        best = q
                        top = l
                survivors[i] = top
            else:
                survivors[i] = -1
            progress[0] += 1
            progress[3] = 0


def _batch_block(args):
    (amps, noise, block, seed, max_steps, threshold, floor) = args
    rng = trajectory_rng(seed, block)
    survivors = np.full(amps.shape[0], -1, dtype=np.int64)
    c = np.zeros(noise.n, dtype=np.complex128)
    active = np.zeros(noise.n, dtype=np.bool_)
    progress = np.zeros(4, dtype=np.int64)
    s2 = noise.sigma**2
    sig = np.ascontiguousarray(noise.sigma)
    independent = noise.structure == INDEPENDENT
    while progress[0] < amps.shape[0]:
        normals = rng.standard_normal((BATCH_NORMAL_ROWS, max(noise.n_normals, 1)))
        progress[2] = 0
        _batch_advance(amps, survivors, s2, sig, noise.dt, normals, independent, floor, threshold, max_steps,
                       c, active, progress)
    return survivors


def reduce_batch(
    weights,
    noise: NoiseSpec,
    seed: int = 0,
    max_steps: int = 10**6,
    survivor_threshold: float = DEFAULT_THRESHOLD,
    absorption_floor: float = DEFAULT_FLOOR,
    threads: int = 1,
) -> np.ndarray:
    """Reduce one superposition per row of `weights` and return the survivors.

    Row i starts from real amplitudes sqrt(weights[i]).  Rows are grouped in
    fixed blocks of BATCH_SIZE; block b draws its normals from substream
    (seed, b) and its rows consume them in order, so the result depends only
    on (weights, seed).  Unfinished rows report -1.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2 or w.shape[1] != noise.n:
        raise ShapeError(f"weights must have shape (k, {noise.n})")
    if np.any(w < 0) or np.any(np.abs(w.sum(axis=1) - 1.0) > NORM_TOL):
        raise ValidationError("each row of weights must be non-negative and sum to 1")
    _check_run_args(survivor_threshold, absorption_floor, max_steps)
    if threads < 1:
        raise ValidationError("threads must be at least 1")
    amps = np.sqrt(w).astype(np.complex128)
    blocks = [
        (amps[a:a + BATCH_SIZE], noise, a // BATCH_SIZE, seed, max_steps, survivor_threshold, absorption_floor)
        for a in range(0, w.shape[0], BATCH_SIZE)
    ]
    if not blocks:
        return np.zeros(0, dtype=np.int64)
    if threads == 1:
        parts = [_batch_block(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_batch_block, blocks))
    return np.concatenate(parts)
