"""Measurement scenarios driven by the reduction engine.

Every branch choice in these scenarios is made by running the stochastic
reduction on the branch weights, never by a direct coin flip, so each
scenario run is also a Born-rule test of the engine.  Screen positions in
the interference experiment are continuous and are sampled directly from
the intensity law of the branch that reached the screen.

Times use c = 1 and the geometry passed in by the caller.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from nsqm.errors import DomainError, ValidationError
from nsqm.reduction import NoiseSpec, reduce_batch

ABSORBER = "absorber"
CHOPPER = "chopper"
SPIN = "spin"
POLARIZATION = "polarization"

PROB_TOL = 1e-12


@dataclass(frozen=True)
class ReductionSettings:
    """Engine parameters shared by all scenario reductions.

    Attributes
    ----------
    sigma : float
        Uniform coupling between the two branches of each reduction.
    dt : float
        Integration step.
    threshold : float
        Survivor threshold; small enough that its Born bias is negligible
        next to the statistical bands used here.
    threads : int
        Worker threads; results do not depend on it.
    """

    sigma: float = 1.0
    dt: float = 1e-3
    threshold: float = 1e-4
    threads: int = 1

    def __post_init__(self) -> None:
        if not self.sigma > 0 or not self.dt > 0:
            raise ValidationError("sigma and dt must be positive")
        if self.threads < 1:
            raise ValidationError("threads must be at least 1")

    def reduce(self, weights, seed: int) -> np.ndarray:
        """Reduce each row of `weights` and return the surviving branch index."""
        w = np.atleast_2d(np.asarray(weights, dtype=float))
        noise = NoiseSpec.uniform(w.shape[1], self.sigma, self.dt)
        out = reduce_batch(w, noise, seed=seed, survivor_threshold=self.threshold, threads=self.threads)
        if np.any(out < 0):
            raise DomainError("a reduction did not finish within the step budget")
        return out


def stage_seed(seed: int, *stage: int) -> int:
    """Independent 64-bit seed for one stage of a scenario."""
    return int(np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stage)).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class Event:
    """One reduction (or deterministic arrival) within a scenario run."""

    time: float
    label: str
    probabilities: tuple
    chosen: int


@dataclass
class EventLog:
    """Ordered events of a single run and its terminal outcome."""

    events: list = field(default_factory=list)
    outcome: str | None = None

    def add(self, time: float, label: str, probabilities, chosen: int) -> None:
        probs = tuple(float(p) for p in probabilities)
        if abs(math.fsum(probs) - 1.0) > PROB_TOL or min(probs) < 0:
            raise ValidationError(f"event {label!r}: probabilities must be non-negative and sum to 1")
        if not 0 <= chosen < len(probs):
            raise ValidationError(f"event {label!r}: chosen branch out of range")
        if self.events and time < self.events[-1].time:
            raise ValidationError("event times must be non-decreasing")
        self.events.append(Event(float(time), label, probs, int(chosen)))

    @property
    def final_time(self) -> float:
        return self.events[-1].time if self.events else 0.0


@dataclass
class ScenarioResult:
    """Ensemble of event logs with a fixed outcome alphabet."""

    name: str
    outcomes: tuple
    logs: list

    @property
    def n_events(self) -> int:
        return len(self.logs)

    def counts(self) -> dict:
        c = {o: 0 for o in self.outcomes}
        for log in self.logs:
            c[log.outcome] += 1
        return c

    def frequencies(self) -> dict:
        return {o: k / self.n_events for o, k in self.counts().items()}

    def to_csv(self, path) -> None:
        """Per-run rows: id, outcome, final time and the branch path."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["event_id", "outcome", "final_time", "path"])
            for i, log in enumerate(self.logs):
                path_str = ";".join(f"{e.label}@{e.time:.6g}:{e.chosen}" for e in log.events)
                w.writerow([i, log.outcome, f"{log.final_time:.6g}", path_str])


def multinomial_z(counts: dict, expected: dict) -> dict:
    """Standardized deviation of each count from its expected probability."""
    n = sum(counts.values())
    z = {}
    for k, p in expected.items():
        sd = math.sqrt(n * p * (1 - p))
        dev = counts.get(k, 0) - n * p
        z[k] = 0.0 if sd == 0 and dev == 0 else (math.inf if sd == 0 else dev / sd)
    return z


# interference with an attenuated slit


@dataclass(frozen=True)
class InterferenceParams:
    """Two-slit setup with an attenuating element on slit R.

    Attributes
    ----------
    a : float
        Probability of passing the element undisturbed.
    alpha : float
        Phase offset added to the screen phase.
    mode : str
        "absorber" (coherent attenuation) or "chopper" (alternating blocking).
    """

    a: float
    alpha: float = 0.0
    mode: str = ABSORBER

    def __post_init__(self) -> None:
        if not 0.0 <= self.a <= 1.0:
            raise ValidationError("a must lie in [0, 1]")
        if self.mode not in (ABSORBER, CHOPPER):
            raise ValidationError(f"mode must be {ABSORBER!r} or {CHOPPER!r}")

    @property
    def fringe_amplitude(self) -> float:
        """Coefficient g in I = 1 + a + 2 g cos(alpha)."""
        return math.sqrt(self.a) if self.mode == ABSORBER else self.a

    @property
    def contrast(self) -> float:
        return 2 * self.fringe_amplitude / (1 + self.a)


def attenuation_intensity(params: InterferenceParams, alpha_grid) -> tuple[np.ndarray, float]:
    """Screen intensity over `alpha_grid` in units of |psi_L|^2 and its contrast.

    Returns
    -------
    intensity : ndarray
        1 + a + 2 g cos(alpha + alpha0) with g = sqrt(a) or a.
    contrast : float
        (I_max - I_min) / (I_max + I_min) of the full fringe.
    """
    alpha = np.asarray(alpha_grid, dtype=float)
    g = params.fringe_amplitude
    return 1 + params.a + 2 * g * np.cos(alpha + params.alpha), params.contrast


@dataclass
class AttenuationHistogram:
    """Monte Carlo screen histogram with its closed-form expectation."""

    params: InterferenceParams
    edges: np.ndarray
    counts: np.ndarray
    expected: np.ndarray
    contrast: float
    contrast_stderr: float
    branch_counts: dict
    branch_expected: dict
    n_events: int

    @property
    def n_screen(self) -> int:
        return int(self.counts.sum())

    @property
    def chi2_per_bin(self) -> np.ndarray:
        return (self.counts - self.expected) ** 2 / self.expected

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["alpha_lo", "alpha_hi", "count", "expected"])
            for lo, hi, k, e in zip(self.edges[:-1], self.edges[1:], self.counts, self.expected):
                w.writerow([f"{lo:.6f}", f"{hi:.6f}", int(k), f"{e:.6f}"])


def _bin_basis(edges: np.ndarray, phase: float) -> np.ndarray:
    """Integrals of 1, cos(alpha + phase), sin(alpha + phase) over each bin."""
    lo, hi = edges[:-1] + phase, edges[1:] + phase
    return np.stack([hi - lo, np.sin(hi) - np.sin(lo), np.cos(lo) - np.cos(hi)], axis=1)


def _sample_fringe(rng: np.random.Generator, n: int, lo: float, hi: float, g0: float, g: float, phase: float):
    """Draw n screen phases from density proportional to g0 + 2 g cos(alpha + phase)."""
    out = np.empty(0)
    top = g0 + 2 * abs(g)
    while out.size < n:
        need = n - out.size
        x = rng.uniform(lo, hi, size=2 * need + 16)
        keep = rng.uniform(0, top, size=x.size) < g0 + 2 * g * np.cos(x + phase)
        out = np.concatenate([out, x[keep][:need]])
    return out


def _fit_contrast(counts: np.ndarray, edges: np.ndarray, phase: float) -> tuple[float, float]:
    """Weighted least squares of bin counts on the bin-integrated fringe basis."""
    X = _bin_basis(edges, phase)
    wts = 1.0 / np.maximum(counts, 1.0)
    A = X.T @ (X * wts[:, None])
    coef = np.linalg.solve(A, X.T @ (counts * wts))
    cov = np.linalg.inv(A)
    c0, c1, c2 = coef
    amp = math.hypot(c1, c2)
    v = amp / c0
    # delta method on v = |(c1, c2)| / c0
    grad = np.array([-v / c0, c1 / (amp * c0) if amp else 0.0, c2 / (amp * c0) if amp else 0.0])
    return float(v), float(math.sqrt(max(grad @ cov @ grad, 0.0)))


def attenuation_montecarlo(
    params: InterferenceParams,
    alpha_edges,
    n_events: int,
    seed: int = 0,
    settings: ReductionSettings = ReductionSettings(),
    open_slits: str = "both",
) -> AttenuationHistogram:
    """Single-particle Monte Carlo of the attenuated two-slit experiment.

    Absorber: the particle is in the coherent superposition of the screen
    component (weight (1 + a) / 2) and the scattered component (weight
    (1 - a) / 2) until detection; one reduction decides between them and a
    screen hit follows 1 + a + 2 sqrt(a) cos(alpha).

    Chopper: a reduction with weights (1 - a, a) decides whether slit R is
    blocked.  Blocked: a second reduction picks slit L (screen, no fringe)
    or localization at the chopper with equal weights.  Open: the screen
    hit follows 1 + cos(alpha).

    With open_slits = "right" only slit R is open and the element decides
    between detection at the element (1 - a) and passage (a).
    """
    if n_events < 1000:
        raise ValidationError("n_events must be at least 1000")
    if open_slits not in ("both", "right"):
        raise ValidationError("open_slits must be 'both' or 'right'")
    edges = np.asarray(alpha_edges, dtype=float)
    if edges.ndim != 1 or edges.size < 4 or np.any(np.diff(edges) <= 0):
        raise ValidationError("alpha_edges must be increasing with at least three bins")
    a = params.a
    rng = np.random.default_rng(stage_seed(seed, 0))
    lo, hi = edges[0], edges[-1]
    # (label, weight, g0, g) per screen branch; g0 + 2 g cos is the hit density
    if open_slits == "right":
        first = settings.reduce(np.tile([1 - a, a], (n_events, 1)), stage_seed(seed, 1))
        labels = ("at_element", "passed")
        branch_counts = {labels[0]: int(np.sum(first == 0)), labels[1]: int(np.sum(first == 1))}
        branch_expected = {labels[0]: 1 - a, labels[1]: a}
        hits = _sample_fringe(rng, branch_counts["passed"], lo, hi, 1.0, 0.0, params.alpha)
        law = (1.0, 0.0)
    elif params.mode == ABSORBER:
        w = [(1 - a) / 2, (1 + a) / 2]
        first = settings.reduce(np.tile(w, (n_events, 1)), stage_seed(seed, 1))
        branch_counts = {"scattered": int(np.sum(first == 0)), "screen": int(np.sum(first == 1))}
        branch_expected = {"scattered": w[0], "screen": w[1]}
        g = math.sqrt(a)
        hits = _sample_fringe(rng, branch_counts["screen"], lo, hi, 1 + a, g, params.alpha)
        law = (1 + a, g)
    else:
        first = settings.reduce(np.tile([1 - a, a], (n_events, 1)), stage_seed(seed, 1))
        n_closed = int(np.sum(first == 0))
        second = settings.reduce(np.tile([0.5, 0.5], (n_closed, 1)), stage_seed(seed, 2)) if n_closed else np.zeros(0)
        n_left = int(np.sum(second == 0))
        branch_counts = {
            "closed": n_closed,
            "open": n_events - n_closed,
            "closed_slit_L": n_left,
            "closed_at_chopper": n_closed - n_left,
        }
        branch_expected = {"closed": 1 - a, "open": a, "closed_slit_L": (1 - a) / 2, "closed_at_chopper": (1 - a) / 2}
        hits = np.concatenate([
            _sample_fringe(rng, n_left, lo, hi, 1.0, 0.0, params.alpha),
            _sample_fringe(rng, n_events - n_closed, lo, hi, 1.0, 0.5, params.alpha),
        ])
        law = (1 + a, a)
    counts = np.histogram(hits, bins=edges)[0].astype(float)
    basis = _bin_basis(edges, params.alpha)
    mass = basis[:, 0] * law[0] + 2 * law[1] * basis[:, 1]
    expected = counts.sum() * mass / mass.sum()
    if law[1] == 0.0:
        contrast, se = 0.0, 0.0
    else:
        contrast, se = _fit_contrast(counts, edges, params.alpha)
    return AttenuationHistogram(params, edges, counts, expected, contrast, se, branch_counts, branch_expected, n_events)


# Stern-Gerlach, Renninger and Mach-Zehnder


def modified_stern_gerlach(
    first_screen_is_detector: bool = True,
    n_events: int = 10**4,
    seed: int = 0,
    settings: ReductionSettings = ReductionSettings(),
    near_time: float = 1.0,
    far_time: float = 2.0,
) -> ScenarioResult:
    """Spin-1/2 beam split into two components; a half screen intercepts one.

    Detector mode: a reduction with equal weights at the half screen either
    detects the particle there or leaves it on the other path, which is
    then detected at the distant screen.  Non-detector mode: both
    components reach the distant screen and the reduction happens there.
    """
    if not 0 < near_time < far_time:
        raise ValidationError("need 0 < near_time < far_time")
    half = (0.5, 0.5)
    logs = [EventLog() for _ in range(n_events)]
    if first_screen_is_detector:
        pick = settings.reduce(np.tile(half, (n_events, 1)), stage_seed(seed, 1))
        for log, k in zip(logs, pick):
            log.add(near_time, "near_screen", half, k)
            if k == 0:
                log.outcome = "near"
            else:
                log.add(far_time, "far_screen", (1.0,), 0)
                log.outcome = "far"
    else:
        pick = settings.reduce(np.tile(half, (n_events, 1)), stage_seed(seed, 2))
        for log, k in zip(logs, pick):
            log.add(far_time, "far_screen", half, k)
            log.outcome = "far"
    return ScenarioResult("stern_gerlach", ("near", "far"), logs)


def renninger(
    inner_fraction: float = 0.5,
    r1: float = 1.0,
    r2: float = 2.0,
    n_events: int = 10**4,
    seed: int = 0,
    settings: ReductionSettings = ReductionSettings(),
) -> ScenarioResult:
    """Spherical wave meeting an inner partial detector at r1 and an outer one at r2.

    The reduction at time r1 keeps the inner branch with weight
    inner_fraction; otherwise the null result leaves the particle on the
    outer branch, detected at time r2.
    """
    f = inner_fraction
    if not 0 < f < 1:
        raise ValidationError("inner_fraction must lie in (0, 1)")
    if not 0 < r1 < r2:
        raise ValidationError("need 0 < r1 < r2")
    w = (f, 1 - f)
    pick = settings.reduce(np.tile(w, (n_events, 1)), stage_seed(seed, 1))
    logs = []
    for k in pick:
        log = EventLog()
        log.add(r1, "inner_detector", w, k)
        if k == 0:
            log.outcome = "inner"
        else:
            log.add(r2, "outer_detector", (1.0,), 0)
            log.outcome = "outer"
        logs.append(log)
    return ScenarioResult("renninger", ("inner", "outer"), logs)


MZ_OUTCOMES = ("Absorbed", "DarkPort", "BrightPort")


def mach_zehnder_null(
    object_present: bool = True,
    splitter_ratio: float = 0.5,
    n_events: int = 10**5,
    seed: int = 0,
    settings: ReductionSettings = ReductionSettings(),
    object_time: float = 1.0,
    port_time: float = 2.0,
) -> ScenarioResult:
    """Interaction-free detection in a Mach-Zehnder interferometer.

    With the object in one arm a reduction at the object absorbs the
    particle with weight splitter_ratio; the surviving single-path amplitude
    splits evenly over the two output ports, decided by a second reduction.
    Without the object the recombiner is tuned so all amplitude leaves by
    the bright port, which the engine confirms as a trivial reduction.
    """
    r = splitter_ratio
    if not 0 < r < 1:
        raise ValidationError("splitter_ratio must lie in (0, 1)")
    if not 0 < object_time < port_time:
        raise ValidationError("need 0 < object_time < port_time")
    logs = [EventLog() for _ in range(n_events)]
    ports = (0.5, 0.5)
    if object_present:
        hit = settings.reduce(np.tile((r, 1 - r), (n_events, 1)), stage_seed(seed, 1))
        survivors = np.nonzero(hit == 1)[0]
        port = settings.reduce(np.tile(ports, (survivors.size, 1)), stage_seed(seed, 2)) if survivors.size else []
        for log, k in zip(logs, hit):
            log.add(object_time, "object", (r, 1 - r), k)
            if k == 0:
                log.outcome = "Absorbed"
        for i, k in zip(survivors, port):
            logs[i].add(port_time, "recombiner", ports, k)
            logs[i].outcome = "DarkPort" if k == 0 else "BrightPort"
    else:
        coherent = (0.0, 1.0)
        port = settings.reduce(np.tile(coherent, (n_events, 1)), stage_seed(seed, 3))
        for log, k in zip(logs, port):
            log.add(port_time, "recombiner", coherent, k)
            log.outcome = "DarkPort" if k == 0 else "BrightPort"
    return ScenarioResult("mach_zehnder", MZ_OUTCOMES, logs)


# EPR pairs


@dataclass
class EPRResult:
    """Outcomes of one analyzer setting."""

    angle_a: float
    angle_b: float
    branch: np.ndarray
    outcome_a: np.ndarray
    outcome_b: np.ndarray
    convention: str

    @property
    def n_pairs(self) -> int:
        return int(self.branch.size)

    @property
    def correlation(self) -> float:
        return float(np.mean(self.outcome_a * self.outcome_b))

    @property
    def stderr(self) -> float:
        e = self.correlation
        return math.sqrt(max(1 - e * e, 0.0) / self.n_pairs)

    @property
    def branch_fraction(self) -> float:
        """Fraction of pairs reduced to the (+, -) branch along analyzer a."""
        return float(np.mean(self.branch == 0))

    def expected(self) -> float:
        return singlet_correlation(self.angle_a, self.angle_b, self.convention)


def _half_angle(delta: float, convention: str) -> float:
    if convention == SPIN:
        return delta / 2
    if convention == POLARIZATION:
        return delta
    raise ValidationError(f"convention must be {SPIN!r} or {POLARIZATION!r}")


def singlet_correlation(angle_a: float, angle_b: float, convention: str = POLARIZATION) -> float:
    """Quantum correlation of the singlet: -cos(2 theta) with theta the half angle."""
    return -math.cos(2 * _half_angle(angle_b - angle_a, convention))


def epr_singlet(
    angle_a: float,
    angle_b: float,
    n_pairs: int = 10**4,
    seed: int = 0,
    settings: ReductionSettings = ReductionSettings(),
    convention: str = POLARIZATION,
) -> EPRResult:
    """Singlet pairs measured at analyzer angles a and b.

    A reduction with equal weights selects the branch (+, -) or (-, +)
    along a.  The partner then carries the opposite value along a, and a
    second reduction with weights (cos^2 theta, sin^2 theta) decides whether
    analyzer b keeps it, with theta = (b - a) / 2 for spins and b - a for
    photon polarizations.
    """
    if n_pairs < 1000:
        raise ValidationError("n_pairs must be at least 1000")
    theta = _half_angle(angle_b - angle_a, convention)
    branch = settings.reduce(np.tile((0.5, 0.5), (n_pairs, 1)), stage_seed(seed, 1))
    c2 = math.cos(theta) ** 2
    keep = settings.reduce(np.tile((c2, 1 - c2), (n_pairs, 1)), stage_seed(seed, 2))
    out_a = np.where(branch == 0, 1, -1)
    out_b = np.where(keep == 0, -out_a, out_a)
    return EPRResult(float(angle_a), float(angle_b), branch, out_a, out_b, convention)


CHSH_ANGLES = (0.0, math.pi / 4, math.pi / 8, 3 * math.pi / 8)


@dataclass
class CHSHResult:
    angles: tuple
    settings: tuple
    S: float
    stderr: float

    @property
    def correlations(self) -> tuple:
        return tuple(r.correlation for r in self.settings)


def chsh(
    angles=CHSH_ANGLES,
    n_pairs: int = 10**5,
    seed: int = 0,
    settings: ReductionSettings = ReductionSettings(),
    convention: str = POLARIZATION,
) -> CHSHResult:
    """S = |E(a, b) - E(a, b') + E(a', b) + E(a', b')| from n_pairs split over four settings.

    `angles` is (a, a', b, b').
    """
    a, a2, b, b2 = (float(x) for x in angles)
    per = n_pairs // 4
    combos = ((a, b), (a, b2), (a2, b), (a2, b2))
    runs = tuple(
        epr_singlet(x, y, per, stage_seed(seed, 10 + i), settings, convention) for i, (x, y) in enumerate(combos)
    )
    e = [r.correlation for r in runs]
    S = abs(e[0] - e[1] + e[2] + e[3])
    se = math.sqrt(sum(r.stderr**2 for r in runs))
    return CHSHResult((a, a2, b, b2), runs, S, se)


# alpha decay by repeated reduction


@dataclass(frozen=True)
class DecayParams:
    """Repeated-reduction decay model.

    Attributes
    ----------
    delta_e : float
        Resonance width (inverse time, hbar = 1).
    p_c : float
        Escape weight at which a reduction is triggered.
    average_pc : bool
        Redraw p_c uniformly from (0, 1) at every trial.
    """

    delta_e: float = 1.0
    p_c: float = 0.1
    average_pc: bool = False

    def __post_init__(self) -> None:
        if not self.delta_e > 0:
            raise ValidationError("delta_e must be positive")
        if not 0 < self.p_c < 1:
            raise ValidationError("p_c must lie in (0, 1)")

    @property
    def trial_interval(self) -> float:
        """Time for the escape weight to grow to p_c under quadratic short-time decay."""
        return math.sqrt(self.p_c) / self.delta_e


def lifetime_factor(p_c: float) -> float:
    """tau * delta_e = -sqrt(p_c) / ln(1 - p_c)."""
    if not 0 < p_c < 1:
        raise ValidationError("p_c must lie in (0, 1)")
    return -math.sqrt(p_c) / math.log1p(-p_c)


def analytic_lifetime(params: DecayParams) -> float:
    return lifetime_factor(params.p_c) / params.delta_e


def average_lifetime_factor() -> float:
    """Mean of lifetime_factor(p) for p uniform in (0, 1).

    The integrand diverges as p^(-1/2) at 0 but is integrable; the value is
    about 1.601.
    """
    val, _ = integrate.quad(lifetime_factor_integrand, 0.0, 1.0)
    return float(val)


def lifetime_factor_integrand(p: float) -> float:
    return -math.sqrt(p) / math.log1p(-p) if 0 < p < 1 else 0.0


@dataclass
class DecayResult:
    params: DecayParams
    decay_times: np.ndarray
    trials: np.ndarray
    tau_fit: float
    tau_stderr: float
    r_squared: float
    curve_t: np.ndarray
    curve_survival: np.ndarray

    @property
    def n_nuclei(self) -> int:
        return int(self.decay_times.size)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["nucleus_id", "decay_time", "trials"])
            for i, (t, k) in enumerate(zip(self.decay_times, self.trials)):
                w.writerow([i, f"{t:.9g}", int(k)])


def _log_linear_fit(t: np.ndarray, s: np.ndarray) -> tuple[float, float]:
    """Ordinary least squares of log S = c - t / tau; returns (tau, r_squared)."""
    keep = s > 0
    t, s = t[keep], s[keep]
    if t.size < 3:
        raise DomainError("survival curve has too few usable points to fit")
    y = np.log(s)
    slope, icpt = np.polyfit(t, y, 1)
    resid = y - (slope * t + icpt)
    r2 = 1 - np.sum(resid**2) / np.sum((y - y.mean()) ** 2)
    return float(-1 / slope), float(r2)


def decay_simulation(
    params: DecayParams,
    n_nuclei: int = 10**4,
    seed: int = 0,
    settings: ReductionSettings = ReductionSettings(),
    max_trials: int = 100000,
) -> DecayResult:
    """Survival of nuclei under repeated reduction trials.

    At each trial every surviving nucleus is reduced between the escaped
    component (weight p_c) and the localized one (1 - p_c).  Trials are
    spaced by sqrt(p_c) / delta_e; with average_pc each trial draws its own
    p_c uniformly from (0, 1) and the spacing follows it.

    For fixed p_c the survival law is geometric on the trial grid and tau
    is its maximum-likelihood fit, tau = -dt / ln(1 - p_hat).  With
    averaging tau comes from a least-squares line through log S(t) on a
    uniform grid up to the 99% decay quantile; r_squared always refers to
    that line.
    """
    if n_nuclei < 1000:
        raise ValidationError("n_nuclei must be at least 1000")
    rng = np.random.default_rng(stage_seed(seed, 0))
    alive = np.arange(n_nuclei)
    clock = np.zeros(n_nuclei)
    decay_times = np.full(n_nuclei, np.nan)
    trials = np.zeros(n_nuclei, dtype=np.int64)
    k = 0
    while alive.size and k < max_trials:
        if params.average_pc:
            p = rng.uniform(0.0, 1.0, size=alive.size)
        else:
            p = np.full(alive.size, params.p_c)
        pick = settings.reduce(np.stack([p, 1 - p], axis=1), stage_seed(seed, 1, k))
        clock[alive] += np.sqrt(p) / params.delta_e
        trials[alive] += 1
        escaped = pick == 0
        decay_times[alive[escaped]] = clock[alive[escaped]]
        alive = alive[~escaped]
        k += 1
    if alive.size:
        raise DomainError(f"{alive.size} nuclei survived {max_trials} trials")
    t_grid = np.linspace(0.0, float(np.quantile(decay_times, 0.99)), 60)
    surv = np.mean(decay_times[None, :] > t_grid[:, None], axis=1)
    tau, r2 = _log_linear_fit(t_grid, surv)
    se = tau / math.sqrt(n_nuclei)
    if not params.average_pc:
        dt = params.trial_interval
        p_hat = n_nuclei / trials.sum()
        tau = -dt / math.log1p(-p_hat)
        # delta method for the geometric MLE
        se_p = p_hat * math.sqrt((1 - p_hat) / n_nuclei)
        se = dt * se_p / ((1 - p_hat) * math.log1p(-p_hat) ** 2)
    return DecayResult(params, decay_times, trials, float(tau), float(se), r2, t_grid, surv)
