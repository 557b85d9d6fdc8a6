"""Acceptance battery shared by the test suite and the command line.

Each check runs one criterion at its stated tolerance and returns a
CheckResult with the measured value, the expected value and the verdict.
Failures are reported, never softened.
"""

from __future__ import annotations

import math
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from nsqm.lattice import LatticeSpec, apply_band_matrix, dispersion, grid_index, group_velocity, plane_wave, wave_number
from nsqm.noise import (
    MonadSampler,
    amplification_exponent,
    correlation_empirical,
    log_variance_scaling,
    make_ensemble,
    pre_delta_gaussian_exact,
    pre_delta_sample,
    sample_xi,
)
from nsqm.reduction import (
    AmplitudeState,
    NoiseSpec,
    fit_product_decay,
    mean_raw_drift,
    run_ensemble,
    step,
    verify_martingale,
)
from nsqm.scenarios import (
    CHSH_ANGLES,
    CHOPPER,
    DecayParams,
    InterferenceParams,
    ReductionSettings,
    analytic_lifetime,
    attenuation_intensity,
    attenuation_montecarlo,
    chsh,
    decay_simulation,
    mach_zehnder_null,
    modified_stern_gerlach,
    multinomial_z,
    renninger,
)
from nsqm.wavepacket import delta_evolution_direct, make_tail, tail_closed_form, tail_norm

DEFAULT_SEED = 20240611
FRINGE_EDGES = np.linspace(-np.pi, np.pi, 41)


@dataclass
class CheckResult:
    """Outcome of one acceptance criterion."""

    criterion: str
    name: str
    measured: object
    expected: object
    tolerance: str
    passed: bool

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"[{verdict}] criterion {self.criterion}: {self.name}: measured {self.measured}, expected {self.expected} ({self.tolerance})"

    def as_dict(self) -> dict:
        return _jsonable(asdict(self))


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


# reduction engine


def born_runs(seed: int = DEFAULT_SEED, threads: int = 1, n_traj: int = 20000):
    """The two ensembles behind criteria 1 and 2, with recorded weights."""
    out = []
    for i, w in enumerate(((0.3, 0.7), (0.5, 0.3, 0.2))):
        C0 = AmplitudeState.from_weights(w)
        noise = NoiseSpec.uniform(len(w), 1.0, 1e-4)
        stats = run_ensemble(C0, noise, n_traj, seed=seed + i, record_every=500, n_records=40, threads=threads)
        out.append((C0, stats))
    return out


def born_band(p, n_traj: int) -> np.ndarray:
    """Three binomial standard errors per state."""
    p = np.asarray(p, dtype=float)
    return 3 * np.sqrt(p * (1 - p) / n_traj)


def check_born(runs) -> list[CheckResult]:
    res = []
    for C0, stats in runs:
        p = C0.weights
        f = stats.frequencies()
        n = stats.n_traj
        if C0.n == 2:
            band = np.full(2, 0.010)
            tol = "band 0.010"
        else:
            band = born_band(p, n)
            tol = "3 binomial standard errors per state"
        ok = bool(np.all(np.abs(f - p) <= band)) and stats.completed == n
        res.append(CheckResult("1", f"Born rule n={C0.n}", np.round(f, 5).tolist(), np.round(p, 6).tolist(), tol, ok))
    return res


def check_martingale(runs) -> list[CheckResult]:
    res = []
    for C0, stats in runs:
        rep = verify_martingale(stats, C0)
        res.append(CheckResult("2", f"martingale n={C0.n}", round(rep.worst, 3), "< 3", "max |z| over recorded times", rep.passed))
    return res


def check_product_decay(seed: int = DEFAULT_SEED, threads: int = 1, drift_sign: float = 1.0) -> CheckResult:
    C0 = AmplitudeState.from_weights([0.5, 0.5])
    stats = run_ensemble(C0, NoiseSpec.uniform(2, 1.0, 1e-4), 4000, max_steps=5000, seed=seed, record_every=250,
                         n_records=20, threads=threads, drift_sign=drift_sign)
    slope = fit_product_decay(stats, 0, 0.5)
    expected = -1.0
    return CheckResult("3", "product decay slope", round(slope, 4), expected, "within 5%",
                       abs(slope / expected - 1) < 0.05)


def check_norm(seed: int = DEFAULT_SEED) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    C0 = AmplitudeState.from_weights([0.5, 0.5])
    a = mean_raw_drift(C0, NoiseSpec.uniform(2, 1.0, 1e-4), 4000, rng)
    b = mean_raw_drift(C0, NoiseSpec.uniform(2, 1.0, 2.5e-5), 4000, rng)
    ratio = a / b
    state = AmplitudeState.from_weights([0.5, 0.3, 0.2])
    noise = NoiseSpec.uniform(3, 1.0, 1e-4)
    worst = 0.0
    for _ in range(1000):
        state = step(state, noise, rng)
        worst = max(worst, abs(float(np.sum(state.weights)) - 1))
    return [
        CheckResult("4", "raw drift ratio at dt/4", round(ratio, 3), 4.0, "within 50%", abs(ratio / 4 - 1) <= 0.5),
        CheckResult("4", "post-renormalization norm", worst, 0.0, "< 1e-12", worst < 1e-12),
    ]


# lattice and wave packets


def check_lattice() -> list[CheckResult]:
    spec = LatticeSpec(512, 1 / 64)
    worst = 0.0
    for k in range(-511, 513):
        if k == 0:
            continue
        phi = plane_wave(k, spec)
        w2 = dispersion(abs(k), spec) ** 2
        r = np.max(np.abs(apply_band_matrix(phi, spec).values + w2 * phi.values)) / w2
        worst = max(worst, r)
    k = np.arange(1, 512 // 100 + 1)
    lin = float(np.max(np.abs(dispersion(k, spec) / wave_number(k, spec) - 1)))
    v_edge = float(group_velocity(512, spec))
    return [
        CheckResult("5", "eigen residual / omega^2", worst, "< 1e-9", "all k at M=512", worst < 1e-9),
        CheckResult("5", "small-k linearity", lin, "< 1e-3", "k <= M/100", lin < 1e-3),
        CheckResult("5", "band-edge group velocity", v_edge, 0.0, "exact", v_edge == 0.0),
    ]


def check_tail() -> list[CheckResult]:
    spec = LatticeSpec(16384, 1 / 512)
    t = 10.0
    x = grid_index(np.linspace(-0.8 * t, 0.8 * t, 33), spec) * spec.step
    direct = delta_evolution_direct(spec, t, x)
    closed = tail_closed_form(make_tail(t, spec), x).value
    err = float(np.max(np.abs(np.abs(direct) / np.abs(closed) - 1)))
    nspec = LatticeSpec(32768, 1e-4)
    tn = tail_norm(make_tail(0.3, nspec), nspec)
    return [
        CheckResult("6", "tail modulus error", round(err, 5), "< 0.05", "|x| <= 0.8 t, M=16384", err < 0.05),
        CheckResult("6", "tail norm", round(tn, 5), 1.0, "within 1e-2", abs(tn - 1) < 1e-2),
    ]


# noise


def check_noise(seed: int = DEFAULT_SEED) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    big = make_ensemble(10**4, 1e3, 1e4, 1.0, rng)
    x = sample_xi(5.0, big, MonadSampler(0.1), rng, size=10**4)
    relmean = float(abs(x.mean()) / np.abs(x).mean())
    mid = make_ensemble(2000, 1e3, 1e4, 1.0, rng)
    est = correlation_empirical(mid, MonadSampler(10.0), 5.0, np.linspace(0, 2e-3, 21), 4000, rng)
    r = float(np.corrcoef(est.values, est.closed)[0, 1])
    # Gaussian test function of width 1e3 / Omega_min on the same band
    small = make_ensemble(500, 1e3, 1e4, 1.0, rng)
    w = 1e3 / small.omega_min
    h = 0.99 * math.pi / (4 * small.omega_max)
    grid = np.arange(-6 * w, 6 * w + h, h)
    got = pre_delta_sample(small, lambda s: np.exp(-s**2 / (2 * w * w)), grid)
    exact = pre_delta_gaussian_exact(small, w)
    ratio = got / small.c0
    return [
        CheckResult("7a", "relative mean of xi", round(relmean, 5), "< 0.02", "10^4 samples", relmean < 0.02),
        CheckResult("7b", "correlation Pearson r", round(r, 5), "> 0.99", "21 lags", r > 0.99),
        CheckResult("7c", "pre-delta integral / (C0 g(0))", f"{ratio:.3e} (Fourier identity {exact / small.c0:.3e})", 1.0,
                    "within 10%", abs(ratio - 1) < 0.1),
    ]


def check_variance_scaling(seed: int = DEFAULT_SEED) -> list[CheckResult]:
    lams = np.arange(2, 9)
    worst = 0.0
    for A in (1, 2, 3, 4):
        y = np.array([log_variance_scaling(A, int(l), 1.0, 1.0) for l in lams])
        slope = np.polyfit(np.log(lams), y, 1)[0]
        worst = max(worst, abs(slope - 2 * (A - 1)))
    spec = LatticeSpec(4096, 0.01)
    exp = amplification_exponent(range(2, 9), spec, np.random.default_rng(seed), 2, n_times=600, n_sets=4)
    return [
        CheckResult("8", "formula exponent error", worst, 0.0, "< 1e-12", worst < 1e-12),
        CheckResult("8", "direct exponent at A=2", round(exp, 4), 2.0, "within 15%", abs(exp / 2 - 1) < 0.15),
    ]


# scenarios


def check_fringes(seed: int = DEFAULT_SEED, threads: int = 1) -> list[CheckResult]:
    a = 0.25
    settings = ReductionSettings(threads=threads)
    closed_abs = attenuation_intensity(InterferenceParams(a), [0.0])[1]
    closed_ch = attenuation_intensity(InterferenceParams(a, mode=CHOPPER), [0.0])[1]
    exact_ok = closed_abs == 2 * math.sqrt(a) / (1 + a) and closed_ch == 2 * a / (1 + a)
    out = [CheckResult("9", "closed-form contrasts", [closed_abs, closed_ch], [0.8, 0.4], "exact", exact_ok)]
    for mode, target in (("absorber", 0.8), (CHOPPER, 0.4)):
        h = attenuation_montecarlo(InterferenceParams(a, mode=mode), FRINGE_EDGES, 10**5, seed, settings)
        out.append(CheckResult("9", f"Monte Carlo {mode} contrast", round(h.contrast, 4), target, "within 0.02",
                               abs(h.contrast - target) < 0.02))
    return out


def check_decay(seed: int = DEFAULT_SEED, threads: int = 1) -> CheckResult:
    params = DecayParams(1.0, 0.1)
    tau = analytic_lifetime(params)
    d = decay_simulation(params, 2 * 10**4, seed, ReductionSettings(threads=threads))
    return CheckResult("10", "decay lifetime", round(d.tau_fit, 4), round(tau, 4), "within 2%",
                       abs(d.tau_fit / tau - 1) < 0.02)


def check_scenarios(seed: int = DEFAULT_SEED, threads: int = 1) -> list[CheckResult]:
    s = ReductionSettings(threads=threads)
    sg = modified_stern_gerlach(True, 10**4, seed, s).frequencies()["near"]
    rn = renninger(0.5, n_events=10**4, seed=seed, settings=s).frequencies()["inner"]
    mz = mach_zehnder_null(True, 0.5, 10**5, seed, s)
    z = multinomial_z(mz.counts(), {"Absorbed": 0.5, "DarkPort": 0.25, "BrightPort": 0.25})
    zmax = max(abs(v) for v in z.values())
    c = chsh(CHSH_ANGLES, 10**5, seed, s)
    freqs = [round(v, 4) for v in mz.frequencies().values()]
    return [
        CheckResult("11", "Stern-Gerlach near fraction", sg, 0.5, "within 0.015", abs(sg - 0.5) < 0.015),
        CheckResult("11", "Renninger inner fraction", rn, 0.5, "within 0.015", abs(rn - 0.5) < 0.015),
        CheckResult("11", "Mach-Zehnder outcomes", freqs, [0.5, 0.25, 0.25], f"3 sigma (max |z| {zmax:.2f})", zmax < 3),
        CheckResult("11", "CHSH S", round(c.S, 4), round(2 * math.sqrt(2), 4), "within 0.05",
                    abs(c.S - 2 * math.sqrt(2)) < 0.05),
    ]


def check_determinism(seed: int = DEFAULT_SEED) -> list[CheckResult]:
    """Rerun a reduction ensemble and a scenario with 1 and 3 threads and compare files."""
    out = []
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        blobs = []
        for threads in (1, 3):
            C0 = AmplitudeState.from_weights([0.3, 0.7])
            stats = run_ensemble(C0, NoiseSpec.uniform(2, 1.0, 1e-4), 1500, seed=seed, record_every=500,
                                 n_records=10, threads=threads)
            stats.trajectories_to_csv(tmp / f"traj{threads}.csv")
            stats.moments_to_csv(tmp / f"mom{threads}.csv")
            renninger(0.3, n_events=10**4, seed=seed, settings=ReductionSettings(threads=threads)).to_csv(
                tmp / f"ren{threads}.csv")
            blobs.append([(tmp / f"{n}{threads}.csv").read_bytes() for n in ("traj", "mom", "ren")])
        same = [x == y for x, y in zip(*blobs)]
    for name, ok in zip(("trajectories", "moments", "renninger log"), same):
        out.append(CheckResult("12", f"thread-independent {name} CSV", "identical" if ok else "differs", "identical",
                               "byte comparison, 1 vs 3 threads", ok))
    return out


def check_suite(seed: int = DEFAULT_SEED, threads: int = 1, drift_sign: float = 1.0) -> list[CheckResult]:
    """Run every criterion in order."""
    runs = born_runs(seed, threads)
    res = check_born(runs) + check_martingale(runs)
    res.append(check_product_decay(seed, threads, drift_sign))
    res += check_norm(seed)
    res += check_lattice()
    res += check_tail()
    res += check_noise(seed)
    res += check_variance_scaling(seed)
    res += check_fringes(seed, threads)
    res.append(check_decay(seed, threads))
    res += check_scenarios(seed, threads)
    res += check_determinism(seed)
    return res
