"""Command line front end: `reduce <experiment> [options]`.

Every run resolves its parameters (defaults, then --config, then flags),
writes the resolved config, a summary JSON and CSV data to --out, and exits
with 0 on success, 2 on invalid input, 3 when --check finds a failing
acceptance check and 4 on I/O failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from nsqm import checks
from nsqm.checks import CheckResult, born_band
from nsqm.errors import ValidationError
from nsqm.lattice import LatticeSpec, apply_band_matrix, dispersion, grid_index, group_velocity, plane_wave, wave_number
from nsqm.noise import (
    MonadSampler,
    amplification_exponent,
    correlation_empirical,
    make_ensemble,
    pre_delta_gaussian_exact,
    sample_xi,
)
from nsqm.reduction import AmplitudeState, NoiseSpec, fit_product_decay, run_ensemble, verify_martingale
from nsqm.scenarios import (
    CHSH_ANGLES,
    DecayParams,
    InterferenceParams,
    ReductionSettings,
    analytic_lifetime,
    attenuation_montecarlo,
    chsh,
    decay_simulation,
    mach_zehnder_null,
    modified_stern_gerlach,
    multinomial_z,
    renninger,
    singlet_correlation,
)
from nsqm.wavepacket import delta_evolution_direct, make_tail, tail_closed_form, tail_norm

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_CHECK = 3
EXIT_IO = 4


def _floats(text: str) -> tuple:
    try:
        return tuple(float(x) for x in str(text).split(",") if x.strip())
    except ValueError as exc:
        raise ValidationError(f"expected comma-separated numbers, got {text!r}") from exc


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"expected a boolean, got {text!r}")


def _format(v) -> str:
    if isinstance(v, tuple):
        return ",".join(repr(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


# name -> (parser, default) per experiment
SCHEMAS = {
    "dispersion": {"grid_count": (int, 512), "step": (float, 1 / 64), "mass": (float, 0.0)},
    "tail": {"grid_count": (int, 16384), "step": (float, 1 / 512), "t": (float, 10.0), "points": (int, 33),
             "window": (float, 0.8), "norm_grid_count": (int, 32768), "norm_step": (float, 1e-4),
             "norm_t": (float, 0.3)},
    "noise": {"count": (int, 2000), "omega_min": (float, 1e3), "omega_max": (float, 1e4), "xi0": (float, 1.0),
              "eta": (float, 10.0), "t": (float, 5.0), "trials": (int, 4000), "lags": (int, 21),
              "tau_max": (float, 2e-3), "mean_count": (int, 10**4), "mean_eta": (float, 0.1),
              "mean_samples": (int, 10**4), "delta_width": (float, 1.0), "exponent": (_bool, True)},
    "reduction": {"weights": (_floats, (0.5, 0.5)), "sigma": (float, 1.0), "dt": (float, 1e-4),
                  "traj": (int, 4000), "record_every": (int, 250), "n_records": (int, 20),
                  "max_steps": (int, 5000), "threshold": (float, 1e-3), "structure": (str, "hermitian"),
                  "fit_t_max": (float, 0.5), "drift_sign": (float, 1.0)},
    "born": {"weights": (_floats, (0.3, 0.7)), "sigma": (float, 1.0), "dt": (float, 1e-4), "traj": (int, 20000),
             "threshold": (float, 1e-3), "record_every": (int, 500), "n_records": (int, 40)},
    "sg": {"detector": (_bool, True), "events": (int, 10**4), "near_time": (float, 1.0), "far_time": (float, 2.0)},
    "renninger": {"inner_fraction": (float, 0.5), "r1": (float, 1.0), "r2": (float, 2.0), "events": (int, 10**4)},
    "mz": {"object_present": (_bool, True), "splitter_ratio": (float, 0.5), "events": (int, 10**5)},
    "epr": {"angles": (_floats, CHSH_ANGLES), "pairs": (int, 10**5), "convention": (str, "polarization")},
    "decay": {"delta_e": (float, 1.0), "p_c": (float, 0.1), "average_pc": (_bool, False), "nuclei": (int, 2 * 10**4)},
    "attenuation": {"a": (float, 0.25), "alpha": (float, 0.0), "mode": (str, "absorber"), "events": (int, 10**5),
                    "bins": (int, 40), "open_slits": (str, "both")},
}
ENGINE_KEYS = {"sigma": (float, 1.0), "dt": (float, 1e-3), "threshold": (float, 1e-4)}
for _name in ("sg", "renninger", "mz", "epr", "decay", "attenuation"):
    for _k, _v in ENGINE_KEYS.items():
        SCHEMAS[_name]["engine_" + _k] = _v


def resolve(experiment: str, config_path, overrides: dict, seed, threads) -> dict:
    """Merge defaults, config file and flags into a validated run config."""
    schema = SCHEMAS[experiment]
    params = {k: v for k, (_, v) in schema.items()}
    run = {"seed": checks.DEFAULT_SEED, "threads": "1"}
    if config_path is not None:
        cp = configparser.ConfigParser()
        try:
            with open(config_path) as fh:
                cp.read_file(fh)
        except OSError:
            raise
        except configparser.Error as exc:
            raise ValidationError(f"cannot parse config: {exc}") from exc
        for section in cp.sections():
            if section == "run":
                for k, v in cp["run"].items():
                    if k == "experiment":
                        if v != experiment:
                            raise ValidationError(f"config is for experiment {v!r}, not {experiment!r}")
                    elif k in run:
                        run[k] = v
                    else:
                        raise ValidationError(f"unknown key {k!r} in [run]")
            elif section in ("params", experiment):
                for k, v in cp[section].items():
                    if k not in schema:
                        raise ValidationError(f"unknown parameter {k!r} for {experiment}")
                    params[k] = v
            else:
                raise ValidationError(f"unknown config section [{section}]")
    for k, v in overrides.items():
        if k not in schema:
            raise ValidationError(f"unknown parameter {k!r} for {experiment}")
        params[k] = v
    if seed is not None:
        run["seed"] = seed
    if threads is not None:
        run["threads"] = threads
    out = {}
    for k, v in params.items():
        parser = schema[k][0]
        try:
            out[k] = v if isinstance(v, type(schema[k][1])) and not isinstance(v, str) else parser(v)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"bad value for {k}: {v!r}") from exc
    try:
        s = int(run["seed"])
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"seed must be an integer, got {run['seed']!r}") from exc
    if not 0 <= s < 2**64:
        raise ValidationError("seed must be an unsigned 64-bit integer")
    t = str(run["threads"])
    if t == "auto":
        n_threads = os.cpu_count() or 1
    else:
        try:
            n_threads = int(t)
        except ValueError as exc:
            raise ValidationError(f"threads must be a positive integer or 'auto', got {t!r}") from exc
        if n_threads < 1:
            raise ValidationError("threads must be a positive integer or 'auto'")
    return {"experiment": experiment, "seed": s, "threads": n_threads, "threads_requested": t, "params": out}


def write_config(cfg: dict, path: Path) -> None:
    cp = configparser.ConfigParser()
    cp["run"] = {"experiment": cfg["experiment"], "seed": str(cfg["seed"]), "threads": cfg["threads_requested"]}
    cp["params"] = {k: _format(v) for k, v in cfg["params"].items()}
    with open(path, "w") as fh:
        cp.write(fh)


def _settings(p: dict, threads: int) -> ReductionSettings:
    return ReductionSettings(p["engine_sigma"], p["engine_dt"], p["engine_threshold"], threads)


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(r) + "\n")


# experiments: each returns (summary, checks) and writes its CSV files


def run_dispersion(p, seed, threads, out: Path):
    spec = LatticeSpec(p["grid_count"], p["step"], mass=p["mass"])
    M = spec.grid_count
    k = np.arange(M + 1)
    omega = dispersion(k, spec)
    v = group_velocity(k, spec)
    pk = wave_number(k, spec)
    _write_rows(out / "dispersion.csv", ["k", "p", "omega", "group_velocity"],
                ([str(a), f"{b:.12g}", f"{c:.12g}", f"{d:.12g}"] for a, b, c, d in zip(k, pk, omega, v)))
    worst = 0.0
    for kk in range(-M + 1, M + 1):
        w2 = dispersion(abs(kk), spec) ** 2
        if w2 == 0:
            continue
        phi = plane_wave(kk, spec)
        worst = max(worst, float(np.max(np.abs(apply_band_matrix(phi, spec).values + w2 * phi.values)) / w2))
    small = np.arange(1, max(M // 100, 1) + 1)
    lin = float(np.max(np.abs(omega[small] / pk[small] - 1))) if p["mass"] == 0 else None
    summary = {"max_eigen_residual_over_omega2": worst, "small_k_linearity": lin, "band_edge_velocity": float(v[-1])}
    res = [CheckResult("5", "eigen residual / omega^2", worst, "< 1e-9", "all k", worst < 1e-9),
           CheckResult("5", "band-edge group velocity", float(v[-1]), 0.0, "exact", float(v[-1]) == 0.0)]
    if lin is not None:
        res.append(CheckResult("5", "small-k linearity", lin, "< 1e-3", "k <= M/100", lin < 1e-3))
    return summary, res


def run_tail(p, seed, threads, out: Path):
    spec = LatticeSpec(p["grid_count"], p["step"])
    t = p["t"]
    x = grid_index(np.linspace(-p["window"] * t, p["window"] * t, p["points"]), spec) * spec.step
    direct = delta_evolution_direct(spec, t, x)
    closed = tail_closed_form(make_tail(t, spec), x).value
    rel = np.abs(np.abs(direct) / np.abs(closed) - 1)
    _write_rows(out / "tail.csv", ["x", "direct_abs", "closed_abs", "rel_err"],
                ([f"{a:.9g}", f"{abs(b):.9g}", f"{abs(c):.9g}", f"{d:.6g}"] for a, b, c, d in zip(x, direct, closed, rel)))
    nspec = LatticeSpec(p["norm_grid_count"], p["norm_step"])
    tn = tail_norm(make_tail(p["norm_t"], nspec), nspec)
    err = float(rel.max())
    summary = {"max_rel_modulus_error": err, "tail_norm": tn}
    return summary, [CheckResult("6", "tail modulus error", err, "< 0.05", "|x| <= window t", err < 0.05),
                     CheckResult("6", "tail norm", tn, 1.0, "within 1e-2", abs(tn - 1) < 1e-2)]


def run_noise(p, seed, threads, out: Path):
    rng = np.random.default_rng(seed)
    big = make_ensemble(p["mean_count"], p["omega_min"], p["omega_max"], p["xi0"], rng)
    x = sample_xi(p["t"], big, MonadSampler(p["mean_eta"]), rng, size=p["mean_samples"])
    relmean = float(abs(x.mean()) / np.abs(x).mean())
    ens = make_ensemble(p["count"], p["omega_min"], p["omega_max"], p["xi0"], rng)
    est = correlation_empirical(ens, MonadSampler(p["eta"]), p["t"], np.linspace(0, p["tau_max"], p["lags"]),
                                p["trials"], rng)
    est.to_csv(out / "correlation.csv")
    r = float(np.corrcoef(est.values, est.closed)[0, 1])
    ratio = pre_delta_gaussian_exact(ens, p["delta_width"]) / ens.c0
    summary = {"relative_mean": relmean, "pearson_r": r, "pre_delta_ratio": ratio, "c0": ens.c0}
    res = [CheckResult("7a", "relative mean", relmean, "< 0.02", "", relmean < 0.02),
           CheckResult("7b", "Pearson r", r, "> 0.99", "", r > 0.99),
           CheckResult("7c", "pre-delta / (C0 g(0))", ratio, 1.0, "within 10%", abs(ratio - 1) < 0.1)]
    if p["exponent"]:
        e = amplification_exponent(range(2, 9), LatticeSpec(4096, 0.01), rng, 2, n_times=600, n_sets=4)
        summary["amplification_exponent"] = e
        res.append(CheckResult("8", "direct exponent at A=2", e, 2.0, "within 15%", abs(e / 2 - 1) < 0.15))
    return summary, res


def run_reduction(p, seed, threads, out: Path):
    C0 = AmplitudeState.from_weights(p["weights"])
    noise = NoiseSpec.uniform(C0.n, p["sigma"], p["dt"], p["structure"])
    stats = run_ensemble(C0, noise, p["traj"], max_steps=p["max_steps"], survivor_threshold=p["threshold"],
                         seed=seed, record_every=p["record_every"], n_records=p["n_records"], threads=threads,
                         drift_sign=p["drift_sign"])
    stats.trajectories_to_csv(out / "trajectories.csv")
    stats.moments_to_csv(out / "moments.csv")
    rep = verify_martingale(stats, C0)
    summary = {"martingale_max_z": rep.worst, "norm_audit": stats.norm_audit, "completed": stats.completed}
    res = [CheckResult("2", "martingale", rep.worst, "< 3", "max |z|", rep.passed)]
    if stats.pairs:
        slope = fit_product_decay(stats, 0, p["fit_t_max"])
        expected = -noise.sigma[stats.pairs[0]] ** 2
        summary["product_decay_slope"] = slope
        summary["product_decay_expected"] = expected
        res.append(CheckResult("3", "product decay slope", slope, expected, "within 5%", abs(slope / expected - 1) < 0.05))
    return summary, res


def run_born(p, seed, threads, out: Path):
    C0 = AmplitudeState.from_weights(p["weights"])
    noise = NoiseSpec.uniform(C0.n, p["sigma"], p["dt"])
    stats = run_ensemble(C0, noise, p["traj"], survivor_threshold=p["threshold"], seed=seed,
                         record_every=p["record_every"], n_records=p["n_records"], threads=threads)
    stats.trajectories_to_csv(out / "trajectories.csv")
    stats.moments_to_csv(out / "moments.csv")
    f = stats.frequencies()
    band = born_band(C0.weights, stats.n_traj)
    rep = verify_martingale(stats, C0)
    summary = {"frequencies": f, "weights": C0.weights, "band": band, "completed": stats.completed,
               "martingale_max_z": rep.worst}
    ok = bool(np.all(np.abs(f - C0.weights) <= band)) and stats.completed == stats.n_traj
    return summary, [CheckResult("1", "Born frequencies", f, C0.weights, "band", ok),
                     CheckResult("2", "martingale", rep.worst, "< 3", "max |z|", rep.passed)]


def _scenario_summary(result, expected: dict):
    counts = result.counts()
    z = multinomial_z(counts, expected)
    return {"counts": counts, "frequencies": result.frequencies(), "expected": expected, "z": z}, max(abs(v) for v in z.values())


def run_sg(p, seed, threads, out: Path):
    r = modified_stern_gerlach(p["detector"], p["events"], seed, _settings(p, threads), p["near_time"], p["far_time"])
    r.to_csv(out / "events.csv")
    near = 0.5 if p["detector"] else 0.0
    summary, _ = _scenario_summary(r, {"near": near, "far": 1 - near})
    f = summary["frequencies"]["near"]
    return summary, [CheckResult("11", "near-screen fraction", f, near, "within 0.015", abs(f - near) < 0.015)]


def run_renninger(p, seed, threads, out: Path):
    fr = p["inner_fraction"]
    r = renninger(fr, p["r1"], p["r2"], p["events"], seed, _settings(p, threads))
    r.to_csv(out / "events.csv")
    summary, zmax = _scenario_summary(r, {"inner": fr, "outer": 1 - fr})
    f = summary["frequencies"]["inner"]
    return summary, [CheckResult("11", "inner fraction", f, fr, "3 sigma", zmax < 3)]


def run_mz(p, seed, threads, out: Path):
    r = mach_zehnder_null(p["object_present"], p["splitter_ratio"], p["events"], seed, _settings(p, threads))
    r.to_csv(out / "events.csv")
    q = p["splitter_ratio"]
    expected = ({"Absorbed": q, "DarkPort": (1 - q) / 2, "BrightPort": (1 - q) / 2} if p["object_present"]
                else {"Absorbed": 0.0, "DarkPort": 0.0, "BrightPort": 1.0})
    summary, zmax = _scenario_summary(r, expected)
    return summary, [CheckResult("11", "Mach-Zehnder outcomes", summary["frequencies"], expected, "3 sigma", zmax < 3)]


def run_epr(p, seed, threads, out: Path):
    if len(p["angles"]) != 4:
        raise ValidationError("angles must list a, a', b, b'")
    c = chsh(p["angles"], p["pairs"], seed, _settings(p, threads), p["convention"])
    rows = []
    for i, r in enumerate(c.settings):
        for j in range(r.n_pairs):
            rows.append([str(i), str(j), str(int(r.branch[j])), str(int(r.outcome_a[j])), str(int(r.outcome_b[j]))])
    _write_rows(out / "pairs.csv", ["setting", "pair_id", "branch", "outcome_a", "outcome_b"], rows)
    expected = [singlet_correlation(r.angle_a, r.angle_b, p["convention"]) for r in c.settings]
    e = expected
    s_exp = abs(e[0] - e[1] + e[2] + e[3])
    summary = {"S": c.S, "S_stderr": c.stderr, "S_expected": s_exp, "correlations": c.correlations,
               "expected_correlations": expected, "branch_fractions": [r.branch_fraction for r in c.settings]}
    return summary, [CheckResult("11", "CHSH S", c.S, s_exp, "within 0.05", abs(c.S - s_exp) < 0.05)]


def run_decay(p, seed, threads, out: Path):
    params = DecayParams(p["delta_e"], p["p_c"], p["average_pc"])
    d = decay_simulation(params, p["nuclei"], seed, _settings(p, threads))
    d.to_csv(out / "decays.csv")
    summary = {"tau_fit": d.tau_fit, "tau_stderr": d.tau_stderr, "r_squared": d.r_squared}
    if params.average_pc:
        return summary, [CheckResult("10", "log-linear R^2", d.r_squared, "> 0.99", "", d.r_squared > 0.99)]
    tau = analytic_lifetime(params)
    summary["tau_analytic"] = tau
    return summary, [CheckResult("10", "lifetime", d.tau_fit, tau, "within 2%", abs(d.tau_fit / tau - 1) < 0.02)]


def run_attenuation(p, seed, threads, out: Path):
    params = InterferenceParams(p["a"], p["alpha"], p["mode"])
    edges = np.linspace(-math.pi, math.pi, p["bins"] + 1)
    h = attenuation_montecarlo(params, edges, p["events"], seed, _settings(p, threads), p["open_slits"])
    h.to_csv(out / "histogram.csv")
    summary = {"contrast": h.contrast, "contrast_stderr": h.contrast_stderr, "contrast_expected": params.contrast,
               "chi2_per_bin_mean": float(h.chi2_per_bin.mean()), "branch_counts": h.branch_counts,
               "branch_expected": h.branch_expected, "n_screen": h.n_screen}
    if p["open_slits"] == "right":
        return summary, []
    return summary, [CheckResult("9", f"{params.mode} contrast", h.contrast, params.contrast, "within 0.02",
                                 abs(h.contrast - params.contrast) < 0.02)]


RUNNERS = {
    "dispersion": run_dispersion, "tail": run_tail, "noise": run_noise, "reduction": run_reduction,
    "born": run_born, "sg": run_sg, "renninger": run_renninger, "mz": run_mz, "epr": run_epr,
    "decay": run_decay, "attenuation": run_attenuation,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reduce", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in list(RUNNERS) + ["check"]:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path)
        sp.add_argument("--seed")
        sp.add_argument("--threads")
        sp.add_argument("--out", type=Path, default=Path("reduce_out"))
        sp.add_argument("--check", action="store_true")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        if name in ("born", "reduction"):
            sp.add_argument("--weights")
            sp.add_argument("--traj")
        if name == "check":
            sp.add_argument("--corrupt-drift", action="store_true", help=argparse.SUPPRESS)
    return parser


def _dump(obj, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(checks._jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _run_suite(args) -> int:
    seed = checks.DEFAULT_SEED if args.seed is None else int(args.seed)
    threads = 1 if args.threads in (None, "1") else (os.cpu_count() or 1 if args.threads == "auto" else int(args.threads))
    results = checks.check_suite(seed, threads, -1.0 if args.corrupt_drift else 1.0)
    for r in results:
        print(r.line())
    args.out.mkdir(parents=True, exist_ok=True)
    report = {"seed": seed, "criteria": [r.as_dict() for r in results], "all_passed": all(r.passed for r in results)}
    _dump(report, args.out / "check_report.json")
    return EXIT_OK if report["all_passed"] else EXIT_CHECK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.experiment == "check":
            return _run_suite(args)
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            overrides[k.strip()] = v.strip()
        for flag in ("weights", "traj"):
            v = getattr(args, flag, None)
            if v is not None:
                overrides[flag] = v
        cfg = resolve(args.experiment, args.config, overrides, args.seed, args.threads)
        args.out.mkdir(parents=True, exist_ok=True)
        write_config(cfg, args.out / "config.ini")
        summary, results = RUNNERS[args.experiment](cfg["params"], cfg["seed"], cfg["threads"], args.out)
        doc = {"experiment": cfg["experiment"], "seed": cfg["seed"], "params": cfg["params"], "results": summary}
        if args.check:
            doc["checks"] = [r.as_dict() for r in results]
        _dump(doc, args.out / "summary.json")
        if args.check:
            for r in results:
                print(r.line())
            if not all(r.passed for r in results):
                return EXIT_CHECK
        return EXIT_OK
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
