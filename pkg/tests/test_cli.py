import json
import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsqm import cli
from nsqm.checks import CheckResult

SMALL = {
    "dispersion": ["--set", "grid_count=64"],
    "tail": ["--set", "grid_count=1024", "--set", "step=0.015625", "--set", "norm_grid_count=2048",
             "--set", "norm_step=0.002", "--set", "t=5"],
    "noise": ["--set", "count=100", "--set", "mean_count=200", "--set", "mean_samples=500", "--set", "trials=200",
              "--set", "exponent=false"],
    "reduction": ["--traj", "200"],
    "born": ["--weights", "0.3,0.7", "--traj", "300"],
    "sg": ["--set", "events=300"],
    "renninger": ["--set", "events=300"],
    "mz": ["--set", "events=300"],
    "epr": ["--set", "pairs=4000"],
    "decay": ["--set", "nuclei=1000"],
    "attenuation": ["--set", "events=1000"],
}

LINE = re.compile(r"^\[(PASS|FAIL)\] criterion \w+: .+: measured .+, expected .+ \(.*\)$")


def run(tmp_path, *args, name="out"):
    out = tmp_path / name
    code = cli.main([*args, "--out", str(out)])
    return code, out


class TestExperiments:
    @pytest.mark.parametrize("experiment", sorted(SMALL))
    def test_runs_and_writes_outputs(self, tmp_path, experiment):
        code, out = run(tmp_path, experiment, *SMALL[experiment], "--seed", "5")
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["experiment"] == experiment
        assert summary["seed"] == 5
        assert "threads" not in summary
        assert (out / "config.ini").exists()
        assert list(out.glob("*.csv"))

    @pytest.mark.parametrize("experiment", ["born", "renninger", "epr", "attenuation", "reduction"])
    def test_thread_independent_bytes(self, tmp_path, experiment):
        _, a = run(tmp_path, experiment, *SMALL[experiment], "--threads", "1", name="a")
        _, b = run(tmp_path, experiment, *SMALL[experiment], "--threads", "3", name="b")
        files = sorted(p.name for p in a.iterdir() if p.name != "config.ini")
        assert files == sorted(p.name for p in b.iterdir() if p.name != "config.ini")
        for f in files:
            assert (a / f).read_bytes() == (b / f).read_bytes(), f

    @pytest.mark.parametrize("experiment", ["born", "sg", "decay"])
    def test_config_round_trip(self, tmp_path, experiment):
        _, a = run(tmp_path, experiment, *SMALL[experiment], "--seed", "11", name="a")
        code, b = run(tmp_path, experiment, "--config", str(a / "config.ini"), name="b")
        assert code == 0
        for p in a.iterdir():
            assert (b / p.name).read_bytes() == p.read_bytes(), p.name

    def test_flags_override_config(self, tmp_path):
        _, a = run(tmp_path, "sg", *SMALL["sg"], "--seed", "1", name="a")
        _, b = run(tmp_path, "sg", "--config", str(a / "config.ini"), "--seed", "2", name="b")
        assert json.loads((b / "summary.json").read_text())["seed"] == 2
        assert json.loads((b / "summary.json").read_text())["params"]["events"] == 300

    def test_seed_changes_output(self, tmp_path):
        _, a = run(tmp_path, "born", *SMALL["born"], "--seed", "1", name="a")
        _, b = run(tmp_path, "born", *SMALL["born"], "--seed", "2", name="b")
        assert (a / "trajectories.csv").read_bytes() != (b / "trajectories.csv").read_bytes()

    def test_threads_auto(self, tmp_path):
        code, _ = run(tmp_path, "sg", *SMALL["sg"], "--threads", "auto")
        assert code == 0


class TestExitCodes:
    @pytest.mark.parametrize("weights", ["0.3,0.6", "0.5,0.6", "-0.1,1.1", "0.3,x", "0.5,0.5,0.1"])
    def test_bad_weights(self, tmp_path, capsys, weights):
        code, _ = run(tmp_path, "born", f"--weights={weights}", "--traj", "10")
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_weights_message_names_constraint(self, tmp_path, capsys):
        run(tmp_path, "born", "--weights", "0.3,0.6", "--traj", "10")
        assert "sum to 1" in capsys.readouterr().err

    @pytest.mark.parametrize(
        "args",
        [
            ["sg", "--set", "bogus=1"],
            ["sg", "--set", "events"],
            ["sg", "--seed", "-1"],
            ["sg", "--seed", "abc"],
            ["sg", "--threads", "0"],
            ["sg", "--threads", "many"],
            ["attenuation", "--set", "a=1.5"],
            ["epr", "--set", "angles=0,1"],
            ["decay", "--set", "p_c=0"],
        ],
    )
    def test_invalid_input(self, tmp_path, args):
        assert run(tmp_path, *args)[0] == 2

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[params]\nfoo = 1\n")
        assert run(tmp_path, "sg", "--config", str(cfg))[0] == 2

    def test_unknown_config_section(self, tmp_path):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[other]\nevents = 1\n")
        assert run(tmp_path, "sg", "--config", str(cfg))[0] == 2

    def test_config_for_other_experiment(self, tmp_path):
        cfg = tmp_path / "c.ini"
        cfg.write_text("[run]\nexperiment = born\n")
        assert run(tmp_path, "sg", "--config", str(cfg))[0] == 2

    def test_missing_config_is_io_error(self, tmp_path):
        assert run(tmp_path, "sg", "--config", str(tmp_path / "none.ini"))[0] == 4

    def test_unwritable_out_is_io_error(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert cli.main(["sg", *SMALL["sg"], "--out", str(blocker / "sub")]) == 4

    def test_check_failure_exit(self, tmp_path):
        # the fixed 0.015 tolerance cannot hold at 30 events
        code, _ = run(tmp_path, "sg", "--set", "events=30", "--seed", "3", "--check")
        assert code == 3

    def test_check_pass_exit(self, tmp_path, capsys):
        code, out = run(tmp_path, "dispersion", "--check")
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines and all(LINE.match(x) for x in lines)
        assert all(c["passed"] for c in json.loads((out / "summary.json").read_text())["checks"])


class TestCheckReport:
    def test_line_format(self):
        r = CheckResult("9", "contrast", 0.79, 0.8, "within 0.02", True)
        assert LINE.match(r.line())
        assert r.line().startswith("[PASS] criterion 9")
        assert CheckResult("3", "x", 1, 2, "t", False).line().startswith("[FAIL]")

    @settings(max_examples=30, deadline=None)
    @given(st.floats(allow_nan=False, allow_infinity=False), st.booleans())
    def test_as_dict_is_json(self, value, passed):
        d = CheckResult("1", "n", value, [value], "t", passed).as_dict()
        assert json.loads(json.dumps(d)) == d


class TestResolve:
    def test_defaults(self):
        cfg = cli.resolve("born", None, {}, None, None)
        assert cfg["params"]["weights"] == (0.3, 0.7)
        assert cfg["threads"] == 1

    def test_written_config_resolves_identically(self, tmp_path):
        cfg = cli.resolve("epr", None, {"pairs": "40", "convention": "spin"}, "9", "2")
        cli.write_config(cfg, tmp_path / "c.ini")
        again = cli.resolve("epr", tmp_path / "c.ini", {}, None, None)
        assert again == cfg

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=5))
    def test_weight_lists_round_trip(self, raw):
        w = tuple(x / sum(raw) for x in raw)
        text = cli._format(w)
        assert cli._floats(text) == w
