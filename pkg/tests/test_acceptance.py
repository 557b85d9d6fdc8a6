"""Acceptance battery: every criterion at its stated tolerance.

Each test prints one [PASS] or [FAIL] line per check and then asserts it.
"""

import pytest

from nsqm import checks


@pytest.fixture(scope="module")
def born_runs():
    return checks.born_runs(checks.DEFAULT_SEED)


def report(capsys, results):
    with capsys.disabled():
        print()
        for r in results:
            print(r.line())
    failed = [r.line() for r in results if not r.passed]
    assert not failed, "\n".join(failed)


class TestReductionEngine:
    def test_criterion_01_born_rule(self, capsys, born_runs):
        report(capsys, checks.check_born(born_runs))

    def test_criterion_02_martingale(self, capsys, born_runs):
        report(capsys, checks.check_martingale(born_runs))

    def test_criterion_03_product_decay(self, capsys):
        report(capsys, [checks.check_product_decay()])

    def test_criterion_04_norm(self, capsys):
        report(capsys, checks.check_norm())


class TestLatticeAndTail:
    def test_criterion_05_lattice(self, capsys):
        report(capsys, checks.check_lattice())

    def test_criterion_06_tail(self, capsys):
        report(capsys, checks.check_tail())


class TestNoise:
    @pytest.mark.parametrize("criterion", ["7a", "7b", "7c"])
    def test_criterion_07_noise(self, capsys, criterion, noise_results):
        report(capsys, [r for r in noise_results if r.criterion == criterion])

    def test_criterion_08_variance_scaling(self, capsys):
        report(capsys, checks.check_variance_scaling())


@pytest.fixture(scope="module")
def noise_results():
    return checks.check_noise()


class TestScenarios:
    def test_criterion_09_fringes(self, capsys):
        report(capsys, checks.check_fringes())

    def test_criterion_10_decay(self, capsys):
        report(capsys, [checks.check_decay()])

    def test_criterion_11_scenarios(self, capsys):
        report(capsys, checks.check_scenarios())

    def test_criterion_12_determinism(self, capsys):
        report(capsys, checks.check_determinism())
