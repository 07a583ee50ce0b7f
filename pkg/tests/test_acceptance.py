"""One test per acceptance criterion; each prints its pass/fail line."""

import pytest

from hypokinetic import acceptance


@pytest.fixture(scope="module")
def results():
    return {r.number: r for r in acceptance.run_all()}


def _check(results, capsys, number):
    r = results[number]
    with capsys.disabled():
        print("\n" + r.line())
    assert r.passed is True, r.line()


class TestAcceptance:
    def test_01_assumption_certification(self, results, capsys):
        _check(results, capsys, 1)

    def test_02_rate_bound_domination(self, results, capsys):
        _check(results, capsys, 2)

    def test_03_kn_uniformity_of_lower_bounds(self, results, capsys):
        _check(results, capsys, 3)

    def test_04_hypocoercive_decay(self, results, capsys):
        _check(results, capsys, 4)

    def test_05_uniform_in_kn_decay(self, results, capsys):
        _check(results, capsys, 5)

    def test_06_entropy_dissipation_consistency(self, results, capsys):
        _check(results, capsys, 6)

    def test_07_mass_conservation(self, results, capsys):
        _check(results, capsys, 7)

    def test_08_cascade_oracles(self, results, capsys):
        _check(results, capsys, 8)

    def test_09_derivative_bounds(self, results, capsys):
        _check(results, capsys, 9)

    def test_10_radius_proxy(self, results, capsys):
        _check(results, capsys, 10)

    def test_11_hierarchy_vs_collocation(self, results, capsys):
        _check(results, capsys, 11)
