"""Runs the fourteen acceptance criteria once and reports one line per criterion."""
import pytest

from cbilab import acceptance


@pytest.fixture(scope="session")
def results(request):
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def echo(line):
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
    return {r.number: r for r in acceptance.run_all(echo=echo)}


@pytest.mark.parametrize("number", range(1, 15))
def test_criterion(results, number):
    res = results[number]
    assert res.passed, res.line()
