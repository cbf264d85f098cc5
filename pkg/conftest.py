import pytest


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False,
                     help="Run the desk experiment comparing supervised and semi-supervised runs")
    parser.addoption("--desk-seeds", action="store", default="0,1,2",
                     help="Comma separated seeds for the desk experiment")

@pytest.fixture(scope="module")
def opt_run_slow(request):
    return request.config.getoption("--run-slow")

@pytest.fixture(scope="module")
def opt_desk_seeds(request):
    return [int(seed) for seed in request.config.getoption("--desk-seeds").split(',')]
