import numpy as np
import pytest

from hwprune.data_io import synth_classify
from hwprune.nn import TrainConfig, fit, jet_mlp


_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    # keep hypothesis runs short and reproducible
    from hypothesis import settings

    settings.register_profile("repo", max_examples=60, deadline=None, derandomize=True)
    settings.load_profile("repo")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, text = marker.args
    # a failure in any phase marks the criterion as failed
    if rep.failed or (rep.when == "call" and number not in _CRITERIA):
        _CRITERIA[number] = ("PASS" if rep.passed else "FAIL", text)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, text = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d} {status}: {text}")


@pytest.fixture(scope="session")
def jet_task():
    """Seeded jet-like task: 16 features, 5 classes, ~0.7 accuracy ceiling."""
    data = synth_classify(seed=7, n_samples=20000, separation=1.0)
    return data.split(0.25, seed=0)


@pytest.fixture(scope="session")
def trained_jet(jet_task):
    train, _ = jet_task
    net = jet_mlp(seed=0)
    fit(net, train.features, train.labels, TrainConfig(epochs=30, lam=0.0, seed=0))
    return net


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
