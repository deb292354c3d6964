import numpy as np
import pytest

from scenetext.gbdt import TrainConfig
from scenetext.synth import generate_corpus

_CRITERIA: dict[str, list[str]] = {}
_NODE_LABEL: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion covered by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _CRITERIA.setdefault(m.args[0], [])
            _NODE_LABEL[item.nodeid] = m.args[0]


def pytest_runtest_logreport(report):
    label = _NODE_LABEL.get(report.nodeid)
    if label is None:
        return
    # record the call phase, or a setup/teardown phase that did not pass
    if report.when == "call" or report.outcome != "passed":
        _CRITERIA[label].append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_CRITERIA, key=lambda s: int(s[2:])):
        outcomes = _CRITERIA[label]
        if not outcomes:
            status = "NOT RUN"
        elif all(o == "passed" for o in outcomes):
            status = "PASS"
        else:
            status = "FAIL"
        terminalreporter.write_line(f"{label}: {status} ({len(outcomes)} test(s))")


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(80, seed=3)


@pytest.fixture(scope="session")
def small_model(small_corpus):
    from scenetext.gbdt import train

    return train(small_corpus.dataset, TrainConfig(rounds=8, max_depth=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
