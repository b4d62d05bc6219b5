import numpy as np
import pytest

from veinmt.model import MTConfig, MTModel

SMALL = (16, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_model():
    return MTModel(MTConfig(image_shape=SMALL, seed=3))


@pytest.fixture(scope="session")
def small_images():
    return np.random.default_rng(7).random((4,) + SMALL).astype(np.float32)


# ---------------------------------------------------------------------------- acceptance report

_AC_RESULTS = pytest.StashKey[dict]()
_AC_NOTES = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_AC_RESULTS] = {}


@pytest.fixture
def notes(request):
    """Measurements a criterion test wants shown next to its pass/fail line."""
    d = {}
    request.node.stash[_AC_NOTES] = d
    return d


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None and (rep.when == "call" or rep.failed):
        status = "PASS" if rep.passed else "FAIL"
        item.config.stash[_AC_RESULTS][mark.args[0]] = (status, item.stash.get(_AC_NOTES, {}))
    return rep


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_AC_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(results, key=lambda s: int(s[2:])):
        status, notes = results[name]
        detail = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in notes.items())
        terminalreporter.write_line(f"{name} {status}" + (f"  {detail}" if detail else ""))
