import numpy as np
import pytest
from hypothesis import settings

from quasinoise.core import DensityState, HermitianObservable
from quasinoise.quasiprob import Schedule

settings.register_profile("default", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("default")

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def random_hermitian(rng, d, integer_spectrum=False):
    if integer_spectrum:
        u, _ = np.linalg.qr(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))
        lam = rng.integers(-2, 3, size=d).astype(float)
        return (u * lam) @ u.conj().T
    m = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return (m + m.conj().T) / 2


def random_state(rng, d):
    m = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = m @ m.conj().T
    return DensityState(rho / np.trace(rho).real)


def random_schedule(rng, d, n, n_obs=2, integer_spectrum=True):
    registry = tuple(HermitianObservable(random_hermitian(rng, d, integer_spectrum)) for _ in range(n_obs))
    steps = tuple((int(rng.integers(n_obs)), float(k)) for k in range(n))
    return Schedule(steps, registry)


@pytest.fixture
def rng():
    return np.random.default_rng(20261019)


# --- per-criterion summary for the acceptance suite ----------------------------------

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            number, title = mark.args
            _CRITERIA.setdefault(number, {"title": title, "tests": {}})["tests"][item.nodeid] = None


def pytest_runtest_logreport(report):
    for entry in _CRITERIA.values():
        if report.nodeid in entry["tests"] and (report.when == "call" or report.outcome != "passed"):
            if entry["tests"][report.nodeid] in (None, "passed"):
                entry["tests"][report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        states = list(entry["tests"].values())
        if any(s is None for s in states):
            verdict = "NOT RUN"
        else:
            verdict = "PASS" if all(s == "passed" for s in states) else "FAIL"
        failed = [k.split("::")[-1] for k, s in entry["tests"].items() if s not in (None, "passed")]
        extra = f"  (failing: {', '.join(failed)})" if failed else ""
        terminalreporter.write_line(f"criterion {number:2d} {entry['title']}: {verdict}{extra}")
