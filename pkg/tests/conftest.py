import numpy as np
import pytest

from looaudit.data import Dataset, SyntheticSpec, sample_synthetic


@pytest.fixture
def blobs():
    return sample_synthetic(SyntheticSpec("gaussian-blobs", n=40, seed=1))


@pytest.fixture
def tiny_csv(tmp_path):
    path = tmp_path / "tiny.csv"
    path.write_text(
        "age,color,score,label\n"
        "20,red,1.0,yes\n"
        "30,blue,2.0,no\n"
        "40,red,3.0,yes\n"
        "50,green,,no\n"
        "60,blue,5.0,no\n"
    )
    return path


def random_dataset(rng: np.random.Generator, n: int, d: int = 2, k: int = 2) -> Dataset:
    x = rng.normal(size=(n, d))
    y = rng.integers(0, k, size=n)
    y[:k] = np.arange(k)
    return Dataset(x, y, k)


# acceptance criteria report ----------------------------------------------------

_ACCEPTANCE: dict[int, tuple[str, str, float]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when != "call" and rep.passed:
        return
    number, title = marker.args
    prev = _ACCEPTANCE.get(number)
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    if prev is not None and prev[1] == "FAIL":
        status = "FAIL"
    _ACCEPTANCE[number] = (title, status, rep.duration + (prev[2] if prev else 0.0))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, status, secs = _ACCEPTANCE[number]
        terminalreporter.write_line(f"[{status}] {number:2d}. {title} ({secs:.1f} s)")
