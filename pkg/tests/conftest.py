import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from vtss.datasets import LabeledImageSet, write_raw_tensor

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

REPO = Path(__file__).resolve().parents[1]
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker.args
    if report.when == "setup" and report.passed:
        return
    status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
    note = ""
    if report.failed:
        note = str(call.excinfo.value).splitlines()[0][:160] if call.excinfo else ""
    elif report.skipped and isinstance(report.longrepr, tuple):
        note = report.longrepr[2]
    detail = getattr(item, "criterion_detail", "")
    _CRITERIA[number] = (status, title, "; ".join(x for x in (detail, note) if x))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[number]
        line = f"criterion {number:>2} {status}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))


@pytest.fixture
def detail(request):
    """Attach a one-line measurement summary to the acceptance report."""
    def _set(text):
        request.node.criterion_detail = text
        print(text)
    return _set


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def toy_set(n_per_class=8, num_classes=3, side=12, channels=1, seed=0):
    """Small class-structured image set: each class is a bright square at its own spot."""
    g = np.random.default_rng(seed)
    images, labels = [], []
    for c in range(num_classes):
        for _ in range(n_per_class):
            img = g.uniform(0.0, 0.2, size=(channels, side, side))
            r = (c * 3) % (side - 4)
            img[:, r:r + 4, 1 + c:5 + c] += 0.7
            images.append(np.clip(img, 0, 1))
            labels.append(c)
    return LabeledImageSet(np.array(images, np.float32), np.array(labels), num_classes, "toy")


@pytest.fixture
def toy_dataset_path(tmp_path):
    """Raw-tensor train/test files usable as ``dataset`` in experiment configs."""
    root = tmp_path / "data"
    root.mkdir()
    write_raw_tensor(toy_set(16, 3, 16, seed=1), root / "toy_train.vtss")
    write_raw_tensor(toy_set(8, 3, 16, seed=2), root / "toy_test.vtss")
    return root


def fmnist_available():
    root = Path(os.environ.get("VTSS_DATA_DIR", "data"))
    return (root / "fmnist").is_dir()
