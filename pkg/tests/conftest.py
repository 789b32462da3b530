import warnings

import numpy as np
import pytest

from isca import distortions as D
from isca.blocks import synthetic_image


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def desk_source():
    return synthetic_image(64)


@pytest.fixture(scope="session")
def desk_train(desk_source):
    return D.make_training_set(desk_source, 0)


@pytest.fixture(scope="session")
def desk_test(desk_source):
    return D.make_test_set(desk_source, 0)


@pytest.fixture(scope="session")
def tiny_images():
    """Ten random-ish 16x16 images with distinct textures (4 blocks each)."""
    g = np.random.default_rng(7)
    base = synthetic_image(16)
    return [np.clip(base + 0.15 * g.standard_normal(base.shape), 0, 1) for _ in range(10)]


@pytest.fixture(autouse=True)
def _quiet_zero_diag():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*non-positive kernel self-similarity.*")
        yield


@pytest.fixture
def accept(request):
    """Record one acceptance line; printed immediately and again in the summary."""
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def record(number, ok, detail):
        line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
