import os

import numpy as np
import pytest

from voxelhop.config import ci_config
from voxelhop.synth import SynthSpec, generate

FULL = os.environ.get("VOXELHOP_FULL") == "1"
_CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: (int(l.split()[1].split(":")[0].split("-")[0]), l)):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """``criterion(id, ok, detail)`` records one PASS/FAIL line and fails the test when not ok."""

    def record(cid: str, ok: bool, detail: str):
        line = f"[{'PASS' if ok else 'FAIL'}] {cid}: {detail}"
        request.config.stash[_CRITERIA].append(line)
        print(line)
        assert ok, line

    return record


def pytest_collection_modifyitems(config, items):
    if FULL:
        return
    skip = pytest.mark.skip(reason="full-size run; set VOXELHOP_FULL=1")
    for item in items:
        if "full" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_spec():
    return SynthSpec(S=28, K=8, C=3, n_controls=6, n_patients=6, signal_amplitude=1.0, seed=3)


@pytest.fixture(scope="session")
def small_data(small_spec):
    return generate(small_spec)


@pytest.fixture(scope="session")
def ci():
    return ci_config()


@pytest.fixture(scope="session")
def small_model(small_data, ci):
    from voxelhop.model import fit

    vols, labels = small_data
    return fit(vols, labels, ci)
