import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_config_dict(mode="single"):
    """A configuration small enough to run the whole pipeline in a few seconds."""
    return {
        "mode": mode,
        "corpus": {"seeds": [0], "n_train": 150, "n_target_train": 150, "n_test": 60},
        "tagger": {"emb_dim": 8, "hidden": 12},
        "train": {"teacher": {"epochs": 2}, "student": {"epochs": 1}},
        "ensemble": {"langid": {"epochs": 2}},
    }


@pytest.fixture
def tiny_config():
    return tiny_config_dict


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Record one PASS/FAIL line per acceptance criterion for the run summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def log(criterion, ok, detail):
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        lines.append(line)
        return ok

    return log


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
