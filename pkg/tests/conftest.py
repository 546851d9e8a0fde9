import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def _has_skimage() -> bool:
    try:
        import skimage.data  # noqa: F401
    except ImportError:
        return False
    return True


needs_skimage = pytest.mark.skipif(not _has_skimage(), reason="scikit-image not installed")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criterion -> [(passed, detail), ...], filled by tests/test_acceptance.py
ACCEPTANCE: dict[str, list] = {}


@pytest.fixture
def acceptance():
    """Record one part of an acceptance criterion; the test still asserts on it."""
    def record(criterion: str, passed: bool, detail: str) -> None:
        ACCEPTANCE.setdefault(criterion, []).append((bool(passed), detail))
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        parts = ACCEPTANCE[key]
        status = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        terminalreporter.write_line(f"{key} {status}: " + "; ".join(d for _, d in parts))
