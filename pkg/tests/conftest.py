import numpy as np
import pytest

from fedhpo.space import HyperparamDim, HyperparamSpace

_ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def report():
    """Record one acceptance line: ``report(label, passed, detail)``."""

    def _report(label: str, passed: bool, detail: str = ""):
        _ACCEPTANCE[label] = (bool(passed), detail)
        print(f"{'PASS' if passed else 'FAIL'} {label}: {detail}")
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[label]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {label}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def unit_space(*grid_points, scale=1.0):
    """Plain continuous dims on [-1, 1]; raw == normalized when scale is 1."""
    return HyperparamSpace(
        tuple(HyperparamDim(f"x{i}", -1.0, 1.0, grid_points=g) for i, g in enumerate(grid_points)),
        scale,
    )
