from __future__ import annotations

import pytest

from stickyvol.model import ModelParams


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running Monte Carlo or training checks")


@pytest.fixture
def fig2a() -> ModelParams:
    """Reference parameter set used across the simulator tests (spot 80)."""
    return ModelParams(
        r=0.04, kappa=3.0, theta=0.05, sigma=0.4, rho=-0.3, xi=3.0, eta=0.7,
        v0=0.05, x0=80.0, y0=101.0, z0=49.0,
    )


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
