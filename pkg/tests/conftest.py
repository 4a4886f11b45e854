import numpy as np
import pytest

from mmhaptic.geometry import TWO_PI, rotation_about
from mmhaptic.phantom import DEFAULT_PHANTOMS, make_phantom
from mmhaptic.render import ProbeSpec, build_probe_pointshell

COARSE = (0.01, TWO_PI / 60, 0.01)

# filled by the acceptance module, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def shell():
    return build_probe_pointshell()


@pytest.fixture(scope="session")
def small_shell():
    return build_probe_pointshell(ProbeSpec(num_points=400))


@pytest.fixture(scope="session")
def coarse_phantom():
    """Ellipse phantom with a bump on a coarse grid (about 24k voxels)."""
    return make_phantom(DEFAULT_PHANTOMS[1], COARSE)


def random_rotation(rng) -> np.ndarray:
    return rotation_about(rng.normal(size=3), rng.uniform(0, np.pi))
