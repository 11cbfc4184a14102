import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from headimpact.kinematics import N_SAMPLES, KinematicSeries

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_series(rng, scale_a=500.0, scale_w=20.0) -> KinematicSeries:
    """Smooth random pulse-like kinematics."""
    t = np.arange(N_SAMPLES)
    centers = rng.uniform(10, 40, size=(2, 3, 1))
    widths = rng.uniform(3, 12, size=(2, 3, 1))
    amps = rng.normal(size=(2, 3, 1)) * np.array([scale_a, scale_w])[:, None, None]
    pulses = amps * np.exp(-0.5 * ((t - centers) / widths) ** 2)
    return KinematicSeries(pulses[0], pulses[1])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "LINES", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
        terminalreporter.write_line(line)
