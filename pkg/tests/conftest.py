import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from uvavatar.core import Camera, Gaussian, SplatSet, axis_angle_to_quat
from uvavatar.synth import SynthConfig, synth_avatar

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_avatar():
    return synth_avatar(SynthConfig(grid=64, seed=0))


def random_scene(rng: np.random.Generator, n: int = 32, size: int = 64, sh_degree: int = 2):
    """n random splats in front of a camera looking down +z from the origin."""
    mask = np.zeros((8, 8), dtype=bool)
    mask.flat[:n] = True
    gs = []
    for _ in range(n):
        z = rng.uniform(2.0, 6.0)
        xy = rng.uniform(-0.6, 0.6, 2) * z
        sh = np.zeros(27)
        sh[:3] = rng.normal(0.0, 1.0, 3)
        if sh_degree > 0:
            sh[3:] = rng.normal(0.0, 0.2, 24)
        gs.append(Gaussian.create(
            mu=[xy[0], xy[1], z],
            rot=axis_angle_to_quat(rng.normal(0.0, 1.0, 3)),
            scale=np.exp(rng.uniform(np.log(0.02), np.log(0.4), 3)),
            delta=rng.uniform(0.05, 1.0),
            sh=sh,
        ))
    cam = Camera(fx=size * 0.9, fy=size * 0.9, cx=size / 2, cy=size / 2, R=np.eye(3), t=np.zeros(3),
                 width=size, height=size)
    return SplatSet.from_gaussians(mask, gs), cam


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance_log(request):
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    return request.config.stash[_ACCEPTANCE]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
