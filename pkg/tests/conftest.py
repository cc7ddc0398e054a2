import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from elastic_bodies.synth import Generator, SynthSpec  # noqa: E402

DATA = Path(__file__).parent / "data"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_dir():
    return DATA / "tiny"


@pytest.fixture(scope="session")
def tiny_spec_path():
    return DATA / "tiny_spec.json"


@pytest.fixture(scope="session")
def small_gen():
    spec = SynthSpec(rings=9, segments=8, shape_factors=[[1.0, 1.0], [1.3, 1.0], [1.0, 1.3]],
                     pose_factors=[0.0, 30.0, 60.0])
    return Generator(spec)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[key])
