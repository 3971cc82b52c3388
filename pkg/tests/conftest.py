import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mwfic.beamformer import BinProblem
from mwfic.scene import ArrayGeometry, ScenarioSpec, build_scene
from mwfic.spectral import estimate_scene
from mwfic.speech import load_speech
from mwfic.stft import StftConfig

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_psd(rng, dim, rank=None, floor=0.0):
    rank = dim if rank is None else rank
    b = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    phi = b @ b.conj().T / rank + floor * np.eye(dim)
    return 0.5 * (phi + phi.conj().T)


def random_problem(rng, m=3, alpha=0.0, variant="MWF", floor=0.1):
    """Model-consistent problem: rank-1 speech plus full-rank undesired part."""
    d = 2 * m
    a_left = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    a_left /= a_left[0]
    a_right = a_left / a_left[m]
    phi_v = random_psd(rng, d, floor=floor)
    phi_u = phi_v + random_psd(rng, d, floor=floor)
    return BinProblem.from_model(float(rng.uniform(0.5, 2.0)), a_left, a_right, phi_u, phi_v,
                                 alpha, variant)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def config():
    return StftConfig()


@pytest.fixture(scope="session")
def geometry():
    return ArrayGeometry()


@pytest.fixture(scope="session")
def speech():
    return load_speech()


@pytest.fixture(scope="session")
def point_scene(speech, geometry, config):
    return build_scene(ScenarioSpec(), speech, geometry, config)


@pytest.fixture(scope="session")
def point_estimates(point_scene, geometry, config):
    return estimate_scene(point_scene, geometry, config)


# --- acceptance reporting ---------------------------------------------------
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
