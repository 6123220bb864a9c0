import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ccsoc.config import bundled_config, load_config
from ccsoc.dynamics import LtiSystem, VehicleState
from ccsoc.problem import Obstacle, ScenarioSpec, Separation, box_target

settings.register_profile("ccsoc", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ccsoc")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def gaussian_cfg():
    return load_config(bundled_config("gaussian_rendezvous"))


@pytest.fixture(scope="session")
def los_cfg():
    return load_config(bundled_config("los_rendezvous"))


@pytest.fixture(scope="session")
def gaussian_samples(gaussian_cfg):
    return gaussian_cfg.load_samples()


@pytest.fixture(scope="session")
def los_samples(los_cfg):
    return los_cfg.load_samples()


@pytest.fixture(scope="session")
def gaussian_solution(gaussian_cfg, gaussian_samples):
    from ccsoc.solver import solve_ccp

    return solve_ccp(gaussian_cfg.spec, gaussian_samples, gaussian_cfg.ccp)


def double_integrator(dt=1.0) -> LtiSystem:
    A = np.array([[1.0, 0.0, dt, 0.0], [0.0, 1.0, 0.0, dt], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
    B = np.array([[0.5 * dt**2, 0.0], [0.0, 0.5 * dt**2], [dt, 0.0], [0.0, dt]])
    return LtiSystem(A, B, dt)


def make_planar_spec():
    """Two planar vehicles swapping sides around a central obstacle."""
    sysm = double_integrator()
    S = np.hstack([np.eye(2), np.zeros((2, 2))])
    vehicles = (VehicleState(1, [-6.0, 0.5, 0.0, 0.0]), VehicleState(2, [6.0, -0.5, 0.0, 0.0]))
    targets = (box_target(1, 4, [6.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0, 1.0]),
               box_target(2, 4, [-6.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0, 1.0]))
    return ScenarioSpec(sysm, 4, vehicles, -3.0, 3.0, targets, (Obstacle(S, 1.0, np.zeros(4)),),
                        (Separation(S, 1.0),), 0.1, 0.1, 0.1)


@pytest.fixture
def planar_spec():
    return make_planar_spec()


def planar_samples(spec, n_samples=400, seed=3, scale=0.005):
    from ccsoc.sampling import synth_disturbances

    return [synth_disturbances("gaussian", {"scale": scale}, n_samples, seed, spec.N, spec.system.n, v.id)
            for v in spec.vehicles]
