"""Shared fixtures and helpers for the test suite."""

import numpy as np
import pytest

from obsplan.dynamics import default_params, hover_control
from obsplan.geometry import PlantState, TimeGrid, random_rotation
from obsplan.objectives import Scenario
from obsplan.sensing import OrthographicSensor, finite_field, forward_camera


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def random_state(rng, speed=0.1, rate=0.3) -> PlantState:
    """Start state with a nonzero body rate (keeps depth observable)."""
    v = rng.normal(size=3)
    v *= speed / max(np.linalg.norm(v), 1e-12)
    w = rng.normal(size=3)
    w *= rate / max(np.linalg.norm(w), 1e-12)
    return PlantState(p=rng.normal(scale=0.05, size=3), v=v,
                      R=np.eye(3), omega=w)


def random_landmarks(rng, n, center=(1.5, 0.0, 0.0),
                     half=(0.75, 0.75, 0.5)):
    return np.asarray(center) + rng.uniform(-1, 1, size=(n, 3)) * np.asarray(half)


def small_scenario(seed=0, n_landmarks=8, K=3, Kbar=2, dt=0.02) -> Scenario:
    rng = np.random.default_rng(seed)
    params = default_params()
    sensor = OrthographicSensor(forward_camera())
    grid = TimeGrid(dt=dt, K=K, Kbar=Kbar)
    lms = random_landmarks(rng, n_landmarks)
    x0 = random_state(rng)
    g = rng.normal(size=3)
    g *= 0.3 / max(np.linalg.norm(g), 1e-12)
    return Scenario(params=params, sensor=sensor, grid=grid,
                    field=finite_field(lms), x0=x0, p_goal=g)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def params():
    return default_params()


@pytest.fixture
def sensor():
    return OrthographicSensor(forward_camera())
