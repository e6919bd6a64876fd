import numpy as np
import pytest

from sim.grid import gaussian_packet, make_grid
from sim.potentials import BarrierRegion, Harmonic, Rectangular, eval_potential
from sim.propagator import AbsorberConfig, PropagatorConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def harmonic_grid():
    return make_grid(-10.0, 10.0, 128)


@pytest.fixture
def harmonic_V(harmonic_grid):
    return eval_potential(Harmonic(omega=1.0), harmonic_grid)


@pytest.fixture
def small_scatter():
    """Fast rectangular-barrier setup shared by trajectory and harness tests."""
    grid = make_grid(-32.0, 32.0, 256)
    barrier = Rectangular(v0=1.0, width=2.0, center=0.0)
    V = eval_potential(barrier, grid)
    region = BarrierRegion.from_rectangular(barrier)
    packet = gaussian_packet(grid, -14.0, 1.2, 2.0)
    config = PropagatorConfig(dt=0.005, n_steps=12000, absorber=AbsorberConfig(width=8.0, strength=3.0))
    return grid, V, region, packet, config


SMALL_ENSEMBLE_TOML = """
name = "small-ensemble"
seed = 99

[grid]
x_min = -32
x_max = 32
n = 256

[potential]
kind = "rectangular"
v0 = 1.0
width = 2.0

[initial]
kind = "gaussian"
x0 = -14
p0 = 1.2
sigma = 2

[propagator]
dt = 0.005
n_steps = 12000
absorber = { width = 8, strength = 3 }

[measure_ensemble]
n_traj = 2
n_events = 2
model = { kind = "bright", delta_l = 0.5, pulse_duration = 2.0 }
"""


@pytest.fixture
def small_ensemble_toml():
    return SMALL_ENSEMBLE_TOML
