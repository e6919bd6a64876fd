import math

import numpy as np
import pytest

from sim.errors import GridError
from sim.grid import (
    WaveFn,
    gaussian_packet,
    kinetic_energy,
    make_grid,
    observables,
    position_spread,
    random_state,
    to_momentum,
    to_position,
)


def test_grid_arithmetic():
    g = make_grid(-1.0, 1.0, 16)
    assert g.dx == pytest.approx(0.125)
    assert g.x[0] == -1.0
    assert g.x[-1] == pytest.approx(0.875)
    assert g.k_max == pytest.approx(math.pi / 0.125)
    assert g.dk == pytest.approx(2.0 * math.pi / 2.0)


@pytest.mark.parametrize("n", [8, 15, 100])
def test_grid_rejects_bad_sizes(n):
    with pytest.raises(GridError):
        make_grid(-1.0, 1.0, n)


def test_grid_rejects_degenerate_extent():
    with pytest.raises(GridError):
        make_grid(1.0, 1.0, 64)


def test_grid_arrays_are_read_only():
    g = make_grid(-4.0, 4.0, 32)
    with pytest.raises(ValueError):
        g.x[0] = 3.0


def test_gaussian_packet_moments():
    g = make_grid(-40.0, 40.0, 512)
    psi = gaussian_packet(g, x0=-3.0, p0=1.5, sigma=2.0)
    obs = observables(psi, np.zeros(g.n))
    assert psi.norm_sq() == pytest.approx(1.0, abs=1e-12)
    assert obs.mean_x == pytest.approx(-3.0, abs=1e-10)
    assert obs.mean_p == pytest.approx(1.5, abs=1e-10)
    assert obs.kinetic == pytest.approx(1.5 ** 2 / 2 + 1.0 / (8 * 2.0 ** 2), rel=1e-9)
    assert position_spread(psi) == pytest.approx(2.0, rel=1e-9)


def test_gaussian_packet_resolution_and_clipping():
    g = make_grid(-10.0, 10.0, 64)
    with pytest.raises(GridError):
        gaussian_packet(g, 0.0, 0.0, sigma=2.0 * g.dx)
    with pytest.raises(GridError):
        gaussian_packet(g, 8.0, 0.0, sigma=1.0)


def test_transforms_preserve_norm_and_refuse_double_application(rng):
    g = make_grid(-20.0, 20.0, 256)
    psi = random_state(g, rng, bandwidth=4.0)
    phi = to_momentum(psi)
    assert phi.norm_sq() == pytest.approx(psi.norm_sq(), rel=1e-12)
    np.testing.assert_allclose(to_position(phi).amps, psi.amps, atol=1e-12)
    with pytest.raises(GridError):
        to_momentum(phi)
    with pytest.raises(GridError):
        to_position(psi)


def test_momentum_representation_of_packet_is_centered():
    g = make_grid(-40.0, 40.0, 512)
    phi = to_momentum(gaussian_packet(g, 5.0, 2.0, 2.0))
    k_peak = g.k[np.argmax(phi.density())]
    assert k_peak == pytest.approx(2.0, abs=g.dk)
    assert kinetic_energy(phi) == pytest.approx(2.0 + 1.0 / 32.0, rel=1e-9)


def test_probability_in_is_strict_interior():
    g = make_grid(-8.0, 8.0, 64)
    psi = WaveFn(g, np.ones(g.n)).normalized()
    # grid points at -1 and 1 are excluded
    inside = np.count_nonzero((g.x > -1.0) & (g.x < 1.0))
    assert psi.probability_in(-1.0, 1.0) == pytest.approx(inside / g.n)


def test_observables_keep_raw_norm():
    g = make_grid(-20.0, 20.0, 256)
    psi = gaussian_packet(g, 0.0, 0.0, 1.5)
    sub = WaveFn(g, 0.5 * psi.amps)
    obs = observables(sub, np.zeros(g.n))
    assert obs.norm == pytest.approx(0.5)
    assert obs.kinetic == pytest.approx(observables(psi, np.zeros(g.n)).kinetic)


def test_observables_reject_mismatched_potential():
    g = make_grid(-20.0, 20.0, 256)
    with pytest.raises(GridError):
        observables(gaussian_packet(g, 0.0, 0.0, 1.5), np.zeros(128))


def test_overlap_and_normalized():
    g = make_grid(-20.0, 20.0, 256)
    a = gaussian_packet(g, 0.0, 0.0, 1.5)
    assert abs(a.overlap(a)) == pytest.approx(1.0)
    with pytest.raises(GridError):
        WaveFn(g, np.zeros(g.n)).normalized()
