import logging
import math

import numpy as np
import pytest

from sim.analysis import (
    BOUND_COLUMNS,
    bound_chain,
    decay_time_from_period_loss,
    fit_exponential_decay,
    kappa,
    packet_averaged_transmission,
    recoil_energy,
    rect_transmission_analytic,
    secular_frequency,
    wkb_decay_rate,
    wkb_exponent,
)
from sim.errors import TurningPointError
from sim.grid import make_grid
from sim.ledger import EventLedger, bound_audit
from sim.measurement import BrightImaging
from sim.potentials import Composite, Harmonic, Rectangular, eval_potential


def test_bound_chain_closes_on_the_barrier_deficit(rng):
    for _ in range(100):
        v0 = rng.uniform(0.1, 10.0)
        e = rng.uniform(0.0, 0.99) * v0
        k = kappa(v0, e)
        report = bound_chain(v0, e, delta_l=rng.uniform(0.1, 1.0) / k)
        assert k ** 2 / 2 == pytest.approx(v0 - e, rel=1e-12)
        assert report.energy_uncertainty_floor == pytest.approx(v0 - e, rel=1e-12)
        assert report.resolution_ok and report.chain_holds
        assert report.photon_energy_spread >= report.barrier_deficit * (1 - 1e-12)

        model = BrightImaging(delta_l=report.delta_l, pulse_duration=report.dwell_time_limit)
        audit = bound_audit(EventLedger(), v0, e, model)
        assert audit.budget == pytest.approx(v0 - e, rel=1e-12)
        assert audit.n_events == 0 and audit.c is None


def test_bound_chain_flags_coarse_imaging():
    report = bound_chain(1.0, 0.5, delta_l=2.0)
    assert not report.resolution_ok
    assert not report.chain_holds
    assert list(report.to_row()) == BOUND_COLUMNS
    assert bound_chain(1.0, 0.5, 0.5, wavelength=2 * math.pi).recoil_ratio == pytest.approx(1.0)


@pytest.mark.parametrize("v0, e", [(1.0, 1.0), (1.0, 2.0), (1.0, -0.1)])
def test_kappa_rejects_non_tunneling_energies(v0, e):
    with pytest.raises(ValueError):
        kappa(v0, e)


def test_recoil_energy():
    assert recoil_energy(2 * math.pi) == pytest.approx(0.5)
    assert recoil_energy(1.0) == pytest.approx((2 * math.pi) ** 2 / 2)


def test_rectangular_transmission_values():
    assert rect_transmission_analytic(0.5, 1.0, 1.0) == pytest.approx(0.41997, abs=1e-5)
    at = rect_transmission_analytic(1.0, 1.0, 1.0)
    assert at == pytest.approx(2.0 / 3.0)
    assert rect_transmission_analytic(1.0 - 1e-7, 1.0, 1.0) == pytest.approx(at, rel=1e-5)
    assert rect_transmission_analytic(1.0 + 1e-7, 1.0, 1.0) == pytest.approx(at, rel=1e-5)
    table = rect_transmission_analytic(np.array([0.2, 0.5, 3.0]), 1.0, 1.0)
    assert table.shape == (3,)
    assert np.all((table > 0) & (table <= 1))
    assert rect_transmission_analytic(0.3, 0.0, 1.0) == 1.0


def test_tunneling_falls_with_barrier_height_and_width(rng):
    heights = np.linspace(0.55, 4.0, 40)
    widths = np.linspace(0.1, 5.0, 40)
    by_height = np.array([rect_transmission_analytic(0.5, v0, 1.0) for v0 in heights])
    by_width = np.array([rect_transmission_analytic(0.5, 1.0, d) for d in widths])
    assert np.all(np.diff(by_height) < 0)
    assert np.all(np.diff(by_width) < 0)

    for _ in range(100):
        e = rng.uniform(0.05, 2.0)
        v0 = e + rng.uniform(0.01, 3.0)
        d = rng.uniform(0.1, 4.0)
        base = rect_transmission_analytic(e, v0, d)
        assert rect_transmission_analytic(e, v0 * 1.1, d) < base
        assert rect_transmission_analytic(e, v0, d * 1.1) < base


def test_narrow_packet_average_is_the_plane_wave():
    p0 = 1.2
    assert packet_averaged_transmission(p0, 1e-4, 1.0, 1.0) == pytest.approx(
        rect_transmission_analytic(p0 ** 2 / 2, 1.0, 1.0), rel=1e-4
    )


@pytest.fixture
def leaky_trap():
    g = make_grid(-16.0, 48.0, 512)
    spec = Composite(parts=[
        Harmonic(omega=1.0, support=(-6.0, 1.5)),
        Rectangular(v0=2.387, width=1.0, center=2.0),
    ])
    return g, eval_potential(spec, g)


def test_wkb_action_through_the_leaky_wall(leaky_trap):
    g, V = leaky_trap
    left, right = wkb_exponent(V, g, 0.5, (-6.0, 1.5))
    assert left > 10.0
    assert 2 * right == pytest.approx(4.6, rel=0.05)

    omega = secular_frequency(V, g, (-6.0, 1.5), e=0.5)
    assert omega == pytest.approx(1.0, rel=1e-6)
    rate = wkb_decay_rate(V, g, 0.5, (-6.0, 1.5))
    loss = 1 - math.exp(-rate * 2 * math.pi / omega)
    assert 0.007 < loss < 0.014


def test_wkb_needs_an_exit(harmonic_grid, harmonic_V):
    with pytest.raises(TurningPointError):
        wkb_decay_rate(harmonic_V, harmonic_grid, 0.5, (-2.0, 2.0))
    assert wkb_exponent(harmonic_V, harmonic_grid, 0.5, (-2.0, 2.0)) == (None, None)
    with pytest.raises(TurningPointError):
        wkb_exponent(harmonic_V, harmonic_grid, -1.0, (-2.0, 2.0))


def test_wkb_above_the_barrier(leaky_trap):
    g, V = leaky_trap
    with pytest.raises(TurningPointError):
        wkb_exponent(V, g, 50.0, (-6.0, 1.5))


def test_secular_frequency_recovers_trap(harmonic_grid):
    V = eval_potential(Harmonic(omega=0.7), harmonic_grid)
    assert secular_frequency(V, harmonic_grid, (-3.0, 3.0)) == pytest.approx(0.7, rel=1e-9)
    with pytest.raises(TurningPointError):
        secular_frequency(-V, harmonic_grid, (-3.0, 3.0))


def test_fit_recovers_exact_exponential():
    t = np.linspace(0.0, 10.0, 40)
    fit = fit_exponential_decay(t, 0.8 * np.exp(-0.2 * t))
    assert fit.rate == pytest.approx(0.2, rel=1e-9)
    assert fit.amplitude == pytest.approx(0.8, rel=1e-9)
    assert fit.r_squared == pytest.approx(1.0)
    assert not fit.flagged
    assert fit.window[0] > 0.0
    assert fit.per_period_loss(1.0) == pytest.approx(1 - math.exp(-0.4 * math.pi))


def test_fit_flags_a_non_exponential_tail(caplog):
    t = np.linspace(0.0, 5.0, 50)
    p = 0.1 + 0.9 * np.exp(-3.0 * t)
    with caplog.at_level(logging.WARNING):
        fit = fit_exponential_decay(t, p)
    assert fit.flagged
    assert "low quality" in caplog.text

    early = fit_exponential_decay(t, p, window=(0.0, 0.5))
    assert not early.flagged
    assert early.window[0] == 0.0
    assert early.rate > 0


def test_fit_input_errors():
    t = np.linspace(0.0, 1.0, 7)
    with pytest.raises(ValueError):
        fit_exponential_decay(t, np.exp(-t))
    t = np.linspace(0.0, 1.0, 10)
    with pytest.raises(ValueError):
        fit_exponential_decay(t, np.full(10, 1.1))
    with pytest.raises(ValueError):
        fit_exponential_decay(t, np.exp(-t), window=(5.0, 6.0))


def test_decay_time_from_period_loss():
    assert decay_time_from_period_loss(0.01, 1.0) == pytest.approx(99.4992, rel=1e-5)
    with pytest.raises(ValueError):
        decay_time_from_period_loss(1.0, 1.0)
