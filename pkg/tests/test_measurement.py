import math

import numpy as np
import pytest

from sim.analysis import bound_chain
from sim.errors import MeasurementError
from sim.grid import WaveFn, gaussian_packet, make_grid, observables, random_state
from sim.ledger import AUDIT_COLUMNS, LEDGER_COLUMNS, EventLedger, MeasurementEvent, bound_audit
from sim.measurement import (
    BrightChannel,
    BrightImaging,
    ContinuousBright,
    DarkSpot,
    DarkSpotChannel,
    apply_bright,
    apply_dark_spot,
    build_channel,
    dark_mask,
    frequency_shift_estimate,
    kraus_set,
    measure,
)
from sim.potentials import BarrierRegion, Rectangular, eval_potential


@pytest.fixture
def grid():
    return make_grid(-32.0, 32.0, 512)


def test_kraus_family_is_complete(grid):
    family = kraus_set(grid, 0.5)
    np.testing.assert_allclose(family.completeness(), 1.0, atol=1e-12)
    assert family.ops.shape == (family.centers.size, grid.n)


def test_kraus_family_rejects_unresolved_or_gappy_windows(grid):
    with pytest.raises(MeasurementError, match="below 2 dx"):
        kraus_set(grid, grid.dx)
    with pytest.raises(MeasurementError, match="coverage gap"):
        kraus_set(grid, 0.5, centers=[-20.0, 20.0])
    with pytest.raises(MeasurementError):
        kraus_set(grid, 0.5, centers=[])


def test_outcome_probabilities_sum_to_one(grid, rng):
    for _ in range(50):
        psi = random_state(grid, rng, bandwidth=3.0)
        bright = BrightChannel(grid, rng.uniform(0.3, 2.0))
        lo = rng.uniform(-10.0, 5.0)
        dark = DarkSpotChannel(grid, BarrierRegion(x_left=lo, x_right=lo + rng.uniform(1.0, 5.0)))
        assert bright.probabilities(psi).sum() == pytest.approx(1.0, abs=1e-10)
        assert np.all(bright.probabilities(psi) >= 0)
        p = dark.probabilities(psi)
        assert p["null"] + p["flash"] == pytest.approx(1.0, abs=1e-10)


def test_subnormalised_states_keep_their_norm(grid, rng):
    psi = WaveFn(grid, 0.6 * random_state(grid, rng, bandwidth=2.0).amps)
    _, _, post = BrightChannel(grid, 0.5).sample(psi, rng)
    assert post.norm_sq() == pytest.approx(0.36, rel=1e-12)
    dark = DarkSpotChannel(grid, BarrierRegion(x_left=-2.0, x_right=2.0))
    for label in ("null", "flash"):
        assert dark.outcome(psi, label).norm_sq() == pytest.approx(0.36, rel=1e-12)


def test_bright_imaging_heats_by_one_over_eight_delta_l_squared():
    g = make_grid(-40.0, 40.0, 1024)
    V = np.zeros(g.n)
    psi = gaussian_packet(g, 0.0, 0.5, 3.0)
    e0 = observables(psi, V).total
    branches = BrightChannel(g, 1.0).branches(psi, min_probability=1e-14)
    mean_gain = sum(p * (observables(post, V).total - e0) for _, p, post in branches)
    assert mean_gain == pytest.approx(1.0 / 8.0, rel=1e-6)


def test_dark_spot_null_outcome_lifts_energy_over_the_barrier(grid, rng):
    # kappa d = 3 at e = 0.5
    barrier = Rectangular(v0=1.0, width=3.0)
    V = eval_potential(barrier, grid)
    channel = DarkSpotChannel(grid, BarrierRegion.from_rectangular(barrier))
    excess = []
    for _ in range(500):
        psi = random_state(grid, rng, bandwidth=2.0)
        post = channel.outcome(psi, "null")
        energy = observables(post, V).total
        assert energy > barrier.v0
        excess.append(energy - barrier.v0)
    assert np.mean(excess) >= 0.5 / (8 * barrier.width ** 2)


def test_smoothed_dark_mask(grid):
    region = BarrierRegion(x_left=-2.0, x_right=2.0)
    soft = dark_mask(grid, region, edge_width=0.3)
    assert np.all((soft >= 0) & (soft <= 1))
    assert soft[np.argmin(np.abs(grid.x))] == pytest.approx(1.0, abs=1e-9)
    assert soft[np.argmin(np.abs(grid.x + 2.0))] == pytest.approx(0.5, abs=1e-9)
    np.testing.assert_array_equal(dark_mask(grid, region), region.mask(grid).astype(float))


def test_measure_books_the_energy_change(grid, rng):
    barrier = Rectangular(v0=1.0, width=2.0)
    V = eval_potential(barrier, grid)
    region = BarrierRegion.from_rectangular(barrier)
    psi = gaussian_packet(grid, -1.0, 1.0, 2.0)
    event, post = measure(psi, BrightChannel(grid, 0.5), rng, V, region=region, time=3.0, traj_id=4)
    assert event.kind == "bright"
    assert event.time == 3.0 and event.traj_id == 4
    assert 0.0 < event.probability <= 1.0
    assert event.delta_e_atom == pytest.approx(observables(post, V).total - observables(psi, V).total)
    assert 0.0 <= event.post_in_barrier <= 1.0


def test_apply_helpers_check_the_model(grid, rng):
    V = np.zeros(grid.n)
    psi = gaussian_packet(grid, 0.0, 0.0, 2.0)
    dark = DarkSpot(region=BarrierRegion(x_left=-1.0, x_right=1.0), pulse_duration=1.0)
    bright = BrightImaging(delta_l=0.5, pulse_duration=1.0)
    with pytest.raises(MeasurementError):
        apply_bright(psi, dark, rng, V)
    with pytest.raises(MeasurementError):
        apply_dark_spot(psi, bright, rng, V)
    event, _ = apply_dark_spot(psi, dark, rng, V)
    assert event.kind == "dark_spot"
    assert event.outcome in ("null", "flash")
    assert event.in_barrier == (event.outcome == "null")
    assert isinstance(build_channel(grid, bright), BrightChannel)
    with pytest.raises(MeasurementError):
        build_channel(grid, object())


def test_continuous_imaging_draws_poisson_arrivals(rng):
    model = ContinuousBright(delta_l=0.5, rate=5.0)
    times = model.event_times(1000.0, rng)
    assert abs(len(times) - 5000) < 4 * math.sqrt(5000)
    assert times == sorted(times)
    windowed = ContinuousBright(delta_l=0.5, rate=5.0, window=(10.0, 20.0)).event_times(1000.0, rng)
    assert all(10.0 <= t < 20.0 for t in windowed)
    assert ContinuousBright(delta_l=0.5, rate=0.0).event_times(10.0, rng) == []


def test_frequency_shift_bookkeeping(rng):
    for _ in range(1000):
        eta = rng.uniform(1e-3, 1.0)
        t = rng.uniform(0.01, 100.0)
        shift = frequency_shift_estimate(eta, t)
        assert shift.per_photon_energy * shift.mean_photons == pytest.approx(shift.total_budget, rel=1e-12)
        assert shift.total_budget == pytest.approx(1.0 / t, rel=1e-12)
        assert shift.photons_needed >= 1.0 / eta - 1e-9

    report = bound_chain(2.0, 0.5, 0.5)
    assert frequency_shift_estimate(0.01, report.dwell_time_limit).total_budget == pytest.approx(1.5)

    for eta, t in [(0.0, 1.0), (1.5, 1.0), (0.5, 0.0)]:
        with pytest.raises(ValueError):
            frequency_shift_estimate(eta, t)


def _event(traj_id, time, gain, kind="bright", outcome=3, inside=0.0):
    return MeasurementEvent(
        time=time, kind=kind, outcome=outcome, probability=0.5,
        delta_e_atom=gain, post_in_barrier=inside, traj_id=traj_id,
    )


def test_event_validation():
    with pytest.raises(MeasurementError):
        MeasurementEvent(time=0.0, kind="bright", outcome=1, probability=0.0, delta_e_atom=0.1, post_in_barrier=0.0)
    with pytest.raises(MeasurementError):
        _event(0, 0.0, float("nan"))


def test_ledger_merge_and_frame():
    a = EventLedger([_event(1, 2.0, 0.1), _event(0, 5.0, 0.2)])
    b = EventLedger([_event(0, 1.0, -0.05, inside=0.9)])
    merged = EventLedger.merge([a, b])
    assert [(ev.traj_id, ev.time) for ev in merged] == [(0, 1.0), (0, 5.0), (1, 2.0)]
    assert EventLedger.merge([b, a]).events == merged.events
    assert merged.total_atom_gain == pytest.approx(0.25)
    assert merged.attributed_probe_loss == pytest.approx(-0.25)

    frame = merged.to_frame()
    assert list(frame.columns) == LEDGER_COLUMNS
    assert len(frame) == 3
    assert frame["outcome"].tolist() == ["3", "3", "3"]
    assert list(EventLedger().to_frame().columns) == LEDGER_COLUMNS


def test_bound_audit_counts_events_over_budget():
    ledger = EventLedger([
        _event(0, 1.0, 0.8, inside=0.9),
        _event(0, 2.0, 0.1),
        _event(1, 1.0, 0.3, kind="dark_spot", outcome="null"),
        _event(1, 2.0, 0.0, kind="dark_spot", outcome="flash"),
    ])
    audit = bound_audit(ledger, 1.0, 0.5, BrightImaging(delta_l=0.5, pulse_duration=2.0))
    assert audit.budget == pytest.approx(0.5)
    assert audit.budget_over_deficit == pytest.approx(1.0)
    assert audit.n_events == 4
    assert audit.n_in_barrier == 2
    assert audit.exceed_fraction == pytest.approx(0.25)
    assert audit.mean_gain_in_barrier == pytest.approx(0.55)
    assert audit.c == pytest.approx(1.1)
    assert list(audit.to_row()) == AUDIT_COLUMNS

    with pytest.raises(MeasurementError):
        bound_audit(ledger, 1.0, 0.5, ContinuousBright(delta_l=0.5, rate=1.0))


def _stationary_tunneling_state(grid, e, v0, width, envelope_sigma):
    """Plane-wave scattering solution off a barrier on [0, width] under a broad Gaussian envelope."""
    k, kap = math.sqrt(2 * e), math.sqrt(2 * (v0 - e))
    ed, eg, ek = math.exp(-kap * width), math.exp(kap * width), np.exp(1j * k * width)
    # unknowns r, A, B, t with psi = A e^{-kap x} + B e^{kap x} inside
    system = np.array([
        [-1, 1, 1, 0],
        [1j * k, -kap, kap, 0],
        [0, ed, eg, -ek],
        [0, -kap * ed, kap * eg, -1j * k * ek],
    ], dtype=complex)
    r, A, B, t = np.linalg.solve(system, np.array([1, 1j * k, 0, 0], dtype=complex))
    x = grid.x
    psi = np.where(
        x < 0, np.exp(1j * k * x) + r * np.exp(-1j * k * x),
        np.where(x <= width, A * np.exp(-kap * x) + B * np.exp(kap * x), t * np.exp(1j * k * x)),
    )
    envelope = np.exp(-((x - 0.5 * width) ** 2) / (4 * envelope_sigma ** 2))
    return WaveFn(grid, psi * envelope), 1 + r, kap, envelope


def test_dark_spot_null_probability_is_the_evanescent_tail(grid):
    # kappa d = 3 at e = 0.5
    barrier = Rectangular(v0=1.0, width=3.0, center=1.5)
    region = BarrierRegion.from_rectangular(barrier)
    psi, psi_entry, kap, envelope = _stationary_tunneling_state(grid, 0.5, 1.0, 3.0, envelope_sigma=12.0)

    inside = region.mask(grid)
    tail = np.abs(psi_entry) ** 2 * np.exp(-2 * kap * grid.x) * envelope ** 2
    expected = float(np.sum(tail[inside]) / np.sum(psi.density()))
    p_null = DarkSpotChannel(grid, region).probabilities(psi)["null"]
    assert p_null == pytest.approx(expected, rel=0.02)
    assert 0.0 < p_null < 0.1

    post = DarkSpotChannel(grid, region).outcome(psi, "null")
    assert observables(post, eval_potential(barrier, grid)).total > barrier.v0


def test_bright_outcome_inside_the_barrier_lands_above_it(grid):
    # delta_l = 0.5 / kappa with kappa = 1
    v0, e, width = 1.0, 0.5, 3.0
    barrier = Rectangular(v0=v0, width=width, center=0.0)
    V = eval_potential(barrier, grid)
    delta_l = 0.5 / math.sqrt(2 * (v0 - e))
    psi = gaussian_packet(grid, -4.0, math.sqrt(2 * e), 2.0)
    channel = BrightChannel(grid, delta_l)

    deep = [
        (j, post) for j, p, post in channel.branches(psi, min_probability=1e-12)
        if abs(channel.family.centers[j]) <= 0.5 * width - 2 * delta_l
    ]
    assert deep
    for _, post in deep:
        obs = observables(post, V)
        assert obs.total > v0
        assert obs.kinetic >= 1.0 / (8 * delta_l ** 2) - 1e-6


def test_bound_audit_at_the_reference_point(grid, rng):
    # v0 = 1, e = 0.5, delta_l = 0.5 / kappa and a pulse at the dwell-time limit
    v0, e = 1.0, 0.5
    barrier = Rectangular(v0=v0, width=2.0, center=0.0)
    region = BarrierRegion.from_rectangular(barrier)
    V = eval_potential(barrier, grid)
    model = BrightImaging(delta_l=0.5, pulse_duration=1.0 / (v0 - e))
    channel = build_channel(grid, model)
    psi = gaussian_packet(grid, -2.0, 1.0, 1.5)

    ledger = EventLedger()
    for i in range(400):
        event, _ = measure(psi, channel, rng, V, region=region, time=1.0, traj_id=i)
        ledger.record(event)
    audit = bound_audit(ledger, v0, e, model)
    assert audit.budget_over_deficit == pytest.approx(1.0)
    assert audit.n_in_barrier > 0
    assert 0.3 < audit.c < 10.0
