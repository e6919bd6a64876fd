"""Measured scattering trajectories and the transmission-enhancement ensemble."""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from sim.errors import ConfigError, GridError, MeasurementError
from sim.grid import WaveFn
from sim.ledger import EventLedger
from sim.measurement import ContinuousBright, build_channel, measure
from sim.potentials import BarrierRegion
from sim.propagator import Propagator, PropagatorConfig, check_incident, propagate_through, scattering_run

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["T_measured", "stderr", "T_unitary", "enhancement", "ci_low", "ci_high", "n_traj"]


def trajectory_rng(seed: int, traj_id: int) -> np.random.Generator:
    """Independent stream for trajectory `traj_id`: SeedSequence(seed, spawn_key=(traj_id,))."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(traj_id,)))


@dataclass
class TrajectoryRecord:
    traj_id: int
    T: float
    R: float
    A: float
    ledger: EventLedger
    steps: int
    time: float
    state: Optional[WaveFn] = field(default=None, repr=False, compare=False)

    def to_row(self) -> dict:
        return {"traj_id": self.traj_id, "T": self.T, "R": self.R, "A": self.A, "n_events": len(self.ledger)}


def schedule_steps(schedule: Sequence[float], dt: float, n_steps: int) -> List[int]:
    """Step index at which each time in (0, n_steps*dt] is applied: the first step ending at or after it."""
    steps = []
    for t in schedule:
        s = max(1, math.ceil(t / dt - 1e-9))
        if t <= 0 or s > n_steps:
            raise MeasurementError(f"measurement time {t:g} lies outside the run (0, {n_steps * dt:g}]")
        steps.append(s)
    return steps


def trajectory_run(
    psi0: WaveFn,
    V: np.ndarray,
    model,
    schedule: Sequence[float],
    config: PropagatorConfig,
    region: BarrierRegion,
    seed: int,
    traj_id: int = 0,
    residual_tol: float = 1e-4,
    check_every: int = 100,
) -> TrajectoryRecord:
    """Scattering run interrupted by measurements at the scheduled times.

    ContinuousBright models draw their own Poisson event times from the
    trajectory stream and ignore `schedule`.
    """
    if config.absorber is None:
        raise ConfigError("trajectory runs need an absorber", key="absorber")
    if not region.inside(psi0.grid):
        raise GridError("barrier region lies outside the grid")
    check_incident(psi0, region)
    prop = Propagator(psi0.grid, V, config)
    rng = trajectory_rng(seed, traj_id)
    ledger = EventLedger()

    if model is None:
        times: Sequence[float] = []
    elif isinstance(model, ContinuousBright):
        times = model.event_times(config.n_steps * config.dt, rng)
    else:
        times = schedule
    counts = {}
    for s in schedule_steps(times, config.dt, config.n_steps):
        counts[s] = counts.get(s, 0) + 1

    channel = build_channel(psi0.grid, model) if counts else None

    def interrogate(amps, step):
        state = WaveFn(psi0.grid, amps)
        for _ in range(counts[step]):
            event, state = measure(
                state, channel, rng, V, region=region, time=step * config.dt, traj_id=traj_id, mass=config.mass
            )
            ledger.record(event)
        return state.amps

    events = {s: interrogate for s in counts}
    record = propagate_through(prop, psi0, region, config.n_steps, residual_tol, check_every, events=events)
    return TrajectoryRecord(
        traj_id=traj_id,
        T=record.T,
        R=record.R,
        A=record.A,
        ledger=ledger,
        steps=record.steps,
        time=record.time,
        state=record.state,
    )


@dataclass
class EnsembleSummary:
    T_measured: float
    stderr: float
    T_unitary: float
    enhancement: float
    ci_low: float
    ci_high: float
    n_traj: int
    records: List[TrajectoryRecord] = field(default_factory=list, repr=False)

    def to_row(self) -> dict:
        return {col: getattr(self, col) for col in SUMMARY_COLUMNS}

    @property
    def ledger(self) -> EventLedger:
        return EventLedger.merge(r.ledger for r in self.records)


def ensemble_transmission(
    psi0: WaveFn,
    V: np.ndarray,
    model,
    schedule: Sequence[float],
    config: PropagatorConfig,
    region: BarrierRegion,
    n_traj: int,
    seed: int,
    n_jobs: int = 1,
    residual_tol: float = 1e-4,
) -> EnsembleSummary:
    """Monte-Carlo transmission under measurement against the unitary baseline.

    The 95% interval on the enhancement is enhancement +- 1.96 stderr / T_unitary.
    """
    if n_traj < 2:
        raise ValueError("an ensemble needs at least two trajectories")
    if n_traj < 100:
        logger.warning("ensemble of %d trajectories is below the recommended 100", n_traj)

    unitary = scattering_run(psi0, V, region, config, residual_tol=residual_tol)
    records = Parallel(n_jobs=n_jobs)(
        delayed(trajectory_run)(psi0, V, model, schedule, config, region, seed, i, residual_tol)
        for i in range(n_traj)
    )
    T = np.array([r.T for r in records])
    mean = float(T.mean())
    stderr = float(T.std(ddof=1) / math.sqrt(n_traj))
    if unitary.T <= 0:
        raise MeasurementError("unitary transmission vanishes; enhancement undefined")
    enhancement = mean / unitary.T
    half = 1.96 * stderr / unitary.T
    logger.info("ensemble of %d: T=%.4g +- %.2g, unitary %.4g, enhancement %.3f", n_traj, mean, stderr, unitary.T, enhancement)
    return EnsembleSummary(
        T_measured=mean,
        stderr=stderr,
        T_unitary=unitary.T,
        enhancement=enhancement,
        ci_low=enhancement - half,
        ci_high=enhancement + half,
        n_traj=n_traj,
        records=list(records),
    )


def traversal_window(
    psi0: WaveFn,
    V: np.ndarray,
    region: BarrierRegion,
    config: PropagatorConfig,
    margin: Optional[float] = None,
    enter: float = 0.01,
    resolved: float = 0.99,
    check_every: int = 20,
) -> Tuple[float, float]:
    """Time span during which the packet interacts with the barrier in a unitary run.

    Starts when `enter` of the probability is within `margin` of the barrier's
    left edge (or beyond), ends once, after the peak of that overlap, a
    fraction `resolved` is farther than `margin` from the region or absorbed.
    """
    margin = region.width if margin is None else margin
    grid = psi0.grid
    near = (grid.x > region.x_left - margin) & (grid.x < region.x_right + margin)
    beyond = grid.x >= region.x_right + margin
    prop = Propagator(grid, V, config)
    amps = psi0.amps.copy()
    norm0 = float(np.sum(np.abs(amps) ** 2))
    absorbed = 0.0

    t_start = None
    peak, peak_seen = 0.0, False
    step = 0
    while step < config.n_steps:
        amps, al, ar = prop.advance(amps, check_every)
        absorbed += (al + ar) / grid.dx
        step += check_every
        rho = np.abs(amps) ** 2 / norm0
        p_near = float(rho[near].sum())
        p_arrived = p_near + float(rho[beyond].sum()) + absorbed / norm0
        t = step * config.dt
        if t_start is None:
            if p_arrived >= enter:
                t_start = t
            continue
        if p_near >= peak:
            peak = p_near
        elif p_near < 0.5 * peak:
            peak_seen = True
        if peak_seen and 1.0 - p_near >= resolved:
            return t_start, t
    raise MeasurementError("packet did not traverse the barrier within the step budget")


def traversal_schedule(window: Tuple[float, float], n_events: int = 3) -> List[float]:
    """n_events measurement times evenly spaced strictly inside the window."""
    if n_events < 1:
        raise ValueError("n_events must be positive")
    t0, t1 = window
    return [float(t) for t in np.linspace(t0, t1, n_events + 2)[1:-1]]
