"""Protocol execution: one config in, CSVs and a manifest out."""
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from harness.schema import ExperimentConfig, GaussianInitial, config_hash
from harness.settings import settings
from harness.storage import RunStorage
from sim.analysis import (
    BOUND_COLUMNS,
    DECAY_COLUMNS,
    bound_chain,
    fit_exponential_decay,
    packet_averaged_transmission,
    rect_transmission_analytic,
    secular_frequency,
    wkb_decay_rate,
)
from sim.cooling import ClassicalEnsemble, kick_cool, segment_potential, thermal_sweep, velocity_select_sweep
from sim.errors import SimulationError
from sim.grid import gaussian_packet, observables, position_spread
from sim.ledger import AUDIT_COLUMNS, LEDGER_COLUMNS, bound_audit
from sim.measurement import frequency_shift_estimate
from sim.potentials import eval_potential
from sim.propagator import (
    HISTORY_COLUMNS,
    SCAN_COLUMNS,
    Propagator,
    barrier_geometry,
    imaginary_time_ground,
    lowest_states,
    scattering_run,
    transmission_scan,
)
from sim.trajectories import SUMMARY_COLUMNS, ensemble_transmission, traversal_schedule, traversal_window

logger = logging.getLogger(__name__)


@dataclass
class RunManifest:
    config_hash: str
    version: str
    name: str
    protocol: str
    seed: Optional[int]
    wall_clock_s: float
    summary: Dict[str, object] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def summary_line(self) -> str:
        parts = [f"{k}={_fmt(v)}" for k, v in self.summary.items()]
        return f"{self.name} [{self.protocol}] " + " ".join(parts)


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.4g}"
    return str(value)


def _packet(config: ExperimentConfig, grid):
    init = config.initial
    return gaussian_packet(grid, init.x0, init.p0, init.sigma)


def _run_ground(config: ExperimentConfig, storage: RunStorage, n_jobs: int) -> dict:
    grid = config.build_grid()
    mass = config.propagator.mass if config.propagator else 1.0
    V = config.potential_array(grid)
    proto = config.ground
    result = imaginary_time_ground(V, grid, tol=proto.tol, mass=mass)
    obs = observables(result.state, V, mass=mass)
    units = config.unit_system()

    row = {
        "energy": result.energy,
        "energy_K": units.energy_to_temperature(result.energy),
        "residual": result.residual,
        "steps": result.steps,
        "dtau": result.dtau,
        "polished": result.polished,
        "mean_x": obs.mean_x,
        "spread": position_spread(result.state),
        "kinetic": obs.kinetic,
        "potential": obs.potential,
    }
    storage.write_rows("ground.csv", [row], list(row))
    storage.write_csv("density.csv", pd.DataFrame({"x": grid.x, "V": V, "density": result.state.density()}))
    if proto.n_states > 1:
        energies, _ = lowest_states(V, grid, proto.n_states, mass=mass)
        storage.write_csv("spectrum.csv", pd.DataFrame({"state": np.arange(proto.n_states), "energy": energies}))
    return {"energy": result.energy, "residual": result.residual, "polished": result.polished}


def _run_scatter(config: ExperimentConfig, storage: RunStorage, n_jobs: int) -> dict:
    grid = config.build_grid()
    prop = config.propagator
    proto = config.scatter
    init = config.initial

    if proto.momenta:
        table = transmission_scan(proto.momenta, config.potential, grid, prop, init.sigma, x0=init.x0, n_jobs=n_jobs)
        storage.write_csv("transmission.csv", table, SCAN_COLUMNS)
        rel = (table["T_numeric"] - table["T_packet"]).abs() / table["T_packet"]
        return {"points": len(table), "max_rel_dev_packet": float(rel.max())}

    V = config.potential_array(grid)
    region = config.region()
    packet = _packet(config, grid)
    writer = storage.snapshots(grid) if config.output.snapshots else None
    try:
        record = scattering_run(
            packet, V, region, prop,
            residual_tol=proto.residual_tol,
            record_every=proto.record_every,
            observer=writer,
        )
    finally:
        if writer is not None:
            writer.close()

    height, width, _ = barrier_geometry(config.potential, grid, prop.mass)
    energy = observables(packet, V, mass=prop.mass).total
    row = record.summary()
    row.update({
        "energy": energy,
        "T_analytic": float(rect_transmission_analytic(energy, height, width, mass=prop.mass)),
        "T_packet": packet_averaged_transmission(init.p0, 1.0 / (2.0 * init.sigma), height, width, mass=prop.mass),
    })
    storage.write_rows("scatter.csv", [row], list(row))
    storage.write_csv("history.csv", record.history, HISTORY_COLUMNS)
    return {"T": record.T, "R": record.R, "A": record.A, "T_packet": row["T_packet"]}


def _run_decay(config: ExperimentConfig, storage: RunStorage, n_jobs: int) -> dict:
    grid = config.build_grid()
    prop_config = config.propagator
    proto = config.decay
    trap, barrier = proto.trap_region, proto.barrier
    V = config.potential_array(grid)

    # closed trap: everything outside (trap left edge, barrier left edge) raised to the barrier top
    top = float(V[barrier.mask(grid)].max())
    allowed = (grid.x > trap.x_left) & (grid.x < barrier.x_left)
    closed = np.where(allowed, V, np.maximum(V, top))
    ground = imaginary_time_ground(closed, grid, tol=1e-8, mass=prop_config.mass)

    every = max(1, int(round(proto.sample_every / prop_config.dt)))
    n_samples = int(round(proto.duration / prop_config.dt)) // every
    prop = Propagator(grid, V, prop_config)
    amps = ground.state.amps.copy()
    writer = storage.snapshots(grid) if config.output.snapshots else None
    rows = []
    try:
        for i in range(n_samples + 1):
            if i > 0:
                amps, _, _ = prop.advance(amps, every)
            rho = np.abs(amps) ** 2 * grid.dx
            rows.append({
                "time": i * every * prop_config.dt,
                "survival": min(float(rho[trap.mask(grid)].sum()), 1.0),
                "norm": float(rho.sum()),
            })
            if writer is not None:
                writer.write(amps)
    finally:
        if writer is not None:
            writer.close()
    survival = pd.DataFrame(rows, columns=["time", "survival", "norm"])
    storage.write_csv("survival.csv", survival)

    fit = fit_exponential_decay(survival["time"], survival["survival"], skip_fraction=proto.skip_fraction)
    omega = secular_frequency(V, grid, trap, mass=prop_config.mass, e=ground.energy)
    wkb = wkb_decay_rate(V, grid, ground.energy, trap, mass=prop_config.mass, omega=omega)
    row = fit.to_row()
    row.update({
        "energy": ground.energy,
        "omega": omega,
        "wkb_rate": wkb,
        "rate_over_wkb": fit.rate / wkb,
        "per_period_loss": fit.per_period_loss(omega),
        "wkb_per_period_loss": 1.0 - math.exp(-wkb * 2.0 * math.pi / omega),
    })
    storage.write_rows("decay_fit.csv", [row], DECAY_COLUMNS + [c for c in row if c not in DECAY_COLUMNS])
    return {
        "rate": fit.rate,
        "r_squared": fit.r_squared,
        "wkb_rate": wkb,
        "per_period_loss": row["per_period_loss"],
    }


def _run_kick_cool(config: ExperimentConfig, storage: RunStorage, n_jobs: int) -> dict:
    proto = config.kick_cool
    units = config.unit_system()
    rng = np.random.default_rng(config.seed)
    ens = ClassicalEnsemble.gaussian(
        proto.n_particles, proto.sigma_x, math.sqrt(proto.temperature), rng, exact_moments=proto.exact_moments
    )
    report = kick_cool(ens, proto.t_free, strength=proto.strength)
    row = report.to_row()
    row["temperature_initial_K"] = units.energy_to_temperature(report.temperature_initial)
    row["temperature_final_K"] = units.energy_to_temperature(report.temperature_final)
    storage.write_rows("kick_cool.csv", [row], list(row))
    return {
        "ratio": report.ratio,
        "predicted_ratio": report.predicted_ratio,
        "temperature_final_K": row["temperature_final_K"],
    }


def _run_sweep_select(config: ExperimentConfig, storage: RunStorage, n_jobs: int) -> dict:
    grid = config.build_grid()
    prop = config.propagator
    proto = config.sweep_select
    if isinstance(config.initial, GaussianInitial):
        psi = _packet(config, grid)
    else:
        base = eval_potential(config.potential, grid, mass=prop.mass, antigravity=config.antigravity)
        first = segment_potential(base, grid, proto.segments[0] if proto.segments else None)
        psi = imaginary_time_ground(first, grid, mass=prop.mass).state

    result = velocity_select_sweep(psi, config.potential, proto.segments, prop, proto.aux_region, config.antigravity)
    row = result.to_row()
    storage.write_rows("sweep.csv", [row], list(row))
    summary = {"transferred": result.transferred, "ground_fraction": result.ground_fraction}

    if proto.thermal is not None:
        thermal = thermal_sweep(
            config.potential,
            proto.segments,
            grid,
            prop,
            proto.aux_region,
            proto.thermal.temperature,
            np.random.default_rng(config.seed),
            n_states=proto.thermal.n_states,
            n_samples=proto.thermal.n_samples,
            n_jobs=n_jobs,
            antigravity=config.antigravity,
        )
        storage.write_csv("thermal.csv", thermal.per_state)
        thermal_row = thermal.to_row()
        storage.write_rows("thermal_summary.csv", [thermal_row], list(thermal_row))
        summary.update({
            "thermal_mean": thermal.transferred_mean,
            "thermal_stderr": thermal.transferred_stderr,
            "thermal_exact": thermal.transferred_exact,
            "thermal_ground_fraction": thermal.ground_fraction_exact,
            "thermal_truncated_weight": thermal.truncated_weight,
        })
    return summary


def _run_measure_ensemble(config: ExperimentConfig, storage: RunStorage, n_jobs: int) -> dict:
    grid = config.build_grid()
    prop = config.propagator
    proto = config.measure_ensemble
    V = config.potential_array(grid)
    region = config.region()
    packet = _packet(config, grid)

    schedule = proto.schedule
    if schedule is None:
        window = traversal_window(packet, V, region, prop, margin=proto.margin)
        schedule = traversal_schedule(window, proto.n_events)
        logger.info("traversal window [%.4g, %.4g]; measuring at %s", window[0], window[1], schedule)

    result = ensemble_transmission(
        packet, V, proto.model, schedule, prop, region, proto.n_traj, config.seed,
        n_jobs=n_jobs, residual_tol=proto.residual_tol,
    )
    ledger = result.ledger
    storage.write_rows("ensemble.csv", [result.to_row()], SUMMARY_COLUMNS)
    storage.write_csv("ledger.csv", ledger.to_frame(), LEDGER_COLUMNS)
    storage.write_rows("trajectories.csv", [r.to_row() for r in result.records], ["traj_id", "T", "R", "A", "n_events"])

    in_barrier = [ev for ev in ledger if ev.in_barrier]
    summary = {
        "enhancement": result.enhancement,
        "ci_low": result.ci_low,
        "ci_high": result.ci_high,
        "n_events": len(ledger),
        "n_in_barrier": len(in_barrier),
    }
    if in_barrier:
        summary["mean_gain_in_barrier"] = float(np.mean([ev.delta_e_atom for ev in in_barrier]))

    height, _, _ = barrier_geometry(config.potential, grid, prop.mass)
    energy = observables(packet, V, mass=prop.mass).total
    if getattr(proto.model, "pulse_duration", None) and height > energy:
        audit = bound_audit(ledger, height, energy, proto.model)
        storage.write_rows("audit.csv", [audit.to_row()], AUDIT_COLUMNS)
        summary["budget_over_deficit"] = audit.budget_over_deficit
    return summary


def _run_bounds(config: ExperimentConfig, storage: RunStorage, n_jobs: int) -> dict:
    proto = config.bounds
    reports = [bound_chain(proto.v0, proto.e, dl, wavelength=proto.wavelength) for dl in proto.delta_l]
    storage.write_rows("bounds.csv", [r.to_row() for r in reports], BOUND_COLUMNS)

    t_limit = reports[0].dwell_time_limit
    shift = frequency_shift_estimate(proto.eta, t_limit)
    row = {"t": t_limit, "eta": proto.eta}
    row.update(shift.to_row())
    storage.write_rows("frequency_shift.csv", [row], list(row))
    return {
        "kappa": reports[0].kappa,
        "barrier_deficit": proto.v0 - proto.e,
        "total_budget": shift.total_budget,
        "chain_holds": all(r.chain_holds for r in reports if r.resolution_ok),
    }


PROTOCOL_RUNNERS: Dict[str, Callable[[ExperimentConfig, RunStorage, int], dict]] = {
    "ground": _run_ground,
    "scatter": _run_scatter,
    "decay": _run_decay,
    "kick_cool": _run_kick_cool,
    "sweep_select": _run_sweep_select,
    "measure_ensemble": _run_measure_ensemble,
    "bounds": _run_bounds,
}


def run(config: ExperimentConfig, out_dir: Optional[str] = None, n_jobs: Optional[int] = None) -> RunManifest:
    """Execute the config's protocol and write its CSVs plus manifest.json."""
    out_dir = out_dir or config.output.dir or os.path.join(settings.OUTPUT_DIR, config.name)
    n_jobs = n_jobs or settings.THREADS
    storage = RunStorage(out_dir)
    protocol = config.protocol
    logger.info("running '%s' (%s) into %s with %d worker(s)", config.name, protocol, out_dir, n_jobs)

    start = time.perf_counter()
    try:
        summary = PROTOCOL_RUNNERS[protocol](config, storage, n_jobs)
    except (SimulationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        logger.error("run '%s' (%s) failed: %s", config.name, protocol, exc)
        raise

    manifest = RunManifest(
        config_hash=config_hash(config),
        version=settings.VERSION,
        name=config.name,
        protocol=protocol,
        seed=config.seed,
        wall_clock_s=round(time.perf_counter() - start, 3),
        summary=summary,
        outputs=list(storage.outputs),
    )
    storage.write_manifest(manifest.to_dict())
    return manifest
