"""Split-operator time evolution, absorbing edges and ground-state relaxation."""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field
from scipy import linalg
from scipy.sparse.linalg import LinearOperator, eigsh
from typing_extensions import Literal

from sim.analysis import packet_averaged_transmission, rect_transmission_analytic
from sim.errors import ConfigError, ConvergenceError, GridError, IncidenceError, StabilityError
from sim.grid import POSITION, Grid1D, WaveFn, gaussian_packet
from sim.potentials import BarrierRegion, Rectangular, equivalent_rectangle, eval_potential
from sim.units import Length, Time

logger = logging.getLogger(__name__)

STABILITY_LIMIT = 0.5
DENSE_LIMIT = 2048


class AbsorberConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    width: Length = Field(..., gt=0)
    strength: float = Field(..., gt=0, description="Damping rate at the outer edge")


class PropagatorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    dt: Time = Field(..., gt=0)
    n_steps: int = Field(10000, ge=0, description="Step budget")
    absorber: Optional[AbsorberConfig] = None
    mass: float = Field(1.0, gt=0)
    scheme: Literal["strang"] = "strang"


def check_stability(V: np.ndarray, grid: Grid1D, dt: float, mass: float = 1.0):
    v_max = float(np.max(np.abs(V)))
    t_max = grid.k_max ** 2 / (2.0 * mass)
    worst = max(v_max, t_max)
    if dt * worst >= STABILITY_LIMIT:
        suggested = 0.9 * STABILITY_LIMIT / worst
        raise StabilityError(
            f"dt={dt:g} violates the stability guard (dt*max V={dt * v_max:.3g}, "
            f"dt*max T={dt * t_max:.3g}); try dt <= {suggested:.3g}",
            suggested_dt=suggested,
        )


def make_absorber(grid: Grid1D, width: float, strength: float, dt: float) -> np.ndarray:
    """Per-step damping mask exp(-strength dt sin^2(pi s / 2)) on both edges.

    s runs from 0 at the inner end of each ramp to 1 on the outermost grid point.
    """
    if width < 8.0 * grid.dx:
        raise GridError(f"absorber width {width:g} is below 8 dx = {8 * grid.dx:g}")
    if width > 0.25 * grid.length:
        raise GridError(f"absorber width {width:g} exceeds a quarter of the grid")
    x = grid.x
    from_left = x - x[0]
    from_right = x[-1] - x
    s = np.clip(1.0 - np.minimum(from_left, from_right) / width, 0.0, 1.0)
    return np.exp(-strength * dt * np.sin(0.5 * np.pi * s) ** 2)


class Propagator:
    """Strang stepping exp(-iV dt/2) exp(-iT dt) exp(-iV dt/2) with cached exponentials."""

    def __init__(self, grid: Grid1D, V: np.ndarray, config: PropagatorConfig, hbar: float = 1.0):
        V = np.asarray(V, dtype=float)
        if V.shape != (grid.n,):
            raise GridError(f"potential has shape {V.shape}, grid has {grid.n} points")
        check_stability(V, grid, config.dt, config.mass)
        self.grid = grid
        self.V = V
        self.config = config
        self.dt = config.dt
        self.half_v = np.exp(-0.5j * V * config.dt / hbar)
        self.kinetic = np.exp(-0.5j * hbar * grid.k ** 2 / config.mass * config.dt)
        self.mask = None
        if config.absorber is not None:
            self.mask = make_absorber(grid, config.absorber.width, config.absorber.strength, config.dt)
            self._loss = 1.0 - self.mask ** 2
            self._left = grid.x < 0.5 * (grid.x[0] + grid.x[-1])

    def step(self, amps: np.ndarray):
        """One step in place-free form; returns (amps, absorbed_left, absorbed_right)."""
        amps = self.half_v * np.fft.ifft(self.kinetic * np.fft.fft(self.half_v * amps))
        if self.mask is None:
            return amps, 0.0, 0.0
        lost = np.abs(amps) ** 2 * self._loss * self.grid.dx
        amps = amps * self.mask
        return amps, float(lost[self._left].sum()), float(lost[~self._left].sum())

    def advance(self, amps: np.ndarray, n_steps: int):
        left = right = 0.0
        for _ in range(n_steps):
            amps, al, ar = self.step(amps)
            left += al
            right += ar
        return amps, left, right


@dataclass
class Evolution:
    state: WaveFn
    absorbed_left: float
    absorbed_right: float
    steps: int
    time: float

    @property
    def absorbed(self) -> float:
        return self.absorbed_left + self.absorbed_right


def split_step(psi: WaveFn, V: np.ndarray, config: PropagatorConfig, n_steps: Optional[int] = None) -> Evolution:
    if psi.representation != POSITION:
        raise GridError("split_step expects a position-representation state")
    prop = Propagator(psi.grid, V, config)
    steps = config.n_steps if n_steps is None else n_steps
    amps, left, right = prop.advance(psi.amps.copy(), steps)
    return Evolution(WaveFn(psi.grid, amps), left, right, steps, steps * config.dt)


def apply_hamiltonian(amps: np.ndarray, V: np.ndarray, grid: Grid1D, mass: float = 1.0) -> np.ndarray:
    return np.fft.ifft(grid.k ** 2 / (2.0 * mass) * np.fft.fft(amps)) + V * amps


def _rayleigh(amps, V, grid, mass):
    h_amps = apply_hamiltonian(amps, V, grid, mass)
    nrm2 = np.vdot(amps, amps).real
    energy = np.vdot(amps, h_amps).real / nrm2
    residual = np.linalg.norm(h_amps - energy * amps) / math.sqrt(nrm2)
    return energy, float(residual)


def hamiltonian_matrix(V: np.ndarray, grid: Grid1D, mass: float = 1.0) -> np.ndarray:
    """Dense spectral Hamiltonian; the kinetic part is circulant."""
    column = np.fft.ifft(grid.k ** 2 / (2.0 * mass)).real
    return linalg.circulant(column) + np.diag(np.asarray(V, dtype=float))


def lowest_states(V: np.ndarray, grid: Grid1D, n_states: int = 1, mass: float = 1.0):
    """Lowest eigenpairs of the grid Hamiltonian as (energies, [WaveFn])."""
    V = np.asarray(V, dtype=float)
    if grid.n <= DENSE_LIMIT:
        energies, vecs = linalg.eigh(hamiltonian_matrix(V, grid, mass), subset_by_index=[0, n_states - 1])
    else:
        op = LinearOperator(
            (grid.n, grid.n), matvec=lambda v: apply_hamiltonian(v, V, grid, mass), dtype=np.complex128
        )
        energies, vecs = eigsh(op, k=n_states, which="SA")
        order = np.argsort(energies)
        energies, vecs = energies[order], vecs[:, order]
    states = [WaveFn(grid, vecs[:, i] / math.sqrt(grid.dx)).normalized() for i in range(n_states)]
    return np.asarray(energies, dtype=float), states


@dataclass
class GroundStateResult:
    energy: float
    state: WaveFn
    residual: float
    steps: int = 0
    dtau: float = 0.0
    polished: bool = False


def _polish(amps, V, grid, mass):
    if grid.n <= DENSE_LIMIT:
        _, vecs = linalg.eigh(hamiltonian_matrix(V, grid, mass), subset_by_index=[0, 0])
        vec = vecs[:, 0].astype(np.complex128)
    else:
        op = LinearOperator(
            (grid.n, grid.n), matvec=lambda v: apply_hamiltonian(v, V, grid, mass), dtype=np.complex128
        )
        _, vecs = eigsh(op, k=1, which="SA", v0=amps, tol=0)
        vec = vecs[:, 0]
    overlap = np.vdot(vec, amps)
    if abs(overlap) > 0:
        vec = vec * overlap / abs(overlap)
    return vec / np.linalg.norm(vec)


def imaginary_time_ground(
    V: np.ndarray,
    grid: Grid1D,
    tol: float = 1e-8,
    mass: float = 1.0,
    dtau: float = 0.05,
    max_steps: int = 200000,
    check_every: int = 50,
    min_dtau: float = 1e-4,
    initial: Optional[WaveFn] = None,
    polish: bool = True,
) -> GroundStateResult:
    """Relax toward the ground state with renormalised imaginary-time Strang steps.

    dtau is halved whenever the residual stalls; once it drops below `min_dtau`
    (or the step budget runs out) the state seeds an exact eigensolver polish.
    """
    if tol < 1e-12:
        raise ValueError("tolerance below 1e-12 is not attainable")
    V = np.asarray(V, dtype=float)
    if V.shape != (grid.n,):
        raise GridError(f"potential has shape {V.shape}, grid has {grid.n} points")

    if initial is not None:
        amps = initial.amps.astype(np.complex128)
    else:
        amps = np.exp(-0.5 * (V - V.min()).clip(max=50.0)).astype(np.complex128)
    amps = amps / np.linalg.norm(amps)

    v_shift = V - V.min()

    def factors(tau):
        return np.exp(-0.5 * v_shift * tau), np.exp(-0.5 * grid.k ** 2 / mass * tau)

    half_v, kin = factors(dtau)
    best, last = math.inf, math.inf
    steps = 0
    while steps < max_steps:
        for _ in range(check_every):
            amps = half_v * np.fft.ifft(kin * np.fft.fft(half_v * amps))
            amps /= np.linalg.norm(amps)
        steps += check_every
        energy, residual = _rayleigh(amps, V, grid, mass)
        best = min(best, residual)
        if residual <= tol:
            state = WaveFn(grid, amps / math.sqrt(grid.dx))
            return GroundStateResult(energy, state, residual, steps, dtau, False)
        if residual > 0.99 * last:
            dtau *= 0.5
            if dtau < min_dtau:
                break
            half_v, kin = factors(dtau)
            logger.debug("imaginary time stalled at residual %.3e; dtau -> %.3g", residual, dtau)
        last = residual

    if polish:
        amps = _polish(amps, V, grid, mass)
        energy, residual = _rayleigh(amps, V, grid, mass)
        best = min(best, residual)
        if residual <= tol:
            state = WaveFn(grid, amps / math.sqrt(grid.dx))
            return GroundStateResult(energy, state, residual, steps, dtau, True)
    raise ConvergenceError(f"ground state not converged to {tol:g} after {steps} steps", best)


@dataclass
class ScatteringRecord:
    T: float
    R: float
    A: float
    absorbed_left: float
    absorbed_right: float
    steps: int
    time: float
    history: pd.DataFrame = field(repr=False)
    state: Optional[WaveFn] = field(default=None, repr=False)

    def summary(self) -> dict:
        return {
            "T": self.T,
            "R": self.R,
            "A": self.A,
            "absorbed_left": self.absorbed_left,
            "absorbed_right": self.absorbed_right,
            "steps": self.steps,
            "time": self.time,
        }


SCAN_COLUMNS = ["p0", "energy", "T_numeric", "R_numeric", "A_numeric", "T_analytic", "T_packet"]
HISTORY_COLUMNS = ["time", "norm_sq", "left", "inside", "right", "absorbed_left", "absorbed_right"]


def check_incident(packet: WaveFn, region: BarrierRegion, tolerance: float = 1e-6):
    overlap = packet.probability_in(region.x_left, region.x_right)
    if overlap > tolerance:
        raise IncidenceError(f"packet overlaps the barrier region with probability {overlap:.3e}")
    x = packet.grid.x
    rho = packet.density()
    if np.sum(rho[x >= region.x_right]) > np.sum(rho[x <= region.x_left]):
        raise IncidenceError("packet does not start on the left of the barrier region")
    phi = np.fft.fft(packet.amps)
    mean_p = float(np.sum(packet.grid.k * np.abs(phi) ** 2) / np.sum(np.abs(phi) ** 2))
    if mean_p <= 0:
        raise IncidenceError(f"packet mean momentum {mean_p:.3g} is not positive")


def propagate_through(
    prop: Propagator,
    packet: WaveFn,
    region: BarrierRegion,
    n_steps: int,
    residual_tol: float = 1e-4,
    check_every: int = 100,
    record_every: Optional[int] = None,
    events: Optional[Dict[int, Callable[[np.ndarray, int], np.ndarray]]] = None,
    observer: Optional[Callable[[int, np.ndarray], None]] = None,
) -> ScatteringRecord:
    """Step until the interior probability drops below residual_tol or the budget ends.

    `events` maps a step index to a callback applied to the amplitudes right
    after that step; the run never stops while callbacks are pending.
    `observer` sees the amplitudes at every recorded step.
    """
    grid = packet.grid
    x = grid.x
    left_of = x <= region.x_left
    right_of = x >= region.x_right
    inside = ~left_of & ~right_of
    events = dict(events or {})
    record_every = record_every or check_every

    amps = packet.amps.copy()
    norm0 = float(np.sum(np.abs(amps) ** 2) * grid.dx)
    abs_left = abs_right = 0.0
    rows: List[list] = []

    def record(step):
        rho = np.abs(amps) ** 2 * grid.dx
        rows.append([
            step * prop.dt, float(rho.sum()), float(rho[left_of].sum()), float(rho[inside].sum()),
            float(rho[right_of].sum()), abs_left, abs_right,
        ])
        if observer is not None:
            observer(step, amps)

    record(0)
    step = 0
    while step < n_steps:
        amps, al, ar = prop.step(amps)
        abs_left += al
        abs_right += ar
        step += 1
        if step in events:
            amps = events.pop(step)(amps, step)
        if step % record_every == 0:
            record(step)
        if step % check_every == 0 and not events:
            if float(np.sum(np.abs(amps) ** 2) * grid.dx) < residual_tol:
                break
    if rows[-1][0] != step * prop.dt:
        record(step)

    rho = np.abs(amps) ** 2 * grid.dx
    T = (float(rho[right_of].sum()) + abs_right) / norm0
    R = (float(rho[left_of].sum()) + abs_left) / norm0
    A = float(rho[inside].sum()) / norm0
    if step >= n_steps and float(rho.sum()) >= residual_tol:
        logger.info("step budget %d reached with %.3e probability still on the grid", n_steps, rho.sum())
    return ScatteringRecord(
        T=T,
        R=R,
        A=A,
        absorbed_left=abs_left / norm0,
        absorbed_right=abs_right / norm0,
        steps=step,
        time=step * prop.dt,
        history=pd.DataFrame(rows, columns=HISTORY_COLUMNS),
        state=WaveFn(grid, amps),
    )


def scattering_run(
    packet: WaveFn,
    V: np.ndarray,
    region: BarrierRegion,
    config: PropagatorConfig,
    residual_tol: float = 1e-4,
    check_every: int = 100,
    record_every: Optional[int] = None,
    observer: Optional[Callable[[int, np.ndarray], None]] = None,
) -> ScatteringRecord:
    """Transmission T, reflection R and in-barrier remainder A of an incident packet."""
    if config.absorber is None:
        raise ConfigError("scattering runs need an absorber", key="absorber")
    if not region.inside(packet.grid):
        raise GridError("barrier region lies outside the grid")
    check_incident(packet, region)
    prop = Propagator(packet.grid, V, config)
    return propagate_through(
        prop, packet, region, config.n_steps, residual_tol, check_every, record_every, observer=observer
    )


def barrier_geometry(barrier, grid: Grid1D, mass: float = 1.0):
    """(height, width, region) of a barrier spec; smooth barriers use their equivalent rectangle."""
    if isinstance(barrier, Rectangular):
        return barrier.v0, barrier.width, BarrierRegion.from_rectangular(barrier)
    height, width, center = equivalent_rectangle(eval_potential(barrier, grid, mass=mass), grid)
    # region spans twice the equivalent half-width; a Gaussian beam is below 5% of its peak outside it
    return height, width, BarrierRegion(x_left=center - width, x_right=center + width)


def _scan_point(p0, barrier, region, grid, config, sigma, x0):
    packet = gaussian_packet(grid, x0, p0, sigma)
    V = eval_potential(barrier, grid, mass=config.mass)
    record = scattering_run(packet, V, region, config)
    return record.T, record.R, record.A


def transmission_scan(
    momenta: Sequence[float],
    barrier,
    grid: Grid1D,
    config: PropagatorConfig,
    sigma: float,
    x0: Optional[float] = None,
    n_jobs: int = 1,
) -> pd.DataFrame:
    """Numerical transmission against plane-wave and packet-averaged oracles.

    Non-rectangular barriers are compared with their equivalent rectangle.
    """
    height, width, region = barrier_geometry(barrier, grid, config.mass)
    if x0 is None:
        x0 = region.x_left - 6.0 * sigma
    results = Parallel(n_jobs=n_jobs)(
        delayed(_scan_point)(float(p0), barrier, region, grid, config, sigma, x0) for p0 in momenta
    )
    sigma_p = 1.0 / (2.0 * sigma)
    rows = []
    for p0, (T, R, A) in zip(momenta, results):
        energy = p0 ** 2 / (2.0 * config.mass)
        rows.append({
            "p0": float(p0),
            "energy": energy,
            "T_numeric": T,
            "R_numeric": R,
            "A_numeric": A,
            "T_analytic": rect_transmission_analytic(energy, height, width, mass=config.mass),
            "T_packet": packet_averaged_transmission(p0, sigma_p, height, width, mass=config.mass),
        })
    return pd.DataFrame(rows, columns=SCAN_COLUMNS)
