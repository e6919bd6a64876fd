"""Delta-kick cooling and the velocity-selection sweep."""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing_extensions import Literal

from sim.errors import GridError
from sim.grid import POSITION, Grid1D, WaveFn
from sim.potentials import BarrierRegion, eval_potential
from sim.propagator import Propagator, PropagatorConfig, check_stability, imaginary_time_ground, lowest_states
from sim.units import Energy, Frequency, Length, Time

logger = logging.getLogger(__name__)


@dataclass
class ClassicalEnsemble:
    x: np.ndarray
    v: np.ndarray
    mass: float = 1.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.x.size == 0 or self.x.shape != self.v.shape:
            raise ValueError("ensemble needs matching, nonempty position and velocity arrays")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.v))):
            raise ValueError("ensemble contains non-finite coordinates")

    @classmethod
    def gaussian(
        cls,
        n: int,
        sigma_x: float,
        sigma_v: float,
        rng: np.random.Generator,
        mass: float = 1.0,
        exact_moments: bool = True,
    ) -> "ClassicalEnsemble":
        """Uncorrelated Gaussian cloud; `exact_moments` whitens the sample to zero mean,
        the requested variances and zero x-v covariance."""
        z = rng.standard_normal((2, n))
        if exact_moments:
            z -= z.mean(axis=1, keepdims=True)
            chol = np.linalg.cholesky(np.cov(z, bias=True))
            z = np.linalg.solve(chol, z)
        return cls(sigma_x * z[0], sigma_v * z[1], mass)

    def __len__(self):
        return self.x.size

    def copy(self) -> "ClassicalEnsemble":
        return ClassicalEnsemble(self.x.copy(), self.v.copy(), self.mass)

    def temperature(self, kB: float = 1.0) -> float:
        return float(self.mass * np.var(self.v) / kB)

    def correlation(self) -> float:
        if np.var(self.x) == 0 or np.var(self.v) == 0:
            return 0.0
        return float(np.corrcoef(self.x, self.v)[0, 1])


class KickSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    shape: Literal["harmonic", "quadrupole"] = "harmonic"
    omega: Frequency = Field(1.0, gt=0, description="Harmonic kick frequency")
    gradient: float = Field(0.0, ge=0, description="Quadrupole acceleration magnitude")
    duration: Time = Field(..., ge=0)
    impulsive: bool = True

    @model_validator(mode="after")
    def _duration(self):
        if not self.impulsive and self.duration <= 0:
            raise ValueError("a finite-duration kick needs duration > 0")
        return self

    @property
    def strength(self) -> float:
        """Impulse per unit displacement (harmonic) or per unit sign (quadrupole)."""
        if self.shape == "harmonic":
            return self.omega ** 2 * self.duration
        return self.gradient * self.duration


def free_expand(ens: ClassicalEnsemble, t: float) -> ClassicalEnsemble:
    if t < 0:
        raise ValueError("expansion time must be non-negative")
    return ClassicalEnsemble(ens.x + ens.v * t, ens.v.copy(), ens.mass)


def delta_kick(ens: ClassicalEnsemble, kick: KickSpec, substeps: int = 200) -> ClassicalEnsemble:
    x, v = ens.x.copy(), ens.v.copy()
    if kick.impulsive:
        if kick.shape == "harmonic":
            v = v - kick.strength * x
        else:
            v = v - kick.strength * np.sign(x)
        return ClassicalEnsemble(x, v, ens.mass)

    if kick.shape == "harmonic":
        phase = kick.omega * kick.duration
        c, s = math.cos(phase), math.sin(phase)
        return ClassicalEnsemble(x * c + v * s / kick.omega, v * c - x * kick.omega * s, ens.mass)

    h = kick.duration / substeps
    for _ in range(substeps):
        v = v - 0.5 * h * kick.gradient * np.sign(x)
        x = x + h * v
        v = v - 0.5 * h * kick.gradient * np.sign(x)
    return ClassicalEnsemble(x, v, ens.mass)


def optimal_kick_strength(ens: ClassicalEnsemble) -> float:
    """Harmonic impulse removing the x-v covariance, cov(x, v) / var(x)."""
    var_x = float(np.var(ens.x))
    if var_x == 0:
        return 0.0
    return float(np.mean((ens.x - ens.x.mean()) * (ens.v - ens.v.mean())) / var_x)


def matched_kick(t_free: float, omega: float = 1.0) -> KickSpec:
    """Point-source optimum omega^2 tau = 1 / t_free."""
    if t_free <= 0:
        raise ValueError("t_free must be positive")
    return KickSpec(shape="harmonic", omega=omega, duration=1.0 / (omega ** 2 * t_free), impulsive=True)


@dataclass(frozen=True)
class KickCoolReport:
    temperature_initial: float
    temperature_expanded: float
    temperature_final: float
    ratio: float
    predicted_ratio: float
    strength: float
    correlation: float

    def to_row(self) -> dict:
        return {
            "temperature_initial": self.temperature_initial,
            "temperature_expanded": self.temperature_expanded,
            "temperature_final": self.temperature_final,
            "ratio": self.ratio,
            "predicted_ratio": self.predicted_ratio,
            "strength": self.strength,
            "correlation": self.correlation,
        }


def kick_cool(
    ens: ClassicalEnsemble,
    t_free: float,
    strength: Optional[float] = None,
    kB: float = 1.0,
) -> KickCoolReport:
    """Free expansion followed by an impulsive harmonic kick (ensemble optimum by default)."""
    expanded = free_expand(ens, t_free)
    if strength is None:
        strength = optimal_kick_strength(expanded)
    elif strength < 0:
        raise ValueError("kick strength must be non-negative")
    kicked = delta_kick(expanded, KickSpec(shape="harmonic", omega=1.0, duration=strength))
    sx2, sv2 = float(np.var(ens.x)), float(np.var(ens.v))
    denom = sx2 + sv2 * t_free ** 2
    t0 = ens.temperature(kB)
    tf = kicked.temperature(kB)
    return KickCoolReport(
        temperature_initial=t0,
        temperature_expanded=expanded.temperature(kB),
        temperature_final=tf,
        ratio=tf / t0 if t0 > 0 else 0.0,
        predicted_ratio=sx2 / denom if denom > 0 else 0.0,
        strength=strength,
        correlation=expanded.correlation(),
    )


def _momentum_operator(amps: np.ndarray, grid: Grid1D, hbar: float) -> np.ndarray:
    return np.fft.ifft(hbar * grid.k * np.fft.fft(amps))


def quantum_kick_strength(psi: WaveFn, mass: float = 1.0, hbar: float = 1.0) -> float:
    """Symmetrised x-p covariance over m var(x): the impulse that removes a chirp."""
    if psi.representation != POSITION:
        raise GridError("expected a position-representation state")
    x = psi.grid.x
    amps = psi.amps
    norm = np.vdot(amps, amps).real
    mean_x = np.vdot(amps, x * amps).real / norm
    p_amps = _momentum_operator(amps, psi.grid, hbar)
    # Re<(x - <x>) p> is the symmetrised covariance
    cov_xp = np.vdot((x - mean_x) * amps, p_amps).real / norm
    var_x = np.vdot(amps, (x - mean_x) ** 2 * amps).real / norm
    return float(cov_xp / (mass * var_x))


def delta_kick_quantum(psi: WaveFn, kick: KickSpec, mass: float = 1.0, hbar: float = 1.0) -> WaveFn:
    """Impulsive kick as a pure phase imprint; the density is untouched."""
    if not kick.impulsive:
        raise ValueError("finite-duration kicks need time-dependent propagation, not a phase imprint")
    if psi.representation != POSITION:
        raise GridError("expected a position-representation state")
    x = psi.grid.x
    if kick.shape == "harmonic":
        phase = -mass * kick.strength * x ** 2 / (2.0 * hbar)
    else:
        phase = -mass * kick.strength * np.abs(x) / hbar
    return WaveFn(psi.grid, psi.amps * np.exp(1j * phase))


class SweepSegment(BaseModel):
    """One piecewise-static stage: a Gaussian barrier (negative height: dimple) held for `duration`."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    duration: Time = Field(..., gt=0)
    center: Length
    width: Length = Field(..., gt=0)
    height: Energy


def segment_potential(base: np.ndarray, grid: Grid1D, segment: Optional[SweepSegment]) -> np.ndarray:
    if segment is None:
        return base
    return base + segment.height * np.exp(-2.0 * (grid.x - segment.center) ** 2 / segment.width ** 2)


@dataclass
class SweepResult:
    transferred: float
    ground_fraction: float
    remainder: float
    absorbed: float
    aux_ground_energy: float
    state: Optional[WaveFn] = field(default=None, repr=False)

    def to_row(self) -> dict:
        return {
            "transferred": self.transferred,
            "ground_fraction": self.ground_fraction,
            "remainder": self.remainder,
            "absorbed": self.absorbed,
            "aux_ground_energy": self.aux_ground_energy,
        }


def aux_ground_state(V: np.ndarray, grid: Grid1D, aux_region: BarrierRegion, mass: float = 1.0):
    """Ground state of V confined to aux_region by walls outside it."""
    inside = aux_region.mask(grid)
    wall = 10.0 * (float(np.max(np.abs(V[inside]))) + 1.0)
    confined = np.where(inside, V, float(np.max(V[inside])) + wall)
    return imaginary_time_ground(confined, grid, tol=1e-8, mass=mass)


def velocity_select_sweep(
    psi: WaveFn,
    trap,
    segments: Sequence[SweepSegment],
    config: PropagatorConfig,
    aux_region: BarrierRegion,
    antigravity: bool = False,
) -> SweepResult:
    """Carry the coldest atoms into the auxiliary region with piecewise-static barrier stages."""
    grid = psi.grid
    if not aux_region.inside(grid):
        raise GridError("auxiliary region lies outside the grid")
    base = eval_potential(trap, grid, mass=config.mass, antigravity=antigravity)
    stages = [segment_potential(base, grid, seg) for seg in segments]
    for V in stages:
        check_stability(V, grid, config.dt, config.mass)

    amps = psi.amps.copy()
    norm0 = float(np.sum(np.abs(amps) ** 2) * grid.dx)
    absorbed = 0.0
    for seg, V in zip(segments, stages):
        n_steps = max(1, int(round(seg.duration / config.dt)))
        amps, left, right = Propagator(grid, V, config).advance(amps, n_steps)
        absorbed += left + right

    final = WaveFn(grid, amps)
    transferred = final.probability_in(aux_region.x_left, aux_region.x_right)
    remainder = float(np.sum(np.abs(amps) ** 2) * grid.dx) - transferred
    V_final = stages[-1] if stages else base
    ground = aux_ground_state(V_final, grid, aux_region, mass=config.mass)
    fraction = abs(ground.state.overlap(final)) ** 2
    return SweepResult(
        transferred=transferred / norm0,
        ground_fraction=fraction / norm0,
        remainder=remainder / norm0,
        absorbed=absorbed / norm0,
        aux_ground_energy=ground.energy,
        state=final,
    )


@dataclass
class ThermalSweepResult:
    transferred_mean: float
    transferred_stderr: float
    transferred_exact: float
    ground_fraction_exact: float
    truncated_weight: float
    per_state: pd.DataFrame = field(repr=False)

    def to_row(self) -> dict:
        return {
            "transferred_mean": self.transferred_mean,
            "transferred_stderr": self.transferred_stderr,
            "transferred_exact": self.transferred_exact,
            "ground_fraction_exact": self.ground_fraction_exact,
            "truncated_weight": self.truncated_weight,
        }


def truncated_boltzmann_weight(energies: np.ndarray, kT: float) -> float:
    """Boltzmann weight above the highest kept level, as a fraction of the full sum.

    The missing tail is continued geometrically with the last level spacing,
    which is exact for a harmonic spectrum. NaN with fewer than two levels.
    """
    energies = np.asarray(energies, dtype=float)
    if energies.size < 2:
        return float("nan")
    kept = np.exp(-(energies - energies[0]) / kT)
    r = math.exp(-max(energies[-1] - energies[-2], 0.0) / kT)
    if r >= 1.0:
        return 1.0
    tail = kept[-1] * r / (1.0 - r)
    return float(tail / (kept.sum() + tail))


def thermal_sweep(
    trap,
    segments: Sequence[SweepSegment],
    grid: Grid1D,
    config: PropagatorConfig,
    aux_region: BarrierRegion,
    kT: float,
    rng: np.random.Generator,
    n_states: int = 8,
    n_samples: int = 1000,
    n_jobs: int = 1,
    antigravity: bool = False,
) -> ThermalSweepResult:
    """Sweep a Boltzmann-weighted mixture of the initial potential's lowest eigenstates.

    Each eigenstate is swept once with the same Hamiltonian as
    `velocity_select_sweep`; the Monte-Carlo estimate samples states by
    weight and is reported next to the exact weighted means.
    """
    if kT <= 0:
        raise ValueError("kT must be positive")
    base = eval_potential(trap, grid, mass=config.mass, antigravity=antigravity)
    initial_V = segment_potential(base, grid, segments[0] if segments else None)
    energies, states = lowest_states(initial_V, grid, n_states, mass=config.mass)
    weights = np.exp(-(energies - energies[0]) / kT)
    weights /= weights.sum()
    lost = truncated_boltzmann_weight(energies, kT)
    if lost > 0.05:
        logger.warning("%d states leave %.1f%% of the Boltzmann weight out at kT=%g", n_states, 100 * lost, kT)

    results: List[SweepResult] = Parallel(n_jobs=n_jobs)(
        delayed(velocity_select_sweep)(state, trap, segments, config, aux_region, antigravity) for state in states
    )
    transferred = np.array([r.transferred for r in results])
    ground = np.array([r.ground_fraction for r in results])
    draws = transferred[rng.choice(n_states, size=n_samples, p=weights)]
    per_state = pd.DataFrame({
        "energy": energies,
        "weight": weights,
        "transferred": transferred,
        "ground_fraction": ground,
    })
    return ThermalSweepResult(
        transferred_mean=float(draws.mean()),
        transferred_stderr=float(draws.std(ddof=1) / math.sqrt(n_samples)),
        transferred_exact=float(np.dot(weights, transferred)),
        ground_fraction_exact=float(np.dot(weights, ground)),
        truncated_weight=lost,
        per_state=per_state,
    )
