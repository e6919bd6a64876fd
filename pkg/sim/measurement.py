"""Position-measurement channels: bright imaging, dark-spot null detection and
continuous imaging, plus the probe frequency-shift arithmetic.

Channels act on possibly sub-normalised states (the in-flight part of a
scattering run). Outcome probabilities are conditioned on that part and the
post-measurement state keeps the incoming norm.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import erf
from typing_extensions import Annotated, Literal

from sim.errors import MeasurementError
from sim.grid import POSITION, Grid1D, WaveFn, observables
from sim.ledger import MeasurementEvent
from sim.potentials import BarrierRegion
from sim.units import Length, Time

logger = logging.getLogger(__name__)

COVERAGE_GAP = 1e-6


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class BrightImaging(_Model):
    kind: Literal["bright"] = "bright"
    delta_l: Length = Field(..., gt=0, description="Imaging resolution")
    pulse_duration: Time = Field(..., gt=0)
    pitch: Optional[Length] = Field(None, gt=0, description="Center lattice pitch, defaults to delta_l")
    centers: Optional[List[Length]] = None


class DarkSpot(_Model):
    kind: Literal["dark_spot"] = "dark_spot"
    region: BarrierRegion
    pulse_duration: Time = Field(..., gt=0)
    edge_width: Optional[Length] = Field(None, gt=0, description="Gaussian edge smoothing; sharp when unset")


class ContinuousBright(_Model):
    kind: Literal["continuous_bright"] = "continuous_bright"
    delta_l: Length = Field(..., gt=0)
    rate: float = Field(..., ge=0, description="Mean events per unit time")
    window: Optional[Tuple[Time, Time]] = None
    pulse_duration: Optional[Time] = Field(None, gt=0)
    pitch: Optional[Length] = Field(None, gt=0)

    def event_times(self, t_end: float, rng: np.random.Generator) -> List[float]:
        """Poisson arrival times inside the window (default [0, t_end])."""
        t0, t1 = self.window if self.window is not None else (0.0, t_end)
        times: List[float] = []
        if self.rate == 0:
            return times
        t = t0 + rng.exponential(1.0 / self.rate)
        while t < t1:
            times.append(t)
            t += rng.exponential(1.0 / self.rate)
        return times


MeasurementModel = Annotated[Union[BrightImaging, DarkSpot, ContinuousBright], Field(discriminator="kind")]


@dataclass(frozen=True)
class KrausFamily:
    centers: np.ndarray
    ops: np.ndarray  # (n_centers, n) real window values K_j(x)

    def completeness(self) -> np.ndarray:
        return np.sum(self.ops ** 2, axis=0)


def default_centers(grid: Grid1D, delta_l: float, pitch: Optional[float] = None) -> np.ndarray:
    pitch = pitch or delta_l
    lo = grid.x[0] - 5.0 * delta_l
    hi = grid.x[-1] + 5.0 * delta_l
    return np.arange(lo, hi + 0.5 * pitch, pitch)


def kraus_set(grid: Grid1D, delta_l: float, centers=None, pitch: Optional[float] = None) -> KrausFamily:
    """Gaussian windows exp(-(x - c)^2 / 4 delta_l^2), jointly normalised to sum K^2 = 1."""
    if delta_l < 2.0 * grid.dx:
        raise MeasurementError(f"delta_l={delta_l:g} is below 2 dx={2 * grid.dx:g}")
    centers = default_centers(grid, delta_l, pitch) if centers is None else np.asarray(centers, dtype=float)
    if centers.size == 0:
        raise MeasurementError("no imaging centers")
    windows = np.exp(-((grid.x[None, :] - centers[:, None]) ** 2) / (4.0 * delta_l ** 2))
    cover = np.sum(windows ** 2, axis=0)
    if cover.min() < COVERAGE_GAP * cover.max():
        raise MeasurementError(
            f"imaging centers leave a coverage gap (min/max window sum {cover.min() / cover.max():.2e})"
        )
    return KrausFamily(centers, windows / np.sqrt(cover))


def _branch(psi: WaveFn, amps: np.ndarray, weight: float, norm_sq: float) -> WaveFn:
    return WaveFn(psi.grid, amps * math.sqrt(norm_sq / weight))


class BrightChannel:
    kind = "bright"

    def __init__(self, grid: Grid1D, delta_l: float, centers=None, pitch: Optional[float] = None):
        self.grid = grid
        self.delta_l = delta_l
        self.family = kraus_set(grid, delta_l, centers, pitch)
        self._weights = self.family.ops ** 2

    @classmethod
    def from_model(cls, grid: Grid1D, model) -> "BrightChannel":
        return cls(grid, model.delta_l, getattr(model, "centers", None), model.pitch)

    def probabilities(self, psi: WaveFn) -> np.ndarray:
        rho = psi.density()
        p = self._weights @ rho
        return p / p.sum()

    def outcome(self, psi: WaveFn, j: int) -> WaveFn:
        amps = self.family.ops[j] * psi.amps
        weight = float(np.sum(np.abs(amps) ** 2))
        if weight == 0.0:
            raise MeasurementError(f"outcome {j} has zero probability")
        return _branch(psi, amps, weight, float(np.sum(psi.density())))

    def branches(self, psi: WaveFn, min_probability: float = 0.0):
        p = self.probabilities(psi)
        return [(j, float(p[j]), self.outcome(psi, j)) for j in range(p.size) if p[j] > min_probability]

    def sample(self, psi: WaveFn, rng: np.random.Generator):
        p = self.probabilities(psi)
        j = int(rng.choice(p.size, p=p))
        return j, float(p[j]), self.outcome(psi, j)


def dark_mask(grid: Grid1D, region: BarrierRegion, edge_width: Optional[float] = None) -> np.ndarray:
    """Null-outcome probability mask: strict-interior indicator or its erf-smoothed version."""
    if edge_width is None:
        return region.mask(grid).astype(float)
    s = math.sqrt(2.0) * edge_width
    return 0.5 * (erf((grid.x - region.x_left) / s) - erf((grid.x - region.x_right) / s))


class DarkSpotChannel:
    kind = "dark_spot"

    def __init__(self, grid: Grid1D, region: BarrierRegion, edge_width: Optional[float] = None):
        self.grid = grid
        self.region = region
        m = dark_mask(grid, region, edge_width)
        self.null_op = np.sqrt(m)
        self.flash_op = np.sqrt(1.0 - m)

    @classmethod
    def from_model(cls, grid: Grid1D, model: DarkSpot) -> "DarkSpotChannel":
        return cls(grid, model.region, model.edge_width)

    def probabilities(self, psi: WaveFn) -> dict:
        rho = psi.density()
        total = float(np.sum(rho))
        p_null = float(np.sum(self.null_op ** 2 * rho)) / total
        return {"null": p_null, "flash": 1.0 - p_null}

    def outcome(self, psi: WaveFn, label: str) -> WaveFn:
        op = self.null_op if label == "null" else self.flash_op
        amps = op * psi.amps
        weight = float(np.sum(np.abs(amps) ** 2))
        if weight == 0.0:
            raise MeasurementError(f"dark-spot outcome '{label}' has zero probability")
        return _branch(psi, amps, weight, float(np.sum(psi.density())))

    def branches(self, psi: WaveFn, min_probability: float = 0.0):
        p = self.probabilities(psi)
        return [(label, p[label], self.outcome(psi, label)) for label in ("null", "flash") if p[label] > min_probability]

    def sample(self, psi: WaveFn, rng: np.random.Generator):
        p = self.probabilities(psi)
        label = "null" if rng.random() < p["null"] else "flash"
        return label, p[label], self.outcome(psi, label)


def build_channel(grid: Grid1D, model):
    if isinstance(model, DarkSpot):
        return DarkSpotChannel.from_model(grid, model)
    if isinstance(model, (BrightImaging, ContinuousBright)):
        return BrightChannel.from_model(grid, model)
    raise MeasurementError(f"unsupported measurement model {type(model).__name__}")


def measure(
    psi: WaveFn,
    channel,
    rng: np.random.Generator,
    V: np.ndarray,
    region: Optional[BarrierRegion] = None,
    time: float = 0.0,
    traj_id: int = 0,
    mass: float = 1.0,
):
    """Sample one outcome and book the atom's energy change (barrier included)."""
    if psi.representation != POSITION:
        raise MeasurementError("measurements act on position-representation states")
    before = observables(psi, V, mass=mass).total
    outcome, probability, post = channel.sample(psi, rng)
    after = observables(post, V, mass=mass).total
    if region is None:
        in_barrier = 0.0
    else:
        in_barrier = post.probability_in(region.x_left, region.x_right) / post.norm_sq()
    event = MeasurementEvent(
        time=time,
        kind=channel.kind,
        outcome=outcome,
        probability=probability,
        delta_e_atom=after - before,
        post_in_barrier=in_barrier,
        traj_id=traj_id,
    )
    return event, post


def apply_bright(
    psi: WaveFn,
    model,
    rng: np.random.Generator,
    V: np.ndarray,
    region: Optional[BarrierRegion] = None,
    time: float = 0.0,
    channel: Optional[BrightChannel] = None,
):
    if not isinstance(model, (BrightImaging, ContinuousBright)):
        raise MeasurementError("apply_bright needs a bright imaging model")
    channel = channel or BrightChannel.from_model(psi.grid, model)
    return measure(psi, channel, rng, V, region=region, time=time)


def apply_dark_spot(
    psi: WaveFn,
    model: DarkSpot,
    rng: np.random.Generator,
    V: np.ndarray,
    time: float = 0.0,
    channel: Optional[DarkSpotChannel] = None,
):
    if not isinstance(model, DarkSpot):
        raise MeasurementError("apply_dark_spot needs a dark-spot model")
    channel = channel or DarkSpotChannel.from_model(psi.grid, model)
    return measure(psi, channel, rng, V, region=model.region, time=time)


@dataclass(frozen=True)
class FrequencyShift:
    per_photon_shift: float
    per_photon_energy: float
    photons_needed: int
    mean_photons: float
    total_budget: float

    def to_row(self) -> dict:
        return {
            "per_photon_shift": self.per_photon_shift,
            "per_photon_energy": self.per_photon_energy,
            "photons_needed": self.photons_needed,
            "mean_photons": self.mean_photons,
            "total_budget": self.total_budget,
        }


def frequency_shift_estimate(eta: float, t: float, hbar: float = 1.0) -> FrequencyShift:
    """Probe-side bookkeeping for a phase shift eta accumulated over time t.

    Each photon is shifted by eta / t; about 1 / eta photons are needed, so the
    total exchange is hbar / t whatever eta is.
    """
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    if t <= 0:
        raise ValueError("t must be positive")
    return FrequencyShift(
        per_photon_shift=eta / t,
        per_photon_energy=hbar * eta / t,
        photons_needed=int(math.ceil(1.0 / eta - 1e-9)),
        mean_photons=1.0 / eta,
        total_budget=hbar / t,
    )
