"""Declarative potential specs and their evaluation on a grid.

Specs are pydantic models so they double as the config schema; the
`kind` field selects the variant.
"""
import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, field_validator, model_validator
from typing_extensions import Annotated, Literal

from sim.grid import Grid1D
from sim.units import DEFAULT_UNITS, Energy, Frequency, Length, UnitSystem

logger = logging.getLogger(__name__)

_EDGE_TOL = 1e-9


class _Spec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class Rectangular(_Spec):
    kind: Literal["rectangular"] = "rectangular"
    v0: Energy = Field(..., ge=0, description="Barrier height")
    width: Length = Field(..., gt=0)
    center: Length = 0.0

    @property
    def x_left(self) -> float:
        return self.center - 0.5 * self.width

    @property
    def x_right(self) -> float:
        return self.center + 0.5 * self.width


class GaussianBeam(_Spec):
    kind: Literal["gaussian_beam"] = "gaussian_beam"
    u0: Energy = Field(..., ge=0, description="Peak light shift")
    waist: Length = Field(..., gt=0, description="1/e^2 intensity radius")
    center: Length = 0.0


class ScannedBeam(_Spec):
    kind: Literal["scanned_beam"] = "scanned_beam"
    u0: Energy = Field(..., ge=0)
    waist: Length = Field(..., gt=0)
    dwell: List[Tuple[Length, float]] = Field(..., min_length=1, description="(position, weight) pairs")

    @field_validator("dwell")
    @classmethod
    def _weights_normalized(cls, dwell):
        weights = np.array([w for _, w in dwell], dtype=float)
        if np.any(weights < 0):
            raise ValueError("dwell weights must be non-negative")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"dwell weights sum to {weights.sum():.15g}, expected 1")
        return dwell


class Harmonic(_Spec):
    kind: Literal["harmonic"] = "harmonic"
    omega: Frequency = Field(..., gt=0)
    center: Length = 0.0
    support: Optional[Tuple[Length, Length]] = Field(
        None, description="Window outside which the harmonic term vanishes"
    )

    @field_validator("support")
    @classmethod
    def _ordered(cls, support):
        if support is not None and not support[0] < support[1]:
            raise ValueError("support window must satisfy lo < hi")
        return support


class Linear(_Spec):
    kind: Literal["linear"] = "linear"
    slope: float = Field(..., description="Constant force magnitude; V = slope * x")


PotentialSpec = Annotated[
    Union[Rectangular, GaussianBeam, ScannedBeam, Harmonic, Linear, "Composite"],
    Field(discriminator="kind"),
]


class Composite(_Spec):
    kind: Literal["composite"] = "composite"
    parts: List[PotentialSpec] = Field(..., min_length=1)


Composite.model_rebuild()

POTENTIAL_ADAPTER = TypeAdapter(PotentialSpec)


def parse_potential(data, units: Optional[UnitSystem] = None):
    return POTENTIAL_ADAPTER.validate_python(data, context={"units": units or DEFAULT_UNITS})


def _as_x(where) -> np.ndarray:
    return where.x if isinstance(where, Grid1D) else np.asarray(where, dtype=float)


def _beam(x: np.ndarray, center: float, waist: float) -> np.ndarray:
    return np.exp(-2.0 * (x - center) ** 2 / waist ** 2)


def time_averaged_scan(u0: float, waist: float, dwell: Sequence[Tuple[float, float]], where) -> np.ndarray:
    """Dwell-weighted average of a scanned Gaussian beam profile."""
    if len(dwell) == 0:
        raise ValueError("dwell list is empty")
    x = _as_x(where)
    v = np.zeros_like(x, dtype=float)
    for position, weight in dwell:
        if weight < 0:
            raise ValueError(f"negative dwell weight {weight} at {position}")
        v += weight * _beam(x, position, waist)
    return u0 * v


def _rectangle(x: np.ndarray, spec: Rectangular, dx: float) -> np.ndarray:
    dist = np.abs(x - spec.center) - 0.5 * spec.width
    v = np.where(dist < 0, spec.v0, 0.0)
    on_edge = np.abs(dist) <= _EDGE_TOL * max(dx, 1.0)
    v[on_edge] = 0.5 * spec.v0
    return v


def _warn_if_clipped(spec, x: np.ndarray):
    lo, hi = x[0], x[-1]
    if isinstance(spec, Rectangular):
        spans = [(spec.x_left, spec.x_right)]
    elif isinstance(spec, GaussianBeam):
        spans = [(spec.center - 2 * spec.waist, spec.center + 2 * spec.waist)]
    elif isinstance(spec, ScannedBeam):
        spans = [(c - 2 * spec.waist, c + 2 * spec.waist) for c, _ in spec.dwell]
    else:
        return
    for left, right in spans:
        if left < lo or right > hi:
            logger.warning("barrier support [%g, %g] is clipped by grid [%g, %g]", left, right, lo, hi)
            return


def eval_potential(spec, grid: Grid1D, mass: float = 1.0, antigravity: bool = False) -> np.ndarray:
    """Evaluate `spec` pointwise on `grid`; Composite sums its parts.

    With `antigravity` every Linear part is dropped.
    """
    x = grid.x
    _warn_if_clipped(spec, x)

    if isinstance(spec, Composite):
        v = np.zeros(grid.n)
        for part in spec.parts:
            v += eval_potential(part, grid, mass=mass, antigravity=antigravity)
        return v
    if isinstance(spec, Rectangular):
        return _rectangle(x, spec, grid.dx)
    if isinstance(spec, GaussianBeam):
        return spec.u0 * _beam(x, spec.center, spec.waist)
    if isinstance(spec, ScannedBeam):
        return time_averaged_scan(spec.u0, spec.waist, spec.dwell, x)
    if isinstance(spec, Harmonic):
        v = 0.5 * mass * spec.omega ** 2 * (x - spec.center) ** 2
        if spec.support is not None:
            lo, hi = spec.support
            v = np.where((x >= lo) & (x <= hi), v, 0.0)
        return v
    if isinstance(spec, Linear):
        if antigravity:
            return np.zeros(grid.n)
        return spec.slope * x
    raise TypeError(f"unsupported potential spec {type(spec).__name__}")


def barrier_from_temperature(t_barrier: float, units: UnitSystem = DEFAULT_UNITS) -> float:
    """Barrier height k_B * T in internal energy units."""
    if t_barrier < 0:
        raise ValueError("barrier temperature must be non-negative")
    return units.energy_from_temperature(t_barrier)


class BarrierRegion(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    x_left: Length
    x_right: Length

    @model_validator(mode="after")
    def _ordered(self):
        if not self.x_left < self.x_right:
            raise ValueError(f"x_left={self.x_left} must be below x_right={self.x_right}")
        return self

    @classmethod
    def from_rectangular(cls, spec: Rectangular) -> "BarrierRegion":
        return cls(x_left=spec.x_left, x_right=spec.x_right)

    @property
    def width(self) -> float:
        return self.x_right - self.x_left

    def inside(self, grid: Grid1D) -> bool:
        return grid.contains(self.x_left, self.x_right)

    def mask(self, grid: Grid1D) -> np.ndarray:
        """Boolean strict-interior mask."""
        return (grid.x > self.x_left) & (grid.x < self.x_right)


def equivalent_rectangle(v: np.ndarray, grid: Grid1D) -> Tuple[float, float, float]:
    """(height, width, center) of the rectangle with the same peak and area."""
    v = np.asarray(v, dtype=float)
    height = float(v.max())
    if height <= 0:
        raise ValueError("potential has no positive barrier")
    area = float(np.sum(v) * grid.dx)
    center = float(np.sum(grid.x * v) / np.sum(v))
    return height, area / height, center
