"""Experiment config schema, parsing and canonical hashing.

Configs are TOML (or the canonical JSON form). Physical quantities are bare
numbers in internal units or "<value> <unit>" strings converted through the
config's unit system.
"""
import hashlib
import json
import logging
import re
import sys
from typing import List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from typing_extensions import Annotated, Literal

from sim.cooling import SweepSegment
from sim.errors import ConfigError
from sim.grid import Grid1D, make_grid
from sim.measurement import DarkSpot, MeasurementModel
from sim.potentials import BarrierRegion, Composite, PotentialSpec, Rectangular, eval_potential
from sim.propagator import PropagatorConfig
from sim.units import RB87_MASS_KG, Energy, Length, Time, UnitSystem

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

PROTOCOLS = ("ground", "scatter", "decay", "kick_cool", "sweep_select", "measure_ensemble", "bounds")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class UnitsConfig(_Section):
    si_mass: float = Field(RB87_MASS_KG, gt=0, description="Atom mass in kg (Rb-87 by default)")
    si_length: float = Field(1e-6, gt=0, description="Meters per internal length unit")

    def system(self) -> UnitSystem:
        return UnitSystem(si_mass=self.si_mass, si_length=self.si_length)


class GridConfig(_Section):
    x_min: Length
    x_max: Length
    n: int

    @model_validator(mode="after")
    def _valid(self):
        make_grid(self.x_min, self.x_max, self.n)
        return self

    def build(self) -> Grid1D:
        return make_grid(self.x_min, self.x_max, self.n)


class GaussianInitial(_Section):
    kind: Literal["gaussian"] = "gaussian"
    x0: Length
    p0: float = Field(..., description="Mean momentum (internal units)")
    sigma: Length = Field(..., gt=0)


class GroundInitial(_Section):
    kind: Literal["ground"] = "ground"
    tol: float = Field(1e-8, ge=1e-12)


InitialState = Annotated[Union[GaussianInitial, GroundInitial], Field(discriminator="kind")]


class GroundProtocol(_Section):
    tol: float = Field(1e-8, ge=1e-12)
    n_states: int = Field(1, ge=1, description="Extra eigenstates listed alongside the ground state")


class ScatterProtocol(_Section):
    momenta: Optional[List[float]] = Field(None, description="Incident momenta for a transmission scan")
    residual_tol: float = Field(1e-4, gt=0)
    record_every: int = Field(100, ge=1)


class DecayProtocol(_Section):
    trap_region: BarrierRegion
    barrier: BarrierRegion
    duration: Time = Field(..., gt=0)
    sample_every: Time = Field(..., gt=0)
    skip_fraction: float = Field(0.1, ge=0, lt=1)

    @model_validator(mode="after")
    def _trap_left_of_barrier(self):
        if self.trap_region.x_right > self.barrier.x_left:
            raise ValueError("trap_region must end where the barrier begins or before")
        return self


class KickCoolProtocol(_Section):
    n_particles: int = Field(100000, ge=2)
    sigma_x: Length = Field(..., gt=0)
    temperature: Energy = Field(..., gt=0, description="Initial cloud temperature as k_B T")
    t_free: Time = Field(..., ge=0)
    strength: Optional[float] = Field(None, ge=0, description="Kick impulse; ensemble optimum when unset")
    exact_moments: bool = True


class ThermalConfig(_Section):
    temperature: Energy = Field(..., gt=0)
    n_states: int = Field(8, ge=1)
    n_samples: int = Field(1000, ge=2)


class SweepProtocol(_Section):
    segments: List[SweepSegment] = Field(default_factory=list)
    aux_region: BarrierRegion
    thermal: Optional[ThermalConfig] = None


class MeasureProtocol(_Section):
    model: MeasurementModel
    schedule: Optional[List[Time]] = Field(None, description="Measurement times; traversal window when unset")
    n_events: int = Field(3, ge=1)
    n_traj: int = Field(100, ge=2)
    residual_tol: float = Field(1e-4, gt=0)
    margin: Optional[Length] = Field(None, gt=0)


class BoundsProtocol(_Section):
    v0: Energy
    e: Energy = Field(..., ge=0)
    delta_l: List[Length] = Field(..., min_length=1)
    wavelength: Optional[Length] = Field(None, gt=0, description="Probe wavelength for the recoil ratio")
    eta: float = Field(0.01, gt=0, le=1)

    @model_validator(mode="after")
    def _below_barrier(self):
        if not self.e < self.v0:
            raise ValueError(f"e={self.e:g} must lie below the barrier v0={self.v0:g}")
        return self


class OutputConfig(_Section):
    dir: Optional[str] = None
    # one frame per history record (scatter) or survival sample (decay)
    snapshots: bool = False


class ExperimentConfig(_Section):
    name: str = "experiment"
    units: UnitsConfig = UnitsConfig()
    grid: Optional[GridConfig] = None
    potential: Optional[PotentialSpec] = None
    antigravity: bool = False
    barrier: Optional[BarrierRegion] = None
    initial: Optional[InitialState] = None
    propagator: Optional[PropagatorConfig] = None

    ground: Optional[GroundProtocol] = None
    scatter: Optional[ScatterProtocol] = None
    decay: Optional[DecayProtocol] = None
    kick_cool: Optional[KickCoolProtocol] = None
    sweep_select: Optional[SweepProtocol] = None
    measure_ensemble: Optional[MeasureProtocol] = None
    bounds: Optional[BoundsProtocol] = None

    output: OutputConfig = OutputConfig()
    seed: Optional[int] = Field(None, ge=0)

    @property
    def protocol(self) -> str:
        return next(name for name in PROTOCOLS if getattr(self, name) is not None)

    @property
    def section(self):
        return getattr(self, self.protocol)

    def unit_system(self) -> UnitSystem:
        return self.units.system()

    def build_grid(self) -> Grid1D:
        return self.grid.build()

    def potential_array(self, grid: Grid1D):
        mass = self.propagator.mass if self.propagator else 1.0
        return eval_potential(self.potential, grid, mass=mass, antigravity=self.antigravity)

    def region(self) -> BarrierRegion:
        """Explicit barrier region, else the single rectangular part of the potential."""
        if self.barrier is not None:
            return self.barrier
        rects = _rectangles(self.potential)
        if len(rects) != 1:
            raise ConfigError("cannot infer the barrier region; set [barrier]", key="barrier")
        return BarrierRegion.from_rectangular(rects[0])


def _rectangles(spec) -> List[Rectangular]:
    if spec is None:
        return []
    if isinstance(spec, Rectangular):
        return [spec]
    if isinstance(spec, Composite):
        return [r for part in spec.parts for r in _rectangles(part)]
    return []


NEEDS = {
    "ground": ("grid", "potential"),
    "scatter": ("grid", "potential", "propagator", "initial"),
    "decay": ("grid", "potential", "propagator"),
    "kick_cool": (),
    "sweep_select": ("grid", "potential", "propagator"),
    "measure_ensemble": ("grid", "potential", "propagator", "initial"),
    "bounds": (),
}


def check_config(config: ExperimentConfig) -> ExperimentConfig:
    """Cross-section rules the field validators cannot express."""
    present = [name for name in PROTOCOLS if getattr(config, name) is not None]
    if len(present) != 1:
        raise ConfigError(
            f"exactly one protocol section is required, found {present or 'none'}",
            key="|".join(present) if present else None,
        )
    protocol = present[0]
    for key in NEEDS[protocol]:
        if getattr(config, key) is None:
            raise ConfigError(f"protocol '{protocol}' needs a [{key}] section", key=key)
    if protocol in ("scatter", "measure_ensemble") and not isinstance(config.initial, GaussianInitial):
        raise ConfigError(f"protocol '{protocol}' needs a gaussian initial packet", key="initial.kind")
    if protocol in ("scatter", "measure_ensemble") and config.propagator.absorber is None:
        raise ConfigError(f"protocol '{protocol}' needs an absorber", key="propagator.absorber")

    stochastic = protocol in ("kick_cool", "measure_ensemble") or (
        protocol == "sweep_select" and config.sweep_select.thermal is not None
    )
    if stochastic and config.seed is None:
        raise ConfigError(f"protocol '{protocol}' is stochastic and needs a seed", key="seed")

    if config.grid is not None:
        grid = config.build_grid()
        regions = [("barrier", config.barrier)]
        regions += [(f"potential[{i}]", BarrierRegion.from_rectangular(r)) for i, r in enumerate(_rectangles(config.potential))]
        if config.decay is not None:
            regions += [("decay.trap_region", config.decay.trap_region), ("decay.barrier", config.decay.barrier)]
        if config.sweep_select is not None:
            regions.append(("sweep_select.aux_region", config.sweep_select.aux_region))
        if config.measure_ensemble is not None and isinstance(config.measure_ensemble.model, DarkSpot):
            regions.append(("measure_ensemble.model.region", config.measure_ensemble.model.region))
        for key, region in regions:
            if region is not None and not region.inside(grid):
                raise ConfigError(
                    f"region [{region.x_left:g}, {region.x_right:g}] lies outside the grid "
                    f"[{grid.x[0]:g}, {grid.x[-1]:g}]",
                    key=key,
                )
    return config


_TOML_LINE = re.compile(r"line (\d+)")


def _find_line(text: str, loc) -> Optional[int]:
    names = [str(part) for part in loc if isinstance(part, str)]
    for name in reversed(names):
        pattern = re.compile(rf"^\s*(\[+[^\]]*\b{re.escape(name)}\b[^\]]*\]+|\"?{re.escape(name)}\"?\s*[=:])")
        for number, line in enumerate(text.splitlines(), start=1):
            if pattern.search(line):
                return number
    return None


def _load_text(text: str) -> dict:
    if text.lstrip().startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON: {exc.msg}", line=exc.lineno) from exc
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        match = _TOML_LINE.search(str(exc))
        raise ConfigError(f"malformed TOML: {exc}", line=int(match.group(1)) if match else None) from exc


def parse_config(text: str, strict: Optional[bool] = None) -> ExperimentConfig:
    """Validate config text; the first problem is raised as ConfigError with key and line."""
    if strict is None:
        from harness.settings import settings
        strict = settings.STRICT

    raw = _load_text(text)
    if not isinstance(raw, dict):
        raise ConfigError("config must be a table of sections")
    if not strict:
        unknown = set(raw) - set(ExperimentConfig.model_fields)
        for key in sorted(unknown):
            logger.warning("ignoring unknown config key '%s'", key)
            raw.pop(key)

    try:
        units = UnitsConfig.model_validate(raw.get("units", {})).system()
        config = ExperimentConfig.model_validate(raw, context={"units": units})
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = first["loc"]
        key = ".".join(str(part) for part in loc) or None
        raise ConfigError(first["msg"], key=key, line=_find_line(text, loc)) from exc
    return check_config(config)


def canonical_json(config: ExperimentConfig) -> str:
    return json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()
