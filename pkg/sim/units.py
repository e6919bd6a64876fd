"""Unit system and physical-quantity parsing.

Internally hbar = m = 1 and lengths are measured in `si_length` meters, so
the derived time unit is m * si_length**2 / hbar and the energy unit is
hbar / si_time. SI values only appear at the config and report boundary.
"""
import math
import re
from dataclasses import dataclass
from typing import Any, Optional

from pydantic import BeforeValidator, ValidationInfo
from typing_extensions import Annotated

HBAR_SI = 1.054571817e-34
PLANCK_SI = 2.0 * math.pi * HBAR_SI
KB_SI = 1.380649e-23
# Rb-87 atomic mass (standard data); the atom species is overridable in config.
RB87_MASS_KG = 1.4432e-25


@dataclass(frozen=True)
class UnitSystem:
    si_mass: float = RB87_MASS_KG
    si_length: float = 1e-6
    hbar: float = 1.0
    mass: float = 1.0

    def __post_init__(self):
        if self.si_mass <= 0 or self.si_length <= 0:
            raise ValueError("si_mass and si_length must be positive")

    @classmethod
    def rb87(cls, si_length: float = 1e-6) -> "UnitSystem":
        return cls(si_mass=RB87_MASS_KG, si_length=si_length)

    @property
    def si_time(self) -> float:
        return self.si_mass * self.si_length ** 2 / HBAR_SI

    @property
    def si_energy(self) -> float:
        return HBAR_SI / self.si_time

    @property
    def si_velocity(self) -> float:
        return self.si_length / self.si_time

    @property
    def kB(self) -> float:
        """Boltzmann constant in internal energy units per kelvin."""
        return KB_SI / self.si_energy

    def length_to_si(self, value: float) -> float:
        return value * self.si_length

    def length_from_si(self, meters: float) -> float:
        return meters / self.si_length

    def time_to_si(self, value: float) -> float:
        return value * self.si_time

    def time_from_si(self, seconds: float) -> float:
        return seconds / self.si_time

    def velocity_to_si(self, value: float) -> float:
        return value * self.si_velocity

    def energy_to_si(self, value: float) -> float:
        return value * self.si_energy

    def energy_from_si(self, joules: float) -> float:
        return joules / self.si_energy

    def energy_from_temperature(self, kelvin: float) -> float:
        return self.kB * kelvin

    def energy_to_temperature(self, value: float) -> float:
        return value / self.kB

    def de_broglie_wavelength(self, kelvin: float) -> float:
        """h / sqrt(m kB T) in meters; 700 nK gives about half a micron for Rb-87."""
        if kelvin <= 0:
            raise ValueError("temperature must be positive")
        return PLANCK_SI / math.sqrt(self.si_mass * KB_SI * kelvin)

    def temperature_for_wavelength(self, meters: float) -> float:
        if meters <= 0:
            raise ValueError("wavelength must be positive")
        return (PLANCK_SI / meters) ** 2 / (self.si_mass * KB_SI)

    def describe(self) -> dict:
        return {
            "si_mass_kg": self.si_mass,
            "si_length_m": self.si_length,
            "si_time_s": self.si_time,
            "si_energy_J": self.si_energy,
            "kB_internal_per_K": self.kB,
        }


DEFAULT_UNITS = UnitSystem.rb87()

_LENGTH = {"m": 1.0, "mm": 1e-3, "um": 1e-6, "µm": 1e-6, "nm": 1e-9}
_TIME = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6}
_TEMPERATURE = {"K": 1.0, "mK": 1e-3, "uK": 1e-6, "µK": 1e-6, "nK": 1e-9}
_FREQUENCY = {"Hz": 2.0 * math.pi, "kHz": 2.0 * math.pi * 1e3, "rad/s": 1.0}
_VELOCITY = {"m/s": 1.0, "mm/s": 1e-3, "um/s": 1e-6}

_QUANTITY_RE = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-zµ/]+)\s*$")


def parse_quantity(value: Any, dimension: str, units: Optional[UnitSystem] = None) -> float:
    """Convert a bare number (internal units) or a "<value> <unit>" string."""
    if isinstance(value, bool):
        raise ValueError(f"expected a {dimension}, got a boolean")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise ValueError(f"expected a {dimension} number or '<value> <unit>' string")

    match = _QUANTITY_RE.match(value)
    if match is None:
        raise ValueError(f"cannot read '{value}' as a {dimension}")
    number, unit = float(match.group(1)), match.group(2)
    units = units or DEFAULT_UNITS

    if dimension == "length" and unit in _LENGTH:
        return units.length_from_si(number * _LENGTH[unit])
    if dimension == "time" and unit in _TIME:
        return units.time_from_si(number * _TIME[unit])
    if dimension == "energy":
        if unit in _TEMPERATURE:
            return units.energy_from_temperature(number * _TEMPERATURE[unit])
        if unit == "J":
            return units.energy_from_si(number)
    if dimension == "frequency" and unit in _FREQUENCY:
        return number * _FREQUENCY[unit] * units.si_time
    if dimension == "velocity" and unit in _VELOCITY:
        return number * _VELOCITY[unit] / units.si_velocity
    raise ValueError(f"unit '{unit}' is not a {dimension} unit")


def _quantity_validator(dimension: str):
    def convert(value: Any, info: ValidationInfo) -> Any:
        units = None
        if info.context:
            units = info.context.get("units")
        return parse_quantity(value, dimension, units)
    return convert


Length = Annotated[float, BeforeValidator(_quantity_validator("length"))]
Time = Annotated[float, BeforeValidator(_quantity_validator("time"))]
Energy = Annotated[float, BeforeValidator(_quantity_validator("energy"))]
Frequency = Annotated[float, BeforeValidator(_quantity_validator("frequency"))]
Velocity = Annotated[float, BeforeValidator(_quantity_validator("velocity"))]
