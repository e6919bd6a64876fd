"""Uniform 1D grids, wavefunctions and spectral observables.

Transforms follow the continuum-normalised convention

    psi_k(k) = dx / sqrt(2 pi) * sum_x psi(x) exp(-i k x)

evaluated with numpy's FFT, so that sum |psi|^2 dx == sum |psi_k|^2 dk.
"""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from sim.errors import GridError

POSITION = "position"
MOMENTUM = "momentum"


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    x_max: float
    n: int
    x: np.ndarray = field(init=False, repr=False, compare=False)
    k: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise GridError(f"degenerate extent: x_max={self.x_max} must exceed x_min={self.x_min}")
        if self.n < 16 or (self.n & (self.n - 1)) != 0:
            raise GridError(f"n={self.n} must be a power of two and at least 16")
        dx = (self.x_max - self.x_min) / self.n
        x = self.x_min + dx * np.arange(self.n)
        k = 2.0 * np.pi * np.fft.fftfreq(self.n, d=dx)
        x.setflags(write=False)
        k.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "k", k)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def dk(self) -> float:
        return 2.0 * np.pi / (self.n * self.dx)

    @property
    def k_max(self) -> float:
        """Momentum cutoff pi/dx."""
        return np.pi / self.dx

    def contains(self, lo: float, hi: float) -> bool:
        return lo >= self.x[0] and hi <= self.x[-1]

    def zeros(self) -> np.ndarray:
        return np.zeros(self.n, dtype=np.complex128)


def make_grid(x_min: float, x_max: float, n: int) -> Grid1D:
    return Grid1D(float(x_min), float(x_max), int(n))


@dataclass
class WaveFn:
    grid: Grid1D
    amps: np.ndarray
    representation: str = POSITION

    def __post_init__(self):
        self.amps = np.asarray(self.amps, dtype=np.complex128)
        if self.amps.shape != (self.grid.n,):
            raise GridError(f"amplitude vector has shape {self.amps.shape}, grid has {self.grid.n} points")
        if self.representation not in (POSITION, MOMENTUM):
            raise GridError(f"unknown representation '{self.representation}'")

    @property
    def measure(self) -> float:
        return self.grid.dx if self.representation == POSITION else self.grid.dk

    def norm_sq(self) -> float:
        return float(np.sum(np.abs(self.amps) ** 2) * self.measure)

    def norm(self) -> float:
        return math.sqrt(self.norm_sq())

    def density(self) -> np.ndarray:
        return np.abs(self.amps) ** 2

    def probability_in(self, lo: float, hi: float) -> float:
        """Probability strictly between lo and hi (position representation)."""
        psi = self if self.representation == POSITION else to_position(self)
        inside = (self.grid.x > lo) & (self.grid.x < hi)
        return float(np.sum(psi.density()[inside]) * self.grid.dx)

    def copy(self) -> "WaveFn":
        return WaveFn(self.grid, self.amps.copy(), self.representation)

    def normalized(self) -> "WaveFn":
        nrm = self.norm()
        if nrm == 0.0:
            raise GridError("cannot normalise a zero wavefunction")
        return WaveFn(self.grid, self.amps / nrm, self.representation)

    def overlap(self, other: "WaveFn") -> complex:
        """<self|other> in the position representation."""
        a = self if self.representation == POSITION else to_position(self)
        b = other if other.representation == POSITION else to_position(other)
        if a.grid != b.grid:
            raise GridError("overlap of states on different grids")
        return complex(np.vdot(a.amps, b.amps) * self.grid.dx)


@dataclass(frozen=True)
class Observables:
    norm: float
    mean_x: float
    mean_p: float
    kinetic: float
    potential: float
    total: float

    def to_dict(self) -> dict:
        return {
            "norm": self.norm,
            "mean_x": self.mean_x,
            "mean_p": self.mean_p,
            "kinetic": self.kinetic,
            "potential": self.potential,
            "total": self.total,
        }


def gaussian_packet(grid: Grid1D, x0: float, p0: float, sigma: float, hbar: float = 1.0) -> WaveFn:
    """Minimum-uncertainty packet with position spread sigma and mean momentum p0."""
    if sigma <= 3.0 * grid.dx:
        raise GridError(f"sigma={sigma} is not resolved by dx={grid.dx} (need sigma > 3 dx)")
    if not grid.contains(x0 - 5.0 * sigma, x0 + 5.0 * sigma):
        raise GridError(
            f"packet at x0={x0} with sigma={sigma} is clipped by the grid [{grid.x[0]}, {grid.x[-1]}]"
        )
    x = grid.x
    amps = (2.0 * np.pi * sigma ** 2) ** -0.25 * np.exp(
        -((x - x0) ** 2) / (4.0 * sigma ** 2) + 1j * p0 * x / hbar
    )
    return WaveFn(grid, amps).normalized()


def to_momentum(psi: WaveFn) -> WaveFn:
    if psi.representation != POSITION:
        raise GridError("state is already in the momentum representation")
    g = psi.grid
    phase = np.exp(-1j * g.k * g.x_min)
    amps = g.dx / math.sqrt(2.0 * np.pi) * phase * np.fft.fft(psi.amps)
    return WaveFn(g, amps, MOMENTUM)


def to_position(psi: WaveFn) -> WaveFn:
    if psi.representation != MOMENTUM:
        raise GridError("state is already in the position representation")
    g = psi.grid
    phase = np.exp(1j * g.k * g.x_min)
    amps = g.n * g.dk / math.sqrt(2.0 * np.pi) * np.fft.ifft(psi.amps * phase)
    return WaveFn(g, amps, POSITION)


def kinetic_energy(psi: WaveFn, mass: float = 1.0, hbar: float = 1.0) -> float:
    phi = psi if psi.representation == MOMENTUM else to_momentum(psi)
    weights = phi.density() * psi.grid.dk
    return float(np.sum(weights * (hbar * psi.grid.k) ** 2 / (2.0 * mass)) / np.sum(weights))


def observables(psi: WaveFn, V: np.ndarray, mass: float = 1.0, hbar: float = 1.0) -> Observables:
    """Normalised expectation values; `norm` keeps the raw state norm."""
    V = np.asarray(V, dtype=float)
    if V.shape != (psi.grid.n,):
        raise GridError(f"potential has shape {V.shape}, state grid has {psi.grid.n} points")
    pos = psi if psi.representation == POSITION else to_position(psi)
    mom = psi if psi.representation == MOMENTUM else to_momentum(psi)
    g = psi.grid

    rho = pos.density() * g.dx
    total_prob = float(np.sum(rho))
    if total_prob == 0.0:
        raise GridError("observables of a zero wavefunction")
    rho_k = mom.density() * g.dk
    prob_k = float(np.sum(rho_k))

    mean_x = float(np.sum(g.x * rho) / total_prob)
    potential = float(np.sum(V * rho) / total_prob)
    mean_p = float(np.sum(hbar * g.k * rho_k) / prob_k)
    kinetic = float(np.sum((hbar * g.k) ** 2 / (2.0 * mass) * rho_k) / prob_k)
    return Observables(
        norm=math.sqrt(total_prob),
        mean_x=mean_x,
        mean_p=mean_p,
        kinetic=kinetic,
        potential=potential,
        total=kinetic + potential,
    )


def position_spread(psi: WaveFn) -> float:
    pos = psi if psi.representation == POSITION else to_position(psi)
    rho = pos.density()
    w = rho / np.sum(rho)
    mean = np.sum(w * pos.grid.x)
    return float(np.sqrt(np.sum(w * (pos.grid.x - mean) ** 2)))


def random_state(grid: Grid1D, rng: np.random.Generator, bandwidth: Optional[float] = None) -> WaveFn:
    """Normalised random state; `bandwidth` limits |k| to keep it smooth."""
    amps = rng.standard_normal(grid.n) + 1j * rng.standard_normal(grid.n)
    if bandwidth is not None:
        phi = np.fft.fft(amps)
        phi[np.abs(grid.k) > bandwidth] = 0.0
        amps = np.fft.ifft(phi)
    return WaveFn(grid, amps).normalized()
