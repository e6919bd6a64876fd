"""Closed-form tunneling oracles, the localisation bound chain and decay fits."""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, stats

from sim.errors import TurningPointError
from sim.grid import Grid1D

logger = logging.getLogger(__name__)

BOUND_COLUMNS = [
    "v0", "e", "delta_l", "kappa", "decay_length", "resolution_limit", "resolution_ok",
    "momentum_uncertainty", "dwell_time", "dwell_time_limit", "photon_energy_spread",
    "energy_uncertainty_floor", "barrier_deficit", "chain_holds", "recoil_ratio",
]

DECAY_COLUMNS = ["rate", "amplitude", "r_squared", "t_start", "t_end", "flagged"]


def kappa(v0: float, e: float, mass: float = 1.0, hbar: float = 1.0) -> float:
    """Evanescent decay constant sqrt(2 m (v0 - e)) / hbar."""
    if e < 0:
        raise ValueError(f"energy e={e} must be non-negative")
    if not e < v0:
        raise ValueError(f"e={e} is not below the barrier v0={v0}; nothing tunnels")
    return math.sqrt(2.0 * mass * (v0 - e)) / hbar


def recoil_energy(wavelength: float, mass: float = 1.0, hbar: float = 1.0) -> float:
    """Kinetic energy of one photon momentum 2 pi hbar / wavelength."""
    p = 2.0 * math.pi * hbar / wavelength
    return p * p / (2.0 * mass)


@dataclass(frozen=True)
class BoundReport:
    v0: float
    e: float
    delta_l: float
    kappa: float
    decay_length: float
    resolution_limit: float
    resolution_ok: bool
    momentum_uncertainty: float
    dwell_time: float
    dwell_time_limit: float
    photon_energy_spread: float
    energy_uncertainty_floor: float
    barrier_deficit: float
    chain_holds: bool
    recoil_ratio: Optional[float] = None

    def to_row(self) -> dict:
        row = asdict(self)
        return {col: row[col] for col in BOUND_COLUMNS}


def bound_chain(
    v0: float,
    e: float,
    delta_l: float,
    mass: float = 1.0,
    hbar: float = 1.0,
    wavelength: Optional[float] = None,
) -> BoundReport:
    """Resolution, momentum kick, dwell time and photon energy spread for imaging at delta_l.

    Localising to delta_l < 1/kappa keeps the atom for at most t = 2 m delta_l^2 / hbar,
    so the scattered photon carries an energy spread hbar / t that is at least
    hbar^2 kappa^2 / 2m, which equals v0 - e.
    """
    if delta_l <= 0:
        raise ValueError("delta_l must be positive")
    kap = kappa(v0, e, mass=mass, hbar=hbar)
    limit = 1.0 / kap
    dwell = 2.0 * mass * delta_l ** 2 / hbar
    spread = hbar / dwell
    floor = (hbar * kap) ** 2 / (2.0 * mass)
    resolution_ok = delta_l <= limit * (1.0 + 1e-12)
    recoil = None
    if wavelength is not None:
        recoil = recoil_energy(wavelength, mass=mass, hbar=hbar) / (v0 - e)
    return BoundReport(
        v0=v0,
        e=e,
        delta_l=delta_l,
        kappa=kap,
        decay_length=limit,
        resolution_limit=limit,
        resolution_ok=resolution_ok,
        momentum_uncertainty=hbar / (2.0 * delta_l),
        dwell_time=dwell,
        dwell_time_limit=2.0 * mass / (hbar * kap ** 2),
        photon_energy_spread=spread,
        energy_uncertainty_floor=floor,
        barrier_deficit=v0 - e,
        chain_holds=bool(resolution_ok and spread >= floor * (1.0 - 1e-12)),
        recoil_ratio=recoil,
    )


def rect_transmission_analytic(e, v0: float, d: float, mass: float = 1.0, hbar: float = 1.0):
    """Plane-wave transmission through a rectangular barrier of height v0 and width d."""
    scalar = np.ndim(e) == 0
    e = np.atleast_1d(np.asarray(e, dtype=float))
    if d == 0 or v0 == 0:
        out = np.ones_like(e)
        return float(out[0]) if scalar else out

    delta = v0 - e
    out = np.empty_like(e)
    below, above = delta > 0, delta < 0
    at = ~below & ~above

    with np.errstate(over="ignore"):
        kap = np.sqrt(2.0 * mass * delta[below]) / hbar
        out[below] = 1.0 / (1.0 + v0 ** 2 * np.sinh(kap * d) ** 2 / (4.0 * e[below] * delta[below]))
    kq = np.sqrt(-2.0 * mass * delta[above]) / hbar
    out[above] = 1.0 / (1.0 + v0 ** 2 * np.sin(kq * d) ** 2 / (4.0 * e[above] * -delta[above]))
    out[at] = 1.0 / (1.0 + mass * v0 * d ** 2 / (2.0 * hbar ** 2))
    return float(out[0]) if scalar else out


def packet_averaged_transmission(
    p0: float,
    sigma_p: float,
    v0: float,
    d: float,
    mass: float = 1.0,
    hbar: float = 1.0,
    n_points: int = 4001,
) -> float:
    """Transmission of a Gaussian momentum distribution, integrated energy by energy."""
    lo = max(p0 - 8.0 * sigma_p, 1e-9)
    hi = p0 + 8.0 * sigma_p
    if hi <= lo:
        return 0.0
    p = np.linspace(lo, hi, n_points)
    weight = stats.norm.pdf(p, loc=p0, scale=sigma_p)
    t = rect_transmission_analytic(p ** 2 / (2.0 * mass), v0, d, mass=mass, hbar=hbar)
    return float(integrate.simpson(weight * t, x=p))


def _region_bounds(trap_region) -> Tuple[float, float]:
    if hasattr(trap_region, "x_left"):
        return trap_region.x_left, trap_region.x_right
    lo, hi = trap_region
    return float(lo), float(hi)


def secular_frequency(
    V: np.ndarray,
    grid: Grid1D,
    trap_region,
    mass: float = 1.0,
    e: Optional[float] = None,
) -> float:
    """Harmonic frequency from a quadratic fit to the well inside trap_region.

    With `e` only the classically allowed points enter the fit.
    """
    lo, hi = _region_bounds(trap_region)
    sel = (grid.x >= lo) & (grid.x <= hi)
    if e is not None:
        sel &= V <= e
    if np.count_nonzero(sel) < 3:
        raise TurningPointError("too few well points for a harmonic fit")
    curvature = np.polyfit(grid.x[sel], V[sel], 2)[0]
    if curvature <= 0:
        raise TurningPointError("trap region has no confining curvature")
    return math.sqrt(2.0 * curvature / mass)


def _forbidden_action(V, x, start, step, e, mass, hbar):
    """Integral of kappa across the first forbidden span walking from `start`.

    Returns None when the walk reaches the grid edge still forbidden (closed
    side) and raises when no forbidden point is met (open side).
    """
    n = len(V)
    i = start
    while 0 <= i < n and V[i] <= e:
        i += step
    if not 0 <= i < n:
        raise TurningPointError(f"energy {e:g} is above the barrier; no classical turning point")
    entry = i - step
    while 0 <= i < n and V[i] > e:
        i += step
    if not 0 <= i < n:
        return None
    span = slice(min(entry, i), max(entry, i) + 1)
    kap = np.sqrt(np.clip(2.0 * mass * (V[span] - e), 0.0, None)) / hbar
    return float(integrate.trapezoid(kap, x[span]))


def wkb_exponent(V: np.ndarray, grid: Grid1D, e: float, trap_region, mass: float = 1.0, hbar: float = 1.0):
    """(left, right) barrier actions around the well minimum; None marks a closed side."""
    V = np.asarray(V, dtype=float)
    lo, hi = _region_bounds(trap_region)
    inside = np.flatnonzero((grid.x >= lo) & (grid.x <= hi))
    if inside.size == 0:
        raise TurningPointError("trap region contains no grid points")
    i_min = inside[np.argmin(V[inside])]
    if V[i_min] >= e:
        raise TurningPointError(f"energy {e:g} lies below the well bottom {V[i_min]:g}")
    left = _forbidden_action(V, grid.x, i_min, -1, e, mass, hbar)
    right = _forbidden_action(V, grid.x, i_min, +1, e, mass, hbar)
    return left, right


def wkb_decay_rate(
    V: np.ndarray,
    grid: Grid1D,
    e: float,
    trap_region,
    mass: float = 1.0,
    hbar: float = 1.0,
    omega: Optional[float] = None,
) -> float:
    """Attempt-frequency WKB escape rate (omega / 2 pi) * sum exp(-2 S) over open sides."""
    actions = [s for s in wkb_exponent(V, grid, e, trap_region, mass=mass, hbar=hbar) if s is not None]
    if not actions:
        raise TurningPointError("well is closed on both sides; no tunneling exit")
    if omega is None:
        omega = secular_frequency(np.asarray(V, dtype=float), grid, trap_region, mass=mass, e=e)
    return omega / (2.0 * math.pi) * sum(math.exp(-2.0 * s) for s in actions)


@dataclass(frozen=True)
class DecayFit:
    rate: float
    amplitude: float
    r_squared: float
    window: Tuple[float, float]
    flagged: bool

    def per_period_loss(self, omega: float) -> float:
        """Fraction lost per secular period 2 pi / omega."""
        return 1.0 - math.exp(-self.rate * 2.0 * math.pi / omega)

    def to_row(self) -> dict:
        return {
            "rate": self.rate,
            "amplitude": self.amplitude,
            "r_squared": self.r_squared,
            "t_start": self.window[0],
            "t_end": self.window[1],
            "flagged": self.flagged,
        }


def decay_time_from_period_loss(loss: float, period: float) -> float:
    """1/e lifetime for a constant fractional loss per period."""
    if not 0 < loss < 1:
        raise ValueError("loss per period must lie in (0, 1)")
    return period / -math.log1p(-loss)


def fit_exponential_decay(
    times: Sequence[float],
    survival: Sequence[float],
    skip_fraction: float = 0.1,
    window: Optional[Tuple[float, float]] = None,
    min_r2: float = 0.9,
) -> DecayFit:
    """Least-squares fit of ln P against t.

    The first `skip_fraction` of samples is dropped as transient unless an
    explicit `window` is given. Fits with r^2 below `min_r2` are returned
    flagged.
    """
    t = np.asarray(times, dtype=float)
    p = np.asarray(survival, dtype=float)
    if t.shape != p.shape or t.size < 8:
        raise ValueError("need at least 8 (t, P) samples")
    if np.any(p <= 0) or np.any(p > 1):
        raise ValueError("survival probabilities must lie in (0, 1]")

    if window is not None:
        sel = (t >= window[0]) & (t <= window[1])
    else:
        sel = np.zeros(t.size, dtype=bool)
        sel[int(math.ceil(skip_fraction * t.size)):] = True
    if np.count_nonzero(sel) < 3:
        raise ValueError("fit window holds fewer than 3 samples")

    fit = stats.linregress(t[sel], np.log(p[sel]))
    rate = -float(fit.slope)
    r2 = float(fit.rvalue ** 2)
    flagged = r2 < min_r2 or rate <= 0
    if flagged:
        logger.warning("decay fit is low quality (rate=%.4g, r2=%.3f)", rate, r2)
    return DecayFit(
        rate=rate,
        amplitude=float(math.exp(fit.intercept)),
        r_squared=r2,
        window=(float(t[sel][0]), float(t[sel][-1])),
        flagged=flagged,
    )
