"""Measurement event records and the probe-energy ledger.

The probe field is not simulated: whatever energy the atom gains in an event
is booked as a loss of the probe.
"""
from dataclasses import asdict, dataclass, field
from typing import Iterable, List, Optional, Union

import numpy as np
import pandas as pd

from sim.errors import MeasurementError

LEDGER_COLUMNS = ["traj_id", "time", "kind", "outcome", "probability", "delta_e_atom", "post_in_barrier"]
AUDIT_COLUMNS = [
    "budget", "barrier_deficit", "budget_over_deficit", "n_events", "n_in_barrier",
    "exceed_fraction", "mean_gain_in_barrier", "c",
]


@dataclass(frozen=True)
class MeasurementEvent:
    time: float
    kind: str
    outcome: Union[int, str]
    probability: float
    delta_e_atom: float
    post_in_barrier: float
    traj_id: int = 0

    def __post_init__(self):
        if not 0.0 < self.probability <= 1.0 + 1e-12:
            raise MeasurementError(f"event probability {self.probability} outside (0, 1]")
        if not np.isfinite(self.delta_e_atom):
            raise MeasurementError("event energy change is not finite")

    @property
    def in_barrier(self) -> bool:
        if self.kind == "dark_spot":
            return self.outcome == "null"
        return self.post_in_barrier > 0.5


@dataclass
class EventLedger:
    events: List[MeasurementEvent] = field(default_factory=list)

    def record(self, event: MeasurementEvent):
        self.events.append(event)

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    @property
    def total_atom_gain(self) -> float:
        return float(sum(ev.delta_e_atom for ev in self.events))

    @property
    def attributed_probe_loss(self) -> float:
        return -self.total_atom_gain

    def to_frame(self) -> pd.DataFrame:
        rows = [{col: getattr(ev, col) for col in LEDGER_COLUMNS} for ev in self.events]
        frame = pd.DataFrame(rows, columns=LEDGER_COLUMNS)
        frame["outcome"] = frame["outcome"].astype(str)
        return frame

    @classmethod
    def merge(cls, ledgers: Iterable["EventLedger"]) -> "EventLedger":
        """Concatenate and order by (traj_id, time); the result does not depend on input order."""
        events = [ev for ledger in ledgers for ev in ledger.events]
        events.sort(key=lambda ev: (ev.traj_id, ev.time))
        return cls(events)


@dataclass(frozen=True)
class AuditReport:
    budget: float
    barrier_deficit: float
    budget_over_deficit: float
    n_events: int
    n_in_barrier: int
    exceed_fraction: float
    mean_gain_in_barrier: Optional[float]
    c: Optional[float]

    def to_row(self) -> dict:
        row = asdict(self)
        return {col: row[col] for col in AUDIT_COLUMNS}


def bound_audit(ledger: EventLedger, v0: float, e: float, model, hbar: float = 1.0) -> AuditReport:
    """Compare per-event atom energy gains against the probe budget hbar / pulse_duration.

    `c` is mean(delta_e_atom | in-barrier outcome) in units of the budget; it is
    reported, not enforced.
    """
    pulse = getattr(model, "pulse_duration", None)
    if pulse is None or pulse <= 0:
        raise MeasurementError("bound audit needs the model's pulse_duration")
    budget = hbar / pulse
    gains = np.array([ev.delta_e_atom for ev in ledger.events], dtype=float)
    in_barrier = [ev.delta_e_atom for ev in ledger.events if ev.in_barrier]
    mean_in = float(np.mean(in_barrier)) if in_barrier else None
    return AuditReport(
        budget=budget,
        barrier_deficit=v0 - e,
        budget_over_deficit=budget / (v0 - e),
        n_events=len(gains),
        n_in_barrier=len(in_barrier),
        exceed_fraction=float(np.mean(gains > budget)) if gains.size else 0.0,
        mean_gain_in_barrier=mean_in,
        c=None if mean_in is None else mean_in / budget,
    )
