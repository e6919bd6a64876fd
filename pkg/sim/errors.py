from typing import Optional


class SimulationError(Exception):
    pass


class GridError(SimulationError, ValueError):
    pass


class StabilityError(SimulationError, ValueError):

    def __init__(self, message: str, suggested_dt: Optional[float] = None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class ConvergenceError(SimulationError, RuntimeError):

    def __init__(self, message: str, best_residual: float):
        super().__init__(f"{message} (best residual {best_residual:.3e})")
        self.best_residual = best_residual


class IncidenceError(SimulationError, ValueError):
    # initial packet overlaps the barrier or is not moving toward it
    pass


class TurningPointError(SimulationError, ValueError):
    pass


class MeasurementError(SimulationError, ValueError):
    pass


class ConfigError(SimulationError, ValueError):
    """Invalid experiment configuration; `key` names the offending entry."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key:
            where.append(f"key '{key}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
        self.key = key
        self.line = line
