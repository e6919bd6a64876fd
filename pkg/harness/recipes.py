"""Built-in experiment configs.

Each recipe is plain TOML text so that `recipe <name>` and `run <file>` go
through the same parser.
"""
from typing import Dict, List, Optional

from harness.schema import ExperimentConfig, parse_config
from sim.errors import ConfigError

_SCAN_DWELL = ", ".join(f"[{-1.0 + 0.2 * i:.1f}, 0.09090909090909091]" for i in range(11))

RECIPES: Dict[str, str] = {
    # flat-topped barrier painted by a scanned beam, transmission vs incident momentum
    "taejon-barrier": f"""
name = "taejon-barrier"

[grid]
x_min = -160
x_max = 96
n = 2048

[potential]
kind = "scanned_beam"
u0 = "40 nK"
waist = 0.5
dwell = [{_SCAN_DWELL}]

[initial]
kind = "gaussian"
x0 = -80
p0 = 1.0
sigma = 10

[propagator]
dt = 1.5e-3
n_steps = 250000
absorber = {{ width = 16, strength = 3 }}

[scatter]
momenta = [0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0, 2.2]
""",
    "kick-cool": """
name = "kick-cool"
seed = 7

[kick_cool]
n_particles = 100000
sigma_x = "90 um"
temperature = "6 uK"
t_free = "10 ms"
""",
    # harmonic well opened on the right and closed by a dipole barrier
    "aux-trap-decay": """
name = "aux-trap-decay"

[grid]
x_min = -16
x_max = 48
n = 512

[potential]
kind = "composite"
parts = [
    { kind = "harmonic", omega = 1.0, center = 0.0, support = [-6.0, 1.5] },
    { kind = "rectangular", v0 = 2.387, width = 1.0, center = 2.0 },
]

[propagator]
dt = 1.5e-3
absorber = { width = 8, strength = 2 }

[decay]
trap_region = { x_left = -6.0, x_right = 1.5 }
barrier = { x_left = 1.5, x_right = 2.5 }
duration = 400
sample_every = 10
""",
    "bright-collapse": """
name = "bright-collapse"
seed = 11

[grid]
x_min = -64
x_max = 64
n = 512

[potential]
kind = "rectangular"
v0 = 1.0
width = 3.0

[initial]
kind = "gaussian"
x0 = -30
p0 = 1.0
sigma = 4

[propagator]
dt = 0.006
n_steps = 30000
absorber = { width = 16, strength = 3 }

[measure_ensemble]
n_traj = 200
n_events = 3
model = { kind = "bright", delta_l = 0.5, pulse_duration = 2.0 }
""",
    "dark-spot": """
name = "dark-spot"
seed = 12

[grid]
x_min = -64
x_max = 64
n = 512

[potential]
kind = "rectangular"
v0 = 1.0
width = 3.0

[initial]
kind = "gaussian"
x0 = -30
p0 = 1.0
sigma = 4

[propagator]
dt = 0.006
n_steps = 30000
absorber = { width = 16, strength = 3 }

[measure_ensemble]
n_traj = 200
n_events = 1
model = { kind = "dark_spot", region = { x_left = -1.5, x_right = 1.5 }, pulse_duration = 2.0 }
""",
    # reference enhancement run: kappa d = 5, delta_l = 0.5 / kappa
    "oabp": """
name = "oabp"
seed = 2024

[grid]
x_min = -64
x_max = 64
n = 512

[potential]
kind = "rectangular"
v0 = 1.0
width = 5.0

[initial]
kind = "gaussian"
x0 = -30
p0 = 1.0
sigma = 4

[propagator]
dt = 0.006
n_steps = 30000
absorber = { width = 16, strength = 3 }

[measure_ensemble]
n_traj = 1000
n_events = 3
model = { kind = "bright", delta_l = 0.5, pulse_duration = 2.0 }
""",
    # a shallow dimple with a single bound state lifts the trap ground state out of a
    # thermal cloud (kT ~ 14 trap quanta) and parks it at x = 6, below the trap minimum
    "sweep-select": """
name = "sweep-select"
seed = 5

[grid]
x_min = -32
x_max = 32
n = 256

[potential]
kind = "harmonic"
omega = 0.25

[propagator]
dt = 0.005

[sweep_select]
aux_region = { x_left = 4.5, x_right = 7.5 }
thermal = { temperature = 3.44, n_states = 48, n_samples = 1000 }
segments = [%s]
""" % ", ".join(
        ["{ duration = 0.5, center = 0.0, width = 1.0, height = 0.0 }"]
        + [f"{{ duration = 1.0, center = 0.0, width = 1.0, height = {-3.0 * (i + 1) / 40:.6f} }}" for i in range(40)]
        + [f"{{ duration = 0.5, center = {6.0 * (i + 1) / 120:.6f}, width = 1.0, height = -3.0 }}" for i in range(120)]
    ),
    "bounds": """
name = "bounds"

[bounds]
v0 = 1.0
e = 0.5
delta_l = [0.25, 0.5, 1.0, 2.0]
eta = 0.01
""",
}


def recipes() -> List[str]:
    return sorted(RECIPES)


def recipe_text(name: str) -> str:
    if name not in RECIPES:
        raise ConfigError(f"unknown recipe '{name}'; choose from {', '.join(recipes())}")
    return RECIPES[name].lstrip()


def recipe_config(name: str, seed: Optional[int] = None) -> ExperimentConfig:
    config = parse_config(recipe_text(name))
    if seed is not None:
        config = config.model_copy(update={"seed": seed})
    return config
