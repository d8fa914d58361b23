"""Run configuration: a nested JSON document validated into a RunConfig.

Example (see test_inputs.json for a complete file):

    {
      "equation": "schrodinger",
      "domain": {"kind": "interval", "extents": [[0, 60]], "nodes_per_axis": 1201},
      "potential": {"kind": "zero"},
      "boundary": {"kappa": 1.0, "nu": 0.0, "faces": {"x0:lower": {"kappa": 0.0}}},
      "time": {"tau": 0.01, "t_max": 55.0},
      "initial_state": {"kind": "gaussian", "packets": [{"center": 30, "width": 4, "k0": 1}]},
      "seed": 7
    }

Semantic errors raise ConfigError naming the dotted field and the line it sits on.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

from src.domain.grid import SIDES, DomainSpec
from src.instruments.settings import SolverSettings
from src.operators.operator_matrix import BoundaryParams, Units
from src.operators.potentials import POTENTIAL_KINDS
from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)

EQUATIONS = ("schrodinger", "dirac")
STATE_KINDS = ("gaussian", "eigenmode", "csv", "random")
SYMMETRIES = ("none", "symmetric", "antisymmetric")


def locate(text, dotted):
    """Line of the deepest key of `dotted` present in the raw JSON text, or None."""
    if not text:
        return None
    pos, found = 0, None
    for part in dotted.split("."):
        hit = text.find(f'"{part}"', pos)
        if hit < 0:
            break
        pos = found = hit
    return None if found is None else text.count("\n", 0, found) + 1


@dataclass(frozen=True)
class RunConfig:
    equation: str
    domain: DomainSpec
    nodes_per_axis: tuple
    boundary: Optional[BoundaryParams]
    theta: float
    dirac_mass: float
    tau: float
    n_steps: int
    units: Units
    potential: dict
    stage_potentials: list
    initial_state: dict
    seed: int
    output_dir: Optional[str] = None
    cascade: dict = field(default_factory=dict)
    bench: dict = field(default_factory=dict)

    @property
    def t_max(self):
        return self.n_steps * self.tau

    @property
    def particle_count(self):
        return self.domain.particle_count


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool)


class _Reader:
    """Typed access to the JSON tree with field-named errors."""

    def __init__(self, data, text):
        self.data = data
        self.text = text

    def fail(self, dotted, message=None):
        raise ConfigError(dotted, message, locate(self.text, dotted))

    def get(self, dotted, default=KeyError):
        node = self.data
        for part in dotted.split("."):
            if not isinstance(node, dict) or part not in node:
                if default is KeyError:
                    self.fail(dotted)
                return default
            node = node[part]
        return node

    def table(self, dotted, default=KeyError):
        value = self.get(dotted, default)
        if not isinstance(value, dict):
            self.fail(dotted, f"{dotted} must be an object, got {value!r}")
        return value

    def node_counts(self, dotted, dim):
        value = self.get(dotted)
        values = [value] * dim if _is_number(value) else value
        if not isinstance(values, list) or not all(_is_number(n) and float(n).is_integer() for n in values):
            self.fail(dotted, f"{dotted} must be an integer or a list of integers, got {value!r}")
        return tuple(int(n) for n in values)

    def number(self, dotted, default=KeyError, positive=False, kind=float):
        value = self.get(dotted, default)
        if value is None:
            return None
        try:
            value = kind(value)
        except (TypeError, ValueError):
            self.fail(dotted, f"{dotted} must be a number, got {value!r}")
        if positive and not value > 0:
            self.fail(dotted, f"{dotted} must be positive, got {value}")
        return value


def _face_overrides(reader, faces):
    overrides = {}
    for key, values in faces.items():
        axis, _, side = key.partition(":")
        if not axis.startswith("x") or not axis[1:].isdigit() or side not in SIDES:
            reader.fail(f"boundary.faces.{key}", f"boundary.faces key '{key}' must look like 'x0:lower'")
        if not isinstance(values, dict):
            reader.fail(f"boundary.faces.{key}", f"boundary.faces.{key} must be an object")
        overrides[(int(axis[1:]), side)] = {k: float(v) for k, v in values.items() if k in ("kappa", "nu")}
    return overrides


def parse_run_config(data, text=None, settings: SolverSettings = None, allow_emitting=False,
                     seed=None, output_dir=None) -> RunConfig:
    """Validate a decoded run config; keyword overrides come from the command line."""
    reader = _Reader(data, text)
    if not isinstance(data, dict):
        reader.fail("config", "Run config must be a JSON object")
    equation = reader.get("equation", "schrodinger")
    if equation not in EQUATIONS:
        reader.fail("equation", f"equation must be one of {EQUATIONS}, got '{equation}'")

    extents = reader.get("domain.extents")
    kind = reader.get("domain.kind", "interval")
    particles = reader.number("domain.particle_count", 1, positive=True, kind=int)
    try:
        domain = DomainSpec(kind, tuple(tuple(e) for e in extents), particles)
    except (TypeError, ValueError) as e:
        reader.fail("domain", f"domain: {str(e)}")
    nodes = reader.node_counts("domain.nodes_per_axis", domain.dim)
    if len(nodes) != domain.dim or min(nodes) < 3:
        reader.fail("domain.nodes_per_axis", f"domain.nodes_per_axis needs {domain.dim} values >= 3, got {nodes}")

    settings = settings or SolverSettings()
    try:
        units = settings.units(reader.table("units", {}))
    except ValueError as e:
        reader.fail("units", f"units: {str(e)}")

    boundary, theta = None, 0.0
    dirac_mass = units.mass
    if equation == "schrodinger":
        kappa = reader.number("boundary.kappa")
        nu = reader.number("boundary.nu", 0.0)
        faces = _face_overrides(reader, reader.table("boundary.faces", {}))
        try:
            boundary = BoundaryParams(kappa, nu, faces, allow_emitting)
        except ValueError as e:
            reader.fail("boundary.kappa", f"boundary.kappa: {str(e)}")
    else:
        theta = reader.number("boundary.theta")
        dirac_mass = reader.number("dirac.mass", units.mass)
        if domain.dim != 1 or domain.particle_count != 1:
            reader.fail("domain", "The Dirac equation runs on a one-particle interval")

    tau = reader.number("time.tau", positive=True)
    steps = reader.number("time.steps", None, positive=True, kind=int)
    if steps is None:
        t_max = reader.number("time.t_max", positive=True)
        steps = max(1, int(round(t_max / tau)))

    potential = reader.table("potential", {"kind": "zero"})
    if potential.get("kind", "zero") not in POTENTIAL_KINDS:
        reader.fail("potential.kind", f"potential.kind must be one of {POTENTIAL_KINDS}")
    stage_potentials = reader.get("stage_potentials", None)
    if stage_potentials is None:
        stage_potentials = [potential]
    elif not isinstance(stage_potentials, list) or len(stage_potentials) != domain.particle_count:
        reader.fail("stage_potentials", f"stage_potentials needs one entry per stage "
                                        f"({domain.particle_count}), got {stage_potentials!r}")
    elif not all(isinstance(p, dict) for p in stage_potentials):
        reader.fail("stage_potentials", "stage_potentials entries must be objects")

    initial_state = reader.table("initial_state", {"kind": "gaussian"})
    if initial_state.get("kind", "gaussian") not in STATE_KINDS:
        reader.fail("initial_state.kind", f"initial_state.kind must be one of {STATE_KINDS}")
    if initial_state.get("symmetry", "none") not in SYMMETRIES:
        reader.fail("initial_state.symmetry", f"initial_state.symmetry must be one of {SYMMETRIES}")

    seed = seed if seed is not None else reader.number("seed", 0, kind=int)
    if seed < 0:
        reader.fail("seed", f"seed must be non-negative, got {seed}")

    cascade = dict(reader.table("cascade", {}))
    if cascade.get("exhaustive") and domain.particle_count != 2:
        reader.fail("cascade.exhaustive", "cascade.exhaustive needs domain.particle_count = 2")

    return RunConfig(equation, domain, nodes, boundary, theta, dirac_mass, tau, steps, units, potential,
                     list(stage_potentials), initial_state, int(seed),
                     output_dir or reader.get("output_dir", None), cascade, dict(reader.table("bench", {})))


def load_run_config(path, settings: SolverSettings = None, **overrides) -> RunConfig:
    """Read and validate the JSON run config at `path`."""
    try:
        with open(path, 'r') as f:
            text = f.read()
    except OSError as e:
        raise ConfigError("config", f"Cannot read run config '{path}': {str(e)}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("config", f"Invalid JSON in '{path}': {e.msg} at column {e.colno}", e.lineno)
    config = parse_run_config(data, text, settings, **overrides)
    logger.info(f"Loaded {config.equation} run config from {path}: {config.domain.kind}, "
                f"{config.nodes_per_axis} nodes, {config.n_steps} steps of {config.tau}")
    return config
