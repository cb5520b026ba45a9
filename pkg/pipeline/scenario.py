"""
Scenario files: flat INI text describing the algebra, the projection path, solver settings and
sample counts of one experiment, and the objects built from them.

    [scenario]   name, seed (required)
    [algebra]    dimension, ranks (required), blocks
    [path]       generator (required), entries, t_min, t_max, unitary_step, stepper
    [solver]     backend, rk4_step, contraction_target, picard_tolerance, max_iterations,
                 quadrature_nodes, max_subinterval
    [sampling]   samples, pairs, initial_conditions, grid_points, suite_grid, constant_grid,
                 check_times
    [thresholds] integrated, algebraic, unitary, unitarity, atol
    [output]     quantities

generator is one of: zero | rotation(i, j, speed) | random(scale) | matrix. A matrix generator
reads `entries`, rows separated by ';' and entries by ',' (Python complex literals, e.g. 0.5j).
"""
from __future__ import annotations

import configparser
import dataclasses
import io
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from algebra.errors import ConfigurationError
from algebra.expectations import ExpectationPath
from algebra.projections import (
    ConstantGenerator,
    ProjectionSystem,
    RotationPath,
    make_rotation_path,
    random_generator,
    rotation_generator,
)
from algebra.tracial import DEFAULT_ATOL, TracialAlgebra
from solvers.transport import PicardConfig, Propagator, propagator
from utils.settings import Settings, get_settings

logger = logging.getLogger(__name__)

QUANTITIES = (
    "norm",
    "isometry_residual",
    "range_residual",
    "intertwining_residual",
    "codiagonal_residual",
    "unitarity_residual",
    "unitary_intertwining_residual",
    "omega_gap",
)
DEFAULT_CHECK_TIMES = (0.25, 0.5, 1.0)
MAX_SEED = 2 ** 64 - 1

GENERATOR_PATTERN = re.compile(r"^\s*(zero|rotation|random|matrix)\s*(?:\(([^)]*)\))?\s*$")


def _option(section: str, **kwargs):
    return field(metadata={"section": section}, **kwargs)


@dataclass(frozen=True)
class Scenario:
    seed: int = _option("scenario")
    dimension: int = _option("algebra")
    ranks: Tuple[int, ...] = _option("algebra")
    generator: str = _option("path")
    name: str = _option("scenario", default="scenario")
    blocks: Tuple[int, ...] = _option("algebra", default=())
    entries: str = _option("path", default="")
    t_min: float = _option("path", default=0.0)
    t_max: float = _option("path", default=1.0)
    unitary_step: float = _option("path", default=1e-3)
    stepper: str = _option("path", default="magnus4")
    backend: str = _option("solver", default="reference")
    rk4_step: float = _option("solver", default=1e-3)
    contraction_target: float = _option("solver", default=0.5)
    picard_tolerance: float = _option("solver", default=1e-12)
    max_iterations: int = _option("solver", default=60)
    quadrature_nodes: int = _option("solver", default=65)
    max_subinterval: float = _option("solver", default=0.25)
    samples: int = _option("sampling", default=50)
    pairs: int = _option("sampling", default=50)
    initial_conditions: int = _option("sampling", default=20)
    grid_points: int = _option("sampling", default=1001)
    suite_grid: int = _option("sampling", default=41)
    constant_grid: int = _option("sampling", default=512)
    check_times: Tuple[float, ...] = _option("sampling", default=())
    integrated: float = _option("thresholds", default=1e-7)
    algebraic: float = _option("thresholds", default=1e-10)
    unitary: float = _option("thresholds", default=1e-8)
    unitarity: float = _option("thresholds", default=1e-9)
    atol: float = _option("thresholds", default=DEFAULT_ATOL)
    quantities: Tuple[str, ...] = _option("output", default=QUANTITIES)

    def __post_init__(self):
        validate_scenario(self)
        if not self.check_times:
            inside = tuple(t for t in DEFAULT_CHECK_TIMES if self.t_min <= t <= self.t_max)
            object.__setattr__(self, "check_times", inside or (self.t_max,))

    @property
    def interval(self) -> Tuple[float, float]:
        return self.t_min, self.t_max

    def with_seed(self, seed: Optional[int]) -> "Scenario":
        return self if seed is None else dataclasses.replace(self, seed=seed)

    def picard_config(self) -> PicardConfig:
        return PicardConfig(
            contraction_target=self.contraction_target,
            max_iterations=self.max_iterations,
            tolerance=self.picard_tolerance,
            quadrature_nodes=self.quadrature_nodes,
            max_subinterval=self.max_subinterval,
        )

    def grid(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, self.grid_points)

    def suite_times(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, self.suite_grid)


def validate_scenario(s: Scenario) -> None:
    if not 0 <= s.seed <= MAX_SEED:
        raise ConfigurationError(f"'seed' must be an unsigned 64-bit integer, got {s.seed}")
    if s.dimension < 1:
        raise ConfigurationError(f"'dimension' must be positive, got {s.dimension}")
    if not s.ranks or min(s.ranks) < 1 or sum(s.ranks) != s.dimension:
        raise ConfigurationError(f"'ranks' {list(s.ranks)} must be positive and sum to dimension {s.dimension}")
    if s.blocks and (min(s.blocks) < 1 or sum(s.blocks) != s.dimension):
        raise ConfigurationError(f"'blocks' {list(s.blocks)} must be positive and sum to dimension {s.dimension}")
    if not s.t_min <= 0.0 <= s.t_max or s.t_min == s.t_max:
        raise ConfigurationError(f"interval [{s.t_min}, {s.t_max}] ('t_min', 't_max') must contain 0")
    if not GENERATOR_PATTERN.match(s.generator):
        raise ConfigurationError(f"'generator' must be zero | rotation(i,j,speed) | random(scale) | matrix, got {s.generator!r}")
    for key in ("unitary_step", "rk4_step", "picard_tolerance", "max_subinterval",
                "integrated", "algebraic", "unitary", "unitarity", "atol"):
        if not getattr(s, key) > 0:
            raise ConfigurationError(f"'{key}' must be positive, got {getattr(s, key)}")
    if not 0.0 < s.contraction_target < 1.0:
        raise ConfigurationError(f"'contraction_target' must lie in (0, 1), got {s.contraction_target}")
    if s.backend not in ("reference", "picard"):
        raise ConfigurationError(f"'backend' must be 'reference' or 'picard', got {s.backend!r}")
    for key in ("samples", "pairs", "initial_conditions", "max_iterations"):
        if getattr(s, key) < 1:
            raise ConfigurationError(f"'{key}' must be at least 1, got {getattr(s, key)}")
    for key in ("grid_points", "suite_grid", "constant_grid"):
        if getattr(s, key) < 2:
            raise ConfigurationError(f"'{key}' must be at least 2, got {getattr(s, key)}")
    if s.quadrature_nodes < 4:
        raise ConfigurationError(f"'quadrature_nodes' must be at least 4, got {s.quadrature_nodes}")
    outside = [t for t in s.check_times if not s.t_min <= t <= s.t_max]
    if outside:
        raise ConfigurationError(f"'check_times' {outside} lie outside [{s.t_min}, {s.t_max}]")
    unknown = sorted(set(s.quantities) - set(QUANTITIES))
    if unknown:
        raise ConfigurationError(f"'quantities' has unknown names {unknown}; choose from {list(QUANTITIES)}")


# ---- INI parsing / dumping ----

def _field_types() -> Dict[str, Any]:
    return {f.name: f for f in dataclasses.fields(Scenario)}


def _parse_value(f: dataclasses.Field, raw: str):
    default_type = f.type if isinstance(f.type, str) else f.type.__name__
    items = [item.strip() for item in raw.split(",") if item.strip()]
    try:
        if default_type == "int":
            return int(raw)
        if default_type == "float":
            return float(raw)
        if default_type == "Tuple[int, ...]":
            return tuple(int(item) for item in items)
        if default_type == "Tuple[float, ...]":
            return tuple(float(item) for item in items)
        if default_type == "Tuple[str, ...]":
            return tuple(items)
    except ValueError:
        raise ConfigurationError(f"'{f.name}' has an invalid value {raw!r}") from None
    return raw.strip()


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_scenario(text: str, name: str = "scenario", settings: Optional[Settings] = None) -> Scenario:
    settings = settings or get_settings()
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed scenario file: {exc}") from None

    fields = _field_types()
    values: Dict[str, Any] = {
        "name": name,
        "backend": settings.backend,
        "integrated": settings.integrated_tol,
        "algebraic": settings.algebraic_tol,
        "atol": settings.atol,
    }
    for section in parser.sections():
        for key, raw in parser.items(section):
            f = fields.get(key)
            if f is None or f.metadata["section"] != section:
                raise ConfigurationError(f"unknown key '{key}' in section [{section}]")
            values[key] = _parse_value(f, raw)

    for f in dataclasses.fields(Scenario):
        if f.default is dataclasses.MISSING and f.name not in values:
            raise ConfigurationError(f"missing required field '{f.name}' (section [{f.metadata['section']}])")
    return Scenario(**values)


def dump_scenario(scenario: Scenario) -> str:
    """The fully resolved scenario, defaults included, in the INI format it was read from."""
    parser = configparser.ConfigParser(interpolation=None)
    for f in dataclasses.fields(Scenario):
        section = f.metadata["section"]
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, f.name, _format_value(getattr(scenario, f.name)))
    buffer = io.StringIO()
    parser.write(buffer)
    return buffer.getvalue()


def load_scenario(path, seed: Optional[int] = None, settings: Optional[Settings] = None) -> Scenario:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return parse_scenario(text, name=path.stem, settings=settings).with_seed(seed)


# ---- Building the objects ----

def build_generator(scenario: Scenario, algebra: TracialAlgebra):
    kind, args = GENERATOR_PATTERN.match(scenario.generator).groups()
    args = [a.strip() for a in (args or "").split(",") if a.strip()]
    n = algebra.dim
    try:
        if kind == "zero":
            return ConstantGenerator(np.zeros((n, n)))
        if kind == "rotation":
            if len(args) not in (2, 3):
                raise ConfigurationError(f"rotation needs (i, j[, speed]), got {scenario.generator!r}")
            speed = float(args[2]) if len(args) == 3 else 1.0
            return rotation_generator(n, int(args[0]), int(args[1]), speed)
        if kind == "random":
            scale = float(args[0]) if args else 1.0
            return random_generator(algebra, scenario.seed, scale, stream="path")
        rows = [row for row in scenario.entries.split(";") if row.strip()]
        matrix = np.array([[complex(cell.replace(" ", "")) for cell in row.split(",")] for row in rows])
    except ValueError as exc:
        raise ConfigurationError(f"invalid generator specification {scenario.generator!r}: {exc}") from None
    if matrix.shape != (n, n):
        raise ConfigurationError(f"'entries' must describe a {n}x{n} matrix, got shape {matrix.shape}")
    return ConstantGenerator(matrix)


@dataclass
class ScenarioBuild:
    scenario: Scenario
    algebra: TracialAlgebra
    base: ProjectionSystem
    path: RotationPath
    expectation_path: ExpectationPath
    _propagators: Dict[str, Propagator] = field(default_factory=dict, repr=False)

    def propagator(self, backend: Optional[str] = None) -> Propagator:
        backend = backend or self.scenario.backend
        if backend not in self._propagators:
            self._propagators[backend] = propagator(
                self.expectation_path, backend, step=self.scenario.rk4_step, config=self.scenario.picard_config()
            )
        return self._propagators[backend]


def build_scenario(scenario: Scenario) -> ScenarioBuild:
    algebra = TracialAlgebra.direct_sum(scenario.blocks) if scenario.blocks else TracialAlgebra(scenario.dimension)
    base = ProjectionSystem.from_ranks(algebra, scenario.ranks)
    generator = build_generator(scenario, algebra)
    path = make_rotation_path(base, generator, scenario.interval, scenario.unitary_step, scenario.stepper,
                              tol=scenario.atol)
    logger.info("scenario %s: M_%d, ranks %s, generator %s, interval %s",
                scenario.name, scenario.dimension, list(scenario.ranks), scenario.generator, scenario.interval)
    return ScenarioBuild(scenario, algebra, base, path, ExpectationPath(path))


class ScenarioLoader:
    def run(self, input_data: Dict[str, Any]) -> Dict[str, Any]:
        scenario = load_scenario(input_data["config"], seed=input_data.get("seed"), settings=input_data.get("settings"))
        output = {"scenario": scenario}
        if input_data.get("build", True):
            output["build"] = build_scenario(scenario)
        return output
