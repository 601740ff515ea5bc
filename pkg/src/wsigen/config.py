"""Run configuration: a flat, diffable key = value text format.

Every field serializes to one line; parsing is dataclass-driven so the
round trip parse(serialize(cfg)) == cfg holds exactly (floats use repr).
Any key can be overridden through an environment variable named
WSIGEN_<KEY-IN-UPPERCASE>.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import InvalidParameter
from .guidance import Convention
from .pyramid import DEFAULT_MEMMAP_THRESHOLD, StagePlan
from .schedule import NoiseSchedule, build_schedule
from .solver import SolverMethod

ENV_PREFIX = "WSIGEN_"


@dataclass(frozen=True)
class RunConfig:
    """Everything a reproducible run needs, in one serializable record."""

    # coarse-to-fine plan
    stages: int = 3
    factor: int = 2
    patch_size: int = 32
    channels: int = 3
    # schedule
    num_steps: int = 40
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    # guidance
    relaxation: int = 28
    convention: str = "alg1"
    # preconditioning
    sigma_data: float = 0.5
    # initial image
    initial_resolution_min: float = 80.0
    initial_resolution_max: float = 150.0
    background_color: tuple[float, ...] | None = None
    # denoiser reference: builtin:<name> or a path to an oracle file
    denoiser: str = "builtin:tissue-demo"
    # execution
    seed: int = 0
    workers: int = 1
    output_dir: str = "out"
    precision: str = "double"
    method: str = "heun"
    tile_size: int | None = None
    memmap_threshold: int = DEFAULT_MEMMAP_THRESHOLD

    def __post_init__(self):
        if self.precision not in ("single", "double"):
            raise InvalidParameter(f"precision must be single or double, got {self.precision!r}")
        if self.method not in tuple(m.value for m in SolverMethod):
            raise InvalidParameter(f"method must be heun or euler, got {self.method!r}")
        if self.convention not in tuple(c.value for c in Convention):
            raise InvalidParameter(f"convention must be alg1 or inverted, got {self.convention!r}")
        if not 0 <= self.relaxation <= self.num_steps:
            raise InvalidParameter(
                f"relaxation {self.relaxation} outside [0, {self.num_steps}]")
        if self.workers < 1:
            raise InvalidParameter(f"worker count must be positive, got {self.workers}")
        if self.seed < 0:
            raise InvalidParameter(f"seed must be a non-negative integer, got {self.seed}")
        if self.tile_size is not None and (self.tile_size < 1
                                           or self.patch_size % self.tile_size):
            raise InvalidParameter(
                f"tile size {self.tile_size} must divide the patch size {self.patch_size}")

    def to_plan(self) -> StagePlan:
        return StagePlan(stages=self.stages, factor=self.factor,
                         patch_size=self.patch_size, num_steps=self.num_steps,
                         relaxation=self.relaxation,
                         initial_resolution_range=(self.initial_resolution_min,
                                                   self.initial_resolution_max),
                         background_color=self.background_color,
                         channels=self.channels)

    def to_schedule(self) -> NoiseSchedule:
        return build_schedule(self.num_steps, self.sigma_min, self.sigma_max, self.rho)

    @property
    def solver_method(self) -> SolverMethod:
        return SolverMethod(self.method)

    @property
    def guidance_convention(self) -> Convention:
        return Convention(self.convention)

    @property
    def dtype(self):
        import numpy as np
        return np.float32 if self.precision == "single" else np.float64

    @property
    def effective_tile_size(self) -> int:
        return self.tile_size if self.tile_size is not None else self.patch_size


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    return str(value)


def _parse_value(text: str, field: dataclasses.Field):
    text = text.strip()
    base = field.type
    if text == "none":
        return None
    if base in ("int", "int | None"):
        return int(text)
    if base == "float":
        return float(text)
    if base == "str":
        return text
    if base == "tuple[float, ...] | None":
        return tuple(float(v) for v in text.split(","))
    raise InvalidParameter(f"cannot parse config field {field.name!r} of type {base!r}")


def serialize_config(cfg: RunConfig) -> str:
    lines = [f"{f.name} = {_format_value(getattr(cfg, f.name))}"
             for f in dataclasses.fields(cfg)]
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> RunConfig:
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidParameter(f"config line {lineno} is not 'key = value': {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in fields:
            raise InvalidParameter(f"unknown config key {key!r} on line {lineno}")
        values[key] = _parse_value(value, fields[key])
    return RunConfig(**values)


def apply_env_overrides(cfg: RunConfig, env=None) -> RunConfig:
    """Override any config key through WSIGEN_<KEY> environment variables."""
    env = os.environ if env is None else env
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    overrides = {}
    for name, field in fields.items():
        raw = env.get(ENV_PREFIX + name.upper())
        if raw is not None:
            overrides[name] = _parse_value(raw, field)
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def load_config(path, env=None) -> RunConfig:
    cfg = parse_config(Path(path).read_text(encoding="utf-8"))
    return apply_env_overrides(cfg, env)


def config_echo(cfg: RunConfig) -> dict[str, str]:
    """Flat key -> formatted-value view used by the manifest writer."""
    return {f.name: _format_value(getattr(cfg, f.name))
            for f in dataclasses.fields(cfg)}
