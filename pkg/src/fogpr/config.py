"""Experiment configuration: YAML files validated into typed run settings.

A config file looks like::

    schema_version: 1
    task: rod_bending            # built-in name, or an inline mapping
    model: {kind: fo_gpr}
    seeds: [0, 1, 2]
    out: results/rod

An inline task may extend a built-in with ``base: <name>``; its keys then
replace the base's top-level keys.
"""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

SCHEMA_VERSION = 1

RIGHT_END = [[19, 0], [19, 1], [19, 2]]
CM = 0.01

BUILTIN_TASKS: dict[str, dict] = {
    "rod_bending": {
        "world": {"template": "rod", "params": {"actuated": RIGHT_END}},
        "features": [
            {"kind": "centroid", "scale": CM},
            {"kind": "distance", "i": 0, "j": 1, "scale": CM},
        ],
        "target": {"offset": [-0.12, 0.06, 0.08]},
    },
    "linear_world": {
        "world": {
            "template": "rod",
            "params": {"actuated": RIGHT_END, "gravity": [0.0, 0.0, 0.0], "prestretch": 0.1},
        },
        "features": [{"kind": "centroid", "scale": CM}],
        "target": {"offset": [0.1, 0.1, -0.08]},
        "warm_start": {"n": 20, "amplitude": 0.005},
    },
    "stiffening_rod": {
        "world": {
            "template": "rod",
            "params": {"actuated": RIGHT_END, "k_stretch": 50.0, "stiffening": 5000.0},
        },
        "features": [
            {"kind": "centroid", "scale": CM},
            {"kind": "distance", "i": 0, "j": 1, "scale": CM},
        ],
        "target": {"offset": [0.15, 0.05, 0.1]},
        "warm_start": {"n": 20, "amplitude": 0.005},
    },
    "sheet_bending": {
        "world": {"template": "sheet", "params": {"actuated": [[3, 0], [3, 2], [15, 2]]}},
        "features": [
            {"kind": "centroid", "scale": CM},
            {"kind": "surface_variation", "center": 5, "scale": CM},
        ],
        "target": {"offset": [-0.01, 0.03, 0.03]},
        "warm_start": {"n": 10, "amplitude": 0.005},
    },
    "peg_in_hole": {
        "world": {"template": "rod", "params": {"actuated": RIGHT_END, "feedback": [14]}},
        "features": [{"kind": "positions", "scale": CM}],
        "target": {"offset": [-0.1, 0.08, 0.05]},
        "warm_start": {"n": 20, "amplitude": 0.005},
    },
    "cloth_shaping": {
        "world": {"template": "cloth_grid", "params": {"actuated": [[5, 0], [5, 1], [5, 2]]}},
        "features": [{"kind": "fpfh_histogram", "bins": 45}],
        "target": {"offset": [-0.01, 0.005, 0.0]},
        # histogram entries move in steps of 1/34, so the tolerance spans a few bin moves
        "control": {"success_tol": 0.2, "max_steps": 200},
        "warm_start": {"n": 20, "amplitude": 0.005},
    },
}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class WorldDef(_Strict):
    template: Literal["rod", "sheet", "cloth_grid"]
    params: dict[str, Any] = Field(default_factory=dict)


class TargetDef(_Strict):
    """Goal as an offset of the actuated coordinates (m) or as explicit features."""

    offset: list[float] | None = None
    x_d: list[float] | None = None

    @model_validator(mode="after")
    def _one_of(self):
        if (self.offset is None) == (self.x_d is None):
            raise ValueError("give exactly one of 'offset' or 'x_d'")
        return self


class ControlDef(_Strict):
    eta: float | None = Field(default=None, gt=0)
    max_steps: int | None = Field(default=None, ge=0)
    success_tol: float | None = Field(default=None, gt=0)
    explore: bool | None = None
    velocity_cap: float | None = Field(default=None, gt=0)
    length_unit: float | None = Field(default=None, gt=0)

    def overrides(self) -> dict:
        return {k: v for k, v in self.model_dump().items() if v is not None}


class WarmStartDef(_Strict):
    n: int = Field(default=0, ge=0)
    amplitude: float = Field(default=0.005, gt=0)


class TaskDef(_Strict):
    name: str = "custom"
    world: WorldDef
    features: list[dict[str, Any]] = Field(min_length=1)
    target: TargetDef
    control: ControlDef = Field(default_factory=ControlDef)
    warm_start: WarmStartDef = Field(default_factory=WarmStartDef)


class ModelDef(_Strict):
    kind: Literal["fo_gpr", "standard_gpr", "offline_gpr", "linear"] = "fo_gpr"
    sigma_rbf: float = Field(default=0.6, gt=0)
    sigma_n: float = Field(default=0.001, gt=0)
    max_size: int = Field(default=300, ge=2)
    freeze_at: int = Field(default=1, ge=1)
    learning_rate: float = Field(default=2.0, gt=0)

    @property
    def label(self) -> str:
        if self.kind == "offline_gpr":
            return f"offline_gpr@{self.freeze_at}"
        if self.kind == "linear":
            return f"linear(lr={self.learning_rate:g})"
        return self.kind


class RunConfig(_Strict):
    schema_version: Literal[1]
    task: TaskDef
    model: ModelDef = Field(default_factory=ModelDef)
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    out: str = "results"
    record_timings: bool = True

    @field_validator("task", mode="before")
    @classmethod
    def _expand_task(cls, value):
        return expand_task(value)


def expand_task(spec):
    """Turn a built-in name or a ``base``-derived mapping into a full task mapping."""
    if isinstance(spec, str):
        if spec not in BUILTIN_TASKS:
            raise ValueError(f"unknown task {spec!r}; built-ins are {sorted(BUILTIN_TASKS)}")
        return {"name": spec, **copy.deepcopy(BUILTIN_TASKS[spec])}
    if isinstance(spec, dict) and "base" in spec:
        spec = dict(spec)
        base = spec.pop("base")
        if base not in BUILTIN_TASKS:
            raise ValueError(f"unknown base task {base!r}; built-ins are {sorted(BUILTIN_TASKS)}")
        merged = {"name": base, **copy.deepcopy(BUILTIN_TASKS[base])}
        merged.update(spec)
        return merged
    return spec


def _line_of(node, loc) -> int | None:
    """1-based source line of the YAML node at path ``loc``, or of its nearest ancestor."""
    line = None
    for key in loc:
        if node is None:
            break
        line = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            node = next((v for k, v in node.value if k.value == key), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            node = None
    if node is not None:
        line = node.start_mark.line + 1
    return line


def _format_errors(exc: ValidationError, root, source: str) -> str:
    lines = []
    for err in exc.errors():
        loc = list(err["loc"])
        path = ".".join(str(p) for p in loc) or "<root>"
        where = _line_of(root, loc) if root is not None else None
        at = f" (line {where})" if where else ""
        msg = err["msg"].removeprefix("Value error, ")
        lines.append(f"{source}: {path}{at}: {msg}")
    return "\n".join(lines)


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: not valid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    if "schema_version" not in data:
        raise ConfigError(f"{source}: schema_version: missing (this build reads version {SCHEMA_VERSION})")
    if data["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"{source}: schema_version (line {_line_of(root, ['schema_version'])}): "
            f"unsupported version {data['schema_version']!r}, expected {SCHEMA_VERSION}"
        )
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc, root, source)) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    return parse_config(text, str(path))
