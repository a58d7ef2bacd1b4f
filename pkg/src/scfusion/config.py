"""Run configuration: one YAML document covering every tunable.

Unknown keys are rejected and errors name the offending line and dotted key.
Every field has a default, so an empty document is a complete configuration.
The single top-level ``seed`` drives all randomness; sub-sections have no
seeds of their own.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .audio import SpectrogramConfig
from .core import GROUPS, AreaParams, ScfModel
from .data import SCENARIOS, SynthConfig
from .errors import ConfigurationError
from .trainer import ConcatBaseline, TrainConfig

FUSIONS = ("scf", "concat")


@dataclass(frozen=True)
class ScfConfig:
    grid: tuple[int, int] = (17, 17)
    steps: int = 15
    trainable: tuple[str, ...] = ("rf",)
    rf_scale: float = 0.05
    feedback: float = 1.0
    gain: float = 10.0
    unimodal: AreaParams = field(default_factory=AreaParams)
    multimodal: AreaParams = field(default_factory=AreaParams)

    def __post_init__(self):
        bad = set(self.trainable) - set(GROUPS)
        if bad:
            raise ConfigurationError(f"unknown trainable groups {sorted(bad)}; choose from {GROUPS}")
        if self.steps < 0:
            raise ConfigurationError("steps must be >= 0")
        if len(self.grid) != 2 or min(self.grid) < 1:
            raise ConfigurationError(f"grid must be two positive integers, got {self.grid}")

    def build(self, dims, seed) -> ScfModel:
        return ScfModel.create(
            dims,
            tuple(self.grid),
            params=self.unimodal,
            multimodal=self.multimodal,
            feedback=self.feedback,
            gain=self.gain,
            steps=self.steps,
            trainable=self.trainable,
            rf_scale=self.rf_scale,
            seed=seed,
        )


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output_dir: str = "runs"
    fusion: str = "scf"
    scenario: str = "independent"
    folds: int = 5
    scf: ScfConfig = field(default_factory=ScfConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    spectrogram: SpectrogramConfig = field(default_factory=SpectrogramConfig)

    def __post_init__(self):
        if self.fusion not in FUSIONS:
            raise ConfigurationError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.scenario not in SCENARIOS:
            raise ConfigurationError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.folds < 2:
            raise ConfigurationError("folds must be >= 2")

    # all randomness flows from ``seed``
    def synth_config(self) -> SynthConfig:
        return dataclasses.replace(self.synth, seed=derive_seed(self.seed, "synth"))

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=derive_seed(self.seed, "train"))

    def make_fuser(self, dims, seed: int):
        if self.fusion == "concat":
            return ConcatBaseline()
        return self.scf.build(dims, seed)


def derive_seed(seed: int, purpose: str) -> int:
    tag = int.from_bytes(purpose.encode(), "little") % (2**32)
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


# sub-section seeds are derived, never configured
_HIDDEN = {SynthConfig: {"seed"}, TrainConfig: {"seed"}}


def _fields(cls):
    hidden = _HIDDEN.get(cls, set())
    return {f.name: f for f in dataclasses.fields(cls) if f.name not in hidden}


def _default_of(f: dataclasses.Field):
    if f.default is not dataclasses.MISSING:
        return f.default
    return f.default_factory()


def _line(node) -> int:
    return node.start_mark.line + 1


def _build(cls, node, path: str):
    if node is None:
        return cls()
    if not isinstance(node, yaml.MappingNode):
        raise ConfigurationError(f"line {_line(node)}: '{path or '<root>'}' must be a mapping")
    known = _fields(cls)
    kwargs: dict[str, Any] = {}
    for key_node, value_node in node.value:
        key = key_node.value
        dotted = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigurationError(f"line {_line(key_node)}: unknown key '{dotted}'")
        if key in kwargs:
            raise ConfigurationError(f"line {_line(key_node)}: duplicate key '{dotted}'")
        default = _default_of(known[key])
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value_node, dotted)
        else:
            kwargs[key] = _scalar(value_node, default, dotted)
    try:
        return cls(**kwargs)
    except (ConfigurationError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"line {_line(node)}: invalid '{path or '<root>'}': {exc}") from exc


def _scalar(node, default, dotted: str):
    value = yaml.safe_load(yaml.serialize(node))
    where = f"line {_line(node)}: key '{dotted}'"
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigurationError(f"{where} expects a list")
        return tuple(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigurationError(f"{where} expects true/false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{where} expects an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{where} expects a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigurationError(f"{where} expects a string, got {value!r}")
        return value
    return value


def parse_config(text: str) -> RunConfig:
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigurationError(f"{where}malformed YAML: {getattr(exc, 'problem', exc)}") from exc
    return _build(RunConfig, node, "")


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def config_to_dict(cfg) -> dict:
    out = {}
    for name in _fields(type(cfg)):
        value = getattr(cfg, name)
        if dataclasses.is_dataclass(value):
            out[name] = config_to_dict(value)
        elif isinstance(value, tuple):
            out[name] = list(value)
        else:
            out[name] = value
    return out


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


def config_from_dict(data: dict) -> RunConfig:
    return parse_config(yaml.safe_dump(data, sort_keys=False))
