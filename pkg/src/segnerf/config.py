"""Single merged pipeline configuration, loadable from TOML or JSON with
CLI-flag overrides. Unknown keys are rejected; every field has a default.

One global seed fans out to per-stage seeds by fixed offsets so a config file
plus seed reproduces every artifact.
"""

from __future__ import annotations

import dataclasses
import json
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .occlusion import OcclusionConfig
from .propagation import PropagationConfig
from .selfprompt import SelfPromptConfig
from .field import TrainConfig

SEED_OFFSET_SYNTH = 1
SEED_OFFSET_PROPAGATION = 2
SEED_OFFSET_SELFPROMPT = 3
SEED_OFFSET_TRAIN = 4


@dataclass(frozen=True)
class SynthConfig:
    preset: str = "sphere"
    n_views: int = 30
    image_size: int = 128
    n_points: int = 4000
    noise_px: float = 0.5


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    backend: str = "oracle"  # "oracle" | "bridge"
    bridge_endpoint: str = ""
    bridge_timeout: float = 30.0
    synth: SynthConfig = field(default_factory=SynthConfig)
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    occlusion: OcclusionConfig = field(default_factory=OcclusionConfig)
    selfprompt: SelfPromptConfig = field(default_factory=SelfPromptConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def seeded(self) -> "PipelineConfig":
        """Fan the global seed out to the per-stage configs."""
        return replace(
            self,
            propagation=replace(self.propagation,
                                seed=self.seed + SEED_OFFSET_PROPAGATION),
            selfprompt=replace(self.selfprompt,
                               seed=self.seed + SEED_OFFSET_SELFPROMPT),
            train=replace(self.train, seed=self.seed + SEED_OFFSET_TRAIN),
        )


_SECTIONS = {
    "synth": SynthConfig,
    "propagation": PropagationConfig,
    "occlusion": OcclusionConfig,
    "selfprompt": SelfPromptConfig,
    "train": TrainConfig,
}
_TOP_LEVEL = {"seed", "backend", "bridge_endpoint", "bridge_timeout"}


def _build_section(cls, data: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {sorted(unknown)}")
    if "resolution" in data and isinstance(data.get("resolution"), list):
        data = {**data, "resolution": tuple(data["resolution"])}
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{section}] config: {exc}")


def load_config(path=None, overrides: Optional[dict] = None) -> PipelineConfig:
    """Load TOML (.toml) or JSON config; overrides is a flat dict with dotted
    keys like {"train.iters": 100, "seed": 7}."""
    data: dict = {}
    if path is not None:
        path = Path(path)
        text = path.read_text()
        if path.suffix == ".toml":
            try:
                data = tomllib.loads(text)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"bad TOML: {exc}", path=path)
        else:
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"bad JSON: {exc}", path=path)

    for key, value in (overrides or {}).items():
        if "." in key:
            section, name = key.split(".", 1)
            data.setdefault(section, {})[name] = value
        else:
            data[key] = value

    unknown = set(data) - _TOP_LEVEL - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    kwargs = {k: data[k] for k in _TOP_LEVEL if k in data}
    for section, cls in _SECTIONS.items():
        if section in data:
            if not isinstance(data[section], dict):
                raise ConfigError(f"[{section}] must be a table/object")
            kwargs[section] = _build_section(cls, data[section], section)
    try:
        return PipelineConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}")
