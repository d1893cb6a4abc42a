"""Run configuration: one YAML document covering every stage of a run.

Loaded with PyYAML and dacite in strict mode, so misspelled keys are rejected
with their full path instead of silently falling back to defaults.
"""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Type, Union

import dacite
import yaml

from weightspace.align import AlignConfig
from weightspace.augment import AugmentPipeline, AugmentStep
from weightspace.core import MlpSpec
from weightspace.errors import AugmentationError, ConfigError
from weightspace.mixup import MixupConfig
from weightspace.nnrun import TrainConfig
from weightspace.probe import ProbeConfig
from weightspace.signals import SIGNAL_KINDS
from weightspace.store import DatasetManifest, make_manifest

JOBS_ENV = "WEIGHTSPACE_JOBS"
TEMPORAL_ADDRESS_ENV = "WEIGHTSPACE_TEMPORAL_ADDRESS"


@dataclass
class SpecConfig:
    dims: List[int] = field(default_factory=lambda: [2, 32, 32, 1])
    activation: Literal["sine", "relu"] = "sine"

    def build(self) -> MlpSpec:
        if self.activation == "relu":
            return MlpSpec.relu(self.dims)
        return MlpSpec.siren(self.dims)


@dataclass
class DatasetConfig:
    num_objects: int = 50
    views_per_object: int = 1
    kinds: List[str] = field(default_factory=lambda: list(SIGNAL_KINDS))
    resolution: int = 32
    seed: int = 0
    spec: SpecConfig = field(default_factory=SpecConfig)
    fit: TrainConfig = field(default_factory=TrainConfig)

    def manifest(
        self,
        num_objects: Optional[int] = None,
        views_per_object: Optional[int] = None,
        object_offset: int = 0,
        view_offset: int = 0,
    ) -> DatasetManifest:
        return make_manifest(
            num_objects or self.num_objects,
            views_per_object or self.views_per_object,
            self.kinds,
            self.resolution,
            self.fit,
            self.seed,
            self.spec.build(),
            object_offset,
            view_offset,
        )


@dataclass
class LmcConfig:
    pairs: int = 20
    num_lambdas: int = 11


@dataclass
class ExperimentConfig:
    # Probe runs per grid cell; seed i uses probe.seed + i.
    seeds: int = 5
    objects: int = 50
    max_views: int = 4
    # Held-out views of the training objects (internal generalization).
    internal_views: int = 1
    # Unseen objects, one view each (external generalization).
    test_objects: int = 40
    # Total training INRs for the objects-vs-views grid.
    budget_total: int = 64
    budget_views: List[int] = field(default_factory=lambda: [1, 2, 4, 8])
    # Rows of the augmentation table; empty means every row the method admits.
    rows: List[str] = field(default_factory=list)


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    augment: AugmentPipeline = field(default_factory=AugmentPipeline)
    mixup: Optional[MixupConfig] = None
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    align: AlignConfig = field(default_factory=AlignConfig)
    lmc: LmcConfig = field(default_factory=LmcConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)


def _int_to_float(value: Any) -> Any:
    # YAML reads "1" as an int; accept it wherever a float is expected.
    if isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


_DACITE = dacite.Config(strict=True, type_hooks={float: _int_to_float})


def _step_classes() -> Dict[str, Type]:
    classes = {}
    for cls in typing.get_args(AugmentStep):
        (kind,) = typing.get_args(typing.get_type_hints(cls)["kind"])
        classes[kind] = cls
    return classes


STEP_CLASSES = _step_classes()


def _dataclass_of(hint: Any) -> Optional[Type]:
    if dataclasses.is_dataclass(hint):
        return hint
    if typing.get_origin(hint) is Union:
        for arg in typing.get_args(hint):
            if dataclasses.is_dataclass(arg):
                return arg
    return None


def _check_keys(cls: Type, data: Any, path: str) -> None:
    """Reject unknown keys anywhere in the tree, naming the full key path."""
    if not isinstance(data, dict):
        return
    hints = typing.get_type_hints(cls)
    for key, value in data.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in hints:
            raise ConfigError(f"Unknown config key {where!r}", key=where)
        if cls is AugmentPipeline and key == "steps" and isinstance(value, list):
            _check_steps(value, where)
            continue
        nested = _dataclass_of(hints[key])
        if nested is not None:
            _check_keys(nested, value, where)


def _check_steps(steps: List[Any], path: str) -> None:
    for i, step in enumerate(steps):
        where = f"{path}[{i}]"
        if not isinstance(step, dict) or "kind" not in step:
            raise ConfigError(f"{where} needs a 'kind'", key=f"{where}.kind")
        cls = STEP_CLASSES.get(step["kind"])
        if cls is None:
            raise ConfigError(
                f"Unknown augmentation {step['kind']!r} at {where}, "
                f"expected one of {sorted(STEP_CLASSES)}",
                key=f"{where}.kind",
            )
        _check_keys(cls, step, where)


def config_from_dict(data: Optional[Dict[str, Any]]) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("A run config must be a mapping")
    _check_keys(RunConfig, data, "")
    try:
        return dacite.from_dict(RunConfig, data, config=_DACITE)
    except dacite.DaciteFieldError as err:
        raise ConfigError(f"Invalid config: {err}", key=err.field_path) from err
    except dacite.DaciteError as err:
        raise ConfigError(f"Invalid config: {err}") from err
    except AugmentationError as err:
        raise ConfigError(str(err), key="augment.steps") from err


def _read_yaml(path: Union[str, Path]) -> Any:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"Cannot read config {path}: {err.strerror}") from err
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"Config {path} is not valid YAML: {err}") from err


def load_config(path: Union[str, Path, None]) -> RunConfig:
    """Read a run config from YAML; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    return config_from_dict(_read_yaml(path))


def load_pipeline(path: Union[str, Path]) -> AugmentPipeline:
    """Read a standalone pipeline document (``steps`` and ``seed``)."""
    return config_from_dict({"augment": _read_yaml(path)}).augment


def to_dict(cfg: RunConfig) -> Dict[str, Any]:
    return dataclasses.asdict(cfg)


def to_yaml(cfg: RunConfig) -> str:
    """The resolved config, loadable again with :func:`config_from_dict`."""
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


def default_jobs() -> int:
    raw = os.environ.get(JOBS_ENV)
    if not raw:
        return 1
    try:
        jobs = int(raw)
    except ValueError:
        raise ConfigError(
            f"{JOBS_ENV} must be an integer, got {raw!r}", key=JOBS_ENV
        ) from None
    if jobs < 1:
        raise ConfigError(f"{JOBS_ENV} must be at least 1", key=JOBS_ENV)
    return jobs


def default_temporal_address() -> Optional[str]:
    return os.environ.get(TEMPORAL_ADDRESS_ENV) or None
