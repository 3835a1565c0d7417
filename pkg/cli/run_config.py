"""Resolved run configuration: preset, user preset, config file, then flags."""
import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import config
from cli.preset_manager import PresetManager, builtin_preset
from errors import ConfigError
from model.model_config import DecoderConfig
from scene.generator import GeneratorConfig
from training.trainer import TrainConfig

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
SECTIONS = ('decoder', 'train', 'generator')
TOP_LEVEL_KEYS = ('seed', 'jobs', 'data_dir', 'out_dir', 'checkpoint')


@dataclass
class RunConfig:
    """Everything a command needs, fully resolved before the run starts."""
    preset: str = config.DEFAULT_PRESET
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    seed: int = 0
    jobs: int = 1
    data_dir: Optional[str] = None
    out_dir: Optional[str] = None
    checkpoint: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'preset': self.preset,
            'seed': self.seed,
            'jobs': self.jobs,
            'data_dir': self.data_dir,
            'out_dir': self.out_dir,
            'checkpoint': self.checkpoint,
            'decoder': self.decoder.to_dict(),
            'train': self.train.to_dict(),
            'generator': self.generator.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        unknown = set(data) - set(SECTIONS) - set(TOP_LEVEL_KEYS) - {'preset'}
        if unknown:
            raise ConfigError(f"run config: unknown keys {sorted(unknown)}")
        try:
            generator = GeneratorConfig.from_dict(data.get('generator', {}))
        except TypeError as e:
            raise ConfigError(f"generator: {e}") from e
        run = cls(
            preset=data.get('preset', config.DEFAULT_PRESET),
            decoder=DecoderConfig.from_dict(data.get('decoder', {})),
            train=TrainConfig.from_dict(data.get('train', {})),
            generator=generator,
        )
        for key in TOP_LEVEL_KEYS:
            if data.get(key) is not None:
                setattr(run, key, data[key])
        return run

    def validate(self):
        """Raises ConfigError naming the first invalid field."""
        self.decoder.validate()
        self.train.validate()
        self.generator.validate()
        if self.jobs < 1:
            raise ConfigError(f"jobs: must be >= 1, got {self.jobs}")
        if (self.generator.t_hist, self.generator.t_fut) != (self.decoder.t_hist, self.decoder.t_fut):
            raise ConfigError(
                f"generator.t_hist/t_fut ({self.generator.t_hist}, {self.generator.t_fut}) differ from "
                f"decoder ({self.decoder.t_hist}, {self.decoder.t_fut})"
            )


def merge_values(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursive dict merge; `override` wins, None values are ignored."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_values(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_config_file(path: PathLike) -> Dict[str, Any]:
    """Reads a --config JSON file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(config.MESSAGES['missing_file'].format(path=path))
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except (json.JSONDecodeError, OSError) as e:
        raise ConfigError(f"{path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def resolve_run_config(
    preset: Optional[str] = None,
    config_path: Optional[PathLike] = None,
    overrides: Optional[Dict[str, Any]] = None,
    presets: Optional[PresetManager] = None,
) -> RunConfig:
    """
    Builds the RunConfig for one command.

    Args:
        preset: Built-in or user preset name (default "desk")
        config_path: Optional JSON file with any of the RunConfig keys
        overrides: Values from command-line flags, same nesting as to_dict()
        presets: PresetManager holding the user presets

    Raises:
        ConfigError: If the preset is unknown or a value is invalid
    """
    name = preset or config.DEFAULT_PRESET
    presets = presets if presets is not None else PresetManager()
    values: Dict[str, Any] = builtin_preset(name) or {}
    user = presets.load_preset(name)
    if not values and user is None:
        raise ConfigError(f"preset: unknown preset {name!r} (available: {', '.join(presets.list_presets())})")
    if user is not None:
        values = merge_values(values, user)
    if config_path is not None:
        values = merge_values(values, load_config_file(config_path))
    if overrides:
        values = merge_values(values, overrides)
    values['preset'] = name

    run = RunConfig.from_dict(values)
    # one seed drives generation, initialization and batching
    run.train.seed = run.seed
    run.validate()
    logger.debug("run_config_resolved | preset=%s | seed=%d | jobs=%d", name, run.seed, run.jobs)
    return run


def write_run_config(out_dir: PathLike, run: RunConfig) -> Path:
    """Writes run_config.json into `out_dir`."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / config.RUN_CONFIG_FILENAME
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(run.to_dict(), f, indent=2)
        f.write("\n")
    return path


def preset_values(run: RunConfig) -> Dict[str, Any]:
    """Sections of a RunConfig as stored by --save-preset."""
    return {name: section for name, section in run.to_dict().items() if name in SECTIONS}
