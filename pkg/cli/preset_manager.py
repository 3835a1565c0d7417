"""Preset manager for run configurations."""
import copy
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import config

logger = logging.getLogger(__name__)

# Each preset holds partial sections; missing keys keep the dataclass defaults.
BUILTIN_PRESET_VALUES: Dict[str, Dict[str, Dict[str, Any]]] = {
    "desk": {
        "decoder": {
            "t_hist": 50, "t_fut": 60, "t_sub": 10, "num_modes": 6, "radius": 50.0,
            "embed_dim": 64, "num_heads": 4, "num_freq_bands": 64,
        },
        "train": {"epochs": 30, "batch_size": 4},
        "generator": {"t_hist": 50, "t_fut": 60},
    },
    "tiny": {
        "decoder": {
            "t_hist": 10, "t_fut": 20, "t_sub": 5, "num_modes": 2, "radius": 50.0,
            "embed_dim": 32, "num_heads": 4, "num_freq_bands": 16, "dropout": 0.0,
        },
        "train": {"epochs": 200, "batch_size": 1, "lr": 1e-3},
        "generator": {
            "t_hist": 10, "t_fut": 20, "num_agents": [2, 2], "speed_range": [2.5, 7.5],
            "stationary_prob": 0.0, "max_polylines": 3,
        },
    },
    "paper": {
        "decoder": {
            "t_hist": 50, "t_fut": 60, "t_sub": 10, "num_modes": 6, "radius": 50.0,
            "embed_dim": 128, "num_heads": 8, "num_freq_bands": 64,
        },
        "train": {"epochs": 60, "batch_size": 64},
        "generator": {"t_hist": 50, "t_fut": 60},
    },
}


def builtin_preset(name: str) -> Optional[Dict[str, Dict[str, Any]]]:
    """Deep copy of a built-in preset, or None."""
    values = BUILTIN_PRESET_VALUES.get(config.PRESET_ALIASES.get(name, name))
    return copy.deepcopy(values) if values is not None else None


class PresetManager:
    """
    Manages loading and saving of run presets in the user's presets file.

    Args:
        presets_file: JSON file (default ~/.trajpilot/presets.json)
    """

    def __init__(self, presets_file: Optional[Path] = None):
        self.presets_file = Path(presets_file) if presets_file else config.get_presets_file()
        self.config_dir = self.presets_file.parent
        try:
            self.config_dir.mkdir(parents=True, exist_ok=True)
        except OSError:
            logger.debug("preset_dir_unavailable | path=%s", self.config_dir)

        self.presets = self._load_presets()
        if not self.presets:
            self._create_default_presets()

    def _load_presets(self) -> Dict[str, Dict[str, Any]]:
        if not self.presets_file.exists():
            return {}
        try:
            with open(self.presets_file, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except (json.JSONDecodeError, OSError):
            # unreadable file: fall back to the built-in presets
            logger.debug("presets_unreadable | path=%s", self.presets_file)
            return {}
        return data if isinstance(data, dict) else {}

    def _save_presets(self) -> bool:
        try:
            with open(self.presets_file, 'w', encoding='utf-8') as f:
                json.dump(self.presets, f, indent=2, ensure_ascii=False)
            return True
        except OSError:
            logger.debug("presets_not_saved | path=%s", self.presets_file)
            return False

    def _create_default_presets(self):
        self.presets = {name: builtin_preset(name) for name in config.BUILTIN_PRESETS}
        self._save_presets()

    def save_preset(self, name: str, values: Dict[str, Any]) -> bool:
        """
        Saves a preset with the specified name.

        Returns:
            True if saved successfully, False otherwise
        """
        if not name or not name.strip():
            return False
        self.presets[name.strip()] = copy.deepcopy(values)
        return self._save_presets()

    def load_preset(self, name: str) -> Optional[Dict[str, Any]]:
        values = self.presets.get(name)
        return copy.deepcopy(values) if values is not None else None

    def list_presets(self) -> List[str]:
        return sorted(set(self.presets) | set(BUILTIN_PRESET_VALUES))

