"""Decoder hyperparameters."""
from dataclasses import asdict, dataclass, fields
from typing import Dict

import config
from errors import ConfigError

WINNER_MODES = ("per_step", "full_horizon")


@dataclass
class DecoderConfig:
    """Configuration of the map encoder and the autoregressive decoder."""
    t_hist: int = config.DEFAULT_T_HIST
    t_fut: int = config.DEFAULT_T_FUT
    t_sub: int = config.DEFAULT_T_SUB
    num_modes: int = config.DEFAULT_NUM_MODES
    radius: float = config.DEFAULT_RADIUS
    rounds: int = config.DEFAULT_ROUNDS
    embed_dim: int = config.DEFAULT_EMBED_DIM
    num_heads: int = config.DEFAULT_NUM_HEADS
    dropout: float = config.DEFAULT_DROPOUT
    num_freq_bands: int = config.NUM_FREQ_BANDS
    map_rounds: int = config.DEFAULT_ROUNDS
    line_attention: bool = True
    use_refinement: bool = True
    use_overprediction: bool = True
    winner_mode: str = "per_step"

    @property
    def history_steps(self) -> int:
        return self.t_hist // self.t_sub

    @property
    def future_steps(self) -> int:
        return self.t_fut // self.t_sub

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "DecoderConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"decoder: unknown keys {sorted(unknown)}")
        return cls(**data)

    def validate(self):
        """Raises ConfigError naming the first invalid field."""
        if self.t_sub < 1:
            raise ConfigError(f"decoder.t_sub: must be >= 1, got {self.t_sub}")
        if self.t_fut < 1 or self.t_fut % self.t_sub != 0:
            raise ConfigError(f"decoder.t_fut: {self.t_fut} is not a positive multiple of t_sub={self.t_sub}")
        if self.t_hist < 1 or self.t_hist % self.t_sub != 0:
            raise ConfigError(f"decoder.t_hist: {self.t_hist} is not a positive multiple of t_sub={self.t_sub}")
        if self.num_modes < 1:
            raise ConfigError(f"decoder.num_modes: must be >= 1, got {self.num_modes}")
        if self.radius <= 0:
            raise ConfigError(f"decoder.radius: must be > 0, got {self.radius}")
        if self.rounds < 1 or self.map_rounds < 1:
            raise ConfigError("decoder.rounds/map_rounds: must be >= 1")
        if self.embed_dim < 1 or self.num_heads < 1 or self.embed_dim % self.num_heads != 0:
            raise ConfigError(
                f"decoder.embed_dim: {self.embed_dim} is not divisible by num_heads={self.num_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"decoder.dropout: must be in [0, 1), got {self.dropout}")
        if self.num_freq_bands < 1:
            raise ConfigError("decoder.num_freq_bands: must be >= 1")
        if self.winner_mode not in WINNER_MODES:
            raise ConfigError(f"decoder.winner_mode: unknown mode {self.winner_mode!r}")
