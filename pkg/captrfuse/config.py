"""
Configuration management for captrfuse.
Process settings come from CAPTRFUSE_* environment variables; experiment
settings come from a JSON file mirroring TrainConfig.
"""
import json
from pathlib import Path
from typing import Any, List, Literal, Optional

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from captrfuse import __version__
from captrfuse.exceptions import ConfigError


LOG_LEVELS = {"error": "ERROR", "info": "INFO", "debug": "DEBUG"}

# Each conv block halves the spatial grid.
BACKBONE_STRIDE = 8


class Settings(BaseSettings):
    """Process settings with environment variable support."""

    model_config = SettingsConfigDict(
        env_prefix="CAPTRFUSE_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Application
    app_name: str = "captrfuse"
    app_version: str = __version__
    debug: bool = False
    log: str = Field(default="info", description="error, info or debug")
    log_dir: Optional[Path] = None

    # Server
    host: str = "127.0.0.1"
    port: int = 8000
    checkpoint_dir: Optional[Path] = None

    @field_validator("log")
    @classmethod
    def validate_log(cls, v: str) -> str:
        v = v.strip().lower()
        if v not in LOG_LEVELS:
            raise ValueError(f"CAPTRFUSE_LOG must be one of {sorted(LOG_LEVELS)}, got {v!r}")
        return v

    @property
    def log_level(self) -> str:
        return LOG_LEVELS[self.log]


class TrainConfig(BaseModel):
    """Hyperparameters and toy model dimensions for both training phases."""

    model_config = {"extra": "forbid"}

    # Classifier phase
    learning_rate: float = Field(default=5e-5, gt=0)
    batch_size: int = Field(default=16, gt=0)
    epochs: int = Field(default=6, gt=0)
    max_length: int = Field(default=80, ge=4)
    pooler_dropout: float = Field(default=0.1, ge=0, lt=1)
    weight_decay: float = Field(default=0.01, ge=0)
    adam_beta1: float = Field(default=0.9, ge=0, lt=1)
    adam_beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_eps: float = Field(default=1e-8, gt=0)
    seed: int = 0
    num_classes: int = Field(default=3, ge=2)

    # Caption phase
    caption_learning_rate: float = Field(default=1e-4, gt=0)
    caption_batch_size: int = Field(default=16, gt=0)
    caption_epochs: int = Field(default=6, gt=0)
    caption_length: Optional[int] = Field(default=None, ge=2)

    # Language encoder
    d_model: int = Field(default=64, gt=0)
    n_heads: int = Field(default=4, gt=0)
    n_layers: int = Field(default=2, gt=0)
    attention_dropout: float = Field(default=0.1, ge=0, lt=1)

    # Captioner
    caption_d_model: int = Field(default=32, gt=0)
    caption_heads: int = Field(default=4, gt=0)
    caption_encoder_layers: int = Field(default=1, gt=0)
    caption_decoder_layers: int = Field(default=1, gt=0)
    backbone_channels: List[int] = Field(default_factory=lambda: [16, 32, 32])
    image_size: int = Field(default=16, gt=0)

    vocab_size: Optional[int] = Field(default=None, ge=5)
    dtype: Literal["float32", "float64"] = "float32"
    audit_phases: bool = True

    @field_validator("backbone_channels")
    @classmethod
    def validate_backbone(cls, v: List[int]) -> List[int]:
        if len(v) != 3 or any(c <= 0 for c in v):
            raise ValueError("backbone_channels must list three positive widths")
        return v

    @model_validator(mode="after")
    def validate_dimensions(self) -> "TrainConfig":
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.caption_d_model % self.caption_heads:
            raise ValueError(
                f"caption_d_model={self.caption_d_model} is not divisible by caption_heads={self.caption_heads}"
            )
        if self.caption_d_model % 4:
            raise ValueError("caption_d_model must be divisible by 4 for 2-D positional encodings")
        if self.image_size % BACKBONE_STRIDE:
            raise ValueError(f"image_size must be divisible by the backbone stride {BACKBONE_STRIDE}")
        return self

    @property
    def caption_len(self) -> int:
        """Captioner output length; defaults to the sentence-pair budget."""
        return self.caption_length or self.max_length

    @classmethod
    def load(cls, path: Optional[Path] = None, **overrides: Any) -> "TrainConfig":
        """Load from a JSON file (optional), apply non-None overrides, validate."""
        data: dict = {}
        if path is not None:
            try:
                data = json.loads(Path(path).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"cannot read config {path}: {e}") from e
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.parse(data)

    @classmethod
    def parse(cls, data: dict) -> "TrainConfig":
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ConfigError(str(e)) from e

    def save(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2), encoding="utf-8")


# Create global settings instance
settings = Settings()
