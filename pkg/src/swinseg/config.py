"""Architecture and optimizer configuration records.

``ModelConfig`` mirrors the flat key-value config file accepted by the CLI;
unknown keys in a config file are errors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, asdict, fields

UPSAMPLE_MODES = ("patch_expand", "bilinear", "transposed_conv")


class ConfigError(ValueError):
    """Raised for invalid or inconsistent configuration."""


@dataclass
class ModelConfig:
    img_size: int = 224
    patch_size: int = 4
    embed_dim: int = 96
    encoder_depths: list[int] = field(default_factory=lambda: [2, 2, 2])
    bottleneck_depth: int = 2
    decoder_depths: list[int] = field(default_factory=lambda: [2, 2, 2])
    num_heads: list[int] = field(default_factory=lambda: [3, 6, 12, 24])
    window_size: int = 7
    num_classes: int = 2
    skip_count: int = 3
    upsample_mode: str = "patch_expand"
    in_channels: int = 3

    # -- derived geometry ----------------------------------------------------

    @property
    def base_resolution(self) -> int:
        return self.img_size // self.patch_size

    def stage_resolution(self, stage: int) -> int:
        """Token-grid side length at encoder stage 0..2 or bottleneck (3)."""
        return self.base_resolution >> stage

    def stage_channels(self, stage: int) -> int:
        return self.embed_dim << stage

    def effective_window(self, stage: int) -> int:
        """Window side at a stage; clamped when the grid is smaller than M."""
        return min(self.window_size, self.stage_resolution(stage))

    def stage_shapes(self) -> list[tuple[int, int]]:
        """(resolution, channels) for stages 0..3 (3 is the bottleneck)."""
        return [(self.stage_resolution(i), self.stage_channels(i))
                for i in range(4)]

    def validate(self) -> "ModelConfig":
        if self.img_size <= 0 or self.patch_size <= 0:
            raise ConfigError("img_size and patch_size must be positive")
        if self.img_size % self.patch_size:
            raise ConfigError(
                f"img_size {self.img_size} not divisible by patch_size "
                f"{self.patch_size}")
        if self.base_resolution % 8:
            raise ConfigError(
                f"token grid {self.base_resolution} must be divisible by 8 "
                f"(three 2x down-samplings)")
        if len(self.encoder_depths) != 3 or len(self.decoder_depths) != 3:
            raise ConfigError("encoder_depths and decoder_depths need 3 stages")
        if len(self.num_heads) != 4:
            raise ConfigError("num_heads needs 4 entries (3 stages + bottleneck)")
        for name, depths in (("encoder", self.encoder_depths),
                             ("decoder", self.decoder_depths)):
            for d in depths:
                if d <= 0 or d % 2:
                    raise ConfigError(
                        f"{name} depths must be positive and even "
                        f"(plain/shifted block pairing), got {depths}")
        if self.bottleneck_depth != 2:
            if self.bottleneck_depth <= 0 or self.bottleneck_depth % 2:
                raise ConfigError("bottleneck_depth must be positive and even")
            warnings.warn(
                f"bottleneck_depth={self.bottleneck_depth} overrides the "
                f"standard two-block bottleneck", stacklevel=2)
        for i in range(4):
            res = self.stage_resolution(i)
            m = self.effective_window(i)
            if res % m:
                raise ConfigError(
                    f"stage {i} resolution {res} not divisible by window {m}")
            if self.stage_channels(i) % self.num_heads[i]:
                raise ConfigError(
                    f"stage {i} channels {self.stage_channels(i)} not "
                    f"divisible by {self.num_heads[i]} heads")
        if self.embed_dim % 2:
            raise ConfigError("embed_dim must be even (patch expanding halves it)")
        if not 0 <= self.skip_count <= 3:
            raise ConfigError(f"skip_count must be in 0..3, got {self.skip_count}")
        if self.upsample_mode not in UPSAMPLE_MODES:
            raise ConfigError(
                f"upsample_mode must be one of {UPSAMPLE_MODES}, "
                f"got {self.upsample_mode!r}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be at least 2")
        if self.in_channels <= 0:
            raise ConfigError("in_channels must be positive")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d).validate()


def tiny_config(**overrides) -> ModelConfig:
    """Default scale: embed dim 96, heads [3, 6, 12, 24]."""
    return ModelConfig(**overrides).validate()


def base_config(**overrides) -> ModelConfig:
    """Wider scale: embed dim 128; heads [4, 8, 16, 32] keep head dim 32."""
    overrides.setdefault("embed_dim", 128)
    overrides.setdefault("num_heads", [4, 8, 16, 32])
    return ModelConfig(**overrides).validate()


def toy_config(**overrides) -> ModelConfig:
    """Smallest config exercising all three merge/expand stages (32x32 input)."""
    overrides.setdefault("img_size", 32)
    overrides.setdefault("embed_dim", 8)
    overrides.setdefault("num_heads", [1, 2, 4, 8])
    overrides.setdefault("window_size", 2)
    overrides.setdefault("num_classes", 3)
    return ModelConfig(**overrides).validate()


SCALE_PRESETS = {"tiny": tiny_config, "base": base_config, "toy": toy_config}


@dataclass
class SgdConfig:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 24
    max_iters: int = 200
    seed: int = 0

    def validate(self) -> "SgdConfig":
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.batch_size <= 0 or self.max_iters < 0:
            raise ConfigError("batch_size and max_iters must be positive")
        return self


# -- flat key-value config files ----------------------------------------------

_LIST_KEYS = {"encoder_depths", "decoder_depths", "num_heads"}
_STR_KEYS = {"upsample_mode"}


def parse_config_text(text: str) -> ModelConfig:
    """Parse ``key = value`` lines; '#' comments; lists are comma-separated."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key in _LIST_KEYS:
            values[key] = [int(v.strip()) for v in val.split(",")]
        elif key in _STR_KEYS:
            values[key] = val
        else:
            values[key] = int(val)
    return ModelConfig.from_dict(values)


def load_config_file(path) -> ModelConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def format_config(cfg: ModelConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
