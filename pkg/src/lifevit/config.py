"""Architecture description shared by the model, the cost accountant and the CLI."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

QKV_MODES = ("pff", "life", "life_onescale")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 32
    patch_size: int = 4
    embed_dim: int = 48
    depth: int = 4
    num_heads: int = 3
    mlp_ratio: float = 4.0
    num_classes: int = 10
    qkv_mode: str = "pff"
    kernel_sizes: tuple[int, ...] = (1, 3, 5)
    paddings: tuple[int, ...] = (0, 1, 2)
    dropout: float = 0.0
    in_chans: int = 3

    def __post_init__(self):
        object.__setattr__(self, "kernel_sizes", tuple(int(k) for k in self.kernel_sizes))
        object.__setattr__(self, "paddings", tuple(int(p) for p in self.paddings))
        mode = self.qkv_mode.replace("-", "_")
        object.__setattr__(self, "qkv_mode", mode)
        self.validate()

    def validate(self) -> None:
        if self.image_size <= 0 or self.patch_size <= 0 or self.image_size % self.patch_size:
            raise ConfigError(f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}")
        if self.embed_dim <= 0 or self.num_heads <= 0 or self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}")
        if self.depth < 1 or self.num_classes < 1:
            raise ConfigError("depth and num_classes must be positive")
        if self.hidden_dim < 1:
            raise ConfigError(f"mlp_ratio {self.mlp_ratio} gives an empty MLP")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.qkv_mode not in QKV_MODES:
            raise ConfigError(f"qkv_mode must be one of {QKV_MODES}, got {self.qkv_mode!r}")
        if self.qkv_mode == "pff":
            return
        if self.embed_dim % 3:
            raise ConfigError(f"LIFE modes need embed_dim divisible by 3, got {self.embed_dim}")
        if self.qkv_mode == "life_onescale":
            return
        if len(self.kernel_sizes) != len(self.paddings) or not self.kernel_sizes:
            raise ConfigError("kernel_sizes and paddings must be non-empty and of equal length")
        for k, p in zip(self.kernel_sizes, self.paddings):
            if k < 1 or k != 2 * p + 1:
                raise ConfigError(f"kernel {k} with padding {p} does not preserve resolution")
        if self.kernel_sizes[0] != 1:
            raise ConfigError("the first LIFE scale must be point-wise (kernel 1)")
        s = self.num_scales
        if s < 3 or self.embed_dim % s:
            raise ConfigError(f"LIFE with {s} scales needs at least 3 scales and embed_dim divisible by {s}")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid

    @property
    def num_tokens(self) -> int:
        return self.num_patches + 1

    @property
    def hidden_dim(self) -> int:
        return int(self.embed_dim * self.mlp_ratio)

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def num_scales(self) -> int:
        return 1 if self.qkv_mode == "life_onescale" else len(self.kernel_sizes)

    def replace(self, **changes) -> "ModelConfig":
        data = self.to_dict()
        data.update(changes)
        return ModelConfig.from_dict(data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel_sizes"] = list(self.kernel_sizes)
        d["paddings"] = list(self.paddings)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


def deit_tiny(num_classes: int = 100, qkv_mode: str = "pff", image_size: int = 224) -> ModelConfig:
    """DeiT-Tiny: 224² input, patch 16, width 192, 12 blocks, 3 heads."""
    return ModelConfig(
        image_size=image_size,
        patch_size=16,
        embed_dim=192,
        depth=12,
        num_heads=3,
        mlp_ratio=4.0,
        num_classes=num_classes,
        qkv_mode=qkv_mode,
    )


def desk_tiny(num_classes: int = 8, qkv_mode: str = "pff") -> ModelConfig:
    """The small 32² model used for desk-scale ablations."""
    return ModelConfig(
        image_size=32,
        patch_size=4,
        embed_dim=48,
        depth=4,
        num_heads=3,
        num_classes=num_classes,
        qkv_mode=qkv_mode,
    )


PRESETS = {"deit_tiny": deit_tiny, "desk_tiny": desk_tiny}
