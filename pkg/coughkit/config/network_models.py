"""Vision transformer shape configuration and named presets."""

from typing import Dict

from pydantic import Field, model_validator

from .base_models import StrictModel


class VitConfig(StrictModel):
    """Shape parameters of a vision transformer over spectrogram patches."""

    patch_size: int = Field(16, description="Square patch side p", ge=1)
    embed_dim: int = Field(192, description="Embedding dimension E", ge=1)
    depth: int = Field(4, description="Number of transformer blocks M", ge=1)
    n_heads: int = Field(3, description="Attention heads per block", ge=1)
    mlp_ratio: float = Field(4.0, description="MLP hidden size as a multiple of E", gt=0)
    in_channels: int = Field(1, description="Input channels (1, or 3 for image-style inputs)", ge=1, le=3)
    height: int = Field(128, description="Input height (mel bins)", ge=1)
    width: int = Field(64, description="Input width (frames)", ge=1)
    n_classes: int = Field(2, description="Classification head outputs", ge=1)
    layer_norm_eps: float = Field(1e-6, description="LayerNorm epsilon", gt=0)
    init_std: float = Field(0.02, description="Truncated-normal init standard deviation", gt=0)

    @model_validator(mode="after")
    def validate_divisibility(self) -> "VitConfig":
        """Heads must split E evenly and patches must tile the input."""
        if self.embed_dim % self.n_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} is not divisible by n_heads {self.n_heads}"
            )
        if self.height % self.patch_size or self.width % self.patch_size:
            raise ValueError(
                f"input {self.height}x{self.width} is not divisible by patch_size {self.patch_size}"
            )
        return self

    @property
    def head_dim(self) -> int:
        """Per-head dimension."""
        return self.embed_dim // self.n_heads

    @property
    def mlp_hidden(self) -> int:
        """MLP hidden width."""
        return int(self.embed_dim * self.mlp_ratio)

    @property
    def n_patches(self) -> int:
        """Patch count P."""
        return (self.height // self.patch_size) * (self.width // self.patch_size)

    @property
    def patch_dim(self) -> int:
        """Flattened patch length c*p*p."""
        return self.in_channels * self.patch_size * self.patch_size


MODEL_PRESETS: Dict[str, VitConfig] = {
    "vit-tiny-cough": VitConfig(
        embed_dim=192, depth=4, n_heads=3, in_channels=1, height=128, width=64, n_classes=2
    ),
    "vit-small": VitConfig(
        embed_dim=384, depth=12, n_heads=6, in_channels=3, height=224, width=224, n_classes=1000
    ),
    "vit-base": VitConfig(
        embed_dim=768, depth=12, n_heads=12, in_channels=3, height=224, width=224, n_classes=1000
    ),
    "vit-large": VitConfig(
        embed_dim=1024, depth=24, n_heads=16, in_channels=3, height=224, width=224, n_classes=1000
    ),
}


def get_preset(name: str) -> VitConfig:
    """Look up a named model preset.

    Raises:
        KeyError: If the preset does not exist
    """
    if name not in MODEL_PRESETS:
        raise KeyError(f"Unknown model preset '{name}'. Available: {sorted(MODEL_PRESETS)}")
    return MODEL_PRESETS[name].model_copy()
