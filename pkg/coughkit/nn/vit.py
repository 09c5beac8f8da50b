"""Vision transformer over spectrogram patches."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import structlog
from scipy import stats

from coughkit.config.network_models import VitConfig
from coughkit.exceptions import CheckpointError, InvalidParameterError, ShapeMismatchError
from coughkit.nn.autodiff import (
    Tensor,
    as_tensor,
    concat,
    gather_rows,
    gelu,
    layer_norm,
    repeat,
    softmax,
)

logger = structlog.get_logger(__name__)

Params = Dict[str, Tensor]


def trunc_normal(rng: np.random.Generator, shape: Tuple[int, ...], std: float) -> np.ndarray:
    """Normal(0, std) truncated at two standard deviations."""
    return stats.truncnorm.rvs(-2.0, 2.0, scale=std, size=shape, random_state=rng)


def init_linear(params: Params, prefix: str, fan_in: int, fan_out: int, rng: np.random.Generator, std: float) -> None:
    params[f"{prefix}.weight"] = Tensor(trunc_normal(rng, (fan_in, fan_out), std), requires_grad=True, name=f"{prefix}.weight")
    params[f"{prefix}.bias"] = Tensor(np.zeros(fan_out), requires_grad=True, name=f"{prefix}.bias")


def init_norm(params: Params, prefix: str, dim: int) -> None:
    params[f"{prefix}.weight"] = Tensor(np.ones(dim), requires_grad=True, name=f"{prefix}.weight")
    params[f"{prefix}.bias"] = Tensor(np.zeros(dim), requires_grad=True, name=f"{prefix}.bias")


def patchify(images: np.ndarray, patch_size: int) -> np.ndarray:
    """Split (C, H, W) or (B, C, H, W) images into row-major patch vectors.

    Returns (P, C*p*p) or (B, P, C*p*p); each vector is flattened channel-first.
    """
    batched = images.ndim == 4
    x = images if batched else images[None]
    if x.ndim != 4:
        raise ShapeMismatchError("patchify expects (C, H, W) or (B, C, H, W)", images.shape)
    b, c, h, w = x.shape
    p = patch_size
    if h % p or w % p:
        raise InvalidParameterError("Image is not divisible by the patch size", height=h, width=w, patch_size=p)
    patches = x.reshape(b, c, h // p, p, w // p, p).transpose(0, 2, 4, 1, 3, 5).reshape(b, (h // p) * (w // p), c * p * p)
    return patches if batched else patches[0]


def unpatchify(patches: np.ndarray, channels: int, height: int, width: int, patch_size: int) -> np.ndarray:
    """Inverse of patchify."""
    batched = patches.ndim == 3
    x = patches if batched else patches[None]
    p = patch_size
    b = x.shape[0]
    images = x.reshape(b, height // p, width // p, channels, p, p).transpose(0, 3, 1, 4, 2, 5).reshape(b, channels, height, width)
    return images if batched else images[0]


def param_count(cfg: VitConfig) -> int:
    """Exact trainable scalar count of a model with this config."""
    e, hidden = cfg.embed_dim, cfg.mlp_hidden
    attention = e * 3 * e + 3 * e + e * e + e
    mlp = e * hidden + hidden + hidden * e + e
    block = attention + mlp + 4 * e
    patch_embed = cfg.patch_dim * e + e
    tokens = e + (cfg.n_patches + 1) * e
    head = e * cfg.n_classes + cfg.n_classes
    return cfg.depth * block + patch_embed + tokens + 2 * e + head


class TransformerBlock:
    """Pre-norm block: x + MSA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, params: Params, prefix: str, n_heads: int, eps: float) -> None:
        self.prefix = prefix
        self.n_heads = n_heads
        self.eps = eps
        self._p = {
            key[len(prefix) + 1 :]: tensor for key, tensor in params.items() if key.startswith(prefix + ".")
        }

    @staticmethod
    def init_params(params: Params, prefix: str, dim: int, hidden: int, rng: np.random.Generator, std: float) -> None:
        init_norm(params, f"{prefix}.norm1", dim)
        init_linear(params, f"{prefix}.attn.qkv", dim, 3 * dim, rng, std)
        init_linear(params, f"{prefix}.attn.proj", dim, dim, rng, std)
        init_norm(params, f"{prefix}.norm2", dim)
        init_linear(params, f"{prefix}.mlp.fc1", dim, hidden, rng, std)
        init_linear(params, f"{prefix}.mlp.fc2", hidden, dim, rng, std)

    def __call__(self, x: Tensor) -> Tuple[Tensor, np.ndarray]:
        p = self._p
        b, n, e = x.shape
        heads = self.n_heads
        head_dim = e // heads

        h = layer_norm(x, p["norm1.weight"], p["norm1.bias"], self.eps)
        qkv = (h @ p["attn.qkv.weight"] + p["attn.qkv.bias"]).reshape(b, n, 3, heads, head_dim)
        qkv = qkv.transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = softmax((q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(head_dim)), axis=-1)
        mixed = (attn @ v).transpose(0, 2, 1, 3).reshape(b, n, e)
        x = x + (mixed @ p["attn.proj.weight"] + p["attn.proj.bias"])

        h = layer_norm(x, p["norm2.weight"], p["norm2.bias"], self.eps)
        h = gelu(h @ p["mlp.fc1.weight"] + p["mlp.fc1.bias"]) @ p["mlp.fc2.weight"] + p["mlp.fc2.bias"]
        return x + h, attn.data


@dataclass
class ForwardTrace:
    """Everything a forward pass exposes to the training objectives.

    patch_reps_per_block holds, per block, the (B, K, E) outputs at the K patch
    positions that entered the network.
    """

    cls_out: Tensor
    patch_reps_per_block: List[Tensor]
    final_patch_reps: Tensor
    logits: Tensor
    attentions: List[np.ndarray] = field(default_factory=list)
    visible_index: Optional[np.ndarray] = None


def visible_indices(visible_mask: np.ndarray, batch_size: int, n_patches: int) -> np.ndarray:
    """(B, K) sorted indices of visible patches; every sample must expose the same K >= 1."""
    mask = np.asarray(visible_mask, dtype=bool)
    if mask.ndim == 1:
        mask = np.broadcast_to(mask, (batch_size, mask.shape[0]))
    if mask.shape != (batch_size, n_patches):
        raise ShapeMismatchError("visible_mask does not match (batch, patches)", mask.shape, (batch_size, n_patches))
    counts = mask.sum(axis=1)
    if np.any(counts == 0):
        raise InvalidParameterError("Every patch is masked; nothing to encode")
    if np.any(counts != counts[0]):
        raise InvalidParameterError("All samples must expose the same number of patches", counts=counts.tolist())
    return np.stack([np.flatnonzero(row) for row in mask])


class VitModel:
    """Patch embedding, class token, learned positions, M pre-norm blocks, final norm and head."""

    def __init__(self, cfg: VitConfig, params: Params) -> None:
        self.cfg = cfg
        self.params = params
        self.blocks = [
            TransformerBlock(params, f"blocks.{i}", cfg.n_heads, cfg.layer_norm_eps) for i in range(cfg.depth)
        ]
        self._check_shapes()

    @classmethod
    def initialize(cls, cfg: VitConfig, rng: np.random.Generator) -> VitModel:
        """Truncated-normal weights, zero biases, unit norm gains."""
        e, std = cfg.embed_dim, cfg.init_std
        params: Params = {}
        init_linear(params, "patch_embed", cfg.patch_dim, e, rng, std)
        params["cls_token"] = Tensor(trunc_normal(rng, (1, 1, e), std), requires_grad=True, name="cls_token")
        params["pos_embed"] = Tensor(trunc_normal(rng, (cfg.n_patches + 1, e), std), requires_grad=True, name="pos_embed")
        for i in range(cfg.depth):
            TransformerBlock.init_params(params, f"blocks.{i}", e, cfg.mlp_hidden, rng, std)
        init_norm(params, "norm", e)
        init_linear(params, "head", e, cfg.n_classes, rng, std)
        logger.debug("Initialized model", n_params=param_count(cfg), depth=cfg.depth, embed_dim=e)
        return cls(cfg, params)

    def _check_shapes(self) -> None:
        expected = VitModel.expected_shapes(self.cfg)
        if set(expected) != set(self.params):
            missing = sorted(set(expected) - set(self.params))
            unexpected = sorted(set(self.params) - set(expected))
            raise CheckpointError("Parameter names do not match the config", missing=missing, unexpected=unexpected)
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ShapeMismatchError(f"Parameter {name} has the wrong shape", self.params[name].shape, shape)

    @staticmethod
    def expected_shapes(cfg: VitConfig) -> Dict[str, Tuple[int, ...]]:
        e, hidden = cfg.embed_dim, cfg.mlp_hidden
        shapes: Dict[str, Tuple[int, ...]] = {
            "patch_embed.weight": (cfg.patch_dim, e),
            "patch_embed.bias": (e,),
            "cls_token": (1, 1, e),
            "pos_embed": (cfg.n_patches + 1, e),
        }
        for i in range(cfg.depth):
            prefix = f"blocks.{i}"
            shapes.update(
                {
                    f"{prefix}.norm1.weight": (e,),
                    f"{prefix}.norm1.bias": (e,),
                    f"{prefix}.attn.qkv.weight": (e, 3 * e),
                    f"{prefix}.attn.qkv.bias": (3 * e,),
                    f"{prefix}.attn.proj.weight": (e, e),
                    f"{prefix}.attn.proj.bias": (e,),
                    f"{prefix}.norm2.weight": (e,),
                    f"{prefix}.norm2.bias": (e,),
                    f"{prefix}.mlp.fc1.weight": (e, hidden),
                    f"{prefix}.mlp.fc1.bias": (hidden,),
                    f"{prefix}.mlp.fc2.weight": (hidden, e),
                    f"{prefix}.mlp.fc2.bias": (e,),
                }
            )
        shapes.update(
            {
                "norm.weight": (e,),
                "norm.bias": (e,),
                "head.weight": (e, cfg.n_classes),
                "head.bias": (cfg.n_classes,),
            }
        )
        return shapes

    def parameters(self) -> Params:
        return self.params

    def n_parameters(self) -> int:
        """Parameter count by enumerating tensors."""
        return sum(t.size for t in self.params.values())

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}

    @classmethod
    def from_state_dict(cls, cfg: VitConfig, state: Dict[str, np.ndarray]) -> VitModel:
        params = {name: Tensor(np.array(values), requires_grad=True, name=name) for name, values in state.items()}
        return cls(cfg, params)

    def copy(self) -> VitModel:
        """Independent deep copy."""
        return VitModel.from_state_dict(self.cfg.model_copy(), self.state_dict())

    def backbone_names(self) -> List[str]:
        return [name for name in self.params if not name.startswith("head.")]

    def forward(self, patches: np.ndarray | Tensor, visible_mask: Optional[np.ndarray] = None) -> ForwardTrace:
        """Encode (B, P, c*p*p) patches.

        With a visible mask only the visible patches, plus the class token, enter
        the blocks; positional embeddings are added before the selection.
        """
        x = as_tensor(patches)
        if x.ndim != 3 or x.shape[1:] != (self.cfg.n_patches, self.cfg.patch_dim):
            raise ShapeMismatchError(
                "Patches do not match the model",
                x.shape,
                (-1, self.cfg.n_patches, self.cfg.patch_dim),
            )
        b = x.shape[0]
        p = self.params

        tokens = x @ p["patch_embed.weight"] + p["patch_embed.bias"]
        tokens = tokens + p["pos_embed"][1:]

        index = None
        if visible_mask is not None:
            index = visible_indices(visible_mask, b, self.cfg.n_patches)
            tokens = gather_rows(tokens, index)

        cls = repeat(p["cls_token"] + p["pos_embed"][0:1], b, axis=0)
        h = concat([cls, tokens], axis=1)

        patch_reps: List[Tensor] = []
        attentions: List[np.ndarray] = []
        for block in self.blocks:
            h, attn = block(h)
            patch_reps.append(h[:, 1:, :])
            attentions.append(attn)

        h = layer_norm(h, p["norm.weight"], p["norm.bias"], self.cfg.layer_norm_eps)
        cls_out = h[:, 0, :]
        logits = cls_out @ p["head.weight"] + p["head.bias"]
        return ForwardTrace(
            cls_out=cls_out,
            patch_reps_per_block=patch_reps,
            final_patch_reps=h[:, 1:, :],
            logits=logits,
            attentions=attentions,
            visible_index=index,
        )

    def replace_head(self, n_classes: int, rng: np.random.Generator) -> VitModel:
        """New model with a freshly initialized E -> n_classes head; backbone copied bitwise."""
        if n_classes < 2:
            raise InvalidParameterError("A classification head needs at least two classes", n_classes=n_classes)
        cfg = self.cfg.model_copy(update={"n_classes": n_classes})
        params: Params = {
            name: Tensor(self.params[name].data.copy(), requires_grad=True, name=name) for name in self.backbone_names()
        }
        init_linear(params, "head", cfg.embed_dim, n_classes, rng, cfg.init_std)
        logger.debug("Replaced classification head", n_classes=n_classes)
        return VitModel(cfg, params)
