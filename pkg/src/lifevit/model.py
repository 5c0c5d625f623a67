"""Plain ViT with a pluggable Q/K/V generator.

Token matrices are ``B×C×(N+1)``: patch tokens in row-major lattice order,
then the class token in column ``N``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .life import life_onescale_qkv, life_param_shapes, life_qkv
from .tensor import ShapeError, Tensor

LN_EPS = 1e-6


@dataclass
class AttentionRecord:
    """Attention probabilities per block, each ``B×heads×T×T``."""

    blocks: list[np.ndarray]

    @property
    def depth(self) -> int:
        return len(self.blocks)

    def for_image(self, index: int = 0) -> list[np.ndarray]:
        """Per-block ``heads×T×T`` maps of one image in the batch."""
        return [a[index] for a in self.blocks]


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    c, n, hid = cfg.embed_dim, cfg.num_patches, cfg.hidden_dim
    patch_in = cfg.in_chans * cfg.patch_size**2
    shapes: dict[str, tuple[int, ...]] = {
        "patch_embed.weight": (c, patch_in),
        "patch_embed.bias": (c,),
        "pos_embed": (c, n),
        "cls_token": (c, 1),
    }
    for i in range(cfg.depth):
        b = f"blocks.{i}."
        shapes[b + "norm1.weight"] = (c,)
        shapes[b + "norm1.bias"] = (c,)
        if cfg.qkv_mode == "pff":
            shapes[b + "qkv.weight"] = (3 * c, c)
            shapes[b + "qkv.bias"] = (3 * c,)
        else:
            for name, shape in life_param_shapes(cfg).items():
                shapes[b + "life." + name] = shape
        shapes[b + "proj.weight"] = (c, c)
        shapes[b + "proj.bias"] = (c,)
        shapes[b + "norm2.weight"] = (c,)
        shapes[b + "norm2.bias"] = (c,)
        shapes[b + "fc1.weight"] = (hid, c)
        shapes[b + "fc1.bias"] = (hid,)
        shapes[b + "fc2.weight"] = (c, hid)
        shapes[b + "fc2.bias"] = (c,)
    shapes["norm.weight"] = (c,)
    shapes["norm.bias"] = (c,)
    shapes["head.weight"] = (cfg.num_classes, c)
    shapes["head.bias"] = (cfg.num_classes,)
    return shapes


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    """Normal(0, std) resampled until every draw lies within two std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.startswith("norm") or ".norm" in name:
            fill = 1.0 if name.endswith("weight") else 0.0
            data = np.full(shape, fill, dtype=dtype)
        elif name.endswith("bias"):
            data = np.zeros(shape, dtype=dtype)
        elif ".life." in name:
            # convs keep the framework default U(±1/sqrt(fan_in)); the 0.02 init is for linear layers
            bound = 1.0 / np.sqrt(np.prod(shape[1:]))
            data = rng.uniform(-bound, bound, size=shape).astype(dtype)
        else:
            data = trunc_normal(rng, shape, dtype=dtype)
        params[name] = Tensor(data, requires_grad=True)
    return params


def block_params(params: Mapping[str, Tensor], prefix: str) -> dict[str, Tensor]:
    return {k[len(prefix) :]: v for k, v in params.items() if k.startswith(prefix)}


def _linear(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    """Per-token affine map on a channels-first ``B×C_in×T`` matrix."""
    out = T.matmul(weight, x)
    if bias is not None:
        out = out + T.reshape(bias, (bias.shape[0], 1))
    return out


def patchify(images: np.ndarray, patch_size: int) -> np.ndarray:
    """``B×3×H×W`` pixels to ``B×(3·p·p)×N`` flattened patches (row-major lattice)."""
    b, ch, h, w = images.shape
    if h % patch_size or w % patch_size:
        raise ShapeError(f"image {h}×{w} is not divisible into {patch_size}×{patch_size} patches")
    gh, gw = h // patch_size, w // patch_size
    x = images.reshape(b, ch, gh, patch_size, gw, patch_size)
    x = x.transpose(0, 1, 3, 5, 2, 4)  # b, ch, pi, pj, gh, gw
    return np.ascontiguousarray(x.reshape(b, ch * patch_size * patch_size, gh * gw))


def patch_embed(images, cfg: ModelConfig, params: Mapping[str, Tensor]) -> Tensor:
    """Build the token matrix ``[X_patch + pos | X_cls]``."""
    data = images.data if isinstance(images, Tensor) else np.asarray(images)
    if data.ndim == 3:
        data = data[None]
    expected = (cfg.in_chans, cfg.image_size, cfg.image_size)
    if data.ndim != 4 or data.shape[1:] != expected:
        raise ShapeError(f"expected images of shape B×{expected}, got {data.shape}")
    dtype = params["patch_embed.weight"].dtype
    patches = Tensor(patchify(data.astype(dtype, copy=False), cfg.patch_size))
    x_patch = _linear(patches, params["patch_embed.weight"], params["patch_embed.bias"]) + params["pos_embed"]
    cls = Tensor.zeros((data.shape[0], cfg.embed_dim, 1), dtype=dtype) + params["cls_token"]
    return T.concat([x_patch, cls], axis=-1)


def pff_qkv(x: Tensor, weight: Tensor, bias: Tensor | None) -> tuple[Tensor, Tensor, Tensor]:
    """Point-wise Q/K/V: one per-token affine map of width 3C, split in thirds."""
    c = x.shape[-2]
    if weight.shape != (3 * c, c):
        raise ShapeError(f"PFF weight must be {(3 * c, c)}, got {weight.shape}")
    q, k, v = T.split(_linear(x, weight, bias), 3, axis=-2)
    return q, k, v


def mhsa(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    num_heads: int,
    proj_weight: Tensor | None = None,
    proj_bias: Tensor | None = None,
) -> tuple[Tensor, np.ndarray]:
    """Scaled dot-product attention over channel slices, then the output projection.

    Returns the ``B×C×T`` output and the ``B×heads×T×T`` attention.
    """
    if q.ndim == 2:
        q, k, v = (T.reshape(t, (1,) + t.shape) for t in (q, k, v))
    b, c, t = q.shape
    if c % num_heads:
        raise ShapeError(f"{c} channels are not divisible by {num_heads} heads")
    d = c // num_heads
    qh = T.reshape(q, (b, num_heads, d, t))
    kh = T.reshape(k, (b, num_heads, d, t))
    vh = T.reshape(v, (b, num_heads, d, t))
    logits = T.matmul(T.transpose(qh), kh) * (1.0 / np.sqrt(d))
    attn = T.softmax(logits, axis=-1)
    out = T.matmul(vh, T.transpose(attn))  # column i = sum_j A[i, j] v_j
    out = T.reshape(out, (b, c, t))
    if proj_weight is not None:
        out = _linear(out, proj_weight, proj_bias)
    return out, attn.data


def qkv_for(x: Tensor, cfg: ModelConfig, p: Mapping[str, Tensor]) -> tuple[Tensor, Tensor, Tensor]:
    if cfg.qkv_mode == "pff":
        return pff_qkv(x, p["qkv.weight"], p["qkv.bias"])
    life = block_params(p, "life.")
    if cfg.qkv_mode == "life":
        return life_qkv(x, life, cfg)
    return life_onescale_qkv(x, life, cfg)


def transformer_block(
    x: Tensor,
    cfg: ModelConfig,
    p: Mapping[str, Tensor],
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, np.ndarray]:
    """Pre-norm block: ``x + MHSA(QKV(norm x))`` then ``+ MLP(norm ·)``."""
    h = T.layer_norm(x, p["norm1.weight"], p["norm1.bias"], LN_EPS, axis=-2)
    q, k, v = qkv_for(h, cfg, p)
    a, attn = mhsa(q, k, v, cfg.num_heads, p["proj.weight"], p["proj.bias"])
    x = x + T.dropout(a, cfg.dropout, rng)
    h = T.layer_norm(x, p["norm2.weight"], p["norm2.bias"], LN_EPS, axis=-2)
    h = T.gelu(_linear(h, p["fc1.weight"], p["fc1.bias"]))
    h = T.dropout(_linear(h, p["fc2.weight"], p["fc2.bias"]), cfg.dropout, rng)
    return x + h, attn


def forward(
    images,
    cfg: ModelConfig,
    params: Mapping[str, Tensor],
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, AttentionRecord]:
    """Logits ``B×num_classes`` read from the final class-token column.

    ``rng`` enables dropout (training); leave it ``None`` for inference.
    """
    x = patch_embed(images, cfg, params)
    maps = []
    for i in range(cfg.depth):
        x, attn = transformer_block(x, cfg, block_params(params, f"blocks.{i}."), rng)
        maps.append(attn)
    x = T.layer_norm(x, params["norm.weight"], params["norm.bias"], LN_EPS, axis=-2)
    cls = T.split(x, [cfg.num_patches, 1], axis=-1)[1]
    cls = T.reshape(cls, (cls.shape[0], cfg.embed_dim))
    logits = T.matmul(cls, T.transpose(params["head.weight"])) + params["head.bias"]
    return logits, AttentionRecord(maps)


class VisionTransformer:
    """Parameters plus config; a thin convenience wrapper over :func:`forward`.

    ``input_stats`` optionally records the per-channel ``(mean, std)`` the
    training inputs were standardized with. The model never applies it
    itself; loaders use it to prepare raw pixels.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32, params=None):
        self.cfg = cfg
        self.params = init_params(cfg, seed, dtype) if params is None else dict(params)
        self.input_stats: tuple[np.ndarray, np.ndarray] | None = None

    def __call__(self, images, rng: np.random.Generator | None = None):
        return forward(images, self.cfg, self.params, rng)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def predict(self, images, batch_size: int = 256) -> np.ndarray:
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[None]
        out = []
        with T.no_grad():
            for start in range(0, len(images), batch_size):
                logits, _ = self(images[start : start + batch_size])
                out.append(logits.data)
        return np.concatenate(out, axis=0)
