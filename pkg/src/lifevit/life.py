"""Local-information Q/K/V generator.

Patch tokens are laid back out on their H×W lattice and pushed through a
hierarchy of convolutions: a point-wise first stage, then depthwise
separable stages with growing kernels. Each stage's output is cut into
channel thirds that feed Q, K and V. Auxiliary tokens (the class token)
skip the depthwise parts and only see the shared point-wise layers.

Tensors are channels-first throughout: token matrices are ``B×C×T`` with
the class token in the last column.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .config import ModelConfig
from .tensor import ShapeError, Tensor, concat, conv2d, depthwise_conv2d, reshape, split


def tokens_to_grid(x_patch: Tensor, height: int, width: int) -> Tensor:
    """``B×C×N`` (or ``C×N``) patch tokens to a ``B×C×H×W`` lattice, row-major."""
    n = x_patch.shape[-1]
    if n != height * width:
        raise ShapeError(f"{n} tokens do not fill a {height}×{width} lattice")
    return reshape(x_patch, x_patch.shape[:-1] + (height, width))


def grid_to_tokens(grid: Tensor) -> Tensor:
    h, w = grid.shape[-2:]
    return reshape(grid, grid.shape[:-2] + (h * w,))


def _pointwise(x: Tensor, p: Mapping[str, Tensor], name: str) -> Tensor:
    return conv2d(x, p[f"{name}.weight"], p[f"{name}.bias"])


def life_patch_features(
    grid: Tensor, p: Mapping[str, Tensor], kernel_sizes: Sequence[int], paddings: Sequence[int]
) -> list[Tensor]:
    """Hierarchical features ``F_1..F_S`` over a ``B×C×H×W`` lattice.

    Stage 1 is point-wise; stage ``s`` applies depthwise ``k_s`` then
    point-wise to the previous stage's output.
    """
    h, w = grid.shape[-2:]
    feats = [_pointwise(grid, p, "pw1")]
    for s in range(2, len(kernel_sizes) + 1):
        pad = paddings[s - 1]
        dw = depthwise_conv2d(feats[-1], p[f"dw{s}.weight"], p[f"dw{s}.bias"], pad=pad)
        if dw.shape[-2:] != (h, w):
            raise ShapeError(f"stage {s} changed resolution {h}×{w} -> {dw.shape[-2:]}")
        feats.append(_pointwise(dw, p, f"pw{s}"))
    return feats


def life_aux_features(x_aux: Tensor, p: Mapping[str, Tensor], num_scales: int) -> list[Tensor]:
    """Auxiliary tokens ``B×C×M`` through the same point-wise layers, no depthwise."""
    lead = x_aux.shape[:-1]
    x = reshape(x_aux, x_aux.shape + (1,))  # M tokens as an M×1 "image"
    feats = [_pointwise(x, p, "pw1")]
    for s in range(2, num_scales + 1):
        feats.append(_pointwise(feats[-1], p, f"pw{s}"))
    return [reshape(f, lead + (x_aux.shape[-1],)) for f in feats]


def assemble_qkv(patch_feats: Sequence[Tensor], aux_feats: Sequence[Tensor]) -> tuple[Tensor, Tensor, Tensor]:
    """Cut every scale into Q/K/V thirds and stack the thirds scale-major.

    Per scale, channels ``[0, C/3)`` go to Q, ``[C/3, 2C/3)`` to K and the rest
    to V; each third contributes its first ``C/S`` channels. Patch features are
    flattened into columns ``0..N-1``, auxiliary features follow.
    """
    s = len(patch_feats)
    if s != len(aux_feats) or s == 0:
        raise ShapeError("patch and auxiliary paths must provide the same number of scales")
    c = patch_feats[0].shape[-3]
    if c % 3 or c % s or c // s > c // 3:
        raise ShapeError(f"{c} channels cannot be split into Q/K/V thirds over {s} scales")
    take = c // s
    qs, ks, vs = [], [], []
    for fp, fa in zip(patch_feats, aux_feats):
        cols = concat([grid_to_tokens(fp), fa], axis=-1)
        for bucket, third in zip((qs, ks, vs), split(cols, 3, axis=-2)):
            if take < c // 3:
                third = split(third, [take, c // 3 - take], axis=-2)[0]
            bucket.append(third)
    return concat(qs, axis=-2), concat(ks, axis=-2), concat(vs, axis=-2)


def _split_tokens(x: Tensor, height: int, width: int) -> tuple[Tensor, Tensor]:
    n = height * width
    t = x.shape[-1]
    if t <= n:
        raise ShapeError(f"token matrix with {t} columns has no auxiliary token beyond {n} patches")
    patch, aux = split(x, [n, t - n], axis=-1)
    return tokens_to_grid(patch, height, width), aux


def life_qkv(x: Tensor, p: Mapping[str, Tensor], cfg: ModelConfig) -> tuple[Tensor, Tensor, Tensor]:
    """Multiscale Q, K, V from a ``B×C×(N+1)`` token matrix."""
    grid, aux = _split_tokens(x, cfg.grid, cfg.grid)
    patch_feats = life_patch_features(grid, p, cfg.kernel_sizes, cfg.paddings)
    aux_feats = life_aux_features(aux, p, len(cfg.kernel_sizes))
    return assemble_qkv(patch_feats, aux_feats)


def life_onescale_qkv(x: Tensor, p: Mapping[str, Tensor], cfg: ModelConfig) -> tuple[Tensor, Tensor, Tensor]:
    """Single depthwise-separable 3×3 stage whose 3C outputs split into Q, K, V."""
    grid, aux = _split_tokens(x, cfg.grid, cfg.grid)
    dw = depthwise_conv2d(grid, p["dw.weight"], p["dw.bias"], pad=1)
    fp = grid_to_tokens(_pointwise(dw, p, "pw"))
    fa = reshape(_pointwise(reshape(aux, aux.shape + (1,)), p, "pw"), fp.shape[:-1] + (aux.shape[-1],))
    q, k, v = split(concat([fp, fa], axis=-1), 3, axis=-2)
    return q, k, v


def life_param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes of one block's generator, for ``cfg.qkv_mode``."""
    c = cfg.embed_dim
    if cfg.qkv_mode == "life_onescale":
        return {
            "dw.weight": (c, 1, 3, 3),
            "dw.bias": (c,),
            "pw.weight": (3 * c, c, 1, 1),
            "pw.bias": (3 * c,),
        }
    shapes = {"pw1.weight": (c, c, 1, 1), "pw1.bias": (c,)}
    for s, k in enumerate(cfg.kernel_sizes[1:], start=2):
        shapes[f"dw{s}.weight"] = (c, 1, k, k)
        shapes[f"dw{s}.bias"] = (c,)
        shapes[f"pw{s}.weight"] = (c, c, 1, 1)
        shapes[f"pw{s}.bias"] = (c,)
    return shapes


def receptive_radius(kernel_sizes: Sequence[int]) -> list[int]:
    """Chebyshev receptive radius (in patches) of each hierarchy stage."""
    return [int(r) for r in np.cumsum([k // 2 for k in kernel_sizes])]
