"""Attention Roll-Out and its dense, class-specific variant.

All matrices are ``T×T`` with ``T = N + 1`` and the class token at index
``N`` (the last row/column).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class RolloutError(ValueError):
    pass


@dataclass
class RegionMask:
    """Boolean pixel (or lattice) grid marking a predicted/ground-truth region."""

    grid: np.ndarray
    source: str = "segmentation"

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=bool)
        if self.grid.ndim != 2:
            raise RolloutError(f"mask must be 2-D, got shape {self.grid.shape}")
        if self.source not in ("ground_truth", "bbox", "segmentation"):
            raise RolloutError(f"unknown mask source {self.source!r}")


def head_average(attention, block: int | None = None) -> np.ndarray:
    """Mean over heads of one block's ``heads×T×T`` attention.

    ``attention`` is either a ``heads×T×T`` array or a per-block list of them
    (then ``block`` picks one).
    """
    if isinstance(attention, (list, tuple)):
        if not attention:
            raise RolloutError("empty attention record")
        attention = attention[0 if block is None else block]
    a = np.asarray(attention, dtype=np.float64)
    if a.ndim == 2:
        return a
    if a.ndim != 3 or a.shape[0] == 0:
        raise RolloutError(f"expected heads×T×T attention, got shape {a.shape}")
    return a.mean(axis=0)


def rollout(blocks: Sequence[np.ndarray]) -> np.ndarray:
    """``R = Â_L ⋯ Â_1`` with ``Â = rownorm(0.5 A + 0.5 I)``."""
    if len(blocks) == 0:
        raise RolloutError("no attention blocks to roll out")
    size = np.asarray(blocks[0]).shape
    if len(size) != 2 or size[0] != size[1]:
        raise RolloutError(f"attention must be square, got {size}")
    eye = np.eye(size[0])
    r = eye.copy()
    for a in blocks:
        a = np.asarray(a, dtype=np.float64)
        if a.shape != size:
            raise RolloutError(f"block of shape {a.shape} does not match {size}")
        a_hat = 0.5 * a + 0.5 * eye
        a_hat /= a_hat.sum(axis=1, keepdims=True)
        r = a_hat @ r
    return r


def rollout_record(per_block_heads: Sequence[np.ndarray]) -> np.ndarray:
    """Head-average every block, then roll out."""
    return rollout([head_average(a) for a in per_block_heads])


def _lattice(t: int, shape: tuple[int, int] | None) -> tuple[int, int]:
    n = t - 1
    if shape is None:
        side = int(round(np.sqrt(n)))
        if side * side != n:
            raise RolloutError(f"{n} patch tokens do not form a square lattice")
        shape = (side, side)
    if shape[0] * shape[1] != n:
        raise RolloutError(f"lattice {shape} does not hold {n} patch tokens")
    return shape


def minmax(values: np.ndarray) -> np.ndarray:
    """Scale to [0, 1]; constant inputs map to all zeros."""
    lo, hi = values.min(), values.max()
    if hi - lo <= 0:
        return np.zeros_like(values, dtype=np.float64)
    return (values - lo) / (hi - lo)


def cls_attention_map(r: np.ndarray, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Class-token row of the rollout, patch columns only, as a normalized H×W map."""
    r = np.asarray(r, dtype=np.float64)
    h, w = _lattice(r.shape[0], shape)
    if h * w <= 1:
        raise RolloutError("a 1×1 lattice has no spatial map")
    n = h * w
    return minmax(r[n, :n].reshape(h, w))


def align_mask(region, patch_size: int, image_size: int | tuple[int, int] | None = None) -> np.ndarray:
    """Indices of patch tokens whose footprint meets the region.

    ``region`` is a :class:`RegionMask` / boolean array at pixel resolution, or
    a half-open pixel box ``(x0, y0, x1, y1)`` (``image_size`` then required).
    """
    if isinstance(region, (RegionMask, np.ndarray)):
        grid = region.grid if isinstance(region, RegionMask) else np.asarray(region, dtype=bool)
        ph, pw = grid.shape
        if ph % patch_size or pw % patch_size:
            raise RolloutError(f"mask {grid.shape} is not a whole number of {patch_size}-pixel patches")
        gh, gw = ph // patch_size, pw // patch_size
        hits = grid.reshape(gh, patch_size, gw, patch_size).any(axis=(1, 3))
    else:
        if image_size is None:
            raise RolloutError("a bounding box needs the image size")
        ih, iw = (image_size, image_size) if np.isscalar(image_size) else image_size
        x0, y0, x1, y1 = (float(v) for v in region)
        x0, x1 = max(x0, 0.0), min(x1, float(iw))
        y0, y1 = max(y0, 0.0), min(y1, float(ih))
        gh, gw = ih // patch_size, iw // patch_size
        hits = np.zeros((gh, gw), dtype=bool)
        if x1 > x0 and y1 > y0:
            c0, c1 = int(x0 // patch_size), int(np.ceil(x1 / patch_size))
            r0, r1 = int(y0 // patch_size), int(np.ceil(y1 / patch_size))
            hits[r0:r1, c0:c1] = True
    tokens = np.flatnonzero(hits.reshape(-1))
    if tokens.size == 0:
        raise RolloutError("region selects no patch tokens")
    return tokens


def dense_rollout(r: np.ndarray, tokens, shape: tuple[int, int] | None = None, atol: float = 1e-12) -> np.ndarray:
    """Class-specific map: mean rollout row of ``tokens`` minus the all-token mean, clamped at 0.

    Differences below ``atol`` count as zero so that rounding residue is not
    stretched to full scale by the normalization.
    """
    r = np.asarray(r, dtype=np.float64)
    h, w = _lattice(r.shape[0], shape)
    n = h * w
    tokens = np.unique(np.asarray(tokens, dtype=np.int64).reshape(-1))
    if tokens.size == 0:
        raise RolloutError("empty token set")
    if tokens.min() < 0 or tokens.max() >= n:
        raise RolloutError(f"tokens must be patch indices in [0, {n})")
    selected = r[tokens].mean(axis=0)
    global_content = r.mean(axis=0)
    diff = selected - global_content
    diff = np.where(diff > atol, diff, 0.0)[:n]
    return minmax(diff.reshape(h, w))
