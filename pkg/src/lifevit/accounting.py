"""Closed-form parameter and multiply-accumulate counts.

MAC convention: one multiply-add per weight use. Linear layers cost
``in·out`` per token, a ``k×k`` convolution ``k²·C_in·C_out`` per output
pixel (``k²·C`` when depthwise), attention ``2·T²·C`` per block for the
``QᵀK`` and ``A·V`` products. Norms, softmax, activations and bias adds are
free.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .config import ModelConfig


@dataclass
class CostReport:
    total_params: int
    total_macs: int
    input_size: int
    breakdown: list[tuple[str, int, int]] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "total_params": self.total_params,
            "total_macs": self.total_macs,
            "gmac": self.total_macs / 1e9,
            "mparams": self.total_params / 1e6,
            "input_size": self.input_size,
            "breakdown": [{"name": n, "params": p, "macs": m} for n, p, m in self.breakdown],
        }


def _qkv_cost(cfg: ModelConfig, n: int) -> tuple[int, int]:
    """(params, MACs) of one block's Q/K/V generator at ``n`` patch tokens (+1 class token)."""
    c = cfg.embed_dim
    t = n + 1
    pw_params, pw_macs = c * c + c, c * c
    if cfg.qkv_mode == "pff":
        return 3 * c * c + 3 * c, t * 3 * c * c
    if cfg.qkv_mode == "life_onescale":
        params = (9 * c + c) + (3 * c * c + 3 * c)
        macs = n * 9 * c + t * 3 * c * c
        return params, macs
    params = pw_params
    macs = t * pw_macs
    for k in cfg.kernel_sizes[1:]:
        params += (k * k * c + c) + pw_params
        macs += n * k * k * c + t * pw_macs
    return params, macs


def cost_report(cfg: ModelConfig, input_size: int | None = None) -> CostReport:
    """Per-module parameter and MAC counts for one forward pass at ``input_size``²."""
    size = cfg.image_size if input_size is None else input_size
    if size % cfg.patch_size:
        raise ValueError(f"input size {size} is not divisible by patch size {cfg.patch_size}")
    c, hid, k = cfg.embed_dim, cfg.hidden_dim, cfg.num_classes
    patch_in = cfg.in_chans * cfg.patch_size**2
    n = (size // cfg.patch_size) ** 2
    n_params = cfg.num_patches  # positional table is sized by the configured lattice
    t = n + 1

    rows: list[tuple[str, int, int]] = [
        ("patch_embed", patch_in * c + c, n * patch_in * c),
        ("pos_embed", c * n_params, 0),
        ("cls_token", c, 0),
    ]
    qkv_p, qkv_m = _qkv_cost(cfg, n)
    for i in range(cfg.depth):
        b = f"blocks.{i}"
        rows += [
            (f"{b}.norm1", 2 * c, 0),
            (f"{b}.qkv[{cfg.qkv_mode}]", qkv_p, qkv_m),
            (f"{b}.attention", 0, 2 * t * t * c),
            (f"{b}.proj", c * c + c, t * c * c),
            (f"{b}.norm2", 2 * c, 0),
            (f"{b}.mlp", (c * hid + hid) + (hid * c + c), 2 * t * c * hid),
        ]
    rows += [("norm", 2 * c, 0), ("head", c * k + k, c * k)]
    return CostReport(
        total_params=sum(r[1] for r in rows),
        total_macs=sum(r[2] for r in rows),
        input_size=size,
        breakdown=rows,
    )


def count_params(cfg: ModelConfig) -> int:
    return cost_report(cfg).total_params


def count_macs(cfg: ModelConfig, input_size: int | None = None) -> int:
    return cost_report(cfg, input_size).total_macs


def overhead_report(base: CostReport, variant: CostReport) -> dict:
    """Relative change (percent) of parameters and MACs from ``base`` to ``variant``."""
    if base.total_params == 0 or base.total_macs == 0:
        raise ValueError("base report has a zero denominator")
    return {
        "params_delta": variant.total_params - base.total_params,
        "macs_delta": variant.total_macs - base.total_macs,
        "params_pct": 100.0 * (variant.total_params - base.total_params) / base.total_params,
        "macs_pct": 100.0 * (variant.total_macs - base.total_macs) / base.total_macs,
    }


def format_report(report: CostReport) -> str:
    """Key-value text form of a report."""
    lines = [
        f"total_params: {report.total_params}",
        f"total_params_m: {report.total_params / 1e6:.2f}",
        f"total_macs: {report.total_macs}",
        f"gmac: {report.total_macs / 1e9:.3f}",
        f"input_size: {report.input_size}",
    ]
    lines += [f"{name}: params={p} macs={m}" for name, p, m in report.breakdown]
    return "\n".join(lines)
