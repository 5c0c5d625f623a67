"""Command-line front end.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import data as dio
from . import rollout as ro
from .accounting import cost_report, format_report
from .config import PRESETS, ModelConfig
from .model import VisionTransformer, param_shapes
from .optim import make_optimizer
from .tensor import Tensor, no_grad
from .train import evaluate, fit

log = logging.getLogger("lifevit")

# test split of a synthetic run uses seed + this offset
SYNTHETIC_TEST_OFFSET = 1_000_003


@dataclass
class RunConfig:
    model: dict = field(default_factory=dict)
    preset: str | None = None
    optimizer: dict = field(default_factory=lambda: {"kind": "adamw", "lr": 1e-3, "weight_decay": 0.05})
    epochs: int = 3
    batch_size: int = 128
    warmup_epochs: int = 1
    seed: int = 0
    dataset: dict = field(
        default_factory=lambda: {
            "kind": "synthetic",
            "seed": 0,
            "n_train": 8000,
            "n_test": 2000,
            "classes": 8,
            "background": "binary",
            "normalize": True,
        }
    )
    output_dir: str = "."

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        if path is None:
            return cls()
        raw = json.loads(Path(path).read_text())
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        base = cls()
        unknown = set(raw) - set(asdict(base))
        if unknown:
            raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
        for key, value in raw.items():
            current = getattr(base, key)
            if isinstance(current, dict) and isinstance(value, dict) and key != "dataset":
                value = {**current, **value}
            setattr(base, key, value)
        return base

    def model_config(self) -> ModelConfig:
        if self.preset:
            if self.preset not in PRESETS:
                raise ValueError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
            base = PRESETS[self.preset]().to_dict()
        else:
            base = ModelConfig().to_dict()
        base.update(self.model)
        return ModelConfig.from_dict(base)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.output_dir) / p


# dataset / image loading


def load_data_file(path) -> dio.Dataset:
    raw = Path(path).read_bytes()
    if raw[:4] == dio.CKPT_MAGIC:
        return dio.load_dataset(path)
    return dio.read_cifar(raw)


def build_datasets(dataset: dict, num_classes: int, image_size: int, patch_size: int):
    """Train and test splits plus the input statistics applied to both.

    Unless ``"normalize": false``, each channel is standardized with the
    training split's mean and std; the statistics are ``None`` otherwise.
    """
    train, test = _raw_splits(dataset, num_classes, image_size, patch_size)
    if not dataset.get("normalize", True):
        return train, test, None
    train, stats = dio.standardize(train)
    if test is not None:
        test, _ = dio.standardize(test, stats)
    return train, test, stats


def _raw_splits(dataset: dict, num_classes: int, image_size: int, patch_size: int):
    kind = dataset.get("kind", "synthetic")
    if kind == "synthetic":
        seed = int(dataset.get("seed", 0))
        classes = int(dataset.get("classes", num_classes))
        look = {"contrast": float(dataset.get("contrast", dio.MOTIF_CONTRAST)), "background": dataset.get("background", "uniform")}
        train = dio.gen_synthetic(seed, int(dataset.get("n_train", 8000)), classes, image_size, patch_size, **look)
        test = dio.gen_synthetic(
            seed + SYNTHETIC_TEST_OFFSET, int(dataset.get("n_test", 2000)), classes, image_size, patch_size, **look
        )
        return train, test
    if kind in ("bundle", "cifar10", "file"):
        trains = dataset["train"] if isinstance(dataset["train"], list) else [dataset["train"]]
        parts = [load_data_file(p) for p in trains]
        train = dio.Dataset(
            np.concatenate([p.images for p in parts]), np.concatenate([p.labels for p in parts])
        )
        test = load_data_file(dataset["test"]) if dataset.get("test") else None
        return train, test
    raise ValueError(f"unknown dataset kind {kind!r}")


def load_image(path) -> np.ndarray:
    """A ``3×H×W`` float image from a LIFT tensor or a binary PPM/PGM file."""
    raw = Path(path).read_bytes()
    if raw[:4] == dio.TENSOR_MAGIC:
        arr, _ = dio.decode_tensor(raw)
        if arr.ndim == 4 and arr.shape[0] == 1:
            arr = arr[0]
        if arr.ndim != 3:
            raise dio.FormatError(f"image tensor must be 3×H×W, got {arr.shape}")
        return arr
    pix = dio.decode_pnm(raw).astype(np.float32) / 255.0
    if pix.ndim == 2:
        return np.repeat(pix[None], 3, axis=0)
    return np.ascontiguousarray(pix.transpose(2, 0, 1))


def parse_mask(text: str, image_size: int):
    """``x0,y0,x1,y1`` pixel box, or a PGM whose non-zero pixels form the region."""
    parts = text.split(",")
    if len(parts) == 4:
        try:
            return tuple(float(p) for p in parts)
        except ValueError:
            pass
    grid = dio.read_pgm(text) > 0
    if grid.shape != (image_size, image_size):
        raise dio.PgmError(f"mask is {grid.shape[1]}×{grid.shape[0]}, image is {image_size}²")
    return ro.RegionMask(grid, "segmentation")


# checkpoints


def save_model(path, model: VisionTransformer, extra: dict | None = None) -> None:
    meta = {"kind": "model", "model": model.cfg.to_dict()}
    if extra:
        meta.update(extra)
    dio.save_checkpoint(path, model.params, meta)


def load_model(path, cfg: ModelConfig | None = None) -> VisionTransformer:
    """Rebuild a model from a checkpoint; ``cfg`` (if given) must match it exactly.

    The input statistics stored at training time come back as
    ``model.input_stats`` (``None`` for a model trained on raw pixels).
    """
    tensors, meta = dio.load_checkpoint(path)
    if cfg is None:
        if meta.get("kind") != "model" or "model" not in meta:
            raise dio.FormatError(f"{path} carries no model configuration")
        cfg = ModelConfig.from_dict(meta["model"])
    dio.check_against(tensors, param_shapes(cfg))
    params = {name: Tensor(tensors[name].copy(), requires_grad=True) for name in param_shapes(cfg)}
    model = VisionTransformer(cfg, params=params)
    norm = meta.get("input_stats")
    model.input_stats = None if norm is None else (np.asarray(norm["mean"]), np.asarray(norm["std"]))
    return model


def model_inputs(model: VisionTransformer, ds: dio.Dataset) -> dio.Dataset:
    """Raw-pixel data in the form the model was trained on."""
    stats = getattr(model, "input_stats", None)
    return ds if stats is None else dio.standardize(ds, stats)[0]


def attention_for(model: VisionTransformer, image: np.ndarray) -> list[np.ndarray]:
    image = model_inputs(model, dio.Dataset(image[None], [0])).images
    with no_grad():
        _, record = model(image)
    return record.for_image(0)


# subcommands


def cmd_gen_data(args) -> int:
    ds = dio.gen_synthetic(
        args.seed, args.n, args.classes, args.image_size, args.patch_size, args.contrast, args.background
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dio.save_dataset(out, ds)
    print(f"wrote {len(ds)} samples ({args.classes} classes) to {out}")
    return 0


def cmd_train(args) -> int:
    run = RunConfig.load(args.config)
    for key in ("seed", "epochs", "batch_size"):
        value = getattr(args, key)
        if value is not None:
            setattr(run, key, value)
    if args.lr is not None:
        run.optimizer = {**run.optimizer, "lr": args.lr}
    if args.qkv is not None:
        run.model = {**run.model, "qkv_mode": args.qkv}
    cfg = run.model_config()
    train, test, stats = build_datasets(run.dataset, cfg.num_classes, cfg.image_size, cfg.patch_size)

    out = run.resolve(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    metrics_path = Path(args.metrics) if args.metrics else out.with_suffix(".metrics.jsonl")
    if not metrics_path.is_absolute() and args.metrics:
        metrics_path = run.resolve(args.metrics)

    model = VisionTransformer(cfg, seed=run.seed)
    opt_kwargs = {k: v for k, v in run.optimizer.items() if k != "kind"}
    if "betas" in opt_kwargs:
        opt_kwargs["betas"] = tuple(opt_kwargs["betas"])
    opt = make_optimizer(run.optimizer.get("kind", "adamw"), model.parameters(), **opt_kwargs)

    with metrics_path.open("w") as fh:

        def emit(m):
            fh.write(json.dumps(m.as_record(), sort_keys=True) + "\n")
            fh.flush()
            print(json.dumps(m.as_record(), sort_keys=True))

        fit(model, train, opt, run.epochs, run.batch_size, run.seed, test, run.warmup_epochs, emit)
    extra = {"run": asdict(run)}
    if stats is not None:
        extra["input_stats"] = {"mean": stats[0].tolist(), "std": stats[1].tolist()}
    save_model(out, model, extra)
    print(f"saved checkpoint to {out}; metrics in {metrics_path}")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.ckpt)
    ds = model_inputs(model, load_data_file(args.data))
    acc = evaluate(model, ds, args.batch_size)
    print(f"accuracy: {acc}")
    return 0


def cmd_count(args) -> int:
    if args.config:
        run = RunConfig.load(args.config)
    else:
        run = RunConfig(preset=args.preset or "deit_tiny")
    if args.preset:
        run.preset = args.preset
    if args.qkv:
        run.model = {**run.model, "qkv_mode": args.qkv}
    cfg = run.model_config()
    report = cost_report(cfg, args.input_size)
    print(format_report(report))
    if args.out:
        record = {"model": cfg.to_dict(), **report.as_dict()}
        Path(args.out).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_export_attn(args) -> int:
    model = load_model(args.ckpt)
    maps = attention_for(model, load_image(args.image))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, heads in enumerate(maps):
        dio.write_tensor(out / f"block_{i:02d}.lift", ro.head_average(heads).astype(np.float32))
    dio.write_tensor(out / "rollout.lift", ro.rollout_record(maps).astype(np.float32))
    print(f"wrote {len(maps)} attention maps and the rollout to {out}")
    return 0


def cmd_viz_cls(args) -> int:
    model = load_model(args.ckpt)
    r = ro.rollout_record(attention_for(model, load_image(args.image)))
    heat = ro.cls_attention_map(r, (model.cfg.grid, model.cfg.grid))
    _write_map(heat, args)
    return 0


def cmd_viz_dense(args) -> int:
    model = load_model(args.ckpt)
    cfg = model.cfg
    region = parse_mask(args.mask, cfg.image_size)
    tokens = ro.align_mask(region, cfg.patch_size, cfg.image_size)
    r = ro.rollout_record(attention_for(model, load_image(args.image)))
    heat = ro.dense_rollout(r, tokens, (cfg.grid, cfg.grid))
    _write_map(heat, args)
    return 0


def _write_map(heat: np.ndarray, args) -> None:
    if args.scale > 1:
        heat = np.kron(heat, np.ones((args.scale, args.scale)))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dio.write_map_pgm(heat, out)
    print(f"wrote {heat.shape[1]}×{heat.shape[0]} map to {out}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lifevit", description="ViT with LIFE Q/K/V embeddings")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate the synthetic locality dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--classes", type=int, default=8)
    g.add_argument("--n", type=int, default=8000)
    g.add_argument("--image-size", type=int, default=32)
    g.add_argument("--patch-size", type=int, default=4)
    g.add_argument("--contrast", type=float, default=dio.MOTIF_CONTRAST, help="motif levels 0.5 ± contrast/2")
    g.add_argument("--background", choices=["uniform", "binary"], default="uniform")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model from a JSON run config")
    t.add_argument("--config")
    t.add_argument("--qkv", choices=["pff", "life", "life-onescale", "life_onescale"])
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--metrics", help="line-delimited metrics (default: <out>.metrics.jsonl)")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="accuracy of a checkpoint on a dataset file")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True, help="dataset bundle or CIFAR-10 binary file")
    e.add_argument("--batch-size", type=int, default=256)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("count", help="parameter and MAC report")
    c.add_argument("--config")
    c.add_argument("--preset", choices=sorted(PRESETS))
    c.add_argument("--qkv", choices=["pff", "life", "life-onescale", "life_onescale"])
    c.add_argument("--input-size", type=int)
    c.add_argument("--out", help="also write the report as JSON")
    c.set_defaults(func=cmd_count)

    x = sub.add_parser("export-attn", help="write per-block head-averaged attention as LIFT tensors")
    x.add_argument("--ckpt", required=True)
    x.add_argument("--image", required=True)
    x.add_argument("--out", required=True, help="output directory")
    x.set_defaults(func=cmd_export_attn)

    for name, func, helptext in (
        ("viz-cls", cmd_viz_cls, "Attention Roll-Out map of the class token"),
        ("viz-dense", cmd_viz_dense, "Dense Attention Roll-Out map for a region"),
    ):
        v = sub.add_parser(name, help=helptext)
        v.add_argument("--ckpt", required=True)
        v.add_argument("--image", required=True)
        if name == "viz-dense":
            v.add_argument("--mask", required=True, help="x0,y0,x1,y1 pixel box or a PGM mask")
        v.add_argument("--out", required=True)
        v.add_argument("--scale", type=int, default=1, help="nearest-neighbour upscaling factor")
        v.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
