"""Command-line surface: train / eval / infer / gradcheck / ablate / inspect."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .checkpoint import (CheckpointError, ensure_config_matches,
                         load_checkpoint, load_model, save_checkpoint)
from .config import (ModelConfig, SCALE_PRESETS, SgdConfig, UPSAMPLE_MODES,
                     load_config_file)
from .data import (DataError, SynthSpec, load_dataset, read_ppm,
                   synth_dataset, train_val_split, write_pgm)
from .gradcheck import run_layer_checks, run_model_check
from .metrics import MetricReport
from .model import SwinUnet, parameter_count
from .tensor import Tensor, no_grad
from .train import (TrainSettings, TrainingDivergedError, evaluate,
                    run_ablation, train, write_ablation_csv,
                    write_metrics_csv)


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key-value config file")
    p.add_argument("--scale", choices=sorted(SCALE_PRESETS),
                   help="architecture preset (ignored when --config is given)")
    p.add_argument("--img-size", type=int, help="override input resolution")
    p.add_argument("--upsample", choices=UPSAMPLE_MODES,
                   help="decoder upsampling mode")
    p.add_argument("--skips", type=int, choices=range(4),
                   help="number of enabled skip connections (0..3)")
    p.add_argument("--classes", type=int, help="number of segmentation classes")


def _resolve_config(args, default_scale: str = "toy") -> ModelConfig:
    if args.config is not None:
        cfg = load_config_file(args.config)
    else:
        cfg = SCALE_PRESETS[args.scale or default_scale]()
    overrides = {}
    if getattr(args, "img_size", None) is not None:
        overrides["img_size"] = args.img_size
    if getattr(args, "upsample", None) is not None:
        overrides["upsample_mode"] = args.upsample
    if getattr(args, "skips", None) is not None:
        overrides["skip_count"] = args.skips
    if getattr(args, "classes", None) is not None:
        overrides["num_classes"] = args.classes
    if overrides:
        d = cfg.to_dict()
        d.update(overrides)
        cfg = ModelConfig.from_dict(d)
    return cfg


def _dtype(args):
    return np.float64 if getattr(args, "precision", 32) == 64 else np.float32


def _load_data(args, cfg: ModelConfig):
    if args.data is not None:
        batch = load_dataset(args.data, cfg.num_classes)
        if batch.images.shape[1] != cfg.img_size:
            raise DataError(f"dataset resolution {batch.images.shape[1]} does "
                            f"not match configured img_size {cfg.img_size}")
        return batch
    spec = SynthSpec(img_size=cfg.img_size, num_classes=cfg.num_classes,
                     num_samples=args.synthetic)
    batch, _ = synth_dataset(spec, args.seed)
    return batch


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    sgd = SgdConfig(lr=args.lr, momentum=args.momentum,
                    weight_decay=args.weight_decay, batch_size=args.batch_size,
                    max_iters=args.iters, seed=args.seed).validate()
    batch = _load_data(args, cfg)
    train_batch, val_batch = train_val_split(batch)
    settings = TrainSettings(eval_interval=args.eval_interval)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(cfg, sgd, train_batch, val_batch, settings=settings,
                   log=lambda msg: print(msg), dtype=_dtype(args))
    save_checkpoint(out / "model.ckpt", cfg, result.model.named_params())
    write_metrics_csv(out / "metrics.csv", result.rows, cfg.num_classes)
    report = result.final_report
    print(f"final mean_dsc {report.mean_dsc:.4f}  checkpoint: {out/'model.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    cfg, params = load_checkpoint(args.ckpt)
    if args.config is not None or args.scale is not None:
        ensure_config_matches(_resolve_config(args), cfg)
    model = SwinUnet(cfg, rng=None, dtype=_dtype(args))
    model.load_state(params)
    batch = _load_data(args, cfg)
    report = evaluate(model, batch, hd_percentile=args.hd_percentile)
    _write_eval_csv(args.out, report)
    print(f"mean_dsc {report.mean_dsc:.4f}  mean_hd "
          f"{'n/a' if report.mean_hd is None else f'{report.mean_hd:.4f}'}")
    return 0


def _write_eval_csv(path, report: MetricReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mean_dsc"]
                        + [f"dsc_class_{c}" for c in report.class_ids]
                        + ["mean_hd"]
                        + [f"hd_class_{c}" for c in report.class_ids])
        hd_cells = ["" if h is None else f"{h:.6f}" for h in report.per_class_hd]
        writer.writerow([f"{report.mean_dsc:.6f}"]
                        + [f"{d:.6f}" for d in report.per_class_dsc]
                        + ["" if report.mean_hd is None else f"{report.mean_hd:.6f}"]
                        + hd_cells)


def cmd_infer(args) -> int:
    model = load_model(args.ckpt, dtype=_dtype(args))
    cfg = model.cfg
    img = read_ppm(args.image).astype(np.float32) / 255.0
    if img.shape[:2] != (cfg.img_size, cfg.img_size):
        raise DataError(f"image resolution {img.shape[:2]} does not match "
                        f"checkpoint img_size {cfg.img_size}")
    with no_grad():
        logits = model.forward(Tensor(img[None], dtype=model.dtype))
    mask = np.argmax(logits.data[0], axis=-1)
    write_pgm(args.out, mask)
    if args.probs is not None:
        probs = _softmax_np(logits.data[0])
        planes = np.ascontiguousarray(probs.transpose(2, 0, 1), dtype="<f4")
        Path(args.probs).write_bytes(planes.tobytes())
        sidecar = Path(str(args.probs) + ".txt")
        k, h, w = planes.shape
        sidecar.write_text(f"shape=({k},{h},{w}) dtype=float32-le "
                           f"layout=class,row,col\n")
    print(f"wrote {args.out}")
    return 0


def _softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cmd_gradcheck(args) -> int:
    cfg = None
    if args.config is not None:
        cfg = load_config_file(args.config)
    results = run_layer_checks(seed=args.seed)
    width = max(len(name) for name, _ in results)
    worst = 0.0
    for name, err in results:
        print(f"{name:<{width}}  max rel err {err:.3e}")
        worst = max(worst, err)
    model_err, where = run_model_check(cfg=cfg, seed=args.seed)
    print(f"{'model/end_to_end':<{width}}  max rel err {model_err:.3e} "
          f"(worst at {where})")
    worst = max(worst, model_err)
    ok = worst < args.tol
    print(f"overall max rel err {worst:.3e}  tol {args.tol:g}  "
          f"{'OK' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    sgd = SgdConfig(lr=args.lr, momentum=args.momentum,
                    weight_decay=args.weight_decay, batch_size=args.batch_size,
                    max_iters=args.iters, seed=args.seed).validate()
    spec = SynthSpec(img_size=cfg.img_size, num_classes=cfg.num_classes,
                     num_samples=args.synthetic)
    rows = run_ablation(cfg, sgd, spec, args.seed,
                        settings=TrainSettings(eval_interval=args.iters),
                        log=lambda msg: print(msg))
    write_ablation_csv(args.out, rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_inspect(args) -> int:
    cfg, params = load_checkpoint(args.ckpt)
    print("config:")
    for key, val in cfg.to_dict().items():
        print(f"  {key} = {val}")
    print("tensors:")
    total = 0
    for name, arr in params.items():
        print(f"  {name:<40} shape {str(tuple(arr.shape)):<18} "
              f"count {arr.size}")
        total += arr.size
    analytic = parameter_count(cfg)
    print(f"total parameters: {total} (analytic: {analytic})")
    if total != analytic:
        print("warning: manifest count differs from analytic count",
              file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="swinseg",
        description="Train, evaluate, and inspect the windowed-attention "
                    "U-shaped segmentation model.")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_common(p, data=False, sgd=False):
        p.add_argument("--seed", type=int, default=0)
        if data:
            g = p.add_mutually_exclusive_group()
            g.add_argument("--data", type=Path, help="directory of .ppm/.pgm pairs")
            g.add_argument("--synthetic", type=int, default=64, metavar="N",
                           help="generate N synthetic samples (default)")
        if sgd:
            p.add_argument("--lr", type=float, default=0.1)
            p.add_argument("--momentum", type=float, default=0.9)
            p.add_argument("--weight-decay", type=float, default=1e-4)
            p.add_argument("--batch-size", type=int, default=24)
            p.add_argument("--iters", type=int, default=200)

    p = sub.add_parser("train", help="train a model (synthetic or file data)")
    _model_flags(p)
    add_common(p, data=True, sgd=True)
    p.add_argument("--eval-interval", type=int, default=25)
    p.add_argument("--precision", type=int, choices=(32, 64), default=32)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, write a metrics CSV")
    _model_flags(p)
    add_common(p, data=True)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="metrics CSV path")
    p.add_argument("--precision", type=int, choices=(32, 64), default=32)
    p.add_argument("--hd-percentile", type=float, default=None,
                   help="use percentile Hausdorff (e.g. 95) instead of max")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="segment one PPM image with a checkpoint")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output P5 mask")
    p.add_argument("--probs", type=Path,
                   help="also dump raw float32 class-probability planes")
    p.add_argument("--precision", type=int, choices=(32, 64), default=32)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("gradcheck",
                       help="finite-difference gradient suites (float64)")
    p.add_argument("--config", type=Path,
                   help="config for the end-to-end model check (default: toy)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-3)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("ablate",
                       help="sweep upsample modes x skip counts, write a CSV")
    _model_flags(p)
    add_common(p, sgd=True)
    p.add_argument("--synthetic", type=int, default=64, metavar="N")
    p.add_argument("--out", type=Path, required=True, help="ablation CSV path")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("inspect", help="dump a checkpoint's config and manifest")
    p.add_argument("--ckpt", type=Path, required=True)
    p.set_defaults(fn=cmd_inspect)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, CheckpointError, TrainingDivergedError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
