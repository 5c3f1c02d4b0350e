"""Training loop, validation metrics trace, and the ablation harness."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig, SgdConfig, UPSAMPLE_MODES
from .data import SampleBatch, SynthSpec, augment, synth_dataset, train_val_split
from .losses import seg_loss
from .metrics import MetricReport, evaluate_masks
from .model import SwinUnet
from .optim import SGD
from .tensor import Tensor, backward, no_grad


class TrainingDivergedError(RuntimeError):
    """Raised when the loss turns non-finite; names the first bad tensor."""


@dataclass
class TrainSettings:
    eval_interval: int = 25
    ce_weight: float = 0.5
    use_augment: bool = True
    hd_percentile: float | None = None


@dataclass
class TrainResult:
    model: SwinUnet
    rows: list[dict] = field(default_factory=list)
    final_report: MetricReport | None = None


def _first_nonfinite(loss: Tensor) -> str:
    tape = loss._tape
    if tape is not None:
        for i, node in enumerate(tape.nodes):
            if not np.all(np.isfinite(node.output.data)):
                return f"tape node {i} (op '{node.op}', shape {node.output.shape})"
    return "loss"


def predict(model: SwinUnet, images: np.ndarray, chunk: int = 8) -> np.ndarray:
    """Argmax class masks for a stack of images, evaluated without a tape."""
    out = []
    with no_grad():
        for start in range(0, images.shape[0], chunk):
            logits = model.forward(Tensor(images[start:start + chunk],
                                          dtype=model.dtype))
            out.append(np.argmax(logits.data, axis=-1))
    return np.concatenate(out, axis=0)


def evaluate(model: SwinUnet, batch: SampleBatch,
             hd_percentile: float | None = None,
             include_background: bool = False) -> MetricReport:
    preds = predict(model, batch.images)
    return evaluate_masks(list(preds), list(batch.labels),
                          model.cfg.num_classes,
                          include_background=include_background,
                          hd_percentile=hd_percentile)


def train(model_cfg: ModelConfig, sgd_cfg: SgdConfig,
          train_batch: SampleBatch, val_batch: SampleBatch,
          settings: TrainSettings | None = None,
          log=None, dtype=np.float32) -> TrainResult:
    """Run the SGD loop; returns the trained model and the metrics trace.

    Deterministic for a fixed seed, config, and single-threaded execution:
    initialization, batch sampling, and augmentation all derive from
    ``sgd_cfg.seed``.
    """
    settings = settings or TrainSettings()
    sgd_cfg.validate()
    if len(train_batch) == 0 or len(val_batch) == 0:
        raise ValueError(
            f"need non-empty train and validation splits, got "
            f"{len(train_batch)}/{len(val_batch)}; the 80/20 split needs "
            f"at least 5 samples")
    init_ss, batch_ss, aug_ss = np.random.SeedSequence(sgd_cfg.seed).spawn(3)
    model = SwinUnet(model_cfg, rng=np.random.default_rng(init_ss), dtype=dtype)
    opt = SGD(model.named_params(), sgd_cfg)
    batch_rng = np.random.default_rng(batch_ss)
    aug_rng = np.random.default_rng(aug_ss)
    result = TrainResult(model)

    n_train = len(train_batch)
    for it in range(1, sgd_cfg.max_iters + 1):
        idx = batch_rng.choice(n_train, size=min(sgd_cfg.batch_size, n_train),
                               replace=False)
        batch = train_batch.subset(idx)
        if settings.use_augment:
            batch = augment(batch, aug_rng)
        logits = model.forward(Tensor(batch.images, dtype=model.dtype))
        loss = seg_loss(logits, batch.labels, settings.ce_weight)
        loss_val = loss.item()
        if not np.isfinite(loss_val):
            raise TrainingDivergedError(
                f"non-finite loss at iteration {it}; first offending tensor: "
                f"{_first_nonfinite(loss)}")
        backward(loss)
        opt.step()
        opt.zero_grad()

        if it % settings.eval_interval == 0 or it == sgd_cfg.max_iters:
            report = evaluate(model, val_batch,
                              hd_percentile=settings.hd_percentile)
            row = {"iter": it, "loss": loss_val, "report": report}
            result.rows.append(row)
            result.final_report = report
            if log:
                log(f"iter {it:5d}  loss {loss_val:.4f}  "
                    f"mean_dsc {report.mean_dsc:.4f}")
    if result.final_report is None:
        result.final_report = evaluate(model, val_batch,
                                       hd_percentile=settings.hd_percentile)
    return result


def metrics_header(num_classes: int, include_background: bool = False) -> list[str]:
    first = 0 if include_background else 1
    cols = ["iter", "loss", "mean_dsc"]
    cols += [f"dsc_class_{c}" for c in range(first, num_classes)]
    cols.append("mean_hd")
    return cols


def write_metrics_csv(path, rows: list[dict], num_classes: int) -> None:
    """One row per eval interval: iter,loss,mean_dsc,per-class dsc...,mean_hd."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(metrics_header(num_classes))
        for row in rows:
            report: MetricReport = row["report"]
            writer.writerow([row["iter"], f"{row['loss']:.6f}"]
                            + report.csv_cells())


# -- ablation harness -----------------------------------------------------------


def run_ablation(base_cfg: ModelConfig, sgd_cfg: SgdConfig,
                 spec: SynthSpec, data_seed: int,
                 settings: TrainSettings | None = None,
                 log=None) -> list[dict]:
    """Sweep all upsample modes x skip counts on one synthetic task.

    Every variant trains from the same seed on the same dataset; returns one
    result row per (mode, skip_count) combination.
    """
    dataset, _ = synth_dataset(spec, data_seed)
    train_batch, val_batch = train_val_split(dataset)
    rows = []
    for mode in UPSAMPLE_MODES:
        for skips in range(4):
            cfg_dict = base_cfg.to_dict()
            cfg_dict.update(upsample_mode=mode, skip_count=skips)
            cfg = ModelConfig.from_dict(cfg_dict)
            if log:
                log(f"ablation: upsample={mode} skips={skips}")
            result = train(cfg, sgd_cfg, train_batch, val_batch,
                           settings=settings)
            report = result.final_report
            rows.append({
                "upsample_mode": mode,
                "skip_count": skips,
                "mean_dsc": report.mean_dsc,
                "mean_hd": report.mean_hd,
                "final_loss": result.rows[-1]["loss"] if result.rows else float("nan"),
            })
    return rows


def write_ablation_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["upsample_mode", "skip_count", "mean_dsc",
                         "mean_hd", "final_loss"])
        for r in rows:
            hd = "" if r["mean_hd"] is None else f"{r['mean_hd']:.6f}"
            writer.writerow([r["upsample_mode"], r["skip_count"],
                             f"{r['mean_dsc']:.6f}", hd,
                             f"{r['final_loss']:.6f}"])


def read_ablation_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
