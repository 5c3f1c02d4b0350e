"""Pinned desk-scale benchmark recipes and their reference thresholds.

The toy benchmark threshold was established by the seed-pinned reference run
recorded here; tests assert against these exact settings.  Retune only by
re-running the reference and updating the constants together.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import SgdConfig, toy_config
from .data import SynthSpec, synth_dataset, train_val_split
from .train import TrainResult, TrainSettings, run_ablation, train


@dataclass(frozen=True)
class ToyBenchmark:
    data_seed: int = 4
    num_samples: int = 256
    lr: float = 0.3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 48
    max_iters: int = 200
    train_seed: int = 4
    # mean foreground DSC of the reference run: 0.9359; pinned threshold
    dsc_threshold: float = 0.90


TOY_BENCHMARK = ToyBenchmark()


@dataclass(frozen=True)
class AblationRecipe:
    data_seed: int = 0
    num_samples: int = 128
    lr: float = 0.2
    batch_size: int = 24
    max_iters: int = 120
    train_seed: int = 0


ABLATION_RECIPE = AblationRecipe()


def run_toy_benchmark(log=None, eval_interval: int = 25) -> TrainResult:
    """The seed-pinned 32x32 three-class run behind ``dsc_threshold``."""
    bench = TOY_BENCHMARK
    cfg = toy_config()
    spec = SynthSpec(img_size=cfg.img_size, num_classes=cfg.num_classes,
                     num_samples=bench.num_samples)
    batch, _ = synth_dataset(spec, bench.data_seed)
    train_batch, val_batch = train_val_split(batch)
    sgd = SgdConfig(lr=bench.lr, momentum=bench.momentum,
                    weight_decay=bench.weight_decay,
                    batch_size=bench.batch_size, max_iters=bench.max_iters,
                    seed=bench.train_seed)
    return train(cfg, sgd, train_batch, val_batch,
                 settings=TrainSettings(eval_interval=eval_interval), log=log)


def run_ablation_benchmark(log=None) -> list[dict]:
    """All upsample modes x skip counts at the pinned ablation recipe."""
    recipe = ABLATION_RECIPE
    cfg = toy_config()
    spec = SynthSpec(img_size=cfg.img_size, num_classes=cfg.num_classes,
                     num_samples=recipe.num_samples)
    sgd = SgdConfig(lr=recipe.lr, momentum=0.9, weight_decay=1e-4,
                    batch_size=recipe.batch_size, max_iters=recipe.max_iters,
                    seed=recipe.train_seed)
    return run_ablation(cfg, sgd, spec, recipe.data_seed,
                        settings=TrainSettings(eval_interval=recipe.max_iters),
                        log=log)
