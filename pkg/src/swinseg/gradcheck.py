"""Finite-difference gradient suites for every differentiable layer type.

Each check compares tape gradients against central differences at float64.
``run_layer_checks`` covers individual layers; ``run_model_check`` samples
parameter elements of the full toy model end to end.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import tensor as T
from .attention import (WindowConfig, build_attention_mask, init_swin_block,
                        init_window_attention, swin_block, wmsa)
from .config import ModelConfig, toy_config
from .losses import seg_loss
from .model import (SwinUnet, bilinear_upsample, final_expand_4x,
                    patch_expanding, patch_merging, transposed_conv_upsample)
from .tensor import Tensor, backward, grad_check, no_grad

_H = 1e-5


def _proj(rng, shape):
    """Fixed random projection turning a tensor output into a scalar."""
    r = Tensor(rng.standard_normal(shape), dtype=np.float64)
    return lambda out: T.tensor_sum(out * r)


def run_layer_checks(h: float = _H, seed: int = 0) -> list[tuple[str, float]]:
    """Max relative finite-difference error per layer type, at float64."""
    rng = np.random.default_rng(seed)
    f64 = np.float64
    results: list[tuple[str, float]] = []

    def check(name, f, x):
        rep = grad_check(f, x, h=h)
        results.append((name, rep.max_rel_err))

    # linear: gradients wrt input, weight, and bias
    x = Tensor(rng.standard_normal((3, 5)), dtype=f64)
    w = Tensor(rng.standard_normal((5, 4)), dtype=f64)
    b = Tensor(rng.standard_normal(4), dtype=f64)
    p = _proj(rng, (3, 4))
    check("linear/x", lambda t: p(T.linear(t, w, b)), x)
    check("linear/w", lambda t: p(T.linear(x, t, b)), w)
    check("linear/b", lambda t: p(T.linear(x, w, t)), b)

    # matmul, batched
    a = Tensor(rng.standard_normal((2, 4, 5)), dtype=f64)
    bb = Tensor(rng.standard_normal((2, 5, 3)), dtype=f64)
    p = _proj(rng, (2, 4, 3))
    check("matmul/a", lambda t: p(T.matmul(t, bb)), a)
    check("matmul/b", lambda t: p(T.matmul(a, t)), bb)

    # layer norm
    x = Tensor(rng.standard_normal((4, 8)), dtype=f64)
    g = Tensor(rng.standard_normal(8), dtype=f64)
    be = Tensor(rng.standard_normal(8), dtype=f64)
    p = _proj(rng, (4, 8))
    check("layer_norm/x", lambda t: p(T.layer_norm(t, g, be)), x)
    check("layer_norm/gamma", lambda t: p(T.layer_norm(x, t, be)), g)
    check("layer_norm/beta", lambda t: p(T.layer_norm(x, g, t)), be)

    # gelu, both forms, including the sample points -1, 0.5, 2
    x = Tensor(np.concatenate([[-1.0, 0.5, 2.0], rng.standard_normal(5)]),
               dtype=f64)
    p = _proj(rng, 8)
    check("gelu/erf", lambda t: p(T.gelu(t)), x)
    check("gelu/tanh", lambda t: p(T.gelu(t, approximate=True)), x)

    # softmax
    x = Tensor(rng.standard_normal((3, 6)), dtype=f64)
    p = _proj(rng, (3, 6))
    check("softmax", lambda t: p(T.softmax(t, axis=-1)), x)

    # windowed attention with bias and mask (shifted 4x4 grid, M=2)
    aw = init_window_attention(4, 2, 2, rng, dtype=f64)
    mask = build_attention_mask(4, 4, 2, 1, dtype=f64)
    xw = Tensor(rng.standard_normal((4, 4, 4)), dtype=f64)
    p = _proj(rng, (4, 4, 4))
    check("attention/x", lambda t: p(wmsa(t, aw, 2, mask)), xw)
    for pname in ("wq", "wk", "wv", "wo", "bias_table"):
        check(f"attention/{pname}",
              lambda t, pn=pname: p(wmsa(xw, replace(aw, **{pn: t}), 2, mask)),
              getattr(aw, pname))

    # patch merging / expanding / final expand / upsamplers
    x = Tensor(rng.standard_normal((1, 4, 4, 4)), dtype=f64)
    w = Tensor(rng.standard_normal((16, 8)), dtype=f64)
    b = Tensor(rng.standard_normal(8), dtype=f64)
    p = _proj(rng, (1, 2, 2, 8))
    check("patch_merging/x", lambda t: p(patch_merging(t, w, b)), x)
    check("patch_merging/w", lambda t: p(patch_merging(x, t, b)), w)

    w = Tensor(rng.standard_normal((4, 8)), dtype=f64)
    b = Tensor(rng.standard_normal(8), dtype=f64)
    p = _proj(rng, (1, 8, 8, 2))
    check("patch_expanding/x", lambda t: p(patch_expanding(t, w, b)), x)
    check("patch_expanding/w", lambda t: p(patch_expanding(x, t, b)), w)

    w = Tensor(rng.standard_normal((4, 64)), dtype=f64)
    b = Tensor(rng.standard_normal(64), dtype=f64)
    p = _proj(rng, (1, 16, 16, 4))
    check("final_expand/x", lambda t: p(final_expand_4x(t, w, b)), x)

    w = Tensor(rng.standard_normal((4, 2)), dtype=f64)
    b = Tensor(rng.standard_normal(2), dtype=f64)
    p = _proj(rng, (1, 8, 8, 2))
    check("bilinear_upsample/x", lambda t: p(bilinear_upsample(t, w, b)), x)
    check("bilinear_upsample/w", lambda t: p(bilinear_upsample(x, t, b)), w)

    w = Tensor(rng.standard_normal((4, 8)), dtype=f64)
    b = Tensor(rng.standard_normal(2), dtype=f64)
    p = _proj(rng, (1, 8, 8, 2))
    check("transposed_conv/x", lambda t: p(transposed_conv_upsample(t, w, b)), x)
    check("transposed_conv/w", lambda t: p(transposed_conv_upsample(x, t, b)), w)

    # full transformer block pair on 2x2 windows
    blocks = (init_swin_block(4, 2, 2, rng, dtype=f64),
              init_swin_block(4, 2, 2, rng, dtype=f64))
    xb = Tensor(rng.standard_normal((1, 16, 4)), dtype=f64)
    p = _proj(rng, (1, 16, 4))
    mask = build_attention_mask(4, 4, 2, 1, dtype=f64)

    def pair(t, blk0=None, blk1=None):
        y = swin_block(t, 4, 4, WindowConfig(2, 0, 2, 2),
                       blk0 or blocks[0], None)
        return p(swin_block(y, 4, 4, WindowConfig(2, 1, 2, 2),
                            blk1 or blocks[1], mask))

    check("swin_block_pair/x", pair, xb)
    plain = ("ln1_g", "ln1_b", "ln2_g", "ln2_b",
             "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2")
    for j in (0, 1):
        blk = blocks[j]
        kw = "blk0" if j == 0 else "blk1"
        for pname in plain:
            check(f"swin_block_pair/blk{j}.{pname}",
                  lambda t, pn=pname: pair(
                      xb, **{kw: replace(blk, **{pn: t})}),
                  getattr(blk, pname))
        for pname in ("wq", "wk", "wv", "wo", "bias_table"):
            check(f"swin_block_pair/blk{j}.attn.{pname}",
                  lambda t, pn=pname: pair(
                      xb, **{kw: replace(blk, attn=replace(blk.attn, **{pn: t}))}),
                  getattr(blk.attn, pname))

    # combined segmentation loss wrt logits
    labels = rng.integers(0, 2, size=(1, 2, 2))
    logits = Tensor(rng.standard_normal((1, 2, 2, 2)), dtype=f64)
    check("seg_loss/logits", lambda t: seg_loss(t, labels), logits)

    return results


def run_model_check(cfg: ModelConfig | None = None, h: float = _H,
                    samples_per_tensor: int = 2,
                    seed: int = 0) -> tuple[float, str]:
    """End-to-end check on the toy model: the full loss gradient against
    central differences on a random subsample of each parameter tensor.

    Returns (max relative error, name of the worst parameter).
    """
    cfg = cfg or toy_config()
    rng = np.random.default_rng(seed)
    model = SwinUnet(cfg, rng=np.random.default_rng(seed + 1), dtype=np.float64)
    images = rng.random((1, cfg.img_size, cfg.img_size, cfg.in_channels))
    labels = rng.integers(0, cfg.num_classes,
                          size=(1, cfg.img_size, cfg.img_size))

    def loss_value() -> float:
        with no_grad():
            logits = model.forward(Tensor(images, dtype=np.float64))
            return seg_loss(logits, labels).item()

    params = model.named_params()
    for t in params.values():
        t.grad = None
    loss = seg_loss(model.forward(Tensor(images, dtype=np.float64)), labels)
    backward(loss)

    worst_err, worst_name = 0.0, ""
    for name, t in params.items():
        flat = t.data.reshape(-1)
        gflat = (t.grad if t.grad is not None
                 else np.zeros_like(t.data)).reshape(-1)
        n = min(samples_per_tensor, flat.size)
        for i in rng.choice(flat.size, size=n, replace=False):
            orig = flat[i]
            flat[i] = orig + h
            hi = loss_value()
            flat[i] = orig - h
            lo = loss_value()
            flat[i] = orig
            fd = (hi - lo) / (2 * h)
            err = abs(gflat[i] - fd) / max(abs(gflat[i]), abs(fd), 1.0)
            if err > worst_err:
                worst_err, worst_name = err, f"{name}[{i}]"
    return worst_err, worst_name
