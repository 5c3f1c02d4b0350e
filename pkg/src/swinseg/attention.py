"""Shifted-window multi-head self-attention and the two-block transformer unit.

Feature maps are (B, H, W, C) grids of tokens.  Attention is restricted to
non-overlapping M x M windows; the second block of each pair offsets the
window grid by floor(M/2) via a cyclic roll plus an additive attention mask
so cross-window information mixes without ragged windows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor, ShapeError

MASK_PENALTY = 100.0  # additive logit penalty for disallowed pairs


@dataclass(frozen=True)
class WindowConfig:
    """Per-stage attention geometry."""

    window_size: int
    shift: int
    num_heads: int
    head_dim: int

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError("window_size must be positive")
        if not 0 <= self.shift < self.window_size:
            raise ValueError("shift must lie in [0, window_size)")


@dataclass
class WindowAttentionWeights:
    """Projection matrices plus the learned relative-position-bias table.

    ``bias_table`` has one row per realizable relative offset, (2M-1)^2 rows
    in total; ``rel_index`` maps every ordered token pair of a window to its
    row.
    """

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bias_table: Tensor
    rel_index: np.ndarray

    @property
    def channels(self) -> int:
        return self.wq.shape[0]


def window_partition(x: Tensor, window_size: int) -> Tensor:
    """(B, H, W, C) -> (B*nW, M*M, C), windows and tokens in raster order."""
    b, h, w, c = x.shape
    m = window_size
    if h % m or w % m:
        raise ShapeError(f"resolution {h}x{w} not divisible by window {m}")
    x = x.reshape(b, h // m, m, w // m, m, c)
    x = x.permute(0, 1, 3, 2, 4, 5)
    return x.reshape(b * (h // m) * (w // m), m * m, c)


def window_reverse(windows: Tensor, h: int, w: int) -> Tensor:
    """Exact inverse of :func:`window_partition`."""
    nw, n, c = windows.shape
    m = math.isqrt(n)
    if m * m != n:
        raise ShapeError(f"window token count {n} is not a square")
    if h % m or w % m:
        raise ShapeError(f"resolution {h}x{w} not divisible by window {m}")
    grid = (h // m) * (w // m)
    if nw % grid:
        raise ShapeError(f"{nw} windows do not tile a {h}x{w} grid with M={m}")
    b = nw // grid
    x = windows.reshape(b, h // m, w // m, m, m, c)
    x = x.permute(0, 1, 3, 2, 4, 5)
    return x.reshape(b, h, w, c)


def cyclic_shift(x: Tensor, shift: int) -> Tensor:
    """Roll the spatial grid by (-shift, -shift); undo with ``shift < 0``."""
    if shift == 0:
        return x
    return T.roll(x, (-shift, -shift), (1, 2))


def relative_position_index(window_size: int) -> np.ndarray:
    """M^2 x M^2 map from ordered token pairs to bias-table rows.

    Entry (i, j) is (dr + M - 1) * (2M - 1) + (dc + M - 1) for the offset
    (dr, dc) between tokens i and j; values cover [0, (2M-1)^2).
    """
    m = window_size
    coords = np.stack(np.meshgrid(np.arange(m), np.arange(m), indexing="ij"))
    flat = coords.reshape(2, -1)
    rel = flat[:, :, None] - flat[:, None, :]
    rel = rel.transpose(1, 2, 0) + (m - 1)
    return (rel[..., 0] * (2 * m - 1) + rel[..., 1]).astype(np.int64)


def build_attention_mask(h: int, w: int, window_size: int, shift: int,
                         dtype=np.float32) -> np.ndarray:
    """Per-window additive masks for shifted-window attention.

    Returns (nW, M^2, M^2) with entries in {0, -MASK_PENALTY}.  Tokens of a
    shifted window that originate from different pre-shift bands (band cuts
    at H-M and H-s in the rolled frame, likewise for W) must not attend to
    each other.  ``shift == 0`` yields all-zero masks.
    """
    m = window_size
    if h % m or w % m:
        raise ShapeError(f"resolution {h}x{w} not divisible by window {m}")
    if not 0 <= shift < m:
        raise ValueError(f"shift {shift} outside [0, {m})")
    nw = (h // m) * (w // m)
    if shift == 0:
        return np.zeros((nw, m * m, m * m), dtype=dtype)

    def bands(extent):
        labels = np.zeros(extent, dtype=np.int64)
        labels[extent - m:extent - shift] = 1
        labels[extent - shift:] = 2
        return labels

    region = bands(h)[:, None] * 3 + bands(w)[None, :]
    win = region.reshape(h // m, m, w // m, m).transpose(0, 2, 1, 3)
    win = win.reshape(nw, m * m)
    diff = win[:, :, None] != win[:, None, :]
    return np.where(diff, -MASK_PENALTY, 0.0).astype(dtype)


def wmsa(x: Tensor, weights: WindowAttentionWeights, num_heads: int,
         mask: np.ndarray | None = None) -> Tensor:
    """Window multi-head self-attention over (nw, M^2, C) token windows.

    Per head: logits = Q K^T / sqrt(d) + relative-position bias (+ mask),
    softmax over keys, weighted sum of V; heads are contiguous channel
    groups, concatenated and projected by ``wo``.
    """
    nw, n, c = x.shape
    if c % num_heads:
        raise ShapeError(f"channels {c} not divisible by {num_heads} heads")
    d = c // num_heads
    if weights.rel_index.shape != (n, n):
        raise ShapeError(f"rel_index shape {weights.rel_index.shape} does not "
                         f"match window of {n} tokens")

    def split_heads(t: Tensor) -> Tensor:
        return t.reshape(nw, n, num_heads, d).permute(0, 2, 1, 3)

    q = split_heads(T.matmul(x, weights.wq))
    k = split_heads(T.matmul(x, weights.wk))
    v = split_heads(T.matmul(x, weights.wv))

    logits = T.matmul(q, k.permute(0, 1, 3, 2)) * (1.0 / math.sqrt(d))
    bias = T.gather_rows(weights.bias_table, weights.rel_index.reshape(-1))
    bias = bias.reshape(n, n, num_heads).permute(2, 0, 1)
    logits = logits + bias
    if mask is not None:
        if mask.ndim == 2:
            mask = mask[None]
        if nw % mask.shape[0]:
            raise ShapeError(f"{mask.shape[0]} masks do not tile {nw} windows")
        if mask.shape[0] != nw:
            mask = np.tile(mask, (nw // mask.shape[0], 1, 1))
        logits = logits + Tensor(mask[:, None, :, :], dtype=x.dtype)

    attn = T.softmax(logits, axis=-1)
    out = T.matmul(attn, v)
    out = out.permute(0, 2, 1, 3).reshape(nw, n, c)
    return T.matmul(out, weights.wo)


@dataclass
class SwinBlockWeights:
    """One transformer block: pre-norm attention and pre-norm MLP."""

    ln1_g: Tensor
    ln1_b: Tensor
    attn: WindowAttentionWeights
    ln2_g: Tensor
    ln2_b: Tensor
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor

    def named(self) -> dict[str, Tensor]:
        return {
            "ln1.g": self.ln1_g, "ln1.b": self.ln1_b,
            "attn.wq": self.attn.wq, "attn.wk": self.attn.wk,
            "attn.wv": self.attn.wv, "attn.wo": self.attn.wo,
            "attn.bias_table": self.attn.bias_table,
            "ln2.g": self.ln2_g, "ln2.b": self.ln2_b,
            "mlp.w1": self.mlp_w1, "mlp.b1": self.mlp_b1,
            "mlp.w2": self.mlp_w2, "mlp.b2": self.mlp_b2,
        }


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02,
                 dtype=np.float32) -> np.ndarray:
    """Zero-mean Gaussian truncated at +/-2 std (resampled, not clipped)."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


def _weight_init(rng: np.random.Generator | None, shape, dtype) -> np.ndarray:
    if rng is None:
        return np.zeros(shape, dtype=dtype)
    return trunc_normal(rng, shape, dtype=dtype)


def init_window_attention(channels: int, num_heads: int, window_size: int,
                          rng: np.random.Generator | None,
                          dtype=np.float32) -> WindowAttentionWeights:
    c, m = channels, window_size
    table_rows = (2 * m - 1) ** 2

    def proj():
        return Tensor(_weight_init(rng, (c, c), dtype), requires_grad=True)

    return WindowAttentionWeights(
        wq=proj(), wk=proj(), wv=proj(), wo=proj(),
        bias_table=Tensor(_weight_init(rng, (table_rows, num_heads), dtype),
                          requires_grad=True),
        rel_index=relative_position_index(m),
    )


def init_swin_block(channels: int, num_heads: int, window_size: int,
                    rng: np.random.Generator | None, dtype=np.float32,
                    mlp_ratio: int = 4) -> SwinBlockWeights:
    c = channels
    hidden = mlp_ratio * c

    def param(arr):
        return Tensor(arr, requires_grad=True)

    return SwinBlockWeights(
        ln1_g=param(np.ones(c, dtype=dtype)),
        ln1_b=param(np.zeros(c, dtype=dtype)),
        attn=init_window_attention(c, num_heads, window_size, rng, dtype),
        ln2_g=param(np.ones(c, dtype=dtype)),
        ln2_b=param(np.zeros(c, dtype=dtype)),
        mlp_w1=param(_weight_init(rng, (c, hidden), dtype)),
        mlp_b1=param(np.zeros(hidden, dtype=dtype)),
        mlp_w2=param(_weight_init(rng, (hidden, c), dtype)),
        mlp_b2=param(np.zeros(c, dtype=dtype)),
    )


def swin_block(x: Tensor, h: int, w: int, cfg: WindowConfig,
               weights: SwinBlockWeights,
               mask: np.ndarray | None = None,
               gelu_approximate: bool = False) -> Tensor:
    """One pre-norm transformer block over (B, H*W, C) tokens.

    ``cfg.shift`` selects the plain or the shifted-window variant; the mask
    must correspond to the same (h, w, window, shift) geometry.
    """
    b, l, c = x.shape
    if l != h * w:
        raise ShapeError(f"{l} tokens do not form a {h}x{w} grid")
    shortcut = x
    y = T.layer_norm(x, weights.ln1_g, weights.ln1_b)
    y = y.reshape(b, h, w, c)
    if cfg.shift:
        y = cyclic_shift(y, cfg.shift)
    windows = window_partition(y, cfg.window_size)
    windows = wmsa(windows, weights.attn, cfg.num_heads, mask)
    y = window_reverse(windows, h, w)
    if cfg.shift:
        y = cyclic_shift(y, -cfg.shift)
    y = y.reshape(b, l, c)
    x = shortcut + y

    y = T.layer_norm(x, weights.ln2_g, weights.ln2_b)
    y = T.linear(y, weights.mlp_w1, weights.mlp_b1)
    y = T.gelu(y, approximate=gelu_approximate)
    y = T.linear(y, weights.mlp_w2, weights.mlp_b2)
    return x + y


def swin_block_pair(x: Tensor, h: int, w: int, window_size: int,
                    num_heads: int, weights: tuple[SwinBlockWeights, SwinBlockWeights],
                    shift_mask: np.ndarray | None = None,
                    gelu_approximate: bool = False) -> Tensor:
    """Two successive blocks: plain windows, then shifted windows.

    The shift is skipped when the grid is a single window; there is nothing
    to mix across and the mask would only sever token pairs.
    """
    m = window_size
    shift = m // 2 if (h > m or w > m) else 0
    cfg0 = WindowConfig(m, 0, num_heads, x.shape[-1] // num_heads)
    cfg1 = WindowConfig(m, shift, num_heads, x.shape[-1] // num_heads)
    if shift and shift_mask is None:
        shift_mask = build_attention_mask(h, w, m, shift, dtype=x.dtype)
    x = swin_block(x, h, w, cfg0, weights[0], None, gelu_approximate)
    return swin_block(x, h, w, cfg1, weights[1], shift_mask if shift else None,
                      gelu_approximate)
