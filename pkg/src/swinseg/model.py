"""U-shaped encoder-decoder segmentation model built from transformer blocks.

Encoder: patch embedding, three stages of block pairs each followed by patch
merging (resolution /2, channels x2).  Bottleneck: one block pair at the
coarsest scale.  Decoder: mirrored stages, each entered through an upsampling
layer (resolution x2, channels /2) and an optional skip fusion with the
same-scale encoder features.  A final 4x expansion restores the input
resolution before the per-pixel classification head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import (SwinBlockWeights, init_swin_block, swin_block,
                        WindowConfig, build_attention_mask, trunc_normal)
from .config import ModelConfig
from .tensor import Tensor, ShapeError


def patch_embed(img: Tensor, patch_size: int, w: Tensor, b: Tensor) -> Tensor:
    """(B, H, W, ch) -> (B, H/p * W/p, C): flatten p x p patches, project."""
    bsz, h, wd, ch = img.shape
    p = patch_size
    if h % p or wd % p:
        raise ShapeError(f"image {h}x{wd} not divisible by patch size {p}")
    x = img.reshape(bsz, h // p, p, wd // p, p, ch)
    x = x.permute(0, 1, 3, 2, 4, 5)
    x = x.reshape(bsz, (h // p) * (wd // p), p * p * ch)
    return T.linear(x, w, b)


def patch_merging(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """(B, h, w, c) -> (B, h/2, w/2, 2c).

    The four sub-grids at offsets (0,0), (1,0), (0,1), (1,1) are concatenated
    channel-wise (4c) and linearly reduced to 2c.
    """
    _, h, wd, _ = x.shape
    if h % 2 or wd % 2:
        raise ShapeError(f"cannot merge odd resolution {h}x{wd}")
    parts = [x[:, 0::2, 0::2, :], x[:, 1::2, 0::2, :],
             x[:, 0::2, 1::2, :], x[:, 1::2, 1::2, :]]
    return T.linear(T.concat(parts, axis=-1), w, b)


def _space_from_channels(y: Tensor, block: int) -> Tensor:
    """Move a factor block^2 of channels into a block x block spatial tile.

    Channel group g of position (i, j) fills output position
    (block*i + g // block, block*j + g % block): raster order.
    """
    bsz, h, w, c = y.shape
    if c % (block * block):
        raise ShapeError(f"{c} channels cannot fill a {block}x{block} tile")
    ch = c // (block * block)
    y = y.reshape(bsz, h, w, block, block, ch)
    y = y.permute(0, 1, 3, 2, 4, 5)
    return y.reshape(bsz, h * block, w * block, ch)


def patch_expanding(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """(B, h, w, c) -> (B, 2h, 2w, c/2): linear c -> 2c, then a 2x2 rearrange."""
    if x.shape[-1] % 2:
        raise ShapeError(f"cannot expand odd channel count {x.shape[-1]}")
    return _space_from_channels(T.linear(x, w, b), 2)


def final_expand_4x(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """(B, h, w, c) -> (B, 4h, 4w, c): linear c -> 16c, then a 4x4 rearrange."""
    return _space_from_channels(T.linear(x, w, b), 4)


def _interp_matrix(n_out: int, n_in: int, dtype) -> np.ndarray:
    """1-D linear interpolation weights for 2x upsampling, half-pixel centers."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    for i in range(n_out):
        src = (i + 0.5) / 2.0 - 0.5
        lo = int(np.floor(src))
        frac = src - lo
        m[i, min(max(lo, 0), n_in - 1)] += 1.0 - frac
        m[i, min(max(lo + 1, 0), n_in - 1)] += frac
    return m


def bilinear_upsample(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Bilinear 2x upsampling followed by a linear c -> c/2 reduction."""
    bsz, h, wd, c = x.shape
    rows = Tensor(_interp_matrix(2 * h, h, x.dtype))
    cols = Tensor(_interp_matrix(2 * wd, wd, x.dtype).T)
    y = x.permute(0, 3, 1, 2)
    y = T.matmul(T.matmul(rows, y), cols)
    y = y.permute(0, 2, 3, 1)
    return T.linear(y, w, b)


def transposed_conv_upsample(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Stride-2 kernel-2 transposed convolution, c -> c/2.

    With kernel == stride the output tiles never overlap, so the kernel is a
    (c, 4*cout) matrix whose column group g = 2*dr + dc lands on tile offset
    (dr, dc); the bias is added per output channel after the rearrange.
    """
    y = T.matmul(x, w)
    y = _space_from_channels(y, 2)
    return y + b


def skip_fuse(up: Tensor, enc: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Concatenate decoder and encoder features (2c) and project back to c."""
    if up.shape != enc.shape:
        raise ShapeError(f"skip shapes differ: {up.shape} vs {enc.shape}")
    return T.linear(T.concat([up, enc], axis=-1), w, b)


# -- parameter containers ------------------------------------------------------


@dataclass
class LinearWeights:
    w: Tensor
    b: Tensor


@dataclass
class EncoderStage:
    blocks: list[SwinBlockWeights]
    merge: LinearWeights


@dataclass
class DecoderStage:
    up: LinearWeights
    fuse: LinearWeights | None
    blocks: list[SwinBlockWeights]


class SwinUnet:
    """The full segmentation network; owns parameters and the forward pass.

    ``rng=None`` builds zero/identity-initialized parameters (used when a
    checkpoint will be loaded on top); pass a seeded generator for training
    initialization.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None = None,
                 dtype=np.float32, gelu_approximate: bool = False):
        cfg.validate()
        self.cfg = cfg
        self.dtype = np.dtype(dtype).type
        self.gelu_approximate = gelu_approximate
        self._mask_cache: dict[tuple, np.ndarray] = {}
        self._rng = rng
        self._build()

    # -- construction ----------------------------------------------------------

    def _weight(self, shape) -> Tensor:
        # fan-scaled init for the non-attention linear layers (embedding,
        # merging, upsampling, fusion, head); transformer blocks keep their
        # own 0.02 scheme
        if self._rng is None:
            arr = np.zeros(shape, dtype=self.dtype)
        else:
            std = float(np.sqrt(2.0 / (shape[0] + shape[1])))
            arr = trunc_normal(self._rng, shape, std=std, dtype=self.dtype)
        return Tensor(arr, requires_grad=True)

    def _bias(self, n: int) -> Tensor:
        return Tensor(np.zeros(n, dtype=self.dtype), requires_grad=True)

    def _linear(self, n_in: int, n_out: int, bias_n: int | None = None) -> LinearWeights:
        return LinearWeights(self._weight((n_in, n_out)),
                             self._bias(n_out if bias_n is None else bias_n))

    def _block(self, c: int, heads: int, m: int) -> SwinBlockWeights:
        return init_swin_block(c, heads, m, self._rng, dtype=self.dtype)

    def _up(self, c_in: int) -> LinearWeights:
        mode = self.cfg.upsample_mode
        if mode == "patch_expand":
            return self._linear(c_in, 2 * c_in)
        if mode == "transposed_conv":
            return self._linear(c_in, 2 * c_in, bias_n=c_in // 2)
        return self._linear(c_in, c_in // 2)  # bilinear

    def _build(self):
        cfg = self.cfg
        c0 = cfg.embed_dim
        self.patch = self._linear(cfg.patch_size ** 2 * cfg.in_channels, c0)

        self.encoder: list[EncoderStage] = []
        for i in range(3):
            c, heads, m = cfg.stage_channels(i), cfg.num_heads[i], cfg.effective_window(i)
            blocks = [self._block(c, heads, m) for _ in range(cfg.encoder_depths[i])]
            self.encoder.append(EncoderStage(blocks, self._linear(4 * c, 2 * c)))

        c3, h3, m3 = cfg.stage_channels(3), cfg.num_heads[3], cfg.effective_window(3)
        self.bottleneck = [self._block(c3, h3, m3) for _ in range(cfg.bottleneck_depth)]

        self.decoder: list[DecoderStage] = []
        for i in range(3):
            c, heads, m = cfg.stage_channels(i), cfg.num_heads[i], cfg.effective_window(i)
            fuse = self._linear(2 * c, c) if self.skip_enabled(i) else None
            blocks = [self._block(c, heads, m) for _ in range(cfg.decoder_depths[i])]
            self.decoder.append(DecoderStage(self._up(2 * c), fuse, blocks))

        self.final_up = self._linear(c0, 16 * c0)
        self.head = self._linear(c0, cfg.num_classes)

    def skip_enabled(self, scale: int) -> bool:
        """Skips are enabled from the coarsest scale (1/16) downward."""
        return scale >= 3 - self.cfg.skip_count

    # -- parameter access --------------------------------------------------------

    def named_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {"patch_embed.w": self.patch.w,
                                  "patch_embed.b": self.patch.b}
        for i, stage in enumerate(self.encoder):
            for j, blk in enumerate(stage.blocks):
                for k, t in blk.named().items():
                    out[f"enc{i}.blk{j}.{k}"] = t
            out[f"enc{i}.merge.w"] = stage.merge.w
            out[f"enc{i}.merge.b"] = stage.merge.b
        for j, blk in enumerate(self.bottleneck):
            for k, t in blk.named().items():
                out[f"bott.blk{j}.{k}"] = t
        for i, stage in enumerate(self.decoder):
            out[f"dec{i}.up.w"] = stage.up.w
            out[f"dec{i}.up.b"] = stage.up.b
            if stage.fuse is not None:
                out[f"dec{i}.fuse.w"] = stage.fuse.w
                out[f"dec{i}.fuse.b"] = stage.fuse.b
            for j, blk in enumerate(stage.blocks):
                for k, t in blk.named().items():
                    out[f"dec{i}.blk{j}.{k}"] = t
        out["final_up.w"] = self.final_up.w
        out["final_up.b"] = self.final_up.b
        out["head.w"] = self.head.w
        out["head.b"] = self.head.b
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.named_params()
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise ValueError(f"parameter name mismatch: missing={sorted(missing)} "
                             f"extra={sorted(extra)}")
        for name, t in params.items():
            arr = np.asarray(arrays[name], dtype=self.dtype)
            if arr.shape != t.shape:
                raise ValueError(f"parameter {name!r}: shape {arr.shape} "
                                 f"does not match {t.shape}")
            t.data = arr

    # -- forward ---------------------------------------------------------------

    def _mask(self, res: int, m: int, shift: int) -> np.ndarray | None:
        if shift == 0:
            return None
        key = (res, m, shift)
        if key not in self._mask_cache:
            self._mask_cache[key] = build_attention_mask(res, res, m, shift,
                                                         dtype=self.dtype)
        return self._mask_cache[key]

    def _run_blocks(self, x: Tensor, stage: int, blocks: list[SwinBlockWeights]) -> Tensor:
        cfg = self.cfg
        res = cfg.stage_resolution(stage)
        m = cfg.effective_window(stage)
        heads = cfg.num_heads[stage]
        # a single-window stage cannot mix across windows; shifting there only
        # severs token pairs (and kills the bias-table gradient), so skip it
        shift = m // 2 if res > m else 0
        for j, blk in enumerate(blocks):
            s = 0 if j % 2 == 0 else shift
            wc = WindowConfig(m, s, heads, x.shape[-1] // heads)
            x = swin_block(x, res, res, wc, blk, self._mask(res, m, s),
                           self.gelu_approximate)
        return x

    def forward(self, images: Tensor, record_trace: bool = False):
        """(B, H, W, in_channels) -> per-pixel class logits (B, H, W, K).

        With ``record_trace`` also returns [(label, h, w, c), ...] for every
        stage boundary.
        """
        cfg = self.cfg
        bsz, h, w, ch = images.shape
        if (h, w, ch) != (cfg.img_size, cfg.img_size, cfg.in_channels):
            raise ShapeError(f"input {images.shape} does not match configured "
                             f"{cfg.img_size}x{cfg.img_size}x{cfg.in_channels}")
        if images.dtype != self.dtype:
            if images.requires_grad:
                raise ShapeError(f"input dtype {images.dtype} does not match "
                                 f"model dtype {np.dtype(self.dtype)}")
            images = images.astype(self.dtype)
        trace: list[tuple[str, int, int, int]] = []

        def note(label, res, c):
            if record_trace:
                trace.append((label, res, res, c))

        x = patch_embed(images, cfg.patch_size, self.patch.w, self.patch.b)
        note("patch_embed", cfg.stage_resolution(0), cfg.embed_dim)

        skips: list[Tensor] = []
        for i, stage in enumerate(self.encoder):
            res = cfg.stage_resolution(i)
            x = self._run_blocks(x, i, stage.blocks)
            note(f"enc{i}", res, x.shape[-1])
            skips.append(x)
            grid = x.reshape(bsz, res, res, x.shape[-1])
            x = patch_merging(grid, stage.merge.w, stage.merge.b)
            x = x.reshape(bsz, (res // 2) ** 2, x.shape[-1])

        x = self._run_blocks(x, 3, self.bottleneck)
        note("bottleneck", cfg.stage_resolution(3), x.shape[-1])

        for i in (2, 1, 0):
            stage = self.decoder[i]
            res_in = cfg.stage_resolution(i + 1)
            res = cfg.stage_resolution(i)
            grid = x.reshape(bsz, res_in, res_in, x.shape[-1])
            mode = cfg.upsample_mode
            if mode == "patch_expand":
                grid = patch_expanding(grid, stage.up.w, stage.up.b)
            elif mode == "transposed_conv":
                grid = transposed_conv_upsample(grid, stage.up.w, stage.up.b)
            else:
                grid = bilinear_upsample(grid, stage.up.w, stage.up.b)
            note(f"up{i}", res, grid.shape[-1])
            if stage.fuse is not None:
                enc_grid = skips[i].reshape(bsz, res, res, grid.shape[-1])
                grid = skip_fuse(grid, enc_grid, stage.fuse.w, stage.fuse.b)
            x = grid.reshape(bsz, res * res, grid.shape[-1])
            x = self._run_blocks(x, i, stage.blocks)
            note(f"dec{i}", res, x.shape[-1])

        res0 = cfg.stage_resolution(0)
        grid = x.reshape(bsz, res0, res0, x.shape[-1])
        grid = final_expand_4x(grid, self.final_up.w, self.final_up.b)
        note("final_expand", cfg.img_size, grid.shape[-1])
        logits = T.linear(grid, self.head.w, self.head.b)
        note("head", cfg.img_size, cfg.num_classes)
        if record_trace:
            return logits, trace
        return logits

    __call__ = forward


# -- analytic parameter census ---------------------------------------------------


def _block_param_count(c: int, heads: int, m: int) -> int:
    table = (2 * m - 1) ** 2 * heads
    return 12 * c * c + 9 * c + table


def parameter_count(cfg: ModelConfig) -> int:
    """Closed-form total scalar parameter count for a configuration."""
    cfg.validate()
    total = (cfg.patch_size ** 2 * cfg.in_channels) * cfg.embed_dim + cfg.embed_dim
    for i in range(3):
        c, heads, m = cfg.stage_channels(i), cfg.num_heads[i], cfg.effective_window(i)
        total += cfg.encoder_depths[i] * _block_param_count(c, heads, m)
        total += 4 * c * 2 * c + 2 * c  # merge
    c3 = cfg.stage_channels(3)
    total += cfg.bottleneck_depth * _block_param_count(
        c3, cfg.num_heads[3], cfg.effective_window(3))
    for i in range(3):
        c, heads, m = cfg.stage_channels(i), cfg.num_heads[i], cfg.effective_window(i)
        c_in = 2 * c
        if cfg.upsample_mode == "patch_expand":
            total += c_in * 2 * c_in + 2 * c_in
        elif cfg.upsample_mode == "transposed_conv":
            total += c_in * 2 * c_in + c_in // 2
        else:
            total += c_in * (c_in // 2) + c_in // 2
        if i >= 3 - cfg.skip_count:
            total += 2 * c * c + c  # fuse
        total += cfg.decoder_depths[i] * _block_param_count(c, heads, m)
    total += cfg.embed_dim * 16 * cfg.embed_dim + 16 * cfg.embed_dim
    total += cfg.embed_dim * cfg.num_classes + cfg.num_classes
    return total
