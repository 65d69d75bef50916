"""Hierarchical encoder-decoder for 4x vertical range-image super-resolution.

Layout: row-preserving 1x4 patch embedding, a pyramid of paired window
attention blocks with 2x patch merging between stages, a mirrored decoder
with patch expansion and fused skip connections, and a reconstruction head
that first undoes the horizontal patching and then redistributes channels
into a 4x vertical upsample.

Ablation switches: enable_fa drops the frequency branch (pure windowed
attention), enable_msf swaps the fusion skips for concatenation + linear.
Parameters are initialized from per-name RNG streams, so two configs share
bit-identical initial values on every parameter they have in common.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fa_attention as fa
from . import msf as msf_mod
from . import tensorkit as tk
from .tensorkit import Tensor
from .tensorkit.params import ParamStore

UPSCALE = 4            # fixed vertical growth factor
PATCH_W = 4            # 1x4 row-based patching
HEAD_DIM = 32          # target channels per attention head


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass
class FlashConfig:
    height: int = 16                 # low-res input rows
    width: int = 256                 # columns
    channels: int = 16               # embedding width at stage 0
    depths: tuple = (2, 2, 2, 2)     # blocks per encoder stage
    heads: tuple | None = None       # per-stage head counts (derived if None)
    window: tuple = (2, 8)
    mlp_ratio: float = 4.0
    dropout: float = 0.0
    enable_fa: bool = True
    enable_msf: bool = True
    seed: int = 0

    def __post_init__(self):
        self.depths = tuple(self.depths)
        self.window = tuple(self.window)
        if self.width % PATCH_W:
            raise ValueError(f"width {self.width} not divisible by {PATCH_W}")
        if not self.depths or any(d < 1 for d in self.depths):
            raise ValueError("depths must be a non-empty tuple of positive ints")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.mlp_ratio <= 0:
            raise ValueError("mlp_ratio must be positive")
        if self.heads is None:
            self.heads = tuple(max(1, (self.channels << s) // HEAD_DIM)
                               for s in range(len(self.depths)))
        self.heads = tuple(self.heads)
        if len(self.heads) != len(self.depths):
            raise ValueError("heads and depths must have matching lengths")
        mh, mw = self.window
        for s in range(len(self.depths)):
            h, w = self.stage_grid(s)
            c = self.channels << s
            if h % mh or w % mw:
                raise ValueError(
                    f"stage {s} grid ({h}, {w}) not tiled by window ({mh}, {mw})")
            if not (_is_pow2(h) and _is_pow2(w)):
                raise ValueError(
                    f"stage {s} grid ({h}, {w}) must be powers of two for the "
                    "frequency branch")
            if c % self.heads[s]:
                raise ValueError(
                    f"stage {s} channels {c} not divisible by heads {self.heads[s]}")

    @property
    def stages(self) -> int:
        return len(self.depths)

    def stage_grid(self, s: int) -> tuple[int, int]:
        return self.height >> s, (self.width // PATCH_W) >> s

    def stage_shift(self, s: int) -> tuple[int, int]:
        """Cyclic shift for odd blocks; a dim with a single window gets none."""
        h, w = self.stage_grid(s)
        mh, mw = self.window
        return (mh // 2 if h > mh else 0, mw // 2 if w > mw else 0)


@dataclass
class BlockParams:
    ln1_g: Tensor
    ln1_o: Tensor
    attn: fa.FAParams
    ln2_g: Tensor
    ln2_o: Tensor
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor


def _make_block(store: ParamStore, prefix: str, channels: int, heads: int,
                window: tuple[int, int], mlp_ratio: float,
                with_frequency: bool) -> BlockParams:
    hidden = int(channels * mlp_ratio)
    return BlockParams(
        ln1_g=store.ones(f"{prefix}.ln1_g", (channels,)),
        ln1_o=store.zeros(f"{prefix}.ln1_o", (channels,)),
        attn=fa.make_fa_params(store, f"{prefix}.attn", channels, heads, window,
                               include_frequency=with_frequency),
        ln2_g=store.ones(f"{prefix}.ln2_g", (channels,)),
        ln2_o=store.zeros(f"{prefix}.ln2_o", (channels,)),
        mlp_w1=store.trunc_normal(f"{prefix}.mlp_w1", (channels, hidden)),
        mlp_b1=store.zeros(f"{prefix}.mlp_b1", (hidden,)),
        mlp_w2=store.trunc_normal(f"{prefix}.mlp_w2", (hidden, channels)),
        mlp_b2=store.zeros(f"{prefix}.mlp_b2", (channels,)),
    )


class FlashModel:
    """Parameter container plus the forward pass."""

    def __init__(self, cfg: FlashConfig):
        self.cfg = cfg
        self.store = ParamStore(cfg.seed)
        st, c = self.store, cfg.channels

        self.embed_w = st.trunc_normal("embed.w", (PATCH_W, c))
        self.embed_b = st.zeros("embed.b", (c,))
        self.embed_ln_g = st.ones("embed.ln_g", (c,))
        self.embed_ln_o = st.zeros("embed.ln_o", (c,))

        self.enc_blocks: list[list[BlockParams]] = []
        self.merges: list[tuple[Tensor, Tensor]] = []
        for s in range(cfg.stages):
            cs = c << s
            self.enc_blocks.append([
                _make_block(st, f"enc{s}.blk{i}", cs, cfg.heads[s], cfg.window,
                            cfg.mlp_ratio, cfg.enable_fa)
                for i in range(cfg.depths[s])
            ])
            if s < cfg.stages - 1:
                self.merges.append((
                    st.trunc_normal(f"merge{s}.w", (4 * cs, 2 * cs)),
                    st.zeros(f"merge{s}.b", (2 * cs,)),
                ))

        self.expands: list[tuple[Tensor, Tensor]] = []
        self.skips: list = []
        self.dec_blocks: list[list[BlockParams]] = []
        for d in range(cfg.stages - 1):
            cd = c << d
            self.expands.append((
                st.trunc_normal(f"expand{d}.w", (2 * cd, 4 * cd)),
                st.zeros(f"expand{d}.b", (4 * cd,)),
            ))
            if cfg.enable_msf:
                self.skips.append(msf_mod.make_msf_params(st, f"skip{d}.msf", cd))
            else:
                self.skips.append((
                    st.trunc_normal(f"skip{d}.concat_w", (2 * cd, cd)),
                    st.zeros(f"skip{d}.concat_b", (cd,)),
                ))
            self.dec_blocks.append([
                _make_block(st, f"dec{d}.blk{i}", cd, cfg.heads[d], cfg.window,
                            cfg.mlp_ratio, cfg.enable_fa)
                for i in range(cfg.depths[d])
            ])

        self.hexp_w = st.trunc_normal("head.hexp_w", (c, PATCH_W * c))
        self.hexp_b = st.zeros("head.hexp_b", (PATCH_W * c,))
        self.vexp_w = st.trunc_normal("head.vexp_w", (c, UPSCALE * c))
        self.vexp_b = st.zeros("head.vexp_b", (UPSCALE * c,))
        self.proj_w = st.trunc_normal("head.proj_w", (c, 1))
        self.proj_b = st.zeros("head.proj_b", (1,))

    # ------------------------------------------------------------ components

    def patch_embed(self, img: Tensor) -> Tensor:
        """(B, H, W) single-channel map -> (B, H, W/4, C) normalized tokens."""
        b, h, w = img.shape
        if w % PATCH_W:
            raise ValueError(f"width {w} not divisible by {PATCH_W}")
        tokens = tk.linear(img.reshape((b, h, w // PATCH_W, PATCH_W)),
                           self.embed_w, self.embed_b)
        return tk.layer_norm(tokens, self.embed_ln_g, self.embed_ln_o)

    @staticmethod
    def patch_merge(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
        """Concatenate each 2x2 neighborhood and project 4C -> 2C."""
        b, h, ww, c = x.shape
        if h % 2 or ww % 2:
            raise ValueError(f"cannot merge odd grid ({h}, {ww})")
        tiles = x.reshape((b, h // 2, 2, ww // 2, 2, c))
        tiles = tiles.transpose((0, 1, 3, 2, 4, 5)).reshape((b, h // 2, ww // 2, 4 * c))
        return tk.linear(tiles, w, bias)

    @staticmethod
    def patch_expand(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
        """Project C -> 2C and redistribute into a 2x2 block of C/2 channels."""
        b, h, ww, c = x.shape
        out_c = c // 2
        y = tk.linear(x, w, bias).reshape((b, h, ww, 2, 2, out_c))
        return y.transpose((0, 1, 3, 2, 4, 5)).reshape((b, 2 * h, 2 * ww, out_c))

    def _attention(self, x: Tensor, p: fa.FAParams, shift: tuple[int, int]) -> Tensor:
        if self.cfg.enable_fa:
            return fa.fa_forward(x, p, shift)
        grid = fa.window_partition(x, p.window, shift)
        return fa.window_reverse(fa.spatial_attention(grid, p))

    def _block(self, x: Tensor, bp: BlockParams, shift: tuple[int, int],
               rng) -> Tensor:
        p = self.cfg.dropout
        training = rng is not None
        a = self._attention(tk.layer_norm(x, bp.ln1_g, bp.ln1_o), bp.attn, shift)
        x = x + tk.dropout(a, p, rng, training)
        h = tk.layer_norm(x, bp.ln2_g, bp.ln2_o)
        h = tk.dropout(tk.gelu(tk.linear(h, bp.mlp_w1, bp.mlp_b1)), p, rng, training)
        h = tk.dropout(tk.linear(h, bp.mlp_w2, bp.mlp_b2), p, rng, training)
        return x + h

    def _run_stage(self, x: Tensor, blocks: list[BlockParams], stage: int,
                   rng) -> Tensor:
        shift = self.cfg.stage_shift(stage)
        for i, bp in enumerate(blocks):
            x = self._block(x, bp, (0, 0) if i % 2 == 0 else shift, rng)
        return x

    def _fuse_skip(self, enc: Tensor, dec: Tensor, d: int) -> Tensor:
        if self.cfg.enable_msf:
            return msf_mod.msf_fuse(enc, dec, self.skips[d])
        w, b = self.skips[d]
        return tk.linear(tk.concat([enc, dec], axis=-1), w, b)

    # --------------------------------------------------------------- forward

    def forward(self, img: Tensor, rng=None) -> Tensor:
        """(B, H_l, W) log-range in, (B, 4*H_l, W) log-range out.

        ``rng`` activates dropout (training or MC sampling); None runs the
        deterministic inference path.
        """
        cfg = self.cfg
        b, h, w = img.shape
        if (h, w) != (cfg.height, cfg.width):
            raise ValueError(f"input ({h}, {w}) does not match config "
                             f"({cfg.height}, {cfg.width})")

        x = self.patch_embed(img)
        skips: list[Tensor] = []
        for s in range(cfg.stages):
            x = self._run_stage(x, self.enc_blocks[s], s, rng)
            if s < cfg.stages - 1:
                skips.append(x)
                x = self.patch_merge(x, *self.merges[s])

        for d in reversed(range(cfg.stages - 1)):
            x = self.patch_expand(x, *self.expands[d])
            x = self._fuse_skip(skips[d], x, d)
            x = self._run_stage(x, self.dec_blocks[d], d, rng)

        c = cfg.channels
        tw = cfg.width // PATCH_W
        x = tk.linear(x, self.hexp_w, self.hexp_b)
        x = x.reshape((b, cfg.height, tw * PATCH_W, c))
        x = tk.linear(x, self.vexp_w, self.vexp_b)
        x = x.reshape((b, cfg.height, cfg.width, UPSCALE, c))
        x = x.transpose((0, 1, 3, 2, 4)).reshape((b, cfg.height * UPSCALE, cfg.width, c))
        return tk.linear(x, self.proj_w, self.proj_b).reshape(
            (b, cfg.height * UPSCALE, cfg.width))

    def state_dict(self):
        return self.store.state_dict()

    def load_state_dict(self, state):
        self.store.load_state_dict(state)


def config_state(cfg: FlashConfig) -> dict[str, np.ndarray]:
    """Model hyperparameters as float arrays, for embedding in checkpoints."""
    return {
        "meta.height": np.array(float(cfg.height)),
        "meta.width": np.array(float(cfg.width)),
        "meta.channels": np.array(float(cfg.channels)),
        "meta.depths": np.asarray(cfg.depths, dtype=np.float64),
        "meta.heads": np.asarray(cfg.heads, dtype=np.float64),
        "meta.window": np.asarray(cfg.window, dtype=np.float64),
        "meta.mlp_ratio": np.array(float(cfg.mlp_ratio)),
        "meta.dropout": np.array(float(cfg.dropout)),
        "meta.enable_fa": np.array(float(cfg.enable_fa)),
        "meta.enable_msf": np.array(float(cfg.enable_msf)),
        "meta.seed": np.array(float(cfg.seed)),
    }


def config_from_state(state: dict[str, np.ndarray]) -> tuple[FlashConfig, dict]:
    """Split a checkpoint into (model config, parameter arrays)."""
    if "meta.height" not in state:
        raise ValueError("checkpoint carries no model metadata")
    cfg = FlashConfig(
        height=int(state["meta.height"]),
        width=int(state["meta.width"]),
        channels=int(state["meta.channels"]),
        depths=tuple(int(d) for d in np.atleast_1d(state["meta.depths"])),
        heads=tuple(int(h) for h in np.atleast_1d(state["meta.heads"])),
        window=tuple(int(w) for w in np.atleast_1d(state["meta.window"])),
        mlp_ratio=float(state["meta.mlp_ratio"]),
        dropout=float(state["meta.dropout"]),
        enable_fa=bool(float(state["meta.enable_fa"])),
        enable_msf=bool(float(state["meta.enable_msf"])),
        seed=int(state["meta.seed"]),
    )
    params = {k: v for k, v in state.items() if not k.startswith("meta.")}
    return cfg, params


def save_model(model: FlashModel, path: str) -> None:
    """Checkpoint with both parameters and the config needed to rebuild."""
    tk.save_checkpoint({**config_state(model.cfg), **model.state_dict()}, path)


def load_model(path: str) -> FlashModel:
    cfg, params = config_from_state(tk.load_checkpoint(path))
    model = FlashModel(cfg)
    model.load_state_dict(params)
    return model


def l1_loss(pred: Tensor, target: Tensor, mask: np.ndarray) -> tuple[Tensor, bool]:
    """Mean absolute error over mask-valid cells.

    Returns (loss, starved) where starved flags an all-invalid mask; the loss
    is then 0 and carries no gradient.
    """
    if pred.shape != target.shape or pred.shape != mask.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape} "
                         f"vs {mask.shape}")
    count = float(mask.sum())
    if count == 0.0:
        return Tensor(np.array(0.0)), True
    m = Tensor(mask.astype(np.float64))
    return ((pred - target) * m).absolute().sum() / count, False
