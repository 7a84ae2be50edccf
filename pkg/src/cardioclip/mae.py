"""Stage 1: masked-patch reconstruction pre-training for the visual encoder.

A random subset of patches is hidden; the encoder sees only the visible
patches (plus class token); a lightweight decoder rebuilds every patch and
the loss is the mean squared error over the masked ones only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .encoders import (
    VisualEncoderConfig,
    init_visual_params,
    patch_tokens_bwd,
    patch_tokens_fwd,
)
from .optim import AdamW, ScheduleConfig, lr_at_step
from .seeding import derive_seed, substream
from .volume import Volume3D, patches_of


@dataclass(frozen=True)
class MaskPlan:
    """Partition of patch indices into visible and masked sets."""

    n_total: int
    visible_idx: tuple[int, ...]
    masked_idx: tuple[int, ...]
    seed: int

    def __post_init__(self):
        vis, msk = set(self.visible_idx), set(self.masked_idx)
        if vis & msk:
            raise ValueError("visible and masked index sets overlap")
        if vis | msk != set(range(self.n_total)):
            raise ValueError("visible and masked sets do not partition 0..n_total-1")
        if list(self.visible_idx) != sorted(vis) or list(self.masked_idx) != sorted(msk):
            raise ValueError("index lists must be sorted")

    @property
    def n_visible(self) -> int:
        return len(self.visible_idx)

    @property
    def n_masked(self) -> int:
        return len(self.masked_idx)


@dataclass(frozen=True)
class DecoderConfig:
    embed_dim: int = 64
    depth: int = 2
    heads: int = 4
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")

    @property
    def mlp_hidden(self) -> int:
        return int(self.embed_dim * self.mlp_ratio)


@dataclass(frozen=True)
class ReconstructionOutput:
    recon_patches: np.ndarray  # (N, patch_volume)
    masked_recon: np.ndarray   # (N_m, patch_volume) rows of recon_patches at masked_idx
    loss: float

    def __post_init__(self):
        if not np.isfinite(self.loss):
            raise ValueError(f"reconstruction loss is non-finite: {self.loss}")


@dataclass(frozen=True)
class MAETrainConfig:
    epochs: int = 20
    batch: int = 16
    base_lr: float = 1e-3
    weight_decay: float = 0.01
    warmup_frac: float = 0.05
    min_lr: float = 0.0
    mask_ratio: float = 0.75


def sample_mask(n_total: int, ratio: float, seed: int) -> MaskPlan:
    """Uniform random masked subset of size floor(ratio * n_total)."""
    n_masked = math.floor(ratio * n_total)
    if not 1 <= n_masked <= n_total - 1:
        raise ValueError(
            f"ratio {ratio} with {n_total} patches leaves {n_masked} masked; "
            f"need at least one masked and one visible patch"
        )
    rng = np.random.Generator(np.random.PCG64(seed))
    masked = np.sort(rng.choice(n_total, size=n_masked, replace=False))
    visible = np.setdiff1d(np.arange(n_total), masked, assume_unique=True)
    return MaskPlan(
        n_total=n_total,
        visible_idx=tuple(int(i) for i in visible),
        masked_idx=tuple(int(i) for i in masked),
        seed=seed,
    )


def apply_mask(g, m: MaskPlan) -> np.ndarray:
    """Visible patches in index order; masked content never reaches the encoder."""
    if m.n_total != g.n_patches:
        raise ValueError(f"mask over {m.n_total} patches but grid has {g.n_patches}")
    return g.patches[np.asarray(m.visible_idx)]


def init_decoder_params(rng, vis_cfg: VisualEncoderConfig, dec_cfg: DecoderConfig,
                        params=None, dtype=np.float32) -> nn.Params:
    p = params if params is not None else {}
    ed = dec_cfg.embed_dim
    p["dec.embed.w"] = nn.trunc_normal(rng, (vis_cfg.embed_dim, ed), dtype=dtype)
    p["dec.embed.b"] = nn.zeros(ed, dtype)
    p["dec.mask"] = nn.trunc_normal(rng, (ed,), dtype=dtype)
    p["dec.pos"] = nn.trunc_normal(rng, (vis_cfg.n_patches + 1, ed), dtype=dtype)
    nn.init_stack(rng, p, "dec", ed, dec_cfg.depth, dec_cfg.mlp_hidden, dtype)
    p["dec.head.w"] = nn.trunc_normal(rng, (ed, vis_cfg.patch_volume), dtype=dtype)
    p["dec.head.b"] = nn.zeros(vis_cfg.patch_volume, dtype)
    return p


def masked_mse(recon: np.ndarray, targets: np.ndarray, masked_idx: np.ndarray):
    """Mean squared error over masked patches only.

    recon, targets: (B, N, P); masked_idx: (B, N_m). Returns (loss, d_recon)
    where d_recon is exactly zero at every visible-patch entry.
    """
    B, _, P = recon.shape
    idx = masked_idx[:, :, None]
    diff = np.take_along_axis(recon, idx, axis=1) - np.take_along_axis(targets, idx, axis=1)
    count = diff.size
    loss = float((diff * diff).sum() / count)
    d_recon = np.zeros_like(recon)
    np.put_along_axis(d_recon, idx, (2.0 / count) * diff, axis=1)
    return loss, d_recon


# ---------------------------------------------------------------------------
# batched forward / backward


def mae_batch_fwd(params, vis_cfg: VisualEncoderConfig, dec_cfg: DecoderConfig,
                  patches: np.ndarray, vis_idx: np.ndarray, mask_idx: np.ndarray):
    """patches (B, N, P), vis_idx (B, N_v), mask_idx (B, N_m) -> (loss, recon, cache)."""
    B, N, P = patches.shape
    ed = dec_cfg.embed_dim
    vis_patches = np.take_along_axis(patches, vis_idx[:, :, None], axis=1)
    x, c_tok = patch_tokens_fwd(params, vis_patches, positions=vis_idx,
                                standardize=vis_cfg.standardize_input)
    x, c_enc = nn.stack_fwd(params, "vis", x, vis_cfg.depth, vis_cfg.heads)
    enc_out, c_lnf = nn.layernorm_fwd(params, "vis.lnf", x)
    dec_lin, c_emb = nn.linear_fwd(params, "dec.embed", enc_out)

    full = np.empty((B, N + 1, ed), dtype=dec_lin.dtype)
    full[:, 0] = dec_lin[:, 0]
    np.put_along_axis(full, (mask_idx + 1)[:, :, None],
                      np.broadcast_to(params["dec.mask"], (B, mask_idx.shape[1], ed)), axis=1)
    np.put_along_axis(full, (vis_idx + 1)[:, :, None], dec_lin[:, 1:], axis=1)
    full = full + params["dec.pos"][: N + 1]

    y, c_dec = nn.stack_fwd(params, "dec", full, dec_cfg.depth, dec_cfg.heads)
    y, c_dlnf = nn.layernorm_fwd(params, "dec.lnf", y)
    recon, c_head = nn.linear_fwd(params, "dec.head", y[:, 1:])
    loss, d_recon = masked_mse(recon, patches, mask_idx)
    cache = (c_tok, c_enc, c_lnf, c_emb, c_dec, c_dlnf, c_head, d_recon,
             vis_idx, mask_idx, (B, N, P))
    return loss, recon, cache


def mae_batch_bwd(params, vis_cfg: VisualEncoderConfig, dec_cfg: DecoderConfig, cache):
    """Backward for mae_batch_fwd; returns the gradient dict."""
    (c_tok, c_enc, c_lnf, c_emb, c_dec, c_dlnf, c_head, d_recon,
     vis_idx, mask_idx, (B, N, P)) = cache
    grads: nn.Grads = {}
    ed = dec_cfg.embed_dim

    dy_tail = nn.linear_bwd(params, "dec.head", c_head, d_recon, grads)
    dy = np.concatenate([np.zeros((B, 1, ed), dtype=dy_tail.dtype), dy_tail], axis=1)
    dfull = nn.layernorm_bwd(params, "dec.lnf", c_dlnf, dy, grads)
    dfull = nn.stack_bwd(params, "dec", c_dec, dfull, grads, dec_cfg.heads)

    dpos = np.zeros_like(params["dec.pos"])
    dpos[: N + 1] = dfull.sum(axis=0)
    nn.accumulate(grads, "dec.pos", dpos)
    dmask = np.take_along_axis(dfull, (mask_idx + 1)[:, :, None], axis=1)
    nn.accumulate(grads, "dec.mask", dmask.reshape(-1, ed).sum(axis=0))

    d_dec_lin = np.empty((B, vis_idx.shape[1] + 1, ed), dtype=dfull.dtype)
    d_dec_lin[:, 0] = dfull[:, 0]
    d_dec_lin[:, 1:] = np.take_along_axis(dfull, (vis_idx + 1)[:, :, None], axis=1)

    denc = nn.linear_bwd(params, "dec.embed", c_emb, d_dec_lin, grads)
    dx = nn.layernorm_bwd(params, "vis.lnf", c_lnf, denc, grads)
    dx = nn.stack_bwd(params, "vis", c_enc, dx, grads, vis_cfg.heads)
    patch_tokens_bwd(params, c_tok, vis_idx, dx, grads)
    return grads


def mae_forward(v: Volume3D, m: MaskPlan, enc_params, dec_params,
                vis_cfg: VisualEncoderConfig, dec_cfg: DecoderConfig) -> ReconstructionOutput:
    """Single-volume reconstruction pass (geometry checked against configs)."""
    if v.dims != tuple(vis_cfg.input_dims):
        raise ValueError(f"volume dims {v.dims} do not match config input_dims {vis_cfg.input_dims}")
    if m.n_total != vis_cfg.n_patches:
        raise ValueError(f"mask covers {m.n_total} patches, config implies {vis_cfg.n_patches}")
    params = {**enc_params, **dec_params}
    patches = patches_of(v.voxels, vis_cfg.patch_size)[None].astype(params["vis.patch.w"].dtype)
    vis_idx = np.asarray(m.visible_idx, dtype=np.int64)[None]
    mask_idx = np.asarray(m.masked_idx, dtype=np.int64)[None]
    loss, recon, _ = mae_batch_fwd(params, vis_cfg, dec_cfg, patches, vis_idx, mask_idx)
    recon = recon[0]
    return ReconstructionOutput(
        recon_patches=recon,
        masked_recon=recon[mask_idx[0]],
        loss=loss,
    )


# ---------------------------------------------------------------------------
# training loop


def train_mae(volumes, vis_cfg: VisualEncoderConfig, dec_cfg: DecoderConfig,
              cfg: MAETrainConfig, seed: int, params=None, proj_dim: int = 64,
              trace_hook=None):
    """Train encoder + decoder from scratch (or given params); returns (params, trace).

    One optimizer step per batch; a fresh MaskPlan per volume per epoch. The
    trace holds one record per epoch: epoch, mean_loss, lr_last.
    """
    n = len(volumes)
    if n == 0:
        raise ValueError("training corpus is empty")
    if any(v.dims != tuple(vis_cfg.input_dims) for v in volumes):
        raise ValueError("corpus volume dims do not match config input_dims")
    if params is None:
        rng = substream(seed, "init")
        params = init_visual_params(rng, vis_cfg, proj_dim)
        init_decoder_params(rng, vis_cfg, dec_cfg, params)

    steps_per_epoch = math.ceil(n / cfg.batch)
    total_steps = cfg.epochs * steps_per_epoch
    sched = ScheduleConfig(
        base_lr=cfg.base_lr,
        warmup_steps=int(round(cfg.warmup_frac * total_steps)),
        total_steps=total_steps,
        weight_decay=cfg.weight_decay,
        min_lr=cfg.min_lr,
    )
    opt = AdamW(params, weight_decay=cfg.weight_decay)

    N = vis_cfg.n_patches
    trace = []
    step = 0
    for epoch in range(cfg.epochs):
        order = substream(seed, "batch-order", epoch).permutation(n)
        losses = []
        lr = sched.base_lr
        for b0 in range(0, n, cfg.batch):
            idx = order[b0 : b0 + cfg.batch]
            patches = np.stack(
                [patches_of(volumes[i].voxels, vis_cfg.patch_size) for i in idx]
            )
            plans = [
                sample_mask(N, cfg.mask_ratio, derive_seed(seed, "mask", epoch, int(i)))
                for i in idx
            ]
            vis_idx = np.asarray([p.visible_idx for p in plans], dtype=np.int64)
            mask_idx = np.asarray([p.masked_idx for p in plans], dtype=np.int64)
            loss, _, cache = mae_batch_fwd(params, vis_cfg, dec_cfg, patches, vis_idx, mask_idx)
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite reconstruction loss at step {step} (epoch {epoch})"
                )
            grads = mae_batch_bwd(params, vis_cfg, dec_cfg, cache)
            lr = lr_at_step(sched, step)
            opt.step(params, grads, lr)
            losses.append(loss)
            step += 1
        record = {"epoch": epoch, "mean_loss": float(np.mean(losses)), "lr_last": lr}
        trace.append(record)
        if trace_hook is not None:
            trace_hook(record)
    return params, trace
