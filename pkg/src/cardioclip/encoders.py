"""Visual and textual transformer encoders sharing one projection space.

The visual encoder is a ViT with 3D patch embedding: a linear map from
flattened patches plus learned positional vectors and a class token. The
textual encoder is a small transformer over word ids with length-masked
attention. Both pool via the class token and project to a common width.

Forward passes come in two flavors: the public single-input operations
(embed_patches, encode_visible, encode_text, encode_image) and batched
*_fwd/*_bwd pairs used by the training loops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .tokenizer import TokenSequence, Vocabulary, tokenize
from .volume import Volume3D, patches_of


@dataclass(frozen=True)
class VisualEncoderConfig:
    patch_size: tuple[int, int, int] = (16, 16, 16)
    embed_dim: int = 128
    depth: int = 4
    heads: int = 4
    mlp_ratio: float = 4.0
    input_dims: tuple[int, int, int] = (64, 64, 64)
    pooling: str = "mean"  # "mean" over patch tokens or "cls"
    standardize_input: bool = True  # per-volume zero-mean/unit-std before embedding

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if self.pooling not in ("mean", "cls"):
            raise ValueError(f"pooling must be 'mean' or 'cls', got {self.pooling!r}")
        for d, p in zip(self.input_dims, self.patch_size):
            if p < 1 or d % p != 0:
                raise ValueError(f"input dim {d} not divisible by patch size {p}")

    @property
    def n_patches(self) -> int:
        return int(np.prod([d // p for d, p in zip(self.input_dims, self.patch_size)]))

    @property
    def patch_volume(self) -> int:
        return int(np.prod(self.patch_size))

    @property
    def mlp_hidden(self) -> int:
        return int(self.embed_dim * self.mlp_ratio)


@dataclass(frozen=True)
class TextEncoderConfig:
    vocab_size: int
    max_len: int = 64
    embed_dim: int = 128
    depth: int = 2
    heads: int = 4
    mlp_ratio: float = 4.0
    pooling: str = "mean"  # "mean" over valid tokens or "cls"

    def __post_init__(self):
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2 (class token plus at least one content token)")
        if self.embed_dim % self.heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.pooling not in ("mean", "cls"):
            raise ValueError(f"pooling must be 'mean' or 'cls', got {self.pooling!r}")

    @property
    def mlp_hidden(self) -> int:
        return int(self.embed_dim * self.mlp_ratio)


@dataclass(frozen=True)
class Embedding:
    """A projected feature vector with its cached Euclidean norm."""

    vector: np.ndarray
    norm: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("embedding vector contains non-finite values")
        object.__setattr__(self, "norm", float(np.linalg.norm(self.vector)))

    @property
    def dim(self) -> int:
        return int(self.vector.shape[-1])

    def unit(self) -> np.ndarray:
        if self.norm == 0.0:
            raise ZeroDivisionError("cannot normalize a zero-norm embedding")
        return self.vector / self.norm


def make_embedding(vector: np.ndarray) -> Embedding:
    return Embedding(vector=np.asarray(vector), norm=0.0)


# ---------------------------------------------------------------------------
# parameter initialization


def init_visual_params(rng, cfg: VisualEncoderConfig, proj_dim: int, params=None,
                       dtype=np.float32) -> nn.Params:
    p = params if params is not None else {}
    p["vis.patch.w"] = nn.trunc_normal(rng, (cfg.patch_volume, cfg.embed_dim), dtype=dtype)
    p["vis.patch.b"] = nn.zeros(cfg.embed_dim, dtype)
    p["vis.pos"] = nn.trunc_normal(rng, (cfg.n_patches, cfg.embed_dim), dtype=dtype)
    p["vis.cls"] = nn.trunc_normal(rng, (cfg.embed_dim,), dtype=dtype)
    nn.init_stack(rng, p, "vis", cfg.embed_dim, cfg.depth, cfg.mlp_hidden, dtype)
    p["vis.proj.w"] = nn.trunc_normal(rng, (cfg.embed_dim, proj_dim), dtype=dtype)
    p["vis.proj.b"] = nn.zeros(proj_dim, dtype)
    return p


def init_text_params(rng, cfg: TextEncoderConfig, proj_dim: int, params=None,
                     dtype=np.float32, emb_std: float = 0.2,
                     block_std: float = 0.1) -> nn.Params:
    # hotter-than-usual init on purpose: token embeddings must dominate the
    # pooled feature from step one (otherwise both modalities sit in a
    # mutual near-collapse saddle of the contrastive loss), and attention
    # needs non-degenerate logits to break symmetry fast enough to learn
    # negation binding within the short alignment stage
    p = params if params is not None else {}
    p["txt.tok"] = nn.trunc_normal(rng, (cfg.vocab_size, cfg.embed_dim), std=emb_std, dtype=dtype)
    p["txt.pos"] = nn.trunc_normal(rng, (cfg.max_len, cfg.embed_dim), dtype=dtype)
    nn.init_stack(rng, p, "txt", cfg.embed_dim, cfg.depth, cfg.mlp_hidden, dtype, std=block_std)
    p["txt.proj.w"] = nn.trunc_normal(rng, (cfg.embed_dim, proj_dim), dtype=dtype)
    p["txt.proj.b"] = nn.zeros(proj_dim, dtype)
    return p


# ---------------------------------------------------------------------------
# batched visual forward / backward


def patch_tokens_fwd(params, patches: np.ndarray, positions: np.ndarray | None = None,
                     standardize: bool = True):
    """(B, n, P) patches -> (B, n+1, E) tokens, class token first.

    positions: per-sample patch indices (B, n) selecting which positional
    vectors apply; None means the identity layout 0..n-1. With standardize,
    inputs are shifted/scaled to zero mean and unit std per sample, so the
    embedding responds to structure rather than the dominant DC intensity.
    """
    B, n, _ = patches.shape
    if standardize:
        mu = patches.mean(axis=(1, 2), keepdims=True)
        sd = patches.std(axis=(1, 2), keepdims=True)
        patches = (patches - mu) / (sd + np.asarray(1e-6, dtype=patches.dtype))
    lin = patches @ params["vis.patch.w"] + params["vis.patch.b"]
    pos = params["vis.pos"]
    pos_rows = pos[None, :n] if positions is None else pos[positions]
    x = lin + pos_rows
    cls = np.broadcast_to(params["vis.cls"], (B, 1, x.shape[-1]))
    return np.concatenate([cls, x], axis=1), patches


def patch_tokens_bwd(params, cache, positions, dx: np.ndarray, grads):
    patches = cache
    B, n, P = patches.shape
    dcls = dx[:, 0]
    dtok = dx[:, 1:]
    nn.accumulate(grads, "vis.cls", dcls.sum(axis=0))
    dpos = np.zeros_like(params["vis.pos"])
    if positions is None:
        dpos[:n] = dtok.sum(axis=0)
    else:
        np.add.at(dpos, positions.reshape(-1), dtok.reshape(-1, dtok.shape[-1]))
    nn.accumulate(grads, "vis.pos", dpos)
    nn.accumulate(grads, "vis.patch.w", patches.reshape(-1, P).T @ dtok.reshape(-1, dtok.shape[-1]))
    nn.accumulate(grads, "vis.patch.b", dtok.reshape(-1, dtok.shape[-1]).sum(axis=0))
    return dtok @ params["vis.patch.w"].T


def visual_trunk_fwd(params, cfg: VisualEncoderConfig, patches: np.ndarray,
                     positions: np.ndarray | None = None):
    """Patches through embedding + blocks + final norm. Returns (B, n+1, E)."""
    x, c_tok = patch_tokens_fwd(params, patches, positions, cfg.standardize_input)
    x, c_stack = nn.stack_fwd(params, "vis", x, cfg.depth, cfg.heads)
    y, c_lnf = nn.layernorm_fwd(params, "vis.lnf", x)
    return y, (c_tok, c_stack, c_lnf)


def visual_trunk_bwd(params, cfg: VisualEncoderConfig, cache, positions, dy, grads):
    c_tok, c_stack, c_lnf = cache
    dx = nn.layernorm_bwd(params, "vis.lnf", c_lnf, dy, grads)
    dx = nn.stack_bwd(params, "vis", c_stack, dx, grads, cfg.heads)
    return patch_tokens_bwd(params, c_tok, positions, dx, grads)


def visual_embed_fwd(params, cfg: VisualEncoderConfig, patches: np.ndarray):
    """Full (unmasked) patches -> (features (B, E), projected (B, Dp), cache)."""
    y, c_trunk = visual_trunk_fwd(params, cfg, patches)
    feats = y[:, 0] if cfg.pooling == "cls" else y[:, 1:].mean(axis=1)
    emb, c_proj = nn.linear_fwd(params, "vis.proj", feats)
    return feats, emb, (c_trunk, c_proj, y.shape)


def visual_embed_bwd(params, cfg: VisualEncoderConfig, cache, demb, grads,
                     dfeats=None):
    c_trunk, c_proj, yshape = cache
    dpool = nn.linear_bwd(params, "vis.proj", c_proj, demb, grads)
    if dfeats is not None:
        dpool = dpool + dfeats
    dy = np.zeros(yshape, dtype=dpool.dtype)
    if cfg.pooling == "cls":
        dy[:, 0] = dpool
    else:
        dy[:, 1:] = dpool[:, None, :] / (yshape[1] - 1)
    return visual_trunk_bwd(params, cfg, c_trunk, None, dy, grads)


# ---------------------------------------------------------------------------
# batched text forward / backward


def text_embed_fwd(params, cfg: TextEncoderConfig, ids: np.ndarray, lengths: np.ndarray):
    """(B, T) ids with lengths -> (features (B, E), projected (B, Dp), cache)."""
    if ids.max() >= params["txt.tok"].shape[0] or ids.min() < 0:
        raise ValueError(f"token id out of range [0, {params['txt.tok'].shape[0]})")
    B, T = ids.shape
    if T > cfg.max_len:
        raise ValueError(f"sequence width {T} exceeds max_len {cfg.max_len}")
    x = params["txt.tok"][ids] + params["txt.pos"][:T]
    mask = (np.arange(T)[None, :] < lengths[:, None])
    x, c_stack = nn.stack_fwd(params, "txt", x, cfg.depth, cfg.heads, key_mask=mask)
    y, c_lnf = nn.layernorm_fwd(params, "txt.lnf", x)
    if cfg.pooling == "cls":
        feats = y[:, 0]
    else:
        feats = (y * mask[:, :, None]).sum(axis=1) / lengths[:, None]
    emb, c_proj = nn.linear_fwd(params, "txt.proj", feats)
    return feats, emb, (ids, c_stack, c_lnf, c_proj, y.shape, mask, lengths)


def text_embed_bwd(params, cfg: TextEncoderConfig, cache, demb, grads):
    ids, c_stack, c_lnf, c_proj, yshape, mask, lengths = cache
    dpool = nn.linear_bwd(params, "txt.proj", c_proj, demb, grads)
    dy = np.zeros(yshape, dtype=dpool.dtype)
    if cfg.pooling == "cls":
        dy[:, 0] = dpool
    else:
        dy += (dpool / lengths[:, None])[:, None, :] * mask[:, :, None]
    dx = nn.layernorm_bwd(params, "txt.lnf", c_lnf, dy, grads)
    dx = nn.stack_bwd(params, "txt", c_stack, dx, grads, cfg.heads)
    T = ids.shape[1]
    dtok = np.zeros_like(params["txt.tok"])
    np.add.at(dtok, ids.reshape(-1), dx.reshape(-1, dx.shape[-1]))
    nn.accumulate(grads, "txt.tok", dtok)
    dpos = np.zeros_like(params["txt.pos"])
    dpos[:T] = dx.sum(axis=0)
    nn.accumulate(grads, "txt.pos", dpos)


# ---------------------------------------------------------------------------
# public single-input operations


def embed_patches(g, cfg: VisualEncoderConfig, params) -> np.ndarray:
    """PatchGrid -> (N+1, embed_dim) token matrix, class token first."""
    if g.patch_volume != cfg.patch_volume:
        raise ValueError(
            f"patch length {g.patch_volume} does not match config patch volume {cfg.patch_volume}"
        )
    tokens, _ = patch_tokens_fwd(params, g.patches[None], standardize=cfg.standardize_input)
    return tokens[0]


def encode_visible(tokens: np.ndarray, cfg: VisualEncoderConfig, params) -> np.ndarray:
    """Run the block stack over a (T, E) token matrix; depth 0 is the identity."""
    if tokens.shape[-1] != cfg.embed_dim:
        raise ValueError(f"token width {tokens.shape[-1]} != embed_dim {cfg.embed_dim}")
    out, _ = nn.stack_fwd(params, "vis", tokens[None], cfg.depth, cfg.heads)
    return out[0]


def encode_text(seq: TokenSequence, cfg: TextEncoderConfig, params) -> Embedding:
    ids = np.asarray(seq.token_ids, dtype=np.int64)[None]
    lengths = np.asarray([seq.length], dtype=np.int64)
    _, emb, _ = text_embed_fwd(params, cfg, ids, lengths)
    return make_embedding(emb[0])


def encode_text_str(text: str, vocab: Vocabulary, cfg: TextEncoderConfig, params) -> Embedding:
    return encode_text(tokenize(text, vocab, cfg.max_len), cfg, params)


def encode_image(v: Volume3D, cfg: VisualEncoderConfig, params) -> Embedding:
    if v.dims != tuple(cfg.input_dims):
        raise ValueError(f"volume dims {v.dims} do not match config input_dims {cfg.input_dims}")
    patches = patches_of(v.voxels, cfg.patch_size)[None]
    _, emb, _ = visual_embed_fwd(params, cfg, patches.astype(params["vis.patch.w"].dtype))
    return make_embedding(emb[0])
