"""Trained-model bundle and batched embedding helpers shared by evaluation code."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import TextEncoderConfig, VisualEncoderConfig, text_embed_fwd, visual_embed_fwd
from .reports import AbnormalityCatalog
from .tokenizer import Vocabulary, pad_batch, tokenize
from .volume import patches_of


@dataclass
class ModelBundle:
    """Everything needed to embed volumes and texts with trained parameters."""

    params: dict
    vis_cfg: VisualEncoderConfig
    txt_cfg: TextEncoderConfig
    vocab: Vocabulary
    catalog: AbnormalityCatalog

    @property
    def dtype(self):
        return self.params["vis.patch.w"].dtype


def embed_volumes(bundle: ModelBundle, volumes, chunk: int = 32) -> np.ndarray:
    """Projected embeddings (n, proj_dim) for a list of volumes."""
    out = []
    for i in range(0, len(volumes), chunk):
        patches = np.stack(
            [patches_of(v.voxels, bundle.vis_cfg.patch_size) for v in volumes[i : i + chunk]]
        ).astype(bundle.dtype)
        _, emb, _ = visual_embed_fwd(bundle.params, bundle.vis_cfg, patches)
        out.append(emb)
    return np.concatenate(out, axis=0)


def visual_features(bundle: ModelBundle, volumes, chunk: int = 32) -> np.ndarray:
    """Pre-projection class-token features (n, embed_dim), the fine-tuning input."""
    out = []
    for i in range(0, len(volumes), chunk):
        patches = np.stack(
            [patches_of(v.voxels, bundle.vis_cfg.patch_size) for v in volumes[i : i + chunk]]
        ).astype(bundle.dtype)
        feats, _, _ = visual_embed_fwd(bundle.params, bundle.vis_cfg, patches)
        out.append(feats)
    return np.concatenate(out, axis=0)


def embed_texts(bundle: ModelBundle, texts, chunk: int = 64) -> np.ndarray:
    """Projected embeddings (n, proj_dim) for a list of report texts."""
    out = []
    for i in range(0, len(texts), chunk):
        seqs = [tokenize(t, bundle.vocab, bundle.txt_cfg.max_len) for t in texts[i : i + chunk]]
        ids, lengths = pad_batch(seqs)
        _, emb, _ = text_embed_fwd(bundle.params, bundle.txt_cfg, ids, lengths)
        out.append(emb)
    return np.concatenate(out, axis=0)


def unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise FloatingPointError("zero-norm embedding cannot be normalized")
    return x / norms
