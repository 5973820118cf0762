"""Checkpoint save/load for the trained model types. Each file carries the
parameter arrays plus a meta dict sufficient to rebuild the module."""

from __future__ import annotations

from dataclasses import asdict

import numpy as np

from . import encoders, metrics, nn
from .generation import GeneratorConfig, TokenGenerator
from .tokenizer import ClipTokenizer, TokenizerConfig


def save_tokenizer(path, tok: ClipTokenizer):
    meta = {"kind": "tokenizer", "cfg": asdict(tok.cfg),
            "norm_mean": tok.norm_mean.tolist(), "norm_std": tok.norm_std.tolist(),
            "frozen": tok.frozen}
    nn.save_checkpoint(path, tok.parameters(), meta)


def load_tokenizer(path) -> ClipTokenizer:
    arrays, meta = nn.load_checkpoint(path)
    _expect(meta, "tokenizer", path)
    tok = ClipTokenizer(TokenizerConfig(**meta["cfg"]))
    tok.load_state(arrays)
    tok.norm_mean = np.array(meta["norm_mean"], dtype=np.float32)
    tok.norm_std = np.array(meta["norm_std"], dtype=np.float32)
    if meta.get("frozen"):
        tok.freeze()
    return tok


def save_generator(path, model: TokenGenerator):
    meta = {"kind": "generator", "cfg": asdict(model.cfg),
            "token_mean": model.token_mean.tolist(),
            "token_std": model.token_std.tolist()}
    nn.save_checkpoint(path, model.parameters(), meta)


def load_generator(path) -> TokenGenerator:
    arrays, meta = nn.load_checkpoint(path)
    _expect(meta, "generator", path)
    model = TokenGenerator(GeneratorConfig(**meta["cfg"]))
    model.load_state(arrays)
    model.token_mean = np.array(meta["token_mean"], dtype=np.float32)
    model.token_std = np.array(meta["token_std"], dtype=np.float32)
    return model


def save_point_encoder(path, enc: encoders.PointCloudEncoder, accuracy: float):
    meta = {"kind": "point_encoder", "dim": enc.dim, "accuracy": accuracy}
    nn.save_checkpoint(path, enc.parameters(), meta)


def load_point_encoder(path) -> tuple[encoders.PointCloudEncoder, float]:
    arrays, meta = nn.load_checkpoint(path)
    _expect(meta, "point_encoder", path)
    enc = encoders.PointCloudEncoder(dim=meta["dim"])
    enc.load_state(arrays)
    enc.set_trainable(False)
    return enc, float(meta.get("accuracy", 0.0))


def save_eval_embedder(path, emb: metrics.EvalEmbedder):
    meta = {"kind": "eval_embedder", "d_out": emb.d_out, "clip_frames": emb.clip_frames,
            "norm_mean": emb.norm_mean.tolist(), "norm_std": emb.norm_std.tolist()}
    nn.save_checkpoint(path, emb.parameters(), meta)


def load_eval_embedder(path) -> metrics.EvalEmbedder:
    arrays, meta = nn.load_checkpoint(path)
    _expect(meta, "eval_embedder", path)
    emb = metrics.EvalEmbedder(d_out=meta["d_out"], clip_frames=meta["clip_frames"])
    emb.load_state(arrays)
    emb.norm_mean = np.array(meta["norm_mean"], dtype=np.float32)
    emb.norm_std = np.array(meta["norm_std"], dtype=np.float32)
    emb.set_trainable(False)
    emb.frozen = True
    return emb


def _expect(meta: dict, kind: str, path):
    if meta.get("kind") != kind:
        raise ValueError(f"{path}: checkpoint kind {meta.get('kind')!r}, expected {kind!r}")
