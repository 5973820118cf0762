"""Architecture ablation variants: causal self-attention context encoder,
cross-attention denoiser, and the one-shot MSE token regressor. Used for the
relative comparisons only; widths are chosen to roughly match the parameter
counts of the principal models.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import diffusion as df
from . import nn
from .autodiff import Tensor


def _attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int,
               mask: np.ndarray | None) -> Tensor:
    """Multi-head scaled dot-product attention. q (B, Tq, d), k/v (B, Tk, d);
    mask (Tq, Tk) additive, -inf style."""
    B, Tq, d = q.shape
    Tk = k.shape[1]
    dh = d // n_heads
    qh = ad.swapaxes(q.reshape(B, Tq, n_heads, dh), 1, 2)   # (B, H, Tq, dh)
    kh = ad.swapaxes(k.reshape(B, Tk, n_heads, dh), 1, 2)
    vh = ad.swapaxes(v.reshape(B, Tk, n_heads, dh), 1, 2)
    att = ad.matmul(qh, ad.swapaxes(kh, 2, 3)) * (1.0 / np.sqrt(dh))
    if mask is not None:
        att = att + Tensor(mask[None, None].astype(np.float32))
    att = ad.softmax(att)
    out = ad.matmul(att, vh)                                # (B, H, Tq, dh)
    return ad.swapaxes(out, 1, 2).reshape(B, Tq, d)


def causal_mask(t: int) -> np.ndarray:
    m = np.triu(np.full((t, t), -1e9, dtype=np.float32), k=1)
    return m


class SelfAttentionBlock(nn.Module):
    def __init__(self, dim: int, n_heads: int, ffn_dim: int, rng: np.random.Generator):
        super().__init__()
        self.n_heads = n_heads
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim, rng)
        self.out = nn.Linear(dim, dim, rng)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn1 = nn.Linear(dim, ffn_dim, rng)
        self.ffn2 = nn.Linear(ffn_dim, dim, rng)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        h = self.norm1(x)
        qkv = self.qkv(h)
        d = x.shape[-1]
        q, k, v = qkv[..., :d], qkv[..., d:2 * d], qkv[..., 2 * d:]
        x = x + self.out(_attention(q, k, v, self.n_heads, mask))
        x = x + self.ffn2(ad.silu(self.ffn1(self.norm2(x))))
        return x


class TransformerContextEncoder(nn.Module):
    """Drop-in causal replacement for the SSM context encoder. Incremental
    inference recomputes the full prefix (cost grows with position)."""

    def __init__(self, d_text: int, d_obj: int, d_token: int, dim: int,
                 n_layers: int, n_heads: int, ffn_dim: int,
                 rng: np.random.Generator, max_len: int = 64):
        super().__init__()
        self.dim = dim
        self.text_proj = nn.Linear(d_text, dim, rng)
        self.obj_proj = nn.Linear(d_obj, dim, rng)
        self.tok_proj = nn.Linear(d_token, dim, rng)
        self.pos_emb = Tensor(
            (rng.normal(0, 0.02, size=(max_len, dim))).astype(np.float32), requires_grad=True)
        self.blocks = [SelfAttentionBlock(dim, n_heads, ffn_dim, rng)
                       for _ in range(n_layers)]
        self.norm = nn.LayerNorm(dim)

    def encode(self, text: Tensor, obj: Tensor, tokens: Tensor | None) -> Tensor:
        parts = [self.text_proj(text).reshape(text.shape[0], 1, self.dim),
                 self.obj_proj(obj).reshape(obj.shape[0], 1, self.dim)]
        if tokens is not None and tokens.shape[1] > 0:
            parts.append(self.tok_proj(tokens))
        x = ad.concat(parts, axis=1)
        T = x.shape[1]
        x = x + self.pos_emb[:T].reshape(1, T, self.dim)
        mask = causal_mask(T)
        for blk in self.blocks:
            x = blk(x, mask)
        return self.norm(x)

    def conditions(self, text: Tensor, obj: Tensor, tokens: Tensor | None) -> Tensor:
        return self.encode(text, obj, tokens)[:, 1:, :]

    # incremental interface: cache raw inputs, recompute the stack
    def start(self, text_emb: np.ndarray, obj_emb: np.ndarray):
        state = {"text": text_emb.astype(np.float32), "obj": obj_emb.astype(np.float32),
                 "tokens": [], "position": 0}
        return self._recompute(state), state

    def advance(self, state, token: np.ndarray):
        state["tokens"].append(token.astype(np.float32))
        state["position"] += 1
        return self._recompute(state), state

    def _recompute(self, state) -> np.ndarray:
        toks = np.stack(state["tokens"])[None] if state["tokens"] else None
        with ad.no_grad():
            out = self.conditions(Tensor(state["text"][None]), Tensor(state["obj"][None]),
                                  None if toks is None else Tensor(toks))
        return out.data[0, -1].copy()


class CrossAttentionDenoiser(nn.Module):
    """Transformer-decoder style denoiser: the noised token queries the causal
    prefix of context conditions via cross-attention."""

    def __init__(self, d_token: int, d_cond: int, dim: int = 160, n_heads: int = 4,
                 n_layers: int = 2, ffn_dim: int = 256, time_dim: int = 64,
                 t_max: int = 1000, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.d_token = d_token
        self.dim = dim
        self.n_heads = n_heads
        self.time_dim = time_dim
        self.t_max = t_max
        self.tok_in = nn.Linear(d_token, dim, rng)
        self.mem_in = nn.Linear(d_cond, dim, rng)
        self.time_proj = nn.Linear(time_dim, dim, rng)
        self.layers = [CrossBlock(dim, n_heads, ffn_dim, rng) for _ in range(n_layers)]
        self.head = nn.Linear(dim, d_token, rng)

    def denoise_seq(self, s_t: Tensor, t: np.ndarray, conds: Tensor) -> Tensor:
        """s_t (B, K, d_token), t (B, K) steps, conds (B, K, d_cond); query at
        position i cross-attends to conditions 0..i."""
        B, K = s_t.shape[0], s_t.shape[1]
        q = self.tok_in(s_t) + self.time_proj(
            Tensor(df.time_embedding(t.reshape(-1), self.time_dim,
                                     self.t_max).reshape(B, K, self.time_dim)))
        mem = self.mem_in(conds)
        mask = causal_mask(K)
        for layer in self.layers:
            q = layer(q, mem, mask)
        return self.head(q)

    def predict(self, z: np.ndarray, t, cond_seq: np.ndarray) -> np.ndarray:
        """One query token against the full condition prefix (i, d_cond)."""
        with ad.no_grad():
            q = Tensor(np.asarray(z, dtype=np.float32)[None, None])
            conds = Tensor(np.asarray(cond_seq, dtype=np.float32)[None])
            qe = self.tok_in(q) + self.time_proj(
                Tensor(df.time_embedding(t, self.time_dim, self.t_max)[None]))
            mem = self.mem_in(conds)
            for layer in self.layers:
                qe = layer(qe, mem, None)
            out = self.head(qe)
        return out.data[0, 0].copy()


class CrossBlock(nn.Module):
    def __init__(self, dim: int, n_heads: int, ffn_dim: int, rng: np.random.Generator):
        super().__init__()
        self.n_heads = n_heads
        self.norm1 = nn.LayerNorm(dim)
        self.q_proj = nn.Linear(dim, dim, rng)
        self.k_proj = nn.Linear(dim, dim, rng)
        self.v_proj = nn.Linear(dim, dim, rng)
        self.out = nn.Linear(dim, dim, rng)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn1 = nn.Linear(dim, ffn_dim, rng)
        self.ffn2 = nn.Linear(ffn_dim, dim, rng)

    def __call__(self, q: Tensor, mem: Tensor, mask: np.ndarray | None) -> Tensor:
        h = self.norm1(q)
        att = _attention(self.q_proj(h), self.k_proj(mem), self.v_proj(mem),
                         self.n_heads, mask)
        q = q + self.out(att)
        q = q + self.ffn2(ad.silu(self.ffn1(self.norm2(q))))
        return q


class MseRegressor(nn.Module):
    """One-shot next-token predictor: no diffusion loop, plain MSE training."""

    def __init__(self, d_token: int, d_cond: int, hidden: int = 256,
                 n_blocks: int = 3, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.d_token = d_token
        self.mlp = nn.ResidualMlp(d_cond, hidden, d_token, n_blocks, rng)

    def __call__(self, cond: Tensor) -> Tensor:
        return self.mlp(cond)

    def predict(self, cond: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            out = self.mlp(Tensor(np.atleast_2d(cond.astype(np.float32))))
        return out.data[0].copy()


# -- grid runner -----------------------------------------------------------------

VARIANTS = ["full", "w.o. triplet loss", "trm context encoder", "trm denoiser",
            "mse loss"]


def run_ablation_grid(cfg, out_dir, log=None) -> list[dict]:
    """Train and evaluate the comparison grid under the config's budgets.
    Reuses cvae.ckpt from out_dir for the full tokenizer when present."""
    import dataclasses
    import os
    import time

    from . import domain as dm2
    from . import generation, metrics, persist
    from . import tokenizer as tkz

    log = log or (lambda *_: None)
    objects = dm2.load_object_library(os.path.join(out_dir, "objects.json"))
    corpus = dm2.load_sequences(os.path.join(out_dir, "corpus.jsonl"))
    enc, _ = persist.load_point_encoder(os.path.join(out_dir, "encoders.ckpt"))
    embedder = persist.load_eval_embedder(os.path.join(out_dir, "eval_embedder.ckpt"))
    obj_embs = {label: enc.encode(o.points) for label, o in objects.items()}

    # FID needs d_eval+1 samples per side even after dropping degenerate stops
    n_eval = max(int(cfg.holdout * len(corpus)), metrics.D_EVAL + 8,
                 metrics.RPRECISION_POOL + 8)
    eval_seqs = corpus[:n_eval]
    train_seqs = corpus[n_eval:]

    cvae_path = os.path.join(out_dir, "cvae.ckpt")
    if os.path.exists(cvae_path):
        tok_full = persist.load_tokenizer(cvae_path)
        log("ablate: reusing cvae.ckpt for the full tokenizer")
    else:
        tok_full, _ = tkz.train_tokenizer(train_seqs, objects, obj_embs,
                                          cfg.tokenizer_config(), seed=cfg.seed,
                                          epochs=cfg.cvae_epochs,
                                          batch_size=cfg.cvae_batch, lr=cfg.cvae_lr,
                                          holdout=0.0)
    notri_cfg = dataclasses.replace(cfg.tokenizer_config(), lambda_tri=0.0)
    tok_notri, _ = tkz.train_tokenizer(train_seqs, objects, obj_embs, notri_cfg,
                                       seed=cfg.seed, epochs=cfg.cvae_epochs,
                                       batch_size=cfg.cvae_batch, lr=cfg.cvae_lr,
                                       holdout=0.0, with_triplet=False)

    grid = [
        ("full", tok_full, {}),
        ("w.o. triplet loss", tok_notri, {}),
        ("trm context encoder", tok_full, {"ctx_kind": "transformer"}),
        ("trm denoiser", tok_full, {"denoiser_kind": "cross_attention"}),
        ("mse loss", tok_full, {"denoiser_kind": "mse"}),
    ]
    rows = []
    for name, tok, over in grid:
        log(f"ablate: training variant {name!r}")
        gcfg = dataclasses.replace(cfg.generator_config(), **over)
        model, _ = generation.train_generator(train_seqs, tok, obj_embs, gcfg,
                                              seed=cfg.seed, epochs=cfg.ardm_epochs,
                                              batch_size=cfg.ardm_batch,
                                              lr=cfg.ardm_lr)
        gens = []
        t0 = time.perf_counter()
        for i, s in enumerate(eval_seqs):
            # deterministic reseeding for degenerate immediate stops
            for retry in range(4):
                req = generation.GenRequest(text=s.text, object_label=s.object_label,
                                            seed=cfg.seed * 100003 + i + retry * 7919,
                                            max_tokens=cfg.max_tokens)
                res = generation.generate(model, tok, objects[s.object_label],
                                          obj_embs[s.object_label], req)
                if res.token_count > 0:
                    gens.append(res.sequence)
                    break
        aits = (time.perf_counter() - t0) / len(eval_seqs)
        rep = metrics.evaluate(eval_seqs, gens, embedder, objects,
                               runs=cfg.eval_runs, seed=cfg.seed)
        rows.append({"variant": name, "fid": round(rep.fid, 4),
                     "r_precision_top1": round(rep.r_precision_top1, 4),
                     "r_precision_top2": round(rep.r_precision_top2, 4),
                     "r_precision_top3": round(rep.r_precision_top3, 4),
                     "mmd": round(rep.mmd, 4), "diversity": round(rep.diversity, 4),
                     "contact_mean": round(rep.contact_mean, 4),
                     "aits_seconds": round(aits, 4)})
        log(f"ablate: {rows[-1]}")
    return rows
