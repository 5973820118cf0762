"""Phase 2: train the next-token diffusion model over frozen tokenizer
latents (teacher forcing), then generate sequences autoregressively until the
continuation flag drops below threshold or the length cap is hit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import diffusion as df
from . import domain as dm
from . import encoders, nn, ssm
from .autodiff import Tensor
from .domain import HoiSequence, ObjectSpec
from .tokenizer import ClipTokenizer, segment

STOP_THRESHOLD = 0.5
MAX_TOKENS = 15  # 15 * 16 = 240 frames


@dataclass
class GeneratorConfig:
    d_token: int = 33             # latent + continuation flag
    d_text: int = encoders.D_TEXT
    d_obj: int = encoders.D_POINT
    ctx_dim: int = 64
    ctx_layers: int = 6
    ssm_state: int = 8
    ssm_expand: int = 2
    denoiser_hidden: int = 256
    denoiser_blocks: int = 3
    time_dim: int = 64
    t_steps: int = 1000
    beta_min: float = 1e-4
    beta_max: float = 2e-2
    ddim_steps: int = 50
    xi: float = 2.0
    p_uncond: float = 0.1
    max_tokens: int = MAX_TOKENS
    ctx_kind: str = "ssm"         # "ssm" | "transformer" (ablation)
    denoiser_kind: str = "mlp"    # "mlp" | "cross_attention" | "mse" (ablations)
    trm_heads: int = 4
    trm_ffn: int = 224
    trm_denoiser_dim: int = 160


@dataclass
class GenRequest:
    text: str
    object_label: str
    seed: int = 0
    max_tokens: int = MAX_TOKENS
    xi: float | None = None
    initial_clips: np.ndarray | None = None   # (k, token_frames, 75)

    def __post_init__(self):
        if self.max_tokens * 16 > dm.MAX_FRAMES:
            raise ValueError(f"max_tokens {self.max_tokens} exceeds the "
                             f"{dm.MAX_FRAMES}-frame cap")


@dataclass
class GenResult:
    sequence: HoiSequence
    token_count: int
    stop_reason: str              # "null-token" | "max-length"
    tokens: np.ndarray = field(repr=False, default=None)


class TokenGenerator(nn.Module):
    """Context encoder + denoiser + schedule + token standardization. The
    default is the selective-SSM context encoder with the MLP denoiser;
    ablation variants swap either side."""

    def __init__(self, cfg: GeneratorConfig, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        if cfg.ctx_kind == "ssm":
            self.ctx = ssm.ContextEncoder(cfg.d_text, cfg.d_obj, cfg.d_token, cfg.ctx_dim,
                                          cfg.ctx_layers, cfg.ssm_state, cfg.ssm_expand, rng)
        elif cfg.ctx_kind == "transformer":
            from . import ablations
            self.ctx = ablations.TransformerContextEncoder(
                cfg.d_text, cfg.d_obj, cfg.d_token, cfg.ctx_dim, cfg.ctx_layers,
                cfg.trm_heads, cfg.trm_ffn, rng)
        else:
            raise ValueError(f"unknown ctx_kind {cfg.ctx_kind!r}")
        if cfg.denoiser_kind == "mlp":
            self.denoiser = df.MlpDenoiser(cfg.d_token, cfg.ctx_dim, cfg.denoiser_hidden,
                                           cfg.denoiser_blocks, cfg.time_dim, cfg.t_steps,
                                           seed=seed + 1)
        elif cfg.denoiser_kind == "cross_attention":
            from . import ablations
            self.denoiser = ablations.CrossAttentionDenoiser(
                cfg.d_token, cfg.ctx_dim, cfg.trm_denoiser_dim, cfg.trm_heads,
                time_dim=cfg.time_dim, t_max=cfg.t_steps, seed=seed + 1)
        elif cfg.denoiser_kind == "mse":
            from . import ablations
            self.denoiser = ablations.MseRegressor(cfg.d_token, cfg.ctx_dim,
                                                   cfg.denoiser_hidden,
                                                   cfg.denoiser_blocks, seed=seed + 1)
        else:
            raise ValueError(f"unknown denoiser_kind {cfg.denoiser_kind!r}")
        self.schedule = df.NoiseSchedule(cfg.t_steps, cfg.beta_min, cfg.beta_max,
                                         cfg.ddim_steps)
        self.token_mean = np.zeros(cfg.d_token, dtype=np.float32)
        self.token_std = np.ones(cfg.d_token, dtype=np.float32)

    def fit_token_stats(self, token_seqs: list[np.ndarray]):
        """Standardize latent channels over content tokens; the flag channel
        stays raw so the 0.5 stop threshold keeps its meaning."""
        content = np.concatenate([t[:-1] for t in token_seqs if len(t) > 1])
        self.token_mean = content.mean(axis=0).astype(np.float32)
        self.token_std = np.maximum(content.std(axis=0), 1e-3).astype(np.float32)
        self.token_mean[-1] = 0.0
        self.token_std[-1] = 1.0

    def standardize(self, tokens: np.ndarray) -> np.ndarray:
        return ((tokens - self.token_mean) / self.token_std).astype(np.float32)

    def unstandardize(self, tokens: np.ndarray) -> np.ndarray:
        return tokens * self.token_std + self.token_mean


def token_sequences(tok: ClipTokenizer, corpus: list[HoiSequence],
                    obj_embs: dict[str, np.ndarray]) -> list[np.ndarray]:
    """Per sequence: (K+1, d_latent+1) tokens; content tokens carry flag 1 and
    the appended null token (encoded zero clip) carries flag 0."""
    out = []
    for seq in corpus:
        clips, k = segment(seq.frames, tok.cfg.token_frames)
        emb = obj_embs[seq.object_label]
        mu, _ = tok.encode(clips, emb)      # includes the null clip as last row
        flags = np.ones((k + 1, 1), dtype=np.float32)
        flags[-1] = 0.0
        out.append(np.concatenate([mu, flags], axis=1).astype(np.float32))
    return out


def ardm_loss(model: TokenGenerator, batch: dict, rng: np.random.Generator):
    """Teacher-forced denoising loss, every position in parallel: per position
    a random diffusion step, noised target, condition from the ground-truth
    prefix; L2 norm between the clean token and the denoiser prediction."""
    cfg = model.cfg
    text = Tensor(batch["text"])
    obj = Tensor(batch["obj"])
    toks = batch["tokens"]                  # (B, Kmax, d_token) std, zero padded
    mask = batch["mask"]                    # (B, Kmax+1)
    B, kmax1 = mask.shape
    conds = model.ctx.conditions(text, obj, Tensor(toks))   # (B, Kmax+1, ctx_dim)

    valid = np.flatnonzero(mask.reshape(-1))
    targets = batch["targets"].reshape(B * kmax1, cfg.d_token)[valid]

    if cfg.denoiser_kind == "mse":
        cond_v = conds.reshape(B * kmax1, cfg.ctx_dim)[valid]
        pred = model.denoiser(cond_v)
        diff = pred - Tensor(targets)
        loss = ad.tmean(diff * diff)
        return loss, float(loss.data)

    t = rng.integers(1, cfg.t_steps + 1, size=len(valid))
    eps = rng.standard_normal(targets.shape).astype(np.float32)
    s_t = model.schedule.q_sample(targets, t, eps).astype(np.float32)

    if cfg.denoiser_kind == "cross_attention":
        t_full = np.zeros((B, kmax1), dtype=np.int64)
        s_t_full = np.zeros((B, kmax1, cfg.d_token), dtype=np.float32)
        t_full.reshape(-1)[valid] = t
        s_t_full.reshape(-1, cfg.d_token)[valid] = s_t
        pred = model.denoiser.denoise_seq(Tensor(s_t_full), t_full, conds)
        pred_v = pred.reshape(B * kmax1, cfg.d_token)[valid]
        loss = ad.tmean(ad.l2norm(pred_v - Tensor(targets)))
        return loss, float(loss.data)

    cond_v = conds.reshape(B * kmax1, cfg.ctx_dim)[valid]
    pred = model.denoiser(Tensor(s_t), t, cond_v)
    loss = ad.tmean(ad.l2norm(pred - Tensor(targets)))
    return loss, float(loss.data)


def train_generator(corpus: list[HoiSequence], tok: ClipTokenizer,
                    obj_embs: dict[str, np.ndarray], cfg: GeneratorConfig,
                    seed: int = 0, epochs: int = 60, batch_size: int = 16,
                    lr: float = 1e-3, log=None) -> tuple[TokenGenerator, dict]:
    """Phase-2 training on a frozen tokenizer; rejects an unfrozen one."""
    if not tok.frozen:
        raise RuntimeError("tokenizer must be trained and frozen before phase 2")
    rng = np.random.default_rng(seed)
    model = TokenGenerator(cfg, seed=seed)
    seqs = token_sequences(tok, corpus, obj_embs)
    model.fit_token_stats(seqs)
    seqs_std = [model.standardize(s) for s in seqs]
    text_embs = np.stack([encoders.encode_text(s.text) for s in corpus])
    objs = np.stack([obj_embs[s.object_label] for s in corpus])

    opt = nn.Adam(model.parameters(), lr=lr)
    history = []
    n = len(corpus)
    for ep in range(epochs):
        perm = rng.permutation(n)
        total, steps = 0.0, 0
        for s in range(0, n, batch_size):
            idx = perm[s:s + batch_size]
            batch = _assemble(seqs_std, text_embs, objs, idx, cfg, rng)
            loss, val = ardm_loss(model, batch, rng)
            ad.backward(loss)
            opt.step()
            total += val
            steps += 1
        history.append(total / steps)
        if log:
            log(f"generator epoch {ep}: loss {history[-1]:.4f}")
    return model, {"history": history}


def _assemble(seqs_std, text_embs, objs, idx, cfg: GeneratorConfig,
              rng: np.random.Generator) -> dict:
    B = len(idx)
    ks = [len(seqs_std[i]) - 1 for i in idx]          # content token counts
    kmax = max(ks)
    toks = np.zeros((B, kmax, cfg.d_token), dtype=np.float32)
    targets = np.zeros((B, kmax + 1, cfg.d_token), dtype=np.float32)
    mask = np.zeros((B, kmax + 1), dtype=bool)
    text = np.zeros((B, cfg.d_text), dtype=np.float32)
    for bi, i in enumerate(idx):
        s = seqs_std[i]
        k = len(s) - 1
        toks[bi, :k] = s[:-1]
        targets[bi, :k + 1] = s
        mask[bi, :k + 1] = True
        text[bi] = df.cfg_dropout(text_embs[i], cfg.p_uncond, rng)
    return {"tokens": toks, "targets": targets, "mask": mask,
            "text": text, "obj": objs[idx].astype(np.float32)}


# -- inference ---------------------------------------------------------------------

def _position_rng(seed: int, position: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                        spawn_key=(position,)))


def generate(model: TokenGenerator, tok: ClipTokenizer, obj: ObjectSpec,
             obj_emb: np.ndarray, req: GenRequest,
             initial_tokens_std: np.ndarray | None = None) -> GenResult:
    """Autoregressive sampling: advance both conditional and null-text context
    states, DDIM-sample each token, stop on the continuation flag.

    initial_tokens_std resumes from exact (standardized) tokens; the public
    prefix interface is req.initial_clips, which are encoded first.
    """
    cfg = model.cfg
    xi = cfg.xi if req.xi is None else req.xi
    text_emb = encoders.encode_text(req.text)
    null_emb = encoders.encode_text("")

    cond, state_c = model.ctx.start(text_emb, obj_emb)
    cond_n, state_n = model.ctx.start(null_emb, obj_emb)

    tokens_std = []
    stop_reason = "max-length"
    start_pos = 1

    pre_tokens = None
    if initial_tokens_std is not None and len(initial_tokens_std):
        pre_tokens = np.asarray(initial_tokens_std, dtype=np.float32)
    elif req.initial_clips is not None and len(req.initial_clips):
        prefix = np.asarray(req.initial_clips, dtype=np.float64)
        if prefix.ndim != 3 or prefix.shape[1] != tok.cfg.token_frames:
            raise ValueError(f"initial clips must be (k, {tok.cfg.token_frames}, 75)")
        mu, _ = tok.encode(prefix, obj_emb)
        flags = np.ones((len(prefix), 1), dtype=np.float32)
        pre_tokens = model.standardize(np.concatenate([mu, flags], axis=1))
    cond_hist, cond_hist_n = [cond], [cond_n]
    if pre_tokens is not None:
        if pre_tokens.shape[0] >= req.max_tokens:
            raise ValueError("initial clips exceed the generation budget")
        for ptok in pre_tokens:
            tokens_std.append(ptok)
            cond, state_c = model.ctx.advance(state_c, ptok)
            cond_n, state_n = model.ctx.advance(state_n, ptok)
            cond_hist.append(cond)
            cond_hist_n.append(cond_n)
        start_pos = len(pre_tokens) + 1

    def denoise_fn(z, t, c):
        return model.denoiser.predict(z, np.array([t]), c)

    for pos in range(start_pos, req.max_tokens + 1):
        rng = _position_rng(req.seed, pos)
        if cfg.denoiser_kind == "mse":
            token = model.denoiser.predict(cond)
        elif cfg.denoiser_kind == "cross_attention":
            token = df.ddim_sample(denoise_fn, model.schedule, cfg.d_token,
                                   np.stack(cond_hist), np.stack(cond_hist_n), xi, rng)
        else:
            token = df.ddim_sample(denoise_fn, model.schedule, cfg.d_token,
                                   cond, cond_n, xi, rng)
        if token[-1] < STOP_THRESHOLD:
            stop_reason = "null-token"
            break
        tokens_std.append(token)
        cond, state_c = model.ctx.advance(state_c, token)
        cond_n, state_n = model.ctx.advance(state_n, token)
        cond_hist.append(cond)
        cond_hist_n.append(cond_n)

    k = len(tokens_std)
    if k == 0:
        empty = HoiSequence(np.zeros((0, dm.FRAME_DIM)), text=req.text,
                            object_label=obj.label)
        return GenResult(empty, 0, stop_reason, np.zeros((0, cfg.d_token), np.float32))

    tokens_std = np.stack(tokens_std)
    latents = model.unstandardize(tokens_std)[:, :-1]
    clips = tok.decode(latents, obj_emb)
    frames = clips.reshape(k * tok.cfg.token_frames, dm.FRAME_DIM)
    seq = dm.canonicalize(HoiSequence(frames, text=req.text, object_label=obj.label))
    return GenResult(seq, k, stop_reason, tokens_std)
