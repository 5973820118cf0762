"""Per-token diffusion: noise schedule, MLP denoiser, DDIM sampling,
classifier-free guidance.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor


class NoiseSchedule:
    """Linear-beta schedule with cumulative-product alpha-bar table and an
    evenly spaced DDIM step subsequence. alpha_bar[0] = 1 (clean data)."""

    def __init__(self, t_steps: int = 1000, beta_min: float = 1e-4,
                 beta_max: float = 2e-2, ddim_steps: int = 50):
        self.t_steps = t_steps
        self.betas = np.linspace(beta_min, beta_max, t_steps, dtype=np.float64)
        self.alphas = 1.0 - self.betas
        self.alpha_bar = np.concatenate([[1.0], np.cumprod(self.alphas)]).astype(np.float32)
        if not np.all(np.diff(self.alpha_bar) < 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if not (self.alpha_bar[0] > 0.999 and self.alpha_bar[-1] < 0.05):
            raise ValueError("alpha_bar endpoints out of range; check beta schedule")
        self.ddim_steps = ddim_steps
        # descending subsequence t_steps ... -> ... 1; the update targets the
        # next lower entry, ending at 0 (clean)
        self.ddim_ts = np.linspace(t_steps, 1, ddim_steps).round().astype(int)

    def q_sample(self, s0: np.ndarray, t, eps: np.ndarray) -> np.ndarray:
        """Closed-form forward noising: sqrt(ab_t) s0 + sqrt(1-ab_t) eps.
        t may be a scalar or a per-row array for batched draws."""
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.t_steps):
            raise ValueError(f"diffusion step {t} outside [0, {self.t_steps}]")
        ab = self.alpha_bar[t]
        if ab.ndim > 0:
            ab = ab.reshape(ab.shape + (1,) * (s0.ndim - ab.ndim))
        return np.sqrt(ab) * s0 + np.sqrt(1.0 - ab) * eps


def time_embedding(t, dim: int, t_max: int) -> np.ndarray:
    """Sinusoidal features of the diffusion step; t scalar or (B,)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = t[:, None] / t_max * 1000.0 * freqs[None, :]
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    return emb.astype(np.float32)


class MlpDenoiser(nn.Module):
    """Residual-block MLP predicting the clean token from the noised token
    concatenated with the (time-conditioned) context vector."""

    def __init__(self, d_token: int, d_cond: int, hidden: int = 256,
                 n_blocks: int = 3, time_dim: int = 64, t_max: int = 1000,
                 seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.d_token = d_token
        self.d_cond = d_cond
        self.time_dim = time_dim
        self.t_max = t_max
        self.time_proj = nn.Linear(time_dim, d_cond, rng)
        self.mlp = nn.ResidualMlp(d_token + d_cond, hidden, d_token, n_blocks, rng)
        self.mlp.head.w.data[:] = 0.0   # start at the zero prediction

    def conditioned(self, cond: Tensor, t) -> Tensor:
        """Add the projected diffusion-time embedding to the condition."""
        te = time_embedding(t, self.time_dim, self.t_max)
        return cond + self.time_proj(Tensor(te))

    def __call__(self, s_t: Tensor, t, cond: Tensor) -> Tensor:
        c = self.conditioned(cond, t)
        return self.mlp(ad.concat([s_t, c], axis=-1))

    def predict(self, s_t: np.ndarray, t, cond: np.ndarray) -> np.ndarray:
        """Inference path on plain arrays; accepts (d,) or (B, d)."""
        s_t = np.atleast_2d(np.asarray(s_t, dtype=np.float32))
        cond = np.atleast_2d(np.asarray(cond, dtype=np.float32))
        with ad.no_grad():
            out = self(Tensor(s_t), t, Tensor(cond))
        return out.data[0] if out.data.shape[0] == 1 else out.data.copy()


def cfg_dropout(text_emb: np.ndarray, p_uncond: float, rng: np.random.Generator) -> np.ndarray:
    """With probability p_uncond replace the text embedding by the null (zero)
    embedding; the classifier-free-guidance training trick."""
    if not 0.0 <= p_uncond <= 1.0:
        raise ValueError(f"p_uncond {p_uncond} outside [0, 1]")
    if rng.uniform() < p_uncond:
        return np.zeros_like(text_emb)
    return text_emb


def ddim_sample(denoise_fn, schedule: NoiseSchedule, token_dim: int,
                cond: np.ndarray, cond_null: np.ndarray | None, xi: float,
                rng: np.random.Generator, trace: list | None = None) -> np.ndarray:
    """Deterministic DDIM (eta = 0) over the schedule's step subsequence,
    starting from unit Gaussian noise.

    denoise_fn(z_t, t, c) predicts the clean token. The guided prediction is
    xi * denoise(c) + (1 - xi) * denoise(c_null); at xi == 1 the null branch
    is never evaluated, so the output is exactly the conditional-only sample.
    If `trace` is a list, (t, pred_cond, pred_null, guided) tuples are
    appended per step.
    """
    z = rng.standard_normal(token_dim).astype(np.float32)
    ab = schedule.alpha_bar
    ts = schedule.ddim_ts
    for i, t in enumerate(ts):
        pred_c = np.asarray(denoise_fn(z, int(t), cond), dtype=np.float32)
        if xi == 1.0 or cond_null is None:
            pred_n = pred_c
            x0 = pred_c
        else:
            pred_n = np.asarray(denoise_fn(z, int(t), cond_null), dtype=np.float32)
            x0 = np.float32(xi) * pred_c + np.float32(1.0 - xi) * pred_n
        if trace is not None:
            trace.append((int(t), pred_c.copy(), pred_n.copy(), x0.copy()))
        eps_hat = (z - np.sqrt(ab[t]) * x0) / np.sqrt(1.0 - ab[t])
        t_next = int(ts[i + 1]) if i + 1 < len(ts) else 0
        z = np.sqrt(ab[t_next]) * x0 + np.sqrt(1.0 - ab[t_next]) * eps_hat
    return z.astype(np.float32)
