"""One flat config document for every knob, with desk and paper presets.
Unknown keys are rejected on load."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .generation import GeneratorConfig
from .tokenizer import TokenizerConfig


@dataclass
class Config:
    preset: str = "desk"
    seed: int = 0
    # data
    corpus_n: int = 500
    corpus_seed: int = 11
    objects_seed: int = 7
    holdout: float = 0.1
    # shared dims
    token_frames: int = 16
    d_latent: int = 32
    d_obj: int = 64
    d_text: int = 64
    # tokenizer
    cvae_hidden: int = 256
    n_blocks: int = 3
    ssm_state: int = 8
    ssm_expand: int = 2
    alpha: float = 1.0
    tau: float = 0.03
    lambda_tri: float = 2.0
    lambda_kl: float = 1e-4
    lambda_phy: float = 1.0
    lambda_fk: float = 1.0
    lambda_vel: float = 1.0
    lambda_ovel: float = 1.0
    lambda_con: float = 1.0
    # context encoder / denoiser
    ctx_dim: int = 64
    ctx_layers: int = 6
    denoiser_hidden: int = 256
    time_dim: int = 64
    # diffusion
    t_steps: int = 1000
    beta_min: float = 1e-4
    beta_max: float = 2e-2
    ddim_steps: int = 50
    xi: float = 2.0
    p_uncond: float = 0.1
    max_tokens: int = 15
    # training budgets
    encoder_epochs: int = 25
    cvae_epochs: int = 30
    cvae_batch: int = 8
    cvae_lr: float = 1e-3
    ardm_epochs: int = 60
    ardm_batch: int = 16
    ardm_lr: float = 1e-3
    eval_epochs: int = 50
    # evaluation
    eval_runs: int = 20
    eval_prompts: int = 64
    # ablation variant switches
    ctx_kind: str = "ssm"
    denoiser_kind: str = "mlp"

    def tokenizer_config(self) -> TokenizerConfig:
        return TokenizerConfig(
            token_frames=self.token_frames, d_latent=self.d_latent,
            hidden=self.cvae_hidden, n_blocks=self.n_blocks, d_obj=self.d_obj,
            ssm_state=self.ssm_state, ssm_expand=self.ssm_expand,
            alpha=self.alpha, tau=self.tau, lambda_tri=self.lambda_tri,
            lambda_kl=self.lambda_kl, lambda_phy=self.lambda_phy,
            lambda_fk=self.lambda_fk, lambda_vel=self.lambda_vel,
            lambda_ovel=self.lambda_ovel, lambda_con=self.lambda_con)

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            d_token=self.d_latent + 1, d_text=self.d_text, d_obj=self.d_obj,
            ctx_dim=self.ctx_dim, ctx_layers=self.ctx_layers,
            ssm_state=self.ssm_state, ssm_expand=self.ssm_expand,
            denoiser_hidden=self.denoiser_hidden, time_dim=self.time_dim,
            t_steps=self.t_steps, beta_min=self.beta_min, beta_max=self.beta_max,
            ddim_steps=self.ddim_steps, xi=self.xi, p_uncond=self.p_uncond,
            max_tokens=self.max_tokens, ctx_kind=self.ctx_kind,
            denoiser_kind=self.denoiser_kind)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


PAPER_OVERRIDES = {
    # §implementation-scale settings; constructible, not trainable on a desk
    "preset": "paper",
    "d_latent": 512,
    "cvae_hidden": 1024,
    "ctx_dim": 512,
    "ctx_layers": 27,
    "ssm_state": 32,
    "ssm_expand": 2,
    "denoiser_hidden": 1024,
    "ddim_steps": 50,
    "token_frames": 16,
}


def make_config(preset: str = "desk", overrides: dict | None = None) -> Config:
    if preset not in ("desk", "paper"):
        raise ValueError(f"unknown preset {preset!r}")
    fields = {f.name for f in dataclasses.fields(Config)}
    data: dict = {}
    if preset == "paper":
        data.update(PAPER_OVERRIDES)
    for k, v in (overrides or {}).items():
        if k not in fields:
            raise KeyError(f"unknown config key {k!r}")
        data[k] = v
    data.setdefault("preset", preset)
    return Config(**data)


def load_config(path) -> Config:
    with open(path) as f:
        doc = json.load(f)
    preset = doc.pop("preset", "desk")
    return make_config(preset, doc)


def save_config(path, cfg: Config):
    with open(path, "w") as f:
        json.dump(cfg.as_dict(), f, indent=1, sort_keys=True)
