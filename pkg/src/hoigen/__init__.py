"""Text-conditioned human-object interaction synthesis.

Two-phase pipeline over a synthetic HOI corpus: a contrastive VAE turns
16-frame motion clips into continuous latent tokens, and an autoregressive
next-token diffusion model (selective-SSM context encoder + MLP denoiser)
generates token sequences conditioned on text and object geometry.
"""

__version__ = "0.1.0"
