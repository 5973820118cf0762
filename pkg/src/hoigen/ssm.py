"""Selective state-space layers and the causal context encoder.

Per-step discretization: h_t = exp(dt_t * A) . h_{t-1} + (dt_t * B_t) u_t,
y_t = C_t h_t + D u_t, with dt, B, C produced from the input (selective).
Training uses the parallel associative scan; autoregressive inference steps
the same recurrence with a constant-size per-layer state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor


class SsmLayer(nn.Module):
    """One gated selective-SSM block operating on (B, T, dim)."""

    def __init__(self, dim: int, state: int, expand: int, rng: np.random.Generator):
        super().__init__()
        self.dim = dim
        self.state = state
        self.inner = dim * expand
        self.in_proj = nn.Linear(dim, 2 * self.inner, rng)   # u and gate z
        self.dt_proj = nn.Linear(self.inner, self.inner, rng)
        self.bc_proj = nn.Linear(self.inner, 2 * state, rng)
        self.out_proj = nn.Linear(self.inner, dim, rng)
        # decay magnitudes log-uniform in [1, state]
        a_init = -np.exp(rng.uniform(0.0, np.log(state), size=(self.inner, state)))
        self.a_log = Tensor(np.log(-a_init).astype(np.float32), requires_grad=True)
        self.d_skip = Tensor(np.ones(self.inner, dtype=np.float32), requires_grad=True)
        # bias so softplus(dt) starts in a sane range
        self.dt_proj.b.data[:] = np.log(np.expm1(0.5)).astype(np.float32)

    def _selective(self, u: Tensor):
        dt = ad.softplus(self.dt_proj(u))                    # (B, T, inner)
        bc = self.bc_proj(u)
        b_in = bc[..., :self.state]                          # (B, T, N)
        c_out = bc[..., self.state:]
        return dt, b_in, c_out

    def scan(self, u: Tensor, dt: Tensor, b_in: Tensor, c_out: Tensor) -> Tensor:
        """Parallel associative scan over the time axis of (B, T, inner)."""
        a = -ad.exp(self.a_log)                              # (inner, N), negative
        decay = ad.exp(dt[..., None] * a)                    # (B, T, inner, N)
        drive = (dt * u)[..., None] * b_in.reshape(b_in.shape[:-1] + (1, self.state))
        h = ad.scan(decay, drive, axis=1)                    # (B, T, inner, N)
        y = ad.tsum(h * c_out.reshape(c_out.shape[:-1] + (1, self.state)), axis=-1)
        return y + self.d_skip * u

    def __call__(self, x: Tensor) -> Tensor:
        uz = self.in_proj(x)
        u = uz[..., :self.inner]
        z = uz[..., self.inner:]
        dt, b_in, c_out = self._selective(u)
        y = self.scan(u, dt, b_in, c_out)
        return self.out_proj(y * ad.silu(z))

    # -- stepwise recurrence (inference) --------------------------------------

    def init_state(self) -> np.ndarray:
        return np.zeros((self.inner, self.state), dtype=np.float32)

    def step(self, x_t: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """One recurrence step for a single position; x_t is (dim,)."""
        uz = x_t @ self.in_proj.w.data + self.in_proj.b.data
        u, z = uz[:self.inner], uz[self.inner:]
        dt = np.logaddexp(0.0, u @ self.dt_proj.w.data + self.dt_proj.b.data)
        bc = u @ self.bc_proj.w.data + self.bc_proj.b.data
        b_in, c_out = bc[:self.state], bc[self.state:]
        a = -np.exp(self.a_log.data)
        h = np.exp(dt[:, None] * a) * h + (dt * u)[:, None] * b_in[None, :]
        y = h @ c_out + self.d_skip.data * u
        out = (y * z * _sig(z)) @ self.out_proj.w.data + self.out_proj.b.data
        return out.astype(np.float32), h.astype(np.float32)


def _sig(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))


def ssm_scan(x: np.ndarray, layer: SsmLayer, sequential: bool = False) -> np.ndarray:
    """Raw SSM map on one already-projected sequence (T, inner): the recurrence
    h_t = exp(dt_t A) h_{t-1} + (dt_t B_t) x_t, y_t = C_t h_t + D x_t."""
    x = np.asarray(x, dtype=np.float32)
    with ad.no_grad():
        u = Tensor(x[None])
        dt, b_in, c_out = layer._selective(u)
        if not sequential:
            return layer.scan(u, dt, b_in, c_out).data[0]
    a = -np.exp(layer.a_log.data)
    h = np.zeros((layer.inner, layer.state), dtype=np.float32)
    out = np.empty_like(x)
    for t in range(x.shape[0]):
        h = np.exp(dt.data[0, t][:, None] * a) * h \
            + (dt.data[0, t] * x[t])[:, None] * b_in.data[0, t][None, :]
        out[t] = h @ c_out.data[0, t] + layer.d_skip.data * x[t]
    return out


class SsmBlock(nn.Module):
    """Pre-norm residual wrapper: x + ssm(layernorm(x))."""

    def __init__(self, dim: int, state: int, expand: int, rng: np.random.Generator):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.ssm = SsmLayer(dim, state, expand, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.ssm(self.norm(x))

    def step(self, x_t: np.ndarray, h: np.ndarray):
        g, b = self.norm.gamma.data, self.norm.beta.data
        mu = x_t.mean()
        xn = (x_t - mu) / np.sqrt(x_t.var() + 1e-5) * g + b
        y, h = self.ssm.step(xn.astype(np.float32), h)
        return x_t + y, h


@dataclass
class ContextState:
    """Per-layer recurrent state plus a position counter for O(1) stepping."""
    layer_states: list[np.ndarray]
    position: int = 0

    def copy(self) -> "ContextState":
        return ContextState([h.copy() for h in self.layer_states], self.position)


class ContextEncoder(nn.Module):
    """Causal encoder over [text token, object token, motion tokens...].

    Output at input position j is the condition for predicting position j+1;
    conditions(...) returns them aligned so conditions[i] conditions token i+1.
    """

    def __init__(self, d_text: int, d_obj: int, d_token: int, dim: int,
                 n_layers: int, state: int, expand: int, rng: np.random.Generator):
        super().__init__()
        self.dim = dim
        self.text_proj = nn.Linear(d_text, dim, rng)
        self.obj_proj = nn.Linear(d_obj, dim, rng)
        self.tok_proj = nn.Linear(d_token, dim, rng)
        self.blocks = [SsmBlock(dim, state, expand, rng) for _ in range(n_layers)]
        self.norm = nn.LayerNorm(dim)

    def _embed_inputs(self, text: Tensor, obj: Tensor, tokens: Tensor | None) -> Tensor:
        parts = [self.text_proj(text).reshape(text.shape[0], 1, self.dim),
                 self.obj_proj(obj).reshape(obj.shape[0], 1, self.dim)]
        if tokens is not None and tokens.shape[1] > 0:
            parts.append(self.tok_proj(tokens))
        return ad.concat(parts, axis=1)

    def encode(self, text: Tensor, obj: Tensor, tokens: Tensor | None) -> Tensor:
        """(B, d_text), (B, d_obj), (B, K, d_token) -> (B, K+2, dim) outputs."""
        x = self._embed_inputs(text, obj, tokens)
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)

    def conditions(self, text: Tensor, obj: Tensor, tokens: Tensor | None) -> Tensor:
        """Per-position conditions: index i conditions the (i+1)-th token.
        With K tokens given, returns (B, K+1, dim)."""
        out = self.encode(text, obj, tokens)
        return out[:, 1:, :]

    # -- incremental inference ---------------------------------------------------

    def start(self, text_emb: np.ndarray, obj_emb: np.ndarray) -> tuple[np.ndarray, ContextState]:
        """Consume the text and object tokens; returns the condition for token 1.
        Leaves the state at position 0 (no motion tokens consumed yet)."""
        state = ContextState([blk.ssm.init_state() for blk in self.blocks], 0)
        with ad.no_grad():
            t_in = text_emb.astype(np.float32) @ self.text_proj.w.data + self.text_proj.b.data
            self._step_stack(t_in, state)
            o_in = obj_emb.astype(np.float32) @ self.obj_proj.w.data + self.obj_proj.b.data
            cond = self._step_stack(o_in, state)
        return cond, state

    def advance(self, state: ContextState, token: np.ndarray) -> tuple[np.ndarray, ContextState]:
        """Feed motion token at position+1; returns the next condition and state."""
        with ad.no_grad():
            x = token.astype(np.float32) @ self.tok_proj.w.data + self.tok_proj.b.data
            cond = self._step_stack(x, state)
        state.position += 1
        return cond, state

    def _step_stack(self, x_t: np.ndarray, state: ContextState) -> np.ndarray:
        for li, blk in enumerate(self.blocks):
            x_t, state.layer_states[li] = blk.step(x_t, state.layer_states[li])
        g, b = self.norm.gamma.data, self.norm.beta.data
        mu = x_t.mean()
        out = (x_t - mu) / np.sqrt(x_t.var() + 1e-5) * g + b
        return out.astype(np.float32)
