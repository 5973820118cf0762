"""Layers, parameter registry, Adam, and the checkpoint file format."""

from __future__ import annotations

import json

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CKPT_MAGIC = b"HGCK"


class Module:
    """Tiny parameter container with torch-like attribute registration."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
            for i, v in enumerate(value):
                self._children[f"{name}.{i}"] = v
        object.__setattr__(self, name, value)

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for name, p in self._params.items():
            out[prefix + name] = p
        for name, child in self._children.items():
            out.update(child.parameters(prefix + name + "."))
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def set_trainable(self, flag: bool):
        for p in self.parameters().values():
            p.requires_grad = flag
            p.needs_grad = flag

    def load_state(self, arrays: dict[str, np.ndarray]):
        params = self.parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise KeyError(f"checkpoint missing parameters: {sorted(missing)}")
        for name, p in params.items():
            a = arrays[name]
            if tuple(a.shape) != tuple(p.shape):
                raise ValueError(f"shape mismatch for {name}: checkpoint {a.shape} vs model {p.shape}")
            p.data = np.ascontiguousarray(a, dtype=np.float32)
            p.grad = None


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        scale = 1.0 / np.sqrt(n_in)
        self.w = Tensor(rng.normal(0.0, scale, size=(n_in, n_out)).astype(np.float32),
                        requires_grad=True)
        self.has_bias = bias
        if bias:
            self.b = Tensor(np.zeros(n_out, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        y = ad.matmul(x, self.w)
        if self.has_bias:
            y = y + self.b
        return y


class LayerNorm(Module):
    def __init__(self, dim: int):
        super().__init__()
        self.gamma = Tensor(np.ones(dim, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layernorm(x, self.gamma, self.beta)


class ResidualBlock(Module):
    """fc -> SiLU -> fc -> layernorm, with the residual added inside the norm."""

    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        self.fc1 = Linear(dim, dim, rng)
        self.fc2 = Linear(dim, dim, rng)
        self.norm = LayerNorm(dim)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.fc2(ad.silu(self.fc1(x)))
        return self.norm(x + h)


class ResidualMlp(Module):
    """Input projection followed by residual blocks and an output head."""

    def __init__(self, n_in: int, hidden: int, n_out: int, n_blocks: int, rng: np.random.Generator):
        super().__init__()
        self.stem = Linear(n_in, hidden, rng)
        self.blocks = [ResidualBlock(hidden, rng) for _ in range(n_blocks)]
        self.head = Linear(hidden, n_out, rng)

    def trunk(self, x: Tensor) -> Tensor:
        h = self.stem(x)
        for blk in self.blocks:
            h = blk(h)
        return h

    def __call__(self, x: Tensor) -> Tensor:
        return self.head(self.trunk(x))


class Adam:
    """Adam with bias correction. step() zeroes grads and clears the tape."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        b1t = 1.0 - self.b1 ** self.t
        b2t = 1.0 - self.b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise RuntimeError(f"non-finite gradient in parameter '{name}'; training halted")
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
            p.grad = None
        ad.clear_tape()


# -- checkpoint I/O -----------------------------------------------------------
# Layout: magic | uint64 header length | JSON header | concatenated float32 data.
# Header: {"params": [{"name", "shape", "offset"}...], "meta": {...}}.

def save_checkpoint(path, params: dict[str, Tensor], meta: dict | None = None):
    entries = []
    offset = 0
    buffers = []
    for name in sorted(params):
        a = np.ascontiguousarray(params[name].data, dtype=np.float32)
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        buffers.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({"params": entries, "meta": meta or {}}).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(np.uint64(len(header)).tobytes())
        f.write(header)
        for b in buffers:
            f.write(b)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = np.frombuffer(f.read(8), dtype=np.uint64)
        header = json.loads(f.read(int(hlen)).decode())
        blob = f.read()
    arrays = {}
    for e in header["params"]:
        shape = tuple(e["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = e["offset"]
        arrays[e["name"]] = np.frombuffer(blob, dtype=np.float32, count=n,
                                          offset=start).reshape(shape).copy()
    return arrays, header.get("meta", {})
