"""Frozen condition encoders: hashed bag-of-tokens text embedding and a
point-cloud encoder pretrained on primitive-shape classification.
"""

from __future__ import annotations

import hashlib

import numpy as np

from . import autodiff as ad
from . import nn, synth
from .autodiff import Tensor
from .domain import N_OBJECT_POINTS

D_TEXT = 64
D_POINT = 64


def encode_text(text: str, dim: int = D_TEXT) -> np.ndarray:
    """Deterministic bag-of-tokens hash embedding; "" maps to the null (zero)
    vector used as the classifier-free-guidance null condition."""
    tokens = text.split()
    if not tokens:
        return np.zeros(dim, dtype=np.float32)
    v = np.zeros(dim, dtype=np.float32)
    for tok in tokens:
        h = hashlib.md5(tok.encode("utf-8")).digest()
        bucket = int.from_bytes(h[:4], "little") % dim
        sign = 1.0 if h[4] & 1 else -1.0
        v[bucket] += sign
    v /= len(tokens)
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


class PointCloudEncoder(nn.Module):
    """Per-point MLP followed by max-pool: permutation invariant by construction."""

    def __init__(self, dim: int = D_POINT, hidden: int = 64, n_classes: int = 5,
                 seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.fc1 = nn.Linear(3, hidden, rng)
        self.fc2 = nn.Linear(hidden, dim, rng)
        self.classifier = nn.Linear(dim, n_classes, rng)
        self.dim = dim

    def embed(self, clouds: Tensor) -> Tensor:
        """(B, N, 3) -> (B, dim), max-pooled over points."""
        h = ad.silu(self.fc1(clouds))
        h = self.fc2(h)
        return ad.tmax(h, axis=1)

    def logits(self, clouds: Tensor) -> Tensor:
        return self.classifier(self.embed(clouds))

    def encode(self, points: np.ndarray) -> np.ndarray:
        """Frozen inference path for one cloud of exactly 256 points."""
        points = np.asarray(points, dtype=np.float32)
        if points.shape != (N_OBJECT_POINTS, 3):
            raise ValueError(f"expected ({N_OBJECT_POINTS}, 3) points, got {points.shape}")
        with ad.no_grad():
            e = self.embed(Tensor(points[None]))
        return e.data[0].copy()


def _labeled_clouds(rng: np.random.Generator, per_class: int):
    clouds, labels = [], []
    for ci, label in enumerate(synth.OBJECT_LABELS):
        for _ in range(per_class):
            scale = rng.uniform(0.8, 1.2)
            pts = synth.sample_primitive(label, rng, scale=scale)
            yaw = rng.uniform(0, 2 * np.pi)
            c, s = np.cos(yaw), np.sin(yaw)
            R = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
            clouds.append(pts @ R.T)
            labels.append(ci)
    return np.array(clouds, dtype=np.float32), np.array(labels)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    onehot = np.zeros(logits.shape, dtype=np.float32)
    onehot[np.arange(len(labels)), labels] = 1.0
    p = ad.softmax(logits)
    picked = ad.tsum(p * Tensor(onehot), axis=-1)
    return -ad.tmean(ad.log(picked + 1e-9))


def pretrain_point_encoder(seed: int = 0, per_class: int = 120, epochs: int = 25,
                           batch: int = 64, lr: float = 1e-3,
                           verbose: bool = False) -> tuple[PointCloudEncoder, float]:
    """Train on primitive-shape classification, then freeze. Returns the
    encoder and its held-out accuracy."""
    rng = np.random.default_rng(seed)
    enc = PointCloudEncoder(seed=seed)
    x_train, y_train = _labeled_clouds(rng, per_class)
    x_test, y_test = _labeled_clouds(rng, max(per_class // 4, 10))
    opt = nn.Adam(enc.parameters(), lr=lr)
    n = len(x_train)
    for ep in range(epochs):
        order = rng.permutation(n)
        for i in range(0, n, batch):
            idx = order[i:i + batch]
            loss = cross_entropy(enc.logits(Tensor(x_train[idx])), y_train[idx])
            ad.backward(loss)
            opt.step()
        if verbose:
            print(f"point-encoder epoch {ep}: loss {float(loss.data):.4f}")
    with ad.no_grad():
        pred = enc.logits(Tensor(x_test)).data.argmax(axis=1)
    acc = float((pred == y_test).mean())
    enc.set_trainable(False)
    return enc, acc
