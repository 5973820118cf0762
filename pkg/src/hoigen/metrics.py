"""Evaluation protocol: a contrastively trained text/motion embedder and the
standard metric suite (FID, R-precision, multimodal distance, diversity),
plus physical plausibility measurements and the text-retrieval baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from . import domain as dm
from . import encoders, nn, ssm
from .autodiff import Tensor
from .domain import HoiSequence, ObjectSpec, Skeleton
from .tokenizer import segment

D_EVAL = 32
RPRECISION_POOL = 32
DIVERSITY_PAIRS = 300


class EvalEmbedder(nn.Module):
    """Motion branch: flattened 16-frame clips -> projection -> SSM blocks ->
    masked mean pool; text branch: projection of the hash embedding. Both
    outputs L2-normalized. Frozen after contrastive training."""

    def __init__(self, d_out: int = D_EVAL, clip_frames: int = 16, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.clip_frames = clip_frames
        self.d_out = d_out
        d_in = clip_frames * dm.FRAME_DIM
        self.motion_proj = nn.Linear(d_in, d_out, rng)
        self.blocks = [ssm.SsmBlock(d_out, 4, 2, rng) for _ in range(2)]
        self.norm = nn.LayerNorm(d_out)
        self.text_proj = nn.Linear(encoders.D_TEXT, d_out, rng)
        self.norm_mean = np.zeros(dm.FRAME_DIM, dtype=np.float32)
        self.norm_std = np.ones(dm.FRAME_DIM, dtype=np.float32)
        self.temperature = 0.07
        self.frozen = False

    def fit_normalizer(self, seqs: list[HoiSequence]):
        allf = np.concatenate([s.frames for s in seqs])
        self.norm_mean = allf.mean(axis=0).astype(np.float32)
        self.norm_std = np.maximum(allf.std(axis=0), 1e-2).astype(np.float32)

    def _clips(self, seq: HoiSequence) -> np.ndarray:
        clips, k = segment(seq.frames, self.clip_frames)
        x = (clips[:k] - self.norm_mean) / self.norm_std
        return x.reshape(k, -1).astype(np.float32)

    def motion_tensor(self, padded: Tensor, mask: np.ndarray) -> Tensor:
        h = self.motion_proj(padded)
        for blk in self.blocks:
            h = blk(h)
        h = self.norm(h)
        m = Tensor(mask[..., None].astype(np.float32))
        pooled = ad.tsum(h * m, axis=1) / Tensor(mask.sum(axis=1, keepdims=True).astype(np.float32))
        return _l2n(pooled)

    def text_tensor(self, text_embs: Tensor) -> Tensor:
        return _l2n(self.text_proj(text_embs))

    def embed_motions(self, seqs: list[HoiSequence]) -> np.ndarray:
        rows = [self._clips(s) for s in seqs]
        kmax = max(r.shape[0] for r in rows)
        padded = np.zeros((len(rows), kmax, rows[0].shape[1]), dtype=np.float32)
        mask = np.zeros((len(rows), kmax), dtype=bool)
        for i, r in enumerate(rows):
            padded[i, :len(r)] = r
            mask[i, :len(r)] = True
        with ad.no_grad():
            out = self.motion_tensor(Tensor(padded), mask)
        return out.data.copy()

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        raw = np.stack([encoders.encode_text(t) for t in texts])
        with ad.no_grad():
            out = self.text_tensor(Tensor(raw))
        return out.data.copy()


def _l2n(x: Tensor) -> Tensor:
    return x / ad.l2norm(x).reshape(x.shape[0], 1)


def train_eval_embedder(corpus: list[HoiSequence], seed: int = 0, epochs: int = 50,
                        batch_size: int = 32, lr: float = 1e-3,
                        log=None) -> EvalEmbedder:
    """Symmetric InfoNCE over matched (text, motion) pairs, then freeze."""
    rng = np.random.default_rng(seed)
    emb = EvalEmbedder(seed=seed)
    emb.fit_normalizer(corpus)
    rows = [emb._clips(s) for s in corpus]
    texts = np.stack([encoders.encode_text(s.text) for s in corpus])
    opt = nn.Adam(emb.parameters(), lr=lr)
    n = len(corpus)
    for ep in range(epochs):
        perm = rng.permutation(n)
        losses = []
        for s in range(0, n, batch_size):
            idx = perm[s:s + batch_size]
            if len(idx) < 4:
                continue
            kmax = max(rows[i].shape[0] for i in idx)
            padded = np.zeros((len(idx), kmax, rows[0].shape[1]), dtype=np.float32)
            mask = np.zeros((len(idx), kmax), dtype=bool)
            for bi, i in enumerate(idx):
                padded[bi, :len(rows[i])] = rows[i]
                mask[bi, :len(rows[i])] = True
            m = emb.motion_tensor(Tensor(padded), mask)
            t = emb.text_tensor(Tensor(texts[idx]))
            sim = ad.matmul(m, ad.swapaxes(t, 0, 1)) * (1.0 / emb.temperature)
            labels = np.arange(len(idx))
            loss = _ce(sim, labels) + _ce(ad.swapaxes(sim, 0, 1), labels)
            ad.backward(loss)
            opt.step()
            losses.append(float(loss.data))
        if log:
            log(f"eval-embedder epoch {ep}: loss {np.mean(losses):.4f}")
    emb.set_trainable(False)
    emb.frozen = True
    return emb


def _ce(logits: Tensor, labels: np.ndarray) -> Tensor:
    onehot = np.zeros(logits.shape, dtype=np.float32)
    onehot[np.arange(len(labels)), labels] = 1.0
    p = ad.softmax(logits)
    return -ad.tmean(ad.log(ad.tsum(p * Tensor(onehot), axis=-1) + 1e-9))


# -- metric primitives ----------------------------------------------------------

def fid(real: np.ndarray, gen: np.ndarray) -> float:
    """Frechet distance between Gaussian fits; matrix square root by symmetric
    eigendecomposition with negative eigenvalues clamped to zero."""
    real = np.asarray(real, dtype=np.float64)
    gen = np.asarray(gen, dtype=np.float64)
    d = real.shape[1]
    if real.shape[0] < d + 1 or gen.shape[0] < d + 1:
        raise ValueError(f"need at least {d + 1} samples per side for a {d}-dim "
                         f"Gaussian fit, got {real.shape[0]} and {gen.shape[0]}")
    mu1, mu2 = real.mean(axis=0), gen.mean(axis=0)
    s1 = np.cov(real, rowvar=False)
    s2 = np.cov(gen, rowvar=False)
    s1_half = _psd_sqrt(s1)
    inner = s1_half @ s2 @ s1_half
    w = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    tr_sqrt = np.sqrt(np.clip(w, 0.0, None)).sum()
    val = float(((mu1 - mu2) ** 2).sum() + np.trace(s1) + np.trace(s2) - 2.0 * tr_sqrt)
    return max(val, 0.0)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.T) / 2.0)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def r_precision(text_embs: np.ndarray, motion_embs: np.ndarray, k: int,
                rng: np.random.Generator, pool: int = RPRECISION_POOL) -> float:
    """Fraction of queries whose matched motion ranks in the top k (Euclidean)
    of a shuffled candidate pool of `pool` motions."""
    n = len(text_embs)
    if pool < k:
        raise ValueError(f"pool {pool} smaller than k={k}")
    if n < pool:
        raise ValueError(f"need at least {pool} pairs, got {n}")
    order = rng.permutation(n)
    hits, total = 0, 0
    for s in range(0, n - pool + 1, pool):
        idx = order[s:s + pool]
        t = text_embs[idx]
        m = motion_embs[idx]
        d = np.linalg.norm(t[:, None, :] - m[None, :, :], axis=-1)
        ranks = (d < np.diagonal(d)[:, None]).sum(axis=1)
        hits += int((ranks < k).sum())
        total += pool
    return hits / total


def mmd_and_diversity(text_embs: np.ndarray, motion_embs: np.ndarray,
                      rng: np.random.Generator,
                      pairs: int = DIVERSITY_PAIRS) -> tuple[float, float]:
    """Multimodal distance: mean text-to-matched-motion distance. Diversity:
    mean distance over `pairs` random motion pairs (capped at n(n-1)/2)."""
    mmd = float(np.linalg.norm(text_embs - motion_embs, axis=-1).mean())
    n = len(motion_embs)
    if n < 2:
        return mmd, 0.0
    n_pairs = min(pairs, n * (n - 1) // 2)
    a = rng.integers(0, n, size=4 * n_pairs)
    b = rng.integers(0, n, size=4 * n_pairs)
    keep = a != b
    a, b = a[keep][:n_pairs], b[keep][:n_pairs]
    div = float(np.linalg.norm(motion_embs[a] - motion_embs[b], axis=-1).mean())
    return mmd, div


def physical_metrics(seq: HoiSequence, skeleton: Skeleton, obj: ObjectSpec,
                     clip_frames: int = 16) -> tuple[float, float]:
    """contact_mean: mean min contact distance over manipulation frames (frames
    where the object pose is changing; falls back to all frames for a static
    object). boundary_jerk: frame-step velocity at clip boundaries relative to
    the in-clip median (1.0 when both vanish)."""
    frames = seq.frames
    T = len(frames)
    d = dm.contact_distance_matrix(frames, skeleton, obj).min(axis=1)
    opose = frames[:, dm.HUMAN_DIM:]
    moving = np.linalg.norm(np.diff(opose, axis=0), axis=1) > 1e-3
    man = np.flatnonzero(moving)
    contact_mean = float(d[man].mean() if len(man) else d.mean())

    v = np.linalg.norm(np.diff(frames, axis=0), axis=1)   # transition t -> t+1
    t_idx = np.arange(1, T)
    at_boundary = (t_idx % clip_frames) == 0
    vb = v[at_boundary]
    vi = v[~at_boundary]
    if len(vb) == 0:
        return contact_mean, 1.0
    med = float(np.median(vi)) if len(vi) else 0.0
    mb = float(vb.mean())
    if mb < 1e-12 and med < 1e-12:
        return contact_mean, 1.0
    return contact_mean, mb / max(med, 1e-9)


# -- aggregated report -------------------------------------------------------------

@dataclass
class MetricsReport:
    fid: float
    r_precision_top1: float
    r_precision_top2: float
    r_precision_top3: float
    mmd: float
    diversity: float
    contact_mean: float
    boundary_jerk: float
    runs: int
    r_precision_top1_std: float = 0.0
    r_precision_top2_std: float = 0.0
    r_precision_top3_std: float = 0.0
    diversity_std: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate(real_seqs: list[HoiSequence], gen_seqs: list[HoiSequence],
             embedder: EvalEmbedder, objects: dict[str, ObjectSpec],
             skeleton: Skeleton | None = None, runs: int = 20,
             seed: int = 0) -> MetricsReport:
    """Embed both sides once, then aggregate the randomized metrics over
    `runs` shuffles. FID compares real vs generated motion embeddings;
    R-precision/MMD pair each generated motion with its own prompt."""
    skeleton = skeleton or dm.default_skeleton()
    real_m = embedder.embed_motions(real_seqs)
    gen_m = embedder.embed_motions(gen_seqs)
    gen_t = embedder.embed_texts([s.text for s in gen_seqs])

    fid_val = fid(real_m, gen_m)
    r1s, r2s, r3s, divs = [], [], [], []
    mmd_val = None
    for r in range(runs):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(r,)))
        r1s.append(r_precision(gen_t, gen_m, 1, rng))
        r2s.append(r_precision(gen_t, gen_m, 2, rng))
        r3s.append(r_precision(gen_t, gen_m, 3, rng))
        mmd_val, div = mmd_and_diversity(gen_t, gen_m, rng)
        divs.append(div)
    phys = [physical_metrics(s, skeleton, objects[s.object_label]) for s in gen_seqs]
    contact = float(np.mean([p[0] for p in phys]))
    jerk = float(np.mean([p[1] for p in phys]))
    return MetricsReport(
        fid=fid_val,
        r_precision_top1=float(np.mean(r1s)), r_precision_top2=float(np.mean(r2s)),
        r_precision_top3=float(np.mean(r3s)),
        mmd=float(mmd_val), diversity=float(np.mean(divs)),
        contact_mean=contact, boundary_jerk=jerk, runs=runs,
        r_precision_top1_std=float(np.std(r1s)), r_precision_top2_std=float(np.std(r2s)),
        r_precision_top3_std=float(np.std(r3s)), diversity_std=float(np.std(divs)),
    )


def retrieval_baseline(test_corpus: list[HoiSequence], train_corpus: list[HoiSequence],
                       embedder: EvalEmbedder, objects: dict[str, ObjectSpec],
                       runs: int = 20, seed: int = 0) -> MetricsReport:
    """For each test item, take the training sequence with the most similar raw
    text embedding (ties broken by lowest index) and score it as if generated."""
    if not test_corpus or not train_corpus:
        raise ValueError("retrieval baseline needs non-empty corpora")
    train_t = np.stack([encoders.encode_text(s.text) for s in train_corpus])
    retrieved = []
    for s in test_corpus:
        q = encoders.encode_text(s.text)
        d = np.linalg.norm(train_t - q, axis=1)
        pick = train_corpus[int(np.argmin(d))]
        retrieved.append(HoiSequence(pick.frames.copy(), text=s.text,
                                     object_label=pick.object_label))
    return evaluate(test_corpus, retrieved, embedder, objects, runs=runs, seed=seed)
