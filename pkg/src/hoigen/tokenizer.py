"""Contrastive VAE over 16-frame HOI clips: continuous motion tokens.

Phase 1 trains an MLP encoder/decoder pair (decoder with one selective SSM
layer over the token axis) under reconstruction + KL + triplet + physical
losses; the result is frozen and reused as the token space for phase 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import diffgeom
from . import domain as dm
from . import nn, ssm
from .autodiff import Tensor
from .domain import FRAME_DIM, HoiSequence, ObjectSpec, Skeleton

CONTACT_ELIGIBLE = 0.2  # anchor eligibility: some contact joint within 0.2 m


def segment(frames: np.ndarray, token_frames: int = 16) -> tuple[np.ndarray, int]:
    """Split (T, 75) into ceil(T/token_frames) clips, padding the tail by
    repeating the last frame, and append one all-zero null clip for
    stop-signal training. Returns (clips (K+1, token_frames, 75), K)."""
    frames = np.asarray(frames, dtype=np.float64)
    T = frames.shape[0]
    if T < 1:
        raise ValueError("cannot segment an empty sequence")
    K = int(np.ceil(T / token_frames))
    padded = np.concatenate([frames, np.repeat(frames[-1:], K * token_frames - T, axis=0)])
    clips = padded.reshape(K, token_frames, FRAME_DIM)
    null = np.zeros((1, token_frames, FRAME_DIM))
    return np.concatenate([clips, null]), K


def segment_sequence(seq: HoiSequence, token_frames: int = 16) -> tuple[np.ndarray, int]:
    return segment(seq.frames, token_frames)


# -- contrastive sample construction ---------------------------------------------

@dataclass
class ContrastiveTriple:
    anchor: np.ndarray      # (token_frames, 75)
    positive: np.ndarray
    negative: np.ndarray
    object_label: str


def contact_profile(clip: np.ndarray, skeleton: Skeleton, obj: ObjectSpec):
    """Clip-level contact profile: per contact joint the frame-mean of its min
    distance to the posed cloud, plus the joints attaining the smallest and
    second smallest values."""
    d = dm.contact_distance_matrix(clip, skeleton, obj).mean(axis=0)
    order = np.argsort(d, kind="stable")
    second = int(order[1]) if len(order) > 1 else int(order[0])
    return d, int(order[0]), second


def offset_clip(clip: np.ndarray, offset: np.ndarray) -> np.ndarray:
    out = np.array(clip, dtype=np.float64)
    out[:, dm.HUMAN_DIM:dm.HUMAN_DIM + 3] += offset
    return out


def yaw_clip(clip: np.ndarray, angle: float) -> np.ndarray:
    """Rigidly rotate the whole clip (human and object) about the vertical axis
    through the object's frame-0 horizontal position. Contact distances are
    exactly preserved; for vertically symmetric objects this is a valid
    positive augmentation."""
    center = clip[0, dm.HUMAN_DIM:dm.HUMAN_DIM + 3] * np.array([1.0, 0.0, 1.0])
    R = dm.yaw_rotation(angle)
    return dm.apply_rigid(clip, R, center - R @ center)


def label_candidate(anchor_profile, candidate: np.ndarray, skeleton: Skeleton,
                    obj: ObjectSpec, tau: float) -> str | None:
    """Positive if both tracked contact distances move by < tau/3, negative if
    both move by >= tau, otherwise undecided (resample)."""
    d0, j1, j2 = anchor_profile
    d = dm.contact_distance_matrix(candidate, skeleton, obj).mean(axis=0)
    delta1 = abs(d[j1] - d0[j1])
    delta2 = abs(d[j2] - d0[j2])
    if delta1 >= tau and delta2 >= tau:
        return "negative"
    if delta1 < tau / 3 and delta2 < tau / 3:
        return "positive"
    return None


def make_contrastive_samples(clip: np.ndarray, obj: ObjectSpec, skeleton: Skeleton,
                             tau: float = 0.03, rng: np.random.Generator | None = None,
                             max_tries: int = 100) -> ContrastiveTriple | None:
    """One positive and one negative variant of the anchor clip, or None after
    max_tries failed draws (caller logs the skip)."""
    rng = rng or np.random.default_rng()
    clip = np.asarray(clip, dtype=np.float64)
    prof = contact_profile(clip, skeleton, obj)
    d0 = prof[0]
    if d0.min() > CONTACT_ELIGIBLE:
        raise ValueError(f"anchor has no contact joint within {CONTACT_ELIGIBLE} m "
                         f"(closest {d0.min():.3f} m)")
    positive = None
    negative = None
    for _ in range(max_tries):
        if positive is not None and negative is not None:
            break
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        offset = direction * (0.1 * rng.uniform() ** (1.0 / 3.0))  # volume-uniform ball
        cand = offset_clip(clip, offset)
        lab = label_candidate(prof, cand, skeleton, obj, tau)
        if lab == "negative" and negative is None:
            negative = cand
        elif lab == "positive" and positive is None:
            positive = cand
    if positive is None and obj.vertically_symmetric:
        # rigid vertical rotation about the object axis: contact-preserving,
        # always a valid positive; kept small so the pose shift stays in the
        # same range as the translation offsets
        positive = yaw_clip(clip, rng.uniform(-0.2, 0.2))
    if positive is None or negative is None:
        return None
    return ContrastiveTriple(clip, positive, negative, obj.label)


# -- the tokenizer ---------------------------------------------------------------

@dataclass
class TokenizerConfig:
    token_frames: int = 16
    d_latent: int = 32
    hidden: int = 256
    n_blocks: int = 3
    d_obj: int = 64
    ssm_state: int = 8
    ssm_expand: int = 2
    alpha: float = 1.0            # triplet margin
    tau: float = 0.03
    lambda_tri: float = 2.0       # 0.1 under-separates at this data scale
    lambda_kl: float = 1e-4
    lambda_phy: float = 1.0
    lambda_fk: float = 1.0
    lambda_vel: float = 1.0
    lambda_ovel: float = 1.0
    lambda_con: float = 1.0

    @property
    def in_dim(self) -> int:
        return self.token_frames * FRAME_DIM + self.d_obj

    @property
    def frame_flat(self) -> int:
        return self.token_frames * FRAME_DIM


class ClipTokenizer(nn.Module):
    def __init__(self, cfg: TokenizerConfig, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.enc = nn.ResidualMlp(cfg.in_dim, cfg.hidden, cfg.d_latent, cfg.n_blocks, rng)
        self.enc_logvar = nn.Linear(cfg.hidden, cfg.d_latent, rng)
        self.dec_stem = nn.Linear(cfg.d_latent + cfg.d_obj, cfg.hidden, rng)
        self.dec_blocks = [nn.ResidualBlock(cfg.hidden, rng) for _ in range(cfg.n_blocks)]
        self.dec_ssm = ssm.SsmBlock(cfg.hidden, cfg.ssm_state, cfg.ssm_expand, rng)
        self.dec_head = nn.Linear(cfg.hidden, cfg.frame_flat, rng)
        self.norm_mean = np.zeros(FRAME_DIM, dtype=np.float32)
        self.norm_std = np.ones(FRAME_DIM, dtype=np.float32)
        self.frozen = False

    # -- normalization -----------------------------------------------------------

    def fit_normalizer(self, sequences: list[HoiSequence]):
        allf = np.concatenate([s.frames for s in sequences])
        self.norm_mean = allf.mean(axis=0).astype(np.float32)
        self.norm_std = np.maximum(allf.std(axis=0), 1e-2).astype(np.float32)

    def normalize(self, frames: np.ndarray) -> np.ndarray:
        return ((frames - self.norm_mean) / self.norm_std).astype(np.float32)

    def denormalize(self, frames: np.ndarray) -> np.ndarray:
        return frames * self.norm_std + self.norm_mean

    def clip_input(self, clips: np.ndarray, obj_emb: np.ndarray) -> np.ndarray:
        """Flatten normalized clips (K, F, 75) and append the object embedding."""
        k = clips.shape[0]
        flat = self.normalize(clips).reshape(k, self.cfg.frame_flat)
        rep = np.broadcast_to(obj_emb.astype(np.float32), (k, self.cfg.d_obj))
        return np.concatenate([flat, rep], axis=1)

    # -- graph paths ---------------------------------------------------------------

    def encode_tensor(self, flat_in: Tensor) -> tuple[Tensor, Tensor]:
        h = self.enc.trunk(flat_in)
        return self.enc.head(h), self.enc_logvar(h)

    def decode_tensor(self, z: Tensor, obj_rep: Tensor) -> Tensor:
        """(B, K, d_latent) + (B, K, d_obj) -> normalized clips (B, K, frame_flat).
        The SSM layer runs causally over the token axis before the projection."""
        x = ad.concat([z, obj_rep], axis=-1)
        h = self.dec_stem(x)
        for blk in self.dec_blocks:
            h = blk(h)
        h = self.dec_ssm(h)
        return self.dec_head(h)

    # -- frozen inference API --------------------------------------------------------

    def encode(self, clips: np.ndarray, obj_emb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Gaussian parameters for clips (K, F, 75): returns (mu, logvar), each (K, d_latent)."""
        clips = np.asarray(clips, dtype=np.float64)
        if clips.ndim == 2:
            clips = clips[None]
        with ad.no_grad():
            mu, logvar = self.encode_tensor(Tensor(self.clip_input(clips, obj_emb)))
        return mu.data.copy(), logvar.data.copy()

    def decode(self, latents: np.ndarray, obj_emb: np.ndarray) -> np.ndarray:
        """Clips (K, F, 75) in world units decoded from latents (K, d_latent)."""
        latents = np.asarray(latents, dtype=np.float32)
        if latents.ndim == 1:
            latents = latents[None]
        k = latents.shape[0]
        rep = np.broadcast_to(obj_emb.astype(np.float32), (k, self.cfg.d_obj))
        with ad.no_grad():
            y = self.decode_tensor(Tensor(latents[None]), Tensor(rep[None]))
        out = y.data[0].reshape(k, self.cfg.token_frames, FRAME_DIM)
        return self.denormalize(out.astype(np.float64))

    def null_latent(self, obj_emb: np.ndarray) -> np.ndarray:
        """Latent mean of the all-zero null clip (the stop token's content)."""
        zero = np.zeros((1, self.cfg.token_frames, FRAME_DIM))
        mu, _ = self.encode(zero, obj_emb)
        return mu[0]

    def freeze(self):
        self.set_trainable(False)
        self.frozen = True


# -- loss ---------------------------------------------------------------------------

def cvae_loss(tok: ClipTokenizer, batch: dict, skeleton: Skeleton,
              rng: np.random.Generator, with_triplet: bool = True):
    """Total objective and components on one assembled batch (see
    assemble_batch for the layout; all *_gt targets are precomputed)."""
    cfg = tok.cfg
    B, Kmax = batch["mask"].shape
    F = cfg.token_frames
    valid = np.flatnonzero(batch["mask"].reshape(-1))
    nv = len(valid)

    flat_in = Tensor(batch["clips_in"].reshape(B * Kmax, cfg.in_dim))
    mu, logvar = tok.encode_tensor(flat_in)
    eps = Tensor(rng.standard_normal((B * Kmax, cfg.d_latent), dtype=np.float32))
    z = mu + ad.exp(0.5 * logvar) * eps

    obj_rep_tok = Tensor(np.repeat(batch["obj_rep"][:, None, :], Kmax, axis=1))
    y_norm = tok.decode_tensor(z.reshape(B, Kmax, cfg.d_latent), obj_rep_tok)

    x_norm = batch["clips_in"].reshape(B * Kmax, cfg.in_dim)[:, :cfg.frame_flat]
    err = y_norm.reshape(B * Kmax, cfg.frame_flat) - Tensor(np.ascontiguousarray(x_norm))
    l_rec = ad.tmean(ad.l2norm(err[valid]))

    kl_tok = ad.tsum((ad.exp(logvar) + mu * mu - 1.0 - logvar)[valid], axis=-1)
    l_kl = ad.tsum(kl_tok) / float(B)

    # physical terms on the denormalized decode
    std_t = Tensor(np.tile(tok.norm_std, F))
    mean_t = Tensor(np.tile(tok.norm_mean, F))
    y_world = y_norm.reshape(B * Kmax, cfg.frame_flat)[valid] * std_t + mean_t
    frames_pred = y_world.reshape(nv * F, FRAME_DIM)

    fk_pred = diffgeom.fk_tensor(frames_pred, skeleton)
    nj3 = skeleton.n_joints * 3
    fk_err = fk_pred.reshape(nv, F, nj3) - Tensor(batch["fk_gt"])
    l_fk = ad.tmean(ad.l2norm(fk_err.reshape(nv, F * nj3)))

    pos_clip = fk_pred.reshape(nv, F, nj3)
    vel_pred = pos_clip[:, 1:, :] - pos_clip[:, :-1, :]
    l_vel = ad.tmean(ad.l2norm((vel_pred - Tensor(batch["vel_gt"])).reshape(nv, -1)))

    obj_pred = y_world.reshape(nv, F, FRAME_DIM)[:, :, dm.HUMAN_DIM:]
    ovel_pred = obj_pred[:, 1:, :] - obj_pred[:, :-1, :]
    l_ovel = ad.tmean(ad.l2norm((ovel_pred - Tensor(batch["ovel_gt"])).reshape(nv, -1)))

    # contact on the frame subsample, reusing the FK graph
    sub = np.arange(0, F, CONTACT_FRAME_STRIDE)
    within = (np.arange(nv)[:, None] * F + sub[None, :]).reshape(-1)
    fsub = frames_pred[within]
    jpos_sub = fk_pred.reshape(nv * F, skeleton.n_joints, 3)[within][:, skeleton.contact_joint_ids, :]
    pts_sub = np.repeat(batch["points_valid"], len(sub), axis=0)
    d_pred = diffgeom.contact_distances_tensor(fsub, skeleton, pts_sub, jpos=jpos_sub)
    l_con = ad.tmean(ad.tabs(d_pred - Tensor(batch["d_gt"].reshape(-1, d_pred.shape[-1]))))

    l_tri = Tensor(np.float32(0.0))
    if with_triplet and batch["triples"].shape[0] > 0:
        tri = batch["triples"]
        m = tri.shape[0]
        tri_mu, _ = tok.encode_tensor(Tensor(tri.reshape(m * 3, cfg.in_dim)))
        tri_mu = tri_mu.reshape(m, 3, cfg.d_latent)
        d_pos = ad.l2norm(tri_mu[:, 0, :] - tri_mu[:, 1, :])
        d_neg = ad.l2norm(tri_mu[:, 0, :] - tri_mu[:, 2, :])
        l_tri = ad.tmean(ad.relu(d_pos - d_neg + cfg.alpha))

    l_phy = (cfg.lambda_fk * l_fk + cfg.lambda_vel * l_vel
             + cfg.lambda_ovel * l_ovel + cfg.lambda_con * l_con)
    total = l_rec + cfg.lambda_tri * l_tri + cfg.lambda_kl * l_kl + cfg.lambda_phy * l_phy
    comps = {"rec": float(l_rec.data), "kl": float(l_kl.data), "tri": float(l_tri.data),
             "fk": float(l_fk.data), "vel": float(l_vel.data), "ovel": float(l_ovel.data),
             "con": float(l_con.data), "total": float(total.data)}
    return total, comps


def _contact_gt(clips_sub: np.ndarray, pts: np.ndarray, skeleton: Skeleton) -> np.ndarray:
    """Reference contact distances for (nv, S, 75) clips against per-clip clouds."""
    nv, S = clips_sub.shape[:2]
    frames = clips_sub.reshape(nv * S, FRAME_DIM)
    jpos = dm.fk_positions(frames[:, :3],
                           frames[:, 3:dm.HUMAN_DIM].reshape(-1, skeleton.n_joints, 3),
                           skeleton)[:, skeleton.contact_joint_ids]
    R = dm.axis_angle_to_matrix(frames[:, dm.HUMAN_DIM + 3:])
    pts_rep = np.repeat(pts, S, axis=0)
    world = np.einsum("fij,fpj->fpi", R, pts_rep) + frames[:, None, dm.HUMAN_DIM:dm.HUMAN_DIM + 3]
    d = np.linalg.norm(jpos[:, :, None, :] - world[:, None, :, :], axis=-1).min(axis=2)
    return d.astype(np.float32)


# -- training ----------------------------------------------------------------------

CONTACT_FRAME_STRIDE = 4  # contact loss on every 4th frame per clip


def prepare_sequences(corpus: list[HoiSequence], objects: dict[str, ObjectSpec],
                      obj_embs: dict[str, np.ndarray], tok: ClipTokenizer,
                      skeleton: Skeleton | None = None) -> list[dict]:
    """Per-sequence tensors plus cached physical-loss targets (FK positions,
    velocities, contact distances). Normalizer must be fitted first."""
    skeleton = skeleton or dm.default_skeleton()
    F = tok.cfg.token_frames
    sub = np.arange(0, F, CONTACT_FRAME_STRIDE)
    out = []
    for seq in corpus:
        clips, k = segment(seq.frames, tok.cfg.token_frames)
        content = clips[:k]
        emb = obj_embs[seq.object_label]
        pts = objects[seq.object_label].points.astype(np.float32)
        fk_gt = dm.forward_kinematics(content.reshape(-1, FRAME_DIM), skeleton)
        fk_gt = fk_gt.reshape(k, F, skeleton.n_joints * 3).astype(np.float32)
        d_gt = _contact_gt(content[:, sub, :], np.repeat(pts[None], k, axis=0), skeleton)
        out.append({
            "clips_raw": content,
            "clips_in": tok.clip_input(content, emb),
            "obj_emb": emb.astype(np.float32),
            "points": pts,
            "k": k,
            "fk_gt": fk_gt,
            "vel_gt": np.diff(fk_gt, axis=1),
            "ovel_gt": np.diff(content[:, :, dm.HUMAN_DIM:], axis=1).astype(np.float32),
            "d_gt": d_gt.reshape(k, len(sub), -1),
        })
    return out


def build_triples(corpus: list[HoiSequence], objects: dict[str, ObjectSpec],
                  obj_embs: dict[str, np.ndarray], tok: ClipTokenizer,
                  skeleton: Skeleton, seed: int, anchors_per_seq: int = 2):
    """Contrastive triples as stacked encoder inputs (M, 3, in_dim); also
    returns the number of skipped anchors."""
    rows = []
    skipped = 0
    for si, seq in enumerate(corpus):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(si,)))
        obj = objects[seq.object_label]
        clips, k = segment(seq.frames, tok.cfg.token_frames)
        eligible = [i for i in range(k)
                    if contact_profile(clips[i], skeleton, obj)[0].min() <= CONTACT_ELIGIBLE]
        if not eligible:
            continue
        picks = rng.choice(eligible, size=min(anchors_per_seq, len(eligible)), replace=False)
        for ci in picks:
            triple = make_contrastive_samples(clips[ci], obj, skeleton, tok.cfg.tau, rng)
            if triple is None:
                skipped += 1
                continue
            stackd = np.stack([triple.anchor, triple.positive, triple.negative])
            rows.append(tok.clip_input(stackd, obj_embs[seq.object_label]))
    if not rows:
        return np.zeros((0, 3, tok.cfg.in_dim), dtype=np.float32), skipped
    return np.stack(rows), skipped


def assemble_batch(prepped: list[dict], idx: np.ndarray, tok: ClipTokenizer,
                   triples: np.ndarray, rng: np.random.Generator,
                   triples_per_step: int) -> dict:
    """Pad sequences to the batch max token count; stack cached targets in
    valid-clip order (row-major over the mask)."""
    cfg = tok.cfg
    kmax = max(prepped[i]["k"] for i in idx)
    B = len(idx)
    clips_in = np.zeros((B, kmax, cfg.in_dim), dtype=np.float32)
    mask = np.zeros((B, kmax), dtype=bool)
    obj_rep = np.zeros((B, cfg.d_obj), dtype=np.float32)
    for bi, i in enumerate(idx):
        p = prepped[i]
        clips_in[bi, :p["k"]] = p["clips_in"]
        mask[bi, :p["k"]] = True
        obj_rep[bi] = p["obj_emb"]
    cat = lambda key: np.concatenate([prepped[i][key] for i in idx])
    if len(triples) > 0:
        pick = rng.choice(len(triples), size=min(triples_per_step, len(triples)), replace=False)
        tri = triples[pick]
    else:
        tri = np.zeros((0, 3, cfg.in_dim), dtype=np.float32)
    points_valid = np.concatenate([
        np.repeat(prepped[i]["points"][None], prepped[i]["k"], axis=0) for i in idx])
    return {"clips_in": clips_in, "mask": mask, "obj_rep": obj_rep,
            "fk_gt": cat("fk_gt"), "vel_gt": cat("vel_gt"), "ovel_gt": cat("ovel_gt"),
            "d_gt": cat("d_gt"), "points_valid": points_valid, "triples": tri}


def train_tokenizer(corpus: list[HoiSequence], objects: dict[str, ObjectSpec],
                    obj_embs: dict[str, np.ndarray], cfg: TokenizerConfig,
                    seed: int = 0, epochs: int = 30, batch_size: int = 8,
                    lr: float = 1e-3, holdout: float = 0.1,
                    with_triplet: bool = True, triples_per_step: int = 8,
                    log=None) -> tuple[ClipTokenizer, dict]:
    """Phase-1 training. Returns the frozen tokenizer and a history dict with
    per-epoch loss components, the train/held split, and held-out triples."""
    skeleton = dm.default_skeleton()
    rng = np.random.default_rng(seed)
    tok = ClipTokenizer(cfg, seed=seed)
    if not with_triplet:
        cfg.lambda_tri = 0.0

    order = rng.permutation(len(corpus))
    n_held = max(int(holdout * len(corpus)), 1) if holdout > 0 else 0
    held_idx = order[:n_held]
    train_idx = order[n_held:]
    train_seqs = [corpus[i] for i in train_idx]

    tok.fit_normalizer(train_seqs)
    prepped = prepare_sequences(train_seqs, objects, obj_embs, tok)
    triples, skipped = build_triples(train_seqs, objects, obj_embs, tok, skeleton, seed)
    held_triples, _ = build_triples([corpus[i] for i in held_idx], objects, obj_embs,
                                    tok, skeleton, seed + 1)

    opt = nn.Adam(tok.parameters(), lr=lr)
    history = []
    n = len(prepped)
    for ep in range(epochs):
        perm = rng.permutation(n)
        sums, steps = {}, 0
        for s in range(0, n, batch_size):
            idx = perm[s:s + batch_size]
            batch = assemble_batch(prepped, idx, tok, triples, rng, triples_per_step)
            loss, comps = cvae_loss(tok, batch, skeleton, rng, with_triplet)
            ad.backward(loss)
            opt.step()
            for k, v in comps.items():
                sums[k] = sums.get(k, 0.0) + v
            steps += 1
        epoch_stats = {k: v / steps for k, v in sums.items()}
        history.append(epoch_stats)
        if log:
            log(f"tokenizer epoch {ep}: " +
                " ".join(f"{k}={v:.4f}" for k, v in epoch_stats.items()))
    tok.freeze()
    info = {"history": history, "train_idx": train_idx, "held_idx": held_idx,
            "held_triples": held_triples, "train_triples": triples,
            "skipped_triples": skipped}
    return tok, info


def separation_ratio(tok: ClipTokenizer, triples: np.ndarray) -> float:
    """mean d(anchor, negative) / mean d(anchor, positive) in latent mu space."""
    if len(triples) == 0:
        return float("nan")
    m = triples.shape[0]
    with ad.no_grad():
        mu, _ = tok.encode_tensor(Tensor(triples.reshape(m * 3, tok.cfg.in_dim)))
    mu = mu.data.reshape(m, 3, tok.cfg.d_latent)
    d_pos = np.linalg.norm(mu[:, 0] - mu[:, 1], axis=-1).mean()
    d_neg = np.linalg.norm(mu[:, 0] - mu[:, 2], axis=-1).mean()
    return float(d_neg / max(d_pos, 1e-9))


def reconstruction_error(tok: ClipTokenizer, corpus: list[HoiSequence],
                         obj_embs: dict[str, np.ndarray],
                         seed: int = 0) -> float:
    """Held-out round-trip MSE per channel in normalized units (z sampled)."""
    rng = np.random.default_rng(seed)
    errs = []
    for seq in corpus:
        clips, k = segment(seq.frames, tok.cfg.token_frames)
        content = clips[:k]
        emb = obj_embs[seq.object_label]
        mu, logvar = tok.encode(content, emb)
        z = mu + np.exp(0.5 * logvar) * rng.standard_normal(mu.shape).astype(np.float32)
        rec = tok.decode(z, emb)
        err = tok.normalize(rec) - tok.normalize(content)
        errs.append(float((err ** 2).mean()))
    return float(np.mean(errs))
