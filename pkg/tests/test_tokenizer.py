import numpy as np
import pytest

from hoigen import autodiff as ad
from hoigen import domain as dm
from hoigen import tokenizer as tkz
from hoigen.autodiff import Tensor


@pytest.fixture(scope="module")
def skeleton():
    return dm.default_skeleton()


# -- segmentation -----------------------------------------------------------------

def test_segment_240_frames():
    clips, k = tkz.segment(np.ones((240, 75)), 16)
    assert k == 15
    assert clips.shape == (16, 16, 75)          # 15 content + 1 null
    assert np.abs(clips[-1]).max() == 0.0


def test_segment_60_frames_pads_tail():
    frames = np.arange(60).repeat(75).reshape(60, 75).astype(float)
    clips, k = tkz.segment(frames, 16)
    assert k == 4
    # 64 - 60 = 4 repeated final frames
    np.testing.assert_array_equal(clips[3, 12:], np.repeat(frames[-1:], 4, axis=0))


def test_segment_single_clip():
    clips, k = tkz.segment(np.ones((16, 75)), 16)
    assert k == 1 and clips.shape == (2, 16, 75)


def test_segment_rejects_empty():
    with pytest.raises(ValueError):
        tkz.segment(np.zeros((0, 75)), 16)


# -- contrastive construction -------------------------------------------------------

def _contact_clip(small_corpus, objects, skeleton):
    for s in small_corpus:
        obj = objects[s.object_label]
        clips, k = tkz.segment(s.frames, 16)
        for ci in range(k):
            prof = tkz.contact_profile(clips[ci], skeleton, obj)
            if prof[0].min() <= 0.05:
                return clips[ci], obj
    raise RuntimeError("no contact clip found")


def test_zero_offset_labels_positive(small_corpus, objects, skeleton):
    clip, obj = _contact_clip(small_corpus, objects, skeleton)
    prof = tkz.contact_profile(clip, skeleton, obj)
    assert tkz.label_candidate(prof, clip.copy(), skeleton, obj, tau=0.03) == "positive"


def test_radial_offset_labels_negative(small_corpus, objects, skeleton):
    clip, obj = _contact_clip(small_corpus, objects, skeleton)
    prof = tkz.contact_profile(clip, skeleton, obj)
    # push the object away from both tracked joints: radial in the horizontal
    # plane w.r.t. the actor
    center = clip[:, dm.HUMAN_DIM:dm.HUMAN_DIM + 3].mean(axis=0)
    root = clip[:, :3].mean(axis=0)
    away = center - root
    away[1] = 0.0
    away = 0.3 * away / np.linalg.norm(away)
    cand = tkz.offset_clip(clip, away)
    assert tkz.label_candidate(prof, cand, skeleton, obj, tau=0.03) == "negative"
    d0 = prof[0]
    d1 = dm.contact_distance_matrix(cand, skeleton, obj).mean(axis=0)
    assert abs(d1[prof[1]] - d0[prof[1]]) >= 0.03


def test_spec_offset_example_is_negative(skeleton):
    # arm hanging straight down (wrist and elbow stacked vertically), compact
    # cloud 0.01 m below the wrist: a vertical 0.08 m offset moves the min
    # contact distance from 0.01 to 0.09, so delta = 0.08 >= tau = 0.03
    rng = np.random.default_rng(0)
    dirs = rng.normal(size=(dm.N_OBJECT_POINTS, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    obj = dm.ObjectSpec("dot", dirs * 1e-4)

    clip = np.zeros((16, dm.FRAME_DIM))
    clip[:, 1] = 1.0                            # root height
    rots = np.zeros((dm.N_JOINTS, 3))
    rots[dm.JOINT_NAMES.index("l_shoulder")] = [0, 0, -np.pi / 2]
    clip[:, 3:dm.HUMAN_DIM] = rots.reshape(-1)
    wrist = dm.forward_kinematics(clip[0], skeleton)[dm.JOINT_NAMES.index("l_wrist")]
    clip[:, dm.HUMAN_DIM:dm.HUMAN_DIM + 3] = wrist - [0, 0.01 + 1e-4, 0]

    prof = tkz.contact_profile(clip, skeleton, obj)
    assert prof[0].min() == pytest.approx(0.01, abs=3e-4)
    cand = tkz.offset_clip(clip, np.array([0.0, -0.08, 0.0]))
    d1 = dm.contact_distance_matrix(cand, skeleton, obj).mean(axis=0)
    assert d1.min() == pytest.approx(0.09, abs=3e-4)
    assert abs(d1[prof[1]] - prof[0][prof[1]]) >= 0.03
    assert tkz.label_candidate(prof, cand, skeleton, obj, tau=0.03) == "negative"


def test_yaw_clip_preserves_contact(small_corpus, objects, skeleton):
    # vertical rotation of the whole clip about the object axis: positive by
    # construction, contact distances unchanged to 1e-6
    for s in small_corpus:
        if objects[s.object_label].vertically_symmetric:
            obj = objects[s.object_label]
            clips, k = tkz.segment(s.frames, 16)
            clip = clips[k // 2]
            break
    rotated = tkz.yaw_clip(clip, np.deg2rad(137.0))
    d0 = dm.contact_distance_matrix(clip, skeleton, obj)
    d1 = dm.contact_distance_matrix(rotated, skeleton, obj)
    assert np.abs(d0 - d1).max() < 1e-6
    prof = tkz.contact_profile(clip, skeleton, obj)
    assert tkz.label_candidate(prof, rotated, skeleton, obj, tau=0.03) == "positive"


def test_make_contrastive_requires_contact(objects, skeleton):
    clip = np.zeros((16, 75))
    clip[:, 69:72] = [0, 0, 50.0]       # object 50 m away
    with pytest.raises(ValueError):
        tkz.make_contrastive_samples(clip, objects["box"], skeleton,
                                     rng=np.random.default_rng(0))


def test_make_contrastive_samples_labels(small_corpus, objects, skeleton):
    clip, obj = _contact_clip(small_corpus, objects, skeleton)
    triple = tkz.make_contrastive_samples(clip, obj, skeleton, tau=0.03,
                                          rng=np.random.default_rng(3))
    assert triple is not None
    prof = tkz.contact_profile(triple.anchor, skeleton, obj)
    assert tkz.label_candidate(prof, triple.negative, skeleton, obj, 0.03) == "negative"
    d_a = prof[0]
    d_p = dm.contact_distance_matrix(triple.positive, skeleton, obj).mean(axis=0)
    assert abs(d_p[prof[1]] - d_a[prof[1]]) < 0.01 + 1e-9


# -- loss identities ---------------------------------------------------------------

def test_kl_zero_iff_standard_normal():
    mu = Tensor(np.zeros((5, 8), dtype=np.float32))
    logvar = Tensor(np.zeros((5, 8), dtype=np.float32))
    kl = ad.tsum(ad.exp(logvar) + mu * mu - 1.0 - logvar)
    assert float(kl.data) == 0.0
    rng = np.random.default_rng(0)
    for _ in range(20):
        m = rng.normal(0, 1, (3, 4)).astype(np.float32)
        lv = rng.normal(0, 1, (3, 4)).astype(np.float32)
        val = float(ad.tsum(ad.exp(Tensor(lv)) + Tensor(m * m) - 1.0 - Tensor(lv)).data)
        assert val >= -1e-5
        if abs(val) < 1e-7:
            assert np.abs(m).max() < 1e-3 and np.abs(lv).max() < 1e-3


def test_triplet_piecewise_values():
    rng = np.random.default_rng(1)
    alpha = 1.0
    for _ in range(20):
        a = rng.normal(size=8).astype(np.float32)
        p = rng.normal(size=8).astype(np.float32)
        n = rng.normal(size=8).astype(np.float32)
        d_pos = np.linalg.norm(a - p)
        d_neg = np.linalg.norm(a - n)
        expect = max(d_pos - d_neg + alpha, 0.0)
        got = float(ad.relu(ad.l2norm(Tensor(a - p)) - ad.l2norm(Tensor(a - n)) + alpha).data)
        assert got == pytest.approx(expect, rel=1e-5, abs=1e-6)
    # margin satisfied exactly: d(s, s_p) = 0, d(s, s_n) = alpha + 1
    a = np.zeros(4, dtype=np.float32)
    n = np.zeros(4, dtype=np.float32)
    n[0] = alpha + 1.0
    got = float(ad.relu(ad.l2norm(Tensor(a)) - ad.l2norm(Tensor(a - n)) + alpha).data)
    assert got == pytest.approx(0.0, abs=1e-6)
    # equal distances leave exactly the margin
    p = np.ones(4, dtype=np.float32)
    got = float(ad.relu(ad.l2norm(Tensor(a - p)) - ad.l2norm(Tensor(a - p)) + alpha).data)
    assert got == pytest.approx(alpha, abs=1e-6)


def test_perfect_reconstruction_zeroes_losses(small_corpus, objects, fake_obj_embs,
                                              skeleton, monkeypatch):
    cfg = tkz.TokenizerConfig()
    tok = tkz.ClipTokenizer(cfg, seed=0)
    tok.fit_normalizer(small_corpus[:8])
    prepped = tkz.prepare_sequences(small_corpus[:2], objects, fake_obj_embs, tok, skeleton)
    rng = np.random.default_rng(0)
    batch = tkz.assemble_batch(prepped, np.arange(2), tok,
                               np.zeros((0, 3, cfg.in_dim), np.float32), rng, 0)

    def perfect_decode(z, obj_rep):
        b, kmax = z.shape[0], z.shape[1]
        x = batch["clips_in"][:, :, :cfg.frame_flat]
        return Tensor(np.ascontiguousarray(x))

    monkeypatch.setattr(tok, "decode_tensor", perfect_decode)
    _, comps = tkz.cvae_loss(tok, batch, skeleton, rng, with_triplet=False)
    # the norm epsilon floors the "zero" losses at ~1e-4
    assert comps["rec"] < 1e-3
    assert comps["fk"] < 1e-3
    assert comps["vel"] < 1e-3
    assert comps["ovel"] < 1e-3
    assert comps["con"] < 1e-3


def test_loss_gradients_finite_difference(small_corpus, objects, fake_obj_embs, skeleton):
    cfg = tkz.TokenizerConfig()
    tok = tkz.ClipTokenizer(cfg, seed=0)
    tok.fit_normalizer(small_corpus[:8])
    prepped = tkz.prepare_sequences(small_corpus[:1], objects, fake_obj_embs, tok, skeleton)
    tri, _ = tkz.build_triples(small_corpus[:2], objects, fake_obj_embs, tok,
                               skeleton, seed=5, anchors_per_seq=1)
    base = np.random.default_rng(9)
    batch = tkz.assemble_batch(prepped, np.arange(1), tok, tri, base, 2)

    def loss_fn():
        return tkz.cvae_loss(tok, batch, skeleton, np.random.default_rng(123))[0]

    params = tok.parameters()
    pick = [params["enc.head.b"], params["enc_logvar.b"], params["dec_head.b"],
            params["dec_ssm.ssm.a_log"]]
    ad.gradcheck_dir(loss_fn, pick, np.random.default_rng(4), n_dirs=3, h=2e-2, tol=1e-2)


def test_encode_decode_shapes(tiny_tok, fake_obj_embs, small_corpus):
    tok, _ = tiny_tok
    emb = fake_obj_embs[small_corpus[0].object_label]
    clips, k = tkz.segment(small_corpus[0].frames, 16)
    mu, logvar = tok.encode(clips[:k], emb)
    assert mu.shape == (k, tok.cfg.d_latent) and logvar.shape == mu.shape
    mu2, _ = tok.encode(clips[:k], emb)
    np.testing.assert_array_equal(mu, mu2)
    out = tok.decode(mu[:1], emb)
    assert out.shape == (1, 16, 75)


def test_trained_quality(tiny_tok, fake_obj_embs, small_corpus):
    # desk-scale sanity on the session-trained tokenizer
    tok, info = tiny_tok
    held = [small_corpus[i] for i in info["held_idx"]]
    rec = tkz.reconstruction_error(tok, held, fake_obj_embs)
    assert rec < 0.4
    sep = tkz.separation_ratio(tok, info["held_triples"])
    assert sep > 1.0
    # sigma stays in a sane range on held-out clips
    sigmas = []
    for s in held:
        clips, k = tkz.segment(s.frames, 16)
        _, logvar = tok.encode(clips[:k], fake_obj_embs[s.object_label])
        sigmas.append(np.exp(0.5 * logvar).ravel())
    sigmas = np.concatenate(sigmas)
    assert 0.001 < sigmas.min() and sigmas.max() < 5.0


def test_boundary_smoothness(tiny_tok, fake_obj_embs, small_corpus):
    # decoded clip-boundary velocity should not explode vs in-clip velocity
    tok, info = tiny_tok
    s = small_corpus[int(info["held_idx"][0])]
    clips, k = tkz.segment(s.frames, 16)
    emb = fake_obj_embs[s.object_label]
    mu, _ = tok.encode(clips[:k], emb)
    rec = tok.decode(mu, emb).reshape(k * 16, 75)
    v = np.linalg.norm(np.diff(rec, axis=0), axis=1)
    t_idx = np.arange(1, len(rec))
    vb = v[(t_idx % 16) == 0]
    vi = v[(t_idx % 16) != 0]
    assert vb.mean() <= 4.0 * np.median(vi)
