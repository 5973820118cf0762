import json

import numpy as np
import pytest

from hoigen import domain as dm


@pytest.fixture(scope="module")
def skeleton():
    return dm.default_skeleton()


def fk_matrix_chain(flat, sk):
    """Independent 4x4 homogeneous-matrix-chain oracle (M_parent @ R @ T)."""
    R = dm.axis_angle_to_matrix(flat[3:3 + 3 * sk.n_joints].reshape(-1, 3))
    M = [None] * sk.n_joints
    pos = np.zeros((sk.n_joints, 3))
    for j in range(sk.n_joints):
        rot4 = np.eye(4)
        rot4[:3, :3] = R[j]
        off4 = np.eye(4)
        off4[:3, 3] = sk.rest_offset[j]
        p = sk.parent_index[j]
        if p < 0:
            base = np.eye(4)
            base[:3, 3] = flat[:3]
            M[j] = base @ rot4 @ off4
        else:
            M[j] = M[p] @ rot4 @ off4
        pos[j] = M[j][:3, 3]
    return pos


def random_frames(rng, n, rot_scale=0.6):
    frames = np.zeros((n, dm.FRAME_DIM))
    frames[:, :3] = rng.normal(0, 0.5, (n, 3)) + [0, 0.9, 0]
    frames[:, 3:dm.HUMAN_DIM] = rng.normal(0, rot_scale, (n, 66))
    frames[:, dm.HUMAN_DIM:dm.HUMAN_DIM + 3] = rng.normal(0, 0.6, (n, 3)) + [0, 1, 1]
    frames[:, dm.HUMAN_DIM + 3:] = rng.normal(0, 0.5, (n, 3))
    return frames


def test_skeleton_dimensional_contract(skeleton):
    assert skeleton.n_joints == 22
    assert 3 + 3 * skeleton.n_joints == dm.HUMAN_DIM == 69
    assert dm.FRAME_DIM == 75


def test_skeleton_rejects_bad_parents():
    with pytest.raises(ValueError):
        dm.Skeleton([0, 0], np.zeros((2, 3)), [0])      # no root
    with pytest.raises(ValueError):
        dm.Skeleton([-1, 2], np.zeros((2, 3)), [0])     # parent after child


def test_fk_rest_chain():
    sk = dm.Skeleton([-1, 0], np.array([[0, 0, 1.0], [0, 0, 1.0]]), [1])
    pos = dm.fk_positions(np.zeros(3), np.zeros((2, 3)), sk)
    np.testing.assert_allclose(pos, [[0, 0, 1], [0, 0, 2]], atol=1e-12)


def test_fk_half_turn():
    sk = dm.Skeleton([-1], np.array([[1.0, 0, 0]]), [0])
    pos = dm.fk_positions(np.zeros(3), np.array([[0, 0, np.pi]]), sk)
    np.testing.assert_allclose(pos[0], [-1, 0, 0], atol=1e-12)


def test_fk_matches_matrix_chain_oracle(skeleton):
    rng = np.random.default_rng(2)
    for _ in range(5):
        flat = random_frames(rng, 1)[0]
        impl = dm.forward_kinematics(flat, skeleton)
        oracle = fk_matrix_chain(flat, skeleton)
        assert np.abs(impl - oracle).max() < 1e-5


def test_fk_rejects_wrong_joint_count():
    sk = dm.Skeleton([-1], np.zeros((1, 3)), [0])
    with pytest.raises(ValueError):
        dm.forward_kinematics(np.zeros(dm.FRAME_DIM), sk)


def test_fk_continuity(skeleton):
    rng = np.random.default_rng(3)
    flat = random_frames(rng, 1)[0]
    base = dm.forward_kinematics(flat, skeleton)
    chain_len = sum(np.linalg.norm(o) for o in skeleton.rest_offset)
    eps = 1e-4
    for idx in rng.integers(3, dm.HUMAN_DIM, size=8):
        pert = flat.copy()
        pert[idx] += eps
        moved = dm.forward_kinematics(pert, skeleton)
        assert np.abs(moved - base).max() < 10.0 * chain_len * eps


def test_contact_distances_coincident_point(skeleton):
    rng = np.random.default_rng(4)
    flat = random_frames(rng, 1)[0]
    flat[dm.HUMAN_DIM:dm.HUMAN_DIM + 3] = 0
    flat[dm.HUMAN_DIM + 3:] = 0
    wrist = skeleton.contact_joint_ids[1]
    wpos = dm.forward_kinematics(flat, skeleton)[wrist]
    pts = rng.normal(0, 0.3, (dm.N_OBJECT_POINTS, 3))
    pts[17] = wpos                           # plant one point on the joint
    obj = dm.ObjectSpec("probe", pts)
    # ObjectSpec recenters; shift the object pose so the point lands back
    flat[dm.HUMAN_DIM:dm.HUMAN_DIM + 3] = pts.mean(axis=0)
    rep = dm.contact_distances(dm.HoiFrame.from_flat(flat), skeleton, obj)
    j = skeleton.contact_joint_ids.index(wrist)
    assert rep.distances[j] < 1e-9


def test_contact_far_lower_bound(skeleton):
    rng = np.random.default_rng(5)
    flat = random_frames(rng, 1)[0]
    pts = rng.normal(0, 0.3, (dm.N_OBJECT_POINTS, 3))
    obj = dm.ObjectSpec("far", pts)
    radius = np.linalg.norm(obj.points, axis=1).max()
    flat[dm.HUMAN_DIM:dm.HUMAN_DIM + 3] = [0, 0, 10.0]
    rep = dm.contact_distances(dm.HoiFrame.from_flat(flat), skeleton, obj)
    # the actor stays within ~2 m of the origin
    assert rep.distances.min() >= 10.0 - radius - 2.0


def test_contact_matches_bruteforce(skeleton):
    rng = np.random.default_rng(6)
    flat = random_frames(rng, 1)[0]
    pts = rng.normal(0, 0.25, (dm.N_OBJECT_POINTS, 3))
    obj = dm.ObjectSpec("b", pts)
    rep = dm.contact_distances(dm.HoiFrame.from_flat(flat), skeleton, obj)
    jpos = dm.forward_kinematics(flat, skeleton)
    R = dm.axis_angle_to_matrix(flat[dm.HUMAN_DIM + 3:])
    world = obj.points @ R.T + flat[dm.HUMAN_DIM:dm.HUMAN_DIM + 3]
    brute = np.array([min(np.linalg.norm(jpos[j] - p) for p in world)
                      for j in skeleton.contact_joint_ids])
    np.testing.assert_allclose(rep.distances, brute, atol=1e-9)
    order = np.argsort(brute)
    assert rep.min_joint == skeleton.contact_joint_ids[order[0]]
    assert rep.second_joint == skeleton.contact_joint_ids[order[1]]


def _random_sequence(rng, T=70):
    frames = random_frames(rng, T, rot_scale=0.3)
    frames[:, 3:6] = rng.normal(0, 0.4, 3)   # shared root rotation, non-degenerate
    return dm.HoiSequence(frames, text="t", object_label="box")


def test_canonicalize_idempotent():
    rng = np.random.default_rng(7)
    seq = _random_sequence(rng)
    c1 = dm.canonicalize(seq)
    c2 = dm.canonicalize(c1)
    assert np.abs(c1.frames - c2.frames).max() < 1e-6


def test_canonicalize_yawed_sequence(skeleton):
    rng = np.random.default_rng(8)
    seq = _random_sequence(rng)
    yawed = dm.HoiSequence(dm.apply_rigid(seq.frames, dm.yaw_rotation(np.pi / 2),
                                          np.array([1.0, 0, -2.0])),
                           text="t", object_label="box")
    canon = dm.canonicalize(yawed)
    yaw = dm._facing_yaw(canon.frames[0])
    assert abs(yaw) < 1e-8
    assert np.abs(canon.frames[0][[0, 2]]).max() < 1e-8
    # pairwise joint-to-object distances preserved
    pts = rng.normal(0, 0.2, (dm.N_OBJECT_POINTS, 3))
    obj = dm.ObjectSpec("box", pts)
    d0 = dm.contact_distance_matrix(yawed.frames[:5], skeleton, obj)
    d1 = dm.contact_distance_matrix(canon.frames[:5], skeleton, obj)
    assert np.abs(d0 - d1).max() < 1e-6


def test_canonicalize_removes_translation():
    rng = np.random.default_rng(9)
    seq = _random_sequence(rng)
    seq.frames[:, 0] += 4.2
    seq.frames[:, 2] -= 1.7
    canon = dm.canonicalize(seq)
    assert abs(canon.frames[0, 0]) < 1e-9
    assert abs(canon.frames[0, 2]) < 1e-9
    assert canon.frames[0, 1] == pytest.approx(seq.frames[0, 1])


def test_canonicalize_degenerate_facing_flagged():
    rng = np.random.default_rng(10)
    seq = _random_sequence(rng)
    # root rotation sending +z to vertical: rotate -90 deg about x
    seq.frames[:, 3:6] = [-np.pi / 2, 0, 0]
    canon = dm.canonicalize(seq)
    assert canon.canon_fallback


def test_sequence_validate_bounds():
    frames = np.zeros((30, dm.FRAME_DIM))
    seq = dm.HoiSequence(frames, text="x", object_label="box")
    with pytest.raises(ValueError):
        seq.validate()


def test_jsonl_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    seqs = [dm.canonicalize(_random_sequence(rng, T=64)) for _ in range(3)]
    path = tmp_path / "c.jsonl"
    dm.save_sequences(path, seqs)
    back = dm.load_sequences(path)
    assert len(back) == 3
    for a, b in zip(seqs, back):
        assert a.text == b.text and a.object_label == b.object_label and a.fps == b.fps
        assert np.abs(a.frames - b.frames).max() < 1e-6
        b.validate()
    # file format contract: json lines with the documented keys
    rec = json.loads(path.read_text().splitlines()[0])
    assert set(rec) == {"text", "object", "fps", "frames"}
    assert len(rec["frames"][0]) == 75


def test_object_library_roundtrip(tmp_path):
    rng = np.random.default_rng(12)
    objs = [dm.ObjectSpec("a", rng.normal(size=(256, 3)), True),
            dm.ObjectSpec("b", rng.normal(size=(256, 3)), False)]
    path = tmp_path / "objs.json"
    dm.save_object_library(path, objs)
    lib = dm.load_object_library(path)
    assert lib["a"].vertically_symmetric and not lib["b"].vertically_symmetric
    assert np.abs(lib["a"].points - objs[0].points).max() < 1e-6


def test_objectspec_point_count():
    with pytest.raises(ValueError):
        dm.ObjectSpec("bad", np.zeros((100, 3)))
