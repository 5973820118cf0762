"""HOI data model: frames, skeleton, forward kinematics, contact, canonicalization.

Conventions: y is up, a canonical actor faces +z. A frame is 75 numbers:
root translation (3) + 22 joint rotations in axis-angle (66) + object
translation (3) + object rotation axis-angle (3). Geometry here runs in
float64; the learned stack is float32.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

N_JOINTS = 22
HUMAN_DIM = 3 + 3 * N_JOINTS  # 69
FRAME_DIM = HUMAN_DIM + 6     # 75
N_OBJECT_POINTS = 256
FPS = 30
MIN_FRAMES = 60
MAX_FRAMES = 240

JOINT_NAMES = [
    "pelvis", "spine1", "spine2", "spine3", "neck", "head",
    "l_clavicle", "l_shoulder", "l_elbow", "l_wrist",
    "r_clavicle", "r_shoulder", "r_elbow", "r_wrist",
    "l_hip", "l_knee", "l_ankle", "l_foot",
    "r_hip", "r_knee", "r_ankle", "r_foot",
]

_PARENTS = [-1, 0, 1, 2, 3, 4,
            3, 6, 7, 8,
            3, 10, 11, 12,
            0, 14, 15, 16,
            0, 18, 19, 20]

_OFFSETS = np.array([
    [0.00, 0.00, 0.00],   # pelvis (root translation carries world position)
    [0.00, 0.12, 0.00],   # spine1
    [0.00, 0.12, 0.00],   # spine2
    [0.00, 0.12, 0.00],   # spine3
    [0.00, 0.10, 0.00],   # neck
    [0.00, 0.12, 0.00],   # head
    [0.08, 0.05, 0.00],   # l_clavicle
    [0.12, 0.00, 0.00],   # l_shoulder
    [0.26, 0.00, 0.00],   # l_elbow
    [0.25, 0.00, 0.00],   # l_wrist
    [-0.08, 0.05, 0.00],  # r_clavicle
    [-0.12, 0.00, 0.00],  # r_shoulder
    [-0.26, 0.00, 0.00],  # r_elbow
    [-0.25, 0.00, 0.00],  # r_wrist
    [0.10, -0.05, 0.00],  # l_hip
    [0.00, -0.42, 0.00],  # l_knee
    [0.00, -0.42, 0.00],  # l_ankle
    [0.00, -0.06, 0.12],  # l_foot
    [-0.10, -0.05, 0.00], # r_hip
    [0.00, -0.42, 0.00],  # r_knee
    [0.00, -0.42, 0.00],  # r_ankle
    [-0.00, -0.06, 0.12], # r_foot
], dtype=np.float64)

_CONTACT_JOINTS = [JOINT_NAMES.index(n) for n in ("l_elbow", "l_wrist", "r_elbow", "r_wrist")]


@dataclass
class Skeleton:
    parent_index: list[int]
    rest_offset: np.ndarray               # (J, 3) meters
    contact_joint_ids: list[int]

    def __post_init__(self):
        self.rest_offset = np.asarray(self.rest_offset, dtype=np.float64)
        n = len(self.parent_index)
        if self.rest_offset.shape != (n, 3):
            raise ValueError(f"rest_offset shape {self.rest_offset.shape} != ({n}, 3)")
        if self.parent_index[0] != -1:
            raise ValueError("joint 0 must be the root (parent -1)")
        for j, p in enumerate(self.parent_index[1:], start=1):
            if not 0 <= p < j:
                raise ValueError(f"joint {j} has parent {p}; parents must precede children")

    @property
    def n_joints(self) -> int:
        return len(self.parent_index)


def default_skeleton() -> Skeleton:
    return Skeleton(list(_PARENTS), _OFFSETS.copy(), list(_CONTACT_JOINTS))


@dataclass
class ObjectSpec:
    label: str
    points: np.ndarray                    # (256, 3) object-local meters
    vertically_symmetric: bool = False

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.shape != (N_OBJECT_POINTS, 3):
            raise ValueError(f"object '{self.label}' needs {N_OBJECT_POINTS}x3 points, "
                             f"got {self.points.shape}")
        self.points = self.points - self.points.mean(axis=0)


@dataclass
class HoiFrame:
    root_translation: np.ndarray          # (3,)
    joint_rotations: np.ndarray           # (22, 3) axis-angle
    object_translation: np.ndarray        # (3,)
    object_rotation: np.ndarray           # (3,) axis-angle

    def flatten(self) -> np.ndarray:
        return np.concatenate([
            np.asarray(self.root_translation, dtype=np.float64).reshape(3),
            np.asarray(self.joint_rotations, dtype=np.float64).reshape(-1),
            np.asarray(self.object_translation, dtype=np.float64).reshape(3),
            np.asarray(self.object_rotation, dtype=np.float64).reshape(3),
        ])

    @staticmethod
    def from_flat(v) -> "HoiFrame":
        v = np.asarray(v, dtype=np.float64).reshape(FRAME_DIM)
        return HoiFrame(v[:3].copy(), v[3:HUMAN_DIM].reshape(N_JOINTS, 3).copy(),
                        v[HUMAN_DIM:HUMAN_DIM + 3].copy(), v[HUMAN_DIM + 3:].copy())


@dataclass
class HoiSequence:
    frames: np.ndarray                    # (T, 75)
    text: str = ""
    object_label: str = ""
    fps: int = FPS
    canon_fallback: bool = field(default=False, compare=False)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != FRAME_DIM:
            raise ValueError(f"frames must be (T, {FRAME_DIM}), got {self.frames.shape}")

    def __len__(self):
        return self.frames.shape[0]

    def frame(self, t: int) -> HoiFrame:
        return HoiFrame.from_flat(self.frames[t])

    def validate(self):
        """Check the full sequence contract; raises on violation."""
        T = len(self)
        if not MIN_FRAMES <= T <= MAX_FRAMES:
            raise ValueError(f"sequence length {T} outside [{MIN_FRAMES}, {MAX_FRAMES}]")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("non-finite values in frames")
        rot = np.concatenate([self.frames[:, 3:HUMAN_DIM].reshape(T, N_JOINTS, 3),
                              self.frames[:, HUMAN_DIM + 3:].reshape(T, 1, 3)], axis=1)
        mags = np.linalg.norm(rot, axis=-1)
        if mags.max() > 2 * np.pi + 1e-9:
            raise ValueError(f"axis-angle magnitude {mags.max():.4f} exceeds 2*pi")
        f = _facing_yaw(self.frames[0])
        if f is not None and abs(f) > 1e-5:
            raise ValueError(f"first frame yaw {f:.2e} is not +z facing")
        horiz = self.frames[0, [0, 2]]
        if np.abs(horiz).max() > 1e-5:
            raise ValueError(f"first frame root horizontal position {horiz} != origin")


# -- rotations (axis-angle via quaternions) ------------------------------------

def _axis_angle_to_quat(aa: np.ndarray) -> np.ndarray:
    """(..., 3) axis-angle -> (..., 4) unit quaternion (w, x, y, z)."""
    aa = np.asarray(aa, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1, keepdims=True)
    half = 0.5 * theta
    small = theta < 1e-12
    k = np.where(small, 0.5, np.sin(half) / np.where(small, 1.0, theta))
    q = np.concatenate([np.cos(half), aa * k], axis=-1)
    return q


def _quat_mul(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = np.moveaxis(q1, -1, 0)
    w2, x2, y2, z2 = np.moveaxis(q2, -1, 0)
    return np.stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ], axis=-1)


def _quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors v (..., 3) by unit quaternions q (..., 4)."""
    w = q[..., :1]
    u = q[..., 1:]
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))


def _quat_to_axis_angle(q: np.ndarray) -> np.ndarray:
    q = np.where(q[..., :1] < 0, -q, q)  # canonical hemisphere -> angle in [0, pi]
    w = np.clip(q[..., 0], -1.0, 1.0)
    theta = 2.0 * np.arccos(w)
    s = np.sqrt(np.maximum(1.0 - w * w, 0.0))
    small = s < 1e-12
    axis = np.where(small[..., None], 0.0, q[..., 1:] / np.where(small[..., None], 1.0, s[..., None]))
    return axis * theta[..., None]


def axis_angle_to_matrix(aa: np.ndarray) -> np.ndarray:
    """(..., 3) axis-angle -> (..., 3, 3) rotation matrix (Rodrigues)."""
    aa = np.asarray(aa, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1)
    small = theta < 1e-12
    k = np.where(small[..., None], 0.0, aa / np.where(small[..., None], 1.0, theta[..., None]))
    K = np.zeros(aa.shape[:-1] + (3, 3), dtype=np.float64)
    K[..., 0, 1] = -k[..., 2]
    K[..., 0, 2] = k[..., 1]
    K[..., 1, 0] = k[..., 2]
    K[..., 1, 2] = -k[..., 0]
    K[..., 2, 0] = -k[..., 1]
    K[..., 2, 1] = k[..., 0]
    eye = np.broadcast_to(np.eye(3), K.shape)
    s = np.sin(theta)[..., None, None]
    c = np.cos(theta)[..., None, None]
    return eye + s * K + (1.0 - c) * (K @ K)


def yaw_rotation(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]], dtype=np.float64)


def rotate_axis_angle(R: np.ndarray, aa: np.ndarray) -> np.ndarray:
    """Axis-angle of R composed with rot(aa); R is a fixed 3x3 world rotation."""
    q_r = _axis_angle_to_quat(_matrix_to_axis_angle(R))
    q = _axis_angle_to_quat(aa)
    return _quat_to_axis_angle(_quat_mul(np.broadcast_to(q_r, q.shape[:-1] + (4,)), q))


def _matrix_to_axis_angle(R: np.ndarray) -> np.ndarray:
    tr = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(tr)
    if theta < 1e-12:
        return np.zeros(3)
    if np.pi - theta < 1e-6:
        # near pi: extract axis from R + I
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        # fix signs from off-diagonals
        if axis[0] > 0:
            axis[1] = np.copysign(axis[1], A[0, 1])
            axis[2] = np.copysign(axis[2], A[0, 2])
        elif axis[1] > 0:
            axis[2] = np.copysign(axis[2], A[1, 2])
        return axis / np.linalg.norm(axis) * theta
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return v / (2.0 * np.sin(theta)) * theta


# -- forward kinematics ---------------------------------------------------------

def fk_positions(root_t: np.ndarray, joint_rotations: np.ndarray,
                 skeleton: Skeleton) -> np.ndarray:
    """Joint world positions from root translation (..., 3) and local
    axis-angle rotations (..., J, 3) -> (..., J, 3).

    Each joint's rest offset lives in its own rotated frame:
    p_j = p_parent + R_j @ offset_j with R_j = R_parent @ rot(local_j)
    and p_root = root_translation + R_root @ offset_root.
    """
    root_t = np.asarray(root_t, dtype=np.float64)
    rots = np.asarray(joint_rotations, dtype=np.float64)
    J = skeleton.n_joints
    lead = rots.shape[:-2]
    flat_root = root_t.reshape(-1, 3)
    q_local = _axis_angle_to_quat(rots.reshape(-1, J, 3))

    pos = np.empty((flat_root.shape[0], J, 3), dtype=np.float64)
    q_world = np.empty((flat_root.shape[0], J, 4), dtype=np.float64)
    for j in range(J):
        p = skeleton.parent_index[j]
        if p < 0:
            q_world[:, j] = q_local[:, j]
            base = flat_root
        else:
            q_world[:, j] = _quat_mul(q_world[:, p], q_local[:, j])
            base = pos[:, p]
        pos[:, j] = base + _quat_rotate(q_world[:, j], skeleton.rest_offset[j])
    return pos.reshape(lead + (J, 3))


def forward_kinematics(frames: np.ndarray, skeleton: Skeleton) -> np.ndarray:
    """Joint world positions for 75-dim frames (..., 75) -> (..., 22, 3)."""
    frames = np.asarray(frames, dtype=np.float64)
    if skeleton.n_joints != N_JOINTS:
        raise ValueError(f"frame layout expects {N_JOINTS} joints, skeleton has "
                         f"{skeleton.n_joints}; use fk_positions for other chains")
    root_t = frames[..., :3]
    rots = frames[..., 3:HUMAN_DIM].reshape(frames.shape[:-1] + (N_JOINTS, 3))
    return fk_positions(root_t, rots, skeleton)


def object_points_world(frames: np.ndarray, obj: ObjectSpec) -> np.ndarray:
    """Posed object cloud for frames (..., 75) -> (..., 256, 3)."""
    frames = np.asarray(frames, dtype=np.float64)
    flat = frames.reshape(-1, FRAME_DIM)
    R = axis_angle_to_matrix(flat[:, HUMAN_DIM + 3:])
    pts = np.einsum("fij,pj->fpi", R, obj.points) + flat[:, None, HUMAN_DIM:HUMAN_DIM + 3]
    return pts.reshape(frames.shape[:-1] + (N_OBJECT_POINTS, 3))


@dataclass
class ContactReport:
    distances: np.ndarray    # per contact joint, min distance to cloud
    min_joint: int           # joint id achieving the global minimum
    second_joint: int        # joint id achieving the second minimum


def contact_distances(frame, skeleton: Skeleton, obj: ObjectSpec) -> ContactReport:
    """Min distance from each contact joint to the posed object cloud."""
    flat = frame.flatten() if isinstance(frame, HoiFrame) else np.asarray(frame, dtype=np.float64)
    pos = forward_kinematics(flat, skeleton)[skeleton.contact_joint_ids]
    pts = object_points_world(flat, obj)
    d = np.linalg.norm(pos[:, None, :] - pts[None, :, :], axis=-1).min(axis=1)
    order = np.argsort(d, kind="stable")
    ids = skeleton.contact_joint_ids
    return ContactReport(d, ids[order[0]], ids[order[1]] if len(ids) > 1 else ids[order[0]])


def contact_distance_matrix(frames: np.ndarray, skeleton: Skeleton, obj: ObjectSpec) -> np.ndarray:
    """Per-frame per-contact-joint min distances, (T, n_contact)."""
    frames = np.asarray(frames, dtype=np.float64).reshape(-1, FRAME_DIM)
    pos = forward_kinematics(frames, skeleton)[:, skeleton.contact_joint_ids]
    pts = object_points_world(frames, obj)
    diff = pos[:, :, None, :] - pts[:, None, :, :]
    return np.sqrt((diff ** 2).sum(axis=-1)).min(axis=2)


# -- canonicalization -------------------------------------------------------------

def _facing_yaw(frame_flat: np.ndarray):
    """Yaw of the root's local +z in the horizontal plane; None if degenerate."""
    R = axis_angle_to_matrix(np.asarray(frame_flat[3:6], dtype=np.float64))
    f = R @ np.array([0.0, 0.0, 1.0])
    horiz = np.array([f[0], f[2]])
    if np.linalg.norm(horiz) < 1e-8:
        return None
    return float(np.arctan2(horiz[0], horiz[1]))


def apply_rigid(frames: np.ndarray, R: np.ndarray, translation: np.ndarray) -> np.ndarray:
    """Apply x -> R x + t to every frame's world-anchored channels."""
    frames = np.asarray(frames, dtype=np.float64).copy()
    T = frames.shape[0]
    t = np.asarray(translation, dtype=np.float64)
    frames[:, 0:3] = frames[:, 0:3] @ R.T + t
    frames[:, HUMAN_DIM:HUMAN_DIM + 3] = frames[:, HUMAN_DIM:HUMAN_DIM + 3] @ R.T + t
    frames[:, 3:6] = rotate_axis_angle(R, frames[:, 3:6])
    frames[:, HUMAN_DIM + 3:] = rotate_axis_angle(R, frames[:, HUMAN_DIM + 3:])
    return frames


def canonicalize(seq: HoiSequence) -> HoiSequence:
    """Rotate about vertical and translate horizontally so frame 0's root sits
    at the horizontal origin facing +z. One rigid transform for all frames."""
    if len(seq) == 0:
        raise ValueError("cannot canonicalize an empty sequence")
    yaw = _facing_yaw(seq.frames[0])
    fallback = yaw is None
    R = yaw_rotation(-(yaw or 0.0))
    root0 = seq.frames[0, :3]
    t = -R @ (root0 * np.array([1.0, 0.0, 1.0]))
    frames = apply_rigid(seq.frames, R, t)
    frames[0, 0] = 0.0
    frames[0, 2] = 0.0
    return HoiSequence(frames, text=seq.text, object_label=seq.object_label,
                       fps=seq.fps, canon_fallback=fallback)


# -- file formats -------------------------------------------------------------------

def save_sequences(path, seqs: list[HoiSequence]):
    with open(path, "w") as f:
        for s in seqs:
            rec = {"text": s.text, "object": s.object_label, "fps": s.fps,
                   "frames": np.round(s.frames, 7).tolist()}
            f.write(json.dumps(rec) + "\n")


def load_sequences(path) -> list[HoiSequence]:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.append(HoiSequence(np.array(rec["frames"], dtype=np.float64),
                                   text=rec["text"], object_label=rec["object"],
                                   fps=rec.get("fps", FPS)))
    return out


def save_object_library(path, objects: list[ObjectSpec]):
    recs = [{"label": o.label, "symmetric": bool(o.vertically_symmetric),
             "points": [[round(float(v), 6) for v in p] for p in o.points]}
            for o in objects]
    with open(path, "w") as f:
        json.dump(recs, f)


def load_object_library(path) -> dict[str, ObjectSpec]:
    with open(path) as f:
        recs = json.load(f)
    return {r["label"]: ObjectSpec(r["label"], np.array(r["points"], dtype=np.float64),
                                   r["symmetric"]) for r in recs}
