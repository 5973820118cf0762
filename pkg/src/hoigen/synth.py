"""Procedural HOI corpus: primitive objects, a closed text grammar, and
scripted approach/manipulate/release kinematics.

Sequences are generated directly in the canonical frame (frame 0 at the
horizontal origin facing +z). Hand placement is IK-free: during
manipulation the object is re-posed so its grip point coincides with the
acting wrist, which yields exact contact statistics for contrastive labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import domain as dm
from .domain import (FRAME_DIM, HUMAN_DIM, N_OBJECT_POINTS, HoiSequence, ObjectSpec,
                     Skeleton, default_skeleton)

VERBS = ["lift", "push", "pull", "carry", "rotate", "place"]
OBJECT_LABELS = ["box", "cylinder", "sphere", "stand", "board"]

_DIR_WORDS = {"forward": (0.0, 1.0), "to the left": (1.0, 0.0), "to the right": (-1.0, 0.0),
              "backward": (0.0, -1.0)}

ROOT_HEIGHT = 0.95

_L_WRIST = dm.JOINT_NAMES.index("l_wrist")
_R_WRIST = dm.JOINT_NAMES.index("r_wrist")
_L_SHOULDER = dm.JOINT_NAMES.index("l_shoulder")
_R_SHOULDER = dm.JOINT_NAMES.index("r_shoulder")


@dataclass
class ScenarioTemplate:
    verb: str
    object_label: str
    direction: tuple[float, float] | None
    duration_frames: int

    def __post_init__(self):
        if self.verb not in VERBS:
            raise ValueError(f"unknown verb {self.verb!r}")
        if not 60 <= self.duration_frames <= 240:
            raise ValueError(f"duration {self.duration_frames} outside [60, 240]")


# -- primitive surface sampling --------------------------------------------------

def _sample_box(rng, n, w=0.4, h=0.3, d=0.3):
    dims = np.array([w, h, d])
    areas = np.array([h * d, h * d, w * d, w * d, w * h, w * h])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.uniform(-0.5, 0.5, (n, 2))
    pts = np.zeros((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 0.5, -0.5)
    others = [(1, 2), (0, 2), (0, 1)]
    for i in range(n):
        a = axis[i]
        o1, o2 = others[a]
        pts[i, a] = sign[i] * dims[a]
        pts[i, o1] = uv[i, 0] * dims[o1]
        pts[i, o2] = uv[i, 1] * dims[o2]
    return pts


def _sample_cylinder(rng, n, r=0.15, h=1.0):
    a_side = 2 * np.pi * r * h
    a_cap = np.pi * r * r
    p = np.array([a_side, a_cap, a_cap])
    part = rng.choice(3, size=n, p=p / p.sum())
    theta = rng.uniform(0, 2 * np.pi, n)
    pts = np.zeros((n, 3))
    side = part == 0
    pts[side, 0] = r * np.cos(theta[side])
    pts[side, 2] = r * np.sin(theta[side])
    pts[side, 1] = rng.uniform(-h / 2, h / 2, side.sum())
    for which, y in ((1, h / 2), (2, -h / 2)):
        m = part == which
        rr = r * np.sqrt(rng.uniform(0, 1, m.sum()))
        pts[m, 0] = rr * np.cos(theta[m])
        pts[m, 2] = rr * np.sin(theta[m])
        pts[m, 1] = y
    return pts


def _sample_sphere(rng, n, r=0.2):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return r * v


def _sample_stand(rng, n):
    # clothes stand: pole + base disk + top knob
    part = rng.choice(3, size=n, p=[0.6, 0.25, 0.15])
    pts = np.zeros((n, 3))
    theta = rng.uniform(0, 2 * np.pi, n)
    pole = part == 0
    pts[pole, 0] = 0.03 * np.cos(theta[pole])
    pts[pole, 2] = 0.03 * np.sin(theta[pole])
    pts[pole, 1] = rng.uniform(0.0, 1.7, pole.sum())
    base = part == 1
    rr = 0.25 * np.sqrt(rng.uniform(0, 1, base.sum()))
    pts[base, 0] = rr * np.cos(theta[base])
    pts[base, 2] = rr * np.sin(theta[base])
    pts[base, 1] = 0.0
    knob = part == 2
    v = rng.normal(size=(knob.sum(), 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    pts[knob] = 0.06 * v + np.array([0, 1.7, 0])
    return pts


def _sample_board(rng, n):
    return _sample_box(rng, n, w=0.8, h=0.5, d=0.04)


_SAMPLERS = {"box": _sample_box, "cylinder": _sample_cylinder, "sphere": _sample_sphere,
             "stand": _sample_stand, "board": _sample_board}
_SYMMETRIC = {"box": False, "cylinder": True, "sphere": True, "stand": True, "board": False}


def sample_primitive(label: str, rng: np.random.Generator, n: int = N_OBJECT_POINTS,
                     scale: float = 1.0) -> np.ndarray:
    pts = _SAMPLERS[label](rng, n) * scale
    return pts - pts.mean(axis=0)


def build_object_library(seed: int = 7) -> dict[str, ObjectSpec]:
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return {label: ObjectSpec(label, sample_primitive(label, rng), _SYMMETRIC[label])
            for label in OBJECT_LABELS}


# -- text grammar ------------------------------------------------------------------

def realize_text(tpl: ScenarioTemplate, dir_word: str | None) -> str:
    obj = tpl.object_label
    if tpl.verb in ("push", "pull", "carry"):
        text = f"{tpl.verb} the {obj} {dir_word}"
    elif tpl.verb == "place":
        text = f"place the {obj} down"
    else:
        text = f"{tpl.verb} the {obj}"
    if tpl.duration_frames < 110:
        text += " quickly"
    elif tpl.duration_frames > 170:
        text += " slowly"
    return text


# -- scripted kinematics ------------------------------------------------------------

def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _reach_rotations(raise_angle: float, hand: str) -> np.ndarray:
    """Arm pose pointing the grabbing arm forward (+z), pitched by raise_angle."""
    rots = np.zeros((dm.N_JOINTS, 3))
    if hand == "left":
        rots[_L_SHOULDER] = [0.0, -(np.pi / 2), 0.0]
        rots[_L_WRIST - 1] = [-raise_angle, 0.0, 0.0]  # elbow pitch
    else:
        rots[_R_SHOULDER] = [0.0, np.pi / 2, 0.0]
        rots[_R_WRIST - 1] = [-raise_angle, 0.0, 0.0]
    return rots


def _wrist_offset(skeleton: Skeleton, rots: np.ndarray, wrist: int) -> np.ndarray:
    """Wrist position relative to the root for a pose with identity root rotation."""
    pos = dm.fk_positions(np.zeros(3), rots, skeleton)
    return pos[wrist]


def generate_sequence(template: ScenarioTemplate, obj: ObjectSpec,
                      skeleton: Skeleton, rng: np.random.Generator,
                      dir_word: str | None) -> HoiSequence:
    T = template.duration_frames
    t1 = int(round(0.30 * T))
    t2 = int(round(0.80 * T))
    verb = template.verb

    hand = "left" if rng.random() < 0.5 else "right"
    wrist = _L_WRIST if hand == "left" else _R_WRIST
    raise_max = rng.uniform(0.35, 0.7) if verb in ("lift", "place") else 0.0

    # static layout: object ahead of the actor, slightly off axis
    obj_xz = np.array([rng.uniform(-0.5, 0.5), rng.uniform(1.2, 2.0)])
    obj_h = rng.uniform(0.8, 1.3)
    obj_t0 = np.array([obj_xz[0], obj_h, obj_xz[1]])

    # grip point: posed-cloud point nearest the actor start
    cloud0 = obj.points + obj_t0
    start_root = np.array([0.0, ROOT_HEIGHT, 0.0])
    g_idx = int(np.argmin(np.linalg.norm(cloud0 - start_root, axis=1)))
    g_world = cloud0[g_idx]
    g_local = obj.points[g_idx]

    reach0 = _reach_rotations(0.0, hand)
    w_off = _wrist_offset(skeleton, reach0, wrist)
    root_grab = g_world - w_off

    direction = np.zeros(3)
    if template.direction is not None:
        direction = np.array([template.direction[0], 0.0, template.direction[1]])
    move_dist = rng.uniform(0.5, 1.2)
    spin_total = rng.uniform(1.2, 2.4) if verb == "rotate" else 0.0

    leg_phase = rng.uniform(0, 2 * np.pi)
    sway_phase = rng.uniform(0, 2 * np.pi)
    tt = np.arange(T)

    # phase profiles
    u = _smoothstep(tt / max(t1 - 1, 1)) * (tt < t1)                       # approach
    v = _smoothstep((tt - t1) / max(t2 - t1 - 1, 1)) * (tt >= t1)          # manipulate
    v = np.minimum(v, 1.0)
    w = _smoothstep((tt - t2) / max(T - t2 - 1, 1)) * (tt >= t2)           # release

    arm = np.where(tt < t1, u, 1.0 - w)
    if verb == "lift":
        raise_amt = raise_max * v
    elif verb == "place":
        raise_amt = -raise_max * v
    else:
        raise_amt = np.zeros(T)

    moves = verb in ("push", "pull", "carry")
    v_move = v if moves else np.zeros(T)
    root = start_root + u[:, None] * (root_grab - start_root)
    root[tt >= t1] = root_grab + v_move[tt >= t1, None] * move_dist * direction
    root[tt >= t2] += w[tt >= t2, None] * np.array([0.0, 0.0, -0.3])

    # joint rotations: scaled reach pose + gait swing + head sway
    rots = arm[:, None, None] * _reach_rotations(0.0, hand)[None]
    elbow = wrist - 1
    rots[:, elbow, 0] = arm * -raise_amt
    speed = ((tt < t1) | ((tt >= t1) & (tt < t2) & moves)).astype(float)
    swing = 0.25 * speed * np.sin(2 * np.pi * tt / 24.0 + leg_phase)
    rots[:, dm.JOINT_NAMES.index("l_hip"), 0] += swing
    rots[:, dm.JOINT_NAMES.index("r_hip"), 0] -= swing
    rots[:, dm.JOINT_NAMES.index("head"), 2] = 0.06 * np.sin(2 * np.pi * tt / 40.0 + sway_phase)

    # object pose: static, then attached to the wrist (or spinning in place),
    # then frozen at its release pose
    obj_t = np.tile(obj_t0, (T, 1))
    obj_r = np.zeros((T, 3))
    man = slice(t1, t2)
    if verb == "rotate":
        obj_r[man, 1] = spin_total * _smoothstep((tt[man] - t1) / max(t2 - t1 - 1, 1))
        obj_r[t2:, 1] = obj_r[t2 - 1, 1]
    else:
        wpos = dm.fk_positions(root[man], rots[man], skeleton)[:, wrist]
        obj_t[man] = wpos - g_local
        obj_t[t2:] = obj_t[t2 - 1]

    frames = np.zeros((T, FRAME_DIM))
    frames[:, :3] = root
    frames[:, 3:HUMAN_DIM] = rots.reshape(T, -1)
    frames[:, HUMAN_DIM:HUMAN_DIM + 3] = obj_t
    frames[:, HUMAN_DIM + 3:] = obj_r

    seq = HoiSequence(frames, text=realize_text(template, dir_word),
                      object_label=obj.label)
    return dm.canonicalize(seq)


def generate_corpus(n: int, seed: int,
                    objects: dict[str, ObjectSpec] | None = None) -> list[HoiSequence]:
    """n scripted sequences, deterministic per seed (per-sequence substreams)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    objects = objects or build_object_library()
    skeleton = default_skeleton()
    out = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
        verb = VERBS[int(rng.integers(len(VERBS)))]
        label = OBJECT_LABELS[int(rng.integers(len(OBJECT_LABELS)))]
        duration = int(rng.integers(60, 221))
        dir_word = None
        direction = None
        if verb in ("push", "carry"):
            dir_word = ["forward", "to the left", "to the right"][int(rng.integers(3))]
            direction = _DIR_WORDS[dir_word]
        elif verb == "pull":
            dir_word = "backward"
            direction = _DIR_WORDS[dir_word]
        tpl = ScenarioTemplate(verb, label, direction, duration)
        out.append(generate_sequence(tpl, objects[label], skeleton, rng, dir_word))
    return out
