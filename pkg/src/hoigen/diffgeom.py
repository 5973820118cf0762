"""Differentiable geometry: kinematics and contact terms inside the autodiff
graph, mirroring the float64 reference implementations in domain.py.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .domain import HUMAN_DIM, Skeleton


def rotation_matrices(aa: Tensor) -> Tensor:
    """Rodrigues map for a batch of axis-angle vectors: (N, 3) -> (N, 3, 3).

    Uses R = I + c1*K + c2*K^2 with c1 = sin(t)/t, c2 = (1-cos(t))/t^2 and a
    tiny epsilon inside the sqrt so gradients stay finite at zero rotation.
    """
    n = aa.shape[0]
    t2 = ad.tsum(aa * aa, axis=-1)                  # (N,)
    theta = ad.sqrt(t2 + 1e-12)
    c1 = ad.sin(theta) / theta
    c2 = (1.0 - ad.cos(theta)) / (t2 + 1e-12)

    ax, ay, az = aa[:, 0], aa[:, 1], aa[:, 2]
    zero = Tensor(np.zeros(n, dtype=np.float32))
    k_flat = ad.stack([zero, -az, ay,
                       az, zero, -ax,
                       -ay, ax, zero], axis=1)      # (N, 9)
    K = k_flat.reshape(n, 3, 3)
    K2 = ad.matmul(K, K)
    eye = Tensor(np.broadcast_to(np.eye(3, dtype=np.float32), (n, 3, 3)).copy())
    return eye + c1.reshape(n, 1, 1) * K + c2.reshape(n, 1, 1) * K2


def fk_tensor(frames: Tensor, skeleton: Skeleton) -> Tensor:
    """FK joint positions for a batch of 75-dim frames: (N, 75) -> (N, J, 3).

    Same convention as domain.fk_positions (offsets live in each joint's own
    rotated frame). The Rodrigues map runs once over all joints.
    """
    n = frames.shape[0]
    J = skeleton.n_joints
    root = frames[:, 0:3]
    R_all = rotation_matrices(frames[:, 3:3 + 3 * J].reshape(n * J, 3)).reshape(n, J, 3, 3)

    R_world: list[Tensor] = [None] * J
    pos: list[Tensor] = [None] * J
    for j in range(J):
        p = skeleton.parent_index[j]
        if p < 0:
            R_world[j] = R_all[:, 0]
            base = root
        else:
            R_world[j] = ad.matmul(R_world[p], R_all[:, j])
            base = pos[p]
        off = Tensor(skeleton.rest_offset[j].astype(np.float32).reshape(3, 1))
        arm = ad.matmul(R_world[j], off).reshape(n, 3)
        pos[j] = base + arm
    return ad.stack(pos, axis=1)


def object_points_tensor(frames: Tensor, points: np.ndarray) -> Tensor:
    """Pose per-frame object clouds: frames (N, 75), points (N, P, 3) -> (N, P, 3)."""
    n, p = points.shape[0], points.shape[1]
    R = rotation_matrices(frames[:, HUMAN_DIM + 3: HUMAN_DIM + 6])
    pts_t = Tensor(np.ascontiguousarray(np.swapaxes(points, 1, 2), dtype=np.float32))
    world = ad.swapaxes(ad.matmul(R, pts_t), 1, 2)
    return world + frames[:, HUMAN_DIM: HUMAN_DIM + 3].reshape(n, 1, 3)


def contact_distances_tensor(frames: Tensor, skeleton: Skeleton,
                             points: np.ndarray, jpos: Tensor | None = None) -> Tensor:
    """Per-frame min distance from each contact joint to the posed cloud:
    frames (N, 75), points (N, P, 3) -> (N, n_contact). Pass jpos (N, C, 3)
    to reuse already-computed contact-joint positions."""
    if jpos is None:
        jpos = fk_tensor(frames, skeleton)[:, skeleton.contact_joint_ids, :]
    wpts = object_points_tensor(frames, points)              # (N, P, 3)
    n, c = jpos.shape[0], jpos.shape[1]
    diff = jpos.reshape(n, c, 1, 3) - wpts.reshape(n, 1, points.shape[1], 3)
    d = ad.l2norm(diff)                                      # (N, C, P)
    return ad.tmin(d, axis=2)
