"""Constrained Euler angles and forward kinematics over a skeleton tree.

All functions accept a single configuration (angles of shape ``(D,)``) or a
batch (``(B, D)``); outputs follow the input's batching. Positions are in the
skeleton's file order.

For a joint ``i`` with parent ``j``::

    R_i = R_j @ R'_i          p_i = R_i @ (length_i * rest_direction_i) + p_j

with ``R'_i`` the product of the joint's elementary rotations in declared
order. The root uses ``R_0 = R'_0`` and ``p_0 = translation``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .containers import Pose3D
from .errors import DimensionMismatch, LengthMismatch
from .skeleton import AXES, ValidatedSkeleton


class EvalCounter:
    """Counts forward-kinematics evaluations (one per configuration)."""

    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0


fk_counter = EvalCounter()


def constrain_angles(raw, skeleton: ValidatedSkeleton) -> np.ndarray:
    """Map sigmoid outputs in [0, 1] affinely onto each DoF's limit range (radians)."""
    raw = np.asarray(raw, dtype=float)
    if raw.shape[-1] != skeleton.total_dof:
        raise LengthMismatch(f"expected {skeleton.total_dof} raw angles, got {raw.shape[-1]}")
    # the clip only removes rounding overshoot at the endpoints
    return np.clip(raw * (skeleton.dof_max - skeleton.dof_min) + skeleton.dof_min, skeleton.dof_min, skeleton.dof_max)


def unconstrain_angles(angles, skeleton: ValidatedSkeleton) -> np.ndarray:
    """Inverse of :func:`constrain_angles`."""
    angles = np.asarray(angles, dtype=float)
    if angles.shape[-1] != skeleton.total_dof:
        raise LengthMismatch(f"expected {skeleton.total_dof} angles, got {angles.shape[-1]}")
    return (angles - skeleton.dof_min) / (skeleton.dof_max - skeleton.dof_min)


def angle_range(skeleton: ValidatedSkeleton) -> np.ndarray:
    """d(angle)/d(raw) for every DoF, i.e. ``max - min`` in radians."""
    return skeleton.dof_max - skeleton.dof_min


def within_limits(angles, skeleton: ValidatedSkeleton, tol: float = 0.0) -> np.ndarray:
    angles = np.asarray(angles, dtype=float)
    return np.all((angles >= skeleton.dof_min - tol) & (angles <= skeleton.dof_max + tol), axis=-1)


def axis_rotation(axis, angle) -> np.ndarray:
    """Elementary right-handed rotation matrix about X, Y or Z.

    ``angle`` may be an array; the result has shape ``angle.shape + (3, 3)``.
    """
    a = AXES.index(axis) if isinstance(axis, str) else int(axis)
    angle = np.asarray(angle, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    R = np.zeros(angle.shape + (3, 3))
    i, j = (a + 1) % 3, (a + 2) % 3
    R[..., a, a] = 1.0
    R[..., i, i] = c
    R[..., j, j] = c
    R[..., i, j] = -s
    R[..., j, i] = s
    return R


def euler_to_rotation(angles, axes) -> np.ndarray:
    """Compose elementary rotations, first-listed axis outermost.

    ``euler_to_rotation((a, b, c), "XYZ") == Rx(a) @ Ry(b) @ Rz(c)``; an empty
    axis list gives the identity.
    """
    angles = np.asarray(angles, dtype=float)
    if angles.shape[-1] != len(axes):
        raise LengthMismatch(f"{len(axes)} axes but {angles.shape[-1]} angles")
    R = np.broadcast_to(np.eye(3), angles.shape[:-1] + (3, 3)).copy()
    for k, ax in enumerate(axes):
        R = R @ axis_rotation(ax, angles[..., k])
    return R


def _right_rotate(M, axis, c, s):
    """Return ``M @ axis_rotation(axis, theta)`` for batched M, given cos/sin."""
    i, j = (axis + 1) % 3, (axis + 2) % 3
    out = M.copy()
    mi, mj = M[..., :, i], M[..., :, j]
    out[..., :, i] = mi * c[..., None] + mj * s[..., None]
    out[..., :, j] = mj * c[..., None] - mi * s[..., None]
    return out


@dataclass
class FKResult:
    """Output of :func:`forward_kinematics`.

    ``positions`` (..., N, 3) and global ``rotations`` (..., N, 3, 3) in file
    order; ``dof_axes_world`` (..., D, 3) holds the world-frame axis of every
    DoF, which is all the Jacobian needs.
    """

    positions: np.ndarray
    rotations: np.ndarray
    dof_axes_world: np.ndarray
    bones: np.ndarray
    batched: bool

    def to_pose(self, skeleton: ValidatedSkeleton | None = None) -> Pose3D:
        if self.batched:
            raise DimensionMismatch("to_pose() needs an unbatched result")
        names = skeleton.joint_names if skeleton is not None else None
        return Pose3D(self.positions.copy(), frame="camera", joint_names=names)


def _prepare(skeleton, angles, bones, translation):
    angles = np.asarray(angles, dtype=float)
    bones = np.asarray(bones, dtype=float)
    batched = angles.ndim == 2
    if angles.ndim not in (1, 2):
        raise DimensionMismatch(f"angles must be 1-D or 2-D, got shape {angles.shape}")
    if angles.shape[-1] != skeleton.total_dof:
        raise DimensionMismatch(f"expected {skeleton.total_dof} angles, got {angles.shape[-1]}")
    A = angles.reshape(-1, skeleton.total_dof)
    B = len(A)
    if bones.shape[-1] != skeleton.n_bones:
        raise DimensionMismatch(f"expected {skeleton.n_bones} bone lengths, got {bones.shape[-1]}")
    L = np.broadcast_to(bones, (B, skeleton.n_bones)) if bones.ndim == 1 else bones
    if L.shape != (B, skeleton.n_bones):
        raise DimensionMismatch("bone lengths batch does not match angles")
    if translation is None:
        T = np.zeros((B, 3))
    else:
        translation = np.asarray(translation, dtype=float)
        if translation.shape[-1] != 3:
            raise DimensionMismatch("root translation must be a 3-vector")
        T = np.broadcast_to(translation, (B, 3)) if translation.ndim == 1 else translation
        if T.shape != (B, 3):
            raise DimensionMismatch("root translation batch does not match angles")
    return A, L, T, batched


def forward_kinematics(skeleton: ValidatedSkeleton, angles, bones, root_translation=None) -> FKResult:
    """Joint positions (cm, camera frame) from angles (rad) and bone lengths (cm).

    ``angles`` holds every DoF including the three root rotations; ``bones``
    holds one length per non-root joint in ``skeleton.bone_joints`` order.
    """
    A, L, T, batched = _prepare(skeleton, angles, bones, root_translation)
    B, N = len(A), skeleton.n_joints
    fk_counter.count += B
    cos, sin = np.cos(A), np.sin(A)
    R = np.empty((B, N, 3, 3))
    P = np.empty((B, N, 3))
    W = np.empty((B, skeleton.total_dof, 3))
    eye = np.broadcast_to(np.eye(3), (B, 3, 3))
    parents, starts, axes = skeleton.parents, skeleton.dof_start, skeleton.dof_axes
    for j in skeleton.bfs_order:
        p = parents[j]
        cur = eye if p < 0 else R[:, p]
        for m in range(starts[j], starts[j + 1]):
            W[:, m] = cur[:, :, axes[m]]
            cur = _right_rotate(cur, axes[m], cos[:, m], sin[:, m])
        R[:, j] = cur
        if p < 0:
            P[:, j] = T
        else:
            offset = L[:, skeleton.bone_index[j], None] * skeleton.rest_directions[j]
            P[:, j] = P[:, p] + np.einsum("bij,bj->bi", cur, offset)
    if not batched:
        return FKResult(P[0], R[0], W[0], L[0], False)
    return FKResult(P, R, W, L, True)


@lru_cache(maxsize=None)
def _ancestry(skeleton: ValidatedSkeleton) -> np.ndarray:
    """``M[i, k]`` is True when joint k is joint i or one of its ancestors."""
    N = skeleton.n_joints
    M = np.zeros((N, N), dtype=bool)
    for i in range(N):
        k = i
        while k >= 0:
            M[i, k] = True
            k = skeleton.parents[k]
    M.setflags(write=False)
    return M


def _pivots(skeleton, P):
    # rotation of a DoF on joint a swings its subtree about a's parent (root: about itself)
    owner = skeleton.dof_joint
    piv_joint = np.where(skeleton.parents[owner] >= 0, skeleton.parents[owner], owner)
    return P[..., piv_joint, :]


def fk_jacobian(skeleton: ValidatedSkeleton, angles, bones, root_translation=None) -> np.ndarray:
    """Exact Jacobian of all joint coordinates w.r.t. (angles, bones, translation).

    Rows are ``x0, y0, z0, x1, ...`` in file order; columns are the
    ``total_dof`` angles, then ``n_bones`` lengths, then the 3 root
    translation components. Batched input gives shape ``(B, 3N, P)``.
    """
    fk = forward_kinematics(skeleton, angles, bones, root_translation)
    P = fk.positions if fk.batched else fk.positions[None]
    R = fk.rotations if fk.batched else fk.rotations[None]
    W = fk.dof_axes_world if fk.batched else fk.dof_axes_world[None]
    B, N = P.shape[:2]
    D, nb = skeleton.total_dof, skeleton.n_bones
    anc = _ancestry(skeleton)
    J = np.zeros((B, N, 3, D + nb + 3))

    piv = _pivots(skeleton, P)
    for c in range(D):
        rows = anc[:, skeleton.dof_joint[c]]
        J[..., c][:, rows] = np.cross(W[:, c, None, :], P[:, rows] - piv[:, c, None, :])
    for b, k in enumerate(skeleton.bone_joints):
        rows = anc[:, k]
        J[..., D + b][:, rows] = (R[:, k] @ skeleton.rest_directions[k])[:, None, :]
    J[:, :, :, D + nb:] = np.eye(3)
    J = J.reshape(B, 3 * N, D + nb + 3)
    return J if fk.batched else J[0]


def fk_vjp(skeleton: ValidatedSkeleton, fk: FKResult, grad_positions):
    """Pull a gradient w.r.t. positions back to (angles, bones, translation).

    Equivalent to ``grad.reshape(-1) @ fk_jacobian(...)`` but O(N) per sample:
    subtree sums of ``g_i`` and ``p_i x g_i`` are accumulated leaf to root.
    """
    P = fk.positions if fk.batched else fk.positions[None]
    R = fk.rotations if fk.batched else fk.rotations[None]
    W = fk.dof_axes_world if fk.batched else fk.dof_axes_world[None]
    G = np.asarray(grad_positions, dtype=float).reshape(P.shape)
    S = np.cross(P, G)
    G = G.copy()
    for j in skeleton.bfs_order[::-1]:
        p = skeleton.parents[j]
        if p >= 0:
            G[:, p] += G[:, j]
            S[:, p] += S[:, j]
    owner = skeleton.dof_joint
    piv = _pivots(skeleton, P)
    moment = S[:, owner] - np.cross(piv, G[:, owner])
    d_angles = np.einsum("bdk,bdk->bd", W, moment)
    k = skeleton.bone_joints
    dirs = np.einsum("bkij,kj->bki", R[:, k], skeleton.rest_directions[k])
    d_bones = np.einsum("bki,bki->bk", dirs, G[:, k])
    d_trans = G[:, skeleton.root_index]
    if fk.batched:
        return d_angles, d_bones, d_trans
    return d_angles[0], d_bones[0], d_trans[0]


def bone_vectors(skeleton: ValidatedSkeleton, positions) -> np.ndarray:
    """``p_i - p_parent(i)`` for every non-root joint, in bone order."""
    positions = np.asarray(positions)
    k = skeleton.bone_joints
    return positions[..., k, :] - positions[..., skeleton.parents[k], :]


def rest_pose(skeleton: ValidatedSkeleton, bones=None) -> np.ndarray:
    """Positions with every angle zero and nominal (or given) bone lengths."""
    bones = skeleton.nominal_bones() if bones is None else bones
    return forward_kinematics(skeleton, np.zeros(skeleton.total_dof), bones).positions


def random_configuration(skeleton: ValidatedSkeleton, rng, n: int = 1, bone_jitter: float = 0.2):
    """Angles uniform within limits, jittered nominal bones and a random translation."""
    angles = rng.uniform(skeleton.dof_min, skeleton.dof_max, (n, skeleton.total_dof))
    bones = skeleton.nominal_bones() * rng.uniform(1 - bone_jitter, 1 + bone_jitter, (n, skeleton.n_bones))
    return angles, bones, rng.normal(0.0, 10.0, (n, 3))


def jacobian_check(skeleton: ValidatedSkeleton, n: int = 100, seed: int = 0, eps: float = 1e-6) -> float:
    """Max abs difference between :func:`fk_jacobian` and central differences over ``n`` random configurations."""
    rng = np.random.default_rng(seed)
    A, B, T = random_configuration(skeleton, rng, n)
    D, nb = skeleton.total_dof, skeleton.n_bones
    worst = 0.0
    for a, b, t in zip(A, B, T):
        J = fk_jacobian(skeleton, a, b, t)
        x = np.concatenate([a, b, t])
        # all +eps / -eps perturbations evaluated as one batch
        step = eps * np.eye(len(x))
        X = np.concatenate([x + step, x - step])
        P = forward_kinematics(skeleton, X[:, :D], X[:, D : D + nb], X[:, D + nb :]).positions
        P = P.reshape(2, len(x), -1)
        num = ((P[0] - P[1]) / (2 * eps)).T
        worst = max(worst, float(np.abs(J - num).max()))
    return worst
