"""Supervision losses and their gradients.

Each loss returns ``(value, grad)`` with ``grad`` shaped like the prediction.
Batched inputs are averaged over the batch, so the gradient is that of the
batch mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import project_jacobian, project_points
from .containers import Keypoints2D, Pose3D
from .errors import FrameMismatch, InputError, LengthMismatch

DEFAULT_WRIST_WEIGHT = 5.0


class NoTermsEnabled(InputError):
    pass


@dataclass
class LossWeights:
    """Per-joint weights for the 3D loss and the combination settings.

    ``mode`` is ``"fixed"`` (``sum w_k L_k``) or ``"kendall"``
    (``sum exp(-s_k) L_k + s_k`` with learnable log-variances ``s_k``).
    """

    joint: np.ndarray | None = None
    terms: dict = field(default_factory=lambda: {"3d": 1.0})
    mode: str = "fixed"
    log_vars: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.joint is not None:
            self.joint = np.asarray(self.joint, dtype=float)
            if np.any(self.joint <= 0):
                raise InputError("per-joint weights must be positive")
        if self.mode not in ("fixed", "kendall"):
            raise InputError(f"unknown loss combination mode {self.mode!r}")


def wrist_weights(skeleton, wrist_weight=DEFAULT_WRIST_WEIGHT) -> np.ndarray:
    """Unit weights with ``wrist_weight`` on every joint whose name contains 'wrist'."""
    w = np.ones(skeleton.n_joints)
    for i, name in enumerate(skeleton.joint_names):
        if "wrist" in name and skeleton.parents[i] >= 0:
            w[i] = wrist_weight
    return w


def _unwrap(p):
    if isinstance(p, Pose3D):
        return p.positions, p.frame
    if isinstance(p, Keypoints2D):
        return p.points, None
    return np.asarray(p, dtype=float), None


def loss_angular(pred, gt):
    """Mean absolute angle difference (radians); subgradient 0 where equal."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise LengthMismatch(f"angle shapes differ: {pred.shape} vs {gt.shape}")
    diff = pred - gt
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def loss_3d(pred, gt, weights=None, squared=False):
    """Weighted mean per-joint Euclidean distance.

    For one pose: ``sum_i w_i ||x_i - y_i|| / sum_i w_i``; batches are
    averaged. ``squared`` uses ``||x_i - y_i||^2`` instead.
    """
    X, fx = _unwrap(pred)
    Y, fy = _unwrap(gt)
    if fx is not None and fy is not None and fx != fy:
        raise FrameMismatch(f"prediction in {fx!r} frame, ground truth in {fy!r}")
    if X.shape != Y.shape:
        raise LengthMismatch(f"pose shapes differ: {X.shape} vs {Y.shape}")
    w = weights.joint if isinstance(weights, LossWeights) else weights
    w = np.ones(X.shape[-2]) if w is None else np.asarray(w, dtype=float)
    if w.shape != (X.shape[-2],):
        raise LengthMismatch("one weight per joint is required")
    n_poses = X.size // (3 * X.shape[-2])
    diff = X - Y
    scale = w / w.sum() / n_poses
    if squared:
        return float(np.sum(scale * np.sum(diff**2, axis=-1))), 2.0 * scale[:, None] * diff
    dist = np.linalg.norm(diff, axis=-1)
    safe = np.where(dist > 0, dist, 1.0)
    grad = np.where((dist > 0)[..., None], diff / safe[..., None], 0.0) * scale[:, None]
    return float(np.sum(scale * dist)), grad


def loss_reprojection(pred, K, gt2d, weights=None, squared=False):
    """Mean pixel distance between projected camera-frame joints and 2D targets.

    ``K`` is an intrinsic matrix or a :class:`CameraModel` (only K is used:
    the prediction is already in the camera frame). ``weights`` optionally
    weights joints (e.g. detector confidences). The gradient is w.r.t. the 3D
    camera-frame positions.
    """
    X, frame = _unwrap(pred)
    if frame is not None and frame != "camera":
        raise FrameMismatch("reprojection loss needs a camera-frame prediction")
    K = getattr(K, "K", K)
    U, _ = _unwrap(gt2d)
    if weights is None and isinstance(gt2d, Keypoints2D):
        weights = gt2d.confidence
    uv = project_points(X, K)
    if uv.shape != U.shape:
        raise LengthMismatch(f"projected shape {uv.shape} vs observations {U.shape}")
    n = X.shape[-2]
    w = np.ones(n) if weights is None else np.broadcast_to(np.asarray(weights, dtype=float), uv.shape[:-1])
    n_poses = X.size // (3 * n)
    wsum = np.sum(w, axis=-1, keepdims=True)
    scale = w / np.where(wsum > 0, wsum, 1.0) / n_poses
    diff = uv - U
    if squared:
        value = np.sum(scale * np.sum(diff**2, axis=-1))
        g2 = 2.0 * scale[..., None] * diff
    else:
        dist = np.linalg.norm(diff, axis=-1)
        value = np.sum(scale * dist)
        safe = np.where(dist > 0, dist, 1.0)
        g2 = np.where((dist > 0)[..., None], diff / safe[..., None], 0.0) * scale[..., None]
    J = project_jacobian(X, K)
    return float(value), np.einsum("...nk,...nkj->...nj", g2, J)


def loss_combined(terms: dict, weights: LossWeights):
    """Combine scalar loss terms.

    Returns ``(value, d_terms, d_log_vars)`` where ``d_terms[k] = dL/dL_k``
    and ``d_log_vars[k] = dL/ds_k`` (empty in fixed mode).
    """
    active = {k: v for k, v in terms.items() if v is not None}
    if weights.mode == "fixed":
        active = {k: v for k, v in active.items() if weights.terms.get(k, 0.0) != 0.0}
    if not active:
        raise NoTermsEnabled("no loss term is enabled")
    if weights.mode == "fixed":
        d_terms = {k: float(weights.terms[k]) for k in active}
        return float(sum(d_terms[k] * v for k, v in active.items())), d_terms, {}
    value, d_terms, d_s = 0.0, {}, {}
    for k, v in active.items():
        s = float(weights.log_vars.get(k, 0.0))
        value += np.exp(-s) * v + s
        d_terms[k] = float(np.exp(-s))
        d_s[k] = float(1.0 - np.exp(-s) * v)
    return float(value), d_terms, d_s
