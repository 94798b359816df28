"""Similarity alignment of pose pairs and per-joint error statistics.

Alignment modes name the components fitted before measuring errors:

``Rts``  rotation, translation and scale (least-squares similarity)
``Rt``   rotation and translation (rigid)
``ts``   translation and scale
``t``    translation only (centroid difference)
``root`` translation matching the root joints only
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .containers import Pose3D
from .errors import DegenerateConfiguration, InputError, LengthMismatch

MODES = ("Rts", "Rt", "ts", "t", "root")


@dataclass(frozen=True)
class AlignmentMode:
    rotation: bool = True
    translation: bool = True
    scale: bool = True
    root_only_translation: bool = False
    root_index: int = 0
    use_gt_bones: bool = False

    def __post_init__(self):
        if self.root_only_translation and (self.rotation or self.scale):
            raise InputError("root-only translation excludes rotation and scale")

    @classmethod
    def parse(cls, name: str, root_index: int = 0, use_gt_bones: bool = False) -> "AlignmentMode":
        if name not in MODES:
            raise InputError(f"unknown alignment {name!r}; expected one of {MODES}")
        if name == "root":
            return cls(False, True, False, True, root_index, use_gt_bones)
        return cls("R" in name, "t" in name, "s" in name, False, root_index, use_gt_bones)

    @property
    def name(self) -> str:
        if self.root_only_translation:
            return "root"
        return ("R" if self.rotation else "") + ("t" if self.translation else "") + ("s" if self.scale else "")


@dataclass
class Alignment:
    R: np.ndarray
    t: np.ndarray
    s: float
    aligned: np.ndarray
    residual: float  # sum of squared distances after alignment


def _positions(p):
    return p.positions if isinstance(p, Pose3D) else np.asarray(p, dtype=float)


def kabsch_umeyama(source, target, mode: AlignmentMode | str = "Rts") -> Alignment:
    """Least-squares transform ``y ~ s R x + t`` of ``source`` onto ``target``.

    Disabled components stay at identity. Without rotation the optimal
    scale is ``<x_c, y_c> / <x_c, x_c>`` on centred points; with rotation the
    variance-ratio form is used and reflections are excluded.
    """
    mode = AlignmentMode.parse(mode) if isinstance(mode, str) else mode
    X, Y = _positions(source), _positions(target)
    if X.shape != Y.shape or X.ndim != 2 or X.shape[1] != 3:
        raise LengthMismatch(f"point sets differ or are not (N, 3): {X.shape} vs {Y.shape}")
    R, s, t = np.eye(3), 1.0, np.zeros(3)
    if np.array_equal(X, Y):
        # identity is optimal; skip the SVD so the residual is exactly zero
        return Alignment(R, t, s, X.copy(), 0.0)
    if mode.root_only_translation:
        t = Y[mode.root_index] - X[mode.root_index]
    else:
        mx = X.mean(axis=0) if mode.translation else np.zeros(3)
        my = Y.mean(axis=0) if mode.translation else np.zeros(3)
        Xc, Yc = X - mx, Y - my
        var_x = float(np.sum(Xc**2))
        if mode.rotation:
            if len(X) < 3 or np.linalg.matrix_rank(Xc, tol=1e-9 * max(1.0, np.abs(Xc).max())) < 2:
                raise DegenerateConfiguration("rotation needs at least 3 points spanning a plane")
            U, D, Vt = np.linalg.svd(Yc.T @ Xc)
            S = np.ones(3)
            if np.linalg.det(U) * np.linalg.det(Vt) < 0:
                S[2] = -1.0
            R = U @ np.diag(S) @ Vt
            if mode.scale:
                s = float(np.sum(D * S) / var_x)
        elif mode.scale:
            if var_x <= 0:
                raise DegenerateConfiguration("scale is undefined for coincident points")
            s = float(np.sum(Xc * Yc) / var_x)
        t = my - s * R @ mx
    aligned = s * X @ R.T + t
    return Alignment(R, t, s, aligned, float(np.sum((aligned - Y) ** 2)))


@dataclass
class ErrorStats:
    median: float
    weighted_mean: float
    std: float
    n_joints: int
    n_frames: int
    n_detection_failures: int
    std_convention: str = "population"

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def joint_distances(pred, gt, mode: AlignmentMode | str = "Rts") -> np.ndarray:
    """Per-frame aligned Euclidean distances, shape ``(F, N)``."""
    P = np.asarray([_positions(p) for p in pred], dtype=float) if isinstance(pred, list) else _positions(pred)
    G = np.asarray([_positions(g) for g in gt], dtype=float) if isinstance(gt, list) else _positions(gt)
    if P.ndim == 2:
        P, G = P[None], G[None]
    if P.shape != G.shape:
        raise LengthMismatch(f"prediction {P.shape} and ground truth {G.shape} differ")
    out = np.empty(P.shape[:2])
    for f in range(len(P)):
        out[f] = np.linalg.norm(kabsch_umeyama(P[f], G[f], mode).aligned - G[f], axis=-1)
    return out


def per_joint_errors(pred, gt, confidences=None, mode: AlignmentMode | str = "Rts") -> ErrorStats:
    """Median, confidence-weighted mean and population std of aligned joint errors (cm).

    ``pred`` / ``gt`` are arrays ``(F, N, 3)`` or lists of :class:`Pose3D`.
    Joints with zero confidence are excluded from all statistics, and each
    frame containing one counts as a detection failure.
    """
    d = joint_distances(pred, gt, mode)
    c = np.ones_like(d) if confidences is None else np.broadcast_to(np.asarray(confidences, dtype=float), d.shape)
    if np.any(c < 0):
        raise InputError("confidences must be non-negative")
    keep = c > 0
    fails = int(np.sum(~np.all(keep, axis=1)))
    e, w = d[keep], c[keep]
    if e.size == 0:
        return ErrorStats(0.0, 0.0, 0.0, d.shape[1], d.shape[0], fails)
    return ErrorStats(
        float(np.median(e)),
        float(np.sum(w * e) / np.sum(w)),
        float(np.std(e)),
        d.shape[1],
        d.shape[0],
        fails,
    )
