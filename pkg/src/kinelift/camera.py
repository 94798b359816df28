"""Pinhole cameras, frame transforms and network input normalization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .containers import Keypoints2D, Pose3D
from .errors import BehindCamera, DegenerateScale, InputError, WrongFrame


@dataclass(eq=False)
class CameraModel:
    """Intrinsics ``K`` and extrinsics ``(R, t)`` mapping world to camera: ``X_C = R X_W + t``."""

    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=float).reshape(3, 3)
        self.R = np.asarray(self.R, dtype=float).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=float).reshape(3)
        if abs(self.K[1, 0]) + abs(self.K[2, 0]) + abs(self.K[2, 1]) > 0 or self.K[2, 2] != 1.0:
            raise InputError("K must be upper triangular with K[2, 2] = 1")
        if self.K[0, 0] <= 0 or self.K[1, 1] <= 0:
            raise InputError("focal lengths must be positive")
        if not np.allclose(self.R.T @ self.R, np.eye(3), atol=1e-9) or np.linalg.det(self.R) < 0:
            raise InputError("R must be a proper rotation matrix")

    def __eq__(self, other):
        if not isinstance(other, CameraModel):
            return NotImplemented
        return (
            self.name == other.name
            and np.array_equal(self.K, other.K)
            and np.array_equal(self.R, other.R)
            and np.array_equal(self.t, other.t)
        )

    @classmethod
    def from_params(cls, fx, fy, cx, cy, skew=0.0, R=None, t=None, name=""):
        K = np.array([[fx, skew, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
        return cls(K, np.eye(3) if R is None else R, np.zeros(3) if t is None else t, name)

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.R.T @ self.t

    def projection_matrix(self) -> np.ndarray:
        return self.K @ np.column_stack([self.R, self.t])

    def to_dict(self) -> dict:
        return {"name": self.name, "K": self.K.tolist(), "R": self.R.tolist(), "t": self.t.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        try:
            return cls(d["K"], d["R"], d["t"], d.get("name", ""))
        except KeyError as exc:
            raise InputError(f"camera description lacks {exc}") from exc


def look_at(center, target, up=(0.0, -1.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """Extrinsics ``(R, t)`` for a camera at ``center`` looking at ``target``.

    Camera axes follow the usual convention: x right, y down, z forward.
    """
    center = np.asarray(center, dtype=float)
    z = np.asarray(target, dtype=float) - center
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=float))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return R, -R @ center


def _points(pose):
    if isinstance(pose, Pose3D):
        return pose.positions, pose.frame
    return np.asarray(pose, dtype=float), None


def world_to_camera(pose, cam: CameraModel):
    """Apply ``X_C = R X_W + t``. Pose3D inputs must be tagged ``world``."""
    X, frame = _points(pose)
    if frame is not None and frame != "world":
        raise WrongFrame(f"expected a world-frame pose, got {frame!r}")
    Y = X @ cam.R.T + cam.t
    if frame is None:
        return Y
    return Pose3D(Y, "camera", pose.joint_names, pose.confidence, pose.valid.copy())


def camera_to_world(pose, cam: CameraModel):
    X, frame = _points(pose)
    if frame is not None and frame != "camera":
        raise WrongFrame(f"expected a camera-frame pose, got {frame!r}")
    Y = (X - cam.t) @ cam.R
    if frame is None:
        return Y
    return Pose3D(Y, "world", pose.joint_names, pose.confidence, pose.valid.copy())


def _homogeneous(X, K):
    # K is (3, 3) or one matrix per pose, (..., 3, 3)
    return np.einsum("...ij,...nj->...ni", K, X)


def project_points(X, K) -> np.ndarray:
    """Project camera-frame points ``(..., N, 3)`` to ``(..., N, 2)``.

    ``K`` is one intrinsic matrix or a stack ``(..., 3, 3)`` matching the
    leading axes of ``X``.
    """
    X = np.asarray(X, dtype=float)
    z = X[..., 2]
    bad = ~(z > 0)
    if np.any(bad):
        raise BehindCamera(int(np.argwhere(bad)[0][-1]))
    h = _homogeneous(X, np.asarray(K, dtype=float))
    return h[..., :2] / h[..., 2:3]


def project_jacobian(X, K) -> np.ndarray:
    """d(u, v)/d(X) for every point: shape ``(..., N, 2, 3)``."""
    X = np.asarray(X, dtype=float)
    K = np.asarray(K, dtype=float)
    h = _homogeneous(X, K)
    w = h[..., 2]
    K = K[..., None, :, :]  # broadcast over points
    # u = h0 / w, with dh/dX = K
    J = K[..., :2, :] / w[..., None, None]
    return J - (h[..., :2, None] / (w[..., None, None] ** 2)) * K[..., 2:3, :]


def project(pose, cam: CameraModel) -> Keypoints2D:
    """Pinhole projection ``X_I ~ K X_C`` of a camera-frame pose.

    Raises :class:`BehindCamera` naming the first joint with ``z <= 0``.
    """
    X, frame = _points(pose)
    if frame is not None and frame != "camera":
        raise WrongFrame(f"expected a camera-frame pose, got {frame!r}")
    conf = pose.confidence if isinstance(pose, Pose3D) else None
    return Keypoints2D(project_points(X, cam.K), conf)


@dataclass(frozen=True)
class NormalizationSpec:
    """Reference joints for making 2D inputs translation and scale invariant.

    The origin is the mean of ``origin`` joints; the scale is the distance
    between the two ``scale`` joints. Indices refer to keypoint order.
    """

    origin: tuple[int, ...]
    scale: tuple[int, int]

    def to_dict(self):
        return {"origin": list(self.origin), "scale": list(self.scale)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(int(i) for i in d["origin"]), tuple(int(i) for i in d["scale"]))

    @classmethod
    def for_skeleton(cls, skeleton) -> "NormalizationSpec":
        """Mid-shoulder / shoulder width for bodies, wrist / wrist-to-middle-MCP for hands."""
        ix = skeleton.index
        if "left_shoulder" in ix and "right_shoulder" in ix:
            pair = (ix["left_shoulder"], ix["right_shoulder"])
            return cls(pair, pair)
        if "wrist" in ix and "middle_mcp" in ix:
            return cls((ix["wrist"],), (ix["wrist"], ix["middle_mcp"]))
        raise InputError(f"no default normalization for skeleton {skeleton.name!r}")


def normalize_keypoints(kp, spec: NormalizationSpec, confidence=None) -> np.ndarray:
    """Centre on the reference origin, divide by the reference distance, flatten.

    ``kp`` is a :class:`Keypoints2D` or an array of points ``(..., N, 2)``;
    batched arrays produce ``(..., 2N)``. Points with zero confidence become
    (0, 0). Returns x1, y1, x2, y2, ...
    """
    if isinstance(kp, Keypoints2D):
        pts, conf = kp.points, kp.confidence
    else:
        pts = np.asarray(kp, dtype=float)
        conf = None if confidence is None else np.asarray(confidence, dtype=float)
    origin = pts[..., list(spec.origin), :].mean(axis=-2, keepdims=True)
    a, b = spec.scale
    scale = np.linalg.norm(pts[..., a, :] - pts[..., b, :], axis=-1)
    if np.any(~(scale >= 1e-6)):
        raise DegenerateScale("reference distance below 1e-6; cannot normalize")
    out = (pts - origin) / scale[..., None, None]
    if conf is not None:
        out = np.where((conf > 0)[..., None], out, 0.0)
    return out.reshape(out.shape[:-2] + (-1,))


def triangulate(cameras, points2d, weights=None) -> np.ndarray:
    """Linear (DLT) triangulation of corresponding points from two or more views.

    ``points2d`` has shape ``(V, ..., 2)``; returns world points ``(..., 3)``.
    ``weights`` (``(V, ...)``) scales each view's equations, zero drops a view.
    """
    pts = np.asarray(points2d, dtype=float)
    if len(cameras) != len(pts):
        raise InputError("one set of observations per camera is required")
    if len(cameras) < 2:
        raise InputError("triangulation needs at least two views")
    w = np.ones(pts.shape[:-1]) if weights is None else np.asarray(weights, dtype=float)
    rows = []
    for cam, uv, wv in zip(cameras, pts, w):
        P = cam.projection_matrix()
        rows.append(wv[..., None] * (uv[..., 0:1] * P[2] - P[0]))
        rows.append(wv[..., None] * (uv[..., 1:2] * P[2] - P[1]))
    A = np.stack(rows, axis=-2)
    _, _, vt = np.linalg.svd(A)
    X = vt[..., -1, :]
    return X[..., :3] / X[..., 3:4]
