"""Plain value containers passed between modules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

FRAMES = ("world", "camera")


@dataclass
class Keypoints2D:
    """N image points with per-point detector confidence.

    ``points`` has shape (N, 2) in pixels or normalized units, ``confidence``
    shape (N,) with values in [0, 1].
    """

    points: np.ndarray
    confidence: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise InputError(f"keypoints must have shape (N, 2), got {self.points.shape}")
        if self.confidence is None:
            self.confidence = np.ones(len(self.points))
        else:
            self.confidence = np.asarray(self.confidence, dtype=float)
        if self.confidence.shape != (len(self.points),):
            raise InputError("confidence must have one entry per point")
        if np.any((self.confidence < 0) | (self.confidence > 1)):
            raise InputError("confidence values must lie in [0, 1]")

    def __len__(self):
        return len(self.points)


@dataclass
class Pose3D:
    """Joint positions in centimetres, tagged with the frame they live in.

    ``valid`` marks joints that carry a prediction; hands that were not
    detected are emitted with ``valid = False`` and NaN positions.
    """

    positions: np.ndarray
    frame: str = "camera"
    joint_names: tuple[str, ...] | None = None
    confidence: np.ndarray | None = None
    valid: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise InputError(f"positions must have shape (N, 3), got {self.positions.shape}")
        if self.frame not in FRAMES:
            raise InputError(f"unknown frame {self.frame!r}; expected one of {FRAMES}")
        n = len(self.positions)
        if self.joint_names is not None:
            self.joint_names = tuple(self.joint_names)
            if len(self.joint_names) != n:
                raise InputError("joint_names length does not match positions")
        if self.valid is None:
            self.valid = np.ones(n, dtype=bool)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)

    def __len__(self):
        return len(self.positions)
