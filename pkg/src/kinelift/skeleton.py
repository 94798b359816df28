"""Hierarchical skeleton definitions.

A skeleton is a tree of joints. Each non-root joint carries a unit rest
direction (the direction of the bone from its parent, expressed in the
parent's frame when all angles are zero) and 0-3 rotational degrees of
freedom with angle limits in degrees. The root always has three unconstrained
DoF; its translation is supplied separately.

Topologies live in JSON files under ``kinelift/data``::

    {"name": str, "root": str,
     "joints": [{"name": str, "parent": str | null,
                 "rest_direction": [x, y, z], "rest_length": float,
                 "dof": [{"axis": "X|Y|Z", "min_deg": f, "max_deg": f}]}]}

``rest_length`` (nominal bone length in cm) is optional and only used for
synthetic data and IK initialisation.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .containers import Keypoints2D
from .errors import InputError

AXES = "XYZ"
ROOT_LIMIT_DEG = 180.0


class SkeletonError(InputError):
    def __init__(self, message, joint=None):
        super().__init__(message if joint is None else f"joint {joint!r}: {message}")
        self.joint = joint


class CycleDetected(SkeletonError):
    pass


class OrphanJoint(SkeletonError):
    pass


class DuplicateAxis(SkeletonError):
    pass


class InvalidLimitRange(SkeletonError):
    pass


class MultipleRoots(SkeletonError):
    pass


class InvalidRestDirection(SkeletonError):
    pass


@dataclass(frozen=True)
class DofSpec:
    axis: str
    min_deg: float
    max_deg: float


@dataclass(frozen=True)
class JointSpec:
    name: str
    parent: str | None
    rest_direction: tuple[float, float, float] = (0.0, 0.0, 0.0)
    dof: tuple[DofSpec, ...] = ()
    rest_length: float | None = None


@dataclass(frozen=True)
class SkeletonSpec:
    joints: tuple[JointSpec, ...]
    root: str
    name: str = ""

    @property
    def total_dof(self) -> int:
        return sum(len(j.dof) for j in self.joints)

    @property
    def joint_names(self) -> tuple[str, ...]:
        return tuple(j.name for j in self.joints)

    @classmethod
    def from_dict(cls, data: dict) -> "SkeletonSpec":
        try:
            joints = tuple(
                JointSpec(
                    name=str(j["name"]),
                    parent=j.get("parent"),
                    rest_direction=tuple(float(v) for v in j.get("rest_direction", (0, 0, 0))),
                    dof=tuple(
                        DofSpec(str(d["axis"]).upper(), float(d["min_deg"]), float(d["max_deg"]))
                        for d in j.get("dof", ())
                    ),
                    rest_length=None if j.get("rest_length") is None else float(j["rest_length"]),
                )
                for j in data["joints"]
            )
            return cls(joints=joints, root=str(data["root"]), name=str(data.get("name", "")))
        except (KeyError, TypeError, ValueError) as exc:
            raise SkeletonError(f"malformed skeleton description: {exc}") from exc

    def to_dict(self) -> dict:
        out = {"name": self.name, "root": self.root, "joints": []}
        for j in self.joints:
            entry = {
                "name": j.name,
                "parent": j.parent,
                "rest_direction": list(j.rest_direction),
                "dof": [{"axis": d.axis, "min_deg": d.min_deg, "max_deg": d.max_deg} for d in j.dof],
            }
            if j.rest_length is not None:
                entry["rest_length"] = j.rest_length
            out["joints"].append(entry)
        return out


def _frozen(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ValidatedSkeleton:
    """A checked skeleton with dense index tables used by the numeric code.

    Joint arrays are indexed in file order. ``bfs_order`` lists joint indices
    with every parent before its children. DoF vectors are laid out joint by
    joint in file order, each joint's entries in declared order.
    """

    spec: SkeletonSpec
    bfs_order: np.ndarray
    parents: np.ndarray
    dof_start: np.ndarray
    dof_axes: np.ndarray
    dof_joint: np.ndarray
    dof_min: np.ndarray
    dof_max: np.ndarray
    rest_directions: np.ndarray
    rest_lengths: np.ndarray
    bone_index: np.ndarray
    bone_joints: np.ndarray
    index: dict = field(repr=False)

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def joint_names(self) -> tuple[str, ...]:
        return self.spec.joint_names

    @property
    def n_joints(self) -> int:
        return len(self.spec.joints)

    @property
    def n_bones(self) -> int:
        return len(self.bone_joints)

    @property
    def total_dof(self) -> int:
        return len(self.dof_axes)

    @property
    def root_index(self) -> int:
        return int(self.bfs_order[0])

    def dof_slice(self, joint: int | str) -> slice:
        j = self.index[joint] if isinstance(joint, str) else joint
        return slice(int(self.dof_start[j]), int(self.dof_start[j + 1]))

    def joint_axes(self, joint: int | str) -> np.ndarray:
        return self.dof_axes[self.dof_slice(joint)]

    def nominal_bones(self) -> np.ndarray:
        """Nominal bone lengths (cm) for non-root joints, in bone order."""
        lengths = self.rest_lengths[self.bone_joints]
        if np.any(~np.isfinite(lengths)):
            raise InputError(f"skeleton {self.name!r} does not define rest_length for every bone")
        return lengths.copy()

    def children(self, joint: int) -> list[int]:
        return [i for i in range(self.n_joints) if self.parents[i] == joint]

    def __eq__(self, other):
        return isinstance(other, ValidatedSkeleton) and self.spec == other.spec

    def __hash__(self):
        return hash(self.spec)


def validate_skeleton(spec: SkeletonSpec | ValidatedSkeleton) -> ValidatedSkeleton:
    """Check ``spec`` and build its traversal order and DoF index tables."""
    if isinstance(spec, ValidatedSkeleton):
        spec = spec.spec
    names = [j.name for j in spec.joints]
    if len(set(names)) != len(names):
        dup = next(n for n in names if names.count(n) > 1)
        raise SkeletonError("duplicate joint name", dup)
    index = {n: i for i, n in enumerate(names)}

    roots = [j.name for j in spec.joints if j.parent is None]
    if len(roots) > 1:
        raise MultipleRoots(f"several joints without parent: {roots}", roots[1])
    if spec.root not in index:
        raise OrphanJoint("declared root is not a joint", spec.root)
    if spec.joints[index[spec.root]].parent is not None:
        raise MultipleRoots("declared root has a parent", spec.root)

    parents = np.full(len(names), -1, dtype=int)
    for i, j in enumerate(spec.joints):
        if j.parent is None:
            continue
        if j.parent not in index:
            raise OrphanJoint(f"parent {j.parent!r} does not exist", j.name)
        if j.parent == j.name:
            raise CycleDetected("joint is its own parent", j.name)
        parents[i] = index[j.parent]

    for i, j in enumerate(spec.joints):
        seen = {i}
        k = parents[i]
        while k != -1:
            if k in seen:
                raise CycleDetected("parent chain loops back", j.name)
            seen.add(k)
            k = parents[k]

    children = [[] for _ in names]
    for i, p in enumerate(parents):
        if p >= 0:
            children[p].append(i)
    order = []
    queue = deque([index[spec.root]])
    while queue:
        j = queue.popleft()
        order.append(j)
        queue.extend(children[j])
    if len(order) != len(names):
        unreachable = next(n for i, n in enumerate(names) if i not in set(order))
        raise OrphanJoint("not reachable from root", unreachable)

    dof_start = [0]
    axes, dof_joint, lo, hi = [], [], [], []
    for i, j in enumerate(spec.joints):
        is_root = j.name == spec.root
        if is_root and len(j.dof) != 3:
            raise InvalidLimitRange("root must have exactly 3 DoF", j.name)
        used = set()
        for d in j.dof:
            if d.axis not in AXES:
                raise SkeletonError(f"unknown axis {d.axis!r}", j.name)
            if d.axis in used:
                raise DuplicateAxis(f"axis {d.axis} listed twice", j.name)
            used.add(d.axis)
            if not d.min_deg < d.max_deg:
                raise InvalidLimitRange(f"min {d.min_deg} is not below max {d.max_deg}", j.name)
            if is_root and (d.min_deg != -ROOT_LIMIT_DEG or d.max_deg != ROOT_LIMIT_DEG):
                raise InvalidLimitRange("root DoF must span [-180, 180]", j.name)
            if abs(d.min_deg) > ROOT_LIMIT_DEG or abs(d.max_deg) > ROOT_LIMIT_DEG:
                raise InvalidLimitRange("limits must lie within [-180, 180] degrees", j.name)
            axes.append(AXES.index(d.axis))
            dof_joint.append(i)
            lo.append(d.min_deg)
            hi.append(d.max_deg)
        dof_start.append(len(axes))
        if not is_root:
            norm = float(np.linalg.norm(j.rest_direction))
            if abs(norm - 1.0) > 1e-9:
                raise InvalidRestDirection(f"rest_direction has norm {norm}, expected 1", j.name)

    root = index[spec.root]
    bone_joints = np.array([i for i in range(len(names)) if i != root], dtype=int)
    bone_index = np.full(len(names), -1, dtype=int)
    bone_index[bone_joints] = np.arange(len(bone_joints))
    dirs = np.array([j.rest_direction for j in spec.joints], dtype=float).reshape(-1, 3)
    dirs[root] = 0.0
    lengths = np.array([np.nan if j.rest_length is None else j.rest_length for j in spec.joints])

    return ValidatedSkeleton(
        spec=spec,
        bfs_order=_frozen(np.array(order, dtype=int)),
        parents=_frozen(parents),
        dof_start=_frozen(np.array(dof_start, dtype=int)),
        dof_axes=_frozen(np.array(axes, dtype=int)),
        dof_joint=_frozen(np.array(dof_joint, dtype=int)),
        dof_min=_frozen(np.radians(np.array(lo, dtype=float))),
        dof_max=_frozen(np.radians(np.array(hi, dtype=float))),
        rest_directions=_frozen(dirs),
        rest_lengths=_frozen(lengths),
        bone_index=_frozen(bone_index),
        bone_joints=_frozen(bone_joints),
        index=dict(index),
    )


SHIPPED = ("body_sign19", "hand26", "body_panoptic29", "body_h36m31")


def load_skeleton(source) -> ValidatedSkeleton:
    """Load and validate a skeleton from a path, a shipped name, or a dict."""
    if isinstance(source, (SkeletonSpec, ValidatedSkeleton)):
        return validate_skeleton(source)
    if isinstance(source, dict):
        return validate_skeleton(SkeletonSpec.from_dict(source))
    path = Path(source)
    if not path.exists():
        stem = path.name.removesuffix(".json")
        if stem not in SHIPPED:
            raise InputError(f"no skeleton file {str(source)!r}")
        text = resources.files("kinelift.data").joinpath(stem + ".json").read_text()
    else:
        text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SkeletonError(f"invalid JSON in skeleton file: {exc}") from exc
    return validate_skeleton(SkeletonSpec.from_dict(data))


def save_skeleton(skeleton, path) -> None:
    spec = skeleton.spec if isinstance(skeleton, ValidatedSkeleton) else skeleton
    Path(path).write_text(json.dumps(spec.to_dict(), indent=1) + "\n")


def default_upper_body_spec() -> SkeletonSpec:
    """19-point upper-body skeleton used for sign language."""
    return load_skeleton("body_sign19").spec


def default_hand_spec() -> SkeletonSpec:
    """21-point hand skeleton (MediaPipe point order)."""
    return load_skeleton("hand26").spec


def mirror_hand(points):
    """Reflect normalized 2D points across the vertical axis (x -> -x).

    Accepts :class:`Keypoints2D` or an array whose last axis holds (x, y).
    Confidences are carried over unchanged.
    """
    if isinstance(points, Keypoints2D):
        return Keypoints2D(mirror_hand(points.points), points.confidence.copy())
    out = np.array(points, dtype=float, copy=True)
    out[..., 0] = -out[..., 0]
    return out
