"""File formats: keypoint and pose JSONL, cameras, parameter records, datasets, exports.

Floats are written with Python's shortest round-trip representation, so
every save/load pair reproduces arrays bit for bit.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .camera import CameraModel
from .containers import Keypoints2D, Pose3D
from .errors import InputError, ParseError, UnsupportedFormat
from .skeleton import SkeletonSpec, ValidatedSkeleton, load_skeleton, validate_skeleton

EXPORT_FORMATS = ("jsonl", "csv", "obj")


class PointCountMismatch(InputError):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, allow_nan=True)


def _records(path):
    """Yield ``(line_number, dict)`` for every non-blank JSONL line."""
    with open(path) as fh:
        for no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: invalid JSON ({exc.msg})", no) from exc
            if not isinstance(rec, dict):
                raise ParseError(f"{path}: record is not an object", no)
            yield no, rec


# ------------------------------------------------------------------ keypoints


def iter_keypoints(path, n_points: int | None = None):
    """Stream ``(frame, Keypoints2D)`` from ``{"frame": int, "points": [[x, y, conf?], ...]}`` lines.

    Missing confidences default to 1.0. ``n_points`` (if given) is enforced.
    """
    for no, rec in _records(path):
        if "points" not in rec:
            raise ParseError(f"{path}: record lacks 'points'", no)
        try:
            rows = [list(map(float, p)) for p in rec["points"]]
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{path}: malformed points ({exc})", no) from exc
        if any(len(r) not in (2, 3) for r in rows):
            raise ParseError(f"{path}: every point needs 2 or 3 numbers", no)
        if n_points is not None and len(rows) != n_points:
            raise PointCountMismatch(f"{path} line {no}: expected {n_points} points, got {len(rows)}")
        pts = np.array([r[:2] for r in rows], dtype=float).reshape(-1, 2)
        conf = np.array([r[2] if len(r) == 3 else 1.0 for r in rows], dtype=float)
        try:
            kp = Keypoints2D(pts, conf)
        except InputError as exc:
            raise ParseError(f"{path}: {exc}", no) from exc
        yield int(rec.get("frame", no - 1)), kp


def load_keypoints(path, n_points: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Whole keypoint file as ``(frames (F,), points (F, N, 2), confidence (F, N))``."""
    frames, pts, conf = [], [], []
    for f, kp in iter_keypoints(path, n_points):
        if pts and len(kp.points) != len(pts[0]):
            raise PointCountMismatch(f"{path}: frames have different point counts")
        frames.append(f)
        pts.append(kp.points)
        conf.append(kp.confidence)
    n = n_points or 0
    if not pts:
        return np.zeros(0, dtype=int), np.zeros((0, n, 2)), np.zeros((0, n))
    return np.array(frames), np.stack(pts), np.stack(conf)


def save_keypoints(path, points, confidence=None, frames=None) -> None:
    points = np.asarray(points, dtype=float)
    conf = np.ones(points.shape[:-1]) if confidence is None else np.asarray(confidence, dtype=float)
    frames = range(len(points)) if frames is None else frames
    with open(path, "w") as fh:
        for f, p, c in zip(frames, points, conf):
            rows = [[x, y, w] for (x, y), w in zip(p.tolist(), c.tolist())]
            fh.write(_dump({"frame": int(f), "points": rows}) + "\n")


# ---------------------------------------------------------------------- poses


def pose_record(pose: Pose3D, frame: int) -> dict:
    rec = {"frame": int(frame), "frame_kind": pose.frame, "positions_cm": pose.positions.tolist()}
    if pose.joint_names is not None:
        rec["joint_names"] = list(pose.joint_names)
    if not pose.valid.all():
        rec["valid"] = pose.valid.tolist()
    if pose.confidence is not None:
        rec["confidence"] = np.asarray(pose.confidence).tolist()
    return rec


def iter_poses(path):
    """Stream ``(frame, Pose3D)`` from Pose3D JSONL."""
    for no, rec in _records(path):
        if "positions_cm" not in rec:
            raise ParseError(f"{path}: record lacks 'positions_cm'", no)
        try:
            pos = np.array(rec["positions_cm"], dtype=float)
            pose = Pose3D(
                pos.reshape(-1, 3) if pos.size == 0 else pos,
                rec.get("frame_kind", "camera"),
                rec.get("joint_names"),
                rec.get("confidence"),
                rec.get("valid"),
            )
        except (InputError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: {exc}", no) from exc
        yield int(rec.get("frame", no - 1)), pose


def load_poses(path) -> list[Pose3D]:
    return [p for _, p in iter_poses(path)]


def save_poses(path, poses, frames=None) -> None:
    """Write poses (list of Pose3D) as JSONL; ``path`` may be an open text stream."""
    frames = range(len(poses)) if frames is None else frames
    lines = "".join(_dump(pose_record(p, f)) + "\n" for f, p in zip(frames, poses))
    if hasattr(path, "write"):
        path.write(lines)
    else:
        Path(path).write_text(lines)


# -------------------------------------------------------------------- cameras


def load_cameras(path) -> list[CameraModel]:
    """A camera JSON object or a list of them."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc.msg})", exc.lineno) from exc
    items = data if isinstance(data, list) else [data]
    return [CameraModel.from_dict(d) for d in items]


def save_cameras(path, cameras) -> None:
    Path(path).write_text(json.dumps([c.to_dict() for c in cameras], indent=1) + "\n")


# ----------------------------------------------------------- parameter files


def load_parameters(path) -> list[dict]:
    """Angle/bone/translation records from a JSON object, a JSON list or JSONL.

    Each record holds ``angles`` (radians) or ``angles_deg`` and optionally
    ``bones`` and ``translation``; arrays are returned as float arrays.
    """
    text = Path(path).read_text()
    try:
        data = json.loads(text)
        items = data if isinstance(data, list) else [data]
        numbered = list(enumerate(items, 1))
    except json.JSONDecodeError:
        numbered = list(_records(path))
    out = []
    for no, rec in numbered:
        if not isinstance(rec, dict):
            raise ParseError(f"{path}: record is not an object", no)
        if "angles" in rec:
            angles = np.array(rec["angles"], dtype=float)
        elif "angles_deg" in rec:
            angles = np.radians(np.array(rec["angles_deg"], dtype=float))
        else:
            raise ParseError(f"{path}: record lacks 'angles'", no)
        item = {"angles": angles}
        for key in ("bones", "translation"):
            if rec.get(key) is not None:
                item[key] = np.array(rec[key], dtype=float)
        out.append(item)
    return out


# -------------------------------------------------------------------- datasets


def save_dataset(ds, directory) -> Path:
    """Write a :class:`~kinelift.training.SynthDataset` to ``directory``.

    ``meta.json`` holds the skeleton, cameras and per-frame ground truth;
    ``view<v>.jsonl`` the keypoints of each view; ``poses.jsonl`` the
    world-frame joint positions.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {
        "skeleton": ds.skeleton.spec.to_dict(),
        "cameras": [c.to_dict() for c in ds.cameras],
        "camera_index": ds.camera_index.tolist(),
        "sequence": ds.sequence.tolist(),
        "angles": ds.angles.tolist(),
        "bones": ds.bones.tolist(),
        "translation": ds.translation.tolist(),
        "noise_px": ds.noise_px,
        "seed": ds.seed,
        "n_views": ds.n_views,
    }
    (d / "meta.json").write_text(_dump(meta))
    for v in range(ds.n_views):
        save_keypoints(d / f"view{v}.jsonl", ds.keypoints[v], ds.confidence[v])
    names = ds.skeleton.joint_names
    save_poses(d / "poses.jsonl", [Pose3D(p, "world", names) for p in ds.positions])
    return d


def load_dataset(directory):
    from .training import SynthDataset

    d = Path(directory)
    try:
        meta = json.loads((d / "meta.json").read_text())
    except FileNotFoundError as exc:
        raise InputError(f"{d} is not a dataset directory (no meta.json)") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{d / 'meta.json'}: invalid JSON ({exc.msg})", exc.lineno) from exc
    try:
        sk = validate_skeleton(SkeletonSpec.from_dict(meta["skeleton"]))
    except (KeyError, TypeError) as exc:
        raise InputError(f"{d / 'meta.json'}: malformed skeleton ({exc})") from exc
    kps, confs = [], []
    for v in range(int(meta["n_views"])):
        _, pts, conf = load_keypoints(d / f"view{v}.jsonl", sk.n_joints)
        kps.append(pts)
        confs.append(conf)
    positions = np.stack([p.positions for p in load_poses(d / "poses.jsonl")])
    return SynthDataset(
        skeleton=sk,
        cameras=[CameraModel.from_dict(c) for c in meta["cameras"]],
        camera_index=np.array(meta["camera_index"], dtype=int),
        sequence=np.array(meta["sequence"], dtype=int),
        angles=np.array(meta["angles"], dtype=float),
        bones=np.array(meta["bones"], dtype=float),
        translation=np.array(meta["translation"], dtype=float),
        positions=positions,
        keypoints=np.stack(kps),
        confidence=np.stack(confs),
        noise_px=float(meta["noise_px"]),
        seed=int(meta["seed"]),
    )


# --------------------------------------------------------------------- export


def skeleton_edges(skeleton: ValidatedSkeleton) -> list[tuple[int, int]]:
    return [(int(skeleton.parents[k]), int(k)) for k in skeleton.bone_joints]


def combined_edges(body: ValidatedSkeleton, hand: ValidatedSkeleton) -> list[tuple[int, int]]:
    """Edges of a body pose followed by left and right hand joints, hands hung from the wrists."""
    edges = skeleton_edges(body)
    n, m = body.n_joints, hand.n_joints
    for k, side in enumerate(("left", "right")):
        base = n + k * m
        edges += [(base + a, base + b) for a, b in skeleton_edges(hand)]
        edges.append((body.index[f"{side}_wrist"], base + hand.root_index))
    return edges


def export_poses(poses, path, fmt: str = "jsonl", edges=None) -> None:
    """Write poses as ``jsonl`` (Pose3D records), ``csv`` (one row per joint and frame)
    or ``obj`` (joints as vertices, ``edges`` as line elements, one object per frame).

    ``edges`` are (parent, child) joint index pairs; only edges between two
    valid joints are written.
    """
    if fmt not in EXPORT_FORMATS:
        raise UnsupportedFormat(f"unknown export format {fmt!r}; expected one of {EXPORT_FORMATS}")
    if fmt == "jsonl":
        save_poses(path, poses)
        return
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "joint", "name", "x_cm", "y_cm", "z_cm", "valid"])
            for f, pose in enumerate(poses):
                names = pose.joint_names or [""] * len(pose)
                for j, (p, name, ok) in enumerate(zip(pose.positions.tolist(), names, pose.valid.tolist())):
                    w.writerow([f, j, name, *map(repr, p), int(ok)])
        return
    lines, base = [], 0
    for f, pose in enumerate(poses):
        lines.append(f"o frame{f}")
        lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in np.nan_to_num(pose.positions).tolist()]
        for a, b in edges or ():
            if pose.valid[a] and pose.valid[b]:
                lines.append(f"l {base + a + 1} {base + b + 1}")
        base += len(pose)
    Path(path).write_text("".join(line + "\n" for line in lines))


def load_skeleton_arg(source) -> ValidatedSkeleton:
    """Skeleton from a path or a shipped name (with or without ``.json``)."""
    s = str(source)
    if not Path(s).exists() and s.endswith(".json"):
        s = Path(s).stem
    return load_skeleton(s)
