"""Synthetic data, dataset splits, network training and monocular prediction."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .camera import CameraModel, NormalizationSpec, look_at, normalize_keypoints, project_points
from .containers import Keypoints2D, Pose3D
from .errors import InputError, NonFiniteLoss
from .kinematics import angle_range, constrain_angles, fk_vjp, forward_kinematics
from .nn import ArchitectureSpec, MlpModel, default_angle_arch, default_bone_arch, init_model, mlp_backward, mlp_forward
from .objectives import LossWeights, loss_3d, loss_angular, loss_combined, loss_reprojection, wrist_weights
from .optim import AdamState, adam_step
from .skeleton import AXES, ValidatedSkeleton, mirror_hand

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ synthesis


@dataclass
class SynthConfig:
    """Sampling ranges for :func:`synth_dataset`.

    ``root_limits_deg`` gives one (min, max) pair per root DoF, in the root's
    declared axis order; the subject faces the world -z direction at zero.
    Camera distance is expressed in multiples of the skeleton's rest height.
    """

    bone_jitter: float = 0.05
    root_limits_deg: tuple = ((-30.0, 30.0), (-15.0, 15.0), (-15.0, 15.0))
    root_jitter_cm: float = 5.0
    frames_per_sequence: int = 50
    distance_factor: tuple = (3.0, 4.5)
    azimuth_deg: tuple = (-30.0, 30.0)
    elevation_deg: tuple = (-10.0, 15.0)
    focal_px: tuple = (1000.0, 1500.0)
    image_size: tuple = (1920, 1080)


HAND_SYNTH = SynthConfig(root_limits_deg=((-60.0, 60.0), (-45.0, 45.0), (-60.0, 60.0)))


@dataclass
class SynthDataset:
    """Ground truth for ``F`` frames seen by ``V`` cameras each.

    World-level arrays are indexed by frame; ``keypoints`` has shape
    ``(V, F, N, 2)``. Camera ``v`` of frame ``f`` is ``cameras[camera_index[v, f]]``.
    """

    skeleton: ValidatedSkeleton
    cameras: list[CameraModel]
    camera_index: np.ndarray
    sequence: np.ndarray
    angles: np.ndarray
    bones: np.ndarray
    translation: np.ndarray
    positions: np.ndarray
    keypoints: np.ndarray
    confidence: np.ndarray
    noise_px: float = 0.0
    seed: int = 0

    @property
    def n_frames(self) -> int:
        return len(self.angles)

    @property
    def n_views(self) -> int:
        return self.keypoints.shape[0]

    def samples(self, normalization: NormalizationSpec | None = None) -> "SampleSet":
        """Flatten (view, frame) pairs into camera-frame training samples."""
        sk = self.skeleton
        norm = normalization or NormalizationSpec.for_skeleton(sk)
        V, F = self.n_views, self.n_frames
        cams = [self.cameras[i] for i in self.camera_index.reshape(-1)]
        Rc = np.stack([c.R for c in cams]).reshape(V, F, 3, 3)
        tc = np.stack([c.t for c in cams]).reshape(V, F, 3)
        pos = np.einsum("vfij,fnj->vfni", Rc, self.positions) + tc[:, :, None]
        trans = np.einsum("vfij,fj->vfi", Rc, self.translation) + tc
        angles = np.broadcast_to(self.angles, (V, F, sk.total_dof)).copy()
        rs = sk.dof_slice(sk.root_index)
        root_axes = "".join(AXES[a] for a in sk.joint_axes(sk.root_index))
        R_root = Rotation.from_euler(root_axes.upper(), self.angles[:, rs]).as_matrix()
        for v in range(V):
            angles[v, :, rs] = Rotation.from_matrix(Rc[v] @ R_root).as_euler(root_axes.upper())
        kp = self.keypoints.reshape(V * F, sk.n_joints, 2)
        conf = self.confidence.reshape(V * F, sk.n_joints)
        return SampleSet(
            skeleton=sk,
            input2d=normalize_keypoints(kp, norm, conf),
            gt_pose=pos.reshape(V * F, sk.n_joints, 3),
            gt_angles=angles.reshape(V * F, -1),
            gt_bones=np.broadcast_to(self.bones, (V, F, sk.n_bones)).reshape(V * F, -1).copy(),
            gt_root=trans.reshape(V * F, 3),
            gt2d=kp.copy(),
            confidence=conf.copy(),
            K=np.stack([c.K for c in cams]),
            sequence=np.broadcast_to(self.sequence, (V, F)).reshape(-1).copy(),
            normalization=norm,
        )


@dataclass
class SampleSet:
    """Monocular training samples; every array is indexed by sample.

    ``gt_angles`` carry camera-frame root rotations; ``gt_root`` is the
    camera-frame root position. Optional fields may be None.
    """

    skeleton: ValidatedSkeleton
    input2d: np.ndarray
    gt_pose: np.ndarray
    gt_angles: np.ndarray | None = None
    gt_bones: np.ndarray | None = None
    gt_root: np.ndarray | None = None
    gt2d: np.ndarray | None = None
    confidence: np.ndarray | None = None
    K: np.ndarray | None = None
    sequence: np.ndarray | None = None
    normalization: NormalizationSpec | None = None

    def __len__(self):
        return len(self.input2d)

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx)
        pick = lambda a: None if a is None else a[idx]
        return SampleSet(
            self.skeleton,
            self.input2d[idx],
            pick(self.gt_pose),
            pick(self.gt_angles),
            pick(self.gt_bones),
            pick(self.gt_root),
            pick(self.gt2d),
            pick(self.confidence),
            pick(self.K),
            pick(self.sequence),
            self.normalization,
        )


def _rest_extent(skeleton):
    pos = forward_kinematics(skeleton, np.zeros(skeleton.total_dof), skeleton.nominal_bones()).positions
    return pos, float(np.ptp(pos[:, 1]))


def synth_dataset(
    skeleton: ValidatedSkeleton,
    n_frames: int,
    n_cameras: int = 1,
    noise_px: float = 0.0,
    seed: int = 0,
    config: SynthConfig | None = None,
) -> SynthDataset:
    """Random poses within joint limits, projected into randomized cameras.

    Non-root angles are uniform within limits; root rotation is uniform
    within ``config.root_limits_deg``. Each sequence of
    ``frames_per_sequence`` frames shares one subject (bone lengths, nominal
    times a uniform ``1 +- bone_jitter`` factor per bone) and one camera rig.
    Gaussian noise of ``noise_px`` pixels is added to the projections.
    """
    if n_frames < 1 or n_cameras < 1:
        raise InputError("n_frames and n_cameras must be at least 1")
    config = config or SynthConfig()
    sk = skeleton
    rng = np.random.default_rng(seed)
    F, V = n_frames, n_cameras
    fps = max(1, config.frames_per_sequence)
    n_seq = -(-F // fps)
    sequence = np.arange(F) // fps

    nominal = sk.nominal_bones()
    subject_bones = nominal * rng.uniform(1 - config.bone_jitter, 1 + config.bone_jitter, (n_seq, sk.n_bones))
    bones = subject_bones[sequence]

    angles = rng.uniform(sk.dof_min, sk.dof_max, (F, sk.total_dof))
    rs = sk.dof_slice(sk.root_index)
    lim = np.radians(np.asarray(config.root_limits_deg, dtype=float))
    angles[:, rs] = rng.uniform(lim[:, 0], lim[:, 1], (F, 3))
    translation = rng.normal(0.0, config.root_jitter_cm, (F, 3))
    positions = forward_kinematics(sk, angles, bones, translation).positions

    rest, height = _rest_extent(sk)
    target0 = rest.mean(axis=0)
    cameras, camera_index = [], np.zeros((V, F), dtype=int)
    w, h = config.image_size
    for s in range(n_seq):
        for v in range(V):
            dist = height * rng.uniform(*config.distance_factor)
            az = np.radians(rng.uniform(*config.azimuth_deg))
            el = np.radians(rng.uniform(*config.elevation_deg))
            # subject faces -z; cameras sit in front of it, elevation lifts them (y is down)
            offset = dist * np.array([np.sin(az) * np.cos(el), -np.sin(el), -np.cos(az) * np.cos(el)])
            target = target0 + rng.normal(0.0, 0.05 * height, 3)
            R, t = look_at(target + offset, target)
            f = rng.uniform(*config.focal_px)
            cam = CameraModel.from_params(f, f, w / 2, h / 2, R=R, t=t, name=f"seq{s}_cam{v}")
            camera_index[v, sequence == s] = len(cameras)
            cameras.append(cam)

    keypoints = np.empty((V, F, sk.n_joints, 2))
    for v in range(V):
        for s in range(n_seq):
            sel = sequence == s
            cam = cameras[camera_index[v, np.argmax(sel)]]
            keypoints[v, sel] = project_points(positions[sel] @ cam.R.T + cam.t, cam.K)
    if noise_px > 0:
        keypoints = keypoints + rng.normal(0.0, noise_px, keypoints.shape)
    return SynthDataset(
        skeleton=sk,
        cameras=cameras,
        camera_index=camera_index,
        sequence=sequence,
        angles=angles,
        bones=bones,
        translation=translation,
        positions=positions,
        keypoints=keypoints,
        confidence=np.ones(keypoints.shape[:-1]),
        noise_px=float(noise_px),
        seed=int(seed),
    )


# ---------------------------------------------------------------------- splits


class TooFewSequences(InputError):
    pass


@dataclass
class DatasetSplit:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    sequences: dict = field(default_factory=dict)


def split_dataset(sequence_ids, seed: int = 0, ratios=(0.8, 0.1, 0.1)) -> DatasetSplit:
    """Partition sample indices 80/10/10 by sequence, never splitting a sequence.

    ``sequence_ids`` gives the sequence of every sample; whole sequences are
    shuffled with ``seed`` and dealt out by count.
    """
    seq = np.asarray(sequence_ids)
    uniq = np.unique(seq)
    if len(uniq) < 10:
        raise TooFewSequences(f"need at least 10 sequences, got {len(uniq)}")
    order = np.random.default_rng(seed).permutation(uniq)
    n = len(order)
    n_val = int(round(ratios[1] * n))
    n_test = int(round(ratios[2] * n))
    n_train = n - n_val - n_test
    parts = {"train": order[:n_train], "val": order[n_train : n_train + n_val], "test": order[n_train + n_val :]}
    idx = {k: np.flatnonzero(np.isin(seq, v)) for k, v in parts.items()}
    return DatasetSplit(idx["train"], idx["val"], idx["test"], parts)


# -------------------------------------------------------------------- training


class MissingSupervision(InputError):
    pass


class MissingBodyInput(InputError):
    pass


@dataclass
class TrainConfig:
    """Mini-batch Adam settings shared by both networks.

    The learning rate is multiplied by ``lr_factor`` (down to ``lr_min``)
    after ``lr_patience`` epochs without a new best validation loss;
    training stops after ``patience`` such epochs.
    """

    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 10
    lr_patience: int = 5
    lr_factor: float = 0.5
    lr_min: float = 1e-6
    seed: int = 0
    log_path: str | None = None


def _require(samples, *names):
    missing = [n for n in names if getattr(samples, n) is None]
    if missing:
        raise MissingSupervision(f"samples lack {', '.join(missing)}")


class _AdamGroup:
    """One Adam state per parameter array, updated in place."""

    def __init__(self, arrays, cfg: TrainConfig):
        hyper = dict(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
        self.states = [AdamState.zeros_like(a, **hyper) for a in arrays]

    def step(self, arrays, grads, lr=None):
        for k, (a, g) in enumerate(zip(arrays, grads)):
            new, self.states[k] = adam_step(a, g, self.states[k], lr=lr)
            a[...] = new


class AngleObjective:
    """Training loss of the angle network for one batch.

    Terms: ``"angular"`` (needs gt_angles, no FK), ``"3d"`` (FK with GT
    bones and root against gt_pose, per-joint weighted) and
    ``"reprojection"`` (FK, then projection with each sample's K against
    gt2d). Terms are combined by :func:`loss_combined`.
    """

    def __init__(self, skeleton, weights: LossWeights | None = None):
        self.skeleton = skeleton
        self.weights = weights or LossWeights(joint=wrist_weights(skeleton))
        self.needs_fk = any(k in ("3d", "reprojection") for k in self._enabled())

    def _enabled(self):
        w = self.weights
        if w.mode == "kendall":
            return [k for k in w.terms]
        return [k for k, v in w.terms.items() if v]

    def check(self, samples):
        need = {"angular": ("gt_angles",), "3d": ("gt_bones", "gt_root", "gt_pose"),
                "reprojection": ("gt_bones", "gt_root", "gt2d", "K")}
        for term in self._enabled():
            if term not in need:
                raise InputError(f"unknown loss term {term!r}")
            _require(samples, *need[term])

    def __call__(self, raw, samples, need_grad=True):
        """Loss value, d(loss)/d(raw network output) and d(loss)/d(log-variances)."""
        sk = self.skeleton
        angles = constrain_angles(raw, sk)
        terms, grads = {}, {}
        enabled = self._enabled()
        if "angular" in enabled:
            terms["angular"], grads["angular"] = loss_angular(angles, samples.gt_angles)
        fk = None
        if self.needs_fk:
            fk = forward_kinematics(sk, angles, samples.gt_bones, samples.gt_root)
        if "3d" in enabled:
            terms["3d"], grads["3d"] = loss_3d(fk.positions, samples.gt_pose, self.weights.joint)
        if "reprojection" in enabled:
            terms["reprojection"], grads["reprojection"] = loss_reprojection(
                fk.positions, samples.K, samples.gt2d, weights=samples.confidence
            )
        value, d_terms, d_s = loss_combined(terms, self.weights)
        if not np.isfinite(value):
            raise NonFiniteLoss("training loss is not finite")
        if not need_grad:
            return value, None, d_s
        g_angles = np.zeros_like(angles)
        g_pos = None
        for k, d in d_terms.items():
            if k == "angular":
                g_angles += d * grads[k]
            else:
                g_pos = d * grads[k] if g_pos is None else g_pos + d * grads[k]
        if g_pos is not None:
            g_angles += fk_vjp(sk, fk, g_pos)[0]
        return value, g_angles * angle_range(sk), d_s


def _batches(n, size, rng):
    order = rng.permutation(n)
    return [order[i : i + size] for i in range(0, n, size)]


def _fit(model, forward_loss, train, val, cfg: TrainConfig, extra=None, name="net"):
    """Generic mini-batch loop: returns (best-val model, log rows).

    ``forward_loss(model, samples, need_grad)`` gives ``(value, grads, d_extra)``
    with grads a list matching ``model.params()``; ``extra`` is an optional
    dict of learnable scalars (Kendall log-variances) updated alongside.
    """
    rng = np.random.default_rng(cfg.seed)
    params = model.params()
    opt = _AdamGroup(params, cfg)
    extra_keys = sorted(extra) if extra else []
    extra_vec = np.array([extra[k] for k in extra_keys], dtype=float)
    extra_state = AdamState.zeros_like(extra_vec, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    val = val if val is not None and len(val) else train

    def val_loss():
        return forward_loss(model, val, False)[0]

    best_val = val_loss()
    best = model.copy()
    best_extra = extra_vec.copy()
    rows = [dict(epoch=0, train_loss=float("nan"), val_loss=best_val, lr=cfg.lr, wall_ms=0.0)]
    since, stale, lr = 0, 0, cfg.lr
    t0 = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        total, count = 0.0, 0
        for idx in _batches(len(train), cfg.batch_size, rng):
            value, grads, d_extra = forward_loss(model, train.subset(idx), True)
            opt.step(params, grads, lr)
            if extra_keys:
                g = np.array([d_extra.get(k, 0.0) for k in extra_keys])
                extra_vec, extra_state = adam_step(extra_vec, g, extra_state, lr=lr)
                extra.update(zip(extra_keys, extra_vec.tolist()))
            total += value * len(idx)
            count += len(idx)
        v = val_loss()
        rows.append(
            dict(epoch=epoch, train_loss=total / count, val_loss=v, lr=lr,
                 wall_ms=1e3 * (time.perf_counter() - t0))
        )
        log.info("%s epoch %d: train %.5g val %.5g lr %.3g", name, epoch, total / count, v, lr)
        if v < best_val:
            best_val, best, best_extra, since, stale = v, model.copy(), extra_vec.copy(), 0, 0
        else:
            since += 1
            stale += 1
            if since >= cfg.patience:
                break
            if stale >= cfg.lr_patience:
                lr, stale = max(lr * cfg.lr_factor, min(lr, cfg.lr_min)), 0
    if extra_keys:
        extra.update(zip(extra_keys, best_extra.tolist()))
    if cfg.log_path:
        write_training_log(rows, cfg.log_path)
    return best, rows


def write_training_log(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_loss", "lr", "wall_ms"])
        writer.writeheader()
        writer.writerows(rows)


def train_angle_net(
    train: SampleSet,
    val: SampleSet | None = None,
    weights: LossWeights | None = None,
    arch: ArchitectureSpec | None = None,
    config: TrainConfig | None = None,
    model: MlpModel | None = None,
):
    """Train the angle network through constrain -> FK -> loss.

    Returns ``(model, log)``; the model is the one with the lowest
    validation loss (the training set stands in when ``val`` is empty).
    With only the angular term no forward kinematics is evaluated.
    """
    sk = train.skeleton
    cfg = config or TrainConfig()
    objective = AngleObjective(sk, weights)
    objective.check(train)
    if val is not None and len(val):
        objective.check(val)
    if model is None:
        model = init_model(arch or default_angle_arch(sk), cfg.seed)
    model.meta.update(skeleton=sk.name, normalization=train.normalization.to_dict() if train.normalization else None)
    kendall = objective.weights.mode == "kendall"
    if kendall:
        for k in objective._enabled():
            objective.weights.log_vars.setdefault(k, 0.0)

    def forward_loss(m, samples, need_grad):
        raw, cache = mlp_forward(m, samples.input2d)
        value, g_raw, d_s = objective(raw, samples, need_grad)
        if not need_grad:
            return value, None, d_s
        return value, mlp_backward(m, cache, g_raw).arrays(), d_s

    return _fit(model, forward_loss, train, val, cfg, objective.weights.log_vars if kendall else None, "angles")


def bone_output_scale(skeleton) -> np.ndarray:
    """Scale making a zero pre-activation softplus output the nominal lengths."""
    return skeleton.nominal_bones() / np.log(2.0)


def train_bone_net(
    train: SampleSet,
    val: SampleSet | None = None,
    arch: ArchitectureSpec | None = None,
    config: TrainConfig | None = None,
    weights: np.ndarray | None = None,
    model: MlpModel | None = None,
):
    """Train the bone-length network.

    With GT angles (plus root and pose) the predicted lengths go through FK
    with those angles and the 3D loss is used; otherwise the loss is the
    mean absolute difference to GT lengths.
    """
    sk = train.skeleton
    cfg = config or TrainConfig()
    fk_mode = all(getattr(train, n) is not None for n in ("gt_angles", "gt_root", "gt_pose"))
    if not fk_mode and train.gt_bones is None:
        raise MissingSupervision("bone training needs gt_bones or gt_angles with gt_pose")
    if model is None:
        model = init_model(arch or default_bone_arch(sk), cfg.seed)
        model.output_scale = bone_output_scale(sk)
    model.meta.update(
        skeleton=sk.name,
        normalization=train.normalization.to_dict() if train.normalization else None,
        supervision="fk" if fk_mode else "direct",
    )
    joint_w = wrist_weights(sk) if weights is None else weights

    def forward_loss(m, samples, need_grad):
        bones, cache = mlp_forward(m, samples.input2d)
        if fk_mode:
            fk = forward_kinematics(sk, samples.gt_angles, bones, samples.gt_root)
            value, g_pos = loss_3d(fk.positions, samples.gt_pose, joint_w)
            g = fk_vjp(sk, fk, g_pos)[1] if need_grad else None
        else:
            diff = bones - samples.gt_bones
            value, g = float(np.mean(np.abs(diff))), np.sign(diff) / diff.size
        if not np.isfinite(value):
            raise NonFiniteLoss("training loss is not finite")
        if not need_grad:
            return value, None, {}
        return value, mlp_backward(m, cache, g).arrays(), {}

    return _fit(model, forward_loss, train, val, cfg, None, "bones")


# ------------------------------------------------------------------ prediction


@dataclass
class LiftingModels:
    """Trained networks and skeletons for :func:`predict_pose`.

    The hand networks are trained on right hands; left hands are mirrored
    on the way in and out. Hand entries may be None for body-only lifting.
    """

    body_skeleton: ValidatedSkeleton
    body_angles: MlpModel
    body_bones: MlpModel
    hand_skeleton: ValidatedSkeleton | None = None
    hand_angles: MlpModel | None = None
    hand_bones: MlpModel | None = None
    body_norm: NormalizationSpec | None = None
    hand_norm: NormalizationSpec | None = None

    def __post_init__(self):
        self.body_norm = self.body_norm or NormalizationSpec.for_skeleton(self.body_skeleton)
        if self.hand_skeleton is not None:
            self.hand_norm = self.hand_norm or NormalizationSpec.for_skeleton(self.hand_skeleton)

    @property
    def has_hands(self) -> bool:
        return self.hand_skeleton is not None and self.hand_angles is not None and self.hand_bones is not None

    def joint_names(self) -> tuple[str, ...]:
        names = tuple(self.body_skeleton.joint_names)
        if self.hand_skeleton is not None:
            for side in ("left", "right"):
                names += tuple(f"{side}_hand_{n}" for n in self.hand_skeleton.joint_names)
        return names


def _points_conf(kp, n):
    if isinstance(kp, Keypoints2D):
        pts, conf = kp.points, kp.confidence
    else:
        pts, conf = np.asarray(kp, dtype=float), None
    if pts.shape[-2:] != (n, 2):
        raise InputError(f"expected {n} keypoints, got shape {pts.shape}")
    return pts, conf


def lift(skeleton, angle_model, bone_model, norm, kp, root=None):
    """Angles, bones and FK result for one skeleton from 2D keypoints (single or batched)."""
    pts, conf = _points_conf(kp, skeleton.n_joints)
    x = normalize_keypoints(pts, norm, conf)
    raw, _ = mlp_forward(angle_model, x)
    angles = constrain_angles(raw, skeleton)
    bones, _ = mlp_forward(bone_model, x)
    return angles, bones, forward_kinematics(skeleton, angles, bones, root)


def predict_pose(models: LiftingModels, kp_body, kp_lhand=None, kp_rhand=None) -> Pose3D:
    """Monocular 3D pose of body and hands from 2D keypoints.

    The body root sits at the origin of the camera frame (translation is
    not predicted). Each hand is lifted by the shared right-hand networks,
    the left one mirrored in and out, and translated so its wrist coincides
    with the body wrist; its orientation is the one predicted for the hand.
    A hand without input (or without hand models) is returned as NaN
    joints flagged invalid. Accepts single frames or batches.
    """
    if kp_body is None:
        raise MissingBodyInput("body keypoints are required")
    bsk = models.body_skeleton
    _, _, body = lift(bsk, models.body_angles, models.body_bones, models.body_norm, kp_body)
    P = body.positions
    batched = P.ndim == 3
    parts, valid = [P], [np.ones(P.shape[:-1], dtype=bool)]
    if models.hand_skeleton is not None:
        hsk = models.hand_skeleton
        n = hsk.n_joints
        for side, kp in (("left", kp_lhand), ("right", kp_rhand)):
            wrist = bsk.index[f"{side}_wrist"]
            shape = P.shape[:-2] + (n, 3)
            if kp is None or not models.has_hands:
                parts.append(np.full(shape, np.nan))
                valid.append(np.zeros(shape[:-1], dtype=bool))
                continue
            if side == "left":
                kp = mirror_hand(kp)
            _, _, hand = lift(hsk, models.hand_angles, models.hand_bones, models.hand_norm, kp)
            H = hand.positions - hand.positions[..., hsk.root_index : hsk.root_index + 1, :]
            if side == "left":
                H = H * np.array([-1.0, 1.0, 1.0])
            parts.append(H + P[..., wrist : wrist + 1, :])
            valid.append(np.ones(shape[:-1], dtype=bool))
    positions = np.concatenate(parts, axis=-2)
    mask = np.concatenate(valid, axis=-1)
    if not batched:
        return Pose3D(positions, "camera", models.joint_names(), valid=mask)
    return [Pose3D(p, "camera", models.joint_names(), valid=m) for p, m in zip(positions, mask)]
