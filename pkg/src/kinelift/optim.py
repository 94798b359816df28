"""Adam, a central-difference gradient oracle, and multiview inverse kinematics.

The IK fitter recovers joint angles, bone lengths and the root translation
that best explain 2D observations from calibrated cameras. It runs Adam on
unconstrained variables: a logit per angle (mapped through the sigmoid onto
the joint's limit range) and a log per bone length, so limits and positivity
hold for every iterate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation

from .camera import CameraModel, project_jacobian, project_points, triangulate
from .containers import Keypoints2D
from .errors import DivergedNonFinite, InputError, LengthMismatch, NonFiniteFunction
from .kinematics import angle_range, constrain_angles, forward_kinematics, fk_vjp, unconstrain_angles
from .skeleton import AXES, ValidatedSkeleton

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **hyper) -> "AdamState":
        params = np.asarray(params)
        return cls(np.zeros(params.shape), np.zeros(params.shape), 0, **hyper)


def adam_step(params, grads, state: AdamState, lr=None):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``.

    Inputs are not modified. ``lr`` overrides ``state.lr`` for this step.
    """
    params = np.asarray(params, dtype=float)
    g = np.asarray(grads, dtype=float)
    if params.shape != g.shape or state.m.shape != params.shape:
        raise LengthMismatch(f"params {params.shape}, grads {g.shape}, state {state.m.shape}")
    lr = state.lr if lr is None else lr
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, replace(state, m=m, v=v, t=t)


def numerical_gradient(f, x, eps=1e-6) -> np.ndarray:
    """Central differences ``(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`` for every coordinate."""
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NonFiniteFunction(f"f is not finite around coordinate {i}")
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


# --------------------------------------------------------------------------- IK


class NoViews(InputError):
    pass


@dataclass
class IkProblem:
    """Observations of one skeleton from calibrated cameras.

    ``observations`` has shape ``(V, N, 2)`` for a single frame or
    ``(V, F, N, 2)`` for F frames fitted together (frames stay independent).
    ``confidence`` matches it without the last axis. ``targets3d``
    (world-frame, ``(N, 3)`` or ``(F, N, 3)``) enables an extra 3D term.
    """

    skeleton: ValidatedSkeleton
    cameras: list[CameraModel]
    observations: np.ndarray
    confidence: np.ndarray | None = None
    bones: np.ndarray | None = None
    targets3d: np.ndarray | None = None
    optimize_angles: bool = True
    optimize_bones: bool = True
    optimize_translation: bool = True

    def __post_init__(self):
        if not self.cameras:
            raise NoViews("IK needs at least one camera view")
        obs = self.observations
        if isinstance(obs, (list, tuple)) and obs and isinstance(obs[0], Keypoints2D):
            self.confidence = np.stack([k.confidence for k in obs])
            obs = np.stack([k.points for k in obs])
        self.observations = np.asarray(obs, dtype=float)
        if len(self.observations) != len(self.cameras):
            raise NoViews(f"{len(self.cameras)} cameras but {len(self.observations)} observation sets")
        if self.observations.shape[-2:] != (self.skeleton.n_joints, 2):
            raise LengthMismatch(
                f"observations must have {self.skeleton.n_joints} points, got shape {self.observations.shape}"
            )
        if self.confidence is None:
            self.confidence = np.ones(self.observations.shape[:-1])
        self.confidence = np.asarray(self.confidence, dtype=float)
        if not self.optimize_bones and self.bones is None:
            raise InputError("fixed bone lengths requested but none supplied")

    @property
    def batched(self) -> bool:
        return self.observations.ndim == 4

    @property
    def n_frames(self) -> int:
        return self.observations.shape[1] if self.batched else 1


@dataclass
class IkConfig:
    """Optimizer settings for :func:`ik_fit` and the multiview pre-fit in :func:`initial_guess`.

    ``residual_3d`` selects the 3D term: ``"positions"`` (squared joint
    distances) or ``"bones"`` (squared differences of child-minus-parent
    vectors, insensitive to the root position). The pre-fit matches bone
    vectors of the triangulated joints from ``init_starts`` random starting
    points per frame for ``init_iters`` iterations, then refines the best
    one for ``init_refine`` iterations; ``init_starts = 0`` disables it.
    """

    iters: int = 2000
    lr: float = 1e-2
    lr_final: float = 1e-4
    tol: float = 1e-7
    patience: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    squared: bool = True
    weight_3d: float = 1.0
    residual_3d: str = "positions"
    plateau_window: int = 100
    plateau_rel: float = 0.01
    plateau_factor: float = 0.5
    assumed_depth: float = 300.0
    init_starts: int = 24
    init_iters: int = 600
    init_refine: int = 2000
    init_lr: float = 3e-2
    init_lr_final: float = 1e-5
    seed: int = 0


@dataclass
class IkInit:
    angles: np.ndarray
    bones: np.ndarray
    translation: np.ndarray


@dataclass
class IkResult:
    angles: np.ndarray
    bones: np.ndarray
    translation: np.ndarray
    positions: np.ndarray
    final_loss: float
    n_iter: int
    history: list = field(repr=False, default_factory=list)


_RAW_CLIP = 1e-3


def _logit(p):
    p = np.clip(p, _RAW_CLIP, 1.0 - _RAW_CLIP)
    return np.log(p) - np.log1p(-p)


def _sigmoid(u):
    return 0.5 * (1.0 + np.tanh(0.5 * u))


def _root_euler(skeleton, rotation):
    """Root DoF angles reproducing ``rotation`` (intrinsic, declared axis order)."""
    axes = "".join(AXES[a] for a in skeleton.joint_axes(skeleton.root_index))
    return Rotation.from_matrix(rotation).as_euler(axes.upper(), degrees=False)


def initial_guess(problem: IkProblem, config: IkConfig | None = None) -> IkInit:
    """Deterministic starting point for :func:`ik_fit`.

    Angles start at range midpoints. With two or more views, joints are
    triangulated: bones take the triangulated lengths, the translation the
    triangulated root, and the root rotation the best rigid fit of the rest
    pose; the remaining angles are then pre-fitted to the triangulated bone
    vectors from several random starts (see :class:`IkConfig`). A single
    view falls back to nominal bones scaled by the median 2D
    bone length back-projected at ``assumed_depth``, with the root placed on
    the ray through its detection; the reprojection fit is then run from
    several random starts and the best one per frame kept. Depth stays
    ambiguous from one view.
    """
    config = config or IkConfig()
    sk = problem.skeleton
    F = problem.n_frames
    obs = problem.observations if problem.batched else problem.observations[:, None]
    conf = problem.confidence if problem.batched else problem.confidence[:, None]
    raw_mid = np.full((F, sk.total_dof), 0.5)
    angles = constrain_angles(raw_mid, sk)
    root = sk.root_index
    k, par = sk.bone_joints, sk.parents[sk.bone_joints]

    if len(problem.cameras) >= 2:
        X, bones, trans = _triangulated_start(problem)
        root_slice = sk.dof_slice(root)
        mid = angles.copy()
        mid[:, root_slice] = 0.0
        rest = forward_kinematics(sk, mid, bones).positions
        for f in range(F):
            a = rest[f] - rest[f, root]
            b = X[f] - X[f, root]
            H = a.T @ b
            U, _, Vt = np.linalg.svd(H)
            d = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
            R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
            angles[f, root_slice] = np.clip(_root_euler(sk, R), sk.dof_min[root_slice], sk.dof_max[root_slice])
    else:
        cam = problem.cameras[0]
        uv = obs[0]
        f_px = 0.5 * (cam.K[0, 0] + cam.K[1, 1])
        try:
            nominal = sk.nominal_bones()
        except InputError:
            nominal = np.ones(sk.n_bones)
        seg = np.linalg.norm(uv[:, k] - uv[:, par], axis=-1)
        scale = np.median(seg, axis=-1) * config.assumed_depth / f_px / np.median(nominal)
        bones = nominal[None] * scale[:, None]
        ray = np.linalg.solve(cam.K, np.concatenate([uv[:, root], np.ones((F, 1))], axis=-1).T).T
        trans = camera_frame_to_world(ray * config.assumed_depth, cam)
    if problem.bones is not None:
        bones = np.broadcast_to(np.asarray(problem.bones, dtype=float), (F, sk.n_bones)).copy()
    if config.init_starts > 0 and problem.optimize_angles:
        if len(problem.cameras) >= 2:
            angles = _prefit_3d(problem, config, X, angles, bones, trans)
        else:
            angles, bones, trans = _multistart_2d(problem, config, angles, bones, trans)
    if not problem.batched:
        return IkInit(angles[0], bones[0], trans[0])
    return IkInit(angles, bones, trans)


def _prefit_3d(problem, config, X, angles, bones, trans, randomize=True):
    """Fit angles to triangulated bone vectors (bones and root fixed).

    With ``randomize`` the non-root angles of ``init_starts - 1`` extra
    copies are drawn at random and the best start per frame is refined;
    otherwise ``angles`` is refined directly.
    """
    sk = problem.skeleton
    F = len(angles)
    K = config.init_starts if randomize else 1
    sub = IkProblem(
        sk,
        problem.cameras,
        problem.observations if problem.batched else problem.observations[:, None],
        confidence=np.zeros((len(problem.cameras), F, sk.n_joints)),
        bones=bones,
        targets3d=X,
        optimize_bones=False,
        optimize_translation=False,
    )
    cfg = replace(
        config,
        residual_3d="bones",
        weight_3d=1.0,
        lr=config.init_lr,
        lr_final=config.init_lr_final,
        patience=max(config.init_iters, config.init_refine),
    )
    flags = (True, False, False)
    u = np.tile(_logit(unconstrain_angles(angles, sk)), (K, 1))
    lb = np.log(np.tile(bones, (K, 1)))
    tr = np.tile(trans, (K, 1))
    if K > 1:
        rng = np.random.default_rng(config.seed)
        free = np.ones(sk.total_dof, dtype=bool)
        free[sk.dof_slice(sk.root_index)] = False
        u[F:, free] = _logit(rng.uniform(0.05, 0.95, ((K - 1) * F, int(free.sum()))))
        u, _, _, loss, _, _ = _adam_loop(sub, cfg, u, lb, tr, config.init_iters, flags)
        pick = np.argmin(loss.reshape(K, F), axis=0) * F + np.arange(F)
        u, lb, tr = u[pick], lb[pick], tr[pick]
    u, _, _, _, _, _ = _adam_loop(sub, cfg, u, lb, tr, config.init_refine, flags)
    return sk.dof_min + angle_range(sk) * _sigmoid(u)


def _multistart_2d(problem, config, angles, bones, trans):
    """Single view: run the reprojection fit from ``init_starts`` random poses and keep the best per frame."""
    sk = problem.skeleton
    F, K = len(angles), config.init_starts
    flags = (True, problem.optimize_bones and problem.bones is None, problem.optimize_translation)
    cfg = replace(config, lr=config.init_lr, patience=config.init_iters)
    u = np.tile(_logit(unconstrain_angles(angles, sk)), (K, 1))
    rng = np.random.default_rng(config.seed)
    free = np.ones(sk.total_dof, dtype=bool)
    free[sk.dof_slice(sk.root_index)] = False
    u[F:, free] = _logit(rng.uniform(0.05, 0.95, ((K - 1) * F, int(free.sum()))))
    lb = np.log(np.tile(bones, (K, 1)))
    tr = np.tile(trans, (K, 1))
    u, lb, tr, loss, _, _ = _adam_loop(problem, cfg, u, lb, tr, config.init_iters, flags)
    pick = np.argmin(loss.reshape(K, F), axis=0) * F + np.arange(F)
    return sk.dof_min + angle_range(sk) * _sigmoid(u[pick]), np.exp(lb[pick]), tr[pick]


def _triangulated_start(problem: IkProblem):
    """Triangulated joints, bone lengths and root position for every frame."""
    sk = problem.skeleton
    obs = problem.observations if problem.batched else problem.observations[:, None]
    conf = problem.confidence if problem.batched else problem.confidence[:, None]
    X = triangulate(problem.cameras, obs, conf)  # (F, N, 3)
    k, par = sk.bone_joints, sk.parents[sk.bone_joints]
    bones = np.maximum(np.linalg.norm(X[:, k] - X[:, par], axis=-1), 1e-3)
    if problem.bones is not None:
        bones = np.broadcast_to(np.asarray(problem.bones, dtype=float), bones.shape).copy()
    return X, bones, X[:, sk.root_index].copy()


def _polish_init(problem: IkProblem, config: IkConfig, init: IkInit) -> IkInit:
    """Offer a 3D-refined copy of a supplied start; keep the better one per frame.

    The supplied angles are refined against triangulated bone vectors, which
    converges far faster than reprojection alone from the same start. Frames
    where the supplied start already scores lower keep it unchanged.
    """
    sk = problem.skeleton
    F = problem.n_frames
    A0 = np.broadcast_to(np.asarray(init.angles, dtype=float), (F, sk.total_dof)).copy()
    B0 = init.bones if problem.bones is None else problem.bones
    B0 = np.broadcast_to(np.asarray(B0, dtype=float), (F, sk.n_bones)).copy()
    T0 = np.broadcast_to(np.asarray(init.translation, dtype=float), (F, 3)).copy()
    X, bones, trans = _triangulated_start(problem)
    A1 = _prefit_3d(problem, config, X, A0, bones, trans, randomize=False)
    B1 = bones if problem.optimize_bones and problem.bones is None else B0
    T1 = trans if problem.optimize_translation else T0
    base = replace(config, weight_3d=0.0)
    keep = _objective(problem, base, A0, B0, T0, need_grad=False)[0] <= _objective(problem, base, A1, B1, T1, need_grad=False)[0]
    A = np.where(keep[:, None], A0, A1)
    B = np.where(keep[:, None], B0, B1)
    T = np.where(keep[:, None], T0, T1)
    if not problem.batched:
        return IkInit(A[0], B[0], T[0])
    return IkInit(A, B, T)


def camera_frame_to_world(X, cam):
    return (X - cam.t) @ cam.R


def _objective(problem: IkProblem, config: IkConfig, angles, bones, trans, need_grad=True):
    """Per-frame IK loss ``(F,)`` and its gradient w.r.t. (angles, bones, translation).

    Each frame's loss is the sum over views of the confidence-weighted mean
    reprojection error, plus ``weight_3d`` times the 3D term when targets
    are supplied.
    """
    sk = problem.skeleton
    fk = forward_kinematics(sk, angles, bones, trans)
    X = fk.positions  # (F, N, 3), world frame
    F = len(X)
    obs = problem.observations if problem.batched else problem.observations[:, None]
    conf = problem.confidence if problem.batched else problem.confidence[:, None]
    rows = _frame_rows(problem, F)
    obs, conf = obs[:, rows], conf[:, rows]
    total = np.zeros(F)
    gX = np.zeros_like(X)
    for cam, uv, c in zip(problem.cameras, obs, conf):
        Xc = X @ cam.R.T + cam.t
        diff = project_points(Xc, cam.K) - uv
        wsum = c.sum(axis=-1, keepdims=True)
        scale = c / np.where(wsum > 0, wsum, 1.0)
        if config.squared:
            total += np.sum(scale * np.sum(diff**2, axis=-1), axis=-1)
            g2 = 2.0 * scale[..., None] * diff
        else:
            dist = np.linalg.norm(diff, axis=-1)
            total += np.sum(scale * dist, axis=-1)
            g2 = diff / np.where(dist > 0, dist, 1.0)[..., None] * scale[..., None]
        gX += np.einsum("fnk,fnkj->fnj", g2, project_jacobian(Xc, cam.K)) @ cam.R
    if problem.targets3d is not None and config.weight_3d:
        tgt = np.broadcast_to(problem.targets3d, (problem.n_frames,) + X.shape[1:])[rows]
        if config.residual_3d == "bones":
            k, par = sk.bone_joints, sk.parents[sk.bone_joints]
            diff = (X[:, k] - X[:, par]) - (tgt[:, k] - tgt[:, par])
            total += config.weight_3d * np.sum(diff**2, axis=(1, 2)) / len(k)
            g = 2.0 * config.weight_3d / len(k) * diff
            np.add.at(gX, (slice(None), k), g)
            np.add.at(gX, (slice(None), par), -g)
        else:
            diff = X - tgt
            total += config.weight_3d * np.mean(np.sum(diff**2, axis=-1), axis=-1)
            gX += 2.0 * config.weight_3d / X.shape[1] * diff
    if not need_grad:
        return total, None
    return total, fk_vjp(sk, fk, gX)


def _frame_rows(problem, F):
    """Frame index of every row of a (possibly multi-start replicated) batch."""
    return np.arange(F) % problem.n_frames


def _adam_loop(problem, config, u, lb, tr, iters, flags):
    """Adam on (logit angles, log bones, translation) rows with per-row learning rates.

    A row's learning rate is multiplied by ``plateau_factor`` (down to
    ``lr_final``) whenever its loss fails to drop by ``plateau_rel`` over
    ``plateau_window`` iterations.
    """
    sk = problem.skeleton
    span = angle_range(sk)
    F = len(u)
    hyper = dict(beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    states = [AdamState.zeros_like(x, lr=config.lr, **hyper) for x in (u, lb, tr)]
    lr = np.full((F, 1), float(config.lr))

    def unpack(u, lb, tr):
        return sk.dof_min + span * _sigmoid(u), np.exp(lb), tr

    loss, grads = _objective(problem, config, *unpack(u, lb, tr))
    history = []
    best, best_it = np.inf, 0
    ref = loss.copy()
    keep_loss, keep = loss.copy(), [u.copy(), lb.copy(), tr.copy()]
    n_iter = 0
    for it in range(iters):
        total = float(loss.sum())
        if not np.isfinite(total):
            raise DivergedNonFinite(f"IK loss became non-finite at iteration {it}")
        history.append(total / F)
        better = loss < keep_loss
        keep_loss[better] = loss[better]
        for kept, cur in zip(keep, (u, lb, tr)):
            kept[better] = cur[better]
        if total < best - config.tol * F:
            best, best_it = total, it
        elif it - best_it >= config.patience:
            break
        if it and it % config.plateau_window == 0:
            stalled = loss > ref * (1.0 - config.plateau_rel)
            lr[stalled] = np.maximum(lr[stalled] * config.plateau_factor, config.lr_final)
            ref = loss.copy()
        ga, gb, gt = grads
        sig = _sigmoid(u)
        g_u = ga * span * sig * (1.0 - sig)
        g_lb = gb * np.exp(lb)
        new = []
        for x, g, st, on in zip((u, lb, tr), (g_u, g_lb, gt), states, flags):
            if on:
                x, st = adam_step(x, g, st, lr=lr)
            new.append((x, st))
        (u, states[0]), (lb, states[1]), (tr, states[2]) = new
        n_iter = it + 1
        loss, grads = _objective(problem, config, *unpack(u, lb, tr))
    if not np.all(np.isfinite(loss)):
        raise DivergedNonFinite("IK loss became non-finite")
    better = loss < keep_loss
    keep_loss[better] = loss[better]
    for kept, cur in zip(keep, (u, lb, tr)):
        kept[better] = cur[better]
    return (*keep, keep_loss, n_iter, history)


def ik_fit(problem: IkProblem, init: IkInit | None = None, config: IkConfig | None = None) -> IkResult:
    """Fit angles, bones and root translation to multiview 2D observations.

    Minimises the per-view reprojection error (plus an optional 3D term) of
    FK joints with Adam, frames independently. Each frame's learning rate
    starts at ``config.lr`` and is reduced on plateaus down to
    ``config.lr_final``. Stops at ``config.iters`` or once the total loss
    improved by less than ``tol`` per frame over ``patience`` iterations.
    Each frame returns its lowest-loss iterate, so an optimal init is
    returned unchanged. Deterministic for a given problem, init and config.
    """
    config = config or IkConfig()
    sk = problem.skeleton
    if init is None:
        init = initial_guess(problem, config)
    elif len(problem.cameras) >= 2 and config.init_starts > 0 and problem.optimize_angles:
        init = _polish_init(problem, config, init)
    F = problem.n_frames
    u = _logit(unconstrain_angles(np.broadcast_to(init.angles, (F, sk.total_dof)), sk))
    fixed = init.bones if problem.bones is None else problem.bones
    lb = np.log(np.broadcast_to(np.asarray(fixed, dtype=float), (F, sk.n_bones)))
    tr = np.broadcast_to(np.asarray(init.translation, dtype=float), (F, 3)).copy()
    flags = (problem.optimize_angles, problem.optimize_bones and problem.bones is None, problem.optimize_translation)

    u, lb, tr, loss, n_iter, history = _adam_loop(problem, config, u, lb, tr, config.iters, flags)
    angles = sk.dof_min + angle_range(sk) * _sigmoid(u)
    bones, trans = np.exp(lb), tr
    positions = forward_kinematics(sk, angles, bones, trans).positions
    final = float(loss.sum()) / F
    log.debug("ik_fit: %d iterations, final loss %.3g", n_iter, final)
    if not problem.batched:
        angles, bones, trans, positions = angles[0], bones[0], trans[0], positions[0]
    return IkResult(angles, bones, trans, positions, final, n_iter, history)
