"""``kinelift`` command line: one binary, one subcommand per pipeline stage.

Every subcommand prints a JSON summary on stdout (pose streams written to
stdout move the summary to stderr) and logs to stderr. Exit codes: 0 on
success, 2 on input errors (bad flags, files or data), 3 on numerical
failures. ``KINELIFT_SEED`` overrides any seed given by flag or config.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import io
from .containers import Keypoints2D, Pose3D
from .errors import InputError, NumericalError
from .evaluation import AlignmentMode, joint_distances, kabsch_umeyama, per_joint_errors
from .kinematics import forward_kinematics, jacobian_check
from .nn import default_angle_arch, default_bone_arch, load_model, save_model
from .objectives import LossWeights, wrist_weights
from .optim import IkConfig, IkProblem, ik_fit
from .training import (
    HAND_SYNTH,
    LiftingModels,
    TooFewSequences,
    TrainConfig,
    predict_pose,
    split_dataset,
    synth_dataset,
    train_angle_net,
    train_bone_net,
)

log = logging.getLogger("kinelift")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _seed(args, config=None) -> int:
    env = os.environ.get("KINELIFT_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise InputError(f"KINELIFT_SEED must be an integer, got {env!r}") from exc
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    return int((config or {}).get("seed", 0))


def _emit(summary: dict, to_stderr=False):
    stream = sys.stderr if to_stderr else sys.stdout
    stream.write(json.dumps(summary, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"not serializable: {type(x)}")


# ---------------------------------------------------------------- subcommands


def cmd_fk(args):
    sk = io.load_skeleton_arg(args.skeleton)
    poses = []
    for rec in io.load_parameters(args.angles):
        bones = rec.get("bones", sk.nominal_bones())
        fk = forward_kinematics(sk, rec["angles"], bones, rec.get("translation"))
        poses.append(Pose3D(fk.positions, "world", sk.joint_names))
    _write_poses(poses, args.out)
    _emit({"command": "fk", "frames": len(poses), "joints": sk.n_joints, "out": args.out}, args.out is None)


def _write_poses(poses, out):
    if out is None:
        io.save_poses(sys.stdout, poses)
    else:
        io.save_poses(out, poses)


def cmd_ik_fit(args):
    sk = io.load_skeleton_arg(args.skeleton)
    cams = io.load_cameras(args.cameras)
    if len(cams) != len(args.observations):
        raise InputError(f"{len(cams)} cameras but {len(args.observations)} observation files")
    obs, conf, frames = [], [], None
    for path in args.observations:
        f, pts, c = io.load_keypoints(path, sk.n_joints)
        if frames is not None and not np.array_equal(frames, f):
            raise InputError("observation files cover different frames")
        frames = f
        obs.append(pts)
        conf.append(c)
    if frames is None or len(frames) == 0:
        raise InputError("no observations")
    bones = None
    if args.fix_bones:
        bones = np.array(json.loads(Path(args.bones).read_text()), dtype=float) if args.bones else sk.nominal_bones()
    problem = IkProblem(sk, cams, np.stack(obs), np.stack(conf), bones=bones, optimize_bones=not args.fix_bones)
    cfg = IkConfig(iters=args.iters, lr=args.lr, init_starts=args.init_starts, seed=_seed(args))
    t0 = time.perf_counter()
    res = ik_fit(problem, config=cfg)
    lines = []
    for i, f in enumerate(frames):
        lines.append(
            json.dumps(
                {
                    "frame": int(f),
                    "frame_kind": "world",
                    "positions_cm": res.positions[i].tolist(),
                    "joint_names": list(sk.joint_names),
                    "angles": res.angles[i].tolist(),
                    "bones": res.bones[i].tolist(),
                    "translation": res.translation[i].tolist(),
                }
            )
        )
    Path(args.out).write_text("".join(line + "\n" for line in lines))
    _emit(
        {
            "command": "ik-fit",
            "frames": len(frames),
            "views": len(cams),
            "final_loss": res.final_loss,
            "iterations": res.n_iter,
            "seconds": time.perf_counter() - t0,
            "out": args.out,
        }
    )


def cmd_synth(args):
    sk = io.load_skeleton_arg(args.skeleton)
    config = HAND_SYNTH if args.hand else None
    ds = synth_dataset(sk, args.frames, args.cameras, args.noise, _seed(args), config)
    io.save_dataset(ds, args.out)
    _emit(
        {
            "command": "synth",
            "frames": ds.n_frames,
            "views": ds.n_views,
            "sequences": int(ds.sequence.max()) + 1,
            "seed": ds.seed,
            "out": args.out,
        }
    )


def cmd_split(args):
    if args.dataset:
        seq = io.load_dataset(args.dataset).sequence
        # one sample per (view, frame) in SampleSet order
        views = json.loads((Path(args.dataset) / "meta.json").read_text())["n_views"]
        seq = np.tile(seq, views)
    else:
        seq = np.array(json.loads(Path(args.sequences).read_text()))
    sp = split_dataset(seq, _seed(args))
    out = {"train": sp.train.tolist(), "val": sp.val.tolist(), "test": sp.test.tolist()}
    Path(args.out).write_text(json.dumps(out) + "\n")
    _emit(
        {"command": "split", "train": len(sp.train), "val": len(sp.val), "test": len(sp.test), "out": args.out}
    )


def _train_config(args):
    cfg = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"{args.config}: invalid JSON ({exc.msg})") from exc
    opt = cfg.get("optimizer", {})

    def pick(flag, key, default, block=opt):
        value = getattr(args, flag, None)
        return value if value is not None else block.get(key, default)

    dataset = args.dataset or cfg.get("dataset")
    if not dataset:
        raise InputError("a dataset directory is required (--dataset or config 'dataset')")
    seed = _seed(args, cfg)
    tc = TrainConfig(
        epochs=int(pick("epochs", "epochs", 100)),
        batch_size=int(pick("batch_size", "batch_size", 64)),
        lr=float(pick("lr", "lr", 1e-3)),
        patience=int(pick("patience", "patience", 10)),
        lr_patience=int(pick("lr_patience", "lr_patience", 5)),
        lr_factor=float(pick("lr_factor", "lr_factor", 0.5)),
        seed=seed,
        log_path=args.log or cfg.get("log"),
    )
    out_dir = cfg.get("output_dir")
    out = args.out or (str(Path(out_dir) / cfg.get("model", "model.json")) if out_dir else None)
    if not out:
        raise InputError("an output model path is required (--out or config 'output_dir')")
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    hidden = args.hidden or cfg.get("arch", {}).get("hidden")
    ds = io.load_dataset(dataset)
    samples = ds.samples()
    split_path = args.split or cfg.get("split")
    if split_path:
        sp = json.loads(Path(split_path).read_text())
        train, val = samples.subset(sp["train"]), samples.subset(sp["val"])
    else:
        try:
            sp = split_dataset(samples.sequence, seed)
            train, val = samples.subset(sp.train), samples.subset(sp.val)
        except TooFewSequences:
            log.warning("fewer than 10 sequences: training on everything, validating on the training set")
            train, val = samples, None
    return cfg, tc, out, hidden, ds, train, val


def _parse_terms(text):
    terms = {}
    for part in text.split(","):
        name, _, w = part.partition("=")
        terms[name.strip()] = float(w) if w else 1.0
    return terms


def cmd_train_angles(args):
    cfg, tc, out, hidden, ds, train, val = _train_config(args)
    loss = cfg.get("loss", {})
    terms = _parse_terms(args.loss) if args.loss else loss.get("terms", {"3d": 1.0})
    mode = args.mode or loss.get("mode", "fixed")
    ww = args.wrist_weight if args.wrist_weight is not None else loss.get("wrist_weight", 5.0)
    weights = LossWeights(joint=wrist_weights(ds.skeleton, ww), terms=terms, mode=mode)
    arch = default_angle_arch(ds.skeleton, tuple(hidden)) if hidden else None
    t0 = time.perf_counter()
    model, rows = train_angle_net(train, val, weights, arch, tc)
    save_model(model, out)
    _emit(_train_summary("train-angles", rows, out, t0, log_vars=weights.log_vars))


def cmd_train_bones(args):
    cfg, tc, out, hidden, ds, train, val = _train_config(args)
    if args.direct:
        train.gt_angles = None
        if val is not None:
            val.gt_angles = None
    arch = default_bone_arch(ds.skeleton, tuple(hidden)) if hidden else None
    t0 = time.perf_counter()
    model, rows = train_bone_net(train, val, arch, tc)
    save_model(model, out)
    _emit(_train_summary("train-bones", rows, out, t0, supervision=model.meta.get("supervision")))


def _train_summary(cmd, rows, out, t0, **extra):
    best = min(rows, key=lambda r: r["val_loss"])
    return {
        "command": cmd,
        "epochs": rows[-1]["epoch"],
        "best_epoch": best["epoch"],
        "best_val_loss": best["val_loss"],
        "seconds": time.perf_counter() - t0,
        "out": out,
        **extra,
    }


def cmd_predict(args):
    bsk = io.load_skeleton_arg(args.skeleton)
    hand = args.hand_angles is not None and args.hand_bones is not None
    models = LiftingModels(
        bsk,
        load_model(args.body_angles),
        load_model(args.body_bones),
        io.load_skeleton_arg(args.hand_skeleton) if hand else None,
        load_model(args.hand_angles) if hand else None,
        load_model(args.hand_bones) if hand else None,
    )
    frames, pts, conf = io.load_keypoints(args.body, bsk.n_joints)
    hands = {"left": {}, "right": {}}
    if hand:
        for side, path in (("left", args.left), ("right", args.right)):
            if path:
                hands[side] = dict(io.iter_keypoints(path, models.hand_skeleton.n_joints))
    poses = []
    t0 = time.perf_counter()
    for f, p, c in zip(frames, pts, conf):
        kp = Keypoints2D(p, c)
        poses.append(predict_pose(models, kp, hands["left"].get(f), hands["right"].get(f)))
    elapsed = time.perf_counter() - t0
    _write_poses(poses, args.out)
    _emit(
        {"command": "predict", "frames": len(poses), "ms_per_frame": 1e3 * elapsed / max(len(poses), 1),
         "out": args.out},
        args.out is None,
    )


def _pose_array(poses):
    if not poses:
        raise InputError("no poses")
    return np.stack([p.positions for p in poses])


def cmd_eval(args):
    pred, gt = io.load_poses(args.pred), io.load_poses(args.gt)
    if len(pred) != len(gt):
        raise InputError(f"{len(pred)} predicted poses but {len(gt)} ground-truth poses")
    P, G = _pose_array(pred), _pose_array(gt)
    conf = None
    if args.conf:
        _, _, conf = io.load_keypoints(args.conf)
    elif all(p.confidence is not None for p in pred):
        conf = np.stack([np.asarray(p.confidence, dtype=float) for p in pred])
    mode = AlignmentMode.parse(args.align, use_gt_bones=args.gt_bones)
    d = joint_distances(P, G, mode)
    stats = per_joint_errors(P, G, conf, mode)
    if args.csv:
        names = gt[0].joint_names or [str(j) for j in range(G.shape[1])]
        with open(args.csv, "w") as fh:
            fh.write("frame,joint,name,error_cm\n")
            for f in range(len(d)):
                for j in range(d.shape[1]):
                    fh.write(f"{f},{j},{names[j]},{d[f, j]!r}\n")
    _emit({"command": "eval", "align": mode.name, "gt_bones": args.gt_bones, **stats.to_dict(), "csv": args.csv})


def cmd_align(args):
    src, tgt = io.load_poses(args.source), io.load_poses(args.target)
    if len(src) != len(tgt):
        raise InputError(f"{len(src)} source poses but {len(tgt)} target poses")
    mode = AlignmentMode.parse(args.mode)
    results, aligned = [], []
    for s, t in zip(src, tgt):
        a = kabsch_umeyama(s, t, mode)
        results.append({"R": a.R, "t": a.t, "s": a.s, "residual": a.residual})
        aligned.append(Pose3D(a.aligned, t.frame, s.joint_names, s.confidence, s.valid))
    if args.out:
        io.save_poses(args.out, aligned)
    _emit({"command": "align", "mode": mode.name, "frames": results, "out": args.out})


def cmd_gradcheck(args):
    sk = io.load_skeleton_arg(args.skeleton)
    t0 = time.perf_counter()
    err = jacobian_check(sk, args.n, _seed(args), args.eps)
    _emit(
        {
            "command": "gradcheck",
            "skeleton": sk.name,
            "configurations": args.n,
            "eps": args.eps,
            "max_abs_error": err,
            "passed": err < 1e-5,
            "seconds": time.perf_counter() - t0,
        }
    )
    if not err < 1e-5:
        raise NumericalError(f"Jacobian check failed: max abs error {err:.3g}")


def cmd_export(args):
    poses = io.load_poses(args.poses)
    edges = None
    if args.skeleton:
        sk = io.load_skeleton_arg(args.skeleton)
        edges = io.skeleton_edges(sk)
        n = sk.n_joints
        if poses and len(poses[0]) != n:
            hsk = io.load_skeleton_arg(args.hand_skeleton)
            if len(poses[0]) != n + 2 * hsk.n_joints:
                raise InputError(f"poses have {len(poses[0])} joints; skeleton {sk.n_joints} (+ hands)")
            edges = io.combined_edges(sk, hsk)
    io.export_poses(poses, args.out, args.format, edges)
    _emit({"command": "export", "format": args.format, "frames": len(poses), "out": args.out})


# --------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kinelift", description="2D-to-3D pose lifting through forward kinematics.")
    p.add_argument("--threads", type=int, default=None, help="cap on BLAS/worker threads (default: all cores)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("fk", help="forward kinematics from angle records")
    s.add_argument("--skeleton", required=True)
    s.add_argument("--angles", required=True, help="JSON/JSONL records with angles (radians) or angles_deg")
    s.add_argument("--out", help="Pose3D JSONL (default: stdout)")
    s.set_defaults(func=cmd_fk)

    s = sub.add_parser("ik-fit", help="multiview IK on keypoint files")
    s.add_argument("--skeleton", required=True)
    s.add_argument("--cameras", required=True, help="camera JSON list, one per observation file")
    s.add_argument("--observations", nargs="+", required=True, help="keypoint JSONL, one per view")
    s.add_argument("--out", required=True)
    s.add_argument("--iters", type=int, default=IkConfig.iters)
    s.add_argument("--lr", type=float, default=IkConfig.lr)
    s.add_argument("--init-starts", type=int, default=IkConfig.init_starts)
    s.add_argument("--fix-bones", action="store_true", help="hold bones at nominal (or --bones) lengths")
    s.add_argument("--bones", help="JSON list of bone lengths for --fix-bones")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_ik_fit)

    s = sub.add_parser("synth", help="generate a synthetic dataset directory")
    s.add_argument("--skeleton", required=True)
    s.add_argument("--frames", type=int, required=True)
    s.add_argument("--cameras", type=int, default=1)
    s.add_argument("--noise", type=float, default=0.0, help="pixel noise std")
    s.add_argument("--hand", action="store_true", help="use the wider root-rotation ranges for hands")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("split", help="80/10/10 split by sequence")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--dataset")
    g.add_argument("--sequences", help="JSON list of per-sample sequence ids")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_split)

    for name, func in (("train-angles", cmd_train_angles), ("train-bones", cmd_train_bones)):
        s = sub.add_parser(name, help=f"train the {name.split('-')[1][:-1]} network")
        s.add_argument("--config", help="training config JSON")
        s.add_argument("--dataset")
        s.add_argument("--split", help="split JSON from the split command")
        s.add_argument("--out")
        s.add_argument("--log", help="CSV training log")
        s.add_argument("--epochs", type=int)
        s.add_argument("--batch-size", type=int, dest="batch_size")
        s.add_argument("--lr", type=float)
        s.add_argument("--patience", type=int, help="epochs without improvement before stopping")
        s.add_argument("--lr-patience", type=int, dest="lr_patience", help="epochs without improvement before lr decay")
        s.add_argument("--lr-factor", type=float, dest="lr_factor", help="lr decay factor")
        s.add_argument("--hidden", type=lambda t: [int(x) for x in t.split(",")], help="e.g. 256,256,256,256")
        s.add_argument("--seed", type=int)
        if name == "train-angles":
            s.add_argument("--loss", help="terms with optional weights, e.g. 3d or 3d=1,angular=0.5")
            s.add_argument("--mode", choices=("fixed", "kendall"))
            s.add_argument("--wrist-weight", type=float, dest="wrist_weight")
        else:
            s.add_argument("--direct", action="store_true", help="supervise lengths directly even if angles exist")
        s.set_defaults(func=func)

    s = sub.add_parser("predict", help="lift keypoint files with trained networks")
    s.add_argument("--skeleton", required=True, help="body skeleton")
    s.add_argument("--body-angles", required=True)
    s.add_argument("--body-bones", required=True)
    s.add_argument("--hand-skeleton", default="hand26")
    s.add_argument("--hand-angles")
    s.add_argument("--hand-bones")
    s.add_argument("--body", required=True, help="body keypoint JSONL")
    s.add_argument("--left", help="left-hand keypoint JSONL")
    s.add_argument("--right", help="right-hand keypoint JSONL")
    s.add_argument("--out", help="Pose3D JSONL (default: stdout)")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("eval", help="per-joint error statistics")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--conf", help="keypoint JSONL whose confidences weight the mean")
    s.add_argument("--align", default="Rts", choices=("Rts", "ts", "Rt", "t", "root"))
    s.add_argument("--gt-bones", action="store_true", help="record that predictions used GT bone lengths")
    s.add_argument("--csv", help="per-joint distances CSV")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("align", help="Kabsch-Umeyama alignment of pose pairs")
    s.add_argument("--source", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--mode", default="Rts", choices=("Rts", "ts", "Rt", "t", "root"))
    s.add_argument("--out", help="aligned source poses JSONL")
    s.set_defaults(func=cmd_align)

    s = sub.add_parser("gradcheck", help="FK Jacobian against central differences")
    s.add_argument("--skeleton", required=True)
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--eps", type=float, default=1e-6)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("export", help="convert Pose3D JSONL to jsonl, csv or obj")
    s.add_argument("--poses", required=True)
    s.add_argument("--format", default="obj")
    s.add_argument("--skeleton", help="skeleton for OBJ line elements")
    s.add_argument("--hand-skeleton", default="hand26", help="hand skeleton when poses include both hands")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        log.error("--threads must be at least 1")
        return 2
    try:
        with threadpool_limits(limits=args.threads):
            args.func(args)
    except InputError as exc:
        log.error("%s", exc)
        return 2
    except NumericalError as exc:
        log.error("%s", exc)
        return 3
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 2
    return 0


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
