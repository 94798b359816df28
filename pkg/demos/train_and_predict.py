"""Train the angle and bone networks on synthetic data and lift held-out frames.

A small run (2000 frames, a few epochs) that finishes in about a minute on
one core. Errors are reported after rigid alignment, as in the evaluation
protocol, and per joint so the hard joints (elbows, wrists) stand out.

    python demos/train_and_predict.py [n_frames] [epochs]
"""

import sys

import numpy as np

from kinelift.evaluation import joint_distances, per_joint_errors
from kinelift.objectives import LossWeights, wrist_weights
from kinelift.skeleton import load_skeleton
from kinelift.training import (
    LiftingModels,
    TrainConfig,
    predict_pose,
    split_dataset,
    synth_dataset,
    train_angle_net,
    train_bone_net,
)


def main(n_frames=2000, epochs=20):
    body = load_skeleton("body_sign19")
    S = synth_dataset(body, n_frames, 1, 0.0, seed=1).samples()
    sp = split_dataset(S.sequence, seed=1)
    train, val, test = S.subset(sp.train), S.subset(sp.val), S.subset(sp.test)
    cfg = TrainConfig(epochs=epochs)

    for terms in ({"3d": 1.0}, {"3d": 1.0, "angular": 100.0}):
        weights = LossWeights(joint=wrist_weights(body), terms=terms)
        angles, log = train_angle_net(train, val, weights, config=cfg)
        bones, _ = train_bone_net(train, val, config=cfg)
        poses = predict_pose(LiftingModels(body, angles, bones), test.gt2d)
        P = np.stack([p.positions for p in poses])
        stats = per_joint_errors(P, test.gt_pose, mode="Rt")
        print(f"loss {terms}: {len(log) - 1} epochs, held-out median {stats.median:.2f} cm, "
              f"mean {stats.weighted_mean:.2f} cm")
        d = np.median(joint_distances(P, test.gt_pose, "Rt"), axis=0)
        for name, e in zip(body.joint_names, d):
            print(f"    {name:16s} {e:6.2f}")


if __name__ == "__main__":
    main(*map(int, sys.argv[1:3]))
