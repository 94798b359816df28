"""kinelift: lifting 2D keypoints to 3D poses through a forward-kinematics layer.

Networks predict constrained Euler angles and bone lengths; forward
kinematics over a skeleton tree turns them into joint positions. The package
also carries the multiview IK used to manufacture training targets, the
losses, a from-scratch MLP with backpropagation, and the evaluation protocol.
"""

from .camera import CameraModel, NormalizationSpec, normalize_keypoints, project, triangulate
from .containers import Keypoints2D, Pose3D
from .errors import InputError, KineliftError, NumericalError
from .evaluation import AlignmentMode, ErrorStats, kabsch_umeyama, per_joint_errors
from .kinematics import constrain_angles, fk_jacobian, fk_vjp, forward_kinematics
from .nn import MlpModel, init_model, load_model, mlp_backward, mlp_forward, save_model
from .objectives import LossWeights, loss_3d, loss_angular, loss_combined, loss_reprojection
from .optim import AdamState, IkConfig, IkProblem, adam_step, ik_fit, numerical_gradient
from .skeleton import SkeletonSpec, ValidatedSkeleton, load_skeleton, mirror_hand, validate_skeleton
from .training import (
    LiftingModels,
    TrainConfig,
    predict_pose,
    split_dataset,
    synth_dataset,
    train_angle_net,
    train_bone_net,
)

__version__ = "0.1.0"
