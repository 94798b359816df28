import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kinelift.camera import CameraModel, project_points
from kinelift.containers import Keypoints2D, Pose3D
from kinelift.errors import BehindCamera, FrameMismatch, LengthMismatch
from kinelift.objectives import (
    LossWeights,
    NoTermsEnabled,
    loss_3d,
    loss_angular,
    loss_combined,
    loss_reprojection,
    wrist_weights,
)


def fd_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        d = np.zeros_like(x)
        d[it.multi_index] = eps
        g[it.multi_index] = (f(x + d) - f(x - d)) / (2 * eps)
    return g


def test_angular_examples():
    a = np.linspace(-1, 1, 20)
    assert loss_angular(a, a)[0] == 0.0
    b = a.copy()
    b[4] += 0.2
    assert np.isclose(loss_angular(b, a)[0], 0.01, atol=1e-15)
    with pytest.raises(LengthMismatch):
        loss_angular(a, a[:3])


def test_angular_vs_scalar_loop(rng):
    p, g = rng.normal(size=(4, 19)), rng.normal(size=(4, 19))
    total = 0.0
    for i in range(4):
        for j in range(19):
            total += abs(p[i, j] - g[i, j])
    assert abs(loss_angular(p, g)[0] - total / 76) < 1e-12
    assert np.allclose(loss_angular(p, g)[1], fd_grad(lambda x: loss_angular(x, g)[0], p), atol=1e-6)


def test_3d_examples():
    assert loss_3d(np.ones((4, 3)), np.ones((4, 3)))[0] == 0.0
    assert loss_3d(np.array([[3.0, 4, 0]]), np.zeros((1, 3)))[0] == 5.0
    N = 6
    w = np.ones(N)
    w[2] = 5.0
    pred = np.zeros((N, 3))
    pred[2, 0] = 1.0
    assert np.isclose(loss_3d(pred, np.zeros((N, 3)), w)[0], 5.0 / w.sum(), atol=1e-15)


def test_3d_errors():
    with pytest.raises(FrameMismatch):
        loss_3d(Pose3D(np.zeros((2, 3)), "world"), Pose3D(np.zeros((2, 3)), "camera"))
    with pytest.raises(LengthMismatch):
        loss_3d(np.zeros((2, 3)), np.zeros((3, 3)))


@pytest.mark.parametrize("squared", [False, True])
def test_3d_gradient(rng, squared):
    p, g = rng.normal(size=(3, 5, 3)), rng.normal(size=(3, 5, 3))
    w = rng.uniform(0.5, 3, 5)
    _, grad = loss_3d(p, g, w, squared=squared)
    assert np.abs(grad - fd_grad(lambda x: loss_3d(x, g, w, squared=squared)[0], p)).max() < 1e-6


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_3d_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    p, g = rng.normal(0, 10, (7, 3)), rng.normal(0, 10, (7, 3))
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    t = rng.normal(0, 50, 3)
    w = rng.uniform(0.5, 2, 7)
    base = loss_3d(p, g, w)[0]
    assert base >= 0
    assert abs(loss_3d(p @ Q.T + t, g @ Q.T + t, w)[0] - base) < 1e-9


def test_reprojection_examples():
    K = np.eye(3)
    X = np.array([[0.0, 0.0, 1.0]])
    assert loss_reprojection(X, K, np.array([[0.0, 0.0]]))[0] == 0.0
    assert loss_reprojection(X, K, np.array([[1.0, 0.0]]))[0] == 1.0
    with pytest.raises(BehindCamera):
        loss_reprojection(np.array([[0.0, 0.0, -1.0]]), K, np.zeros((1, 2)))
    with pytest.raises(FrameMismatch):
        loss_reprojection(Pose3D(X, "world"), K, np.zeros((1, 2)))


@pytest.mark.parametrize("squared", [False, True])
def test_reprojection_gradient(rng, squared):
    cam = CameraModel.from_params(900, 950, 320, 240, skew=0.3)
    X = rng.normal(0, 20, (2, 6, 3)) + [0, 0, 200]
    # targets a few pixels off keep the loss small enough for the FD oracle
    U = project_points(X, cam.K) + rng.normal(0, 5, (2, 6, 2))
    w = rng.uniform(0.2, 1, (2, 6))
    _, grad = loss_reprojection(X, cam, U, w, squared)
    num = fd_grad(lambda x: loss_reprojection(x, cam, U, w, squared)[0], X)
    assert np.abs(grad - num).max() < 1e-6


def test_reprojection_uses_keypoint_confidence():
    X = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    kp = Keypoints2D(np.array([[1.0, 0.0], [9.0, 0.0]]), np.array([1.0, 0.0]))
    assert loss_reprojection(X, np.eye(3), kp)[0] == 1.0


def test_combined_examples():
    w = LossWeights(mode="kendall", terms={"3d": 1.0})
    assert loss_combined({"3d": 2.5}, w)[0] == 2.5
    fixed = LossWeights(terms={"3d": 1.0, "reprojection": 0.0})
    assert loss_combined({"3d": 2.0, "reprojection": 7.0}, fixed)[0] == 2.0
    k2 = LossWeights(mode="kendall", terms={"3d": 1, "reprojection": 1}, log_vars={"3d": 0.0, "reprojection": 0.0})
    assert loss_combined({"3d": 2.0, "reprojection": 3.0}, k2)[0] == 5.0
    with pytest.raises(NoTermsEnabled):
        loss_combined({"3d": 2.0}, LossWeights(terms={"3d": 0.0}))


def test_combined_log_var_gradient():
    L = {"3d": 2.0, "reprojection": 3.0}

    def f(s):
        w = LossWeights(mode="kendall", terms={"3d": 1, "reprojection": 1}, log_vars={"3d": s[0], "reprojection": s[1]})
        return loss_combined(L, w)[0]

    s = np.array([0.3, -0.7])
    w = LossWeights(mode="kendall", terms={"3d": 1, "reprojection": 1}, log_vars={"3d": s[0], "reprojection": s[1]})
    _, d_terms, d_s = loss_combined(L, w)
    assert np.allclose([d_s["3d"], d_s["reprojection"]], fd_grad(f, s), atol=1e-8)
    assert np.isclose(d_terms["3d"], np.exp(-0.3))


def test_wrist_weights(body, hand):
    w = wrist_weights(body)
    names = [n for n, x in zip(body.joint_names, w) if x == 5.0]
    assert names == ["left_wrist", "right_wrist"]
    assert np.all(wrist_weights(hand) == 1.0)
