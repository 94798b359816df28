import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kinelift.errors import ShapeMismatch
from kinelift.kinematics import constrain_angles, within_limits
from kinelift.nn import (
    ArchitectureSpec,
    InvalidArchitecture,
    Layer,
    MlpModel,
    default_angle_arch,
    default_bone_arch,
    init_model,
    load_model,
    mlp_backward,
    mlp_forward,
    save_model,
)


def flat_params(model):
    return np.concatenate([p.ravel() for p in model.params()])


def set_params(model, theta):
    k = 0
    for p in model.params():
        p[...] = theta[k : k + p.size].reshape(p.shape)
        k += p.size


def test_identity_layer():
    m = MlpModel([Layer(np.eye(3), np.zeros(3), "linear")], "none")
    x = np.array([1.0, -2.0, 3.5])
    assert np.array_equal(mlp_forward(m, x)[0], x)


def test_hand_computed_two_layer():
    W1 = np.array([[1.0, -1.0], [2.0, 0.5]])
    b1 = np.array([0.5, -3.0])
    W2 = np.array([[1.0, 2.0]])
    b2 = np.array([0.25])
    m = MlpModel([Layer(W1, b1, "relu"), Layer(W2, b2, "linear")], "none")
    x = np.array([2.0, 1.0])
    # h = relu([2 - 1 + .5, 4 + .5 - 3]) = [1.5, 1.5]; y = 1.5 + 3 + .25
    assert mlp_forward(m, x)[0][0] == 4.75


def test_sigmoid_output_in_open_interval(rng):
    m = init_model(ArchitectureSpec(4, (8,), 5, "angle_range"), seed=1)
    for scale in (1.0, 1e3, 1e100):
        y = mlp_forward(m, rng.normal(0, scale, (50, 4)))[0]
        assert np.all((y > 0) & (y < 1))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e100, 1e100), min_size=38, max_size=38))
def test_sigmoid_then_constrain_in_limits(body, x):
    m = init_model(default_angle_arch(body, hidden=(16,)), seed=0)
    raw = mlp_forward(m, np.array(x))[0]
    assert within_limits(constrain_angles(raw, body), body)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e100, 1e100), min_size=38, max_size=38))
def test_softplus_bones_positive(body, x):
    m = init_model(default_bone_arch(body), seed=0)
    m.layers[-1].bias[:] = -30.0  # push toward the softplus floor
    assert np.all(mlp_forward(m, np.array(x))[0] > 0)


def test_zero_output_grad_gives_zero(rng):
    m = init_model(ArchitectureSpec(3, (5, 4), 2, "none"), seed=0)
    y, cache = mlp_forward(m, rng.normal(size=(6, 3)))
    g = mlp_backward(m, cache, np.zeros_like(y))
    assert all(not a.any() for a in g.arrays())


def test_linear_least_squares_gradient(rng):
    m = init_model(ArchitectureSpec(4, (), 3, "none"), seed=2)
    m.layers[0].bias[:] = rng.normal(size=3)
    x, target = rng.normal(size=4), rng.normal(size=3)
    y, cache = mlp_forward(m, x)
    g = mlp_backward(m, cache, y - target)
    assert np.allclose(g.weights[0], np.outer(y - target, x), atol=1e-14)
    assert np.allclose(g.biases[0], y - target, atol=1e-14)


def _fd_check(model, x, target, eps=1e-6):
    def loss(theta):
        set_params(model, theta)
        y = mlp_forward(model, x)[0]
        return 0.5 * np.sum((y - target) ** 2)

    theta = flat_params(model).copy()
    set_params(model, theta)
    y, cache = mlp_forward(model, x)
    analytic = np.concatenate([a.ravel() for a in mlp_backward(model, cache, y - target).arrays()])
    num = np.empty_like(theta)
    for k in range(len(theta)):
        d = np.zeros_like(theta)
        d[k] = eps
        num[k] = (loss(theta + d) - loss(theta - d)) / (2 * eps)
    set_params(model, theta)
    return np.abs(analytic - num).max()


@pytest.mark.parametrize(
    "arch",
    [
        ArchitectureSpec(6, (7, 5), 4, "angle_range"),
        ArchitectureSpec(6, (5,), 3, "positive_length"),
        ArchitectureSpec(4, (6, 6, 3), 2, "none", "softplus"),
    ],
)
def test_gradient_check_20_triples(arch):
    rng = np.random.default_rng(5)
    for k in range(20):
        m = init_model(arch, seed=k)
        for layer in m.layers:
            layer.bias[:] = rng.normal(0, 0.3, layer.bias.shape)
        x = rng.normal(size=(3, arch.input_width))
        target = rng.uniform(0, 1, (3, arch.output_width))
        assert _fd_check(m, x, target) < 1e-6


def test_input_gradient(rng):
    m = init_model(ArchitectureSpec(3, (4,), 2, "none", "softplus"), seed=3)
    x = rng.normal(size=3)
    y, cache = mlp_forward(m, x)
    _, gx = mlp_backward(m, cache, np.ones(2), return_input_grad=True)
    eps = 1e-6
    num = [(mlp_forward(m, x + eps * e)[0].sum() - mlp_forward(m, x - eps * e)[0].sum()) / (2 * eps) for e in np.eye(3)]
    assert np.allclose(gx, num, atol=1e-8)


def test_output_scale_gradient(rng, body):
    m = init_model(default_bone_arch(body), seed=0)
    m.output_scale = np.linspace(1, 3, body.n_bones)
    x = rng.normal(size=(2, 38))
    target = rng.uniform(1, 5, (2, body.n_bones))
    assert _fd_check(m, x, target) < 1e-6


def test_init_deterministic_and_defaults(body):
    a = init_model(default_angle_arch(body), seed=9)
    b = init_model(default_angle_arch(body), seed=9)
    assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))
    assert all(not l.bias.any() for l in a.layers)
    assert a.input_width == 38 and a.output_width == body.total_dof
    assert [l.activation for l in a.layers] == ["relu"] * 4 + ["sigmoid"]
    bone = init_model(default_bone_arch(body))
    assert len(bone.layers) == 2
    assert bone.layers[-1].activation == "softplus"


def test_invalid_architectures():
    with pytest.raises(InvalidArchitecture):
        init_model(ArchitectureSpec(3, (0,), 2))
    with pytest.raises(InvalidArchitecture):
        init_model(ArchitectureSpec(3, (4,), 2, "sideways"))
    with pytest.raises(ShapeMismatch):
        MlpModel([Layer(np.ones((2, 3)), np.zeros(2), "relu"), Layer(np.ones((1, 5)), np.zeros(1), "sigmoid")])
    with pytest.raises(InvalidArchitecture):
        MlpModel([Layer(np.ones((2, 3)), np.zeros(2), "relu")], "angle_range")


def test_shape_mismatch_on_input():
    m = init_model(ArchitectureSpec(3, (4,), 2, "none"))
    with pytest.raises(ShapeMismatch):
        mlp_forward(m, np.ones(4))


def test_save_load_roundtrip(tmp_path, body):
    m = init_model(default_bone_arch(body), seed=4)
    m.output_scale = np.arange(1, body.n_bones + 1, dtype=float)
    m.meta["skeleton"] = "body_sign19"
    path = tmp_path / "m.json"
    save_model(m, path)
    back = load_model(path)
    assert all(np.array_equal(p, q) for p, q in zip(m.params(), back.params()))
    assert np.array_equal(back.output_scale, m.output_scale)
    assert back.meta["skeleton"] == "body_sign19"
    x = np.linspace(-1, 1, 38)
    assert np.array_equal(mlp_forward(back, x)[0], mlp_forward(m, x)[0])
