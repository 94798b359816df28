"""Small fully-connected networks with hand-written backpropagation.

Two kinds are used: the angle network (ReLU hidden layers, sigmoid output in
(0, 1) that :func:`kinelift.kinematics.constrain_angles` maps onto joint
limits) and the bone network (softplus output for positive lengths in cm).
Everything runs in float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, ShapeMismatch

ACTIVATIONS = ("relu", "sigmoid", "softplus", "linear")
CONSTRAINT_ACTIVATION = {"angle_range": "sigmoid", "positive_length": "softplus", "none": "linear"}


class InvalidArchitecture(InputError):
    pass


# saturated outputs are kept strictly inside (0, 1) and strictly positive
_SIGMOID_LO = np.finfo(float).tiny
_SIGMOID_HI = 1.0 - np.finfo(float).epsneg
_SOFTPLUS_MIN = 1e-12


def _sigmoid(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return np.clip(out, _SIGMOID_LO, _SIGMOID_HI)


def _softplus(z):
    return np.maximum(np.logaddexp(0.0, z), _SOFTPLUS_MIN)


def activate(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return _sigmoid(z)
    if name == "softplus":
        return _softplus(z)
    if name == "linear":
        return z
    raise InvalidArchitecture(f"unknown activation {name!r}")


def activation_grad(name, z, a):
    """Elementwise derivative of the activation, given pre- and post-activation values."""
    if name == "relu":
        return (z > 0).astype(float)
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "softplus":
        return _sigmoid(z)
    return np.ones_like(z)


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"


@dataclass
class ArchitectureSpec:
    input_width: int
    hidden: tuple[int, ...]
    output_width: int
    output_constraint: str = "angle_range"
    hidden_activation: str = "relu"

    def to_dict(self):
        return {
            "input_width": self.input_width,
            "hidden": list(self.hidden),
            "output_width": self.output_width,
            "output_constraint": self.output_constraint,
            "hidden_activation": self.hidden_activation,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            int(d["input_width"]),
            tuple(int(h) for h in d["hidden"]),
            int(d["output_width"]),
            d.get("output_constraint", "angle_range"),
            d.get("hidden_activation", "relu"),
        )


@dataclass
class MlpModel:
    """Stack of affine layers; ``output_scale`` (optional) multiplies the final output."""

    layers: list[Layer]
    output_constraint: str = "angle_range"
    output_scale: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise InvalidArchitecture("a model needs at least one layer")
        for k, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise InvalidArchitecture(f"layer {k}: unknown activation {layer.activation!r}")
            if layer.weights.ndim != 2 or layer.bias.shape != (layer.weights.shape[0],):
                raise ShapeMismatch(f"layer {k}: weights {layer.weights.shape} vs bias {layer.bias.shape}")
            if k and layer.weights.shape[1] != self.layers[k - 1].weights.shape[0]:
                raise ShapeMismatch(f"layer {k} input width does not match layer {k - 1} output")
        expected = CONSTRAINT_ACTIVATION.get(self.output_constraint)
        if expected is None:
            raise InvalidArchitecture(f"unknown output constraint {self.output_constraint!r}")
        last = self.layers[-1].activation
        if self.output_constraint == "positive_length" and last not in ("softplus", "sigmoid"):
            raise InvalidArchitecture("positive_length output needs a softplus or sigmoid final layer")
        if self.output_constraint == "angle_range" and last != "sigmoid":
            raise InvalidArchitecture("angle_range output needs a sigmoid final layer")
        if self.output_scale is not None:
            self.output_scale = np.asarray(self.output_scale, dtype=float)
            if self.output_scale.shape != (self.output_width,):
                raise ShapeMismatch("output_scale must have one entry per output")

    @property
    def input_width(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_width(self) -> int:
        return self.layers[-1].weights.shape[0]

    @property
    def n_params(self) -> int:
        return sum(l.weights.size + l.bias.size for l in self.layers)

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order (W0, b0, W1, b1, ...). Views, not copies."""
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.bias]
        return out

    def copy(self) -> "MlpModel":
        return MlpModel(
            [Layer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers],
            self.output_constraint,
            None if self.output_scale is None else self.output_scale.copy(),
            dict(self.meta),
        )


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    post: list[np.ndarray]
    batched: bool


@dataclass
class GradientSet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def mlp_forward(model: MlpModel, x):
    """Evaluate the network on ``x`` of shape ``(in,)`` or ``(B, in)``.

    Returns ``(output, cache)``; the cache feeds :func:`mlp_backward`.
    """
    x = np.asarray(x, dtype=float)
    batched = x.ndim == 2
    h = x if batched else x[None]
    if h.ndim != 2 or h.shape[1] != model.input_width:
        raise ShapeMismatch(f"expected input width {model.input_width}, got shape {x.shape}")
    inputs, pre, post = [], [], []
    for layer in model.layers:
        inputs.append(h)
        z = h @ layer.weights.T + layer.bias
        h = activate(layer.activation, z)
        pre.append(z)
        post.append(h)
    out = h if model.output_scale is None else h * model.output_scale
    return (out if batched else out[0]), ForwardCache(inputs, pre, post, batched)


def mlp_backward(model: MlpModel, cache: ForwardCache, output_grad, return_input_grad=False):
    """Reverse-mode gradients of a scalar loss given ``dL/d(output)``.

    Gradients are summed over the batch. With ``return_input_grad`` also
    returns ``dL/d(input)``.
    """
    g = np.asarray(output_grad, dtype=float)
    g = g if cache.batched else g[None]
    if g.shape != cache.post[-1].shape:
        raise ShapeMismatch(f"output gradient shape {g.shape} does not match output {cache.post[-1].shape}")
    if model.output_scale is not None:
        g = g * model.output_scale
    dws, dbs = [], []
    for k in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[k]
        dz = g * activation_grad(layer.activation, cache.pre[k], cache.post[k])
        dws.append(dz.T @ cache.inputs[k])
        dbs.append(dz.sum(axis=0))
        g = dz @ layer.weights
    grads = GradientSet(dws[::-1], dbs[::-1])
    if return_input_grad:
        return grads, (g if cache.batched else g[0])
    return grads


def init_model(arch: ArchitectureSpec, seed: int = 0) -> MlpModel:
    """Fan-in scaled uniform weights (He-uniform for ReLU layers), zero biases."""
    dims = [arch.input_width, *arch.hidden, arch.output_width]
    if any(d <= 0 for d in dims):
        raise InvalidArchitecture(f"layer widths must be positive: {dims}")
    if arch.hidden_activation not in ACTIVATIONS:
        raise InvalidArchitecture(f"unknown activation {arch.hidden_activation!r}")
    if arch.output_constraint not in CONSTRAINT_ACTIVATION:
        raise InvalidArchitecture(f"unknown output constraint {arch.output_constraint!r}")
    rng = np.random.default_rng(seed)
    layers = []
    for k in range(len(dims) - 1):
        fan_in, fan_out = dims[k], dims[k + 1]
        last = k == len(dims) - 2
        gain = 1.0 if last else 2.0
        bound = np.sqrt(3.0 * gain / fan_in)
        act = CONSTRAINT_ACTIVATION[arch.output_constraint] if last else arch.hidden_activation
        layers.append(Layer(rng.uniform(-bound, bound, (fan_out, fan_in)), np.zeros(fan_out), act))
    return MlpModel(layers, arch.output_constraint, meta={"arch": arch.to_dict(), "seed": seed})


def default_angle_arch(skeleton, hidden=(256, 256, 256, 256)) -> ArchitectureSpec:
    """2D input of every skeleton joint to one sigmoid output per DoF."""
    return ArchitectureSpec(2 * skeleton.n_joints, tuple(hidden), skeleton.total_dof, "angle_range")


def default_bone_arch(skeleton, hidden=(64,)) -> ArchitectureSpec:
    """Two affine layers: one hidden layer, then softplus lengths."""
    return ArchitectureSpec(2 * skeleton.n_joints, tuple(hidden), skeleton.n_bones, "positive_length")


def model_to_dict(model: MlpModel) -> dict:
    d = {
        "arch": model.meta.get("arch", {}),
        "layers": [{"w": l.weights.tolist(), "b": l.bias.tolist(), "act": l.activation} for l in model.layers],
        "output_constraint": model.output_constraint,
    }
    if model.output_scale is not None:
        d["output_scale"] = model.output_scale.tolist()
    for key in ("skeleton", "normalization"):
        if key in model.meta:
            d[key] = model.meta[key]
    return d


def model_from_dict(d: dict) -> MlpModel:
    try:
        layers = [
            Layer(np.array(l["w"], dtype=float), np.array(l["b"], dtype=float), l["act"]) for l in d["layers"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed model description: {exc}") from exc
    meta = {"arch": d.get("arch", {})}
    for key in ("skeleton", "normalization"):
        if key in d:
            meta[key] = d[key]
    return MlpModel(layers, d.get("output_constraint", "none"), d.get("output_scale"), meta)


def save_model(model: MlpModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path) -> MlpModel:
    try:
        return model_from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc
