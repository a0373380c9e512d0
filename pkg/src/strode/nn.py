"""Sign-constrained multilayer perceptrons."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, DiffValue, DimensionError


class SignConstraint(str, enum.Enum):
    FREE = "free"
    NONPOSITIVE = "nonpositive"
    NONNEGATIVE = "nonnegative"


class Activation(str, enum.Enum):
    TANH = "tanh"
    RELU = "relu"
    SOFTPLUS = "softplus"
    IDENTITY = "identity"
    LEAKY_RELU = "leaky_relu"


LEAKY_SLOPE = 0.01


def activate(z: DiffValue, kind: Activation) -> DiffValue:
    if kind is Activation.TANH:
        return ad.tanh(z)
    if kind is Activation.RELU:
        return ad.relu(z)
    if kind is Activation.SOFTPLUS:
        return ad.softplus(z)
    if kind is Activation.LEAKY_RELU:
        return ad.leaky_relu(z, LEAKY_SLOPE)
    return z


def activation_slope(z: DiffValue, out: DiffValue, kind: Activation):
    """Derivative of the activation at ``z``, built from taped ops.

    Returning a :class:`DiffValue` keeps the slope differentiable with
    respect to the weights, which the posterior-density loss needs.
    """
    if kind is Activation.TANH:
        return 1.0 - out * out
    if kind is Activation.SOFTPLUS:
        return ad.sigmoid(z)
    if kind is Activation.RELU:
        return ad.relu_grad(z)
    if kind is Activation.LEAKY_RELU:
        return ad.relu_grad(z, LEAKY_SLOPE)
    return None


@dataclass
class Layer:
    weight: DiffValue
    bias: DiffValue
    activation: Activation
    constraint: SignConstraint = SignConstraint.FREE

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


def dropout(x: DiffValue, rate: float, rng: np.random.Generator | None, training: bool) -> DiffValue:
    """Inverted dropout; identity at inference or when ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = rng.random(x.shape) >= rate
    return x * (keep / (1.0 - rate))


class ConstrainedMLP:
    """Fully connected network whose weight matrices may carry a sign constraint.

    ``sizes`` lists layer widths including input and output. ``activations``
    and ``constraints`` give one entry per linear map.
    """

    def __init__(self, sizes, activations, constraints=None, rng=None, name: str = "net"):
        sizes = list(sizes)
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        n_layers = len(sizes) - 1
        if isinstance(activations, (str, Activation)):
            activations = [activations] * n_layers
        if constraints is None or isinstance(constraints, (str, SignConstraint)):
            constraints = [constraints or SignConstraint.FREE] * n_layers
        if len(activations) != n_layers or len(constraints) != n_layers:
            raise ValueError("one activation and one constraint per layer")
        rng = np.random.default_rng(0) if rng is None else rng
        self.name = name
        self.layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            constraint = SignConstraint(constraints[i])
            bound = 1.0 / np.sqrt(n_in)
            w = rng.uniform(-bound, bound, size=(n_in, n_out))
            if constraint is SignConstraint.NONPOSITIVE:
                w = -np.abs(w)
            elif constraint is SignConstraint.NONNEGATIVE:
                w = np.abs(w)
            b = rng.uniform(-bound, bound, size=(1, n_out))
            self.layers.append(Layer(
                ad.parameter(w, f"{name}.layers[{i}].weight"),
                ad.parameter(b, f"{name}.layers[{i}].bias"),
                Activation(activations[i]),
                constraint,
            ))

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> list:
        out = []
        for layer in self.layers:
            out.extend([layer.weight, layer.bias])
        return out

    def _check_input(self, x: DiffValue) -> DiffValue:
        x = DiffValue.lift(x)
        if x.data.ndim == 1:
            x = x.reshape(1, -1)
        if x.shape[-1] != self.input_dim:
            raise DimensionError(f"{self.name}: expected input dim {self.input_dim}, got {x.shape[-1]}")
        return x

    def forward(self, x, *, dropout_rate: float = 0.0, rng=None, training: bool = False) -> DiffValue:
        """Evaluate on a batch of row vectors; dropout acts between hidden layers."""
        h = self._check_input(x)
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h = activate(h @ layer.weight + layer.bias, layer.activation)
            if i < last:
                h = dropout(h, dropout_rate, rng, training)
        return h

    __call__ = forward

    def forward_with_tangent(self, x, tangent) -> tuple:
        """Evaluate and push a tangent through the net (forward mode).

        The tangent travels on the tape, so its parameter gradient is
        available by calling ``backward`` on anything built from it.
        """
        h = self._check_input(x)
        dh = DiffValue.lift(tangent)
        if dh.shape != h.shape:
            dh = DiffValue(np.broadcast_to(dh.data, h.shape))
        for layer in self.layers:
            z = h @ layer.weight + layer.bias
            dz = dh @ layer.weight
            h = activate(z, layer.activation)
            slope = activation_slope(z, h, layer.activation)
            dh = dz if slope is None else slope * dz
        h.tangent = dh
        return h, dh

    def state_dict(self) -> dict:
        return {
            str(i): {
                "weights": layer.weight.data.tolist(),
                "bias": layer.bias.data.reshape(-1).tolist(),
                "activation": layer.activation.value,
                "constraint": layer.constraint.value,
            }
            for i, layer in enumerate(self.layers)
        }

    @classmethod
    def from_state_dict(cls, state: dict, name: str = "net") -> "ConstrainedMLP":
        keys = sorted(state, key=int)
        weights = [np.asarray(state[k]["weights"], dtype=np.float64) for k in keys]
        sizes = [weights[0].shape[0]] + [w.shape[1] for w in weights]
        net = cls(sizes, [state[k]["activation"] for k in keys],
                  [state[k]["constraint"] for k in keys], name=name)
        for layer, k, w in zip(net.layers, keys, weights):
            layer.weight.data = w
            layer.bias.data = np.asarray(state[k]["bias"], dtype=np.float64).reshape(1, -1)
        return net

    def load_state_dict(self, state: dict) -> None:
        for i, layer in enumerate(self.layers):
            entry = state[str(i)]
            layer.weight.data = np.asarray(entry["weights"], dtype=np.float64).reshape(layer.weight.shape)
            layer.bias.data = np.asarray(entry["bias"], dtype=np.float64).reshape(layer.bias.shape)


def forward(net: ConstrainedMLP, x, **kwargs) -> DiffValue:
    return net.forward(x, **kwargs)


def forward_derivative(net: ConstrainedMLP, x, direction_index: int) -> DiffValue:
    """d net(x) / d x[direction_index] per row, as a taped ``(batch, 1)`` value."""
    if net.output_dim != 1:
        raise ContractError(f"{net.name}: forward_derivative needs a scalar-output net")
    if not 0 <= direction_index < net.input_dim:
        raise ContractError(f"direction_index {direction_index} out of range for input dim {net.input_dim}")
    x = net._check_input(x)
    direction = np.zeros(x.shape)
    direction[:, direction_index] = 1.0
    _, dy = net.forward_with_tangent(x, direction)
    return dy


def project_weights(net: ConstrainedMLP) -> ConstrainedMLP:
    """Replace every weight that violates its sign constraint with zero."""
    for layer in net.layers:
        w = layer.weight.data
        if layer.constraint is SignConstraint.NONPOSITIVE:
            layer.weight.data = np.where(w > 0.0, 0.0, w)
        elif layer.constraint is SignConstraint.NONNEGATIVE:
            layer.weight.data = np.where(w < 0.0, 0.0, w)
    return net
