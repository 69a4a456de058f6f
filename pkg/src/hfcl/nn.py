"""Flat-parameter neural network engine.

Models are stacks of dense layers whose weights live in one flat vector
``theta`` (layer-major; within a layer the ``(n_in, units)`` weight matrix in
row-major order, then the bias). Forward and backward passes are plain numpy
and never mutate their inputs.

A ``ModelSpec`` may also describe convolutional layers, but only for
parameter counting (``reference_cnn_spec``); such specs are not executable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

CLEAN = "clean"
QUANTIZED = "quantized"
QUANTIZED_NOISED = "quantized+noised"

XENT_EPS = 1e-12


class ShapeError(ValueError):
    """Input or parameter shapes disagree with the model spec."""


class NumericError(FloatingPointError):
    """A non-finite value appeared in parameters or intermediates."""


@dataclass(frozen=True)
class Layer:
    kind: str  # "dense" or "conv"
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    units: int  # dense units, or conv filter count
    kernel: int = 0
    activation: str = "tanh"
    bias: bool = True

    @property
    def n_params(self) -> int:
        if self.kind == "dense":
            (n_in,) = self.in_shape
            return n_in * self.units + (self.units if self.bias else 0)
        if self.kind == "conv":
            # filter weights only: units @ kernel x kernel
            return self.units * self.kernel * self.kernel + (self.units if self.bias else 0)
        raise ValueError(f"unknown layer kind {self.kind!r}")


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple[Layer, ...]

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("model needs at least one layer")
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_shape != b.in_shape:
                raise ShapeError(
                    f"layer {i} output {a.out_shape} does not feed layer {i + 1} input {b.in_shape}"
                )

    @property
    def P(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.layers[0].in_shape

    @property
    def n_outputs(self) -> int:
        return int(np.prod(self.layers[-1].out_shape))

    @property
    def executable(self) -> bool:
        return all(layer.kind == "dense" for layer in self.layers)

    def slices(self) -> list[tuple[slice, slice | None]]:
        """(weight slice, bias slice) into theta for every layer."""
        out = []
        start = 0
        for layer in self.layers:
            n_w = layer.n_params - (layer.units if layer.bias else 0)
            w = slice(start, start + n_w)
            start += n_w
            b = None
            if layer.bias:
                b = slice(start, start + layer.units)
                start += layer.units
            out.append((w, b))
        return out


def mlp_spec(sizes: Sequence[int], hidden: str = "tanh") -> ModelSpec:
    """Dense stack ``sizes[0] -> ... -> sizes[-1]`` with a softmax head."""
    if len(sizes) < 2:
        raise ShapeError("an MLP needs at least input and output sizes")
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        act = "softmax" if i == len(sizes) - 2 else hidden
        layers.append(Layer("dense", (n_in,), (n_out,), n_out, activation=act))
    return ModelSpec(tuple(layers))


def desk_mlp_spec(n_in: int = 196, hidden: int = 32, n_classes: int = 10) -> ModelSpec:
    return mlp_spec([n_in, hidden, n_classes])


def reference_cnn_spec() -> ModelSpec:
    """Counting-only spec: 5x5@128 then 3x3@128 filters, no biases, P = 4352."""
    return ModelSpec(
        (
            Layer("conv", (28, 28, 1), (24, 24, 128), 128, kernel=5, activation="relu", bias=False),
            Layer("conv", (24, 24, 128), (22, 22, 128), 128, kernel=3, activation="relu", bias=False),
        )
    )


@dataclass(frozen=True)
class ModelParams:
    theta: np.ndarray
    spec: ModelSpec

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64)
        if theta.ndim != 1 or theta.size != self.spec.P:
            raise ShapeError(f"theta has shape {theta.shape}, spec wants ({self.spec.P},)")
        if not np.all(np.isfinite(theta)):
            raise NumericError("parameters contain non-finite entries")
        theta = theta.copy()
        theta.flags.writeable = False
        object.__setattr__(self, "theta", theta)

    def layer_arrays(self) -> list[tuple[np.ndarray, np.ndarray | None]]:
        out = []
        for layer, (w, b) in zip(self.spec.layers, self.spec.slices()):
            (n_in,) = layer.in_shape
            W = self.theta[w].reshape(n_in, layer.units)
            out.append((W, None if b is None else self.theta[b]))
        return out


@dataclass(frozen=True)
class GradientVector:
    g: np.ndarray
    provenance: str = CLEAN
    client: int | None = None

    def __post_init__(self):
        g = np.asarray(self.g, dtype=np.float64)
        if g.ndim != 1:
            raise ShapeError("gradient must be a flat vector")
        if not np.all(np.isfinite(g)):
            raise NumericError("gradient contains non-finite entries")
        object.__setattr__(self, "g", g)

    def __len__(self) -> int:
        return self.g.size


@dataclass(frozen=True)
class TrainingConfig:
    eta: float = 0.001
    minibatches: int = 1  # M_B
    batch_size: int | None = None  # D_m; None partitions the whole shard
    rounds: int = 1  # T
    seed: int = 0
    loss: str = "xent"

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.minibatches < 1 or self.rounds < 1:
            raise ValueError("minibatches and rounds must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")


def init_params(spec: ModelSpec, rng: np.random.Generator) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    parts = []
    for layer in spec.layers:
        (n_in,) = layer.in_shape
        a = np.sqrt(6.0 / (n_in + layer.units))
        parts.append(rng.uniform(-a, a, size=n_in * layer.units))
        if layer.bias:
            parts.append(np.zeros(layer.units))
    return ModelParams(np.concatenate(parts), spec)


# activations ---------------------------------------------------------------

def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


_ACT = {
    "identity": lambda z: z,
    "relu": lambda z: np.maximum(z, 0.0),
    "tanh": np.tanh,
    "sigmoid": _sigmoid,
    "softmax": _softmax,
}


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Elementwise derivative of a non-softmax activation."""
    if name == "identity":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    raise ValueError(f"no elementwise derivative for {name!r}")


def _flatten_inputs(spec: ModelSpec, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim < 1:
        raise ShapeError("inputs must be a batch")
    (n_in,) = spec.input_shape
    if x.shape[0] == 0:
        raise ShapeError("empty batch")
    x = x.reshape(x.shape[0], -1) if x.ndim > 1 else x.reshape(1, -1)
    if x.shape[1] != n_in:
        raise ShapeError(f"sample has {x.shape[1]} features, model expects {n_in}")
    return x


def _check_executable(params: ModelParams) -> None:
    if not params.spec.executable:
        raise ShapeError("this model spec only counts parameters and cannot be evaluated")


def _forward_trace(params: ModelParams, x: np.ndarray):
    zs, acts = [], [x]
    a = x
    for i, (layer, (W, b)) in enumerate(zip(params.spec.layers, params.layer_arrays())):
        z = a @ W
        if b is not None:
            z = z + b
        a = _ACT[layer.activation](z)
        if not np.all(np.isfinite(a)):
            raise NumericError(f"non-finite activation in layer {i} ({layer.kind})")
        zs.append(z)
        acts.append(a)
    return zs, acts


def forward(params: ModelParams, inputs) -> np.ndarray:
    """Per-sample model outputs, shape ``(n, n_outputs)``."""
    _check_executable(params)
    x = _flatten_inputs(params.spec, inputs)
    return _forward_trace(params, x)[1][-1]


# losses --------------------------------------------------------------------

def _pair(pred, labels) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"prediction shape {p.shape} != label shape {y.shape}")
    if p.ndim == 1:
        p, y = p[None, :], y[None, :]
    if p.shape[0] == 0:
        raise ShapeError("empty batch")
    return p.reshape(p.shape[0], -1), y.reshape(y.shape[0], -1)


def loss_mse(pred, labels) -> float:
    """Batch mean of the squared Frobenius error per sample."""
    p, y = _pair(pred, labels)
    return float(np.mean(np.sum((p - y) ** 2, axis=1)))


def loss_xent(pred, labels, eps: float = XENT_EPS) -> float:
    """Per-class binary cross-entropy summed over classes, averaged over samples."""
    p, y = _pair(pred, labels)
    p = np.clip(p, eps, 1.0 - eps)
    per = y * np.log(p) + (1.0 - y) * np.log(1.0 - p)
    return float(-np.mean(np.sum(per, axis=1)))


def _dloss_mse(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    return 2.0 * (p - y)


def _dloss_xent(p: np.ndarray, y: np.ndarray, eps: float = XENT_EPS) -> np.ndarray:
    inside = (p >= eps) & (p <= 1.0 - eps)
    pc = np.clip(p, eps, 1.0 - eps)
    d = -y / pc + (1.0 - y) / (1.0 - pc)
    return np.where(inside, d, 0.0)


LOSSES = {"mse": (loss_mse, _dloss_mse), "xent": (loss_xent, _dloss_xent)}


def batch_loss(params: ModelParams, inputs, labels, loss: str = "xent") -> float:
    return LOSSES[loss][0](forward(params, inputs), labels)


# gradients -----------------------------------------------------------------

def backward(params: ModelParams, inputs, labels, loss: str = "xent") -> GradientVector:
    """Gradient of the batch-mean loss with respect to ``params.theta``."""
    _check_executable(params)
    x = _flatten_inputs(params.spec, inputs)
    n = x.shape[0]
    if n == 0:
        raise ShapeError("empty batch")
    y = np.asarray(labels, dtype=np.float64).reshape(n, -1)
    zs, acts = _forward_trace(params, x)
    out = acts[-1]
    if y.shape != out.shape:
        raise ShapeError(f"labels {y.shape} do not match outputs {out.shape}")

    spec = params.spec
    grad = np.zeros(spec.P)
    delta_a = LOSSES[loss][1](out, y) / n  # dJ/d(output activations), mean folded in
    arrays = params.layer_arrays()
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        a = acts[i + 1]
        if layer.activation == "softmax":
            delta_z = a * (delta_a - np.sum(delta_a * a, axis=1, keepdims=True))
        else:
            delta_z = delta_a * _act_grad(layer.activation, zs[i], a)
        if not np.all(np.isfinite(delta_z)):
            raise NumericError(f"non-finite gradient in layer {i} ({layer.kind})")
        w_sl, b_sl = spec.slices()[i]
        grad[w_sl] = (acts[i].T @ delta_z).ravel()
        if b_sl is not None:
            grad[b_sl] = delta_z.sum(axis=0)
        if i > 0:
            delta_a = delta_z @ arrays[i][0].T
    return GradientVector(grad, CLEAN)


def sgd_step(params: ModelParams, g: GradientVector | np.ndarray, eta: float) -> ModelParams:
    gv = g.g if isinstance(g, GradientVector) else np.asarray(g, dtype=np.float64)
    if gv.shape != params.theta.shape:
        raise ShapeError(f"gradient length {gv.size} != parameter count {params.theta.size}")
    return ModelParams(params.theta - eta * gv, params.spec)


def partition_minibatches(
    n: int, minibatches: int, rng: np.random.Generator, batch_size: int | None = None
) -> list[np.ndarray]:
    """Index sets for ``minibatches`` mini-batches of an ``n``-sample shard.

    A uniform random permutation is split contiguously; the last mini-batch
    takes the remainder. With ``batch_size`` set, only the first
    ``minibatches * batch_size`` permuted samples are used.
    """
    if n < 1:
        raise ShapeError("empty shard")
    if minibatches > n:
        raise ShapeError(f"cannot split {n} samples into {minibatches} mini-batches")
    order = rng.permutation(n)
    if batch_size is not None and minibatches * batch_size < n:
        order = order[: minibatches * batch_size]
    size = len(order) // minibatches
    cuts = [size * m for m in range(1, minibatches)]
    return np.split(order, cuts)


def minibatch_gradient(
    params: ModelParams,
    inputs,
    labels,
    minibatches: int,
    rng: np.random.Generator,
    batch_size: int | None = None,
    loss: str = "xent",
) -> GradientVector:
    """Mean of per-mini-batch mean gradients over a seeded partition."""
    x = np.asarray(inputs)
    y = np.asarray(labels)
    if x.shape[0] == 0:
        raise ShapeError("empty shard")
    if minibatches == 1 and batch_size is None:
        return backward(params, x, y, loss)
    parts = partition_minibatches(x.shape[0], minibatches, rng, batch_size)
    total = np.zeros(params.spec.P)
    for idx in parts:
        total += backward(params, x[idx], y[idx], loss).g
    return GradientVector(total / len(parts), CLEAN)
