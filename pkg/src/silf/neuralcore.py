"""Dense feed-forward regressor with manual backprop and mask-aware SGD.

A small fully connected network (relu hidden layers, sigmoid output head)
trained with mean absolute error.  Every operation takes a
:class:`ParticipationView` that says which weights take part in the forward
pass and which may be updated, so callers can freeze arbitrary weight
subsets and rely on the frozen values staying bit-identical.

Masked-out weights are replaced by ``np.where(mask, w, 0.0)`` before any
matrix product.  ``np.where`` writes a plain ``+0.0`` into excluded slots
regardless of the sign of the excluded value, so a forward pass through a
view is bit-for-bit reproducible no matter what later training did to the
weights outside the view.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "sigmoid", "identity")


class ShapeError(ValueError):
    """An input does not match the network geometry."""


class NumericsError(ArithmeticError):
    """A parameter or gradient stopped being finite."""


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "relu"

    def __post_init__(self) -> None:
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"layer dimensions must be positive, got {self.in_dim}x{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def build_layer_specs(input_dim: int, hidden_dims: tuple[int, ...] | list[int]) -> tuple[LayerSpec, ...]:
    """Relu hidden layers capped by a single sigmoid output unit."""
    dims = [input_dim, *hidden_dims]
    specs = [LayerSpec(dims[i], dims[i + 1], "relu") for i in range(len(dims) - 1)]
    specs.append(LayerSpec(dims[-1], 1, "sigmoid"))
    return tuple(specs)


class NetworkParams:
    """Per-layer weight matrices (out_dim x in_dim) and bias vectors, float64."""

    def __init__(self, specs: tuple[LayerSpec, ...], weights: list[np.ndarray], biases: list[np.ndarray]):
        if len(weights) != len(specs) or len(biases) != len(specs):
            raise ShapeError("one weight matrix and one bias vector per layer")
        for spec, w, b in zip(specs, weights, biases):
            if w.shape != (spec.out_dim, spec.in_dim):
                raise ShapeError(f"weight shape {w.shape} does not match spec {spec}")
            if b.shape != (spec.out_dim,):
                raise ShapeError(f"bias shape {b.shape} does not match spec {spec}")
            if w.dtype != np.float64 or b.dtype != np.float64:
                raise ShapeError("parameters must be float64")
        self.specs = tuple(specs)
        self.weights = weights
        self.biases = biases

    @classmethod
    def init_random(cls, specs: tuple[LayerSpec, ...], rng: np.random.Generator) -> "NetworkParams":
        weights = [rng.normal(0.0, 1.0 / np.sqrt(s.in_dim), size=(s.out_dim, s.in_dim)) for s in specs]
        biases = [np.zeros(s.out_dim) for s in specs]
        return cls(specs, weights, biases)

    @classmethod
    def zeros(cls, specs: tuple[LayerSpec, ...]) -> "NetworkParams":
        weights = [np.zeros((s.out_dim, s.in_dim)) for s in specs]
        biases = [np.zeros(s.out_dim) for s in specs]
        return cls(specs, weights, biases)

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.specs, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def bias_copy(self) -> list[np.ndarray]:
        return [b.copy() for b in self.biases]

    def with_biases(self, biases: list[np.ndarray]) -> "NetworkParams":
        """Same weight arrays, substituted bias vectors (read-only use)."""
        return NetworkParams(self.specs, self.weights, [np.asarray(b, dtype=np.float64) for b in biases])

    def weight_count(self) -> int:
        return sum(w.size for w in self.weights)

    def layer_shapes(self) -> list[tuple[int, int]]:
        return [w.shape for w in self.weights]

    def require_finite(self) -> None:
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if not np.isfinite(w).all() or not np.isfinite(b).all():
                raise NumericsError(f"non-finite parameter in layer {i}")


@dataclass
class ParticipationView:
    """Boolean per-weight bitmaps: which weights feed forward, which may train.

    ``trainable`` must be a subset of ``forward``.  Biases are not masked;
    the single ``train_biases`` flag follows the bias ownership policy
    (each task trains and snapshots its own private bias copy).
    """

    forward: list[np.ndarray]
    trainable: list[np.ndarray]
    train_biases: bool = False

    def __post_init__(self) -> None:
        if len(self.forward) != len(self.trainable):
            raise ShapeError("forward and trainable need the same layer count")
        for f, t in zip(self.forward, self.trainable):
            if f.shape != t.shape:
                raise ShapeError("forward/trainable bitmap shapes differ")
            if f.dtype != np.bool_ or t.dtype != np.bool_:
                raise ShapeError("bitmaps must be boolean arrays")
            if np.any(t & ~f):
                raise ValueError("trainable bitmap must be a subset of the forward bitmap")

    @classmethod
    def full(cls, params: NetworkParams, train_biases: bool = True) -> "ParticipationView":
        fwd = [np.ones(w.shape, dtype=bool) for w in params.weights]
        trn = [np.ones(w.shape, dtype=bool) for w in params.weights]
        return cls(fwd, trn, train_biases)

    def match(self, params: NetworkParams) -> None:
        if len(self.forward) != len(params.weights):
            raise ShapeError("view layer count does not match params")
        for f, w in zip(self.forward, params.weights):
            if f.shape != w.shape:
                raise ShapeError("view bitmap shape does not match weights")


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class OptimizerState:
    """Plain SGD with stepwise learning-rate decay."""

    base_lr: float
    decay_factor: float = 0.5
    decay_every: int = 10
    current_epoch: int = 0

    def __post_init__(self) -> None:
        if self.base_lr <= 0.0:
            raise ValueError("base_lr must be positive")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ValueError("decay_factor must be in (0, 1]")
        if self.decay_every < 1:
            raise ValueError("decay_every must be at least 1")
        if self.current_epoch < 0:
            raise ValueError("current_epoch must be non-negative")

    def effective_lr(self) -> float:
        return self.base_lr * self.decay_factor ** (self.current_epoch // self.decay_every)


def _masked_weights(params: NetworkParams, view: ParticipationView) -> list[np.ndarray]:
    return [np.where(f, w, 0.0) for w, f in zip(params.weights, view.forward)]


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        # split by sign for numerical stability at large |z|
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    return z


def _activation_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


def _forward_pass(params: NetworkParams, view: ParticipationView, X: np.ndarray):
    masked = _masked_weights(params, view)
    activations = [X]
    pre = []
    a = X
    for spec, wm, b in zip(params.specs, masked, params.biases):
        z = a @ wm.T + b
        a = _activate(z, spec.activation)
        pre.append(z)
        activations.append(a)
    return masked, pre, activations


def _check_batch(params: NetworkParams, X: np.ndarray, y: np.ndarray | None) -> None:
    if X.ndim != 2 or X.shape[1] != params.specs[0].in_dim:
        raise ShapeError(f"inputs must be (batch, {params.specs[0].in_dim}), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("batch must contain at least one sample")
    if y is not None and y.shape != (X.shape[0],):
        raise ShapeError("targets must be a vector matching the batch size")


def predict(params: NetworkParams, view: ParticipationView, X: np.ndarray) -> np.ndarray:
    """Batched forward pass; returns one scalar in (0, 1) per input row."""
    view.match(params)
    X = np.asarray(X, dtype=np.float64)
    _check_batch(params, X, None)
    _, _, activations = _forward_pass(params, view, X)
    return activations[-1][:, 0]


def forward(params: NetworkParams, view: ParticipationView, x: np.ndarray) -> float:
    """Single-sample forward pass, defined through :func:`predict`."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("forward expects a single input vector")
    return float(predict(params, view, x[None, :])[0])


def l1_loss(params: NetworkParams, view: ParticipationView, X: np.ndarray, y: np.ndarray) -> float:
    preds = predict(params, view, X)
    return float(np.mean(np.abs(preds - np.asarray(y, dtype=np.float64))))


def backward(params: NetworkParams, view: ParticipationView, X: np.ndarray, y: np.ndarray) -> Gradients:
    """Mean-absolute-error gradients for every parameter under the view.

    The L1 subgradient at zero residual is taken as 0.  Gradient entries for
    weights outside the forward bitmap are exactly 0.0.
    """
    view.match(params)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_batch(params, X, y)

    masked, pre, activations = _forward_pass(params, view, X)
    batch = X.shape[0]
    preds = activations[-1][:, 0]
    # np.sign(0.0) == 0.0 gives the chosen subgradient at the kink
    dl_dpred = np.sign(preds - y) / batch

    n_layers = len(params.specs)
    grad_w: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    grad_b: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]

    delta = dl_dpred[:, None] * _activation_grad(pre[-1], activations[-1], params.specs[-1].activation)
    for layer in range(n_layers - 1, -1, -1):
        gw = delta.T @ activations[layer]
        grad_w[layer] = np.where(view.forward[layer], gw, 0.0)
        grad_b[layer] = delta.sum(axis=0)
        if layer > 0:
            upstream = delta @ masked[layer]
            delta = upstream * _activation_grad(
                pre[layer - 1], activations[layer], params.specs[layer - 1].activation
            )
    return Gradients(grad_w, grad_b)


def sgd_step(params: NetworkParams, grads: Gradients, view: ParticipationView, opt: OptimizerState) -> NetworkParams:
    """Apply one SGD update where the view allows it.

    Weights outside the trainable bitmap keep their exact bit pattern
    (``np.where`` copies them untouched).  Biases update only when the view
    trains them.
    """
    lr = opt.effective_lr()
    for layer, (w, gw, t) in enumerate(zip(params.weights, grads.weights, view.trainable)):
        params.weights[layer] = np.where(t, w - lr * gw, w)
    if view.train_biases:
        for layer, gb in enumerate(grads.biases):
            params.biases[layer] = params.biases[layer] - lr * gb
    return params


def train_epochs(
    params: NetworkParams,
    view: ParticipationView,
    X: np.ndarray,
    y: np.ndarray,
    opt: OptimizerState,
    epochs: int,
    *,
    rng: np.random.Generator,
    batch_size: int = 32,
) -> NetworkParams:
    """Mini-batch SGD with a full seeded shuffle per epoch.

    The shuffle order is drawn from ``rng`` one epoch at a time, so the same
    generator state always reproduces the same trajectory.  The learning
    rate is constant within an epoch and decays on the optimizer schedule.
    """
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_batch(params, X, y)

    n = X.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            grads = backward(params, view, X[idx], y[idx])
            sgd_step(params, grads, view, opt)
        opt.current_epoch += 1
    params.require_finite()
    return params
