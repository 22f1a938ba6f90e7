"""Small feed-forward network engine with analytic backprop and Adam.

Losses are plugged in as callables ``loss(outputs, targets) -> (value, grad)``
returning the batch-mean loss and its gradient with respect to the
network outputs.
"""

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, TrainingError

FORMAT_VERSION = 1
HIDDEN_ACTIVATIONS = ("relu", "softplus", "logistic", "tanh")
OUTPUT_ACTIVATIONS = ("linear", "softplus")


def softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def logistic(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _act(name, z):
    if name == "linear":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "softplus":
        return softplus(z)
    if name == "logistic":
        return logistic(z)
    if name == "tanh":
        return np.tanh(z)
    raise DomainError(f"unknown activation {name!r}")


def _act_grad(name, z, a):
    if name == "linear":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "softplus":
        return logistic(z)
    if name == "logistic":
        return a * (1.0 - a)
    if name == "tanh":
        return 1.0 - a * a
    raise DomainError(f"unknown activation {name!r}")


@dataclass
class MlpSpec:
    input_dim: int
    hidden_sizes: list
    hidden_activation: str
    output_dim: int
    output_activations: object = "linear"

    def __post_init__(self):
        self.hidden_sizes = [int(h) for h in self.hidden_sizes]
        if isinstance(self.output_activations, str):
            self.output_activations = [self.output_activations] * self.output_dim
        self.output_activations = list(self.output_activations)
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden_sizes):
            raise DomainError("all layer sizes must be at least 1")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise DomainError(f"hidden activation must be one of {HIDDEN_ACTIVATIONS}")
        if len(self.output_activations) != self.output_dim or any(
            a not in OUTPUT_ACTIVATIONS for a in self.output_activations
        ):
            raise DomainError("one output activation (linear|softplus) per output neuron")

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "hidden_sizes": list(self.hidden_sizes),
            "hidden_activation": self.hidden_activation,
            "output_dim": self.output_dim,
            "output_activations": list(self.output_activations),
        }


class Dense:
    """Affine map followed by an element-wise activation.

    ``activation`` is one name for all units or a list with one name per
    output unit.
    """

    kind = "dense"

    def __init__(self, n_in, n_out, activation, rng=None):
        self.n_in, self.n_out = n_in, n_out
        self.activation = activation
        limit = math.sqrt(6.0 / (n_in + n_out))
        rng = rng if rng is not None else np.random.default_rng(0)
        self.W = rng.uniform(-limit, limit, size=(n_in, n_out))
        self.b = np.zeros(n_out)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._groups = None
        if not isinstance(activation, str):
            names = sorted(set(activation))
            acts = np.asarray(activation)
            self._groups = [(a, np.flatnonzero(acts == a)) for a in names]

    @property
    def params(self):
        return [self.W, self.b]

    @property
    def grads(self):
        return [self.dW, self.db]

    def _apply(self, fn, *arrays):
        if self._groups is None:
            return fn(self.activation, *arrays)
        out = np.empty_like(arrays[0])
        for name, idx in self._groups:
            out[:, idx] = fn(name, *(a[:, idx] for a in arrays))
        return out

    def forward(self, x):
        self._x = x
        self._z = x @ self.W + self.b
        self._a = self._apply(_act, self._z)
        return self._a

    def backward(self, grad):
        dz = grad * self._apply(_act_grad, self._z, self._a)
        self.dW[...] = self._x.T @ dz
        self.db[...] = dz.sum(axis=0)
        return dz @ self.W.T

    def config(self):
        return {"n_in": self.n_in, "n_out": self.n_out, "activation": self.activation}

    @classmethod
    def from_config(cls, cfg):
        act = cfg["activation"]
        return cls(cfg["n_in"], cfg["n_out"], act if isinstance(act, str) else list(act))


LAYER_TYPES = {"dense": Dense}


def register_layer(cls):
    LAYER_TYPES[cls.kind] = cls
    return cls


class Network:
    """Sequential stack of layers built from an :class:`MlpSpec`.

    ``head`` optionally appends extra layers (any objects implementing the
    layer protocol) after the output layer.
    """

    def __init__(self, spec, seed=0, head=None, layers=None):
        self.spec = spec
        if layers is not None:
            self.layers = list(layers)
            return
        rng = np.random.default_rng(seed)
        sizes = [spec.input_dim] + spec.hidden_sizes
        self.layers = [Dense(a, b, spec.hidden_activation, rng) for a, b in zip(sizes, sizes[1:])]
        out_act = spec.output_activations
        if len(set(out_act)) == 1:
            out_act = out_act[0]
        self.layers.append(Dense(sizes[-1], spec.output_dim, out_act, rng))
        for layer_factory in head or []:
            self.layers.append(layer_factory(rng))

    @property
    def output_dim(self):
        last = self.layers[-1]
        return last.n_out

    def params(self):
        return [p for layer in self.layers for p in layer.params]

    def grads(self):
        return [g for layer in self.layers for g in layer.grads]

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise DomainError(f"expected batch of shape (n, {self.spec.input_dim}), got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def backward(self, grad):
        """Backpropagate ``d loss / d outputs``; fills the layer gradients."""
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def get_weights(self):
        return [p.copy() for p in self.params()]

    def set_weights(self, weights):
        for p, w in zip(self.params(), weights):
            p[...] = w

    def flat_weights(self):
        return np.concatenate([p.ravel() for p in self.params()])

    def copy(self):
        return copy.deepcopy(self)

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "spec": self.spec.to_dict(),
            "layers": [
                {"type": layer.kind, "config": layer.config(),
                 "params": [p.ravel().tolist() for p in layer.params]}
                for layer in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format_version") != FORMAT_VERSION:
            raise DomainError(f"unsupported network format {doc.get('format_version')!r}")
        layers = []
        for entry in doc["layers"]:
            layer = LAYER_TYPES[entry["type"]].from_config(entry["config"])
            for p, flat in zip(layer.params, entry["params"]):
                p[...] = np.asarray(flat, dtype=float).reshape(p.shape)
            layers.append(layer)
        return cls(MlpSpec(**doc["spec"]), layers=layers)


def forward(net, batch):
    return net.forward(batch)


def backward(net, batch, loss_grad):
    """Gradients of the loss with respect to every parameter of ``net``.

    Runs a forward pass on ``batch`` first so the caches match.
    """
    net.forward(batch)
    net.backward(np.asarray(loss_grad, dtype=float))
    return [g.copy() for g in net.grads()]


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kw):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update, applied in place.

    Returns ``(params, state)`` for convenience.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class TrainConfig:
    loss: object
    learning_rate: float = 0.001
    batch_size: int = 256
    patience: int = 6
    max_epochs: int = 500
    seed: int = 0
    val_loss: object = None

    def __post_init__(self):
        if not 0 < self.learning_rate < 1:
            raise DomainError("learning rate must lie in (0, 1)")
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise DomainError("batch size, patience and max_epochs must be positive")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    epochs_run: int = 0

    @property
    def best_val_loss(self):
        return self.val_loss[self.best_epoch - 1]

    def to_dict(self):
        return {"train_loss": self.train_loss, "val_loss": self.val_loss,
                "best_epoch": self.best_epoch, "epochs_run": self.epochs_run}


def _eval_loss(net, X, Y, loss, batch=8192):
    total = 0.0
    for start in range(0, len(X), batch):
        out = net.forward(X[start:start + batch])
        value, _ = loss(out, Y[start:start + batch])
        total += value * len(out)
    return total / len(X)


def train_early_stopping(net, train_set, val_set, cfg):
    """Mini-batch Adam training with early stopping on the validation loss.

    Parameters
    ----------
    net : Network
        Trained in place; on return it holds the weights of the epoch with
        the lowest validation loss.
    train_set, val_set : tuple of (inputs, targets)
    cfg : TrainConfig

    Returns
    -------
    net : Network
    history : TrainHistory
    """
    X, Y = (np.asarray(a, dtype=float) for a in train_set)
    Xv, Yv = (np.asarray(a, dtype=float) for a in val_set)
    val_loss_fn = cfg.val_loss or cfg.loss
    rng = np.random.default_rng(cfg.seed)
    params = net.params()
    state = AdamState.zeros_like(params)
    hist = TrainHistory()
    best, best_weights, stale = math.inf, net.get_weights(), 0
    n = len(X)

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            out = net.forward(X[idx])
            value, grad = cfg.loss(out, Y[idx])
            if not np.isfinite(value):
                raise TrainingError(f"non-finite training loss at epoch {epoch}")
            net.backward(grad)
            adam_step(params, net.grads(), state, cfg.learning_rate)
            total += value * len(idx)
        hist.train_loss.append(total / n)
        val = _eval_loss(net, Xv, Yv, val_loss_fn)
        if not np.isfinite(val):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        hist.val_loss.append(val)
        hist.epochs_run = epoch
        if val < best:
            best, best_weights, stale = val, net.get_weights(), 0
            hist.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    net.set_weights(best_weights)
    return net, hist


def gradient_check(net, X, Y, loss, h=1e-5, max_params=None, seed=0):
    """Largest relative error between backprop and central differences.

    ``max_params`` limits the check to a random subset of parameter
    entries.
    """
    out = net.forward(X)
    _, g = loss(out, Y)
    net.backward(g)
    analytic = np.concatenate([gr.ravel() for gr in net.grads()])
    params = net.params()
    locs = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    if max_params is not None and max_params < len(locs):
        pick = np.random.default_rng(seed).choice(len(locs), max_params, replace=False)
        locs = [locs[k] for k in sorted(pick)]
    offsets = np.cumsum([0] + [p.size for p in params])
    worst = 0.0
    for i, j in locs:
        flat = params[i].reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        up, _ = loss(net.forward(X), Y)
        flat[j] = orig - h
        down, _ = loss(net.forward(X), Y)
        flat[j] = orig
        numeric = (up - down) / (2 * h)
        a = analytic[offsets[i] + j]
        worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-7))
    return worst
