"""Quantile regression models: LQR, QRNN, BQN and NCQRNN, plus random search.

All four are trained on the quantile Huber loss averaged over the 51
quantile levels and return :class:`~pvpost.scoring.QuantileForecast`
objects clipped to [0, 1].  LQR and QRNN outputs are repaired by sorting;
BQN and NCQRNN are monotone by construction.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import comb
from scipy.stats import binom

from ._parallel import child_seeds, parallel_map
from .errors import DomainError, TrainingError
from .neural_core import (
    HIDDEN_ACTIVATIONS,
    MlpSpec,
    Network,
    TrainConfig,
    logistic,
    register_layer,
    softplus,
    train_early_stopping,
)
from .scoring import LEVELS, QuantileForecast, crps_ensemble, huber_pinball, huber_pinball_grad

HUBER_EPS = 1e-8
MIN_LQR_CASES = 200


def quantile_loss(levels=LEVELS, eps=HUBER_EPS):
    """Loss contract: mean quantile Huber loss over cases and levels."""
    tau = np.asarray(levels)[None, :]

    def loss(q, y):
        u = y[:, None] - q
        value = float(np.mean(huber_pinball(tau, u, eps)))
        grad = -huber_pinball_grad(tau, u, eps) / u.size
        return value, grad

    return loss


def _xy(data):
    if hasattr(data, "members"):
        return data.features(), np.asarray(data.obs, dtype=float)
    X, y = data
    return np.atleast_2d(np.asarray(X, dtype=float)), np.asarray(y, dtype=float)


def _repair(q):
    return np.sort(np.clip(q, 0.0, 1.0), axis=-1)


@dataclass
class Hyperparams:
    hidden_sizes: tuple = (64,)
    activation: str = "relu"
    learning_rate: float = 0.002
    patience: int = 20
    batch_size: int = 512
    degree: int = 12
    nc_width: int = 55
    max_epochs: int = 500

    def to_dict(self):
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["hidden_sizes"] = tuple(d.get("hidden_sizes", (64,)))
        return cls(**d)


def default_hyperparams(kind):
    """Fixed defaults used when no search is run.

    LQR has no hidden layer and profits from smaller steps on larger
    batches: its 51 outputs are each a separate linear fit and Adam noise
    otherwise reorders neighbouring quantiles.
    """
    if kind == "lqr":
        return Hyperparams(hidden_sizes=(), learning_rate=0.001, patience=30, batch_size=1024,
                           max_epochs=600)
    return Hyperparams()


def _train(net, train, val, hp, loss, seed):
    X, y = _xy(train)
    Xv, yv = _xy(val)
    cfg = TrainConfig(loss=loss, learning_rate=hp.learning_rate, batch_size=hp.batch_size,
                      patience=hp.patience, max_epochs=hp.max_epochs, seed=seed)
    return train_early_stopping(net, (X, y), (Xv, yv), cfg)


# ----------------------------------------------------------------------- LQR

@dataclass
class LqrModel:
    """One intercept plus 51 member weights per quantile level.

    ``coefficients`` has shape ``(52, n_levels)``: row 0 holds the
    intercepts, rows 1..51 the member weights.
    """

    coefficients: np.ndarray
    levels: np.ndarray = field(default_factory=lambda: LEVELS.copy())
    history: object = None

    def raw(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.coefficients[0] + X @ self.coefficients[1:]

    def to_dict(self):
        return {"coefficients": self.coefficients.tolist(), "levels": self.levels.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["coefficients"]), np.asarray(d["levels"]))


def fit_lqr(train, val, hp=None, levels=LEVELS, seed=0):
    """Linear quantile regression on the members, fitted with Adam.

    Starts from zero member weights and the empirical training quantiles
    as intercepts.
    """
    hp = hp or default_hyperparams("lqr")
    X, y = _xy(train)
    if len(y) < MIN_LQR_CASES:
        raise DomainError(f"LQR needs at least {MIN_LQR_CASES} training cases")
    net = Network(MlpSpec(X.shape[1], [], "relu", len(levels)), seed=seed)
    out = net.layers[-1]
    out.W[...] = 0.0
    out.b[...] = np.quantile(y, levels)
    net, hist = _train(net, (X, y), val, hp, quantile_loss(levels), seed)
    coef = np.vstack([out.b[None, :], out.W])
    return LqrModel(coef, np.asarray(levels, dtype=float), hist)


def predict_lqr(m, members):
    """Per-level linear predictions, clipped to [0, 1] and re-sorted."""
    return QuantileForecast(_repair(m.raw(members)), m.levels)


# ---------------------------------------------------------------------- QRNN

@dataclass
class QrnnModel:
    net: Network
    hp: Hyperparams
    levels: np.ndarray = field(default_factory=lambda: LEVELS.copy())
    history: object = None

    def to_dict(self):
        return {"net": self.net.to_dict(), "hp": self.hp.to_dict(),
                "levels": self.levels.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(Network.from_dict(d["net"]), Hyperparams.from_dict(d["hp"]),
                   np.asarray(d["levels"]))


def qrnn_network(input_dim, hp, n_levels=len(LEVELS), seed=0):
    return Network(MlpSpec(input_dim, list(hp.hidden_sizes), hp.activation, n_levels), seed=seed)


def fit_qrnn(train, val, hp=None, levels=LEVELS, seed=0):
    """MLP with one output neuron per quantile level."""
    hp = hp or Hyperparams()
    X, y = _xy(train)
    net = qrnn_network(X.shape[1], hp, len(levels), seed)
    net.layers[-1].b[...] = np.quantile(y, levels)
    net, hist = _train(net, train, val, hp, quantile_loss(levels), seed)
    return QrnnModel(net, hp, np.asarray(levels, dtype=float), hist)


def predict_qrnn(m, members):
    """Network outputs clipped to [0, 1] and sorted across levels."""
    net = m.net if isinstance(m, QrnnModel) else m
    levels = m.levels if isinstance(m, QrnnModel) else LEVELS
    X = np.atleast_2d(np.asarray(members, dtype=float))
    return QuantileForecast(_repair(net.forward(X)), levels)


# ----------------------------------------------------------------------- BQN

def bernstein_eval(coeffs, tau):
    """Bernstein polynomial ``sum_j c_j C(n, j) tau^j (1 - tau)^(n - j)``."""
    c = np.asarray(coeffs, dtype=float)
    n = c.shape[-1] - 1
    tau = np.asarray(tau, dtype=float)
    if np.any((tau < 0) | (tau > 1)):
        raise DomainError("tau must lie in [0, 1]")
    j = np.arange(n + 1)
    basis = comb(n, j) * tau[..., None] ** j * (1.0 - tau[..., None]) ** (n - j)
    return np.sum(basis * c, axis=-1)


def _survival_basis(degree, levels):
    """``S[k, j-1] = P(Binomial(degree, tau_k) >= j)`` for j = 1..degree.

    Any Bernstein polynomial equals ``c_0 + sum_j (c_j - c_{j-1}) S_j``.
    Columns are forced non-decreasing in ``tau`` so that non-negative
    increments give exactly monotone outputs in floating point.
    """
    j = np.arange(1, degree + 1)
    S = binom.sf(j[None, :] - 1, degree, np.asarray(levels)[:, None])
    return np.maximum.accumulate(S, axis=0)


def _bqn_quantiles(raw, S):
    """Quantiles from raw outputs ``(c0, z_1..z_n)`` with increments softplus(z)."""
    delta = softplus(raw[:, 1:])
    q = np.repeat(raw[:, :1], S.shape[0], axis=1)
    for j in range(S.shape[1]):
        q = q + delta[:, j:j + 1] * S[:, j]
    return q, delta


def bqn_coefficients(raw):
    """Bernstein coefficients ``c_0 + cumsum(softplus(z))`` (non-decreasing)."""
    raw = np.atleast_2d(raw)
    return np.concatenate([raw[:, :1], raw[:, :1] + np.cumsum(softplus(raw[:, 1:]), axis=1)],
                          axis=1)


def bqn_loss(degree, levels=LEVELS, eps=HUBER_EPS):
    """Loss contract on raw BQN outputs (chain rule through the Bernstein map)."""
    S = _survival_basis(degree, levels)
    base = quantile_loss(levels, eps)

    def loss(raw, y):
        q, _ = _bqn_quantiles(raw, S)
        value, g = base(q, y)
        grad = np.empty_like(raw)
        grad[:, 0] = g.sum(axis=1)
        grad[:, 1:] = (g @ S) * logistic(raw[:, 1:])
        return value, grad

    return loss


@dataclass
class BqnModel:
    net: Network
    degree: int
    hp: Hyperparams
    levels: np.ndarray = field(default_factory=lambda: LEVELS.copy())
    history: object = None

    def to_dict(self):
        return {"net": self.net.to_dict(), "degree": self.degree, "hp": self.hp.to_dict(),
                "levels": self.levels.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(Network.from_dict(d["net"]), int(d["degree"]),
                   Hyperparams.from_dict(d["hp"]), np.asarray(d["levels"]))


def fit_bqn(train, val, hp=None, levels=LEVELS, seed=0):
    """Network emitting a first coefficient and non-negative increments of a
    degree-``hp.degree`` Bernstein quantile function."""
    hp = hp or Hyperparams()
    if not 1 <= hp.degree:
        raise DomainError("Bernstein degree must be at least 1")
    X, y = _xy(train)
    net = Network(MlpSpec(X.shape[1], list(hp.hidden_sizes), hp.activation, hp.degree + 1),
                  seed=seed)
    # start from the marginal distribution: c_0 at a low quantile, equal increments
    lo, hi = np.quantile(y, [0.01, 0.99])
    step = max(hi - lo, 1e-3) / hp.degree
    out = net.layers[-1]
    out.b[0] = lo
    out.b[1:] = step + np.log(-np.expm1(-step))
    net, hist = _train(net, train, val, hp, bqn_loss(hp.degree, levels), seed)
    return BqnModel(net, hp.degree, hp, np.asarray(levels, dtype=float), hist)


def predict_bqn(m, members):
    X = np.atleast_2d(np.asarray(members, dtype=float))
    q, _ = _bqn_quantiles(m.net.forward(X), _survival_basis(m.degree, m.levels))
    return QuantileForecast(np.clip(q, 0.0, 1.0), m.levels)


# -------------------------------------------------------------------- NCQRNN

@register_layer
class NonCrossingLayer:
    """Maps non-negative features to non-decreasing outputs.

    ``q_1 = h @ v + b`` and ``q_{k+1} = q_k + h @ softplus(W)[:, k] + softplus(c_k)``:
    every increment is a non-negative combination of the non-negative input.
    """

    kind = "noncrossing"

    def __init__(self, n_in, n_out, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.n_out = n_in, n_out
        limit = math.sqrt(6.0 / (n_in + n_out))
        self.v = rng.uniform(-limit, limit, size=n_in)
        self.b = np.zeros(1)
        # increments start near 1e-4 per input unit so the initial quantile
        # spread stays O(0.1) for any width
        self.W = rng.uniform(-limit, limit, size=(n_in, n_out - 1)) - 9.0
        self.c = np.full(n_out - 1, -9.0)
        self._grads = [np.zeros_like(p) for p in self.params]

    @property
    def params(self):
        return [self.v, self.b, self.W, self.c]

    @property
    def grads(self):
        return self._grads

    def forward(self, h):
        if np.any(h < 0):
            raise DomainError("non-crossing layer needs non-negative inputs")
        self._h = h
        first = h @ self.v + self.b[0]
        delta = h @ softplus(self.W) + softplus(self.c)
        steps = np.concatenate([np.zeros((len(h), 1)), np.cumsum(delta, axis=1)], axis=1)
        return first[:, None] + steps

    def backward(self, grad):
        h = self._h
        g_first = grad.sum(axis=1)
        # d loss / d delta_j = sum of output gradients above j
        tail = np.cumsum(grad[:, ::-1], axis=1)[:, ::-1][:, 1:]
        dv, db, dW, dc = self._grads
        dv[...] = h.T @ g_first
        db[...] = g_first.sum()
        dW[...] = (h.T @ tail) * logistic(self.W)
        dc[...] = tail.sum(axis=0) * logistic(self.c)
        return g_first[:, None] * self.v + tail @ softplus(self.W).T

    def config(self):
        return {"n_in": self.n_in, "n_out": self.n_out}

    @classmethod
    def from_config(cls, cfg):
        return cls(cfg["n_in"], cfg["n_out"])


@dataclass
class NcqrnnModel:
    net: Network
    hp: Hyperparams
    levels: np.ndarray = field(default_factory=lambda: LEVELS.copy())
    history: object = None

    @property
    def nc_width(self):
        return self.net.layers[-1].n_in

    def to_dict(self):
        return {"net": self.net.to_dict(), "hp": self.hp.to_dict(),
                "levels": self.levels.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(Network.from_dict(d["net"]), Hyperparams.from_dict(d["hp"]),
                   np.asarray(d["levels"]))


def ncqrnn_network(input_dim, hp, n_levels=len(LEVELS), seed=0):
    """MLP whose last layer has ``hp.nc_width`` softplus units, followed by
    a :class:`NonCrossingLayer` with one output per level."""
    if hp.nc_width < n_levels:
        raise DomainError("non-crossing width must be at least the number of levels")
    spec = MlpSpec(input_dim, list(hp.hidden_sizes), hp.activation, hp.nc_width, "softplus")
    return Network(spec, seed=seed,
                   head=[lambda rng: NonCrossingLayer(hp.nc_width, n_levels, rng)])


def fit_ncqrnn(train, val, hp=None, levels=LEVELS, seed=0):
    hp = hp or Hyperparams()
    X, y = _xy(train)
    net = ncqrnn_network(X.shape[1], hp, len(levels), seed)
    marginal = np.quantile(y, levels)
    step = max(marginal[-1] - marginal[0], 1e-3) / (len(levels) - 1)
    nc = net.layers[-1]
    nc.b[0] = marginal[0]
    nc.c[...] = step + np.log(-np.expm1(-step))
    net, hist = _train(net, train, val, hp, quantile_loss(levels), seed)
    return NcqrnnModel(net, hp, np.asarray(levels, dtype=float), hist)


def predict_ncqrnn(m, members):
    X = np.atleast_2d(np.asarray(members, dtype=float))
    return QuantileForecast(np.clip(m.net.forward(X), 0.0, 1.0), m.levels)


# ------------------------------------------------------------------- search

@dataclass
class HyperparamSpace:
    layers: tuple = (1, 2)
    neurons: tuple = (5, 200)
    activations: tuple = HIDDEN_ACTIVATIONS
    learning_rate: tuple = (0.0005, 0.05)
    patience: tuple = (5, 50)
    batch_size: tuple = (200, 20000)
    degree: tuple = (6, 15)
    nc_width: tuple = (51, 60)

    def sample(self, rng, max_epochs=300):
        n_layers = int(rng.integers(self.layers[0], self.layers[1] + 1))
        hidden = tuple(int(rng.integers(self.neurons[0], self.neurons[1] + 1))
                       for _ in range(n_layers))
        lo, hi = np.log(self.learning_rate)
        blo, bhi = np.log(self.batch_size)
        return Hyperparams(
            hidden_sizes=hidden,
            activation=str(self.activations[int(rng.integers(len(self.activations)))]),
            learning_rate=float(np.exp(rng.uniform(lo, hi))),
            patience=int(rng.integers(self.patience[0], self.patience[1] + 1)),
            batch_size=int(np.clip(round(np.exp(rng.uniform(blo, bhi))), *self.batch_size)),
            degree=int(rng.integers(self.degree[0], self.degree[1] + 1)),
            nc_width=int(rng.integers(self.nc_width[0], self.nc_width[1] + 1)),
            max_epochs=max_epochs,
        )

    def contains(self, hp):
        return (
            self.layers[0] <= len(hp.hidden_sizes) <= self.layers[1]
            and all(self.neurons[0] <= h <= self.neurons[1] for h in hp.hidden_sizes)
            and hp.activation in self.activations
            and self.learning_rate[0] <= hp.learning_rate <= self.learning_rate[1]
            and self.patience[0] <= hp.patience <= self.patience[1]
            and self.batch_size[0] <= hp.batch_size <= self.batch_size[1]
            and self.degree[0] <= hp.degree <= self.degree[1]
            and self.nc_width[0] <= hp.nc_width <= self.nc_width[1]
        )


FITTERS = {
    "lqr": (fit_lqr, predict_lqr),
    "qrnn": (fit_qrnn, predict_qrnn),
    "bqn": (fit_bqn, predict_bqn),
    "ncqrnn": (fit_ncqrnn, predict_ncqrnn),
}


def hyperparameter_search(model_kind, space, budget, data, split, seed=0, max_epochs=300,
                          threads=1):
    """Seeded random search; the trial with the lowest holdout mean CRPS wins.

    Parameters
    ----------
    model_kind : {"lqr", "qrnn", "bqn", "ncqrnn"}
    space : HyperparamSpace
    budget : int
        Number of trials.
    data : Dataset
    split : SplitPlan
        Train, validation (early stopping) and holdout (selection) indices.

    Returns
    -------
    best : Hyperparams
    log : list of dict
        One record per trial with the sampled values and holdout CRPS.
    """
    if model_kind not in FITTERS:
        raise DomainError(f"no hyperparameter search for model kind {model_kind!r}")
    fit, predict = FITTERS[model_kind]
    rng = np.random.default_rng(seed)
    trials = [space.sample(rng, max_epochs) for _ in range(budget)]
    seeds = child_seeds(seed, budget)
    train = data.subset(split.train_indices)
    val = data.subset(split.validation_indices)
    hold = data.subset(split.holdout_indices)

    def run(i):
        hp = trials[i]
        try:
            model = fit(train, val, hp, seed=seeds[i])
            q = predict(model, hold.features()).values
            return float(np.mean(crps_ensemble(q, hold.obs))), "ok"
        except (TrainingError, FloatingPointError) as exc:
            return math.nan, f"failed: {exc}"

    results = parallel_map(run, range(budget), threads)
    log = []
    for i, (hp, (score, status)) in enumerate(zip(trials, results)):
        rec = {"trial": i, **hp.to_dict(), "holdout_crps": score, "status": status}
        rec["hidden_sizes"] = "-".join(str(h) for h in hp.hidden_sizes)
        log.append(rec)
    scores = np.array([r[0] for r in results])
    if np.all(np.isnan(scores)):
        raise TrainingError(f"all {budget} trials failed: {[r[1] for r in results]}")
    best = int(np.nanargmin(scores))
    return trials[best], log
