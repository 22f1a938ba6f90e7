"""Distributional regression network for the censored normal law."""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import censored_normal as cn
from ._parallel import child_seeds, parallel_map
from .neural_core import MlpSpec, Network, TrainConfig, train_early_stopping
from .scoring import LEVELS, QuantileForecast

SIGMA_OFFSET = 1e-6


def crps_loss(outputs, y):
    """Mean closed-form CRPS of ``(mu, softplus-sigma)`` outputs and its gradient."""
    p = cn.CensoredNormalParams(outputs[:, 0], outputs[:, 1] + SIGMA_OFFSET)
    value = float(np.mean(cn.crps_closed_form(p, y)))
    d_mu, d_sigma = cn.crps_gradient(p, y)
    grad = np.column_stack([d_mu, d_sigma]) / len(y)
    return value, grad


@dataclass
class DrnConfig:
    hidden_sizes: tuple = (15, 10, 10)
    activation: str = "relu"
    learning_rate: float = 0.001
    batch_size: int = 256
    patience: int = 6
    max_epochs: int = 500
    n_networks: int = 10
    seed: int = 0

    def spec(self, input_dim=51):
        return MlpSpec(input_dim, list(self.hidden_sizes), self.activation, 2,
                       ["linear", "softplus"])


@dataclass
class DrnModel:
    networks: list
    config: DrnConfig = field(default_factory=DrnConfig)
    histories: list = field(default_factory=list)

    def member_params(self, X):
        """Per-network ``(mu, sigma)`` arrays of shape ``(n_networks, n)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        outs = [net.forward(X) for net in self.networks]
        mu = np.stack([o[:, 0] for o in outs])
        sigma = np.stack([o[:, 1] for o in outs]) + SIGMA_OFFSET
        return mu, sigma

    def to_dict(self):
        cfg = asdict(self.config)
        cfg["hidden_sizes"] = list(cfg["hidden_sizes"])
        return {"config": cfg, "networks": [n.to_dict() for n in self.networks]}

    @classmethod
    def from_dict(cls, doc):
        cfg = DrnConfig(**doc["config"])
        return cls([Network.from_dict(n) for n in doc["networks"]], cfg)


def _xy(data):
    if hasattr(data, "members"):
        return data.features(), data.obs
    X, y = data
    return np.asarray(X, dtype=float), np.asarray(y, dtype=float)


def fit_drn(train, val, cfg=None, threads=1):
    """Train ``cfg.n_networks`` networks with distinct seeds on the CRPS loss.

    ``train`` and ``val`` are datasets (inputs: control plus sorted
    members) or ``(X, y)`` pairs.
    """
    cfg = cfg or DrnConfig()
    X, y = _xy(train)
    Xv, yv = _xy(val)

    def fit_one(seed):
        net = Network(cfg.spec(X.shape[1]), seed=seed)
        tc = TrainConfig(loss=crps_loss, learning_rate=cfg.learning_rate,
                         batch_size=cfg.batch_size, patience=cfg.patience,
                         max_epochs=cfg.max_epochs, seed=seed)
        return train_early_stopping(net, (X, y), (Xv, yv), tc)

    results = parallel_map(fit_one, child_seeds(cfg.seed, cfg.n_networks), threads)
    return DrnModel([r[0] for r in results], cfg, [r[1] for r in results])


def predict_drn(m, members):
    """Parameter-averaged censored-normal prediction of the network ensemble.

    ``members`` is one ``(51,)`` input row or an ``(n, 51)`` matrix.
    """
    mu, sigma = m.member_params(members)
    return cn.CensoredNormalParams(mu.mean(axis=0), sigma.mean(axis=0))


def params_quantiles(p, levels=LEVELS):
    """Quantile matrix ``(n, len(levels))`` of censored-normal parameters."""
    mu = np.atleast_1d(p.mu)[:, None]
    sigma = np.atleast_1d(p.sigma)[:, None]
    return cn.quantile(np.asarray(levels)[None, :], cn.CensoredNormalParams(mu, sigma))


def drn_quantiles(m, members):
    return QuantileForecast(params_quantiles(predict_drn(m, members)))
