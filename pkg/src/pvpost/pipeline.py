"""Uniform fit/predict/persist interface over the seven post-processing models."""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import drn, emos
from . import quantile_models as qm
from .dataset import split_five_day_blocks
from .drn import DrnConfig, params_quantiles
from .dataset import _format_timestamp, _parse_timestamp
from .errors import ConfigError, ParseError, SchemaError, ValidationError
from .scoring import LEVELS

MODEL_KINDS = ("cn-emos", "cn-emos-b", "cn-drn", "lqr", "qrnn", "bqn", "ncqrnn")
FORMAT_VERSION = 1


@dataclass
class TrainedModel:
    """A fitted model of one of the seven kinds, with training metadata."""

    kind: str
    model: object
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return {"format_version": FORMAT_VERSION, "kind": self.kind,
                "metadata": self.metadata, "model": _model_to_dict(self.kind, self.model)}

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format_version") != FORMAT_VERSION:
            raise ConfigError(f"unsupported model format {doc.get('format_version')!r}")
        kind = doc["kind"]
        if kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {kind!r}")
        return cls(kind, _model_from_dict(kind, doc["model"]), doc.get("metadata", {}))


def _model_to_dict(kind, m):
    if kind == "cn-emos":
        return {"per_lead_time": {str(k): c.to_dict() for k, c in sorted(m["per_lead"].items())},
                "pooled": m["pooled"].to_dict()}
    return m.to_dict()


def _model_from_dict(kind, d):
    if kind == "cn-emos":
        return {"per_lead": {int(k): emos.EmosCoefficients(**c)
                             for k, c in d["per_lead_time"].items()},
                "pooled": emos.EmosCoefficients(**d["pooled"])}
    cls = {"cn-emos-b": emos.BoostedEmosModel, "cn-drn": drn.DrnModel, "lqr": qm.LqrModel,
           "qrnn": qm.QrnnModel, "bqn": qm.BqnModel, "ncqrnn": qm.NcqrnnModel}[kind]
    return cls.from_dict(d)


def save_model(tm, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(tm.to_dict(), fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return TrainedModel.from_dict(json.load(fh))


def fit_model(kind, data, hp=None, seed=0, split=None, threads=1, drn_config=None,
              boosting=None):
    """Fit a model of ``kind`` on ``data``.

    CN EMOS fits one model per lead time on all cases.  Every other kind is
    trained on pooled lead times using ``split`` (default: every fifth day
    for validation, the rest for training).
    """
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; choose from {', '.join(MODEL_KINDS)}")
    meta = {"n_cases": int(len(data))}
    if len(data):
        meta["first_day"] = str(data.days.min())
        meta["last_day"] = str(data.days.max())

    if kind == "cn-emos":
        per_lead = emos.fit_emos_per_lead_time(data)
        pooled = emos.fit_cn_emos(data)
        meta["n_lead_times"] = len(per_lead)
        meta["fallback_lead_times"] = sorted(k for k, c in per_lead.items()
                                             if c.status == "pooled-fallback")
        return TrainedModel(kind, {"per_lead": per_lead, "pooled": pooled}, meta)

    split = split or split_five_day_blocks(data, final=True)
    train = data.subset(split.train_indices)
    val = data.subset(split.validation_indices)
    meta.update(n_train=int(len(train)), n_validation=int(len(val)), seed=int(seed))

    if kind == "cn-emos-b":
        model = emos.fit_cn_emos_boosted(
            (emos.emos_b_covariates(train), train.obs), (emos.emos_b_covariates(val), val.obs),
            boosting, names=emos.EMOS_B_COVARIATES)
        meta["sigma_covariate"] = "standard deviation of the exchangeable members"
        meta["selected"] = model.selected()
        return TrainedModel(kind, model, meta)
    if kind == "cn-drn":
        cfg = drn_config or DrnConfig(seed=seed)
        model = drn.fit_drn(train, val, cfg, threads=threads)
        meta["epochs"] = [h.epochs_run for h in model.histories]
        return TrainedModel(kind, model, meta)

    fit, _ = qm.FITTERS[kind]
    model = fit(train, val, hp, seed=seed) if hp is not None else fit(train, val, seed=seed)
    if model.history is not None:
        meta["epochs"] = model.history.epochs_run
        meta["best_val_loss"] = model.history.best_val_loss
    return TrainedModel(kind, model, meta)


def predict_params(tm, data):
    """Censored-normal parameters for the parametric kinds."""
    if tm.kind == "cn-emos":
        stats = emos.ensemble_stats(data)
        mu = np.empty(len(data))
        sigma = np.empty(len(data))
        leads = np.asarray(data.lead_times)
        for lead in np.unique(leads):
            sel = leads == lead
            c = tm.model["per_lead"].get(int(lead), tm.model["pooled"])
            sub = emos.EnsembleStats(stats.ctrl[sel], stats.mean[sel], stats.var[sel])
            p = emos.predict_cn_emos(c, sub)
            mu[sel], sigma[sel] = p.mu, p.sigma
        return emos.cn.CensoredNormalParams(mu, sigma)
    if tm.kind == "cn-emos-b":
        return tm.model.predict(emos.emos_b_covariates(data))
    if tm.kind == "cn-drn":
        return drn.predict_drn(tm.model, data.features())
    raise ConfigError(f"{tm.kind} is not a parametric model")


def predict_quantiles(tm, data, levels=LEVELS):
    """``(n, 51)`` non-decreasing quantile matrix in normalized power units."""
    if len(data) == 0:
        return np.empty((0, len(levels)))
    if tm.kind in ("cn-emos", "cn-emos-b", "cn-drn"):
        return params_quantiles(predict_params(tm, data), levels)
    _, predict = qm.FITTERS[tm.kind]
    return predict(tm.model, data.features()).values


def raw_ensemble_quantiles(data):
    """The raw 51-member ensemble, sorted, as a quantile matrix."""
    return np.sort(data.members, axis=1)


QUANTILE_COLUMNS = [f"q{k:02d}" for k in range(1, len(LEVELS) + 1)]
PREDICTION_HEADER = ["timestamp", "plant_id", "lead_min"] + QUANTILE_COLUMNS


def write_predictions(data, quantiles, path):
    """Write quantiles in kW, one row per case of ``data``."""
    scale = data.nominal_for_cases()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_HEADER)
        for i in range(len(data)):
            row = [_format_timestamp(data.timestamps[i]), data.plant_ids[i],
                   int(data.lead_times[i])]
            row.extend(repr(float(v)) for v in quantiles[i] * scale[i])
            w.writerow(row)


def read_predictions(path):
    """Read a predictions file into ``{(timestamp, plant_id): kW quantiles}``."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PREDICTION_HEADER:
            raise SchemaError(f"{path}: expected header timestamp,plant_id,lead_min,q01..q51")
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(PREDICTION_HEADER):
                raise SchemaError(f"expected {len(PREDICTION_HEADER)} fields", row=row_no)
            try:
                key = (_parse_timestamp(row[0]), row[1].strip())
                out[key] = np.array([float(v) for v in row[3:]])
            except ValueError as exc:
                raise ParseError(str(exc), row=row_no) from None
    return out


def align_predictions(pred, data):
    """Normalized ``(n, 51)`` matrix of ``pred`` for the cases of ``data``."""
    scale = data.nominal_for_cases()
    q = np.empty((len(data), len(LEVELS)))
    for i in range(len(data)):
        key = (data.timestamps[i], str(data.plant_ids[i]))
        if key not in pred:
            raise ValidationError(f"no prediction for plant {key[1]!r} at "
                                  f"{_format_timestamp(key[0])}")
        q[i] = pred[key] / scale[i]
    return q
