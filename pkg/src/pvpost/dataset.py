"""Forecast/observation data: ingest, validation, filtering, splits and synthesis.

A :class:`Dataset` stores its cases column-wise in numpy arrays.  Member
column 0 is the control forecast; columns 1..50 are the exchangeable
perturbed members.  All power values are normalized by the plant's
nominal AC power.
"""

import csv
import math
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone

import numpy as np

from .errors import ConfigError, ParseError, SchemaError, ValidationError

N_MEMBERS = 51
MEMBER_COLUMNS = [f"m{k:02d}" for k in range(1, N_MEMBERS + 1)]
REQUIRED_COLUMNS = ["timestamp", "plant_id", "lead_min", "obs"]
VAR_FLOOR = 1e-10


@dataclass(frozen=True)
class ForecastCase:
    timestamp: np.datetime64
    plant_id: str
    lead_time: int
    members: np.ndarray
    observation: float
    zenith_angle: float = None

    @property
    def ctrl(self):
        return float(self.members[0])


@dataclass(frozen=True)
class EnsembleStats:
    """Control member, mean and unbiased variance of the exchangeable members.

    Fields are floats for a single case and arrays for a dataset.
    """

    ctrl: object
    mean: object
    var: object

    @property
    def sd(self):
        return np.sqrt(self.var)


@dataclass(frozen=True)
class SplitPlan:
    train_indices: np.ndarray
    validation_indices: np.ndarray
    holdout_indices: np.ndarray


@dataclass
class Dataset:
    """Column-wise collection of forecast cases sorted by (plant, time)."""

    timestamps: np.ndarray
    plant_ids: np.ndarray
    lead_times: np.ndarray
    members: np.ndarray
    obs: np.ndarray
    zenith: np.ndarray = None
    nominal_power_ac: dict = field(default_factory=dict)
    mean_daytime_power: dict = field(default_factory=dict)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[s]")
        self.plant_ids = np.asarray(self.plant_ids, dtype=object)
        self.lead_times = np.asarray(self.lead_times, dtype=np.int64)
        self.members = np.asarray(self.members, dtype=float).reshape(-1, N_MEMBERS)
        self.obs = np.asarray(self.obs, dtype=float)
        if self.zenith is not None:
            self.zenith = np.asarray(self.zenith, dtype=float)
        n = self.obs.size
        lengths = {self.timestamps.size, self.plant_ids.size, self.lead_times.size,
                   self.members.shape[0]}
        if self.zenith is not None:
            lengths.add(self.zenith.size)
        if lengths != {n}:
            raise ValidationError("dataset columns have different lengths")
        if np.any(~np.isfinite(self.members)) or np.any(~np.isfinite(self.obs)):
            raise ValidationError("non-finite member or observation values")

        order = np.lexsort((self.timestamps, self.plant_ids.astype(str)))
        if np.any(order != np.arange(n)):
            for name in ("timestamps", "plant_ids", "lead_times", "members", "obs", "zenith"):
                v = getattr(self, name)
                if v is not None:
                    setattr(self, name, v[order])
        same = (self.plant_ids[1:] == self.plant_ids[:-1]) & (
            self.timestamps[1:] == self.timestamps[:-1]
        )
        if np.any(same):
            i = int(np.flatnonzero(same)[0])
            raise ValidationError(
                f"duplicate case for plant {self.plant_ids[i]!r} at {self.timestamps[i]}"
            )

    def __len__(self):
        return self.obs.size

    def __iter__(self):
        return (self.case(i) for i in range(len(self)))

    def case(self, i):
        return ForecastCase(
            timestamp=self.timestamps[i],
            plant_id=str(self.plant_ids[i]),
            lead_time=int(self.lead_times[i]),
            members=self.members[i].copy(),
            observation=float(self.obs[i]),
            zenith_angle=None if self.zenith is None else float(self.zenith[i]),
        )

    def subset(self, indices):
        indices = np.asarray(indices)
        return Dataset(
            timestamps=self.timestamps[indices],
            plant_ids=self.plant_ids[indices],
            lead_times=self.lead_times[indices],
            members=self.members[indices],
            obs=self.obs[indices],
            zenith=None if self.zenith is None else self.zenith[indices],
            nominal_power_ac=dict(self.nominal_power_ac),
            mean_daytime_power=dict(self.mean_daytime_power),
        )

    @property
    def days(self):
        """Calendar day (UTC) of every case as ``datetime64[D]``."""
        return self.timestamps.astype("datetime64[D]")

    @property
    def time_of_day(self):
        """Minutes after UTC midnight of every case."""
        return ((self.timestamps - self.days).astype(np.int64) // 60).astype(np.int64)

    def features(self):
        """Model inputs: control member followed by the sorted perturbed members."""
        return sort_members_array(self.members)

    def nominal_for_cases(self):
        return np.array([self.nominal_power_ac.get(p, 1.0) for p in self.plant_ids])

    def score_scale(self):
        """Per-case normalized mean daytime power used to express scores in %."""
        return np.array(
            [
                self.mean_daytime_power.get(p, math.nan) / self.nominal_power_ac.get(p, 1.0)
                for p in self.plant_ids
            ]
        )


def sort_members_array(members):
    """Sort columns 1..50 of an ``(n, 51)`` member matrix, keeping column 0."""
    m = np.array(members, dtype=float, copy=True)
    m[..., 1:] = np.sort(m[..., 1:], axis=-1)
    return m


def sort_members(c):
    """Return the case with its exchangeable members in non-decreasing order.

    The control member (index 0) keeps its position.
    """
    return ForecastCase(
        timestamp=c.timestamp,
        plant_id=c.plant_id,
        lead_time=c.lead_time,
        members=sort_members_array(c.members),
        observation=c.observation,
        zenith_angle=c.zenith_angle,
    )


def ensemble_stats(c):
    """Control, mean and variance (divisor 49) of the 50 exchangeable members.

    Accepts a :class:`ForecastCase`, a :class:`Dataset` or a raw member
    array of shape ``(51,)`` or ``(n, 51)``.
    """
    m = c.members if isinstance(c, (ForecastCase, Dataset)) else np.asarray(c, dtype=float)
    ex = m[..., 1:]
    mean = ex.mean(axis=-1)
    var = ex.var(axis=-1, ddof=1)
    ctrl = m[..., 0]
    if np.ndim(mean) == 0:
        return EnsembleStats(float(ctrl), float(mean), float(var))
    return EnsembleStats(ctrl.copy(), mean, var)


def daytime_filter(d, elevation=None):
    """Keep cases with zenith angle below 90 degrees and positive observed power.

    ``elevation`` (solar elevation in degrees, one per case) substitutes
    for a missing zenith column.
    """
    if d.zenith is not None:
        zenith = d.zenith
    elif elevation is not None:
        zenith = 90.0 - np.asarray(elevation, dtype=float)
    else:
        raise ConfigError("daytime filter needs zenith angles or a solar-elevation proxy")
    keep = (zenith < 90.0) & (d.obs > 0.0)
    return d.subset(np.flatnonzero(keep))


def split_five_day_blocks(d, final=False):
    """Split whole calendar days into train/validation/holdout index sets.

    Days are numbered from the first day in the data.  In each five-day
    block days 1-3 train, day 4 validates and day 5 is held out.  With
    ``final=True`` every fifth day validates and the rest train (no holdout).
    """
    if len(d) == 0:
        raise ValidationError("empty dataset")
    days = d.days
    day_no = (days - days.min()).astype(np.int64)
    if day_no.max() + 1 < 5:
        raise ValidationError("five-day block split needs a span of at least 5 days")
    pos = day_no % 5
    if final:
        train, val, hold = pos != 4, pos == 4, np.zeros_like(pos, dtype=bool)
    else:
        train, val, hold = pos <= 2, pos == 3, pos == 4
    return SplitPlan(np.flatnonzero(train), np.flatnonzero(val), np.flatnonzero(hold))


# --------------------------------------------------------------------- CSV

def _parse_timestamp(text):
    t = text.strip()
    if t.endswith("Z"):
        t = t[:-1] + "+00:00"
    dt = datetime.fromisoformat(t)
    if dt.tzinfo is not None:
        dt = dt.astimezone(timezone.utc).replace(tzinfo=None)
    return np.datetime64(dt, "s")


def _format_timestamp(ts):
    return str(np.datetime64(ts, "s")) + "Z"


def ingest_csv(path, schema=None, nominal_power=None, clip=True):
    """Read a forecast/observation CSV into a normalized :class:`Dataset`.

    Parameters
    ----------
    path : str or path-like
    schema : dict, optional
        Maps canonical column names (``timestamp``, ``plant_id``,
        ``lead_min``, ``obs``, ``m01``..``m51``, ``zenith``, ``nominal_kw``)
        to the names used in the file.
    nominal_power : float or dict, optional
        Nominal AC power (kW) per plant.  Falls back to an optional
        ``nominal_kw`` column, then to 1 (data already normalized).
    clip : bool
        Clip normalized values into [0, 1] instead of rejecting them.
    """
    schema = dict(schema or {})
    col = lambda name: schema.get(name, name)  # noqa: E731

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError("empty file") from None
        pos = {name: i for i, name in enumerate(header)}
        missing = [c for c in REQUIRED_COLUMNS if col(c) not in pos]
        if missing:
            raise SchemaError(f"missing columns: {', '.join(missing)}")
        member_cols = [c for c in MEMBER_COLUMNS if col(c) in pos]
        extra = [h for h in header if h.startswith("m") and h[1:].isdigit() and h not in
                 {col(c) for c in MEMBER_COLUMNS}]
        if len(member_cols) != N_MEMBERS or extra:
            raise SchemaError(f"header declares {len(member_cols) + len(extra)} members, "
                              f"expected {N_MEMBERS}")
        member_idx = [pos[col(c)] for c in MEMBER_COLUMNS]
        zen_idx = pos.get(col("zenith"))
        nom_idx = pos.get(col("nominal_kw"))

        ts, plants, leads, obs, members, zen, nom_col = [], [], [], [], [], [], {}
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != len(header):
                n_mem = len(row) - (len(header) - N_MEMBERS)
                raise SchemaError(f"expected {len(header)} fields ({N_MEMBERS} members), "
                                  f"found {len(row)} ({n_mem} members)", row=row_no)
            values = [row[i].strip() for i in member_idx]
            if any(v == "" for v in values):
                n_mem = sum(v != "" for v in values)
                raise SchemaError(f"{n_mem} member values present, expected {N_MEMBERS}",
                                  row=row_no)
            try:
                ts.append(_parse_timestamp(row[pos[col("timestamp")]]))
                plant = row[pos[col("plant_id")]].strip()
                plants.append(plant)
                leads.append(int(float(row[pos[col("lead_min")]])))
                obs.append(float(row[pos[col("obs")]]))
                members.append([float(v) for v in values])
                if zen_idx is not None:
                    zen.append(float(row[zen_idx]))
                if nom_idx is not None:
                    nom_col.setdefault(plant, float(row[nom_idx]))
            except ValueError as exc:
                raise ParseError(str(exc), row=row_no) from None

    if isinstance(nominal_power, dict):
        nominal = dict(nominal_power)
    elif nominal_power is not None:
        nominal = {p: float(nominal_power) for p in set(plants)}
    else:
        nominal = {p: nom_col.get(p, 1.0) for p in set(plants)}
    missing_nom = set(plants) - set(nominal)
    if missing_nom:
        raise ConfigError(f"no nominal power for plants {sorted(missing_nom)}")
    if any(v <= 0 for v in nominal.values()):
        raise ConfigError("nominal power must be positive")

    plants_arr = np.array(plants, dtype=object)
    scale = np.array([nominal[p] for p in plants], dtype=float)
    obs_kw = np.array(obs, dtype=float)
    m = np.array(members, dtype=float).reshape(-1, N_MEMBERS) / scale[:, None] if members \
        else np.empty((0, N_MEMBERS))
    y = obs_kw / scale if obs else np.empty(0)
    zen_arr = np.array(zen, dtype=float) if zen_idx is not None else None

    out_of_range = (m < 0).any(axis=1) | (m > 1).any(axis=1) | (y < 0) | (y > 1)
    if np.any(out_of_range):
        if not clip:
            raise ValidationError(f"{int(out_of_range.sum())} rows outside [0, nominal power]")
        m = np.clip(m, 0.0, 1.0)
        y = np.clip(y, 0.0, 1.0)

    mdp = {}
    for p in set(plants):
        sel = (plants_arr == p) & (obs_kw > 0)
        if zen_arr is not None:
            sel &= zen_arr < 90.0
        mdp[p] = float(obs_kw[sel].mean()) if sel.any() else math.nan

    return Dataset(
        timestamps=np.array(ts, dtype="datetime64[s]"),
        plant_ids=plants_arr,
        lead_times=np.array(leads, dtype=np.int64),
        members=m,
        obs=y,
        zenith=zen_arr,
        nominal_power_ac=nominal,
        mean_daytime_power=mdp,
    )


def _fmt(x):
    return repr(float(x))


def write_csv(d, path):
    """Write a dataset in the ingest schema, with power in kW."""
    scale = d.nominal_for_cases()
    header = REQUIRED_COLUMNS + MEMBER_COLUMNS + ["nominal_kw"]
    if d.zenith is not None:
        header.append("zenith")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(d)):
            row = [_format_timestamp(d.timestamps[i]), d.plant_ids[i], int(d.lead_times[i]),
                   _fmt(d.obs[i] * scale[i])]
            row.extend(_fmt(v) for v in d.members[i] * scale[i])
            row.append(_fmt(scale[i]))
            if d.zenith is not None:
                row.append(_fmt(d.zenith[i]))
            w.writerow(row)


# --------------------------------------------------------------- synthesis

@dataclass
class SynthConfig:
    """Parameters of the synthetic data generator.

    Observations follow a censored normal with location ``a0 + a1 * s(t)``
    (optionally bent by ``nonlinear_amp * sin(2 pi x)``) and scale ``b0``.
    Members follow the same law shifted by ``bias`` with scale
    ``b0 * deflation``.  ``day_spread`` scales the diurnal bell by a daily
    factor drawn from U(1 - day_spread, 1).
    """

    a0: float = 0.15
    a1: float = 0.6
    b0: float = 0.08
    bias: float = 0.0
    deflation: float = 1.0
    days: int = 30
    cases_per_day: int = 65
    seed: int = 0
    day_spread: float = 0.0
    nonlinear_amp: float = 0.0
    sunrise_hour: float = 3.0
    sunset_hour: float = 19.0
    first_slot_hour: float = 3.0
    cadence_min: int = 15
    start: str = "2019-01-01"
    plant_id: str = "synthetic"
    nominal_power: float = 1.0

    def validate(self):
        if not self.b0 > 0:
            raise ConfigError("b0 (observation scale) must be positive")
        if not self.deflation > 0:
            raise ConfigError("deflation factor must be positive")
        if self.days < 1 or self.cases_per_day < 1:
            raise ConfigError("days and cases_per_day must be positive")
        if self.first_slot_hour * 60 + (self.cases_per_day - 1) * self.cadence_min >= 24 * 60:
            raise ConfigError("cases_per_day slots do not fit into one day")
        if not self.sunset_hour > self.sunrise_hour:
            raise ConfigError("sunset must follow sunrise")
        if not 0 <= self.day_spread <= 1:
            raise ConfigError("day_spread must lie in [0, 1]")
        if not self.nominal_power > 0:
            raise ConfigError("nominal power must be positive")
        return self


def load_synth_config(path):
    """Parse ``key = value`` lines (``#`` comments) into a :class:`SynthConfig`."""
    types = {f.name: f.type for f in fields(SynthConfig)}
    kw = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            sep = "=" if "=" in line else ":"
            if sep not in line:
                raise ConfigError(f"line {line_no}: expected 'key = value'")
            key, value = (s.strip() for s in line.split(sep, 1))
            if key not in types:
                raise ConfigError(f"line {line_no}: unknown key {key!r}")
            try:
                kw[key] = types[key](value)
            except ValueError:
                raise ConfigError(f"line {line_no}: bad value for {key}: {value!r}") from None
    return SynthConfig(**kw).validate()


def diurnal_signal(hour, sunrise=3.0, sunset=19.0):
    """``max(0, sin(pi * (t - sunrise) / (sunset - sunrise)))`` for hours of day."""
    return np.maximum(0.0, np.sin(np.pi * (np.asarray(hour) - sunrise) / (sunset - sunrise)))


def synth_truth(cfg, x):
    """Location of the observation law given the latent member location ``x``."""
    return x + cfg.nonlinear_amp * np.sin(2.0 * np.pi * x)


def synth_generate(cfg, seed=None):
    """Generate a synthetic dataset with known conditional law.

    Returns the dataset; the true observation law of case ``i`` is
    ``CensoredNormalParams(truth_mu[i], cfg.b0)`` available through
    :func:`synth_generate_with_truth`.
    """
    return synth_generate_with_truth(cfg, seed)[0]


def synth_generate_with_truth(cfg, seed=None):
    """Like :func:`synth_generate` but also return the true per-case location."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    hours = cfg.first_slot_hour + np.arange(cfg.cases_per_day) * cfg.cadence_min / 60.0
    raw_bell = np.sin(np.pi * (hours - cfg.sunrise_hour) / (cfg.sunset_hour - cfg.sunrise_hour))
    bell = np.maximum(raw_bell, 0.0)
    day_factor = 1.0 - cfg.day_spread * rng.random(cfg.days)

    s = (day_factor[:, None] * bell[None, :]).reshape(-1)
    x = cfg.a0 + cfg.a1 * s
    mu = synth_truth(cfg, x)
    n = s.size
    obs = np.clip(mu + cfg.b0 * rng.standard_normal(n), 0.0, 1.0)
    members = np.clip(
        (x + cfg.bias)[:, None] + cfg.b0 * cfg.deflation * rng.standard_normal((n, N_MEMBERS)),
        0.0, 1.0,
    )

    start = np.datetime64(cfg.start, "D").astype("datetime64[s]")
    offsets = np.round(hours * 3600).astype(np.int64)
    day_sec = np.arange(cfg.days, dtype=np.int64) * 86400
    ts = start + (day_sec[:, None] + offsets[None, :]).reshape(-1).astype("timedelta64[s]")
    lead = np.tile(np.round(hours * 60).astype(np.int64), cfg.days)
    zenith = np.tile(90.0 - 90.0 * raw_bell, cfg.days)

    d = Dataset(
        timestamps=ts,
        plant_ids=np.full(n, cfg.plant_id, dtype=object),
        lead_times=lead,
        members=members,
        obs=obs,
        zenith=zenith,
        nominal_power_ac={cfg.plant_id: cfg.nominal_power},
    )
    day = d.zenith < 90
    pos = day & (d.obs > 0)
    d.mean_daytime_power = {
        cfg.plant_id: float(d.obs[pos].mean() * cfg.nominal_power) if pos.any() else math.nan
    }
    return d, mu
