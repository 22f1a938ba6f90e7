"""Command-line interface: ``pvpost synth|train|predict|evaluate|compare``.

Exit codes are 0 on success, 2 for usage or configuration problems
(including missing input files) and 3 for data or model errors.
"""

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import inference
from . import quantile_models as qm
from ._parallel import child_seeds, default_threads
from .dataset import (
    SynthConfig,
    daytime_filter,
    ingest_csv,
    load_synth_config,
    split_five_day_blocks,
    synth_generate,
    write_csv,
)
from .drn import DrnConfig
from .errors import ConfigError, PvPostError, ValidationError
from .pipeline import (
    MODEL_KINDS,
    align_predictions,
    fit_model,
    load_model,
    predict_quantiles,
    raw_ensemble_quantiles,
    read_predictions,
    save_model,
    write_predictions,
)
from .report import evaluate_predictions, format_minutes, write_report
from .scoring import crps_ensemble

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 2, 3
RAW = "raw"

log = logging.getLogger("pvpost")


class UsageError(Exception):
    """Bad flag combination or missing file; maps to exit code 2."""


def _existing(path, what):
    if not path or not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _load(path):
    return ingest_csv(_existing(path, "input file"))


def _daytime(d):
    if d.zenith is not None:
        return daytime_filter(d)
    return d.subset(np.flatnonzero(d.obs > 0))


def parse_window(text):
    """``"HH:MM-HH:MM"`` to a pair of minutes after midnight (both inclusive)."""
    try:
        lo, hi = text.split("-")
        a = [int(v) for v in lo.split(":")]
        b = [int(v) for v in hi.split(":")]
        start, end = a[0] * 60 + a[1], b[0] * 60 + b[1]
    except (ValueError, IndexError):
        raise UsageError(f"bad --window {text!r}; expected HH:MM-HH:MM") from None
    if not 0 <= start <= end < 24 * 60:
        raise UsageError(f"bad --window {text!r}")
    return start, end


def parse_named_paths(items):
    out = {}
    for item in items or []:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise UsageError(f"--predictions expects name=path, got {item!r}")
        if name in out or name == RAW:
            raise UsageError(f"duplicate or reserved method name {name!r}")
        out[name] = _existing(path, f"predictions for {name}")
    return out


def _date_bounds(d, start, end):
    keep = np.ones(len(d), dtype=bool)
    if start:
        keep &= d.days >= np.datetime64(start, "D")
    if end:
        keep &= d.days <= np.datetime64(end, "D")
    return d.subset(np.flatnonzero(keep))


# ------------------------------------------------------------------ commands

def cmd_synth(args):
    cfg = load_synth_config(_existing(args.config, "config file")) if args.config else SynthConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    d = synth_generate(cfg.validate())
    write_csv(d, args.out)
    log.info("wrote %d cases to %s", len(d), args.out)


def _write_trials(trials, path):
    keys = list(trials[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for t in trials:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (t[k] for k in keys)])


def cmd_train(args):
    if args.model not in MODEL_KINDS:
        raise UsageError(f"unknown model {args.model!r}; choose from {', '.join(MODEL_KINDS)}")
    if args.hp_search and args.model not in qm.FITTERS:
        raise UsageError(f"--hp-search applies to {', '.join(qm.FITTERS)} only")
    d = _daytime(_date_bounds(_load(args.input), args.start, args.end))
    stem = os.path.splitext(args.out)[0]
    lines = [f"model {args.model}", f"cases {len(d)}", f"seed {args.seed}"]

    hp = None
    if args.model in qm.FITTERS and args.max_epochs:
        hp = qm.default_hyperparams(args.model)
        hp.max_epochs = args.max_epochs
    if args.hp_search:
        search_seed, fit_seed = child_seeds(args.seed, 2)
        hp, trials = qm.hyperparameter_search(
            args.model, qm.HyperparamSpace(), args.hp_search, d, split_five_day_blocks(d),
            seed=search_seed, max_epochs=args.max_epochs or 300, threads=args.threads)
        trial_path = stem + "_trials.csv"
        _write_trials(trials, trial_path)
        lines.append(f"search trials {len(trials)} -> {os.path.basename(trial_path)}")
        lines.append("best hp " + json.dumps(hp.to_dict(), sort_keys=True))
    else:
        fit_seed = args.seed

    drn_cfg = None
    if args.model == "cn-drn":
        drn_cfg = DrnConfig(seed=fit_seed)
        if args.max_epochs:
            drn_cfg.max_epochs = args.max_epochs
    tm = fit_model(args.model, d, hp=hp, seed=fit_seed, threads=args.threads,
                   drn_config=drn_cfg)
    if hp is not None:
        tm.metadata["hp"] = hp.to_dict()
    save_model(tm, args.out)
    for key in sorted(tm.metadata):
        lines.append(f"{key} {json.dumps(tm.metadata[key], sort_keys=True)}")
    with open(stem + ".log", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    log.info("trained %s on %d cases -> %s", args.model, len(d), args.out)


def cmd_predict(args):
    model_path = _existing(args.model, "model file")
    d = _load(args.input)
    try:
        tm = load_model(model_path)
    except (json.JSONDecodeError, KeyError, TypeError, ConfigError) as exc:
        raise ValidationError(f"cannot read model {model_path}: {exc}") from None
    q = predict_quantiles(tm, d)
    write_predictions(d, q, args.out)
    log.info("wrote %d x %d quantiles to %s", q.shape[0], q.shape[1], args.out)


def _predictions_for(d, named):
    preds = {RAW: raw_ensemble_quantiles(d)}
    for name, path in named.items():
        preds[name] = align_predictions(read_predictions(path), d)
    return preds


def cmd_evaluate(args):
    named = parse_named_paths(args.predictions)
    d = _daytime(_load(args.input))
    preds = _predictions_for(d, named)
    reference = args.reference or RAW
    if reference not in preds:
        raise UsageError(f"reference {reference!r} is not a supplied method")
    report = evaluate_predictions(preds, d, reference=reference, seed=args.seed)
    for path in write_report(report, args.out):
        log.info("wrote %s", path)


def cmd_compare(args):
    named = parse_named_paths(args.predictions)
    if len(named) < 2:
        raise UsageError("compare needs predictions from at least two methods")
    start, end = parse_window(args.window)
    d = _daytime(_load(args.input))
    minutes = d.time_of_day
    d = d.subset(np.flatnonzero((minutes >= start) & (minutes <= end)))
    if len(d) == 0:
        raise UsageError(f"no daytime cases inside window {args.window}")
    preds = {name: align_predictions(read_predictions(p), d) for name, p in named.items()}
    pct = 100.0 / d.score_scale()
    times = d.time_of_day
    scores = {name: crps_ensemble(q, d.obs) * pct for name, q in preds.items()}

    os.makedirs(args.out, exist_ok=True)
    uniq = np.unique(times)
    seeds = iter(child_seeds(args.seed, len(scores) * len(uniq)))
    ci_rows = []
    for name, s in scores.items():
        for t in uniq:
            sel = times == t
            seed = next(seeds)
            if sel.sum() < inference.MIN_BOOTSTRAP_LENGTH:
                continue
            ci = inference.block_bootstrap_ci(s[sel], seed=seed)
            ci_rows.append((name, format_minutes(t), int(sel.sum()), ci))
    inference.write_ci_csv(ci_rows, os.path.join(args.out, "bootstrap_ci.csv"))

    cells = {name: inference.cell_series(s, d.plant_ids, times, name) for name, s in scores.items()}
    dm = inference.dm_matrix(cells, threads=args.threads)
    inference.write_dm_matrix_csv(dm, os.path.join(args.out, "dm_matrix.csv"))
    summary = {
        "window": args.window,
        "methods": dm.methods,
        "alpha": dm.alpha,
        "tests": dm.n_tests.tolist(),
        "degenerate": dm.n_degenerate.tolist(),
        "missing": dm.n_missing.tolist(),
        "mean_crps_pct": {n: float(np.mean(s)) for n, s in scores.items()},
    }
    with open(os.path.join(args.out, "dm_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
        fh.write("\n")
    log.info("compared %d methods over %d cells", len(scores), len(next(iter(cells.values()))))


# -------------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="pvpost",
                                description="Post-processing of PV power ensemble forecasts.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_default=0):
        sp.add_argument("--out", required=True, help="output file or directory")
        sp.add_argument("--seed", type=int, default=seed_default)
        sp.add_argument("--threads", type=int, default=default_threads())

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("--config", help="key = value file with generator settings")
    common(sp, seed_default=None)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="fit a post-processing model")
    sp.add_argument("--input", required=True)
    sp.add_argument("--model", required=True, help=", ".join(MODEL_KINDS))
    sp.add_argument("--hp-search", type=int, default=0, metavar="N",
                    help="random hyperparameter search with N trials")
    sp.add_argument("--max-epochs", type=int, default=0)
    sp.add_argument("--start", help="first training day, YYYY-MM-DD")
    sp.add_argument("--end", help="last training day, YYYY-MM-DD")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("predict", help="write 51 quantiles per case in kW")
    sp.add_argument("--input", required=True)
    sp.add_argument("--model", required=True, help="model JSON written by train")
    common(sp)
    sp.set_defaults(func=cmd_predict)

    for name, func, helptext in (("evaluate", cmd_evaluate, "score tables and curve data"),
                                 ("compare", cmd_compare, "bootstrap intervals and DM tests")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--input", required=True, help="dataset with the observations")
        sp.add_argument("--predictions", action="append", metavar="NAME=PATH")
        if name == "evaluate":
            sp.add_argument("--reference", help="skill-score reference method (default: raw)")
        else:
            sp.add_argument("--window", default="06:00-16:00",
                            help="observation-time window, inclusive (default 06:00-16:00)")
        common(sp)
        sp.set_defaults(func=func)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "threads", 1) is not None and args.threads < 1:
        args.threads = 1
    try:
        args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"pvpost: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PvPostError, OSError, ValueError) as exc:
        print(f"pvpost: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
