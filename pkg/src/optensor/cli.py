"""``optensor`` command line: generate, train, evaluate, bs-price."""
import argparse
import datetime as dt
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import fields

from . import blackscholes as bs
from . import evaluation as ev
from . import market_data as md
from .errors import OptensorError, UsageError
from .models import MODEL_KINDS, ModelConfig
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

log = logging.getLogger("optensor")


class ConfigError(UsageError):
    category = "config"


MODEL_KEYS = {f.name for f in fields(ModelConfig)}
TRAIN_KEYS = {"batch_size", "learning_rate", "epochs", "seed", "data", "out", "n_train_options", "min_days"}
REQUIRED_KEYS = ("model", "seed", "data")


# manifest ----------------------------------------------------------------

def _now():
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command, config, inputs, outputs, seed, started):
    manifest = {
        "command": command,
        "config": config,
        "inputs": {p: file_digest(p) for p in inputs},
        "outputs": list(outputs),
        "seed": seed,
        "started": started,
        "finished": _now(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


# config ------------------------------------------------------------------

def load_train_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not a valid config document ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a key-value object")
    for key in REQUIRED_KEYS:
        if key not in raw:
            raise ConfigError(f"missing config field `{key}`")
    unknown = sorted(set(raw) - MODEL_KEYS - TRAIN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config field `{unknown[0]}`")
    if raw["model"] not in MODEL_KINDS:
        raise ConfigError(f"config field `model` must be one of {', '.join(MODEL_KINDS)}")
    if raw["model"] == "bs":
        raise UsageError("B-S baseline has no trainable parameters")
    for key in ("seed", "batch_size", "epochs", "n_train_options", "min_days", "hidden_channels",
                "kernel_size", "lstm_hidden", "conv_channels", "regression_hidden", "window"):
        if key in raw and (not isinstance(raw[key], int) or isinstance(raw[key], bool)):
            raise ConfigError(f"config field `{key}` must be an integer")
    if "learning_rate" in raw and not isinstance(raw["learning_rate"], (int, float)):
        raise ConfigError("config field `learning_rate` must be a number")
    for key in ("dilations", "gru_hidden"):
        if key in raw and not (isinstance(raw[key], list) and all(isinstance(v, int) for v in raw[key])):
            raise ConfigError(f"config field `{key}` must be a list of integers")
    model = ModelConfig(**{k: v for k, v in raw.items() if k in MODEL_KEYS})
    train_kw = {k: v for k, v in raw.items() if k in TRAIN_KEYS}
    return TrainConfig(model=model, **train_kw), raw


def prepare_split(records, n_train_options, min_days, window=md.WINDOW):
    """filter -> split -> train-only normalization; returns (train, test, stats)."""
    records = md.filter_min_lifetime(records, min_days)
    n_options = len(md.option_order(records))
    if n_options == 0:
        raise UsageError(f"empty split: no option has at least {min_days} trading days")
    if n_train_options >= n_options:
        train_recs, test_recs = records, []
    else:
        train_recs, test_recs = md.split_by_option(records, n_train_options)
    return train_recs, test_recs, md.fit_normalization(train_recs)


# commands ----------------------------------------------------------------

def cmd_generate(args):
    started = _now()
    cfg = md.SyntheticConfig(
        n_options=args.options, days_per_option=args.days,
        gbm=md.GbmConfig(s0=args.s0, mu=args.mu, sigma=args.sigma),
        rate=args.rate, noise_std=args.noise_std, seed=args.seed,
    )
    if args.days < md.WINDOW:
        log.warning("--days %d is shorter than the %d-day window; no training samples will result",
                    args.days, md.WINDOW)
    records = md.generate_synthetic(cfg)
    md.write_csv(records, args.out)
    write_manifest(args.out + ".manifest.json", "generate", vars_config(args), [], [args.out],
                   args.seed, started)
    log.info("wrote %d rows to %s", len(records), args.out)


def vars_config(args):
    return {k: v for k, v in vars(args).items() if k not in ("func", "quiet")}


def cmd_train(args):
    started = _now()
    config, raw = load_train_config(args.config)
    out = args.out or config.out or "."
    os.makedirs(out, exist_ok=True)
    records = md.load_csv(config.data)
    train_recs, _, stats = prepare_split(records, config.n_train_options, config.min_days,
                                         config.model.window)
    data = md.build_windows(train_recs, stats, config.model.window)
    if len(data) == 0:
        raise UsageError("empty training set after windowing")
    ckpt_path = os.path.join(out, "checkpoint.opnn")
    log_path = os.path.join(out, "train_log.csv")
    ckpt = train(config, data, log_path=log_path)
    save_checkpoint(ckpt, ckpt_path)
    write_manifest(os.path.join(out, "manifest.json"), "train", raw, [args.config, config.data],
                   [ckpt_path, log_path], config.seed, started)
    log.info("final train_mse %.6g; checkpoint %s", ckpt.history[-1], ckpt_path)


def cmd_evaluate(args):
    started = _now()
    os.makedirs(args.out, exist_ok=True)
    records = md.load_csv(args.data)
    inputs = [args.data]
    if args.model == "bs":
        n_train, min_days, window = args.n_train_options, args.min_days, md.WINDOW
        ckpt = None
    else:
        if not args.checkpoint:
            raise UsageError("--checkpoint is required unless --model bs")
        ckpt = load_checkpoint(args.checkpoint)
        hp = ckpt.config.get("train", {})
        n_train = hp.get("n_train_options", args.n_train_options)
        min_days = hp.get("min_days", args.min_days)
        window = ckpt.model_config.window
        inputs.append(args.checkpoint)

    train_recs, test_recs, stats = prepare_split(records, n_train, min_days, window)
    split_recs = train_recs if args.split == "train" else test_recs
    if not split_recs:
        raise UsageError(f"empty split: no options fall in the {args.split} split")
    if ckpt is not None:
        stats = ckpt.norm_stats
    data = md.build_windows(split_recs, stats, window)
    if len(data) == 0:
        raise UsageError(f"empty split: the {args.split} split has no {window}-day windows")

    if ckpt is None:
        report, preds = ev.evaluate_bs(data, args.rate, args.split)
    else:
        report, preds = ev.evaluate(ckpt, data, args.split)
    reports = [report]
    if args.with_baselines:
        if ckpt is not None:
            reports.append(ev.evaluate_bs(data, args.rate, args.split)[0])
        reports.append(ev.evaluate_naive(data, args.split)[0])

    paths = [os.path.join(args.out, n) for n in ("metrics.txt", "metrics.csv", "predictions.csv")]
    table = ev.format_table(reports)
    with open(paths[0], "w", encoding="utf-8") as fh:
        fh.write(table)
    ev.write_metrics_csv(reports, paths[1])
    ev.write_predictions(preds, paths[2])
    write_manifest(os.path.join(args.out, "manifest.json"), "evaluate", vars_config(args), inputs,
                   paths, None, started)
    if not args.quiet:
        sys.stdout.write(table)


def cmd_bs_price(args):
    for flag, value in (("--spot", args.spot), ("--strike", args.strike)):
        if not (math.isfinite(value) and value > 0):
            raise UsageError(f"{flag} must be positive, got {value}")
    if not (math.isfinite(args.days) and args.days >= 0):
        raise UsageError(f"--days must be >= 0, got {args.days}")
    if not (math.isfinite(args.vol) and args.vol >= 0):
        raise UsageError(f"--vol must be >= 0, got {args.vol}")
    if not math.isfinite(args.rate):
        raise UsageError(f"--rate must be finite, got {args.rate}")
    inp = bs.BsInputs(args.spot, args.strike, args.days, args.rate, args.vol, args.kind)
    print(f"{bs.bs_price(inp):.6f}")
    if args.greeks:
        if args.days == 0 or args.vol == 0:
            raise UsageError("--greeks needs --days > 0 and --vol > 0")
        g = bs.bs_greeks(inp)
        for name in ("delta", "gamma", "theta", "vega", "rho"):
            print(f"{name} {getattr(g, name):.6f}")


# parser ------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"error:usage: {message}\n")


def build_parser():
    p = _Parser(prog="optensor", description=__doc__)
    p.add_argument("--quiet", action="store_true", help="only print errors")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic option dataset CSV")
    g.add_argument("--options", type=int, required=True)
    g.add_argument("--days", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise-std", type=float, default=0.02)
    g.add_argument("--rate", type=float, default=bs.DEFAULT_RATE)
    g.add_argument("--s0", type=float, default=md.GbmConfig.s0)
    g.add_argument("--mu", type=float, default=md.GbmConfig.mu)
    g.add_argument("--sigma", type=float, default=md.GbmConfig.sigma)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="filter, split, normalize, window and train a model")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="output directory (overrides the config's `out`)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint (or the B-S baseline) on a split")
    e.add_argument("--checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("train", "test"), default="test")
    e.add_argument("--model", choices=("bs",), help="evaluate the learning-free B-S baseline")
    e.add_argument("--rate", type=float, default=bs.DEFAULT_RATE)
    e.add_argument("--n-train-options", type=int, default=600)
    e.add_argument("--min-days", type=int, default=20)
    e.add_argument("--with-baselines", action="store_true", help="add B-S and naive rows to the table")
    e.add_argument("--out", default=".")
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("bs-price", help="Black-Scholes price (and Greeks) of one option")
    b.add_argument("--spot", type=float, required=True)
    b.add_argument("--strike", type=float, required=True)
    b.add_argument("--days", type=float, required=True)
    b.add_argument("--rate", type=float, default=bs.DEFAULT_RATE)
    b.add_argument("--vol", type=float, required=True)
    b.add_argument("--kind", choices=("call", "put"), default="call")
    b.add_argument("--greeks", action="store_true")
    b.set_defaults(func=cmd_bs_price)
    return p


_handler = None


def _setup_logging(quiet):
    # own handler on the package logger: basicConfig is a no-op once the root logger has handlers
    global _handler
    if _handler is not None:
        log.removeHandler(_handler)
    _handler = logging.StreamHandler(sys.stderr)
    _handler.setFormatter(logging.Formatter("%(message)s"))
    log.addHandler(_handler)
    log.setLevel(logging.WARNING if quiet else logging.INFO)
    log.propagate = False


def main(argv=None):
    args = build_parser().parse_args(argv)
    _setup_logging(args.quiet)
    try:
        args.func(args)
    except OptensorError as exc:
        print(f"error:{exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error:io: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
