"""Command line front end.

Every subcommand accepts ``--config FILE`` holding ``key = value`` lines
(``#`` starts a comment).  Keys use the long flag names with dashes or
underscores; flags given on the command line override file values.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .analytics import PARAM_NAMES, CurveKind, Quantity
from .curve import (DEFAULT_NS, MarketCurve, nelson_siegel_curve, read_curve_csv,
                    write_curve_csv)
from .dataset import (DEFAULT_GAMMA, DIRECT_DT, DIRECT_STEPS, DIRECT_TENORS, INDIRECT_TENORS,
                      REFERENCE_PARAMS, build_direct, build_indirect, export_csv,
                      extend_reference, read_dataset, sample_params, split, write_dataset)
from .pipeline import Calibrator, TrainConfig, evaluate, train
from .pipeline.bench import bench
from .pipeline.sensitivity import sensitivity_report, write_sensitivity_csv

log = logging.getLogger("g2ppcal")

VARIANTS = ("cov-zc", "cov-fwd", "corr-zc", "corr-fwd", "direct")


class ConfigError(Exception):
    """Bad usage or configuration; exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma separated numbers, got {text!r}") from exc


def _variant(text: str) -> str:
    v = text.lower().replace("cor-", "corr-")
    if v not in VARIANTS:
        raise ConfigError(f"unknown variant {text!r}; choose from {', '.join(VARIANTS)}")
    return v


# key -> (converter, default); keys double as flag names
OPTIONS = {
    "variant": (_variant, None),
    "n": (int, 10_000),
    "seed": (int, 42),
    "gamma": (float, DEFAULT_GAMMA),
    "curve": (str, None),
    "ns": (_floats, list(DEFAULT_NS)),
    "n_steps": (int, DIRECT_STEPS),
    "dt": (float, DIRECT_DT),
    "out": (str, None),
    "csv": (str, None),
    "dataset": (str, None),
    "checkpoint": (str, None),
    "epochs": (int, None),
    "lr": (float, None),
    "batch_size": (int, 1000),
    "train_fraction": (float, 0.8),
    "channels": (int, 4),
    "features": (str, None),
    "n_classical": (int, 5),
    "n_samples": (int, 100),
    "pair": (_floats, [5.0, 7.0]),
    "kind": (str, "zc"),
    "validate": (str, None),
}

COMMAND_OPTIONS = {
    "gen-data": ("variant", "n", "seed", "gamma", "curve", "ns", "n_steps", "dt", "out", "csv"),
    "train": ("variant", "dataset", "n", "seed", "gamma", "curve", "ns", "n_steps", "dt", "out",
              "epochs", "lr", "batch_size", "train_fraction", "channels"),
    "evaluate": ("checkpoint", "dataset", "out"),
    "calibrate": ("checkpoint", "features"),
    "bench": ("checkpoint", "dataset", "n_classical", "out"),
    "sensitivity": ("n_samples", "pair", "kind", "gamma", "out"),
    "curve": ("ns", "out", "validate"),
}


def read_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def resolve(command: str, flags: dict) -> dict:
    """Merge config file and flags for one command; unknown keys are errors."""
    allowed = COMMAND_OPTIONS[command]
    merged = {}
    if flags.get("config"):
        for key, value in read_config(flags["config"]).items():
            if key not in allowed:
                raise ConfigError(f"unknown config key {key!r} for {command}")
            merged[key] = value
    for key in allowed:
        if flags.get(key) is not None:
            merged[key] = flags[key]
    out = {}
    for key in allowed:
        conv, default = OPTIONS[key]
        if key in merged:
            value = merged[key]
            try:
                out[key] = conv(value) if isinstance(value, str) else value
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {value!r}") from exc
        else:
            out[key] = default
    return out


def _require(cfg: dict, *keys):
    for key in keys:
        if cfg.get(key) is None:
            raise ConfigError(f"missing required option --{key.replace('_', '-')}")


def _existing(path, what):
    if path is not None and not Path(path).is_file():
        raise ConfigError(f"{what} not found: {path}")


def _writable(path):
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise ConfigError(f"output directory does not exist: {parent}")


def write_manifest(path, command: str, cfg: dict, extra: dict | None = None) -> None:
    import scipy

    manifest = {
        "command": command,
        "config": cfg,
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        **(extra or {}),
    }
    Path(path).write_text(json.dumps(manifest, indent=2, default=str) + "\n", encoding="utf-8")


def load_curve(cfg: dict) -> MarketCurve:
    if cfg.get("curve"):
        _existing(cfg["curve"], "curve file")
        return read_curve_csv(cfg["curve"])
    if len(cfg["ns"]) != 4:
        raise ConfigError("--ns needs beta0,beta1,beta2,tau")
    return nelson_siegel_curve(*cfg["ns"])


def generate(cfg: dict):
    variant = cfg["variant"]
    ranges = extend_reference(REFERENCE_PARAMS, cfg["gamma"])
    params = sample_params(ranges, cfg["n"], cfg["seed"])
    if variant == "direct":
        return build_direct(params, load_curve(cfg), DIRECT_TENORS, cfg["n_steps"], cfg["dt"])
    quantity, kind = variant.split("-")
    return build_indirect(params, INDIRECT_TENORS, CurveKind(kind), Quantity(quantity))


def cmd_gen_data(cfg):
    _require(cfg, "variant", "out")
    _writable(cfg["out"])
    ds = generate(cfg)
    write_dataset(ds, cfg["out"])
    if cfg["csv"]:
        _writable(cfg["csv"])
        export_csv(ds, cfg["csv"])
    write_manifest(cfg["out"] + ".manifest.json", "gen-data", cfg,
                   {"rows": len(ds), "feature_shape": list(ds.features.shape[1:])})
    print(f"wrote {len(ds)} rows ({ds.variant}, features {ds.features.shape[1:]}) to {cfg['out']}")


def _split_of(dataset, meta_cfg: dict):
    return split(dataset, meta_cfg["train_fraction"], meta_cfg["seed"])


def cmd_train(cfg):
    _require(cfg, "out")
    _writable(cfg["out"])
    if cfg["dataset"]:
        _existing(cfg["dataset"], "dataset")
        ds = read_dataset(cfg["dataset"])
        if cfg["variant"] and cfg["variant"] != ds.variant:
            raise ConfigError(f"--variant {cfg['variant']} does not match dataset {ds.variant}")
    else:
        _require(cfg, "variant")
        ds = generate(cfg)
    overrides = {k: cfg[k] for k in ("epochs", "lr") if cfg[k] is not None}
    overrides.update(batch_size=cfg["batch_size"], seed=cfg["seed"],
                     train_fraction=cfg["train_fraction"], channels=cfg["channels"])
    config = (TrainConfig.direct if ds.variant == "direct" else TrainConfig.indirect)(**overrides)
    train_set, _ = _split_of(ds, asdict(config))
    result = train(config, train_set)
    result.calibrator.save(cfg["out"])
    history_path = cfg["out"] + ".loss.csv"
    with open(history_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss"])
        for i, loss in enumerate(result.history, start=1):
            w.writerow([i, repr(loss)])
    write_manifest(cfg["out"] + ".manifest.json", "train", cfg,
                   {"train_config": asdict(config), "epochs_run": result.epochs_run,
                    "seconds": result.seconds})
    print(f"trained {ds.variant} for {result.epochs_run} epochs "
          f"(final loss {result.history[-1]:.3e}); checkpoint {cfg['out']}")
    print("config: " + json.dumps(asdict(config)))


def cmd_evaluate(cfg):
    _require(cfg, "checkpoint", "dataset", "out")
    _existing(cfg["checkpoint"], "checkpoint")
    _existing(cfg["dataset"], "dataset")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    calibrator = Calibrator.load(cfg["checkpoint"])
    ds = read_dataset(cfg["dataset"])
    _, validation = _split_of(ds, calibrator.meta["train_config"])
    report = evaluate(calibrator, validation)
    report.write_csv(out / f"report_{report.variant}.csv")
    (out / f"report_{report.variant}.json").write_text(report.summary() + "\n", encoding="utf-8")
    report.write_fitting_curves(out)
    write_manifest(out / "manifest.json", "evaluate", cfg)
    print(report.summary())


def read_feature_rows(path) -> np.ndarray:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                if i == 0:
                    continue  # header
                raise ConfigError(f"{path}: non-numeric value on line {i + 1}")
    if not rows:
        raise ConfigError(f"{path}: no feature rows")
    if len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{path}: rows have different lengths")
    return np.array(rows)


def cmd_calibrate(cfg):
    _require(cfg, "checkpoint", "features")
    _existing(cfg["checkpoint"], "checkpoint")
    _existing(cfg["features"], "feature file")
    calibrator = Calibrator.load(cfg["checkpoint"])
    feats = read_feature_rows(cfg["features"])
    if calibrator.pipeline == "direct":
        shape = calibrator.model.input_shape[1:]
        if feats.shape[1] != int(np.prod(shape)):
            raise ConfigError(f"direct calibrator expects {int(np.prod(shape))} values per row")
        feats = feats.reshape((-1,) + tuple(shape))
    elif feats.shape[1] != calibrator.model.input_shape[0]:
        raise ConfigError(f"{calibrator.variant} calibrator expects "
                          f"{calibrator.model.input_shape[0]} values per row, got {feats.shape[1]}")
    params = calibrator.predict(feats)
    print(",".join(PARAM_NAMES))
    for row in params:
        print(",".join(repr(float(v)) for v in row))


def cmd_bench(cfg):
    _require(cfg, "checkpoint", "dataset")
    _existing(cfg["checkpoint"], "checkpoint")
    _existing(cfg["dataset"], "dataset")
    calibrator = Calibrator.load(cfg["checkpoint"])
    ds = read_dataset(cfg["dataset"])
    if ds.variant == "direct":
        raise ConfigError("bench compares against the classical baseline; use an indirect dataset")
    _, validation = _split_of(ds, calibrator.meta["train_config"])
    result = bench(calibrator, validation, cfg["n_classical"])
    for name, value in result.table():
        print(f"{name:32s} {value:.6g}")
    if cfg["out"]:
        _writable(cfg["out"])
        result.write_csv(cfg["out"])


def cmd_sensitivity(cfg):
    _require(cfg, "out")
    _writable(cfg["out"])
    if len(cfg["pair"]) != 2:
        raise ConfigError("--pair needs two maturities, e.g. 5,7")
    ranges = extend_reference(REFERENCE_PARAMS, cfg["gamma"])
    sweeps = sensitivity_report(ranges, cfg["n_samples"], tuple(cfg["pair"]), CurveKind(cfg["kind"]))
    write_sensitivity_csv(sweeps, cfg["out"])
    write_manifest(cfg["out"] + ".manifest.json", "sensitivity", cfg)
    for s in sweeps:
        print(f"{s.parameter:8s} cov tail/max {s.vanishing_ratio(Quantity.COV):.3g}  "
              f"corr tail/max {s.vanishing_ratio(Quantity.CORR):.3g}")


def cmd_curve(cfg):
    if cfg["validate"]:
        _existing(cfg["validate"], "curve file")
        c = read_curve_csv(cfg["validate"])
        print(f"ok: {c.tenors.size} pillars up to {c.max_tenor}y")
        return
    _require(cfg, "out")
    _writable(cfg["out"])
    if len(cfg["ns"]) != 4:
        raise ConfigError("--ns needs beta0,beta1,beta2,tau")
    write_curve_csv(nelson_siegel_curve(*cfg["ns"]), cfg["out"])
    print(f"wrote Nelson-Siegel curve {cfg['ns']} to {cfg['out']}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "calibrate": cmd_calibrate,
    "bench": cmd_bench,
    "sensitivity": cmd_sensitivity,
    "curve": cmd_curve,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="g2ppcal", description="G2++ calibration with neural networks")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, keys in COMMAND_OPTIONS.items():
        p = sub.add_parser(name)
        p.add_argument("--config")
        for key in keys:
            p.add_argument("--" + key.replace("_", "-"), dest=key, type=str, default=None)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise ConfigError("missing subcommand; see --help")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s")
        cfg = resolve(args.command, vars(args))
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, ArithmeticError, RuntimeError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
