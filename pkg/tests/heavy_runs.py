"""Desk-scale training runs shared by the acceptance suite.

Each run is cached under ``$G2PPCAL_ACCEPTANCE_CACHE`` (default
``<repo>/.acceptance_cache``) keyed by a hash of its configuration, so the
acceptance tests reuse results instead of retraining for an hour.  Set
``G2PPCAL_RECOMPUTE=1`` to ignore the cache.  Running this file directly
populates the cache.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

from g2ppcal.analytics import CurveKind, Quantity
from g2ppcal.curve import DEFAULT_NS, nelson_siegel_curve
from g2ppcal.dataset import (INDIRECT_TENORS, build_direct, build_indirect, default_ranges,
                             sample_params, split)
from g2ppcal.pipeline import Calibrator, TrainConfig, evaluate, train

CACHE_VERSION = 1
N_SAMPLES = 10_000
DATA_SEED = 42

RUNS = {
    "cov-zc": dict(pipeline="indirect", quantity="cov", kind="zc", epochs=1000, lr=1e-3),
    "corr-zc": dict(pipeline="indirect", quantity="corr", kind="zc", epochs=1000, lr=1e-3),
    "direct": dict(pipeline="direct", epochs=1000, lr=2e-4),
}


def cache_dir() -> Path:
    default = Path(__file__).resolve().parents[1] / ".acceptance_cache"
    return Path(os.environ.get("G2PPCAL_ACCEPTANCE_CACHE", default))


def build_dataset(name: str):
    spec = RUNS[name]
    params = sample_params(default_ranges(), N_SAMPLES, DATA_SEED)
    if spec["pipeline"] == "direct":
        return build_direct(params, nelson_siegel_curve(*DEFAULT_NS))
    return build_indirect(params, INDIRECT_TENORS, CurveKind(spec["kind"]), Quantity(spec["quantity"]))


def config_for(name: str) -> TrainConfig:
    spec = RUNS[name]
    maker = TrainConfig.direct if spec["pipeline"] == "direct" else TrainConfig.indirect
    return maker(epochs=spec["epochs"], lr=spec["lr"], seed=0)


def run_key(name: str) -> str:
    blob = json.dumps({"v": CACHE_VERSION, "name": name, "n": N_SAMPLES, "data_seed": DATA_SEED,
                       "ns": DEFAULT_NS, "config": asdict(config_for(name))}, sort_keys=True)
    return f"{name}-{hashlib.sha256(blob.encode()).hexdigest()[:16]}"


def desk_run(name: str):
    """Return (calibrator, validation set, summary dict), training only on a cache miss."""
    directory = cache_dir()
    directory.mkdir(parents=True, exist_ok=True)
    key = run_key(name)
    ckpt, summary_path = directory / f"{key}.ckpt", directory / f"{key}.json"
    config = config_for(name)
    train_set, validation = split(build_dataset(name), config.train_fraction, config.seed)
    if os.environ.get("G2PPCAL_RECOMPUTE") != "1" and ckpt.is_file() and summary_path.is_file():
        return Calibrator.load(ckpt), validation, json.loads(summary_path.read_text())
    result = train(config, train_set)
    result.calibrator.save(ckpt)
    report = evaluate(result.calibrator, validation)
    summary = {**report.as_dict(), "train_seconds": result.seconds,
               "epochs_run": result.epochs_run, "final_train_loss": result.history[-1],
               "config": asdict(config)}
    summary_path.write_text(json.dumps(summary, indent=2) + "\n")
    return result.calibrator, validation, summary


if __name__ == "__main__":
    import logging

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    for name in sys.argv[1:] or RUNS:
        _, _, s = desk_run(name)
        print(name, json.dumps(s["mse_raw"]), f"{s['train_seconds']:.0f}s", flush=True)
