"""Training and evaluation of the calibration networks."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..analytics import PARAM_NAMES
from ..dataset import DirectDataset, IndirectDataset, MinMaxScaler, make_rng
from ..nn import Adam, Sequential, load_checkpoint, mse, save_checkpoint
from .models import DROPOUT, build_cnn, build_fcn

log = logging.getLogger(__name__)


INFERENCE_CHUNK = 250


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    pipeline: str = "indirect"
    batch_size: int = 1000
    epochs: int = 1000
    lr: float = 1e-3
    seed: int = 0
    train_fraction: float = 0.8
    scale_features: bool = True
    scale_targets: bool = True
    channels: int = 4
    dropout: float = DROPOUT

    def __post_init__(self):
        if self.pipeline not in ("indirect", "direct"):
            raise ValueError(f"pipeline must be 'indirect' or 'direct', got {self.pipeline!r}")
        for name in ("batch_size", "epochs", "channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.pipeline == "direct" and self.scale_features:
            raise ValueError("the direct pipeline feeds raw ZC grids (scale_features=False)")

    @classmethod
    def indirect(cls, **overrides) -> "TrainConfig":
        return cls(**{"pipeline": "indirect", "epochs": 1000, "lr": 1e-3,
                      "scale_features": True, "scale_targets": True, **overrides})

    @classmethod
    def direct(cls, **overrides) -> "TrainConfig":
        return cls(**{"pipeline": "direct", "epochs": 4000, "lr": 2e-4,
                      "scale_features": False, "scale_targets": True, **overrides})


def _pipeline_of(dataset) -> str:
    if isinstance(dataset, IndirectDataset):
        return "indirect"
    if isinstance(dataset, DirectDataset):
        return "direct"
    raise TypeError(f"unsupported dataset type {type(dataset).__name__}")


class Calibrator:
    """A trained network together with the scalers fitted on its training rows."""

    def __init__(self, model: Sequential, variant: str, feature_scaler: MinMaxScaler | None,
                 target_scaler: MinMaxScaler | None, meta: dict | None = None):
        self.model = model
        self.variant = variant
        self.feature_scaler = feature_scaler
        self.target_scaler = target_scaler
        self.meta = dict(meta or {})

    @property
    def pipeline(self) -> str:
        return "direct" if self.variant == "direct" else "indirect"

    def model_inputs(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=float)
        expected = self.model.input_shape[1:] if self.pipeline == "direct" else self.model.input_shape
        if features.shape[1:] != tuple(expected):
            raise ValueError(f"{self.variant} calibrator expects rows of shape {tuple(expected)}, "
                             f"got {features.shape[1:]}")
        if self.feature_scaler is not None:
            features = self.feature_scaler.transform(features)
        if self.pipeline == "direct":
            features = features[:, None, :, :]
        return features

    def predict_scaled(self, features: np.ndarray) -> np.ndarray:
        # chunk the CNN so its im2col buffer stays small; the FCN runs in one pass
        chunk = INFERENCE_CHUNK if self.pipeline == "direct" else None
        return self.model.predict(self.model_inputs(features), batch_size=chunk)

    def unscale(self, scaled: np.ndarray) -> np.ndarray:
        return scaled if self.target_scaler is None else self.target_scaler.inverse_transform(scaled)

    def scale_targets(self, targets: np.ndarray) -> np.ndarray:
        return targets if self.target_scaler is None else self.target_scaler.transform(targets)

    def predict(self, features: np.ndarray) -> np.ndarray:
        """Raw-unit parameter estimates, one (k_x, k_y, sigma_x, sigma_y, rho) row per input."""
        return self.unscale(self.predict_scaled(features))

    def save(self, path) -> None:
        meta = {
            "variant": self.variant,
            "feature_scaler": self.feature_scaler.state() if self.feature_scaler else None,
            "target_scaler": self.target_scaler.state() if self.target_scaler else None,
            **self.meta,
        }
        save_checkpoint(self.model, path, meta)

    @classmethod
    def load(cls, path) -> "Calibrator":
        model, meta = load_checkpoint(path)
        fs = meta.pop("feature_scaler")
        ts = meta.pop("target_scaler")
        variant = meta.pop("variant")
        return cls(model, variant,
                   MinMaxScaler.from_state(fs) if fs else None,
                   MinMaxScaler.from_state(ts) if ts else None, meta)


@dataclass
class TrainResult:
    calibrator: Calibrator
    history: list[float]
    seconds: float
    epochs_run: int


def build_model(config: TrainConfig, dataset) -> Sequential:
    if _pipeline_of(dataset) == "indirect":
        return build_fcn(dataset.features.shape[1], seed=config.seed, dropout=config.dropout)
    return build_cnn(dataset.n_steps, dataset.tenors.size, channels=config.channels,
                     seed=config.seed, dropout=config.dropout)


def train(config: TrainConfig, train_set, early_stop: Callable[[int, Calibrator], bool] | None = None,
          check_every: int = 10) -> TrainResult:
    """Seeded mini-batch Adam on the MSE of (scaled) targets.

    ``early_stop(epoch, calibrator)`` is polled every ``check_every`` epochs
    and ends training when it returns True.
    """
    kind = _pipeline_of(train_set)
    if kind != config.pipeline:
        raise ValueError(f"{config.pipeline} config given a {kind} dataset")
    feature_scaler = MinMaxScaler().fit(train_set.features) if config.scale_features else None
    target_scaler = MinMaxScaler().fit(train_set.targets) if config.scale_targets else None
    model = build_model(config, train_set)
    calibrator = Calibrator(model, train_set.variant, feature_scaler, target_scaler,
                            {"train_config": asdict(config)})
    X = calibrator.model_inputs(train_set.features)
    Y = calibrator.scale_targets(train_set.targets)
    n = len(Y)
    opt = Adam(model.params(), lr=config.lr)
    rng = make_rng(config.seed + 1)
    history = []
    start = time.perf_counter()
    model.train()
    epoch = 0
    try:
        for epoch in range(1, config.epochs + 1):
            perm = rng.permutation(n)
            total = 0.0
            for b0 in range(0, n, config.batch_size):
                idx = perm[b0:b0 + config.batch_size]
                loss, grad = mse(model.forward(X[idx]), Y[idx])
                if not np.isfinite(loss):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch offset {b0} "
                                        f"(lr={config.lr}, batch={config.batch_size})")
                model.backward(grad)
                opt.step(model.grads())
                total += loss * len(idx)
            history.append(total / n)
            if epoch % 50 == 0:
                log.info("epoch %d/%d loss %.3e", epoch, config.epochs, history[-1])
            if early_stop is not None and epoch % check_every == 0:
                model.eval()
                stop = early_stop(epoch, calibrator)
                model.train()
                if stop:
                    break
    finally:
        model.eval()
    return TrainResult(calibrator, history, time.perf_counter() - start, epoch)


@dataclass
class CalibrationReport:
    variant: str
    mse_raw: np.ndarray
    mse_scaled: np.ndarray
    inference_seconds: float
    predicted: np.ndarray = field(repr=False)
    truth: np.ndarray = field(repr=False)

    @property
    def n_rows(self) -> int:
        return len(self.truth)

    def as_dict(self) -> dict:
        return {
            "variant": self.variant,
            "rows": self.n_rows,
            "inference_seconds": self.inference_seconds,
            "mse_raw": dict(zip(PARAM_NAMES, map(float, self.mse_raw))),
            "mse_scaled": dict(zip(PARAM_NAMES, map(float, self.mse_scaled))),
        }

    def summary(self) -> str:
        return json.dumps(self.as_dict(), indent=2)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["parameter", "mse_raw", "mse_scaled"])
            for name, raw, scaled in zip(PARAM_NAMES, self.mse_raw, self.mse_scaled):
                w.writerow([name, repr(float(raw)), repr(float(scaled))])

    def write_fitting_curves(self, directory) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for j, name in enumerate(PARAM_NAMES):
            path = directory / f"fit_{self.variant}_{name}.csv"
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["index", "true", "predicted"])
                for i, (t, p) in enumerate(zip(self.truth[:, j], self.predicted[:, j])):
                    w.writerow([i, repr(float(t)), repr(float(p))])
            paths.append(path)
        return paths


def per_parameter_mse(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} vs truth {truth.shape}")
    return np.mean((pred - truth) ** 2, axis=0)


def evaluate(calibrator: Calibrator, dataset) -> CalibrationReport:
    """Batched inference over the whole set; MSE per parameter in raw and scaled units."""
    if dataset.variant != calibrator.variant:
        raise ValueError(f"{calibrator.variant} calibrator cannot evaluate a "
                         f"{dataset.variant} dataset")
    start = time.perf_counter()
    scaled_pred = calibrator.predict_scaled(dataset.features)
    pred = calibrator.unscale(scaled_pred)
    seconds = time.perf_counter() - start
    truth = dataset.targets
    return CalibrationReport(
        variant=dataset.variant,
        mse_raw=per_parameter_mse(pred, truth),
        mse_scaled=per_parameter_mse(scaled_pred, calibrator.scale_targets(truth)),
        inference_seconds=seconds,
        predicted=pred,
        truth=truth.copy(),
    )
