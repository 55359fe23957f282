"""Wall-clock comparison of batched network inference and the classical baseline."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from ..dataset import IndirectDataset
from .classical import classical_calibrate
from .training import Calibrator


@dataclass
class BenchResult:
    rows: int
    batch_seconds: float
    nn_per_instance: float
    classical_instances: int
    classical_per_instance: float

    @property
    def speedup(self) -> float:
        return self.classical_per_instance / self.nn_per_instance

    def table(self) -> list[tuple[str, float]]:
        return [
            ("nn_batch_rows", float(self.rows)),
            ("nn_batch_seconds", self.batch_seconds),
            ("nn_seconds_per_instance", self.nn_per_instance),
            ("classical_instances", float(self.classical_instances)),
            ("classical_seconds_per_instance", self.classical_per_instance),
            ("speedup", self.speedup),
        ]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "value"])
            for name, value in self.table():
                w.writerow([name, repr(value)])


def time_inference(calibrator: Calibrator, features: np.ndarray, repeats: int = 5) -> float:
    """Best-of-``repeats`` wall-clock for one batched forward pass (includes scaling)."""
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        calibrator.predict(features)
        best = min(best, time.perf_counter() - start)
    return float(best)


def time_classical(dataset: IndirectDataset, n_instances: int = 5, **kwargs) -> float:
    if n_instances < 1:
        raise ValueError("need at least one classical instance")
    mats = dataset.matrices()[:n_instances]
    start = time.perf_counter()
    for target in mats:
        classical_calibrate(target, dataset.tenors, dataset.kind, quantity=dataset.quantity,
                            **kwargs)
    return (time.perf_counter() - start) / len(mats)


def bench(calibrator: Calibrator, dataset: IndirectDataset, n_classical: int = 5,
          repeats: int = 5) -> BenchResult:
    batch = time_inference(calibrator, dataset.features, repeats)
    per_classical = time_classical(dataset, n_classical)
    return BenchResult(len(dataset), batch, batch / len(dataset), min(n_classical, len(dataset)),
                       per_classical)
