"""Initial market discount curve P^M(0, T).

Discount factors are interpolated log-linearly between pillars, which is the
same as assuming piecewise-constant continuously compounded forwards.  The
implied node at T = 0 has discount factor 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

CSV_HEADER = ("tenor_years", "discount_factor")


class CurveDomainError(ValueError):
    """Raised when a curve is queried outside of its pillar range."""


@dataclass(frozen=True)
class MarketCurve:
    tenors: np.ndarray
    discount_factors: np.ndarray
    _log_df: np.ndarray = field(init=False, repr=False, compare=False)
    _nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tenors = np.array(self.tenors, dtype=float).ravel()
        dfs = np.array(self.discount_factors, dtype=float).ravel()
        if tenors.size == 0 or tenors.shape != dfs.shape:
            raise ValueError(
                f"tenors and discount_factors must be non-empty and equal length "
                f"(got {tenors.size} and {dfs.size})"
            )
        if np.any(tenors <= 0.0):
            raise ValueError("tenors must be > 0")
        if np.any(np.diff(tenors) <= 0.0):
            raise ValueError("tenors must be strictly increasing")
        if np.any(~np.isfinite(dfs)) or np.any(dfs <= 0.0) or np.any(dfs > 1.0):
            raise ValueError("discount factors must lie in (0, 1]")
        tenors.flags.writeable = False
        dfs.flags.writeable = False
        nodes = np.concatenate(([0.0], tenors))
        log_df = np.concatenate(([0.0], np.log(dfs)))
        nodes.flags.writeable = False
        log_df.flags.writeable = False
        object.__setattr__(self, "tenors", tenors)
        object.__setattr__(self, "discount_factors", dfs)
        object.__setattr__(self, "_nodes", nodes)
        object.__setattr__(self, "_log_df", log_df)

    @property
    def max_tenor(self) -> float:
        return float(self.tenors[-1])

    def _check(self, T):
        T = np.asarray(T, dtype=float)
        if np.any(T < 0.0) or np.any(T > self.max_tenor) or np.any(np.isnan(T)):
            raise CurveDomainError(
                f"maturity outside curve domain [0, {self.max_tenor}]: "
                f"min={np.min(T)}, max={np.max(T)}"
            )
        return T

    def log_discount(self, T):
        """ln P^M(0, T), linear between nodes. Accepts scalars or arrays."""
        T = self._check(T)
        out = np.interp(T, self._nodes, self._log_df)
        return float(out) if out.ndim == 0 else out

    def discount(self, T):
        out = np.exp(self.log_discount(T))
        return float(out) if np.ndim(out) == 0 else out

    def zero_rate(self, T):
        T = np.asarray(T, dtype=float)
        if np.any(T <= 0.0):
            raise CurveDomainError("zero rate requires T > 0")
        out = -np.asarray(self.log_discount(T)) / T
        return float(out) if out.ndim == 0 else out

    def instantaneous_forward(self, T):
        """Market forward f^M(0, T) = -d ln P^M(0, T) / dT.

        Piecewise constant; at a pillar the segment to the right is used (the
        left one at the last pillar).
        """
        T = self._check(T)
        slopes = -np.diff(self._log_df) / np.diff(self._nodes)
        idx = np.searchsorted(self._nodes, T, side="right") - 1
        idx = np.clip(idx, 0, slopes.size - 1)
        out = slopes[idx]
        return float(out) if np.ndim(out) == 0 else out


def discount(curve: MarketCurve, T):
    return curve.discount(T)


def zero_rate(curve: MarketCurve, T):
    return curve.zero_rate(T)


def from_zero_rates(tenors: Sequence[float], rates: Sequence[float]) -> MarketCurve:
    tenors = np.asarray(tenors, dtype=float)
    rates = np.asarray(rates, dtype=float)
    return MarketCurve(tenors, np.exp(-rates * tenors))


def flat_curve(rate: float, max_tenor: float = 60.0, step: float = 0.25) -> MarketCurve:
    tenors = np.arange(1, int(round(max_tenor / step)) + 1) * step
    return from_zero_rates(tenors, np.full(tenors.shape, rate))


def nelson_siegel_rate(beta0: float, beta1: float, beta2: float, tau: float, T):
    """Nelson-Siegel zero rate; the T -> 0 limit beta0 + beta1 is used at T = 0."""
    if tau <= 0.0:
        raise ValueError(f"tau must be > 0, got {tau}")
    T = np.asarray(T, dtype=float)
    x = T / tau
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = np.where(x > 0.0, -np.expm1(-x) / np.where(x > 0.0, x, 1.0), 1.0)
    out = beta0 + beta1 * slope + beta2 * (slope - np.exp(-x))
    return float(out) if out.ndim == 0 else out


# upward sloping, 1% short end, 2% long end; rates stay positive so every
# discount factor is in (0, 1]
DEFAULT_NS = (0.02, -0.01, 0.01, 2.0)


def default_tenors(max_tenor: float = 60.0) -> np.ndarray:
    short = [1 / 365, 7 / 365, 1 / 12, 2 / 12, 3 / 12, 6 / 12, 9 / 12]
    long = np.arange(1.0, max_tenor + 1e-9, 1.0)
    return np.concatenate((short, long))


def nelson_siegel_curve(beta0: float, beta1: float, beta2: float, tau: float,
                        tenors: Sequence[float] | None = None) -> MarketCurve:
    if tau <= 0.0:
        raise ValueError(f"tau must be > 0, got {tau}")
    tenors = default_tenors() if tenors is None else np.asarray(tenors, dtype=float)
    return from_zero_rates(tenors, nelson_siegel_rate(beta0, beta1, beta2, tau, tenors))


def read_curve_csv(path) -> MarketCurve:
    tenors, dfs = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            tenors.append(float(row[0]))
            dfs.append(float(row[1]))
    return MarketCurve(np.array(tenors), np.array(dfs))


def write_curve_csv(curve: MarketCurve, path) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for t, d in zip(curve.tenors, curve.discount_factors):
            writer.writerow([repr(float(t)), repr(float(d))])
