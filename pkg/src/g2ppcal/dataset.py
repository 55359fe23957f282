"""Synthetic training sets for the calibration networks.

Parameters are drawn uniformly in boxes around a reference set.  Each draw is
mapped either to a vector of ZC/FWD covariances or correlations (indirect
calibration) or to a grid of expected ZC rates over observation dates and
tenors (direct calibration).
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analytics import (PARAM_NAMES, CurveKind, G2ppParams, ModelDomainError, Quantity,
                        cov_matrices, expected_zc_rates)
from .curve import CurveDomainError, MarketCurve

REFERENCE_PARAMS = G2ppParams(
    k_x=0.07173132, k_y=0.08930784, sigma_x=0.09465584, sigma_y=0.094675523, rho=-0.999318,
)
DEFAULT_GAMMA = 2.0 / 3.0

INDIRECT_TENORS = np.arange(1.0, 13.0)

# 1D, 1W | 1M 2M 3M 6M 9M | 1Y..12Y | 15Y..50Y by 5Y  -> 27 tenors
DIRECT_TENORS = np.concatenate((
    [1 / 365, 7 / 365],
    np.array([1, 2, 3, 6, 9]) / 12,
    np.arange(1.0, 13.0),
    np.arange(15.0, 51.0, 5.0),
))
DIRECT_STEPS = 106
DIRECT_DT = 1 / 52

MAGIC = "G2PPCAL-DATASET"
FORMAT_VERSION = 1
VECTORIZATION_ORDER = "lower-triangle column-stacked: for j in 0..m-1, for i in j..m-1 (i > j for corr)"


@dataclass(frozen=True)
class ParamRanges:
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.array(self.low, dtype=float)
        high = np.array(self.high, dtype=float)
        if low.shape != (5,) or high.shape != (5,):
            raise ValueError("ranges need 5 lower and 5 upper bounds")
        if np.any(low >= high):
            raise ValueError(f"every range needs min < max: {low} / {high}")
        if np.any(low[:4] <= 0.0):
            raise ValueError("k and sigma ranges must be strictly positive")
        if low[4] < -1.0 or high[4] > 1.0:
            raise ValueError("rho range must lie within [-1, 1]")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @property
    def width(self) -> np.ndarray:
        return self.high - self.low

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.low + self.high)

    def skill_floor(self) -> np.ndarray:
        """MSE of the constant midpoint predictor against uniform targets."""
        return self.width**2 / 12.0

    def contains(self, params: np.ndarray) -> np.ndarray:
        params = np.atleast_2d(params)
        return np.all((params >= self.low) & (params <= self.high), axis=1)

    def as_dict(self) -> dict:
        return {name: (float(lo), float(hi))
                for name, lo, hi in zip(PARAM_NAMES, self.low, self.high)}


def extend_reference(ref: G2ppParams, gamma: float = DEFAULT_GAMMA) -> ParamRanges:
    """Boxes [v(1 - gamma), v(1 + gamma)] for k/sigma and [-|rho|, |rho|] for rho."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    v = ref.as_array()
    low = np.empty(5)
    high = np.empty(5)
    low[:4] = v[:4] * (1.0 - gamma)
    high[:4] = v[:4] * (1.0 + gamma)
    low[4], high[4] = -abs(ref.rho), abs(ref.rho)
    return ParamRanges(low, high)


def default_ranges() -> ParamRanges:
    return extend_reference(REFERENCE_PARAMS, DEFAULT_GAMMA)


def make_rng(seed: int) -> np.random.Generator:
    # Philox is counter based: any sub-stream can be regenerated independently
    return np.random.Generator(np.random.Philox(seed))


def sample_params(ranges: ParamRanges, n: int, seed: int) -> np.ndarray:
    """Draw n parameter sets i.i.d. uniform in the boxes; returns an (n, 5) array."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    u = make_rng(seed).random((n, 5))
    out = ranges.low + u * ranges.width
    # the affine map can round one ulp past the top of a box
    return np.minimum(out, ranges.high)


def _tril_index(m: int, include_diag: bool):
    rows, cols = [], []
    for j in range(m):
        for i in range(j if include_diag else j + 1, m):
            rows.append(i)
            cols.append(j)
    return np.array(rows, dtype=int), np.array(cols, dtype=int)


def feature_length(m: int, quantity: Quantity) -> int:
    return m * (m + 1) // 2 if Quantity(quantity) is Quantity.COV else m * (m - 1) // 2


def vectorize(mats: np.ndarray, include_diag: bool) -> np.ndarray:
    """Stack the lower triangle column by column; works on (m, m) or (N, m, m)."""
    mats = np.asarray(mats)
    rows, cols = _tril_index(mats.shape[-1], include_diag)
    return mats[..., rows, cols]


def devectorize(vec: np.ndarray, m: int, include_diag: bool, diag_value: float = 1.0) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    rows, cols = _tril_index(m, include_diag)
    if vec.shape[-1] != rows.size:
        raise ValueError(f"vector length {vec.shape[-1]} does not match m={m}")
    out = np.zeros(vec.shape[:-1] + (m, m))
    if not include_diag:
        idx = np.arange(m)
        out[..., idx, idx] = diag_value
    out[..., rows, cols] = vec
    out[..., cols, rows] = vec
    return out


@dataclass
class IndirectDataset:
    features: np.ndarray
    targets: np.ndarray
    kind: CurveKind
    quantity: Quantity
    tenors: np.ndarray

    def __post_init__(self):
        self.kind = CurveKind(self.kind)
        self.quantity = Quantity(self.quantity)
        self.tenors = np.asarray(self.tenors, dtype=float)
        _check_rows(self.features, self.targets)
        nf = feature_length(self.tenors.size, self.quantity)
        if self.features.ndim != 2 or self.features.shape[1] != nf:
            raise ValueError(f"expected {nf} features per row, got {self.features.shape}")

    def __len__(self):
        return self.targets.shape[0]

    @property
    def variant(self) -> str:
        return f"{self.quantity.value}-{self.kind.value}"

    def subset(self, idx) -> "IndirectDataset":
        return IndirectDataset(self.features[idx], self.targets[idx], self.kind,
                               self.quantity, self.tenors)

    def matrices(self) -> np.ndarray:
        return devectorize(self.features, self.tenors.size, self.quantity is Quantity.COV)


@dataclass
class DirectDataset:
    grids: np.ndarray
    targets: np.ndarray
    tenors: np.ndarray
    dt: float
    curve_id: str = ""
    n_steps: int = field(init=False)

    def __post_init__(self):
        self.tenors = np.asarray(self.tenors, dtype=float)
        _check_rows(self.grids, self.targets)
        if self.grids.ndim != 3 or self.grids.shape[2] != self.tenors.size:
            raise ValueError(f"grid shape {self.grids.shape} does not match "
                             f"{self.tenors.size} tenors")
        self.n_steps = self.grids.shape[1]

    def __len__(self):
        return self.targets.shape[0]

    @property
    def variant(self) -> str:
        return "direct"

    @property
    def features(self) -> np.ndarray:
        return self.grids

    def subset(self, idx) -> "DirectDataset":
        return DirectDataset(self.grids[idx], self.targets[idx], self.tenors, self.dt,
                             self.curve_id)


def _check_rows(features, targets):
    if targets.ndim != 2 or targets.shape[1] != 5:
        raise ValueError(f"targets must be (N, 5), got {targets.shape}")
    if features.shape[0] != targets.shape[0]:
        raise ValueError(f"row mismatch: {features.shape[0]} features vs "
                         f"{targets.shape[0]} targets")


def build_indirect(params: np.ndarray, tenors=INDIRECT_TENORS, kind=CurveKind.ZC,
                   quantity=Quantity.COV, chunk: int = 2000) -> IndirectDataset:
    params = np.atleast_2d(np.asarray(params, dtype=float))
    kind, quantity = CurveKind(kind), Quantity(quantity)
    include_diag = quantity is Quantity.COV
    parts = [vectorize(cov_matrices(params[i:i + chunk], tenors, kind, quantity), include_diag)
             for i in range(0, len(params), chunk)]
    return IndirectDataset(np.concatenate(parts), params.copy(), kind, quantity, tenors)


def curve_fingerprint(curve: MarketCurve) -> str:
    h = hashlib.sha256(curve.tenors.tobytes() + curve.discount_factors.tobytes())
    return h.hexdigest()[:16]


def observation_times(n_steps: int, dt: float) -> np.ndarray:
    return np.arange(n_steps) * dt


def build_direct(params: np.ndarray, curve: MarketCurve, tenors=DIRECT_TENORS,
                 n_steps: int = DIRECT_STEPS, dt: float = DIRECT_DT,
                 chunk: int = 500) -> DirectDataset:
    params = np.atleast_2d(np.asarray(params, dtype=float))
    tenors = np.asarray(tenors, dtype=float)
    times = observation_times(n_steps, dt)
    horizon = times[-1] + tenors.max()
    if horizon > curve.max_tenor:
        raise CurveDomainError(
            f"curve ends at {curve.max_tenor}y but the grid needs {horizon:.4f}y")
    grids = np.empty((len(params), n_steps, tenors.size))
    for i in range(0, len(params), chunk):
        grids[i:i + chunk] = expected_zc_rates(params[i:i + chunk], curve, times, tenors)
    return DirectDataset(grids, params.copy(), tenors, dt, curve_fingerprint(curve))


class NotFittedError(RuntimeError):
    pass


class MinMaxScaler:
    """Column-wise affine map onto [0, 1] using extremes seen at fit time."""

    def __init__(self):
        self.min_ = None
        self.max_ = None

    @property
    def fitted(self) -> bool:
        return self.min_ is not None

    def fit(self, X: np.ndarray) -> "MinMaxScaler":
        X = np.asarray(X, dtype=float)
        lo, hi = X.min(axis=0), X.max(axis=0)
        if np.any(hi <= lo):
            bad = np.flatnonzero(np.ravel(hi <= lo))
            raise ValueError(f"cannot scale constant column(s) {bad.tolist()}")
        self.min_, self.max_ = lo, hi
        return self

    def _require(self, X):
        if not self.fitted:
            raise NotFittedError("MinMaxScaler used before fit")
        X = np.asarray(X, dtype=float)
        if X.shape[1:] != self.min_.shape:
            raise ValueError(f"scaler fitted on rows of shape {self.min_.shape}, got {X.shape[1:]}")
        return X

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = self._require(X)
        return (X - self.min_) / (self.max_ - self.min_)

    def inverse_transform(self, X: np.ndarray) -> np.ndarray:
        X = self._require(X)
        return X * (self.max_ - self.min_) + self.min_

    def fit_transform(self, X: np.ndarray) -> np.ndarray:
        return self.fit(X).transform(X)

    def state(self) -> dict:
        if not self.fitted:
            raise NotFittedError("MinMaxScaler used before fit")
        return {"min": self.min_.copy(), "max": self.max_.copy()}

    @classmethod
    def from_state(cls, state: dict) -> "MinMaxScaler":
        s = cls()
        s.min_ = np.asarray(state["min"], dtype=float)
        s.max_ = np.asarray(state["max"], dtype=float)
        return s


def split(dataset, train_fraction: float = 0.8, seed: int = 0):
    """Seeded uniform permutation split into (train, validation)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(dataset)
    n_train = int(round(n * train_fraction))
    if n_train == 0 or n_train == n:
        raise ValueError(f"split of {n} rows at {train_fraction} leaves an empty side")
    perm = make_rng(seed).permutation(n)
    return dataset.subset(perm[:n_train]), dataset.subset(perm[n_train:])


def _fmt_floats(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def write_dataset(dataset, path) -> None:
    header = {"version": FORMAT_VERSION, "rows": len(dataset)}
    if isinstance(dataset, IndirectDataset):
        header.update(type="indirect", kind=dataset.kind.value, quantity=dataset.quantity.value,
                      order=VECTORIZATION_ORDER)
        features = dataset.features
    else:
        header.update(type="direct", dt=repr(float(dataset.dt)), curve_id=dataset.curve_id,
                      order="row-major (step, tenor)")
        features = dataset.grids
    header["tenors"] = _fmt_floats(dataset.tenors)
    header["feature_shape"] = ",".join(str(d) for d in features.shape[1:])
    lines = [MAGIC] + [f"{k}={v}" for k, v in header.items()] + ["end"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        fh.write(np.ascontiguousarray(features, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(dataset.targets, dtype="<f8").tobytes())


def read_dataset(path):
    with open(path, "rb") as fh:
        first = fh.readline().decode("utf-8").strip()
        if first != MAGIC:
            raise ValueError(f"{path}: not a dataset file (magic {first!r})")
        header = {}
        while True:
            line = fh.readline()
            if not line:
                raise ValueError(f"{path}: truncated header")
            line = line.decode("utf-8").strip()
            if line == "end":
                break
            key, _, value = line.partition("=")
            header[key] = value
        payload = fh.read()
    if int(header.get("version", -1)) != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {header.get('version')}")
    rows = int(header["rows"])
    shape = tuple(int(d) for d in header["feature_shape"].split(","))
    data = np.frombuffer(payload, dtype="<f8").astype(float)
    n_feat = rows * int(np.prod(shape))
    if data.size != n_feat + rows * 5:
        raise ValueError(f"{path}: payload has {data.size} values, expected {n_feat + rows * 5}")
    features = data[:n_feat].reshape((rows,) + shape)
    targets = data[n_feat:].reshape(rows, 5)
    tenors = np.array([float(v) for v in header["tenors"].split(",")])
    if header["type"] == "indirect":
        return IndirectDataset(features, targets, header["kind"], header["quantity"], tenors)
    return DirectDataset(features, targets, tenors, float(header["dt"]), header["curve_id"])


def export_csv(dataset, path) -> None:
    feats = dataset.features.reshape(len(dataset), -1)
    if isinstance(dataset, IndirectDataset):
        rows, cols = _tril_index(dataset.tenors.size, dataset.quantity is Quantity.COV)
        names = [f"{dataset.quantity.value}_{i}_{j}" for i, j in zip(rows, cols)]
    else:
        names = [f"z_s{s}_k{k}" for s in range(dataset.n_steps)
                 for k in range(dataset.tenors.size)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names + list(PARAM_NAMES))
        for f, t in zip(feats, dataset.targets):
            writer.writerow([repr(float(v)) for v in f] + [repr(float(v)) for v in t])


def validate_params(params: np.ndarray) -> None:
    for row in np.atleast_2d(params):
        try:
            G2ppParams.from_array(row)
        except ModelDomainError as exc:
            raise ValueError(f"invalid parameter row {row}: {exc}") from exc
