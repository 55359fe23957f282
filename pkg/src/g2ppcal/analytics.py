"""Closed-form G2++ quantities.

The model is r(t) = phi(t) + x(t) + y(t) with two Ornstein-Uhlenbeck factors

    dx = -k_x x dt + sigma_x dW_x,   dy = -k_y y dt + sigma_y dW_y,
    dW_x dW_y = rho dt.

The shift phi is never needed explicitly: it is absorbed by fitting the
initial market discount curve, which enters every price through the ratio
P^M(0, T) / P^M(0, t).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, astuple, replace

import numpy as np

from .curve import MarketCurve

PARAM_NAMES = ("k_x", "k_y", "sigma_x", "sigma_y", "rho")

# below this V and the loadings lose all precision to cancellation
MIN_MEAN_REVERSION = 1e-8


class ModelDomainError(ValueError):
    pass


@dataclass(frozen=True)
class G2ppParams:
    k_x: float
    k_y: float
    sigma_x: float
    sigma_y: float
    rho: float

    def __post_init__(self):
        for name in PARAM_NAMES:
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ModelDomainError(f"{name} must be finite, got {v}")
        if min(self.k_x, self.k_y, self.sigma_x, self.sigma_y) <= 0.0:
            raise ModelDomainError(f"k and sigma must be > 0: {self}")
        if not -1.0 <= self.rho <= 1.0:
            raise ModelDomainError(f"rho must lie in [-1, 1], got {self.rho}")

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, values) -> "G2ppParams":
        values = np.asarray(values, dtype=float).ravel()
        if values.size != 5:
            raise ValueError(f"expected 5 parameter values, got {values.size}")
        return cls(*(float(v) for v in values))

    def swapped(self) -> "G2ppParams":
        """The observationally equivalent set with the two factors exchanged."""
        return G2ppParams(self.k_y, self.k_x, self.sigma_y, self.sigma_x, self.rho)

    def with_value(self, name: str, value: float) -> "G2ppParams":
        return replace(self, **{name: value})


@dataclass(frozen=True)
class FactorState:
    x: float = 0.0
    y: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        if self.t < 0.0:
            raise ModelDomainError(f"t must be >= 0, got {self.t}")


class CurveKind(enum.Enum):
    ZC = "zc"
    FWD = "fwd"


class Quantity(enum.Enum):
    COV = "cov"
    CORR = "corr"


def _check_k(p):
    if min(p.k_x, p.k_y) < MIN_MEAN_REVERSION:
        raise ModelDomainError(f"mean reversion below {MIN_MEAN_REVERSION}: {p}")


def _v_tau(kx, ky, sx, sy, rho, tau):
    """V as a function of the interval length tau = T - t (broadcasts)."""
    # expm1 form of the usual brackets: exactly 0 at tau = 0
    mx, my = np.expm1(-kx * tau), np.expm1(-ky * tau)
    term_x = sx**2 / kx**2 * (tau + 2.0 / kx * mx - 0.5 / kx * np.expm1(-2.0 * kx * tau))
    term_y = sy**2 / ky**2 * (tau + 2.0 / ky * my - 0.5 / ky * np.expm1(-2.0 * ky * tau))
    cross = 2.0 * rho * sx * sy / (kx * ky) * (
        tau + mx / kx + my / ky - np.expm1(-(kx + ky) * tau) / (kx + ky)
    )
    return term_x + term_y + cross


def _dv_dtau(kx, ky, sx, sy, rho, tau):
    ex, ey = np.exp(-kx * tau), np.exp(-ky * tau)
    return (sx**2 / kx**2 * (1.0 - ex) ** 2
            + sy**2 / ky**2 * (1.0 - ey) ** 2
            + 2.0 * rho * sx * sy / (kx * ky) * (1.0 - ex) * (1.0 - ey))


def v_function(p: G2ppParams, t: float, T: float) -> float:
    """Integrated variance V(t, T) of the factor part of int_t^T r(u) du."""
    if t > T:
        raise ModelDomainError(f"V(t, T) needs t <= T, got t={t}, T={T}")
    _check_k(p)
    if t == T:
        return 0.0
    return float(_v_tau(*astuple(p), T - t))


def a_function(p: G2ppParams, s: FactorState, T: float) -> float:
    t = s.t
    if t > T:
        raise ModelDomainError(f"A(t, T) needs t <= T, got t={t}, T={T}")
    tau = T - t
    bx = -np.expm1(-p.k_x * tau) / p.k_x
    by = -np.expm1(-p.k_y * tau) / p.k_y
    half = 0.5 * (v_function(p, t, T) - v_function(p, 0.0, T) + v_function(p, 0.0, t))
    return float(half - bx * s.x - by * s.y)


def zc_price(p: G2ppParams, s: FactorState, curve: MarketCurve, T: float) -> float:
    log_ratio = curve.log_discount(T) - curve.log_discount(s.t)
    return float(np.exp(log_ratio + a_function(p, s, T)))


def zc_rate(p: G2ppParams, s: FactorState, curve: MarketCurve, T: float) -> float:
    """Continuously compounded yield over [t, T], so that P = exp(-(T - t) Z)."""
    if T <= s.t:
        raise ModelDomainError(f"zero tenor: t={s.t}, T={T}")
    log_price = curve.log_discount(T) - curve.log_discount(s.t) + a_function(p, s, T)
    return float(-log_price / (T - s.t))


def fwd_rate(p: G2ppParams, s: FactorState, curve: MarketCurve, T: float) -> float:
    """Instantaneous forward f(t, T) = -d/dT ln P(t, T)."""
    t = s.t
    if t > T:
        raise ModelDomainError(f"f(t, T) needs t <= T, got t={t}, T={T}")
    _check_k(p)
    args = astuple(p)
    tau = T - t
    model = -0.5 * _dv_dtau(*args, tau) + 0.5 * _dv_dtau(*args, T)
    decay = np.exp(-p.k_x * tau) * s.x + np.exp(-p.k_y * tau) * s.y
    return float(curve.instantaneous_forward(T) + model + decay)


def expected_zc_rate(p: G2ppParams, curve: MarketCurve, t: float, T: float) -> float:
    """E[Z(t, T)] with both factors started at zero."""
    if not 0.0 <= t < T:
        raise ModelDomainError(f"expected ZC rate needs 0 <= t < T, got t={t}, T={T}")
    return float(expected_zc_rates(p.as_array()[None, :], curve, np.array([t]),
                                   np.array([T - t]))[0, 0, 0])


def expected_zc_rates(params: np.ndarray, curve: MarketCurve, times: np.ndarray,
                      tenors: np.ndarray) -> np.ndarray:
    """Batch E[Z(t_s, t_s + tenor_k)] for an (N, 5) parameter array.

    Returns an (N, len(times), len(tenors)) array.
    """
    params = np.asarray(params, dtype=float)
    times = np.asarray(times, dtype=float)
    tenors = np.asarray(tenors, dtype=float)
    if np.any(params[:, :2] < MIN_MEAN_REVERSION):
        raise ModelDomainError("mean reversion below guard in parameter batch")
    mats = times[:, None] + tenors[None, :]
    log_ratio = curve.log_discount(mats) - curve.log_discount(times)[:, None]
    kx, ky, sx, sy, rho = (params[:, i, None, None] for i in range(5))
    half = 0.5 * (_v_tau(kx, ky, sx, sy, rho, tenors[None, None, :])
                  - _v_tau(kx, ky, sx, sy, rho, mats[None])
                  + _v_tau(kx, ky, sx, sy, rho, times[None, :, None]))
    return -(log_ratio[None] + half) / tenors[None, None, :]


def _loading(sigma, k, T, kind: CurveKind):
    T = np.asarray(T, dtype=float)
    if np.any(T <= 0.0):
        raise ModelDomainError("loadings need maturities > 0")
    kT = k * T
    if kind is CurveKind.ZC:
        return sigma * (-np.expm1(-kT)) / kT
    return sigma * np.exp(-kT)


def loading(p: G2ppParams, T: float, kind: CurveKind) -> tuple[float, float]:
    """Per-factor loadings (X(T), Y(T)) of dZ(., T) or df(., T) on the shocks."""
    kind = CurveKind(kind)
    return (float(_loading(p.sigma_x, p.k_x, T, kind)),
            float(_loading(p.sigma_y, p.k_y, T, kind)))


def cov_dG(p: G2ppParams, Ti: float, Tj: float, kind: CurveKind) -> float:
    xi, yi = loading(p, Ti, kind)
    xj, yj = loading(p, Tj, kind)
    return xi * xj + yi * yj + p.rho * (xi * yj + xj * yi)


def corr_dG(p: G2ppParams, Ti: float, Tj: float, kind: CurveKind) -> float:
    var_i = cov_dG(p, Ti, Ti, kind)
    var_j = cov_dG(p, Tj, Tj, kind)
    if var_i <= 0.0 or var_j <= 0.0:
        raise ModelDomainError(f"degenerate variance at ({Ti}, {Tj}) for {p}")
    return cov_dG(p, Ti, Tj, kind) / np.sqrt(var_i * var_j)


def cov_matrices(params: np.ndarray, tenors, kind: CurveKind,
                 quantity: Quantity) -> np.ndarray:
    """Batch version of cov_matrix for an (N, 5) array; returns (N, m, m)."""
    kind, quantity = CurveKind(kind), Quantity(quantity)
    params = np.atleast_2d(np.asarray(params, dtype=float))
    tenors = np.asarray(tenors, dtype=float)
    if tenors.ndim != 1 or np.any(tenors <= 0.0) or np.any(np.diff(tenors) <= 0.0):
        raise ModelDomainError("tenors must be strictly increasing and > 0")
    kx, ky, sx, sy, rho = (params[:, i, None] for i in range(5))
    X = _loading(sx, kx, tenors[None, :], kind)
    Y = _loading(sy, ky, tenors[None, :], kind)
    cov = (X[:, :, None] * X[:, None, :] + Y[:, :, None] * Y[:, None, :]
           + rho[:, :, None] * (X[:, :, None] * Y[:, None, :] + Y[:, :, None] * X[:, None, :]))
    if quantity is Quantity.COV:
        return cov
    var = np.einsum("nii->ni", cov)
    if np.any(var <= 0.0):
        raise ModelDomainError("degenerate variance in parameter batch")
    sd = np.sqrt(var)
    corr = cov / (sd[:, :, None] * sd[:, None, :])
    idx = np.arange(tenors.size)
    corr[:, idx, idx] = 1.0
    return corr


def cov_matrix(p: G2ppParams, tenors, kind: CurveKind, quantity: Quantity) -> np.ndarray:
    return cov_matrices(p.as_array()[None, :], tenors, kind, quantity)[0]


def _scalar_map(kind, quantity):
    quantity = Quantity(quantity)
    fn = cov_dG if quantity is Quantity.COV else corr_dG
    return lambda p, Ti, Tj: fn(p, Ti, Tj, CurveKind(kind))


def _admissible(name, value):
    if name == "rho":
        return -1.0 <= value <= 1.0
    return value > MIN_MEAN_REVERSION if name.startswith("k") else value > 0.0


def sensitivity(p: G2ppParams, param_id: str, Ti: float, Tj: float,
                kind: CurveKind, quantity: Quantity, rel_step: float = 1e-6) -> float:
    """Finite-difference derivative of cov/corr[dG(Ti), dG(Tj)] w.r.t. one parameter.

    Central differences with step rel_step * max(|v|, 1e-2); falls back to a
    second-order one-sided stencil when a central step leaves the admissible
    set (e.g. |rho| > 1).
    """
    if param_id not in PARAM_NAMES:
        raise ValueError(f"unknown parameter {param_id!r}; expected one of {PARAM_NAMES}")
    f = _scalar_map(kind, quantity)
    v = getattr(p, param_id)
    h = rel_step * max(abs(v), 1e-2)

    def at(value):
        return f(p.with_value(param_id, value), Ti, Tj)

    if _admissible(param_id, v + h) and _admissible(param_id, v - h):
        return (at(v + h) - at(v - h)) / (2.0 * h)
    if _admissible(param_id, v + 2 * h):
        return (-3.0 * at(v) + 4.0 * at(v + h) - at(v + 2 * h)) / (2.0 * h)
    return (3.0 * at(v) - 4.0 * at(v - h) + at(v - 2 * h)) / (2.0 * h)
