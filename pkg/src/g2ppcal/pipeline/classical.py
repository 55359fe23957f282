"""Classical least-squares calibration used as an identifiability and speed baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from ..analytics import CurveKind, G2ppParams, Quantity, _loading, cov_matrices
from ..dataset import ParamRanges, default_ranges


@dataclass
class ClassicalResult:
    params: G2ppParams
    ssd: float
    iterations: int
    converged: bool


def _to_params(u, ranges: ParamRanges) -> np.ndarray:
    # bounds enforced by clamping the unit-box coordinates
    return ranges.low + np.clip(u, 0.0, 1.0) * ranges.width


def _profile(k: np.ndarray, target: np.ndarray, tenors: np.ndarray, kind: CurveKind):
    """Linear least-squares fit of (sigma_x^2, sigma_y^2, rho sigma_x sigma_y) for fixed speeds.

    Returns the coefficients and the residual sum of squares.
    """
    a = _loading(1.0, k[0], tenors, kind)
    b = _loading(1.0, k[1], tenors, kind)
    design = np.stack([np.outer(a, a).ravel(), np.outer(b, b).ravel(),
                       (np.outer(a, b) + np.outer(b, a)).ravel()], axis=1)
    coef, *_ = np.linalg.lstsq(design, target.ravel(), rcond=None)
    resid = design @ coef - target.ravel()
    return coef, float(resid @ resid)


def _from_profile(k: np.ndarray, coef: np.ndarray, ranges: ParamRanges) -> np.ndarray:
    sxx, syy, sxy = coef
    lo, hi = ranges.low, ranges.high
    sx = float(np.clip(np.sqrt(max(sxx, 0.0)), lo[2], hi[2]))
    sy = float(np.clip(np.sqrt(max(syy, 0.0)), lo[3], hi[3]))
    rho = float(np.clip(sxy / (sx * sy), lo[4], hi[4]))
    return np.array([k[0], k[1], sx, sy, rho])


def classical_calibrate(target: np.ndarray, tenors, kind=CurveKind.ZC, init: G2ppParams | None = None,
                        quantity=Quantity.COV, ranges: ParamRanges | None = None,
                        max_iter: int = 5000, restarts: int = 4, tol: float = 1e-24) -> ClassicalResult:
    """Minimise the SSD between the model cov/corr matrix and ``target`` with Nelder-Mead.

    The simplex lives in unit-box coordinates of ``ranges`` (bounds by
    clamping) and the objective is divided by the squared norm of the target,
    so ``tol`` is relative.  For covariance targets the three volatility
    parameters enter linearly (through sigma_x^2, sigma_y^2 and
    rho sigma_x sigma_y) once the speeds are fixed; they are profiled out by
    linear least squares and Nelder-Mead first runs over the two mean
    reversions from a small grid of starts.  The best point is then clamped
    into the box and polished by a five-dimensional Nelder-Mead, restarted
    from its own best point until it stops improving.

    Swapping (k_x, sigma_x) with (k_y, sigma_y) leaves every cov/corr matrix
    unchanged, so the result is only determined up to that relabelling.
    """
    target = np.asarray(target, dtype=float)
    tenors = np.asarray(tenors, dtype=float)
    m = tenors.size
    if target.shape != (m, m):
        raise ValueError(f"target must be {m}x{m} to match the tenors, got {target.shape}")
    if not np.allclose(target, target.T, rtol=1e-12, atol=0.0):
        raise ValueError("target matrix must be symmetric")
    ranges = default_ranges() if ranges is None else ranges
    kind, quantity = CurveKind(kind), Quantity(quantity)
    norm = float(np.sum(target**2)) or 1.0

    def ssd(values):
        model = cov_matrices(np.asarray(values)[None, :], tenors, kind, quantity)[0]
        return float(np.sum((model - target) ** 2)) / norm

    def objective(u):
        return ssd(_to_params(u, ranges))

    def to_unit(values):
        return np.clip((np.asarray(values) - ranges.low) / ranges.width, 0.0, 1.0)

    best_x = ranges.midpoint.copy() if init is None else init.as_array()
    best = ssd(best_x)
    iterations = 0
    options = {"maxiter": max_iter, "xatol": 1e-13, "fatol": tol, "adaptive": True}

    def speeds(v):
        # (smaller speed, log of the gap): the symmetric line k_x = k_y, where
        # the profile has spurious critical points, sits at log-gap -> -inf
        k1 = float(np.clip(v[0], 1e-4, 1.0))
        return np.array([k1, k1 + np.exp(min(v[1], 0.0))])

    def labelled(k):
        coef = _profile(k, target, tenors, kind)[0]
        candidates = [_from_profile(k, coef, ranges),
                      _from_profile(k[::-1], coef[[1, 0, 2]], ranges)]
        return min(((ssd(c), c) for c in candidates), key=lambda c: c[0])

    if best > tol and quantity is Quantity.COV:
        k_lo, k_hi = min(ranges.low[:2]), max(ranges.high[:2])
        starts = [(k_lo + f * (k_hi - k_lo), np.log(g))
                  for f in (0.1, 0.4, 0.7) for g in (1e-3, 1e-2, 5e-2)]
        fits = []
        for v0 in starts:
            res = minimize(lambda v: _profile(speeds(v), target, tenors, kind)[1] / norm,
                           np.array(v0), method="Nelder-Mead", options=options)
            iterations += int(res.nit)
            fits.append((float(res.fun), res.x))
            if res.fun <= tol:
                break
        for _, v in sorted(fits, key=lambda f: f[0])[:2]:
            value, x = labelled(speeds(v))
            if value < best:
                best_x, best = x, value

    converged = best <= tol
    u = to_unit(best_x)
    for _ in range(restarts if not converged else 0):
        res = minimize(objective, u, method="Nelder-Mead", options=options)
        iterations += int(res.nit)
        improved = res.fun < best * (1.0 - 1e-6)
        if res.fun < best:
            u, best = np.clip(res.x, 0.0, 1.0), float(res.fun)
            best_x = _to_params(u, ranges)
        converged = best <= tol or bool(res.success)
        if best <= tol or not improved:
            break
    return ClassicalResult(G2ppParams.from_array(best_x), best * norm, iterations, converged)
