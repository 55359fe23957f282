"""Sweeps of cov/corr derivatives at one maturity pair.

For each swept parameter the other four stay at the reference values.  The
``vanishing_ratio`` statistic (largest |derivative| over the last tenth of
the sweep divided by the largest over the whole sweep) summarises whether a
derivative dies out across the range.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..analytics import (PARAM_NAMES, CurveKind, G2ppParams, Quantity, corr_dG, cov_dG, loading,
                         sensitivity)
from ..dataset import REFERENCE_PARAMS, ParamRanges, default_ranges

SWEPT = ("k_x", "sigma_y", "rho")
CSV_COLUMNS = ("parameter", "value", "d_cov", "d_corr", "d_cov_analytic", "d_corr_sigma_scale")


@dataclass
class SensitivitySweep:
    parameter: str
    values: np.ndarray
    d_cov: np.ndarray
    d_corr: np.ndarray
    d_cov_analytic: np.ndarray  # only meaningful for rho, NaN otherwise
    d_corr_sigma_scale: np.ndarray

    def vanishing_ratio(self, quantity: Quantity) -> float:
        d = np.abs(self.d_cov if Quantity(quantity) is Quantity.COV else self.d_corr)
        tail = max(1, len(d) // 10)
        return float(d[-tail:].max() / d.max())


def dcov_drho_analytic(p: G2ppParams, Ti: float, Tj: float, kind: CurveKind) -> float:
    xi, yi = loading(p, Ti, kind)
    xj, yj = loading(p, Tj, kind)
    return xi * yj + xj * yi


def sigma_scale_derivative(p: G2ppParams, Ti, Tj, kind, quantity, h: float = 1e-3) -> float:
    """d/dc at c = 1 under (sigma_x, sigma_y) -> (c sigma_x, c sigma_y), central difference."""
    fn = cov_dG if Quantity(quantity) is Quantity.COV else corr_dG

    def at(c):
        q = G2ppParams(p.k_x, p.k_y, c * p.sigma_x, c * p.sigma_y, p.rho)
        return fn(q, Ti, Tj, CurveKind(kind))

    return (at(1.0 + h) - at(1.0 - h)) / (2.0 * h)


def sensitivity_report(ranges: ParamRanges | None = None, n_samples: int = 100,
                       pair=(5.0, 7.0), kind=CurveKind.ZC, reference: G2ppParams = REFERENCE_PARAMS,
                       parameters=SWEPT) -> list[SensitivitySweep]:
    ranges = default_ranges() if ranges is None else ranges
    kind = CurveKind(kind)
    Ti, Tj = pair
    sweeps = []
    for name in parameters:
        j = PARAM_NAMES.index(name)
        values = np.linspace(ranges.low[j], ranges.high[j], n_samples)
        cols = {k: np.empty(n_samples) for k in ("cov", "corr", "ana", "scale")}
        for i, v in enumerate(values):
            p = reference.with_value(name, float(v))
            cols["cov"][i] = sensitivity(p, name, Ti, Tj, kind, Quantity.COV)
            cols["corr"][i] = sensitivity(p, name, Ti, Tj, kind, Quantity.CORR)
            cols["ana"][i] = dcov_drho_analytic(p, Ti, Tj, kind) if name == "rho" else np.nan
            cols["scale"][i] = sigma_scale_derivative(p, Ti, Tj, kind, Quantity.CORR)
        sweeps.append(SensitivitySweep(name, values, cols["cov"], cols["corr"], cols["ana"],
                                       cols["scale"]))
    return sweeps


def write_sensitivity_csv(sweeps: list[SensitivitySweep], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for s in sweeps:
            for row in zip(s.values, s.d_cov, s.d_corr, s.d_cov_analytic, s.d_corr_sigma_scale):
                w.writerow([s.parameter] + [repr(float(v)) for v in row])
