"""Utility and fairness measures over binary predictions.

Everything is computed from empirical frequencies; a metric that needs a
subgroup with no records raises instead of imputing a rate.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import LambdaOutOfRange, MissingSubgroup, MissingSubgroupCell, UndefinedITA

# ITA at or below these marks dark skin
CELEBA_DARK_ITA = 28.0
EYEPACS_DARK_ITA = 19.0


@dataclass(frozen=True)
class BaselineSummary:
    """Baseline accuracy and accuracy gap, in percent."""

    acc_b: float
    acc_gap_b: float


@dataclass
class MetricsReport:
    """Fractions in [0, 1] except the CAI fields, which are percent points."""

    acc: float
    acc_gap: float
    acc_min: float
    acc_min_group: int
    dp_gap: float
    eqodds_gap: float
    cai_05: float | None = None
    cai_075: float | None = None

    def with_baseline(self, baseline: BaselineSummary) -> "MetricsReport":
        debiased = (100 * self.acc, 100 * self.acc_gap)
        self.cai_05 = cai(0.5, baseline, debiased)
        self.cai_075 = cai(0.75, baseline, debiased)
        return self

    def as_percent(self) -> dict:
        out = asdict(self)
        for key in ("acc", "acc_gap", "acc_min", "dp_gap", "eqodds_gap"):
            out[key] = 100 * out[key]
        return out


def _as_arrays(y_hat, y, s):
    y_hat = np.asarray(y_hat).astype(int)
    y = np.asarray(y).astype(int)
    s = np.asarray(s).astype(int)
    if not (y_hat.shape == y.shape == s.shape) or y.ndim != 1:
        raise ValueError("y_hat, y and s must be equal-length vectors")
    for name, arr in (("y_hat", y_hat), ("y", y), ("s", s)):
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} must be binary")
    return y_hat, y, s


def _group_masks(s):
    masks = (s == 0, s == 1)
    for g, m in enumerate(masks):
        if not m.any():
            raise MissingSubgroup(f"no records with s={g}", cell=(None, g))
    return masks


def accuracy_metrics(y_hat, y, s):
    """Return ``(acc, acc_gap, acc_min, argmin_group)``.

    Ties in the per-group accuracy report group 0.
    """
    y_hat, y, s = _as_arrays(y_hat, y, s)
    masks = _group_masks(s)
    correct = y_hat == y
    per_group = [correct[m].mean() for m in masks]
    worst = int(np.argmin(per_group))
    return float(correct.mean()), float(abs(per_group[0] - per_group[1])), float(per_group[worst]), worst


def dp_gap(y_hat, y, s) -> float:
    """|P(Yhat=1 | S=0) - P(Yhat=1 | S=1)|."""
    y_hat, y, s = _as_arrays(y_hat, y, s)
    m0, m1 = _group_masks(s)
    return float(abs(y_hat[m0].mean() - y_hat[m1].mean()))


def eqodds_gap(y_hat, y, s) -> float:
    """Largest label-conditional positive-rate gap between the two groups."""
    y_hat, y, s = _as_arrays(y_hat, y, s)
    gaps = []
    for label in (0, 1):
        rates = []
        for g in (0, 1):
            cell = (y == label) & (s == g)
            if not cell.any():
                raise MissingSubgroupCell(f"no records in cell (y={label}, s={g})", cell=(label, g))
            rates.append(y_hat[cell].mean())
        gaps.append(abs(rates[0] - rates[1]))
    return float(max(gaps))


def cai(lam: float, baseline: BaselineSummary, debiased) -> float:
    """Conjunctive accuracy improvement, all quantities in percent points.

    ``debiased`` is ``(acc_d, acc_gap_d)``.
    """
    if not 0 <= lam <= 1:
        raise LambdaOutOfRange(f"lambda must lie in [0, 1], got {lam}")
    acc_d, gap_d = debiased
    return lam * (baseline.acc_gap_b - gap_d) + (1 - lam) * (acc_d - baseline.acc_b)


def ita(L: float, b: float) -> float:
    """Individual typology angle in degrees from CIE-Lab lightness and b*.

    Uses atan2 so that ``b == 0`` maps to +/-90 degrees.
    """
    if not (math.isfinite(L) and math.isfinite(b)):
        raise UndefinedITA("L and b must be finite")
    if L == 50 and b == 0:
        raise UndefinedITA("ITA is undefined at L=50, b=0")
    return math.degrees(math.atan2(L - 50, b))


def is_dark_skin(ita_value: float, threshold: float = CELEBA_DARK_ITA) -> bool:
    return ita_value <= threshold


def metrics_report(y_hat, y, s, baseline: BaselineSummary | None = None) -> MetricsReport:
    acc, gap, acc_min, worst = accuracy_metrics(y_hat, y, s)
    report = MetricsReport(
        acc=acc,
        acc_gap=gap,
        acc_min=acc_min,
        acc_min_group=worst,
        dp_gap=dp_gap(y_hat, y, s),
        eqodds_gap=eqodds_gap(y_hat, y, s),
    )
    if baseline is not None:
        report.with_baseline(baseline)
    return report
