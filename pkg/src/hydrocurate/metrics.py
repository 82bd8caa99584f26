"""Regression evaluation suite: error metrics, agreement metrics with
explicit degenerate semantics, and quantile-binned confusion analysis.

Undefined results are carried as None internally; only table and report
serialization renders the literal token ``NaN``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyInput, ZeroVariance
from .ingest import ParameterId

BIN_LABELS = ("Low", "Medium", "High")

# Fixed column order for comparison tables.
TABLE_COLUMNS = ("MSE", "MAE", "RMSE", "R2", "sMAPE", "Pearson r", "CCC")


@dataclass
class PredictionSet:
    """Paired (actual, predicted) values for one model on one parameter."""

    actual: np.ndarray
    predicted: np.ndarray
    parameter: Optional[ParameterId] = None
    model_tag: str = ""

    def __post_init__(self):
        self.actual = np.asarray(self.actual, dtype=np.float64)
        self.predicted = np.asarray(self.predicted, dtype=np.float64)
        if self.actual.size == 0:
            raise EmptyInput("prediction set is empty")
        if self.actual.shape != self.predicted.shape:
            raise ValueError("actual and predicted lengths differ")
        if not (np.all(np.isfinite(self.actual)) and np.all(np.isfinite(self.predicted))):
            raise ValueError("prediction sets never store non-finite values")


@dataclass(frozen=True)
class RegressionReport:
    mse: float
    mae: float
    rmse: float
    r2: Optional[float]
    smape: float
    pearson_r: Optional[float]
    ccc: Optional[float]
    n: int
    model_tag: str = ""
    parameter: Optional[ParameterId] = None
    moments: str = "population"


def _moments(x: np.ndarray, y: np.ndarray, mode: str) -> tuple[float, float, float, float, float]:
    n = x.size
    mx = float(np.mean(x))
    my = float(np.mean(y))
    denom = n if mode == "population" else n - 1
    sxx = float(np.sum((x - mx) ** 2)) / denom
    syy = float(np.sum((y - my) ** 2)) / denom
    sxy = float(np.sum((x - mx) * (y - my))) / denom
    return mx, my, sxx, syy, sxy


def pearson_r(x: np.ndarray, y: np.ndarray) -> Optional[float]:
    """Standard Pearson correlation; None when either variance is zero."""
    if x.size < 2:
        return None
    _, _, sxx, syy, sxy = _moments(x, y, "population")
    if sxx == 0.0 or syy == 0.0:
        return None
    return sxy / np.sqrt(sxx * syy)


def concordance_ccc(x: np.ndarray, y: np.ndarray, moments: str = "population") -> Optional[float]:
    """Agreement coefficient 2*s_xy / (s_x^2 + s_y^2 + (mean gap)^2).

    None only when the denominator vanishes, i.e. both series are constant
    with equal means.
    """
    if x.size < 2:
        return None
    mx, my, sxx, syy, sxy = _moments(x, y, moments)
    denom = sxx + syy + (mx - my) ** 2
    if denom == 0.0:
        return None
    return 2.0 * sxy / denom


def smape(actual: np.ndarray, predicted: np.ndarray) -> float:
    """Symmetric percentage error in [0, 200]; 0/0 terms contribute 0."""
    num = 2.0 * np.abs(predicted - actual)
    den = np.abs(actual) + np.abs(predicted)
    terms = np.divide(num, den, out=np.zeros_like(num), where=den != 0.0)
    return float(100.0 * np.mean(terms))


def regression_report(p: PredictionSet, moments: str = "population") -> RegressionReport:
    """Full metric report; correlation fields need at least two pairs."""
    y = p.actual
    yhat = p.predicted
    sq = (yhat - y) ** 2
    mse = float(np.mean(sq))
    mae = float(np.mean(np.abs(yhat - y)))
    rmse = float(np.sqrt(mse))

    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = None if ss_tot == 0.0 else 1.0 - float(np.sum(sq)) / ss_tot

    return RegressionReport(
        mse=mse,
        mae=mae,
        rmse=rmse,
        r2=r2,
        smape=smape(y, yhat),
        pearson_r=pearson_r(y, yhat),
        ccc=concordance_ccc(y, yhat, moments),
        n=int(y.size),
        model_tag=p.model_tag,
        parameter=p.parameter,
        moments=moments,
    )


def r2_against_mean_baseline(p: PredictionSet) -> float:
    """Coefficient of determination against the predict-the-mean baseline.

    Negative values mean the residual sum of squares exceeds the total
    variance of the actuals.
    """
    y = p.actual
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    if ss_tot == 0.0:
        raise ZeroVariance("actuals are constant; R2 baseline undefined")
    ss_res = float(np.sum((p.predicted - y) ** 2))
    return 1.0 - ss_res / ss_tot


def quantile_bins(actuals: Sequence[float]) -> tuple[float, float]:
    """33rd/66th percentile cut points (linear interpolation)."""
    arr = np.asarray(actuals, dtype=np.float64)
    if arr.size == 0:
        raise EmptyInput("no actuals to bin")
    q33, q66 = np.percentile(arr, [33.0, 66.0])
    return float(q33), float(q66)


def bin_index(value: float, cuts: tuple[float, float]) -> int:
    """0=Low (v <= q33), 1=Medium (q33 < v <= q66), 2=High."""
    q33, q66 = cuts
    if value <= q33:
        return 0
    if value <= q66:
        return 1
    return 2


@dataclass(frozen=True)
class BinnedReport:
    cut_points: tuple[float, float]
    confusion: np.ndarray  # (3, 3); rows actual, columns predicted
    degenerate: bool
    model_tag: str = ""
    parameter: Optional[ParameterId] = None


def binned_confusion(p: PredictionSet, cuts: Optional[tuple[float, float]] = None) -> BinnedReport:
    """3x3 Low/Medium/High confusion; both sides binned with cut points
    derived from the actuals."""
    if cuts is None:
        cuts = quantile_bins(p.actual)
    if cuts[0] > cuts[1]:
        raise ValueError("cut points must be nondecreasing")
    confusion = np.zeros((3, 3), dtype=np.int64)
    for a, pr in zip(p.actual, p.predicted):
        confusion[bin_index(float(a), cuts), bin_index(float(pr), cuts)] += 1
    return BinnedReport(
        cut_points=cuts,
        confusion=confusion,
        degenerate=cuts[0] == cuts[1],
        model_tag=p.model_tag,
        parameter=p.parameter,
    )


def render_value(value: Optional[float], digits: int = 4) -> str:
    """Table cell rendering; undefined becomes the literal token NaN."""
    if value is None:
        return "NaN"
    return f"{value:.{digits}g}"


def metric_table(reports: list[RegressionReport]) -> str:
    """Markdown comparison table, one row per model, fixed column order."""
    if not reports:
        raise EmptyInput("no reports to tabulate")
    params = {r.parameter for r in reports}
    if len(params) > 1:
        raise ValueError(f"reports mix parameters: {sorted(str(p) for p in params)}")
    lines = ["| Model | " + " | ".join(TABLE_COLUMNS) + " |"]
    lines.append("|" + " --- |" * (len(TABLE_COLUMNS) + 1))
    for r in reports:
        cells = [
            render_value(r.mse),
            render_value(r.mae),
            render_value(r.rmse),
            render_value(r.r2),
            render_value(r.smape),
            render_value(r.pearson_r),
            render_value(r.ccc),
        ]
        lines.append(f"| {r.model_tag or '-'} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def report_as_dict(r: RegressionReport) -> dict:
    """JSON-friendly form; undefined fields serialize as the string NaN."""

    def cell(v):
        return "NaN" if v is None else v

    return {
        "model_tag": r.model_tag,
        "parameter": r.parameter.slot if r.parameter else None,
        "n": r.n,
        "mse": r.mse,
        "mae": r.mae,
        "rmse": r.rmse,
        "r2": cell(r.r2),
        "smape": r.smape,
        "pearson_r": cell(r.pearson_r),
        "ccc": cell(r.ccc),
        "moments": r.moments,
    }
