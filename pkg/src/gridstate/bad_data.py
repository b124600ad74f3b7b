"""Bad data detection and identification for weighted least-squares models.

Detection uses the chi-squared test on the weighted residual sum of squares.
Identification uses the largest normalized residual, with the residual
covariance diagonal taken from a selected inverse of the factored gain matrix.
Suspect measurements are removed by masking their status, so the model keeps
its patterns and the gain is refactored in place.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .estimators import EstimationModel, EstimationReport
from .measurements import update_measurement
from .sparse import selected_inverse_diag_quadform

THRESHOLD = 3.0
CONFIDENCE = 0.95
CRITICAL_FLOOR = 1e-10  # C_ii below this fraction of Sigma_ii marks a critical row

_GAMMA_EPS = 1e-15
_GAMMA_ITER = 500


class BadDataError(RuntimeError):
    pass


# ---------------------------------------------------------------- chi-squared

def regularized_gamma_p(a: float, x: float) -> float:
    """Lower regularized incomplete gamma P(a, x).

    Series expansion below x = a + 1, Lentz continued fraction for Q above.
    """
    if a <= 0:
        raise ValueError("shape must be positive")
    if x <= 0:
        return 0.0
    log_pre = a * math.log(x) - x - math.lgamma(a)
    if x < a + 1.0:
        term = total = 1.0 / a
        ap = a
        for _ in range(_GAMMA_ITER):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * _GAMMA_EPS:
                break
        return min(1.0, total * math.exp(log_pre))
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_EPS:
            break
    return max(0.0, 1.0 - math.exp(log_pre) * h)


def chi_squared_cdf(x: float, df: int) -> float:
    return regularized_gamma_p(df / 2.0, x / 2.0)


def chi_squared_quantile(confidence: float, df: int) -> float:
    """Inverse of :func:`chi_squared_cdf` by bracketing and bisection."""
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    if df < 1:
        raise ValueError("degrees of freedom must be positive")
    lo, hi = 0.0, max(1.0, 2.0 * df)
    while chi_squared_cdf(hi, df) < confidence:
        lo, hi = hi, 2.0 * hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if chi_squared_cdf(mid, df) < confidence:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * hi:
            break
    return 0.5 * (lo + hi)


@dataclass
class ChiSquaredResult:
    passed: bool
    statistic: float
    threshold: float
    dof: int
    confidence: float


def chi_squared_test(model: EstimationModel, report: EstimationReport,
                     confidence: float = CONFIDENCE) -> ChiSquaredResult:
    """Compare r^T W r with the chi-squared quantile at k - m degrees of freedom."""
    if report.x is None:
        raise BadDataError("the estimate is unavailable")
    dof = model.k - model.m
    if dof <= 0:
        raise BadDataError(f"no redundancy: {model.k} measurements for {model.m} states")
    r = np.where(model.active, model.residual(report.x), 0.0)
    stat = float(r @ (model.W @ r))
    thr = chi_squared_quantile(confidence, dof)
    return ChiSquaredResult(stat <= thr, stat, thr, dof, confidence)


# ---------------------------------------------------------------- normalized residuals

@dataclass
class NormalizedResiduals:
    residuals: np.ndarray  # per row; nan on masked rows
    covariance: np.ndarray  # C_ii per row; nan on masked rows
    normalized: np.ndarray  # |r_i| / sqrt(C_ii); nan on masked or critical rows
    critical: np.ndarray  # row indices exempted as critical


def normalized_residuals(model: EstimationModel, report: EstimationReport) -> NormalizedResiduals:
    """Residual covariance diagonal C = Sigma - J G^{-1} J^T and normalized residuals."""
    if report.x is None:
        raise BadDataError("the estimate is unavailable")
    k = len(model.layout)
    J = model.jacobian_at_solution() if model.kind == "ac" else model.H
    fact = model.factor_gain(J)
    act = np.flatnonzero(model.active)
    Ja = sp.csr_matrix(J)[act]
    sigma = model.sigma_diag[act]
    quad = selected_inverse_diag_quadform(fact, Ja, sigma)
    r = model.residual(report.x)
    C = np.full(k, np.nan)
    C[act] = quad.values
    res = np.full(k, np.nan)
    res[act] = r[act]
    critical = act[quad.values < CRITICAL_FLOOR * sigma]
    norm = np.full(k, np.nan)
    ok = np.setdiff1d(act, critical)
    norm[ok] = np.abs(r[ok]) / np.sqrt(C[ok])
    return NormalizedResiduals(res, C, norm, critical)


def largest_normalized_residual(model: EstimationModel, report: EstimationReport):
    """(row, value, table) of the largest normalized residual; lowest row wins ties."""
    table = normalized_residuals(model, report)
    if np.all(np.isnan(table.normalized)):
        return None, math.nan, table
    j = int(np.nanargmax(table.normalized))  # first occurrence of the maximum
    return j, float(table.normalized[j]), table


# ---------------------------------------------------------------- identification loop

@dataclass
class Removal:
    pass_no: int
    measurement: str
    residual: float
    normalized: float
    threshold: float

    def as_dict(self) -> dict:
        return {"pass": self.pass_no, "measurement": self.measurement,
                "residual": self.residual, "normalized_residual": self.normalized,
                "threshold": self.threshold}


@dataclass
class BadDataReport:
    chi_squared: ChiSquaredResult | None
    removals: list = field(default_factory=list)
    final_chi_squared: ChiSquaredResult | None = None
    critical: list = field(default_factory=list)  # ids exempted as critical
    verdict: str = "clean"  # clean | removed | unobservable | estimator_failed
    message: str = ""
    estimate: EstimationReport | None = None
    largest: float = math.nan  # largest normalized residual after the last pass

    @property
    def removed_ids(self) -> list:
        return [r.measurement for r in self.removals]

    @property
    def passed(self) -> bool:
        fc = self.final_chi_squared
        return self.verdict in ("clean", "removed") and (fc is None or fc.passed)


def remove_measurement(model: EstimationModel, row: int) -> str:
    """Mask the measurement behind ``row``; a phasor's partner row follows it."""
    mid = model.layout.ids[row]
    update_measurement(model.measurements, mid, {"status": 0})
    return mid


def remove_and_resolve(model: EstimationModel, row: int, method: str = "wls") -> EstimationReport:
    """Mask one measurement and re-estimate from the previous solution."""
    remove_measurement(model, row)
    return model.solve(method, start="warm")


def analyze_bad_data(model: EstimationModel, report: EstimationReport | None = None,
                     threshold: float = THRESHOLD, confidence: float = CONFIDENCE,
                     method: str = "wls", force: bool = False,
                     max_passes: int | None = None) -> BadDataReport:
    """Chi-squared detection followed by the largest-normalized-residual loop.

    When the chi-squared test passes the loop is skipped unless ``force``.
    """
    if report is None:
        report = model.solve(method)
    if not report.converged:
        return BadDataReport(None, verdict="estimator_failed", message=report.message,
                             estimate=report)
    chi = chi_squared_test(model, report, confidence)
    out = BadDataReport(chi, estimate=report, final_chi_squared=chi)
    if chi.passed and not force:
        return out
    limit = len(model.layout) if max_passes is None else max_passes
    for pass_no in range(1, limit + 1):
        j, value, table = largest_normalized_residual(model, report)
        out.critical = sorted({model.layout.ids[i] for i in table.critical})
        out.largest = value
        if j is None or not value >= threshold:
            break
        if model.k - 1 <= model.m:
            out.verdict = "unobservable"
            out.message = "removing another measurement leaves no redundancy"
            break
        mid = model.layout.ids[j]
        out.removals.append(Removal(pass_no, mid, float(table.residuals[j]), value, threshold))
        remove_measurement(model, j)
        report = model.solve(method, start="warm")
        out.estimate = report
        if report.status == "unobservable":
            out.verdict = "unobservable"
            out.message = report.message
            break
        if not report.converged:
            out.verdict = "estimator_failed"
            out.message = f"re-estimation ended {report.status}"
            break
        out.verdict = "removed"
    if out.verdict == "removed" and model.k > model.m:
        out.final_chi_squared = chi_squared_test(model, report, confidence)
    return out
