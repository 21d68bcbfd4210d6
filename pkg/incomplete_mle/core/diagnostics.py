"""RMSE, Kolmogorov-Smirnov normality checks and the replication-study report tables."""
import logging
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from incomplete_mle.core.information import PsiTrace, sandwich
from incomplete_mle.core.estimators import MEstimatorResult
from incomplete_mle.models.params import ModelParams, pack

logger = logging.getLogger(__name__)

MIN_KS_SAMPLE = 5
REPORT_KINDS = ("mle", "m_estimator")
COLUMNS = (
    "label",
    "true_value",
    "estimate",
    "rmse_pct",
    "se_jy_inv_pct",
    "se_psi_pct",
    "se_sandwich_pct",
    "ks_pvalue",
    "sd_pct",
)
KS_FOOTER = "KS p-values use the asymptotic Kolmogorov distribution."


def rmse(estimates, theta0) -> np.ndarray:
    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    theta0 = np.asarray(theta0, dtype=float)
    if estimates.shape[0] < 1 or estimates.shape[1:] != theta0.shape:
        raise ValueError(f"shape mismatch: estimates {estimates.shape} vs truth {theta0.shape}")
    return np.sqrt(np.mean((estimates - theta0) ** 2, axis=0))


def ks_normality(standardized: Sequence[float]):
    """One-sample KS test against N(0, 1); returns (statistic, p_value)."""
    z = np.asarray(standardized, dtype=float)
    if z.ndim != 1 or z.size < MIN_KS_SAMPLE:
        raise ValueError(f"the KS test needs at least {MIN_KS_SAMPLE} values, got {z.size}")
    statistic = float(stats.ks_1samp(z, stats.norm.cdf).statistic)
    return statistic, float(stats.kstwobign.sf(np.sqrt(z.size) * statistic))


@dataclass
class ReportRow:
    label: str
    true_value: float
    estimate: float
    rmse_pct: float
    se_jy_inv_pct: float
    se_psi_pct: float
    se_sandwich_pct: float
    ks_pvalue: float
    sd_pct: float

    def values(self):
        return [getattr(self, column) for column in COLUMNS]


@dataclass
class EstimationReport:
    kind: str
    K: int
    n: int
    rows: List[ReportRow]
    standardized: np.ndarray = field(repr=False)
    footer: str = KS_FOOTER

    @property
    def d(self):
        return len(self.rows)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(row, name) for row in self.rows])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.values() for row in self.rows], columns=list(COLUMNS))

    def to_text(self) -> str:
        title = "MLE" if self.kind == "mle" else "M-estimator"
        header = f"{title}: K={self.K} replicates of n={self.n} paths; standard errors in %"
        body = self.to_frame().to_string(index=False, float_format=lambda v: f"{v:.4f}")
        return "\n".join([header, body, self.footer]) + "\n"


def _standard_errors(cov: np.ndarray, n: int) -> np.ndarray:
    return np.sqrt(np.clip(np.diag(cov), 0.0, None) / n)


def build_report(
    truth: ModelParams, result: MEstimatorResult, psi_trace: PsiTrace, kind: str = "mle"
) -> EstimationReport:
    """Assemble one replication-study table.

    ``kind="mle"`` reports the fitted MLEs with information matrices averaged at
    each replicate's own MLE; ``kind="m_estimator"`` reports the one-step
    M-estimates with matrices averaged at the pooled MLE.
    """
    if kind not in REPORT_KINDS:
        raise ValueError(f"kind must be one of {REPORT_KINDS}")
    theta0 = pack(truth)
    if kind == "mle":
        estimates = np.array([v.values for v in result.mle_estimates])
        jx_inv, jy_bar = result.mle_jx_bar_inv, result.mle_jy_bar
    else:
        estimates = np.array([v.values for v in result.theta0_estimates])
        jx_inv, jy_bar = result.jx_bar_inv, result.jy_bar
    d = theta0.layout.d
    if estimates.shape[1] != d or jy_bar.shape != (d, d) or psi_trace.limit.shape != (d, d):
        raise ValueError(f"dimension mismatch: truth has {d} free parameters")

    n = result.n
    jy_inv = np.linalg.inv(jy_bar)
    sigma = sandwich(jx_inv, jy_bar)
    se_jy_inv = _standard_errors(jy_inv, n)
    se_psi = _standard_errors(psi_trace.limit, n)
    se_sandwich = _standard_errors(sigma, n)
    K = estimates.shape[0]
    if kind == "mle":
        standardized = (estimates - theta0.values) / se_jy_inv
    else:
        # every one-step estimate shares the pooled-MLE error, so only the spread
        # about their own mean follows the sandwich covariance
        shrink = np.sqrt((K - 1) / K) if K > 1 else 1.0
        standardized = (estimates - estimates.mean(axis=0)) / (se_sandwich * shrink)
    errors = rmse(estimates, theta0.values)
    spread = estimates.std(axis=0)

    rows = []
    for i, label in enumerate(theta0.labels):
        if K >= MIN_KS_SAMPLE:
            pvalue = ks_normality(standardized[:, i])[1]
        else:
            pvalue = float("nan")
        rows.append(
            ReportRow(
                label=label,
                true_value=float(theta0.values[i]),
                estimate=float(estimates[:, i].mean()),
                rmse_pct=100.0 * float(errors[i]),
                se_jy_inv_pct=100.0 * float(se_jy_inv[i]),
                se_psi_pct=100.0 * float(se_psi[i]),
                se_sandwich_pct=100.0 * float(se_sandwich[i]),
                ks_pvalue=pvalue,
                sd_pct=100.0 * float(spread[i]),
            )
        )
    if K < MIN_KS_SAMPLE:
        logger.info("KS p-values skipped: only %d replicates", K)
    return EstimationReport(kind=kind, K=K, n=n, rows=rows, standardized=standardized)
