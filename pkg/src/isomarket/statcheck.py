"""
statcheck.py — Statistical gates that turn distributional claims into pass/fail checks.

Every gate returns a TestReport (statistic, threshold, pass flag) and never
raises for the condition it reports. Input too short to test at all (fewer
than MIN_QV_STEPS increments for the variation gates) is an InvalidInputError;
callers size their runs with MIN_QV_STEPS. Thresholds come from a CheckConfig.
"""
from dataclasses import dataclass
from typing import Callable, ClassVar

import numpy as np
from pydantic import BaseModel, model_validator
from scipy import stats

from .config import CHECKS, CheckConfig
from .errors import InvalidInputError
from .logger import get_logger

log = get_logger(__name__)

MIN_QV_STEPS = 100


class TestReport(BaseModel):
    __test__: ClassVar[bool] = False

    name: str
    statistic: float
    threshold: float
    passed: bool = False
    sizes: tuple[float, ...] = ()
    description: str = ""

    @model_validator(mode="after")
    def _decide(self):
        # NaN statistics fail
        self.passed = bool(self.statistic <= self.threshold)
        return self


# ── Empirical CDFs ────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class EcdfTable:
    values: np.ndarray       # sorted distinct sample values
    cumulative: np.ndarray   # F at each value
    effective_size: float

    @classmethod
    def from_sample(cls, sample, weights=None) -> "EcdfTable":
        sample = np.asarray(sample, dtype=float).reshape(-1)
        if sample.size == 0:
            raise InvalidInputError("empty sample")
        w = np.ones(sample.size) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
        if len(w) != sample.size or np.any(w < 0) or w.sum() <= 0:
            raise InvalidInputError("weights must be non-negative, aligned and not all zero")
        w = w / w.sum()
        values, inverse = np.unique(sample, return_inverse=True)
        masses = np.bincount(inverse.reshape(-1), weights=w, minlength=len(values))
        cumulative = np.cumsum(masses)
        cumulative[-1] = 1.0
        # Kish effective sample size
        effective = 1.0 / float(np.sum(w ** 2))
        return cls(values, cumulative, effective)

    def __call__(self, points) -> np.ndarray:
        idx = np.searchsorted(self.values, points, side="right")
        return np.concatenate([[0.0], self.cumulative])[idx]

    def left_limit(self, points) -> np.ndarray:
        idx = np.searchsorted(self.values, points, side="left")
        return np.concatenate([[0.0], self.cumulative])[idx]


def ks_critical(alpha: float) -> float:
    """c(α): the Kolmogorov distribution's upper-α point."""
    return float(stats.kstwobign.isf(alpha))


def ks_two_sample(a, b, weights_a=None, weights_b=None, checks: CheckConfig = CHECKS,
                  name: str = "ks_two_sample") -> TestReport:
    ea = EcdfTable.from_sample(a, weights_a)
    eb = EcdfTable.from_sample(b, weights_b)
    grid = np.union1d(ea.values, eb.values)
    statistic = float(np.max(np.abs(ea(grid) - eb(grid))))
    n, m = ea.effective_size, eb.effective_size
    threshold = ks_critical(checks.alpha) * np.sqrt((n + m) / (n * m))
    return TestReport(name=name, statistic=statistic, threshold=threshold, sizes=(n, m),
                      description=f"weighted two-sample KS at alpha={checks.alpha}")


def ks_against_cdf(sample, cdf: Callable[[np.ndarray], np.ndarray], weights=None,
                   threshold: float | None = None, checks: CheckConfig = CHECKS,
                   name: str = "ks_one_sample") -> TestReport:
    """Sup distance between a weighted ECDF and a continuous reference CDF."""
    table = EcdfTable.from_sample(sample, weights)
    ref = np.asarray(cdf(table.values), dtype=float)
    statistic = float(max(np.max(np.abs(table(table.values) - ref)),
                          np.max(np.abs(table.left_limit(table.values) - ref))))
    if threshold is None:
        threshold = ks_critical(checks.alpha) / np.sqrt(table.effective_size)
    return TestReport(name=name, statistic=statistic, threshold=float(threshold),
                      sizes=(table.effective_size,), description="one-sample KS")


# ── Quadratic variation ───────────────────────────────────────────────────────

def _qv_band(target: float, dt: float, checks: CheckConfig) -> float:
    return checks.qv_band_sigmas * np.sqrt(2.0 * abs(target) * dt) * np.sqrt(abs(target))


def qv_check(increments, target: float, dt: float, checks: CheckConfig = CHECKS,
             name: str = "qv") -> TestReport:
    """Σ(ΔY)² against target; a 2-D input is one path per row and is averaged."""
    arr = np.asarray(increments, dtype=float)
    if arr.shape[-1] < MIN_QV_STEPS:
        raise InvalidInputError(f"qv_check needs at least {MIN_QV_STEPS} increments, got {arr.shape[-1]}")
    qv = float(np.mean(np.sum(arr ** 2, axis=-1)))
    return TestReport(name=name, statistic=abs(qv - target), threshold=_qv_band(target, dt, checks),
                      sizes=(float(arr.shape[-1]),), description=f"quadratic variation {qv:.6g} vs {target:.6g}")


def cross_qv_check(a, b, dt: float, horizon: float, checks: CheckConfig = CHECKS,
                   name: str = "cross_qv") -> TestReport:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.shape[-1] < MIN_QV_STEPS:
        raise InvalidInputError(f"cross_qv_check needs aligned channels of at least {MIN_QV_STEPS} increments")
    cross = float(np.mean(np.sum(a * b, axis=-1)))
    return TestReport(name=name, statistic=abs(cross), threshold=_qv_band(horizon, dt, checks),
                      sizes=(float(a.shape[-1]),), description=f"cross variation {cross:.6g} vs 0")


def dimension_estimate(increments, dt: float, checks: CheckConfig = CHECKS) -> int:
    """Rank of the realized covariation matrix of (steps, channels) or (paths, steps, channels)."""
    arr = np.asarray(increments, dtype=float)
    if arr.ndim < 2 or arr.shape[-2] < 1000:
        raise InvalidInputError("dimension_estimate needs at least 1000 steps")
    flat = arr.reshape(-1, arr.shape[-1])
    covariation = flat.T @ flat / (len(flat) * dt)
    eig = np.linalg.eigvalsh(covariation)
    if eig[-1] <= 0:
        return 0
    return int(np.sum(eig >= checks.rank_threshold * eig[-1]))


# ── Moments ───────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class MomentReport:
    n: int
    mean: float
    variance: float
    skewness: float
    excess_kurtosis: float
    se_mean: float
    se_variance: float
    se_skewness: float
    se_kurtosis: float
    degenerate: bool


def moment_report(sample) -> MomentReport:
    x = np.asarray(sample, dtype=float).reshape(-1)
    n = len(x)
    if n < 30:
        raise InvalidInputError(f"moment_report needs at least 30 points, got {n}")
    variance = float(np.var(x, ddof=1))
    degenerate = variance == 0.0
    if degenerate:
        log.warning("degenerate sample: zero variance")
        skew = kurt = float("nan")
    else:
        skew = float(stats.skew(x, bias=False))
        kurt = float(stats.kurtosis(x, fisher=True, bias=False))
    se_skew = np.sqrt(6.0 * n * (n - 1) / ((n - 2) * (n + 1) * (n + 3)))
    se_kurt = 2.0 * se_skew * np.sqrt((n * n - 1) / ((n - 3) * (n + 5)))
    return MomentReport(
        n=n,
        mean=float(np.mean(x)),
        variance=variance,
        skewness=skew,
        excess_kurtosis=kurt,
        se_mean=float(np.sqrt(variance / n)),
        se_variance=float(variance * np.sqrt(2.0 / (n - 1))),
        se_skewness=float(se_skew),
        se_kurtosis=float(se_kurt),
        degenerate=degenerate,
    )


# ── Lévy gates ────────────────────────────────────────────────────────────────

def levy_gates(increments, dt: float, horizon: float, checks: CheckConfig = CHECKS) -> list[TestReport]:
    """
    Brownian-motion gates on (paths, steps, n) increments: per-component QV,
    pairwise cross variation, and normality of the normalized increments.
    """
    arr = np.asarray(increments, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    n = arr.shape[2]
    reports = []
    for i in range(n):
        reports.append(qv_check(arr[:, :, i], horizon, dt, checks, name=f"qv[{i + 1}]"))
    for i in range(n):
        for j in range(i + 1, n):
            reports.append(cross_qv_check(arr[:, :, i], arr[:, :, j], dt, horizon, checks,
                                          name=f"cross_qv[{i + 1},{j + 1}]"))
    for i in range(n):
        moments = moment_report(arr[:, :, i].ravel() / np.sqrt(dt))
        reports.append(TestReport(name=f"skewness[{i + 1}]", statistic=abs(moments.skewness),
                                  threshold=checks.skew_gate, sizes=(float(moments.n),)))
        reports.append(TestReport(name=f"excess_kurtosis[{i + 1}]", statistic=abs(moments.excess_kurtosis),
                                  threshold=checks.kurtosis_gate, sizes=(float(moments.n),)))
    return reports
