"""Repeated-run summaries and pairwise model comparisons: normal-approximation
confidence intervals, Welch and pooled t-tests, Cohen's d."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from ..errors import DegenerateInputError, ParameterError

Z95 = 1.959964


# ---------------------------------------------------------------------------
# Student t distribution via the regularized incomplete beta function
# ---------------------------------------------------------------------------

def _betacf(a: float, b: float, x: float, max_iter: int = 10_000, eps: float = 1e-16) -> float:
    """Continued fraction for I_x(a, b), modified Lentz evaluation."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ParameterError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ParameterError("df must be positive")
    if math.isinf(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


def t_cdf(t: float, df: float) -> float:
    tail = 0.5 * t_two_sided_p(t, df)
    return 1.0 - tail if t >= 0 else tail


# ---------------------------------------------------------------------------
# Tests and effect sizes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TTest:
    t: float
    p: float
    df: float


def _moments(x):
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise ParameterError("each sample needs at least 2 values")
    return x.size, float(x.mean()), float(x.var(ddof=1))


def _undefined(ma, mb):
    if ma == mb:
        raise DegenerateInputError("t undefined: both samples have zero variance and equal means")
    return math.copysign(math.inf, ma - mb)


def welch_from_stats(mean_a, sd_a, n_a, mean_b, sd_b, n_b) -> TTest:
    va, vb = sd_a**2 / n_a, sd_b**2 / n_b
    se2 = va + vb
    if se2 == 0:
        return TTest(_undefined(mean_a, mean_b), 0.0, float(n_a + n_b - 2))
    t = (mean_a - mean_b) / math.sqrt(se2)
    df = se2**2 / (va**2 / (n_a - 1) + vb**2 / (n_b - 1)) if va or vb else n_a + n_b - 2
    return TTest(t, t_two_sided_p(t, df), df)


def welch_t(a, b) -> TTest:
    """Unequal-variance two-sample t-test with Welch-Satterthwaite df."""
    na, ma, va = _moments(a)
    nb, mb, vb = _moments(b)
    return welch_from_stats(ma, math.sqrt(va), na, mb, math.sqrt(vb), nb)


def pooled_t(a, b) -> TTest:
    """Student's equal-variance two-sample t-test."""
    na, ma, va = _moments(a)
    nb, mb, vb = _moments(b)
    df = na + nb - 2
    sp2 = ((na - 1) * va + (nb - 1) * vb) / df
    if sp2 == 0:
        return TTest(_undefined(ma, mb), 0.0, float(df))
    t = (ma - mb) / math.sqrt(sp2 * (1.0 / na + 1.0 / nb))
    return TTest(t, t_two_sided_p(t, df), float(df))


def cohens_d(mean_a: float, sd_a: float, mean_b: float, sd_b: float) -> float:
    """Standardized mean difference with the equal-n pooled SD
    ``sqrt((sd_a^2 + sd_b^2) / 2)``."""
    if sd_a < 0 or sd_b < 0:
        raise ParameterError("standard deviations must be non-negative")
    pooled = math.sqrt((sd_a**2 + sd_b**2) / 2.0)
    if pooled == 0:
        raise DegenerateInputError("Cohen's d undefined when both SDs are zero")
    return (mean_a - mean_b) / pooled


def cohens_d_samples(a, b) -> float:
    na, ma, va = _moments(a)
    nb, mb, vb = _moments(b)
    pooled = math.sqrt(((na - 1) * va + (nb - 1) * vb) / (na + nb - 2))
    if pooled == 0:
        raise DegenerateInputError("Cohen's d undefined when both SDs are zero")
    return (ma - mb) / pooled


def confidence_interval(mean: float, sd: float, n: int, level: float = 0.95) -> tuple:
    """Normal-approximation interval ``mean +/- z * sd / sqrt(n)``."""
    if n < 2:
        raise ParameterError("n must be >= 2")
    if sd < 0:
        raise ParameterError("sd must be non-negative")
    if not 0 < level < 1:
        raise ParameterError("level must lie in (0, 1)")
    z = Z95 if level == 0.95 else NormalDist().inv_cdf(0.5 + level / 2)
    half = z * sd / math.sqrt(n)
    return mean - half, mean + half


# ---------------------------------------------------------------------------
# Run summaries
# ---------------------------------------------------------------------------

@dataclass
class RunStats:
    model: str
    accuracies: list = field(default_factory=list)
    n_runs: int = 0
    mean: float = math.nan
    sd: float = math.nan
    ci95: tuple = (math.nan, math.nan)
    n_failed: int = 0

    @classmethod
    def from_accuracies(cls, model: str, accuracies, n_failed: int = 0) -> "RunStats":
        acc = [float(a) for a in accuracies]
        if len(acc) < 2:
            raise ParameterError(f"{model}: need >= 2 successful runs, got {len(acc)}")
        arr = np.array(acc)
        mean = float(arr.mean())
        sd = float(arr.std(ddof=1))
        return cls(model, acc, len(acc), mean, sd, confidence_interval(mean, sd, len(acc)), n_failed)

    @classmethod
    def from_summary(cls, model: str, mean: float, sd: float, n: int) -> "RunStats":
        return cls(model, [], n, mean, sd, confidence_interval(mean, sd, n))


@dataclass(frozen=True)
class StatComparison:
    model_a: str
    model_b: str
    t_stat: float
    p_value: float
    cohens_d: float
    df: float = math.nan


def compare(a: RunStats, b: RunStats) -> StatComparison:
    """Welch t and Cohen's d for one pair; per-run lists are used when both
    sides have them. Two zero-variance runs with equal means compare as
    ``t = 0, p = 1, d = 0`` rather than raising."""
    lists = len(a.accuracies) >= 2 and len(b.accuracies) >= 2
    if a.sd == 0 and b.sd == 0 and a.mean == b.mean:
        return StatComparison(a.model, b.model, 0.0, 1.0, 0.0, float(a.n_runs + b.n_runs - 2))
    if lists:
        tt = welch_t(a.accuracies, b.accuracies)
    else:
        tt = welch_from_stats(a.mean, a.sd, a.n_runs, b.mean, b.sd, b.n_runs)
    if a.sd == 0 and b.sd == 0:
        d = math.copysign(math.inf, a.mean - b.mean)
    elif lists:
        d = cohens_d_samples(a.accuracies, b.accuracies)
    else:
        d = cohens_d(a.mean, a.sd, b.mean, b.sd)
    return StatComparison(a.model, b.model, tt.t, tt.p, d, tt.df)


def compare_all(run_stats) -> list:
    """All unordered pairs (in input order) of distinct models."""
    if len(run_stats) < 2:
        raise ParameterError("need at least two models to compare")
    return [compare(a, b) for a, b in itertools.combinations(run_stats, 2) if a.model != b.model]
