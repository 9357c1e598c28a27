"""Effect sizes, Welch tests, correlations and bootstrap intervals."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from groundtrace.trace_types import POSITIONS


@dataclass(frozen=True)
class EffectReport:
    cohens_d: float
    welch_t: float
    welch_p: float
    n_a: int
    n_b: int
    mean_a: float
    mean_b: float
    direction: str = "a-b"


def _two_samples(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError(f"need at least 2 values per group, got {len(a)} and {len(b)}")
    return a, b


def cohens_d(a, b) -> float:
    """Standardised mean difference (a - b) with pooled unbiased SD."""
    a, b = _two_samples(a, b)
    na, nb = len(a), len(b)
    pooled = ((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2)
    if pooled <= 0:
        raise ValueError("pooled standard deviation is zero")
    return float((a.mean() - b.mean()) / math.sqrt(pooled))


# --- regularised incomplete beta (modified Lentz continued fraction) ---

def _betacf(a: float, b: float, x: float, eps: float = 1e-15, max_iter: int = 10_000) -> float:
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x in (0.0, 1.0):
        return x
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def student_t_sf2(t: float, df: float) -> float:
    """Two-sided tail probability P(|T| >= |t|) for Student's t."""
    if math.isinf(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


def welch_test(a, b) -> tuple[float, float]:
    """Welch t statistic (a - b) and two-sided p-value."""
    a, b = _two_samples(a, b)
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    se2 = va + vb
    if se2 <= 0:
        raise ValueError("both samples have zero variance")
    t = (a.mean() - b.mean()) / math.sqrt(se2)
    df = se2**2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    return float(t), float(student_t_sf2(t, df))


def effect_report(a, b, direction: str = "a-b") -> EffectReport:
    t, p = welch_test(a, b)
    return EffectReport(cohens_d(a, b), t, p, len(a), len(b), float(np.mean(a)), float(np.mean(b)), direction)


def pearson_r(x, y) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("need two equal-length samples of size >= 2")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ValueError("zero variance input")
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))


def mann_whitney_u(x, y) -> float:
    """U statistic of ``x`` against ``y`` from mid-ranks of the pooled sample."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    pooled = np.concatenate([x, y])
    order = np.argsort(pooled, kind="mergesort")
    ranks = np.empty(len(pooled))
    sorted_vals = pooled[order]
    i = 0
    while i < len(pooled):
        j = i
        while j + 1 < len(pooled) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return float(ranks[: len(x)].sum() - len(x) * (len(x) + 1) / 2.0)


def bootstrap_ci(
    data,
    statistic: Callable[[np.ndarray], float] = np.mean,
    B: int = 2000,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile interval over ``B`` resamples.

    Replicate ``b`` draws from ``default_rng([seed, b])`` so the interval does
    not depend on evaluation order.
    """
    data = np.asarray(data)
    if len(data) < 2:
        raise ValueError("bootstrap needs at least 2 observations")
    n = len(data)
    stats = np.array(
        [statistic(data[np.random.default_rng([seed, b]).integers(0, n, n)]) for b in range(B)],
        dtype=float,
    )
    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(stats, [tail, 100.0 - tail])
    return float(lo), float(hi)


def _position_values(records, feature: str, idx: int):
    vals = []
    for r in records:
        series = getattr(r, feature)
        if series is not None:
            vals.append(series[idx])
    return vals


def per_position_discrimination(records: Sequence, feature: str = "V") -> dict[str, EffectReport]:
    """Cohen's d and Welch test (incorrect - correct) at every canonical position.

    ``feature`` is ``"V"`` or ``"A_bbox"``; records lacking the feature (for
    example invalid boxes) are left out.  The extra key ``<feature>_thinking_auc``
    covers the trapezoidal engagement area.
    """
    wrong = [r for r in records if not r.correct]
    right = [r for r in records if r.correct]
    if not wrong or not right:
        raise ValueError(f"per-position discrimination needs both classes (correct={len(right)}, incorrect={len(wrong)})")
    out = {}
    for i, label in enumerate(POSITIONS):
        out[label] = effect_report(
            _position_values(wrong, feature, i), _position_values(right, feature, i), "incorrect-correct"
        )
    auc_name = f"{feature}_thinking_auc"
    a = [getattr(r, auc_name) for r in wrong if getattr(r, auc_name) is not None]
    b = [getattr(r, auc_name) for r in right if getattr(r, auc_name) is not None]
    out[auc_name] = effect_report(a, b, "incorrect-correct")
    return out
