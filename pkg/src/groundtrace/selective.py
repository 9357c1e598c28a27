"""Selective prediction: risk-coverage metrics, transfer harness, quadrants and the vision veto."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from groundtrace.config import DEFAULT_C_GRID
from groundtrace.grounding import auroc
from groundtrace.probes import ProbeModel, labels, raw_matrix, train_probe

COVERAGE_GRID = tuple(round(0.1 * i, 1) for i in range(1, 11))


@dataclass(frozen=True)
class RiskScoredSample:
    id: str
    risk: float
    correct: bool
    V_thinking_auc: float | None = None
    H_full: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.risk <= 1.0:
            raise ValueError(f"sample {self.id}: risk {self.risk} outside [0, 1]")


def score_samples(model: ProbeModel, records: Sequence) -> list[RiskScoredSample]:
    p = model.predict_proba_raw(raw_matrix(records, model.spec.base))
    return [
        RiskScoredSample(r.id, float(np.clip(1.0 - pi, 0.0, 1.0)), bool(r.correct), r.V_thinking_auc, r.H_full)
        for r, pi in zip(records, p)
    ]


def _ranked(samples: Sequence[RiskScoredSample]) -> list[RiskScoredSample]:
    return sorted(samples, key=lambda s: (s.risk, s.id))


def _accept_count(alpha: float, n: int) -> int:
    # Rounding guard: 0.9 * 20 must give 18, not 19.
    return min(n, math.ceil(alpha * n - 1e-9))


def selective_risk(samples: Sequence[RiskScoredSample], alpha: float) -> float:
    """Error rate among the ceil(alpha * n) lowest-risk samples (ties by id)."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"coverage must lie in (0, 1], got {alpha}")
    if not samples:
        raise ValueError("no samples")
    accepted = _ranked(samples)[: _accept_count(alpha, len(samples))]
    return sum(not s.correct for s in accepted) / len(accepted)


def aurc(samples: Sequence[RiskScoredSample], grid: Sequence[float] = COVERAGE_GRID) -> float:
    """Mean selective risk over a fixed coverage grid shared by every compared method."""
    return float(np.mean([selective_risk(samples, a) for a in grid]))


def selective_ece(samples: Sequence[RiskScoredSample], alpha: float = 1.0, bins: int = 10) -> float:
    accepted = _ranked(samples)[: _accept_count(alpha, len(samples))]
    if not accepted:
        raise ValueError("accepted set is empty")
    conf = np.array([1.0 - s.risk for s in accepted])
    acc = np.array([1.0 if s.correct else 0.0 for s in accepted])
    which = np.minimum((conf * bins).astype(int), bins - 1)
    total = 0.0
    for b in range(bins):
        mask = which == b
        if mask.any():
            total += mask.sum() / len(accepted) * abs(acc[mask].mean() - conf[mask].mean())
    return float(total)


def correctness_auc(samples: Sequence[RiskScoredSample]) -> float:
    """AUROC of confidence (1 - risk) for separating correct from incorrect."""
    return auroc([1.0 - s.risk for s in samples], [s.correct for s in samples])


@dataclass(frozen=True)
class SelectiveReport:
    coverage: tuple[float, ...]
    risk: tuple[float, ...]
    aurc: float
    auc: float
    alpha: float
    risk_at_alpha: float
    ece_at_alpha: float
    n: int
    n_errors: int


def selective_report(samples: Sequence[RiskScoredSample], alpha: float = 0.9, bins: int = 10) -> SelectiveReport:
    risks = tuple(selective_risk(samples, a) for a in COVERAGE_GRID)
    try:
        auc = correctness_auc(samples)
    except ValueError:
        auc = float("nan")
    return SelectiveReport(
        coverage=COVERAGE_GRID,
        risk=risks,
        aurc=float(np.mean(risks)),
        auc=auc,
        alpha=alpha,
        risk_at_alpha=selective_risk(samples, alpha),
        ece_at_alpha=selective_ece(samples, alpha, bins),
        n=len(samples),
        n_errors=sum(not s.correct for s in samples),
    )


# --- vision veto ------------------------------------------------------------

@dataclass(frozen=True)
class VetoOutcome:
    accepted: tuple[str, ...]
    vetoed: tuple[str, ...]
    restored: tuple[str, ...]
    coverage: float
    risk_veto: float
    risk_entropy: float

    @property
    def delta_risk_pp(self) -> float:
        return 100.0 * (self.risk_veto - self.risk_entropy)


def vision_veto(samples: Sequence[RiskScoredSample], alpha: float = 0.9, veto_rate: float = 0.05) -> VetoOutcome:
    """Entropy deferral, veto of the least visually engaged accepts, then coverage restoration."""
    if not 0.0 <= veto_rate < 1.0:
        raise ValueError(f"veto_rate must lie in [0, 1), got {veto_rate}")
    if any(s.V_thinking_auc is None for s in samples):
        raise ValueError("vision veto needs V_thinking_auc on every sample")
    ranked = _ranked(samples)
    target = _accept_count(alpha, len(ranked))
    stage1 = ranked[:target]
    pool = ranked[target:]

    n_veto = math.ceil(veto_rate * len(stage1) - 1e-9) if veto_rate > 0 else 0
    by_engagement = sorted(stage1, key=lambda s: (s.V_thinking_auc, s.id))
    vetoed = by_engagement[:n_veto]
    vetoed_ids = {s.id for s in vetoed}
    kept = [s for s in stage1 if s.id not in vetoed_ids]
    restored = pool[: target - len(kept)]
    accepted = kept + restored

    def err(group):
        return sum(not s.correct for s in group) / len(group) if group else 0.0

    return VetoOutcome(
        accepted=tuple(s.id for s in accepted),
        vetoed=tuple(s.id for s in vetoed),
        restored=tuple(s.id for s in restored),
        coverage=len(accepted) / len(ranked),
        risk_veto=err(accepted),
        risk_entropy=err(stage1),
    )


# --- quadrants --------------------------------------------------------------

@dataclass(frozen=True)
class QuadrantReport:
    error: dict[str, float | None]
    n: dict[str, int]
    n_mid: int
    gap: float | None  # Q2 - Q1 error rate
    thresholds: dict[str, float]
    split_positive: int = 0
    n_splits: int = 1


def quadrant_report(samples: Sequence, q: float = 0.20) -> QuadrantReport:
    """2x2 split of the extreme tails of entropy and visual engagement.

    Confident means entropy below its q-quantile, uncertain above its (1-q)
    quantile; blind means engagement below its q-quantile, grounded above its
    (1-q) quantile.  Quantiles come from the evaluation set itself.
    """
    E = np.array([s.H_full for s in samples], dtype=float)
    V = np.array([s.V_thinking_auc for s in samples], dtype=float)
    ok = np.array([bool(s.correct) for s in samples])
    if len(E) < 2:
        raise ValueError("quadrant analysis needs at least two samples")
    e_lo, e_hi = np.quantile(E, [q, 1 - q])
    v_lo, v_hi = np.quantile(V, [q, 1 - q])
    confident, uncertain = E < e_lo, E > e_hi
    blind, grounded = V < v_lo, V > v_hi
    masks = {
        "Q1": confident & grounded,
        "Q2": confident & blind,
        "Q3": uncertain & grounded,
        "Q4": uncertain & blind,
    }
    n = {k: int(m.sum()) for k, m in masks.items()}
    error = {k: (float((~ok[m]).mean()) if m.any() else None) for k, m in masks.items()}
    gap = None if error["Q1"] is None or error["Q2"] is None else error["Q2"] - error["Q1"]
    return QuadrantReport(
        error=error,
        n=n,
        n_mid=len(E) - sum(n.values()),
        gap=gap,
        thresholds={"entropy_lo": float(e_lo), "entropy_hi": float(e_hi), "vision_lo": float(v_lo), "vision_hi": float(v_hi)},
        split_positive=int(gap is not None and gap > 0),
    )


# --- transfer harness -------------------------------------------------------

def stratified_subsample(records: Sequence, fraction: float, seed: int) -> list:
    """Keep ``fraction`` of each correctness class (at least one), preserving order."""
    rng = np.random.default_rng(seed)
    y = labels(records)
    keep = []
    for cls in (0.0, 1.0):
        idx = np.flatnonzero(y == cls)
        if len(idx) == 0:
            continue
        k = max(1, int(round(fraction * len(idx))))
        keep.extend(rng.choice(idx, size=k, replace=False).tolist())
    return [records[i] for i in sorted(keep)]


@dataclass
class SplitResult:
    split: int
    seed: int
    model: ProbeModel
    report: SelectiveReport
    veto: VetoOutcome | None = None


@dataclass
class TransferResult:
    train_tag: str
    test_tag: str
    level: str
    splits: list[SplitResult] = field(default_factory=list)

    def metric(self, name: str) -> np.ndarray:
        return np.array([getattr(s.report, name) for s in self.splits], dtype=float)

    def summary(self) -> dict[str, tuple[float, float]]:
        out = {}
        for name in ("auc", "aurc", "risk_at_alpha", "ece_at_alpha"):
            v = self.metric(name)
            out[name] = (float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0)
        return out

    def veto_wins(self) -> int:
        return sum(1 for s in self.splits if s.veto is not None and s.veto.delta_risk_pp < 0)

    def mean_delta_risk_pp(self) -> float:
        return float(np.mean([s.veto.delta_risk_pp for s in self.splits if s.veto is not None]))


def split_seed(seed: int, split: int) -> int:
    return int(np.random.SeedSequence([seed, split]).generate_state(1)[0])


def run_transfer(
    train: Sequence,
    test: Sequence,
    level: str = "entropy_only",
    K: int = 10,
    seed: int = 0,
    *,
    train_fraction: float = 0.8,
    grid: Sequence[float] = DEFAULT_C_GRID,
    folds: int = 5,
    alpha: float = 0.9,
    ece_bins: int = 10,
    veto_rate: float | None = None,
    workers: int = 1,
    tags: tuple[str, str] = ("train", "test"),
) -> TransferResult:
    """K seeded repeats of subsample-train-score on a directed (train, test) pair.

    Each split uses the same seed for every policy evaluated on it, so enabling
    ``veto_rate`` pairs the veto and entropy-only outcomes split by split.
    """
    for name, cell in (("train", train), ("test", test)):
        y = labels(cell)
        if len(y) < 4 or y.min() == y.max():
            raise ValueError(f"degenerate {name} cell in transfer {tags[0]} -> {tags[1]} (n={len(y)})")

    def one(k: int) -> SplitResult:
        s = split_seed(seed, k)
        sub = list(train) if train_fraction >= 1.0 else stratified_subsample(train, train_fraction, s)
        model = train_probe(sub, level, grid, folds, s)
        scored = score_samples(model, test)
        veto = vision_veto(scored, alpha, veto_rate) if veto_rate is not None else None
        return SplitResult(k, s, model, selective_report(scored, alpha, ece_bins), veto)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            splits = list(pool.map(one, range(K)))
    else:
        splits = [one(k) for k in range(K)]
    return TransferResult(tags[0], tags[1], level, splits)


def transfer_pairs(dataset_tags: Sequence[str]) -> list[tuple[str, str]]:
    """All directed pairs of distinct datasets, in sorted order."""
    tags = sorted(set(dataset_tags))
    return [(a, b) for a in tags for b in tags if a != b]
