"""Standardisation, L2 logistic regression probes and the entropy-vision interaction fit."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from groundtrace.config import DEFAULT_C_GRID

PROBE_SCHEMA_VERSION = 1

LADDER: dict[str, tuple[str, ...]] = {
    "entropy_only": ("H_full",),
    "entropy_answer_only": ("H_ans",),
    "entropy_plus_vision": ("H_full", "V_ans_end", "V_thinking_auc"),
    "full": (
        "H_full",
        "H_ans",
        "V_ans_end",
        "V_thinking_auc",
        "V_reengagement",
        "A_bbox_ans_end",
        "rvar_ans_end",
        "length_L",
    ),
    "interaction": ("H_full", "V_thinking_auc", "length_L"),
    "length_only": ("length_L",),
    "joint_length_vision": ("V_thinking_auc", "length_L"),
}
INTERACTION_COLUMNS = ("E_z", "V_z", "E_z*V_z", "L_z")


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class FeatureSpec:
    level: str
    base: tuple[str, ...]

    @classmethod
    def for_level(cls, level: str) -> "FeatureSpec":
        if level not in LADDER:
            raise ValueError(f"unknown ladder level {level!r}; choose from {sorted(LADDER)}")
        return cls(level, LADDER[level])

    @property
    def columns(self) -> tuple[str, ...]:
        return INTERACTION_COLUMNS if self.level == "interaction" else self.base

    def design(self, z: np.ndarray) -> np.ndarray:
        """Map standardised base features to model columns."""
        if self.level != "interaction":
            return z
        e, v, length = z[:, 0], z[:, 1], z[:, 2]
        return np.column_stack([e, v, e * v, length])


def raw_matrix(records: Sequence, names: Sequence[str]) -> np.ndarray:
    """Feature matrix from record attributes; absent values become NaN."""
    out = np.empty((len(records), len(names)))
    for i, r in enumerate(records):
        for j, name in enumerate(names):
            v = getattr(r, name)
            out[i, j] = np.nan if v is None else float(v)
    return out


def labels(records: Sequence) -> np.ndarray:
    return np.array([1.0 if r.correct else 0.0 for r in records])


# --- z-scoring -----------------------------------------------------------

@dataclass(frozen=True)
class ZStats:
    mean: np.ndarray
    sd: np.ndarray


def zscore_fit(X) -> ZStats:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] < 2:
        raise ValueError("z-score statistics need at least 2 rows")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean = np.nanmean(X, axis=0)
        sd = np.nanstd(X, axis=0, ddof=1)
    mean = np.where(np.isnan(mean), 0.0, mean)
    sd = np.where(np.isnan(sd), 0.0, sd)
    if np.any(sd == 0):
        warnings.warn(f"zero-variance feature columns {np.flatnonzero(sd == 0).tolist()} map to 0", RuntimeWarning)
    return ZStats(mean, sd)


def zscore_apply(stats: ZStats, X) -> np.ndarray:
    """Standardise with frozen statistics; missing values land on the mean (0)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    safe_sd = np.where(stats.sd > 0, stats.sd, 1.0)
    Z = (X - stats.mean) / safe_sd
    Z[:, stats.sd == 0] = 0.0
    return np.where(np.isnan(Z), 0.0, Z)


# --- solver ---------------------------------------------------------------

def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _augment(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.column_stack([np.ones(len(X)), X])


def penalized_objective(beta, X, y, C, weights=None) -> np.ndarray:
    """Mean NLL + ||beta[1:]||^2 / (2 C n).  ``beta`` may be batched ``(B, p+1)``."""
    A = _augment(X)
    beta = np.atleast_2d(beta)
    w = np.ones((1, len(y))) if weights is None else np.atleast_2d(weights)
    n = w.sum(axis=1)
    z = beta @ A.T
    nll = (w * (_softplus(z) - y * z)).sum(axis=1) / n
    return nll + (beta[:, 1:] ** 2).sum(axis=1) / (2.0 * C * n)


def penalized_gradient(beta, X, y, C, weights=None) -> np.ndarray:
    A = _augment(X)
    beta = np.atleast_2d(beta)
    w = np.ones((1, len(y))) if weights is None else np.atleast_2d(weights)
    n = w.sum(axis=1, keepdims=True)
    resid = w * (_sigmoid(beta @ A.T) - y)
    grad = resid @ A / n
    grad[:, 1:] += beta[:, 1:] / (C * n)
    return grad


def newton_logistic(X, y, C: float, weights=None, tol: float = 1e-8, max_iter: int = 100):
    """Damped Newton on the penalised mean NLL, batched over weight rows.

    ``weights`` is ``None`` or a ``(B, n)`` array of non-negative row weights
    (bootstrap counts reproduce row resampling exactly).  Returns
    ``(beta, grad_norm, iterations)`` with ``beta`` of shape ``(B, p+1)``.
    """
    if C <= 0:
        raise ValueError("C must be positive")
    y = np.asarray(y, dtype=float)
    A = _augment(X)
    W = np.ones((1, len(y))) if weights is None else np.atleast_2d(np.asarray(weights, dtype=float))
    B, p1 = W.shape[0], A.shape[1]
    n = W.sum(axis=1)
    ridge = np.eye(p1)
    ridge[0, 0] = 0.0

    beta = np.zeros((B, p1))
    f = penalized_objective(beta, X, y, C, W)
    g = penalized_gradient(beta, X, y, C, W)
    gnorm = np.linalg.norm(g, axis=1)
    for it in range(1, max_iter + 1):
        active = gnorm > tol
        if not active.any():
            return beta, gnorm, it - 1
        idx = np.flatnonzero(active)
        Wa, ba = W[idx], beta[idx]
        s = _sigmoid(ba @ A.T)
        curv = Wa * s * (1.0 - s)
        H = np.einsum("bn,ni,nj->bij", curv, A, A, optimize=True) / n[idx, None, None]
        H += ridge[None] / (C * n[idx, None, None])
        step = -np.linalg.solve(H, g[idx][..., None])[..., 0]
        slope = np.einsum("bi,bi->b", g[idx], step)
        t = np.ones(len(idx))
        f_old = f[idx]
        new_beta = ba + step
        f_new = penalized_objective(new_beta, X, y, C, Wa)
        for _ in range(60):
            bad = f_new > f_old + 1e-4 * t * slope + 1e-15 * np.abs(f_old)
            if not bad.any():
                break
            t[bad] *= 0.5
            new_beta[bad] = ba[bad] + t[bad, None] * step[bad]
            f_new[bad] = penalized_objective(new_beta[bad], X, y, C, Wa[bad])
        beta[idx], f[idx] = new_beta, f_new
        g[idx] = penalized_gradient(new_beta, X, y, C, Wa)
        gnorm[idx] = np.linalg.norm(g[idx], axis=1)
    if np.all(gnorm <= tol):
        return beta, gnorm, max_iter
    worst = int(np.argmax(gnorm))
    raise ConvergenceError(
        f"Newton did not converge in {max_iter} iterations: {int((gnorm > tol).sum())}/{B} fits above "
        f"tol={tol:g}, worst gradient norm {gnorm[worst]:.3e} (C={C:g}, n={len(y)})"
    )


# --- models ---------------------------------------------------------------

@dataclass
class ProbeModel:
    coefficients: np.ndarray  # intercept first
    C: float
    spec: FeatureSpec
    zstats: ZStats | None = None
    seed: int | None = None
    converged: bool = True
    nll: float = float("nan")
    grad_norm: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    def coef(self, name: str) -> float:
        return float(self.coefficients[1 + self.spec.columns.index(name)])

    def design_from_raw(self, raw) -> np.ndarray:
        if self.zstats is None:
            raise ValueError("model has no frozen standardisation statistics")
        return self.spec.design(zscore_apply(self.zstats, raw))

    def logit(self, design) -> np.ndarray:
        return _augment(design) @ self.coefficients

    def predict_proba(self, design) -> np.ndarray:
        return _sigmoid(self.logit(design))

    def predict_proba_raw(self, raw) -> np.ndarray:
        return self.predict_proba(self.design_from_raw(raw))

    def to_dict(self) -> dict:
        return {
            "schema_version": PROBE_SCHEMA_VERSION,
            "level": self.spec.level,
            "features": list(self.spec.base),
            "columns": list(self.spec.columns),
            "intercept": self.intercept,
            "coefficients": {c: self.coef(c) for c in self.spec.columns},
            "C": self.C,
            "seed": self.seed,
            "zstats": None
            if self.zstats is None
            else {"mean": self.zstats.mean.tolist(), "sd": self.zstats.sd.tolist()},
            "converged": self.converged,
            "penalized_nll": self.nll,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ProbeModel":
        if d.get("schema_version") != PROBE_SCHEMA_VERSION:
            raise ValueError(f"unsupported probe schema {d.get('schema_version')!r}")
        spec = FeatureSpec(d["level"], tuple(d["features"]))
        coefs = np.array([d["intercept"]] + [d["coefficients"][c] for c in spec.columns])
        z = d.get("zstats")
        zstats = None if z is None else ZStats(np.array(z["mean"]), np.array(z["sd"]))
        return cls(coefs, d["C"], spec, zstats, d.get("seed"), d.get("converged", True), d.get("penalized_nll", float("nan")))


def _check_labels(y):
    y = np.asarray(y, dtype=float)
    if y.min() == y.max():
        raise ValueError("logistic fit needs at least one example of each class")
    return y


def logistic_fit(X, y, C: float, spec: FeatureSpec | None = None, seed: int | None = None, tol: float = 1e-8) -> ProbeModel:
    """Fit an L2-penalised logistic regression on an already-standardised design."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = _check_labels(y)
    beta, gnorm, iters = newton_logistic(X, y, C, tol=tol)
    if spec is None:
        spec = FeatureSpec("custom", tuple(f"x{i}" for i in range(X.shape[1])))
    nll = float(penalized_objective(beta[0], X, y, C)[0])
    return ProbeModel(beta[0], C, spec, seed=seed, nll=nll, grad_norm=float(gnorm[0]), meta={"iterations": iters})


def mean_nll(p, y) -> float:
    p = np.clip(np.asarray(p, dtype=float), 1e-15, 1 - 1e-15)
    y = np.asarray(y, dtype=float)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def stratified_folds(y, folds: int, seed: int) -> np.ndarray:
    """Fold id per row, classes dealt round-robin after a seeded shuffle."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(y), dtype=int)
    for cls in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == cls))
        fold_of[idx] = np.arange(len(idx)) % folds
    return fold_of


def grid_search_C(X, y, grid: Sequence[float] = DEFAULT_C_GRID, folds: int = 5, seed: int = 0) -> float:
    """C with the lowest mean held-out NLL over stratified folds (ties -> smaller C)."""
    grid = sorted(float(c) for c in grid)
    if not grid:
        raise ValueError("empty C grid")
    if len(grid) == 1:
        return grid[0]
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    fold_of = stratified_folds(y, folds, seed)
    usable = []
    for f in range(folds):
        tr, te = fold_of != f, fold_of == f
        if te.any() and 0 < y[tr].sum() < tr.sum():
            usable.append((tr, te))
    if not usable:
        raise ValueError("every internal fold has a single-class training split")
    scores = []
    for C in grid:
        losses = []
        for tr, te in usable:
            beta, _, _ = newton_logistic(X[tr], y[tr], C)
            losses.append(mean_nll(_sigmoid(_augment(X[te]) @ beta[0]), y[te]))
        scores.append(float(np.mean(losses)))
    best = min(scores)
    for C, s in zip(grid, scores):
        if s <= best + 1e-12 * max(1.0, abs(best)):
            return C
    raise AssertionError("unreachable")


def train_probe(
    records: Sequence,
    level: str,
    grid: Sequence[float] = DEFAULT_C_GRID,
    folds: int = 5,
    seed: int = 0,
) -> ProbeModel:
    """Standardise on these records only, tune C, fit, and freeze the statistics."""
    spec = FeatureSpec.for_level(level)
    raw = raw_matrix(records, spec.base)
    y = _check_labels(labels(records))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        zstats = zscore_fit(raw)
    design = spec.design(zscore_apply(zstats, raw))
    C = grid_search_C(design, y, grid, folds, seed)
    model = logistic_fit(design, y, C, spec, seed)
    model.zstats = zstats
    return model


# --- interaction model ----------------------------------------------------

@dataclass(frozen=True)
class InteractionReport:
    beta_EV: float
    ci: tuple[float, float]
    cell: tuple[str, str]
    n: int
    model: ProbeModel
    bootstrap: int

    @property
    def significant(self) -> bool:
        return not (self.ci[0] <= 0.0 <= self.ci[1])


def fit_interaction(
    records: Sequence,
    C: float = 1.0,
    B: int = 1000,
    level: float = 0.95,
    seed: int = 0,
    cell: tuple[str, str] | None = None,
) -> InteractionReport:
    """Fit the entropy/vision/interaction/length model with in-cell z-scoring.

    The ``B`` bootstrap refits resample rows with replacement (z-statistics are
    kept from the full cell) and are solved as one batched Newton problem.
    """
    spec = FeatureSpec.for_level("interaction")
    raw = raw_matrix(records, spec.base)
    if np.isnan(raw).any():
        raise ValueError("interaction fit needs H_full, V_thinking_auc and length_L on every record")
    y = labels(records)
    if y.min() == y.max() or len(y) < 5:
        raise ValueError(f"degenerate cell {cell}: n={len(y)}, correct={int(y.sum())}")
    zstats = zscore_fit(raw)
    design = spec.design(zscore_apply(zstats, raw))
    model = logistic_fit(design, y, C, spec, seed)
    model.zstats = zstats
    point = model.coef("E_z*V_z")
    if cell is None:
        first = records[0]
        cell = (getattr(first, "model_tag", ""), getattr(first, "dataset_tag", ""))
    if B <= 0:
        return InteractionReport(point, (float("nan"), float("nan")), cell, len(y), model, 0)
    n = len(y)
    counts = np.empty((B, n))
    for b in range(B):
        counts[b] = np.bincount(np.random.default_rng([seed, b]).integers(0, n, n), minlength=n)
    beta, _, _ = newton_logistic(design, y, C, weights=counts)
    col = 1 + spec.columns.index("E_z*V_z")
    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(beta[:, col], [tail, 100.0 - tail])
    return InteractionReport(point, (float(lo), float(hi)), cell, n, model, B)


# --- diagnostics ----------------------------------------------------------

def permutation_importance(model: ProbeModel, raw, y, feature: str, P: int = 20, seed: int = 0) -> float:
    """Mean increase in NLL when one raw feature column is shuffled."""
    raw = np.asarray(raw, dtype=float)
    j = model.spec.base.index(feature)
    base = mean_nll(model.predict_proba_raw(raw), y)
    deltas = []
    for p in range(P):
        shuffled = raw.copy()
        shuffled[:, j] = np.random.default_rng([seed, p]).permutation(shuffled[:, j])
        deltas.append(mean_nll(model.predict_proba_raw(shuffled), y) - base)
    return float(np.mean(deltas))


def sign_consistency(fits: Sequence[ProbeModel], feature: str, zero_tol: float = 1e-10) -> tuple[int, int, int]:
    pos = neg = zero = 0
    for fit in fits:
        c = fit.coef(feature)
        if c > zero_tol:
            pos += 1
        elif c < -zero_tol:
            neg += 1
        else:
            zero += 1
    return pos, neg, zero
