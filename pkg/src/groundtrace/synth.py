"""Seeded synthetic traces and feature tables with planted effects.

Generative model, per sample:

1. latent Gaussian features E (mean token entropy, bits), V (thinking-phase
   engagement area) and L (length); V and L are negatively correlated;
2. the realised features are z-scored over the corpus and the correctness
   label is drawn from ``sigmoid(b0 + bE*E + bV*V + bEV*E*V + bL*L)`` with
   ``b0 = logit(base_accuracy)`` (so ``base_accuracy`` is the accuracy at the
   feature means);
3. the attention trajectory follows the requested pattern, rescaled so its
   trapezoidal thinking area equals the sample's V exactly.

Loop-injected samples run to ``max_tokens`` with a repeated 4-token cycle and
no think-close token; they are excluded from the logit population and always
end up incorrect through the empty-prediction rule.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from groundtrace.entropy import entropy_rows
from groundtrace.grounding import Trajectory, decay_metrics, probe_positions, select_grounding_layers, thinking_auc
from groundtrace.segmentation import classify_termination
from groundtrace.trace_types import (
    POSITIONS,
    AttentionSnapshot,
    GenerationTrace,
    SignalRecord,
    SpanBoundaries,
    TokenRecord,
    VisualTokenMap,
)

PATTERNS = ("sustained_deficit", "crossover", "moderate", "flat")

# (correct-class shape, incorrect-class shape) over the seven positions.
_SHAPES = {
    "sustained_deficit": ((1.0, 0.86, 0.74, 0.64, 0.56, 0.60, 0.42),) * 2,
    "crossover": ((1.0, 0.8, 0.7, 0.6, 0.5, 0.45, 0.2), (1.5, 0.9, 0.6, 0.4, 0.3, 0.3, 0.12)),
    "moderate": ((1.0, 0.9, 0.8, 0.72, 0.66, 0.7, 0.5), (1.05, 0.92, 0.78, 0.69, 0.63, 0.66, 0.46)),
    "flat": ((1.0,) * 7,) * 2,
}

LOOP_CYCLE = (" and", " then", " we", " check")
ANSWER_PREFIX = (" The", " answer", " is", " (")
CHOICES = ("first option", "second option", "third option", "fourth option")
LETTERS = "ABCD"

# Each reasoning token gets an entropy E * (1 + spread * u) with u in [-1, 1].
_TAU_GRID = np.concatenate([[0.0], np.logspace(-4, 2.5, 6000)])


@dataclass(frozen=True, kw_only=True)
class SynthConfig:
    seed: int
    n: int = 200
    base_accuracy: float = 0.6
    entropy_mean: float = 0.45
    entropy_sd: float = 0.12
    v_auc_mean: float = 1.2
    v_auc_sd: float = 0.2
    length_mean: float = 60.0
    length_sd: float = 15.0
    min_length: int = 16
    v_length_corr: float = -0.4
    pattern: str = "sustained_deficit"
    beta_E: float = -0.8
    beta_V: float = 0.8
    beta_EV: float = -0.6
    beta_L: float = -0.1
    loop_rate: float = 0.0
    truncation_rate: float = 0.0
    max_tokens: int = 512
    k: int = 20
    m: int = 16
    n_layers: int = 28
    peak_layer: int = 2
    k_layers: int = 6
    bbox_fraction: float = 0.25
    bbox_valid_rate: float = 1.0
    bbox_boost: float = 3.0
    position_jitter: float = 0.03
    layer_noise: float = 0.08
    token_entropy_spread: float = 0.5
    model_tag: str = "synth"
    dataset_tag: str = "synthetic"

    def __post_init__(self):
        problems = []
        for name in ("base_accuracy", "loop_rate", "truncation_rate", "bbox_fraction", "bbox_valid_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name} must lie in [0, 1]")
        for name in ("entropy_sd", "v_auc_sd", "length_sd"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        if not 0.0 < self.base_accuracy < 1.0:
            problems.append("base_accuracy must lie strictly inside (0, 1) for the logit link")
        if self.loop_rate + self.truncation_rate > 1.0:
            problems.append("loop_rate + truncation_rate exceeds 1")
        if self.pattern not in PATTERNS:
            problems.append(f"pattern must be one of {PATTERNS}")
        if self.pattern == "sustained_deficit" and self.beta_V <= 0:
            problems.append("sustained_deficit needs beta_V > 0 so incorrect samples sit below correct ones")
        if not -1.0 < self.v_length_corr < 1.0:
            problems.append("v_length_corr must lie in (-1, 1)")
        if not 1 <= self.k <= 20:
            problems.append("k must lie in 1..20")
        if self.m < 2 or self.n < 1:
            problems.append("need m >= 2 and n >= 1")
        if self.min_length < len(ANSWER_PREFIX) + 8 or self.max_tokens <= self.min_length + 1:
            problems.append("min_length too small or max_tokens too close to it")
        if not 0 <= self.peak_layer < self.n_layers or not 1 <= self.k_layers <= self.n_layers:
            problems.append("peak_layer / k_layers do not fit n_layers")
        if not 0 <= self.layer_noise < 0.5 or not 0 <= self.position_jitter < 0.3:
            problems.append("noise levels too large")
        if self.entropy_mean <= 0 or self.entropy_mean * (1 + self.token_entropy_spread) >= math.log2(max(self.k, 2)):
            problems.append("entropy_mean out of the range reachable with this k")
        if self.v_auc_mean <= 0 or self.v_auc_mean > self.v_auc_cap:
            problems.append(f"v_auc_mean must lie in (0, {self.v_auc_cap:.3f}] so attention mass stays below 1")
        if problems:
            raise ValueError("infeasible synthetic config: " + "; ".join(problems))

    @property
    def v_auc_cap(self) -> float:
        """Largest engagement area whose trajectory keeps every layer mass below 0.95."""
        peak = max(max(s) / _area(s) for pair in _SHAPES.values() for s in pair)
        return 0.95 / (peak * (1 + self.position_jitter * 3) * (1 + self.layer_noise))

    @property
    def grounding_layers(self) -> list[int]:
        profile = {l: -abs(l - self.peak_layer) for l in range(self.n_layers)}
        return select_grounding_layers(profile, self.k_layers)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SynthConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synth keys: {sorted(unknown)}")
        return cls(**d)


def _area(shape) -> float:
    return thinking_auc(shape[:5])


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _zscore(x: np.ndarray) -> np.ndarray:
    sd = x.std(ddof=1) if len(x) > 1 else 0.0
    return np.zeros_like(x) if sd == 0 else (x - x.mean()) / sd


# --- latent features and labels --------------------------------------------

def _latent(cfg: SynthConfig, n: int, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    z = rng.standard_normal((n, 3))
    r = cfg.v_length_corr
    zE, zV = z[:, 0], z[:, 1]
    zL = r * zV + math.sqrt(1 - r * r) * z[:, 2]
    E_hi = 0.98 * math.log2(max(cfg.k, 2)) / (1 + cfg.token_entropy_spread)
    E = np.clip(cfg.entropy_mean + cfg.entropy_sd * zE, 0.01, E_hi)
    V = np.clip(cfg.v_auc_mean + cfg.v_auc_sd * zV, 0.02, cfg.v_auc_cap)
    L = np.clip(np.rint(cfg.length_mean + cfg.length_sd * zL), cfg.min_length, cfg.max_tokens - 1).astype(int)
    return E, V, L


def planted_logit(cfg: SynthConfig, E, V, L) -> np.ndarray:
    """Entropy, vision, interaction and length logit on z-scores over the supplied population."""
    e, v, l = _zscore(np.asarray(E, float)), _zscore(np.asarray(V, float)), _zscore(np.asarray(L, float))
    b0 = math.log(cfg.base_accuracy / (1 - cfg.base_accuracy))
    return b0 + cfg.beta_E * e + cfg.beta_V * v + cfg.beta_EV * e * v + cfg.beta_L * l


def trajectory_values(cfg: SynthConfig, v_auc: float, correct: bool, rng) -> tuple[float, ...]:
    shape = np.array(_SHAPES[cfg.pattern][0 if correct else 1], dtype=float)
    if cfg.position_jitter > 0:
        shape = shape * (1 + np.clip(cfg.position_jitter * rng.standard_normal(7), -3 * cfg.position_jitter, 3 * cfg.position_jitter))
    return tuple(float(x) for x in shape * (v_auc / _area(shape)))


# --- feature table -------------------------------------------------------------

def generate_feature_table(cfg: SynthConfig) -> list[SignalRecord]:
    """Feature rows (no token-level data) drawn from the planted model.

    Rows are SignalRecords with entropy, the seven-point V trajectory, its
    thinking area, length and the correctness label; bbox fields are absent.
    """
    rng = np.random.default_rng([cfg.seed, 0])
    E, V, L = _latent(cfg, cfg.n, rng)
    p = _sigmoid(planted_logit(cfg, E, V, L))
    y = np.random.default_rng([cfg.seed, 1]).random(cfg.n) < p
    traj_rng = np.random.default_rng([cfg.seed, 2])
    rows = []
    for i in range(cfg.n):
        Vs = trajectory_values(cfg, float(V[i]), bool(y[i]), traj_rng)
        dm = decay_metrics(Trajectory(tuple(range(7)), Vs))
        rows.append(
            SignalRecord(
                id=f"{cfg.dataset_tag}-{i:05d}",
                model_tag=cfg.model_tag,
                dataset_tag=cfg.dataset_tag,
                correct=bool(y[i]),
                H_full=float(E[i]),
                H_ans=None,
                V=Vs,
                A_bbox=None,
                V_thinking_auc=thinking_auc(Vs[:5]),
                A_bbox_thinking_auc=None,
                delta_V=dm.delta_V,
                delta_A_bbox=None,
                rvar_start=None,
                rvar_ans_end=None,
                delta_rvar=None,
                V_reengagement=dm.V_reengagement,
                length_L=int(L[i]),
                termination="normal_stop",
            )
        )
    return rows


def two_task_mixture(n: int = 2000, seed: int = 0, model_tag: str = "synth") -> tuple[SynthConfig, SynthConfig]:
    """A visual-reference task where confident-but-blind is hazardous and a symbolic one where vision is inert."""
    common = dict(n=n, model_tag=model_tag, pattern="moderate", base_accuracy=0.65, beta_E=-0.8, beta_L=-0.1)
    visual = SynthConfig(seed=seed, dataset_tag="visual", beta_V=0.8, beta_EV=-0.6, **common)
    symbolic = SynthConfig(seed=seed + 1, dataset_tag="symbolic", beta_V=0.0, beta_EV=0.1, **common)
    return visual, symbolic


# --- token-level traces ------------------------------------------------------------

def _entropy_table(k: int) -> tuple[np.ndarray, np.ndarray]:
    ranks = np.arange(k, dtype=float)
    H = entropy_rows(-np.outer(_TAU_GRID, ranks))
    # H decreases with tau; np.interp wants increasing abscissae.
    return H[::-1], _TAU_GRID[::-1]


def _token_logprobs(h: np.ndarray, k: int, table) -> np.ndarray:
    H, tau = table
    t = np.interp(h, H, tau)
    logits = -np.outer(t, np.arange(k, dtype=float))
    logits -= logits.max(axis=1, keepdims=True)
    lp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    return np.round(lp, 6)


def _tokens(texts, logprobs) -> tuple[TokenRecord, ...]:
    k = logprobs.shape[1]
    out = []
    for text, row in zip(texts, logprobs):
        labels = [text] + [f"<alt{j}>" for j in range(1, k)]
        out.append(TokenRecord(text, tuple((lab, float(lp)) for lab, lp in zip(labels, row))))
    return tuple(out)


def _bbox(cfg: SynthConfig, rng) -> VisualTokenMap:
    if rng.random() >= cfg.bbox_valid_rate:
        return VisualTokenMap(cfg.m, (), False)
    size = min(cfg.m - 1, max(1, round(cfg.bbox_fraction * cfg.m)))
    start = int(rng.integers(0, cfg.m - size + 1))
    return VisualTokenMap(cfg.m, tuple(range(start, start + size)), True)


def _layer_vector(mass: float, boost: float, visual: VisualTokenMap, rng) -> np.ndarray:
    w = rng.gamma(2.0, 1.0, visual.m)
    if visual.has_valid_bbox:
        w[list(visual.bbox_mask)] *= boost
    return np.round(w * (mass / w.sum()), 10)


def _snapshots(cfg, spans, V, visual, layers, rng, boost_of=None) -> tuple[AttentionSnapshot, ...]:
    idx = probe_positions(spans)
    snaps = []
    for label, t, v in zip(POSITIONS, idx, V):
        eps = rng.uniform(-1, 1, len(layers)) * cfg.layer_noise
        eps -= eps.mean()
        weights = {}
        for layer, e in zip(layers, eps):
            boost = cfg.bbox_boost if boost_of is None else boost_of(layer)
            weights[layer] = _layer_vector(v * (1 + e), boost, visual, rng)
        snaps.append(AttentionSnapshot(label, t, weights))
    return tuple(snaps)


def _sample_kinds(cfg: SynthConfig) -> np.ndarray:
    kinds = np.array(["normal"] * cfg.n, dtype=object)
    order = np.random.default_rng([cfg.seed, 3]).permutation(cfg.n)
    n_loop = round(cfg.loop_rate * cfg.n)
    n_trunc = round(cfg.truncation_rate * cfg.n)
    kinds[order[:n_loop]] = "loop"
    kinds[order[n_loop : n_loop + n_trunc]] = "truncated"
    return kinds


def generate_corpus(cfg: SynthConfig) -> list[GenerationTrace]:
    """Full traces realising the planted model; ``meta`` records what was injected."""
    kinds = _sample_kinds(cfg)
    E, V, L = _latent(cfg, cfg.n, np.random.default_rng([cfg.seed, 0]))
    L = np.where(kinds == "normal", L, cfg.max_tokens)
    table = _entropy_table(cfg.k)
    layers = cfg.grounding_layers
    n_ans = len(ANSWER_PREFIX) + 2

    # Token texts and entropies first; answer structure does not depend on the label.
    drafts = []
    for i in range(cfg.n):
        rng = np.random.default_rng([cfg.seed, 4, i])
        h = E[i] * (1 + cfg.token_entropy_spread * rng.uniform(-1, 1, int(L[i])))
        lp = _token_logprobs(h, cfg.k, table)
        if kinds[i] == "loop":
            prefix = [f" w{rng.integers(0, 10000)}" for _ in range(6)]
            body = [LOOP_CYCLE[j % 4] for j in range(int(L[i]) - len(prefix))]
            texts = prefix + body
        elif kinds[i] == "truncated":
            texts = [f" w{rng.integers(0, 100000)}" for _ in range(int(L[i]))]
        else:
            texts = [f" w{rng.integers(0, 10000)}" for _ in range(int(L[i]) - n_ans - 1)]
        drafts.append((rng, texts, lp))

    H_full = np.array([float(entropy_rows(lp).mean()) for _, _, lp in drafts])
    normal = kinds == "normal"
    y = np.zeros(cfg.n, dtype=bool)
    if normal.any():
        p = _sigmoid(planted_logit(cfg, H_full[normal], V[normal], L[normal]))
        y[normal] = np.random.default_rng([cfg.seed, 1]).random(int(normal.sum())) < p

    traces = []
    for i, (rng, texts, lp) in enumerate(drafts):
        gt = LETTERS[int(rng.integers(0, 4))]
        if kinds[i] == "normal":
            pred = gt if y[i] else LETTERS[(LETTERS.index(gt) + 1 + int(rng.integers(0, 3))) % 4]
            R = len(texts)
            answer = list(ANSWER_PREFIX) + [pred, ")"]
            all_texts = texts + ["</think>"] + answer
            spans = SpanBoundaries(0, R - 1, R + 1, len(all_texts) - 1, True)
            reasoning, answer_text = "".join(texts), "".join(answer)
            full = "<think>" + reasoning + "</think>" + answer_text
        else:
            all_texts = texts
            Lg = len(texts)
            spans = SpanBoundaries(0, Lg - 1, Lg - 1, Lg - 1, False)
            reasoning, answer_text = "".join(texts), ""
            full = "<think>" + reasoning
        visual = _bbox(cfg, rng)
        Vs = trajectory_values(cfg, float(V[i]), bool(y[i]), rng)
        traces.append(
            GenerationTrace(
                id=f"{cfg.dataset_tag}-{i:05d}",
                model_tag=cfg.model_tag,
                dataset_tag=cfg.dataset_tag,
                tokens=_tokens(all_texts, lp),
                spans=spans,
                termination=classify_termination(all_texts, full, kinds[i] != "normal"),
                parser_mode="inline_think_tags",
                full_text=full,
                reasoning_text=reasoning.strip(),
                answer_text=answer_text.strip(),
                snapshots=_snapshots(cfg, spans, Vs, visual, layers, rng),
                visual=visual,
                question=f"Synthetic question {i}",
                choices=CHOICES,
                ground_truth=gt,
                reached_max_tokens=kinds[i] != "normal",
                meta={
                    "injected_loop": kinds[i] == "loop",
                    "injected_truncation": kinds[i] == "truncated",
                    "planted_correct": bool(y[i]),
                    "planted_V_thinking_auc": float(V[i]),
                },
            )
        )
    return traces


def corpus_header(cfg: SynthConfig) -> dict:
    return {"k": cfg.k, "model_tag": cfg.model_tag, "dataset_tag": cfg.dataset_tag, "grounding_layers": cfg.grounding_layers}


def generate_calibration(
    n: int = 48,
    n_layers: int = 28,
    peak_layer: int = 2,
    m: int = 64,
    seed: int = 0,
    strength: float = 2.5,
    width: float = 3.0,
    model_tag: str = "synth",
) -> list[GenerationTrace]:
    """Short traces whose bbox attention contrast peaks at ``peak_layer``.

    Every snapshot carries all ``n_layers`` layers; the contrast between bbox
    and background tokens is ``1 + strength * exp(-(l - peak)^2 / (2 width^2))``.
    """
    cfg = SynthConfig(
        seed=seed, n=n, m=m, n_layers=n_layers, peak_layer=peak_layer, model_tag=model_tag,
        dataset_tag="calibration", pattern="flat", min_length=16, length_mean=16, length_sd=1.0,
    )
    table = _entropy_table(cfg.k)

    def boost_of(layer):
        return 1.0 + strength * math.exp(-((layer - peak_layer) ** 2) / (2 * width**2))

    traces = []
    for i in range(n):
        rng = np.random.default_rng([seed, 5, i])
        texts = [f" w{rng.integers(0, 10000)}" for _ in range(9)] + ["</think>"] + list(ANSWER_PREFIX) + ["A", ")"]
        lp = _token_logprobs(np.full(len(texts), 0.3), cfg.k, table)
        spans = SpanBoundaries(0, 8, 10, len(texts) - 1, True)
        visual = _bbox(cfg, rng)
        V = (float(rng.uniform(0.2, 0.5)),) * 7
        reasoning, answer = "".join(texts[:9]), "".join(texts[10:])
        traces.append(
            GenerationTrace(
                id=f"calib-{i:04d}",
                model_tag=model_tag,
                dataset_tag="calibration",
                tokens=_tokens(texts, lp),
                spans=spans,
                termination="normal_stop",
                parser_mode="inline_think_tags",
                full_text="<think>" + reasoning + "</think>" + answer,
                reasoning_text=reasoning.strip(),
                answer_text=answer.strip(),
                snapshots=_snapshots(cfg, spans, V, visual, list(range(n_layers)), rng, boost_of),
                visual=visual,
                choices=CHOICES,
                ground_truth="A",
                reached_max_tokens=False,
            )
        )
    return traces


FIXTURE_CONFIG = SynthConfig(
    seed=20240601,
    n=40,
    length_mean=28,
    length_sd=8,
    min_length=16,
    max_tokens=160,
    k=8,
    loop_rate=0.1,
    m=12,
    pattern="sustained_deficit",
    dataset_tag="fixture",
)
