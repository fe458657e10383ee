"""Acquisition strategies over an unlabeled pool.

Scorers map every candidate to a float (higher = acquire sooner) and are
combined with top_b. CoreSet and BatchBALD are inherently batch-aware, so
they expose a select interface instead. All strategies are deterministic
for a fixed context, and all except random/dal are equivariant under
permutations of the candidate array (their randomness is keyed by global
document id rather than by position).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import UnsupportedModelError, ValidationError
from .models import (
    ProbeModel,
    TrainConfig,
    predict_proba,
    predict_proba_mc,
    train_probe,
)

DEFAULT_MC_SAMPLES = 20

# keep chunked joint-entropy buffers around this many float64 entries
_CHUNK_BUDGET = 1 << 24


@dataclass(frozen=True)
class BatchBALDConfig:
    """Joint entropy is enumerated exactly while K**batch stays under
    enumeration_cap, then estimated from num_config_samples sampled label
    configurations."""

    enumeration_cap: int = 1_000_000
    num_config_samples: int = 4000

    def __post_init__(self):
        if self.enumeration_cap < 1:
            raise ValidationError("enumeration_cap must be positive")
        if self.num_config_samples < 1:
            raise ValidationError("num_config_samples must be positive")


@dataclass
class AcquisitionContext:
    """Everything a strategy may look at when scoring one iteration.

    features holds the full-pool matrix in the model's input space;
    dynamic_features is the geometry used by coreset/dal (the same matrix
    for probe-based loops, hidden activations when the loop model is the
    expensive proxy). Both are indexed by global document id.
    """

    model: ProbeModel | None
    features: np.ndarray
    dynamic_features: np.ndarray
    labeled: np.ndarray
    candidates: np.ndarray
    seed: int
    mc_samples: int = DEFAULT_MC_SAMPLES
    batchbald: BatchBALDConfig = field(default_factory=BatchBALDConfig)
    train_config: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        self.labeled = np.asarray(self.labeled, dtype=np.int64)
        self.candidates = np.asarray(self.candidates, dtype=np.int64)
        if self.candidates.size == 0:
            raise ValidationError("candidate set is empty")
        n = self.features.shape[0]
        if self.candidates.min() < 0 or self.candidates.max() >= n:
            raise ValidationError("candidate index out of range")
        if np.intersect1d(self.labeled, self.candidates).size:
            raise ValidationError("candidates overlap the labeled set")
        if len(np.unique(self.candidates)) != len(self.candidates):
            raise ValidationError("duplicate candidate index")


def entropy(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy in nats along the last axis, with 0 log 0 = 0."""
    p = np.asarray(probs, dtype=np.float64)
    plogp = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    # clamp float noise so one-hot rows report exactly 0, never -0.0
    return np.maximum(-plogp.sum(axis=-1), 0.0)


def top_b(scores: np.ndarray, candidates: np.ndarray, b: int):
    """The b best candidates, score descending, ties to the lowest id."""
    scores = np.asarray(scores, dtype=np.float64)
    candidates = np.asarray(candidates, dtype=np.int64)
    if scores.shape != candidates.shape:
        raise ValidationError("scores and candidates must align")
    if not (0 < b <= len(candidates)):
        raise ValidationError(f"b={b} must be in [1, {len(candidates)}]")
    order = np.lexsort((candidates, -scores))[:b]
    return candidates[order], scores[order]


def score_random(ctx: AcquisitionContext) -> np.ndarray:
    """Uniform(0,1) draws from the context seed, one per candidate."""
    rng = np.random.default_rng(ctx.seed)
    return rng.random(len(ctx.candidates))


def _candidate_probs(ctx: AcquisitionContext) -> np.ndarray:
    if ctx.model is None:
        raise ValidationError("this scorer needs a fitted model in the context")
    return predict_proba(ctx.model, ctx.features[ctx.candidates])


def score_max_entropy(ctx: AcquisitionContext) -> np.ndarray:
    return entropy(_candidate_probs(ctx))


def score_variation_ratio(ctx: AcquisitionContext) -> np.ndarray:
    probs = _candidate_probs(ctx)
    return 1.0 - probs.max(axis=1)


def _mc_samples(ctx: AcquisitionContext) -> np.ndarray:
    if ctx.model is None:
        raise ValidationError("this scorer needs a fitted model in the context")
    return predict_proba_mc(
        ctx.model,
        ctx.features[ctx.candidates],
        m=ctx.mc_samples,
        seed=ctx.seed,
        mask_rows=ctx.candidates,
        total_rows=ctx.features.shape[0],
    )


def bald_from_samples(samples: np.ndarray) -> np.ndarray:
    """Mutual information between label and dropout mask, clamped at 0.

    samples has shape (m, n, K): entropy of the mean predictive minus the
    mean per-sample entropy.
    """
    mean_pred = samples.mean(axis=0)
    return np.maximum(entropy(mean_pred) - entropy(samples).mean(axis=0), 0.0)


def score_bald(ctx: AcquisitionContext) -> np.ndarray:
    return bald_from_samples(_mc_samples(ctx))


def score_dal(ctx: AcquisitionContext) -> np.ndarray:
    """Discriminative score: probability a point looks unlabeled.

    Fits a fresh binary logistic head (labeled -> 0, candidate -> 1) on
    the dynamic features every call.
    """
    if ctx.labeled.size == 0:
        raise ValidationError("dal needs a non-empty labeled set")
    rows = np.concatenate([ctx.labeled, ctx.candidates])
    targets = np.concatenate([
        np.zeros(len(ctx.labeled), dtype=np.int64),
        np.ones(len(ctx.candidates), dtype=np.int64),
    ])
    config = dataclasses.replace(ctx.train_config, rng_seed=ctx.seed)
    disc = train_probe(ctx.dynamic_features[rows], targets, 2, config)
    return predict_proba(disc, ctx.dynamic_features[ctx.candidates])[:, 1]


def score_egl(ctx: AcquisitionContext) -> np.ndarray:
    """Expected squared gradient norm of a linear softmax head.

    For cross-entropy on a linear model the per-label squared gradient
    norm is |p - e_y|^2 (|x|^2 + 1); taking the exact expectation over
    y ~ p collapses to (1 - |p|^2)(|x|^2 + 1). Labels are never sampled.
    """
    if ctx.model is None or not ctx.model.is_linear:
        raise UnsupportedModelError(
            "closed-form expected gradient length is defined for linear probes only"
        )
    x = ctx.features[ctx.candidates]
    probs = predict_proba(ctx.model, x)
    sq_norm = (probs * probs).sum(axis=1)
    return (1.0 - sq_norm) * ((x * x).sum(axis=1) + 1.0)


def select_coreset(ctx: AcquisitionContext, b: int):
    """Greedy k-center: repeatedly take the candidate farthest from the
    labeled set plus picks so far. Ties go to the lowest document id.
    Returns (picked ids in pick order, min distance at each pick)."""
    if not (0 < b <= len(ctx.candidates)):
        raise ValidationError(f"b={b} must be in [1, {len(ctx.candidates)}]")
    if ctx.labeled.size == 0:
        raise ValidationError("coreset needs a non-empty labeled set")

    cand = ctx.dynamic_features[ctx.candidates]
    cand_sq = (cand * cand).sum(axis=1)

    def sq_dist_to(center_rows: np.ndarray) -> np.ndarray:
        centers = ctx.dynamic_features[center_rows]
        gram = cand @ centers.T
        d2 = cand_sq[:, None] + (centers * centers).sum(axis=1)[None, :] - 2.0 * gram
        return np.maximum(d2, 0.0).min(axis=1)

    min_d2 = np.full(len(ctx.candidates), np.inf)
    for start in range(0, len(ctx.labeled), 1024):
        block = ctx.labeled[start:start + 1024]
        min_d2 = np.minimum(min_d2, sq_dist_to(block))

    remaining = np.ones(len(ctx.candidates), dtype=bool)
    picked, pick_dists = [], []
    for _ in range(b):
        live = np.flatnonzero(remaining)
        best = min_d2[live].max()
        tie = live[min_d2[live] == best]
        pos = tie[np.argmin(ctx.candidates[tie])]
        picked.append(int(ctx.candidates[pos]))
        pick_dists.append(float(np.sqrt(min_d2[pos])))
        remaining[pos] = False
        new_center = cand[pos]
        d2 = cand_sq + (new_center * new_center).sum() - 2.0 * (cand @ new_center)
        min_d2 = np.minimum(min_d2, np.maximum(d2, 0.0))
    return np.asarray(picked, dtype=np.int64), np.asarray(pick_dists)


def _exact_joint_entropy(ptab: np.ndarray, samples: np.ndarray) -> np.ndarray:
    """H of the joint label distribution of (batch so far, candidate i).

    ptab (m, C) holds each dropout sample's probability of every batch
    configuration; samples is (m, n, K). Chunks candidates to bound the
    (i, C, K) buffer.
    """
    m, C = ptab.shape
    n, K = samples.shape[1], samples.shape[2]
    out = np.empty(n)
    chunk = max(1, _CHUNK_BUDGET // max(1, C * K))
    for start in range(0, n, chunk):
        block = samples[:, start:start + chunk, :]
        joint = np.einsum("mc,mik->ick", ptab, block) / m
        plogp = np.where(joint > 0.0, joint * np.log(np.where(joint > 0.0, joint, 1.0)), 0.0)
        out[start:start + block.shape[1]] = -plogp.sum(axis=(1, 2))
    return out


def _sampled_joint_entropy(
    config_probs: np.ndarray, samples: np.ndarray
) -> np.ndarray:
    """Monte-Carlo estimate of the extended joint entropy.

    config_probs (m, S) holds each dropout sample's probability of S batch
    configurations drawn from the joint itself. The estimator averages
    -sum_k P(k | y_s) log P(y_s, k) over the sampled configurations.
    """
    m, S = config_probs.shape
    n, K = samples.shape[1], samples.shape[2]
    prior = config_probs.mean(axis=0)  # P(y_s)
    prior = np.maximum(prior, 1e-300)
    out = np.empty(n)
    chunk = max(1, _CHUNK_BUDGET // max(1, S * K))
    for start in range(0, n, chunk):
        block = samples[:, start:start + chunk, :]
        ext = np.einsum("ms,mik->isk", config_probs, block) / m  # P(y_s, k)
        safe = np.maximum(ext, 1e-300)
        cond = ext / prior[None, :, None]  # P(k | y_s)
        out[start:start + block.shape[1]] = -(cond * np.log(safe)).sum(axis=2).mean(axis=1)
    return out


def _sample_config_probs(samples: np.ndarray, positions, S: int, rng) -> np.ndarray:
    """Draw S label configurations of the given batch from the joint
    predictive (pick a dropout sample, then sample each member's label
    from it) and return each dropout sample's probability of each
    configuration, shape (m, S)."""
    m, _, K = samples.shape
    js = rng.integers(m, size=S)
    config_probs = np.ones((m, S))
    for pos in positions:
        member = samples[js, pos, :]  # (S, K)
        u = rng.random(S)
        labels = (member.cumsum(axis=1) < u[:, None]).sum(axis=1)
        labels = np.minimum(labels, K - 1)
        config_probs *= samples[:, pos, labels]
    return config_probs


def joint_entropy(samples: np.ndarray, positions, exact: bool = True,
                  num_config_samples: int = 4000, seed: int = 0) -> float:
    """H of the joint label assignment over a fixed batch of candidates.

    positions index into samples' candidate axis. Exact mode enumerates
    all K**len(positions) configurations; sampled mode Monte-Carlo
    estimates the same quantity with num_config_samples draws. Exposed so
    the two estimators can be compared directly.
    """
    samples = np.asarray(samples, dtype=np.float64)
    m = samples.shape[0]
    positions = list(positions)
    if not positions:
        return 0.0
    if exact:
        ptab = np.ones((m, 1))
        for pos in positions:
            ptab = (ptab[:, :, None] * samples[:, pos, :][:, None, :]).reshape(m, -1)
        return float(entropy(ptab.mean(axis=0)))
    rng = np.random.default_rng([seed, 0x6A0B])
    config_probs = _sample_config_probs(samples, positions, num_config_samples, rng)
    prior = np.maximum(config_probs.mean(axis=0), 1e-300)
    return float(-np.log(prior).mean())


def select_batchbald(ctx: AcquisitionContext, b: int):
    """Greedy maximization of the batch mutual information.

    Returns (picked ids in pick order, joint information gain at each
    pick). The first pick coincides with the single-point BALD argmax.
    """
    if not (0 < b <= len(ctx.candidates)):
        raise ValidationError(f"b={b} must be in [1, {len(ctx.candidates)}]")
    samples = _mc_samples(ctx)  # (m, n, K)
    m, n, K = samples.shape
    cond_entropy = entropy(samples).mean(axis=0)  # per-candidate mean H(p_j)

    config_rng = np.random.default_rng([ctx.seed, 0x6A0B])
    remaining = np.ones(n, dtype=bool)
    picked_pos: list[int] = []
    picked, gains = [], []
    ptab = np.ones((m, 1))  # exact joint table, grown per pick
    exact = True

    for t in range(1, b + 1):
        if exact and K ** t > ctx.batchbald.enumeration_cap:
            exact = False
        live = np.flatnonzero(remaining)
        if t == 1:
            joint_scores = bald_from_samples(samples)
        else:
            cond_sum = cond_entropy[picked_pos].sum()
            if exact:
                joint_h = _exact_joint_entropy(ptab, samples[:, live, :])
            else:
                config_probs = _sample_config_probs(
                    samples, picked_pos, ctx.batchbald.num_config_samples, config_rng
                )
                joint_h = _sampled_joint_entropy(config_probs, samples[:, live, :])
            joint_scores = joint_h - (cond_sum + cond_entropy[live])

        best = joint_scores.max()
        tie = np.flatnonzero(joint_scores == best)
        winner = tie[np.argmin(ctx.candidates[live][tie])]
        pos = int(live[winner])
        picked_pos.append(pos)
        picked.append(int(ctx.candidates[pos]))
        gains.append(float(joint_scores[winner]))
        remaining[pos] = False
        if exact:
            ptab = (ptab[:, :, None] * samples[:, pos, :][:, None, :]).reshape(m, -1)
    return np.asarray(picked, dtype=np.int64), np.asarray(gains)


SCORERS = {
    "random": score_random,
    "max_entropy": score_max_entropy,
    "variation_ratio": score_variation_ratio,
    "bald": score_bald,
    "dal": score_dal,
    "egl": score_egl,
}

SELECTORS = {
    "coreset": select_coreset,
    "batchbald": select_batchbald,
}

ACQUISITION_NAMES = (
    "random",
    "max_entropy",
    "variation_ratio",
    "bald",
    "batchbald",
    "dal",
    "coreset",
    "egl",
)


def acquire(name: str, ctx: AcquisitionContext, b: int):
    """Run one named strategy; returns (ids, scores) aligned in pick order."""
    if name in SCORERS:
        scores = SCORERS[name](ctx)
        if not np.isfinite(scores).all():
            raise ValidationError(f"{name} produced a non-finite score")
        return top_b(scores, ctx.candidates, b)
    if name in SELECTORS:
        return SELECTORS[name](ctx, b)
    raise ValidationError(
        f"unknown acquisition strategy {name!r}; known: {', '.join(ACQUISITION_NAMES)}"
    )
