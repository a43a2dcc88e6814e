"""Evaluation metrics: vanilla, propensity-scored, normalized and long-tail task losses.

Per-instance label sets may be given as a :class:`~xproplab.data.SparseDataset`
or as a sequence of integer arrays; scores as a :class:`PredictionMatrix` or a
dense ``(n, m)`` array.  All dataset-level values are means over the evaluated
instances, with skipped instances counted in the returned record.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Optional, Sequence

import numpy as np

from .data import SparseDataset
from .propensity import PropensityAssignment


@dataclass(frozen=True)
class PredictionMatrix:
    """Dense per-instance, per-label real scores."""

    n: int
    m: int
    scores: np.ndarray

    def __post_init__(self):
        if self.scores.shape != (self.n, self.m):
            raise ValueError("scores must have shape (n, m)")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")


@dataclass(frozen=True)
class MetricValue:
    name: str
    k: Optional[int]
    value: float
    n_evaluated: int
    skipped: int = 0
    per_instance: Optional[np.ndarray] = None

    def __float__(self):
        return float(self.value)


def _as_scores(scores) -> np.ndarray:
    if isinstance(scores, PredictionMatrix):
        return scores.scores
    return np.asarray(scores, dtype=np.float64)


def _as_label_sets(labels) -> list:
    if isinstance(labels, SparseDataset):
        return list(labels.labels)
    return [np.asarray(l, dtype=np.int64) for l in labels]


def top_k(scores, k: int) -> np.ndarray:
    """Indices of the k largest scores, descending; ties broken by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 1 <= k <= len(scores):
        raise ValueError("k must satisfy 1 <= k <= m")
    # stable sort on -scores keeps ascending index order within ties
    return np.argsort(-scores, kind="stable")[:k]


def _top_k_matrix(scores: np.ndarray, k: int) -> np.ndarray:
    if not 1 <= k <= scores.shape[1]:
        raise ValueError("k must satisfy 1 <= k <= m")
    return np.argsort(-scores, axis=1, kind="stable")[:, :k]


def _gain_vector(labels, m: int, weights=None) -> np.ndarray:
    g = np.zeros(m)
    g[labels] = 1.0 if weights is None else weights[labels]
    return g


def precision_at_k(labels, scores, k: int) -> MetricValue:
    labels = _as_label_sets(labels)
    scores = _as_scores(scores)
    tops = _top_k_matrix(scores, k)
    per = np.array([np.isin(tops[i], labels[i]).sum() / k for i in range(len(labels))])
    return MetricValue("P", k, float(per.mean()), len(per), 0, per)


def recall_at_k(labels, scores, k: int) -> MetricValue:
    """Instances without positives are skipped (the formula divides by their count)."""
    labels = _as_label_sets(labels)
    scores = _as_scores(scores)
    tops = _top_k_matrix(scores, k)
    per = []
    skipped = 0
    for i, lab in enumerate(labels):
        if len(lab) == 0:
            skipped += 1
            continue
        per.append(np.isin(tops[i], lab).sum() / len(lab))
    if not per:
        raise ValueError("no instance has a positive label")
    per = np.array(per)
    return MetricValue("R", k, float(per.mean()), len(per), skipped, per)


def _ndcg_denominator(k: int) -> float:
    return float(np.sum(1.0 / np.log(np.arange(1, k + 1) + 1.0)))


def ndcg_at_k(labels, scores, k: int) -> MetricValue:
    """Gain 1/ln(rank+1) per hit, against the fixed denominator sum_{j<=k} 1/ln(j+1)."""
    labels = _as_label_sets(labels)
    scores = _as_scores(scores)
    tops = _top_k_matrix(scores, k)
    denom = _ndcg_denominator(k)
    ranks = np.arange(1, k + 1)
    discounts = 1.0 / np.log(ranks + 1.0)
    per = np.array([
        float((np.isin(tops[i], labels[i]) * discounts).sum()) / denom
        for i in range(len(labels))
    ])
    return MetricValue("nDCG", k, float(per.mean()), len(per), 0, per)


def _inverse_p(p: PropensityAssignment) -> np.ndarray:
    return 1.0 / p.p


def ps_precision_at_k(observed_labels, scores, k: int,
                      p: PropensityAssignment) -> MetricValue:
    labels = _as_label_sets(observed_labels)
    scores = _as_scores(scores)
    tops = _top_k_matrix(scores, k)
    inv = _inverse_p(p)
    per = np.empty(len(labels))
    for i, lab in enumerate(labels):
        hit = tops[i][np.isin(tops[i], lab)]
        per[i] = inv[hit].sum() / k
    return MetricValue("PSP", k, float(per.mean()), len(per), 0, per)


def ps_recall_at_k(observed_labels, scores, k: int,
                   p: PropensityAssignment) -> MetricValue:
    """Divides by the observed positive count, which stands in for the unknown
    number of truly relevant labels; instances with no observed positive are skipped."""
    labels = _as_label_sets(observed_labels)
    scores = _as_scores(scores)
    tops = _top_k_matrix(scores, k)
    inv = _inverse_p(p)
    per = []
    skipped = 0
    for i, lab in enumerate(labels):
        if len(lab) == 0:
            skipped += 1
            continue
        hit = tops[i][np.isin(tops[i], lab)]
        per.append(inv[hit].sum() / len(lab))
    if not per:
        raise ValueError("no instance has an observed positive label")
    per = np.array(per)
    return MetricValue("PSR", k, float(per.mean()), len(per), skipped, per)


def ps_ndcg_at_k(observed_labels, scores, k: int,
                 p: PropensityAssignment) -> MetricValue:
    labels = _as_label_sets(observed_labels)
    scores = _as_scores(scores)
    tops = _top_k_matrix(scores, k)
    inv = _inverse_p(p)
    denom = _ndcg_denominator(k)
    discounts = 1.0 / np.log(np.arange(1, k + 1) + 1.0)
    per = np.empty(len(labels))
    for i, lab in enumerate(labels):
        hits = np.isin(tops[i], lab)
        per[i] = float((hits * discounts * inv[tops[i]]).sum()) / denom
    return MetricValue("PSnDCG", k, float(per.mean()), len(per), 0, per)


def normalized_psp_at_k(observed_labels, scores, k: int,
                        p: PropensityAssignment) -> MetricValue:
    """PSP@k divided by the best achievable PSP@k on the same observed labels."""
    labels = _as_label_sets(observed_labels)
    scores = _as_scores(scores)
    tops = _top_k_matrix(scores, k)
    inv = _inverse_p(p)
    num = 0.0
    den = 0.0
    for i, lab in enumerate(labels):
        if len(lab) == 0:
            continue
        hit = tops[i][np.isin(tops[i], lab)]
        num += inv[hit].sum() / k
        best = np.sort(inv[lab])[::-1][:k]
        den += best.sum() / k
    if den == 0.0:
        raise ValueError("normalizer is zero: no instance has an observed positive")
    return MetricValue("NormPSP", k, float(num / den), len(labels), 0, None)


def weighted_precision_at_k(labels, scores, k: int, w) -> MetricValue:
    """P@k with arbitrary non-negative label weights; w = 1/p recovers PSP@k."""
    labels = _as_label_sets(labels)
    scores = _as_scores(scores)
    w = np.asarray(w, dtype=np.float64)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    tops = _top_k_matrix(scores, k)
    per = np.empty(len(labels))
    for i, lab in enumerate(labels):
        hit = tops[i][np.isin(tops[i], lab)]
        per[i] = w[hit].sum() / k
    return MetricValue("WP", k, float(per.mean()), len(per), 0, per)


def binarize_top_k(scores, k: int) -> np.ndarray:
    """0/1 prediction matrix that keeps each instance's top-k scores."""
    scores = _as_scores(scores)
    tops = _top_k_matrix(scores, k)
    out = np.zeros_like(scores)
    np.put_along_axis(out, tops, 1.0, axis=1)
    return out


def macro_f_beta(labels, predictions, beta: float = 1.0,
                 k: Optional[int] = None) -> MetricValue:
    """Macro-averaged F_beta; labels with an all-zero denominator contribute 0.

    ``predictions`` is a binary n x m matrix, or scores when ``k`` is given
    (binarized by per-instance top-k).
    """
    if beta <= 0:
        raise ValueError("beta must be > 0")
    labels = _as_label_sets(labels)
    if k is not None:
        pred = binarize_top_k(predictions, k)
    else:
        pred = np.asarray(predictions, dtype=np.float64)
    n, m = pred.shape
    y = np.zeros((n, m))
    for i, lab in enumerate(labels):
        y[i, lab] = 1.0
    tp = (y * pred).sum(axis=0)
    pos = y.sum(axis=0)
    predicted = pred.sum(axis=0)
    denom = beta ** 2 * pos + predicted
    per_label = np.where(denom > 0, (1 + beta ** 2) * tp / np.where(denom > 0, denom, 1.0), 0.0)
    return MetricValue("macroF", k, float(per_label.mean()), n, 0, None)


def abandonment_at_k(labels, scores, k: int) -> MetricValue:
    """Fraction of instances whose top-k contains no relevant label."""
    labels = _as_label_sets(labels)
    scores = _as_scores(scores)
    tops = _top_k_matrix(scores, k)
    per = np.array([0.0 if np.isin(tops[i], labels[i]).any() else 1.0
                    for i in range(len(labels))])
    return MetricValue("abandonment", k, float(per.mean()), len(per), 0, per)


def coverage_at_k(labels, scores, k: int) -> MetricValue:
    """Fraction of labels with at least one correct positive prediction."""
    labels = _as_label_sets(labels)
    scores = _as_scores(scores)
    tops = _top_k_matrix(scores, k)
    m = scores.shape[1]
    covered = set()
    for i, lab in enumerate(labels):
        covered.update(int(j) for j in tops[i][np.isin(tops[i], lab)])
    return MetricValue("coverage", k, len(covered) / m, len(labels), 0, None)


# --- feasibility oracle for unbiased estimators of non-decomposable losses ---

@dataclass(frozen=True)
class FeasibilityResult:
    feasible: bool
    residual: float
    solution: dict  # observable label vector -> estimator value


def _validate_mask_distribution(dist: dict, m: int) -> None:
    for y, cond in dist.items():
        if len(y) != m or any(v not in (0, 1) for v in y):
            raise ValueError(f"malformed label vector {y}")
        total = 0.0
        for y_obs, prob in cond.items():
            if len(y_obs) != m or any(v not in (0, 1) for v in y_obs):
                raise ValueError(f"malformed observed vector {y_obs}")
            if prob < 0:
                raise ValueError("negative probability mass")
            if any(o > t for o, t in zip(y_obs, y)):
                raise ValueError(f"mass on {y_obs} outside the one-sided support of {y}")
            total += prob
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"conditional distribution for {y} sums to {total}, not 1")


def check_unbiased_estimator_exists(m: int, mask_distributions: Sequence[dict],
                                    target_loss: dict,
                                    residual_tol: float = 1e-9) -> FeasibilityResult:
    """Can any function of the observed labels be an unbiased estimate of the loss?

    Each entry of ``mask_distributions`` maps a true label vector (0/1 tuple)
    to a conditional distribution over observed vectors; ``target_loss`` maps
    each true label vector to the loss of one fixed prediction.  The linear
    system requires the estimator's conditional expectation to equal the loss
    for every degenerate true-label distribution and every supplied missingness
    distribution; it is solved by least squares and declared feasible iff the
    residual is at most ``residual_tol``.
    """
    if m > 3:
        raise ValueError("the brute-force oracle is limited to m <= 3")
    all_y = [tuple(bits) for bits in product((0, 1), repeat=m)]
    for dist in mask_distributions:
        if set(dist) != set(all_y):
            raise ValueError("each distribution must condition on every true label vector")
        _validate_mask_distribution(dist, m)
    if set(target_loss) != set(all_y):
        raise ValueError("target_loss must cover every true label vector")

    observable = sorted({y_obs for dist in mask_distributions
                         for cond in dist.values() for y_obs in cond})
    col = {y_obs: j for j, y_obs in enumerate(observable)}
    rows = []
    rhs = []
    for dist in mask_distributions:
        for y in all_y:
            row = np.zeros(len(observable))
            for y_obs, prob in dist[y].items():
                row[col[y_obs]] += prob
            rows.append(row)
            rhs.append(float(target_loss[y]))
    A = np.array(rows)
    b = np.array(rhs)
    v, *_ = np.linalg.lstsq(A, b, rcond=None)
    residual = float(np.linalg.norm(A @ v - b))
    return FeasibilityResult(feasible=residual <= residual_tol, residual=residual,
                             solution={y_obs: float(v[j]) for y_obs, j in col.items()})


def independent_mask_distribution(p: Sequence[float]) -> dict:
    """Joint missingness distribution when labels go missing independently
    with per-label keep probabilities ``p``."""
    m = len(p)
    dist = {}
    for y in product((0, 1), repeat=m):
        cond = {}
        support = [j for j in range(m) if y[j] == 1]
        for keep in product((0, 1), repeat=len(support)):
            y_obs = list(y)
            prob = 1.0
            for j, kept in zip(support, keep):
                y_obs[j] = kept
                prob *= p[j] if kept else (1.0 - p[j])
            key = tuple(y_obs)
            cond[key] = cond.get(key, 0.0) + prob
        dist[tuple(y)] = cond
    return dist


def exact_observation_distribution(m: int) -> dict:
    """No-noise missingness: the observed vector equals the true vector a.s."""
    return {tuple(y): {tuple(y): 1.0} for y in product((0, 1), repeat=m)}
