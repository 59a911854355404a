"""Evaluation criteria for replication studies: parameter recovery,
DIF detection rates, MAP classification error, and rank-based AUC."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .em import FitResult
from .errors import UsageError
from .simulate import SimDesign, SimTruth


@dataclass(frozen=True)
class ReplicationRecord:
    """Truth and estimate for one replication, plus the posterior class
    probabilities needed for respondent-level metrics."""

    truth: SimTruth
    estimate: FitResult
    design: SimDesign
    replication_index: int
    class_posterior: np.ndarray

    def __post_init__(self):
        if self.truth.params.n_items != self.estimate.params.n_items:
            raise UsageError("truth/estimate item dimensions disagree")
        post = np.asarray(self.class_posterior, dtype=float)
        if post.shape != (self.truth.class_labels.size, self.estimate.params.n_classes):
            raise UsageError("class_posterior has the wrong shape")
        object.__setattr__(self, "class_posterior", post)


@dataclass(frozen=True)
class AggregateReport:
    """Replication-averaged recovery and classification metrics.

    ``tpr`` is None when the generating model has no DIF items, matching
    the convention that the true positive rate is then not applicable.
    """

    d_bias: np.ndarray
    d_rmse: np.ndarray
    delta_bias: np.ndarray
    delta_rmse: np.ndarray
    pi_bias: float
    pi_rmse: float
    mu1_bias: float
    mu1_rmse: float
    sigma1_bias: float
    sigma1_rmse: float
    tpr: float | None
    fpr: float | None
    classification_error: float
    auc: float
    naive_error: float
    n_reps: int
    roc_points: np.ndarray


def _bias_rmse_1d(errors):
    """Column-wise bias and RMSE of an (n_reps, ...) error array."""
    arr = np.asarray(errors, dtype=float)
    return arr.mean(axis=0), np.sqrt((arr ** 2).mean(axis=0))


def bias_rmse(records) -> dict:
    """Per-parameter bias and RMSE across replications.

    Item parameters are aggregated by item index; structural entries use
    the first focal class after ordering. Returns a dict keyed by
    parameter name with (bias, rmse) values.
    """
    records = list(records)
    if not records:
        raise UsageError("bias_rmse needs at least one record")
    d_err = np.stack([r.estimate.params.d - r.truth.params.d for r in records])
    out = {"d": _bias_rmse_1d(d_err)}
    if records[0].estimate.params.n_focal >= 1 and records[0].truth.params.n_focal >= 1:
        delta_err = np.stack([
            r.estimate.params.delta[:, 0] - r.truth.params.delta[:, 0] for r in records
        ])
        pi_err = np.array([r.estimate.params.nu[1] - r.truth.params.nu[1] for r in records])
        mu_err = np.array([r.estimate.params.mu[1] - r.truth.params.mu[1] for r in records])
        sg_err = np.array([r.estimate.params.sigma[1] - r.truth.params.sigma[1] for r in records])
        out["delta"] = _bias_rmse_1d(delta_err)
        out["pi"] = _bias_rmse_1d(pi_err)
        out["mu1"] = _bias_rmse_1d(mu_err)
        out["sigma1"] = _bias_rmse_1d(sg_err)
    return out


def dif_confusion(estimated_support, true_support, all_pairs):
    """True and false positive rates of DIF detection over (item, class)
    pairs. TPR is None when the true support is empty."""
    est = frozenset(estimated_support)
    true = frozenset(true_support)
    universe = frozenset(all_pairs)
    if not est <= universe or not true <= universe:
        raise UsageError("supports must be subsets of all_pairs")
    tpr = len(est & true) / len(true) if true else None
    negatives = universe - true
    fpr = len(est - true) / len(negatives) if negatives else None
    return tpr, fpr


def map_classify(posterior, true_labels) -> float:
    """MAP classification error with focal labels matched to the truth by
    the error-minimizing permutation (identity when K = 1). Ties in the
    posterior go to the lower class index."""
    post = np.asarray(posterior, dtype=float)
    labels = np.asarray(true_labels)
    if post.ndim != 2 or post.shape[0] != labels.size:
        raise UsageError("posterior shape does not match labels")
    if np.any(np.abs(post.sum(axis=1) - 1.0) > 1e-6):
        raise UsageError("posterior rows must sum to 1")
    assigned = np.argmax(post, axis=1)
    n_focal = post.shape[1] - 1
    if n_focal <= 1:
        return float(np.mean(assigned != labels))
    conf = np.zeros((post.shape[1], post.shape[1]))
    for a, t in zip(assigned, labels):
        conf[a, t] += 1
    best = None
    for perm in permutations(range(1, n_focal + 1)):
        mapping = (0,) + perm
        correct = conf[0, 0] + sum(conf[a, mapping[a]] for a in range(1, n_focal + 1))
        err = 1.0 - correct / labels.size
        best = err if best is None else min(best, err)
    return float(best)


def _average_ranks(x):
    """Ranks 1..n with ties sharing their average rank."""
    order = np.argsort(x, kind="mergesort")
    sorted_x = x[order]
    ranks = np.empty(x.size, dtype=float)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(scores, binary_labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie)."""
    s = np.asarray(scores, dtype=float)
    lab = np.asarray(binary_labels).astype(bool)
    n_pos = int(lab.sum())
    n_neg = lab.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UsageError("both label classes must be present")
    ranks = _average_ranks(s)
    return float((ranks[lab].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_curve(scores, binary_labels) -> np.ndarray:
    """Empirical ROC staircase: (FPR, TPR) rows over the sorted unique
    score thresholds, from (0, 0) to (1, 1)."""
    s = np.asarray(scores, dtype=float)
    lab = np.asarray(binary_labels).astype(bool)
    n_pos = int(lab.sum())
    n_neg = lab.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UsageError("both label classes must be present")
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    lab_sorted = lab[order]
    tp = np.cumsum(lab_sorted)
    fp = np.cumsum(~lab_sorted)
    keep = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    points = np.column_stack([fp[keep] / n_neg, tp[keep] / n_pos])
    return np.vstack([[0.0, 0.0], points])


def focal_scores(class_posterior) -> np.ndarray:
    """Posterior probability of not belonging to the reference class."""
    post = np.asarray(class_posterior, dtype=float)
    return post[:, 1:].sum(axis=1)


def aggregate(records) -> AggregateReport:
    """Build the full report for one design cell from its replications."""
    records = list(records)
    if not records:
        raise UsageError("aggregate needs at least one record")
    recovery = bias_rmse(records)
    J = records[0].truth.params.n_items
    n_focal = records[0].estimate.params.n_focal
    all_pairs = frozenset((j, m) for j in range(J) for m in range(n_focal))
    tprs, fprs, errors, aucs, naives = [], [], [], [], []
    pooled_scores, pooled_labels = [], []
    for r in records:
        tpr, fpr = dif_confusion(frozenset(r.estimate.support),
                                 r.truth.params.support(), all_pairs)
        if tpr is not None:
            tprs.append(tpr)
        if fpr is not None:
            fprs.append(fpr)
        labels = r.truth.class_labels
        errors.append(map_classify(r.class_posterior, labels))
        scores = focal_scores(r.class_posterior)
        is_focal = labels > 0
        aucs.append(auc(scores, is_focal))
        share = float(np.mean(is_focal))
        naives.append(min(share, 1.0 - share))
        pooled_scores.append(scores)
        pooled_labels.append(is_focal)
    roc = roc_curve(np.concatenate(pooled_scores), np.concatenate(pooled_labels))
    db, dr = recovery["d"]
    deltab, deltar = recovery.get("delta", (np.full(J, np.nan), np.full(J, np.nan)))
    pib, pir = recovery.get("pi", (np.nan, np.nan))
    mub, mur = recovery.get("mu1", (np.nan, np.nan))
    sgb, sgr = recovery.get("sigma1", (np.nan, np.nan))
    return AggregateReport(
        d_bias=db, d_rmse=dr, delta_bias=deltab, delta_rmse=deltar,
        pi_bias=float(pib), pi_rmse=float(pir),
        mu1_bias=float(mub), mu1_rmse=float(mur),
        sigma1_bias=float(sgb), sigma1_rmse=float(sgr),
        tpr=float(np.mean(tprs)) if tprs else None,
        fpr=float(np.mean(fprs)) if fprs else None,
        classification_error=float(np.mean(errors)),
        auc=float(np.mean(aucs)),
        naive_error=float(np.mean(naives)),
        n_reps=len(records),
        roc_points=roc,
    )
