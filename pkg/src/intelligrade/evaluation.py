"""Metrics and report generation.

Mean one-vs-rest AUC (Mann-Whitney rank statistic, ties counted 0.5),
support-weighted F1, accuracy, per-intelligibility-group and per-phrase
breakdowns, plus a 2-D PCA export of embedding tables for external
cluster visualization.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EvaluationError, IntegrityError, ProjectionError
from .validation import as_float_array


def _average_ranks(scores):
    """1-based ranks with ties replaced by the group average."""
    n = scores.size
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    is_group_start = np.r_[True, sorted_scores[1:] != sorted_scores[:-1]]
    group_id = np.cumsum(is_group_start) - 1
    starts = np.flatnonzero(is_group_start)
    sizes = np.diff(np.r_[starts, n])
    group_rank = starts + (sizes + 1) / 2.0
    ranks = np.empty(n)
    ranks[order] = group_rank[group_id]
    return ranks


def auc_binary(scores, positive):
    """AUC of ``scores`` ranking positives over negatives; ties count 0.5."""
    scores = as_float_array(scores, name="scores", ndim=1)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("AUC needs at least one positive and one negative")
    ranks = _average_ranks(scores)
    rank_sum = ranks[positive].sum()
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc_ovr(probs, labels):
    """Per-class one-vs-rest AUC and the mean over computable classes.

    A class with no positive or no negative example is skipped and
    reported as None; if no class is computable the evaluation fails.
    """
    probs = as_float_array(probs, name="probs", ndim=2)
    labels = np.asarray(labels)
    if labels.shape != (probs.shape[0],):
        raise ValueError("labels must align with probability rows")
    per_class = []
    computable = []
    for c in range(probs.shape[1]):
        positive = labels == c
        if positive.any() and (~positive).any():
            value = auc_binary(probs[:, c], positive)
            per_class.append(value)
            computable.append(value)
        else:
            per_class.append(None)
    if not computable:
        raise EvaluationError("no class has both positives and negatives")
    return per_class, float(np.mean(computable))


def accuracy(preds, labels):
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ValueError("preds and labels must be equal-length 1-D arrays")
    if preds.size == 0:
        raise EvaluationError("cannot score an empty prediction set")
    return float(np.mean(preds == labels))


def f1_weighted(preds, labels, n_classes=None):
    """Support-weighted mean of per-class F1.

    Precision/recall with an empty denominator count as 0; classes with
    zero true instances carry zero weight and drop out of the mean.
    """
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ValueError("preds and labels must be equal-length 1-D arrays")
    if preds.size == 0:
        raise EvaluationError("cannot score an empty prediction set")
    if n_classes is None:
        n_classes = int(max(preds.max(), labels.max())) + 1
    support = np.bincount(labels, minlength=n_classes).astype(np.float64)
    predicted = np.bincount(preds, minlength=n_classes).astype(np.float64)
    true_pos = np.bincount(labels[preds == labels], minlength=n_classes).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, true_pos / predicted, 0.0)
        recall = np.where(support > 0, true_pos / support, 0.0)
        pr_sum = precision + recall
        f1 = np.where(pr_sum > 0, 2.0 * precision * recall / np.where(pr_sum > 0, pr_sum, 1.0), 0.0)
    if support.sum() == 0:
        raise EvaluationError("no class has support")
    return float(np.sum(support * f1) / support.sum())


def group_breakdown(preds, labels, ratings):
    """Accuracy and F1 per original 5-point rating group for a binary task.

    Each group is homogeneous in its true task label, so its F1 (with the
    group's own label as the positive class) reduces to 2a/(1+a).
    """
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    ratings = np.asarray(ratings)
    if not (preds.shape == labels.shape == ratings.shape):
        raise ValueError("preds, labels and ratings must align")
    out = {}
    for rating in sorted(set(ratings.tolist())):
        members = ratings == rating
        group_labels = labels[members]
        if group_labels.size == 0:
            continue
        if group_labels.min() != group_labels.max():
            raise IntegrityError(f"rating group {rating} has mixed task labels")
        positive = int(group_labels[0])
        group_preds = preds[members]
        true_pos = int(np.sum(group_preds == positive))
        acc = true_pos / group_preds.size
        # All group members are positive: precision is 1 when anything is
        # predicted positive, recall equals accuracy.
        precision = 1.0 if true_pos > 0 else 0.0
        recall = acc
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        out[int(rating)] = {"accuracy": acc, "f1": f1, "count": int(group_preds.size)}
    return out


def phrase_breakdown(probs, preds, labels, phrase_ids):
    """Metrics on each phrase's utterance subset, ranked by AUC.

    AUC is omitted (None) for phrases whose subset has a single class.
    """
    probs = as_float_array(probs, name="probs", ndim=2)
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    phrase_ids = np.asarray(phrase_ids)
    if not (preds.shape == labels.shape == phrase_ids.shape):
        raise ValueError("preds, labels and phrase_ids must align")
    per_phrase = {}
    for phrase in sorted(set(phrase_ids.tolist())):
        members = phrase_ids == phrase
        subset_labels = labels[members]
        try:
            _, mean_auc = auc_ovr(probs[members], subset_labels)
        except EvaluationError:
            mean_auc = None
        per_phrase[int(phrase)] = {
            "auc": mean_auc,
            "f1": f1_weighted(preds[members], subset_labels, n_classes=probs.shape[1]),
            "accuracy": accuracy(preds[members], subset_labels),
            "count": int(members.sum()),
        }
    ranking = sorted(
        per_phrase,
        key=lambda p: (per_phrase[p]["auc"] is None, -(per_phrase[p]["auc"] or 0.0), p),
    )
    return per_phrase, ranking


def pca2(X):
    """Top-2 principal components of centered rows.

    Returns (coords (n, 2), components (2, D), explained variance (2,)).
    Sign convention: the first nonzero loading of each component is
    positive.
    """
    X = as_float_array(X, name="X", ndim=2)
    if X.shape[0] < 3:
        raise ProjectionError(f"projection needs at least 3 points, got {X.shape[0]}")
    centered = X - X.mean(axis=0)
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2].copy()
    if components.shape[0] < 2:  # single-feature input
        components = np.vstack([components, np.zeros_like(components[0])])
        singular = np.r_[singular, 0.0]
    for row in components:
        nonzero = np.flatnonzero(np.abs(row) > 1e-12)
        if nonzero.size and row[nonzero[0]] < 0:
            row *= -1.0
    coords = centered @ components.T
    explained = (singular[:2] ** 2) / (X.shape[0] - 1)
    return coords, components, explained


def export_projection(table, ratings_by_utterance, phrase_by_utterance, csv_path, raw_path=None):
    """Write 2-D PCA coordinates (CSV) and the raw vectors (JSONL).

    The raw export feeds external cluster tools; the CSV carries
    utterance_id, x, y, rating, phrase_id.
    """
    ids = table.ids()
    coords, _, _ = pca2(table.matrix(ids))
    rows = []
    for utterance_id, (x, y) in zip(ids, coords):
        rows.append({
            "utterance_id": utterance_id,
            "x": float(x),
            "y": float(y),
            "rating": ratings_by_utterance.get(utterance_id),
            "phrase_id": phrase_by_utterance.get(utterance_id),
        })
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["utterance_id", "x", "y", "rating", "phrase_id"])
        writer.writeheader()
        writer.writerows(rows)
    if raw_path is not None:
        from .embeddings import write_embeddings

        write_embeddings(raw_path, table)
    return rows


@dataclass
class EvalReport:
    """Utterance-level evaluation for one task."""

    task_id: str
    overall: dict
    per_class_auc: list
    counts: dict
    per_group: dict | None = None
    per_phrase: dict | None = None
    phrase_ranking: list = field(default_factory=list)

    def to_dict(self):
        out = {
            "task_id": self.task_id,
            "overall": self.overall,
            "per_class_auc": self.per_class_auc,
            "counts": self.counts,
        }
        if self.per_group is not None:
            out["per_group"] = {str(k): v for k, v in sorted(self.per_group.items())}
        if self.per_phrase is not None:
            out["per_phrase"] = {str(k): v for k, v in sorted(self.per_phrase.items())}
            out["phrase_ranking"] = self.phrase_ranking
        return out


def build_report(task, probs, labels, ratings=None, phrase_ids=None):
    """Assemble an :class:`EvalReport` from utterance-level outputs.

    The per-group breakdown is only meaningful for binary tasks and needs
    the original 5-point ratings; the per-phrase breakdown needs phrase
    ids.  Both are skipped when their inputs are absent.
    """
    probs = as_float_array(probs, name="probs", ndim=2)
    labels = np.asarray(labels)
    if probs.shape[1] != task.n_classes:
        raise ValueError(f"probs have {probs.shape[1]} classes, task has {task.n_classes}")
    preds = np.argmax(probs, axis=1)
    per_class, mean_auc = auc_ovr(probs, labels)
    report = EvalReport(
        task_id=task.task_id,
        overall={
            "mean_auc": mean_auc,
            "f1": f1_weighted(preds, labels, n_classes=task.n_classes),
            "accuracy": accuracy(preds, labels),
        },
        per_class_auc=per_class,
        counts={
            "n_utterances": int(labels.size),
            "per_class": np.bincount(labels, minlength=task.n_classes).tolist(),
        },
    )
    if ratings is not None and task.n_classes == 2:
        report.per_group = group_breakdown(preds, labels, ratings)
    if phrase_ids is not None:
        report.per_phrase, report.phrase_ranking = phrase_breakdown(
            probs, preds, labels, phrase_ids
        )
    return report


def save_report(path, reports, config=None):
    """Write one or more task reports as deterministic JSON (no timestamps)."""
    if isinstance(reports, EvalReport):
        reports = [reports]
    payload = {"config": config or {}, "reports": [r.to_dict() for r in reports]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
