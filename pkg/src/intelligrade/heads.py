"""Classifier heads over pooled embeddings.

Two heads, both sklearn-style estimators:

* :class:`LogisticHead` — multinomial logistic regression, fitted by
  full-batch gradient descent with a backtracking (Armijo) line search on
  the softmax cross-entropy plus an L2 penalty on the weights.  Features
  are standardized inside the model, so predictions are invariant to
  affine feature rescaling applied consistently at fit and predict time.
* :class:`BalancedRandomForest` — Gini-split trees, each grown on a
  class-balanced bootstrap (per class, draw with replacement as many
  samples as the smallest class has), ceil(sqrt(D)) candidate features
  per split, prediction by averaging leaf class distributions.

Checkpoints use the "IGH1" container (embedded JSON config + payload).
"""

from __future__ import annotations

import hashlib
import json
import math
import struct

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .errors import DegenerateDataError, FormatError
from .seeding import subrng
from .validation import as_float_array

HEAD_MAGIC = b"IGH1"

_ARMIJO_C = 1e-4
_MAX_BACKTRACKS = 60


def _standardize_fit(X):
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    scale = np.where(std > 0.0, std, 1.0)  # constant dims untouched
    return mean, scale


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def logistic_objective(W, b, X, y_onehot, l2_lambda):
    """Mean cross-entropy plus (lambda/2)*||W||^2 (bias unpenalized)."""
    log_probs = _log_softmax(X @ W.T + b)
    data_term = -np.mean(np.sum(y_onehot * log_probs, axis=1))
    return data_term + 0.5 * l2_lambda * np.sum(W * W)


def logistic_gradient(W, b, X, y_onehot, l2_lambda):
    n = X.shape[0]
    probs = _softmax(X @ W.T + b)
    delta = probs - y_onehot
    grad_W = delta.T @ X / n + l2_lambda * W
    grad_b = delta.mean(axis=0)
    return grad_W, grad_b


class LogisticHead(BaseEstimator, ClassifierMixin):
    """Multinomial logistic regression over standardized features."""

    def __init__(self, l2_lambda=1e-4, max_iter=10000, grad_tol=1e-6, seed=0):
        self.l2_lambda = l2_lambda
        self.max_iter = max_iter
        self.grad_tol = grad_tol
        self.seed = seed

    def fit(self, X, y):
        X = as_float_array(X, name="X", ndim=2)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ValueError("y must be one label per row of X")
        self.classes_ = np.unique(y)
        n_classes = self.classes_.size
        if n_classes < 2:
            raise DegenerateDataError("need at least 2 classes to fit")
        y_idx = np.searchsorted(self.classes_, y)
        y_onehot = np.zeros((X.shape[0], n_classes))
        y_onehot[np.arange(X.shape[0]), y_idx] = 1.0

        self.mean_, self.scale_ = _standardize_fit(X)
        Xs = (X - self.mean_) / self.scale_

        rng = subrng(self.seed, "logistic-init")
        W = rng.normal(0.0, 1e-2, size=(n_classes, X.shape[1]))
        b = np.zeros(n_classes)

        objective = logistic_objective(W, b, Xs, y_onehot, self.l2_lambda)
        step = 1.0
        n_iter = 0
        converged = False
        for n_iter in range(1, self.max_iter + 1):
            grad_W, grad_b = logistic_gradient(W, b, Xs, y_onehot, self.l2_lambda)
            grad_inf = max(np.abs(grad_W).max(), np.abs(grad_b).max())
            if grad_inf < self.grad_tol:
                converged = True
                n_iter -= 1
                break
            grad_sq = np.sum(grad_W * grad_W) + np.sum(grad_b * grad_b)
            step = min(step * 2.0, 1e8)  # let flat directions take long steps
            accepted = False
            for _ in range(_MAX_BACKTRACKS):
                cand_W = W - step * grad_W
                cand_b = b - step * grad_b
                cand_obj = logistic_objective(cand_W, cand_b, Xs, y_onehot, self.l2_lambda)
                if cand_obj <= objective - _ARMIJO_C * step * grad_sq:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                converged = True  # step underflow: no descent direction left
                break
            W, b, objective = cand_W, cand_b, cand_obj
        self.W_ = W
        self.b_ = b
        self.objective_ = objective
        self.n_iter_ = n_iter
        self.converged_ = converged
        return self

    def decision_logits(self, X):
        check_is_fitted(self, "W_")
        X = as_float_array(X, name="X", ndim=2)
        if X.shape[1] != self.W_.shape[1]:
            raise ValueError(f"expected {self.W_.shape[1]} features, got {X.shape[1]}")
        return (X - self.mean_) / self.scale_ @ self.W_.T + self.b_

    def predict_proba(self, X):
        return _softmax(self.decision_logits(X))

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


def _leaf_distribution(y_idx, n_classes):
    counts = np.bincount(y_idx, minlength=n_classes).astype(np.float64)
    return counts / counts.sum()


def _best_split(X_sub, y_idx, n_classes):
    """Best (column, threshold) among the given candidate columns.

    Returns (score, column, threshold) or None when no column separates
    the node.  Scans sorted column values with cumulative class counts;
    ties resolve to the first candidate in column order.
    """
    m = y_idx.size
    order = np.argsort(X_sub, axis=0, kind="stable")
    values = np.take_along_axis(X_sub, order, axis=0)
    onehot = (y_idx[order][:, :, None] == np.arange(n_classes)).astype(np.float64)
    left_counts = np.cumsum(onehot, axis=0)[:-1]          # (m-1, F, K)
    total = left_counts[-1] + onehot[-1]
    n_left = np.arange(1, m, dtype=np.float64)[:, None]
    n_right = m - n_left
    gini_left = 1.0 - np.sum((left_counts / n_left[:, :, None]) ** 2, axis=2)
    right_counts = total[None, :, :] - left_counts
    gini_right = 1.0 - np.sum((right_counts / n_right[:, :, None]) ** 2, axis=2)
    score = (n_left * gini_left + n_right * gini_right) / m   # (m-1, F)
    valid = values[1:] > values[:-1]
    if not valid.any():
        return None
    score = np.where(valid, score, np.inf)
    flat = int(np.argmin(score))
    row, col = divmod(flat, score.shape[1])
    threshold = 0.5 * (values[row, col] + values[row + 1, col])
    if threshold >= values[row + 1, col]:  # rounding collapsed the midpoint
        threshold = values[row, col]
    return float(score[row, col]), col, float(threshold)


def _grow_tree(X, y_idx, n_classes, rng, max_features, max_depth):
    """CART with Gini splits; nodes stop when pure, too small to split,
    at max depth, or when no sampled feature separates them."""
    features = []
    thresholds = []
    lefts = []
    rights = []
    dists = []

    def new_node():
        features.append(-1)
        thresholds.append(0.0)
        lefts.append(-1)
        rights.append(-1)
        dists.append(None)
        return len(features) - 1

    root = new_node()
    stack = [(root, np.arange(y_idx.size), 0)]
    while stack:
        node, idx, depth = stack.pop()
        y_node = y_idx[idx]
        pure = y_node.min() == y_node.max()
        if pure or idx.size < 2 or (max_depth is not None and depth >= max_depth):
            dists[node] = _leaf_distribution(y_node, n_classes)
            continue
        cand = rng.choice(X.shape[1], size=max_features, replace=False)
        split = _best_split(X[np.ix_(idx, cand)], y_node, n_classes)
        if split is None:
            dists[node] = _leaf_distribution(y_node, n_classes)
            continue
        _, col, threshold = split
        feature = int(cand[col])
        go_left = X[idx, feature] <= threshold
        left_idx, right_idx = idx[go_left], idx[~go_left]
        features[node] = feature
        thresholds[node] = threshold
        left_node, right_node = new_node(), new_node()
        lefts[node], rights[node] = left_node, right_node
        stack.append((right_node, right_idx, depth + 1))
        stack.append((left_node, left_idx, depth + 1))
    return {
        "feature": features,
        "threshold": thresholds,
        "left": lefts,
        "right": rights,
        "dist": [d.tolist() if d is not None else None for d in dists],
    }


def _tree_predict(tree, X):
    feature = np.asarray(tree["feature"])
    threshold = np.asarray(tree["threshold"])
    left = np.asarray(tree["left"])
    right = np.asarray(tree["right"])
    node = np.zeros(X.shape[0], dtype=np.int64)
    active = feature[node] >= 0
    while active.any():
        rows = np.flatnonzero(active)
        cur = node[rows]
        go_left = X[rows, feature[cur]] <= threshold[cur]
        node[rows] = np.where(go_left, left[cur], right[cur])
        active = feature[node] >= 0
    dists = tree["dist"]
    return np.stack([dists[n] for n in node])


class BalancedRandomForest(BaseEstimator, ClassifierMixin):
    """Random forest with a class-balanced bootstrap per tree."""

    def __init__(self, n_trees=200, max_depth=None, max_features=None, seed=0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.max_features = max_features
        self.seed = seed

    def fit(self, X, y):
        X = as_float_array(X, name="X", ndim=2)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ValueError("y must be one label per row of X")
        self.classes_ = np.unique(y)
        n_classes = self.classes_.size
        if n_classes < 2:
            raise DegenerateDataError("need at least 2 classes to fit")
        y_idx = np.searchsorted(self.classes_, y)
        class_members = [np.flatnonzero(y_idx == c) for c in range(n_classes)]
        n_per_class = min(len(members) for members in class_members)
        n_features = X.shape[1]
        max_features = self.max_features or math.ceil(math.sqrt(n_features))
        max_features = min(max_features, n_features)

        self.trees_ = []
        bootstrap_counts = np.zeros((self.n_trees, n_classes), dtype=np.int64)
        for tree_index in range(self.n_trees):
            rng = subrng(self.seed, "tree", tree_index)
            picks = [
                members[rng.integers(0, len(members), size=n_per_class)]
                for members in class_members
            ]
            sample = np.concatenate(picks)
            bootstrap_counts[tree_index] = [len(p) for p in picks]
            self.trees_.append(
                _grow_tree(X[sample], y_idx[sample], n_classes, rng, max_features,
                           self.max_depth)
            )
        self.bootstrap_class_counts_ = bootstrap_counts
        self.max_features_ = max_features
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "trees_")
        X = as_float_array(X, name="X", ndim=2)
        acc = np.zeros((X.shape[0], self.classes_.size))
        for tree in self.trees_:
            acc += _tree_predict(tree, X)
        return acc / len(self.trees_)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def forest_hash(self):
        check_is_fitted(self, "trees_")
        payload = json.dumps(self.trees_, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _write_block(fh, payload: bytes):
    fh.write(struct.pack("<I", len(payload)))
    fh.write(payload)


def _read_block(fh, path):
    header = fh.read(4)
    if len(header) != 4:
        raise FormatError(f"{path}: truncated block header")
    (length,) = struct.unpack("<I", header)
    payload = fh.read(length)
    if len(payload) != length:
        raise FormatError(f"{path}: truncated block payload")
    return payload


def save_head(path, model, task_id=None):
    """Serialize a fitted head into the IGH1 container."""
    check_is_fitted(model, "classes_")
    if isinstance(model, LogisticHead):
        kind = "LOGISTIC"
        payload = {
            "W": model.W_.tolist(),
            "b": model.b_.tolist(),
            "mean": model.mean_.tolist(),
            "scale": model.scale_.tolist(),
            "objective": model.objective_,
            "n_iter": model.n_iter_,
            "converged": model.converged_,
        }
    elif isinstance(model, BalancedRandomForest):
        kind = "FOREST"
        payload = {"trees": model.trees_, "max_features": model.max_features_}
    else:
        raise ValueError(f"cannot serialize {type(model).__name__}")
    config = {
        "kind": kind,
        "task_id": task_id,
        "classes": [int(c) for c in model.classes_],
        "params": model.get_params(),
    }
    with open(path, "wb") as fh:
        fh.write(HEAD_MAGIC)
        _write_block(fh, json.dumps(config, sort_keys=True).encode("utf-8"))
        _write_block(fh, json.dumps(payload, sort_keys=True).encode("utf-8"))


def load_head(path):
    """Load an IGH1 checkpoint; returns (model, task_id)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != HEAD_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        config = json.loads(_read_block(fh, path).decode("utf-8"))
        payload = json.loads(_read_block(fh, path).decode("utf-8"))
    classes = np.asarray(config["classes"])
    if config["kind"] == "LOGISTIC":
        model = LogisticHead(**config["params"])
        model.classes_ = classes
        model.W_ = np.asarray(payload["W"])
        model.b_ = np.asarray(payload["b"])
        model.mean_ = np.asarray(payload["mean"])
        model.scale_ = np.asarray(payload["scale"])
        model.objective_ = payload["objective"]
        model.n_iter_ = payload["n_iter"]
        model.converged_ = payload["converged"]
    elif config["kind"] == "FOREST":
        model = BalancedRandomForest(**config["params"])
        model.classes_ = classes
        model.trees_ = payload["trees"]
        model.max_features_ = payload["max_features"]
        model.bootstrap_class_counts_ = None
    else:
        raise FormatError(f"{path}: unknown head kind {config['kind']!r}")
    return model, config.get("task_id")
