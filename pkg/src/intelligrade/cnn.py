"""Task-trained residual CNN over 96x64 log-mel patches.

The model is a small residual network (stem conv, striding stages, global
average pooling, affine head).  Training follows the segment recipe:
shuffled mini-batches of labeled segments, per-class logistic loss with
each segment weighted inversely to the frequency of its class at the
segment level, Adam(3e-5), and selection of the epoch whose utterance-
level mean one-vs-rest AUC on validation is highest.

Per-class "logistic loss" is read as independent sigmoids with binary
cross-entropy, normalized to a distribution at inference; plain softmax
cross-entropy is available via ``loss="softmax"``.

Checkpoints use the "IGC1" container: magic, embedded JSON config, then
named parameter tensors (name, rank, dims, little-endian f32 data).
Tensor backing is torch; all distributions returned to callers are
float64 numpy arrays summing to 1.
"""

from __future__ import annotations

import copy
import hashlib
import json
import struct
from contextlib import contextmanager

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted
from torch import nn

from .errors import FormatError, TrainingError
from .evaluation import auc_ovr
from .seeding import subrng
from .segmentation import aggregate
from .validation import as_float_array, check_labels

MODEL_MAGIC = b"IGC1"

PATCH_SHAPE = (96, 64)

_ADAM_BETAS = (0.9, 0.999)
_ADAM_EPS = 1e-8
_BN_MOMENTUM = 0.01  # running stats decay 0.99


@contextmanager
def _deterministic_torch(seed=None):
    """Single-threaded, deterministic-algorithm torch scope."""
    prev_threads = torch.get_num_threads()
    prev_det = torch.are_deterministic_algorithms_enabled()
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    if seed is not None:
        torch.manual_seed(seed)
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(prev_det)
        torch.set_num_threads(prev_threads)


class _ResidualBlock(nn.Module):
    def __init__(self, in_channels, out_channels, stride):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_channels, momentum=_BN_MOMENTUM)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels, momentum=_BN_MOMENTUM)
        if stride != 1 or in_channels != out_channels:
            self.project = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_channels, momentum=_BN_MOMENTUM),
            )
        else:
            self.project = nn.Identity()

    def forward(self, x):
        out = torch.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return torch.relu(out + self.project(x))


class ResNetishCnn(nn.Module):
    """Stem conv + striding residual stages + GAP + affine head."""

    def __init__(self, n_classes, stem_channels, blocks_per_stage, channels_per_stage):
        super().__init__()
        if len(blocks_per_stage) != len(channels_per_stage):
            raise ValueError("blocks_per_stage and channels_per_stage must align")
        self.stem = nn.Sequential(
            nn.Conv2d(1, stem_channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(stem_channels, momentum=_BN_MOMENTUM),
            nn.ReLU(),
        )
        stages = []
        in_channels = stem_channels
        for stage, (n_blocks, channels) in enumerate(zip(blocks_per_stage, channels_per_stage)):
            for block in range(n_blocks):
                stride = 2 if (stage > 0 and block == 0) else 1
                stages.append(_ResidualBlock(in_channels, channels, stride))
                in_channels = channels
        self.stages = nn.Sequential(*stages)
        self.head = nn.Linear(in_channels, n_classes)
        # Zero head: a fresh model outputs the uniform distribution.
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x):
        out = self.stages(self.stem(x))
        pooled = out.mean(dim=(2, 3))
        return self.head(pooled)


def class_weights(segment_counts):
    """w_c = N / (K * n_c): inverse-frequency, unit mean per sample.

    Classes without segments get weight 0 (they contribute nothing).
    """
    counts = np.asarray(segment_counts, dtype=np.float64)
    total = counts.sum()
    n_classes = counts.size
    return np.where(counts > 0, total / (n_classes * np.where(counts > 0, counts, 1.0)), 0.0)


def loss_from_logits(logits, labels, weights, mode="sigmoid"):
    """Weighted per-segment loss, averaged over the batch.

    sigmoid: sum over classes of BCE(sigmoid(logit_c), 1[label==c]);
    softmax: cross-entropy.  Each segment's loss is scaled by the weight
    of its class.
    """
    if mode == "sigmoid":
        onehot = torch.zeros_like(logits)
        onehot[torch.arange(logits.shape[0]), labels] = 1.0
        per_class = nn.functional.binary_cross_entropy_with_logits(
            logits, onehot, reduction="none"
        )
        per_segment = per_class.sum(dim=1)
    elif mode == "softmax":
        per_segment = nn.functional.cross_entropy(logits, labels, reduction="none")
    else:
        raise ValueError(f"unknown loss mode {mode!r}")
    return (per_segment * weights[labels]).mean()


def _logits_to_distribution(logits, mode):
    """Float64 simplex outputs from raw logits."""
    z = np.asarray(logits, dtype=np.float64)
    if mode == "sigmoid":
        scores = 1.0 / (1.0 + np.exp(-z))
        return scores / scores.sum(axis=1, keepdims=True)
    shifted = z - z.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


class CnnClassifier(BaseEstimator, ClassifierMixin):
    """Segment-level CNN with utterance-level aggregation.

    ``fit`` consumes labeled segments; optional validation utterances
    (list of per-utterance patch stacks plus labels) drive best-epoch
    selection by mean one-vs-rest AUC.
    """

    def __init__(self, n_classes=2, stem_channels=16, blocks_per_stage=(2, 2, 2),
                 channels_per_stage=(16, 32, 64), learning_rate=3e-5, batch_size=64,
                 epochs=100, seed=0, loss="sigmoid"):
        self.n_classes = n_classes
        self.stem_channels = stem_channels
        self.blocks_per_stage = blocks_per_stage
        self.channels_per_stage = channels_per_stage
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.loss = loss

    def _build(self):
        return ResNetishCnn(self.n_classes, self.stem_channels,
                            tuple(self.blocks_per_stage), tuple(self.channels_per_stage))

    def _validate_patches(self, X):
        X = as_float_array(X, name="patches")
        if X.ndim == 2:
            X = X[None]
        if X.ndim != 3 or X.shape[1:] != PATCH_SHAPE:
            raise ValueError(f"patches must be (n, {PATCH_SHAPE[0]}, {PATCH_SHAPE[1]})")
        return X

    def fit(self, X, y, val_patch_groups=None, val_labels=None):
        X = self._validate_patches(X)
        y = check_labels(y, self.n_classes, name="segment labels")
        if X.shape[0] != y.size or y.size == 0:
            raise ValueError("need one label per training segment")
        if (val_patch_groups is None) != (val_labels is None):
            raise ValueError("validation patches and labels must come together")

        counts = np.bincount(y, minlength=self.n_classes)
        self.class_weights_ = class_weights(counts)
        order_rng = subrng(self.seed, "cnn-batch-order")

        with _deterministic_torch(self.seed):
            model = self._build()
            optimizer = torch.optim.Adam(
                model.parameters(), lr=self.learning_rate, betas=_ADAM_BETAS, eps=_ADAM_EPS
            )
            inputs = torch.from_numpy(X).float().unsqueeze(1)
            targets = torch.from_numpy(y)
            weights = torch.from_numpy(self.class_weights_).float()

            best_state = None
            best_auc = -np.inf
            best_epoch = 0
            history = []
            for epoch in range(1, self.epochs + 1):
                model.train()
                perm = order_rng.permutation(X.shape[0])
                epoch_loss = 0.0
                n_batches = 0
                for start in range(0, X.shape[0], self.batch_size):
                    batch = torch.from_numpy(perm[start:start + self.batch_size])
                    optimizer.zero_grad()
                    logits = model(inputs[batch])
                    loss = loss_from_logits(logits, targets[batch], weights, self.loss)
                    if not torch.isfinite(loss):
                        raise TrainingError(f"non-finite loss at epoch {epoch}")
                    loss.backward()
                    optimizer.step()
                    epoch_loss += float(loss.detach())
                    n_batches += 1
                record = {"epoch": epoch, "train_loss": epoch_loss / max(n_batches, 1)}
                if val_patch_groups is not None:
                    val_auc = self._validation_auc(model, val_patch_groups, val_labels)
                    record["val_auc"] = val_auc
                    if val_auc > best_auc:
                        best_auc = val_auc
                        best_epoch = epoch
                        best_state = copy.deepcopy(model.state_dict())
                history.append(record)
            if best_state is not None:
                model.load_state_dict(best_state)
            model.eval()

        self.model_ = model
        self.classes_ = np.arange(self.n_classes)
        self.history_ = history
        self.best_epoch_ = best_epoch if best_state is not None else len(history)
        self.best_val_auc_ = best_auc if best_state is not None else None
        return self

    def _validation_auc(self, model, patch_groups, labels):
        probs = np.stack([
            aggregate(self._forward_distributions(model, self._validate_patches(group)))[0]
            for group in patch_groups
        ])
        _, mean_auc = auc_ovr(probs, np.asarray(labels))
        return mean_auc

    def _forward_distributions(self, model, X):
        model.eval()
        with _deterministic_torch(), torch.no_grad():
            logits = model(torch.from_numpy(X).float().unsqueeze(1))
        return _logits_to_distribution(logits.numpy(), self.loss)

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return self._forward_distributions(self.model_, self._validate_patches(X))

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def predict_utterance(self, patches):
        """Mean of segment distributions and the aggregated class."""
        return aggregate(self.predict_proba(self._validate_patches(patches)))

    def parameter_hash(self):
        check_is_fitted(self, "model_")
        digest = hashlib.sha256()
        state = self.model_.state_dict()
        for name in sorted(state):
            digest.update(name.encode("utf-8"))
            digest.update(state[name].numpy().astype("<f4").tobytes())
        return digest.hexdigest()


def gradient_dict(model, X, y, weights, mode="sigmoid"):
    """Reverse-mode gradients of the batch loss for every named parameter."""
    model.zero_grad()
    model.train()
    logits = model(torch.as_tensor(X).unsqueeze(1).to(next(model.parameters()).dtype))
    loss = loss_from_logits(logits, torch.as_tensor(y), torch.as_tensor(weights), mode)
    loss.backward()
    return {
        name: param.grad.detach().numpy().copy()
        for name, param in model.named_parameters()
    }


def save_checkpoint(path, clf):
    """Serialize a fitted classifier into the IGC1 container."""
    check_is_fitted(clf, "model_")
    config = dict(clf.get_params())
    config["blocks_per_stage"] = list(config["blocks_per_stage"])
    config["channels_per_stage"] = list(config["channels_per_stage"])
    state = clf.model_.state_dict()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        blob = json.dumps(config, sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(state)))
        for name in sorted(state):
            tensor = state[name].numpy()
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", tensor.ndim))
            for dim in tensor.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(tensor.astype("<f4").tobytes(order="C"))


def load_checkpoint(path):
    """Load an IGC1 checkpoint into a fitted :class:`CnnClassifier`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MODEL_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        (config_len,) = struct.unpack("<I", fh.read(4))
        config = json.loads(fh.read(config_len).decode("utf-8"))
        config["blocks_per_stage"] = tuple(config["blocks_per_stage"])
        config["channels_per_stage"] = tuple(config["channels_per_stage"])
        (n_tensors,) = struct.unpack("<I", fh.read(4))
        tensors = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            count = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(fh.read(4 * count), dtype="<f4")
            if data.size != count:
                raise FormatError(f"{path}: truncated tensor {name!r}")
            tensors[name] = data.reshape(dims)
    clf = CnnClassifier(**config)
    model = clf._build()
    template = model.state_dict()
    if set(template) != set(tensors):
        raise FormatError(f"{path}: parameter names do not match the configured architecture")
    state = {
        name: torch.from_numpy(tensors[name].copy()).to(template[name].dtype)
        for name in template
    }
    model.load_state_dict(state)
    model.eval()
    clf.model_ = model
    clf.classes_ = np.arange(clf.n_classes)
    clf.history_ = []
    clf.best_epoch_ = None
    clf.best_val_auc_ = None
    return clf
