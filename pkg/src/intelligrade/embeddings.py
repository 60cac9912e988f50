"""Pooled embeddings: a built-in mel-statistics embedder plus an import path.

External representations (e.g. 12288-d or 2048-d non-semantic embeddings,
640-d recognizer-encoder embeddings) enter through a JSON-lines file, one
record per utterance::

    {"utterance_id": ..., "dim": D, "vector": [...]}          # pooled
    {"utterance_id": ..., "dim": D, "segments": [[...], ...]} # per segment

Per-segment records are average-pooled on load.  The built-in MEL_STATS
embedder is a deterministic 256-d stand-in (per-bin mean/std of log-mel
values and of their frame deltas) that keeps the whole pipeline testable
without any pretrained network.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import dsp
from .errors import FormatError, IntegrityError
from .validation import as_float_array

MEL_STATS_DIM = 256

SOURCE_MEL_STATS = "MEL_STATS"
SOURCE_IMPORT_OTHER = "IMPORT_OTHER"
# Dimensions with a known source convention.
KNOWN_IMPORT_DIMS = {
    12288: "IMPORT_TRILL",
    2048: "IMPORT_TRILL_DISTILLED",
    640: "IMPORT_ASR_ENC",
}

LEVEL_SEGMENT = "SEGMENT"
LEVEL_UTTERANCE = "UTTERANCE"


def pool_time_average(vectors):
    """Element-wise mean of a non-empty list of equal-length vectors."""
    vecs = [as_float_array(v, name=f"vector {i}", ndim=1) for i, v in enumerate(vectors)]
    if not vecs:
        raise ValueError("cannot pool an empty list of vectors")
    dims = {v.size for v in vecs}
    if len(dims) != 1:
        raise ValueError(f"ragged vector dimensions in pooling: {sorted(dims)}")
    return np.mean(np.stack(vecs), axis=0)


def mel_stats_embed(patch):
    """256-d statistics of one 96x64 log-mel patch.

    Per-bin mean and standard deviation over the 96 frames, then the same
    two statistics of the frame-to-frame deltas.
    """
    frames = patch.patch if isinstance(patch, dsp.LogMelPatch) else as_float_array(patch, ndim=2)
    if frames.shape != (dsp.PATCH_FRAMES, dsp.PATCH_BINS):
        raise ValueError(
            f"mel-stats embedding expects a {dsp.PATCH_FRAMES}x{dsp.PATCH_BINS} patch, "
            f"got {frames.shape}"
        )
    deltas = np.diff(frames, axis=0)
    return np.concatenate([
        frames.mean(axis=0),
        frames.std(axis=0),
        deltas.mean(axis=0),
        deltas.std(axis=0),
    ])


def embed_utterance_mel_stats(samples):
    """Per-segment mel-stats embeddings and their pooled mean for a 16 kHz waveform."""
    frames = dsp.log_mel(samples, dsp.FrontendConfig.cnn())
    patches = dsp.make_patches(frames)
    segments = np.stack([mel_stats_embed(p) for p in patches])
    return segments, pool_time_average(segments)


class MelStatsEmbedder(BaseEstimator, TransformerMixin):
    """Stateless transformer from 16 kHz waveforms to pooled 256-d embeddings."""

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        pooled = [embed_utterance_mel_stats(waveform)[1] for waveform in X]
        return np.stack(pooled) if pooled else np.empty((0, MEL_STATS_DIM))


@dataclass
class EmbeddingTable:
    """One pooled vector per utterance, uniform dimension across the table."""

    vectors: dict[str, np.ndarray]
    dim: int
    source: str = SOURCE_IMPORT_OTHER
    segments: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self):
        return len(self.vectors)

    def ids(self):
        return sorted(self.vectors)

    def matrix(self, order=None):
        """Row matrix aligned with ``order`` (default: sorted utterance ids).

        Unknown ids surface here, at join time, as an integrity error.
        """
        ids = list(order) if order is not None else self.ids()
        missing = [u for u in ids if u not in self.vectors]
        if missing:
            raise IntegrityError(f"no embedding for utterances {missing[:5]} "
                                 f"({len(missing)} missing in total)")
        return np.stack([self.vectors[u] for u in ids])


def _source_for_dim(dim):
    return KNOWN_IMPORT_DIMS.get(dim, SOURCE_IMPORT_OTHER)


def import_embeddings(path, expected_dim=None):
    """Load and validate an embedding file into an :class:`EmbeddingTable`."""
    vectors: dict[str, np.ndarray] = {}
    segments: dict[str, np.ndarray] = {}
    dim = expected_dim
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict) or "utterance_id" not in record:
                raise FormatError(f"{path}:{lineno}: expected an object with utterance_id")
            utterance_id = record["utterance_id"]
            declared = record.get("dim")
            if not isinstance(declared, int) or declared <= 0:
                raise FormatError(f"{path}:{lineno}: missing or invalid dim")
            if dim is None:
                dim = declared
            elif declared != dim:
                raise FormatError(
                    f"{path}:{lineno}: dim {declared} differs from expected {dim}"
                )
            if utterance_id in vectors:
                raise IntegrityError(f"{path}:{lineno}: duplicate utterance {utterance_id!r}")
            if "vector" in record:
                vec = as_float_array(record["vector"], name="vector", ndim=1)
                if vec.size != declared:
                    raise FormatError(
                        f"{path}:{lineno}: vector length {vec.size} != declared dim {declared}"
                    )
            elif "segments" in record:
                seg = as_float_array(record["segments"], name="segments", ndim=2)
                if seg.shape[0] == 0 or seg.shape[1] != declared:
                    raise FormatError(
                        f"{path}:{lineno}: segments must be non-empty rows of length {declared}"
                    )
                segments[utterance_id] = seg
                vec = pool_time_average(seg)
            else:
                raise FormatError(f"{path}:{lineno}: record needs 'vector' or 'segments'")
            vectors[utterance_id] = vec
    if not vectors:
        raise FormatError(f"{path}: no embedding records")
    return EmbeddingTable(vectors=vectors, dim=dim, source=_source_for_dim(dim), segments=segments)


def write_embeddings(path, table, include_segments=False):
    """Write a table in the JSON-lines interchange format."""
    with open(path, "w", encoding="utf-8") as fh:
        for utterance_id in table.ids():
            record = {
                "utterance_id": utterance_id,
                "dim": table.dim,
                "vector": [float(v) for v in table.vectors[utterance_id]],
            }
            if include_segments and utterance_id in table.segments:
                record["segments"] = [
                    [float(v) for v in row] for row in table.segments[utterance_id]
                ]
            fh.write(json.dumps(record) + "\n")


def mel_stats_table(utterance_waveforms, keep_segments=False):
    """Build a MEL_STATS table from ``{utterance_id: 16 kHz waveform}`` pairs.

    Accepts any iterable of (utterance_id, waveform) so corpora can stream
    without holding all audio in memory.
    """
    vectors: dict[str, np.ndarray] = {}
    segments: dict[str, np.ndarray] = {}
    items = utterance_waveforms.items() if hasattr(utterance_waveforms, "items") else utterance_waveforms
    for utterance_id, waveform in items:
        if utterance_id in vectors:
            raise IntegrityError(f"duplicate utterance {utterance_id!r}")
        seg, pooled = embed_utterance_mel_stats(waveform)
        vectors[utterance_id] = pooled
        if keep_segments:
            segments[utterance_id] = seg
    if not vectors:
        raise ValueError("no utterances to embed")
    return EmbeddingTable(vectors=vectors, dim=MEL_STATS_DIM, source=SOURCE_MEL_STATS,
                          segments=segments)
