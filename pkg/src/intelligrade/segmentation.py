"""Label propagation onto segments and segment-to-utterance aggregation.

Every segment of an utterance carries the utterance's label (derived from
its speaker's rating); at inference the per-segment class distributions
are averaged and the argmax of the mean decides the utterance class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import map_task
from .errors import IntegrityError
from .validation import check_distribution

# Ties in the aggregated argmax resolve to the lowest class index
# (least severe); np.argmax implements exactly that.


@dataclass(frozen=True)
class LabeledSegment:
    patch: np.ndarray
    label: int
    utterance_id: str
    speaker_id: str
    segment_index: int


def propagate_labels(utterance, patches, rating, task):
    """Attach the speaker's mapped rating to every patch of an utterance."""
    if rating is None:
        raise IntegrityError(f"no rating for speaker {utterance.speaker_id!r}")
    label = map_task(rating, task)
    return [
        LabeledSegment(
            patch=p.patch,
            label=label,
            utterance_id=utterance.utterance_id,
            speaker_id=utterance.speaker_id,
            segment_index=p.segment_index,
        )
        for p in patches
    ]


def aggregate(segment_distributions):
    """Mean of per-segment distributions and the resulting class.

    Returns (mean distribution, predicted class); ties break toward the
    lowest class index.
    """
    dists = list(segment_distributions)
    if not dists:
        raise ValueError("cannot aggregate an empty list of distributions")
    validated = [check_distribution(d, name=f"distribution {i}") for i, d in enumerate(dists)]
    sizes = {v.size for v in validated}
    if len(sizes) != 1:
        raise ValueError(f"mixed class counts in aggregation: {sorted(sizes)}")
    mean = np.mean(np.stack(validated), axis=0)
    return mean, int(np.argmax(mean))


def segment_class_frequencies(segments, n_classes=None):
    """Per-class counts over segments (not utterances, not speakers)."""
    labels = [s.label if isinstance(s, LabeledSegment) else int(s) for s in segments]
    if n_classes is None:
        n_classes = max(labels) + 1 if labels else 0
    counts = np.zeros(n_classes, dtype=np.int64)
    for label in labels:
        if not 0 <= label < n_classes:
            raise ValueError(f"segment label {label} outside 0..{n_classes - 1}")
        counts[label] += 1
    return counts
