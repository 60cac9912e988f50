"""Dataset manifests, intelligibility labels, task mappings, speaker splits.

The on-disk manifest is JSON-lines with two record kinds discriminated by
a ``"kind"`` field::

    {"kind": "utterance", "utterance_id": ..., "speaker_id": ...,
     "phrase_id": ..., "phrase_text": ..., "audio_path": ...}
    {"kind": "rating", "speaker_id": ..., "intelligibility": 0..4}

Utterance records may additionally carry a ``"duration"`` (seconds); when
absent, stages that need audio derive it from the file itself.  Split
files are JSON-lines ``{"speaker_id": ..., "split": "TRAIN"|"VAL"|"TEST"}``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError, IntegrityError
from .seeding import subrng

INTELLIGIBILITY_NAMES = ("TYPICAL", "MILD", "MODERATE", "SEVERE", "PROFOUND")
N_RATINGS = 5
SPLIT_NAMES = ("TRAIN", "VAL", "TEST")


@dataclass(frozen=True)
class Utterance:
    utterance_id: str
    speaker_id: str
    phrase_id: int
    phrase_text: str
    audio_path: str
    duration: float | None = None


@dataclass(frozen=True)
class SpeakerRating:
    speaker_id: str
    intelligibility: int


@dataclass(frozen=True)
class TaskSpec:
    """A total, monotone mapping from the 5-point scale onto task classes."""

    task_id: str
    mapping: tuple[int, ...]
    n_classes: int

    def __post_init__(self):
        if len(self.mapping) != N_RATINGS:
            raise ConfigError(f"task {self.task_id}: mapping must cover all {N_RATINGS} ratings")
        if any(b < a for a, b in zip(self.mapping, self.mapping[1:])):
            raise ConfigError(f"task {self.task_id}: mapping must be monotone non-decreasing")
        if set(self.mapping) != set(range(self.n_classes)):
            raise ConfigError(f"task {self.task_id}: mapping image must be 0..{self.n_classes - 1}")

    def class_members(self, task_class):
        """Ratings that collapse onto ``task_class``."""
        return tuple(r for r, c in enumerate(self.mapping) if c == task_class)


TASKS = {
    "FIVE_CLASS": TaskSpec("FIVE_CLASS", (0, 1, 2, 3, 4), 5),
    "THREE_CLASS": TaskSpec("THREE_CLASS", (0, 1, 2, 2, 2), 3),
    "TWO_MODR": TaskSpec("TWO_MODR", (0, 0, 1, 1, 1), 2),
    "TWO_MILD": TaskSpec("TWO_MILD", (0, 1, 1, 1, 1), 2),
}


def get_task(task_id):
    try:
        return TASKS[task_id]
    except KeyError:
        raise ConfigError(f"unknown task {task_id!r}; expected one of {sorted(TASKS)}") from None


def map_task(rating, task):
    """Map a 5-point rating onto a class of ``task``."""
    if not isinstance(rating, (int, np.integer)) or isinstance(rating, bool):
        raise ValueError(f"rating must be an integer, got {rating!r}")
    if not 0 <= rating < N_RATINGS:
        raise ValueError(f"rating {rating} outside 0..{N_RATINGS - 1}")
    return task.mapping[rating]


def _require(record, key, types, path, lineno):
    if key not in record:
        raise FormatError(f"{path}:{lineno}: missing field {key!r}")
    value = record[key]
    if not isinstance(value, types) or isinstance(value, bool):
        raise FormatError(f"{path}:{lineno}: field {key!r} has wrong type")
    return value


def load_manifest(path):
    """Parse a JSONL manifest into utterances and speaker ratings.

    Raises FormatError (with the line number) on malformed records and
    IntegrityError on duplicate ids, conflicting phrase texts, or
    utterances whose speaker has no rating.
    """
    utterances, ratings = [], []
    seen_utterances = set()
    rating_by_speaker = {}
    phrase_texts = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise FormatError(f"{path}:{lineno}: expected a JSON object")
            kind = record.get("kind")
            if kind == "utterance":
                utt = Utterance(
                    utterance_id=_require(record, "utterance_id", str, path, lineno),
                    speaker_id=_require(record, "speaker_id", str, path, lineno),
                    phrase_id=_require(record, "phrase_id", int, path, lineno),
                    phrase_text=_require(record, "phrase_text", str, path, lineno),
                    audio_path=_require(record, "audio_path", str, path, lineno),
                    duration=record.get("duration"),
                )
                if utt.phrase_id < 1:
                    raise FormatError(f"{path}:{lineno}: phrase_id must be >= 1")
                if utt.duration is not None:
                    if not isinstance(utt.duration, (int, float)) or not utt.duration > 0:
                        raise FormatError(f"{path}:{lineno}: duration must be > 0")
                if utt.utterance_id in seen_utterances:
                    raise IntegrityError(f"duplicate utterance_id {utt.utterance_id!r}")
                known_text = phrase_texts.setdefault(utt.phrase_id, utt.phrase_text)
                if known_text != utt.phrase_text:
                    raise IntegrityError(
                        f"phrase_id {utt.phrase_id} bound to conflicting texts "
                        f"{known_text!r} and {utt.phrase_text!r}"
                    )
                seen_utterances.add(utt.utterance_id)
                utterances.append(utt)
            elif kind == "rating":
                speaker_id = _require(record, "speaker_id", str, path, lineno)
                value = _require(record, "intelligibility", int, path, lineno)
                if not 0 <= value < N_RATINGS:
                    raise FormatError(f"{path}:{lineno}: intelligibility outside 0..{N_RATINGS - 1}")
                if speaker_id in rating_by_speaker:
                    raise IntegrityError(f"duplicate rating for speaker {speaker_id!r}")
                rating_by_speaker[speaker_id] = value
                ratings.append(SpeakerRating(speaker_id, value))
            else:
                raise FormatError(f"{path}:{lineno}: unknown record kind {kind!r}")
    for utt in utterances:
        if utt.speaker_id not in rating_by_speaker:
            raise IntegrityError(
                f"utterance {utt.utterance_id!r} cites speaker {utt.speaker_id!r} with no rating"
            )
    return utterances, ratings


def save_manifest(path, utterances, ratings):
    """Write a manifest readable by :func:`load_manifest`."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in ratings:
            fh.write(json.dumps({"kind": "rating", "speaker_id": r.speaker_id,
                                 "intelligibility": r.intelligibility}) + "\n")
        for u in utterances:
            record = {
                "kind": "utterance",
                "utterance_id": u.utterance_id,
                "speaker_id": u.speaker_id,
                "phrase_id": u.phrase_id,
                "phrase_text": u.phrase_text,
                "audio_path": u.audio_path,
            }
            if u.duration is not None:
                record["duration"] = u.duration
            fh.write(json.dumps(record) + "\n")


def ratings_by_speaker(ratings):
    return {r.speaker_id: r.intelligibility for r in ratings}


def utterance_labels(utterances, ratings, task):
    """Task labels for utterances, propagated from their speaker's rating."""
    by_speaker = ratings if isinstance(ratings, dict) else ratings_by_speaker(ratings)
    labels = []
    for utt in utterances:
        rating = by_speaker.get(utt.speaker_id)
        if rating is None:
            raise IntegrityError(f"no rating for speaker {utt.speaker_id!r}")
        labels.append(map_task(rating, task))
    return np.asarray(labels, dtype=np.int64)


@dataclass(frozen=True)
class SplitAssignment:
    """Speaker-level split map; utterances inherit their speaker's split."""

    assignment: dict[str, str]
    seed: int

    def split_of(self, speaker_id):
        try:
            return self.assignment[speaker_id]
        except KeyError:
            raise IntegrityError(f"speaker {speaker_id!r} not covered by the split") from None

    def members(self, split):
        if split not in SPLIT_NAMES:
            raise ConfigError(f"unknown split {split!r}")
        return tuple(s for s in sorted(self.assignment) if self.assignment[s] == split)

    def counts(self):
        out = {name: 0 for name in SPLIT_NAMES}
        for split in self.assignment.values():
            out[split] += 1
        return out


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def _allocate(group, ratios, rng, assignment):
    order = sorted(group)
    perm = rng.permutation(len(order))
    shuffled = [order[i] for i in perm]
    n = len(shuffled)
    n_train = _round_half_up(ratios[0] * n)
    n_val = _round_half_up(ratios[1] * n)
    if n_train + n_val > n:
        n_val = n - n_train
    for speaker in shuffled[:n_train]:
        assignment[speaker] = "TRAIN"
    for speaker in shuffled[n_train:n_train + n_val]:
        assignment[speaker] = "VAL"
    for speaker in shuffled[n_train + n_val:]:
        assignment[speaker] = "TEST"


def split_speakers(speakers, ratios=(0.70, 0.15, 0.15), seed=0, stratify_by=None):
    """Random speaker-level partition into TRAIN/VAL/TEST.

    Sizes follow round(r_train*N), round(r_val*N), remainder to TEST.
    ``stratify_by`` (speaker -> rating) switches to per-rating allocation,
    which keeps rare classes represented in every split.
    """
    speakers = list(speakers)
    if len(set(speakers)) != len(speakers):
        raise IntegrityError("duplicate speaker ids in split input")
    if len(speakers) < 3:
        raise ConfigError("need at least 3 speakers to split")
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ConfigError("ratios must be three nonnegative numbers")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must sum to 1, got {sum(ratios)!r}")
    assignment: dict[str, str] = {}
    if stratify_by is None:
        _allocate(speakers, ratios, subrng(seed, "split"), assignment)
    else:
        missing = [s for s in speakers if s not in stratify_by]
        if missing:
            raise IntegrityError(f"no stratification label for speakers {missing[:3]}")
        strata: dict[object, list[str]] = {}
        for speaker in speakers:
            strata.setdefault(stratify_by[speaker], []).append(speaker)
        for label in sorted(strata):
            _allocate(strata[label], ratios, subrng(seed, "split-stratum", label), assignment)
    return SplitAssignment(assignment, seed)


def save_split(path, split):
    with open(path, "w", encoding="utf-8") as fh:
        for speaker in sorted(split.assignment):
            fh.write(json.dumps({"speaker_id": speaker, "split": split.assignment[speaker]}) + "\n")


def load_split(path, seed=0):
    assignment = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            speaker = _require(record, "speaker_id", str, path, lineno)
            split = _require(record, "split", str, path, lineno)
            if split not in SPLIT_NAMES:
                raise FormatError(f"{path}:{lineno}: unknown split {split!r}")
            if speaker in assignment:
                raise IntegrityError(f"speaker {speaker!r} assigned twice")
            assignment[speaker] = split
    return SplitAssignment(assignment, seed)
