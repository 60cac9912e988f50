"""Intelligibility grading toolkit for disordered-speech recordings.

Classifies recordings on a five-point scale (typical, mild, moderate,
severe, profound) with three model families: a task-trained CNN over
log-mel patches, and logistic-regression / balanced-random-forest heads
over pooled embeddings.  Evaluation reports one-vs-rest AUC, weighted F1
and accuracy, with per-intelligibility-group and per-phrase breakdowns.
"""

__version__ = "0.1.0"

from .data import TASKS, SpeakerRating, TaskSpec, Utterance, load_manifest, map_task, split_speakers

__all__ = [
    "TASKS",
    "SpeakerRating",
    "TaskSpec",
    "Utterance",
    "load_manifest",
    "map_task",
    "split_speakers",
    "__version__",
]
