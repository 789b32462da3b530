"""Block-wise 1NN distortion recognition with per-image majority voting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distortions import FAMILIES, LETTERS
from .errors import EmptyCorpus, LabelOutOfRange, ShapeError

N_LABELS = len(FAMILIES)


@dataclass(frozen=True)
class LabeledProjection:
    """Training projections per block position.

    ``coords`` is ``(b, n, p)``; ``labels`` and ``image_ids`` are ``(n,)``.
    Entries are kept sorted by image id so that ``argmin`` resolves exact
    distance ties toward the lowest id.
    """

    coords: np.ndarray
    labels: np.ndarray
    image_ids: np.ndarray

    @classmethod
    def build(cls, coords, labels, image_ids=None) -> "LabeledProjection":
        coords = np.asarray(coords, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if coords.ndim != 3 or coords.shape[1] != labels.shape[0]:
            raise ShapeError(f"coords {coords.shape} do not match {labels.shape[0]} labels")
        if coords.shape[1] == 0:
            raise EmptyCorpus("corpus has no entries")
        check_labels(labels)
        ids = np.arange(labels.shape[0]) if image_ids is None else np.asarray(image_ids, dtype=np.int64)
        order = np.argsort(ids, kind="stable")
        return cls(coords[:, order], labels[order], ids[order])

    @property
    def n(self) -> int:
        return self.labels.shape[0]


def check_labels(labels) -> None:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= N_LABELS):
        raise LabelOutOfRange(f"labels must lie in 0..{N_LABELS - 1}")


def nearest_index(query, coords, mask=None):
    """Index of the Euclidean-nearest row of ``coords (..., n, p)`` for ``query (..., p)``.

    ``mask`` (``(n,)`` bool) excludes entries. The first minimum wins.
    """
    d = ((coords - query[..., None, :]) ** 2).sum(axis=-1)
    if mask is not None:
        d = np.where(mask, np.inf, d)
    return d.argmin(axis=-1)


def classify_block(query, corpus_coords, corpus_labels) -> int:
    """1NN label for one block given that position's ``(n, p)`` corpus."""
    corpus_coords = np.asarray(corpus_coords, dtype=np.float64)
    if corpus_coords.shape[0] == 0:
        raise EmptyCorpus("corpus has no entries")
    return int(np.asarray(corpus_labels)[nearest_index(np.asarray(query, dtype=np.float64), corpus_coords)])


def block_votes(projections, corpus: LabeledProjection, exclude_id: int | None = None) -> np.ndarray:
    """1NN label for every block of one image; ``projections`` is ``(b, p)``."""
    projections = np.asarray(projections, dtype=np.float64)
    if projections.shape != (corpus.coords.shape[0], corpus.coords.shape[2]):
        raise ShapeError(f"projections {projections.shape} do not match corpus {corpus.coords.shape}")
    mask = None
    if exclude_id is not None:
        mask = corpus.image_ids == exclude_id
        if mask.all():
            raise EmptyCorpus("excluding the query image leaves an empty corpus")
    return corpus.labels[nearest_index(projections, corpus.coords, mask)]


@dataclass(frozen=True)
class VoteReport:
    histogram: np.ndarray  # (7,) block counts per label
    majority: int

    @property
    def n_blocks(self) -> int:
        return int(self.histogram.sum())

    def percentages(self) -> np.ndarray:
        return 100.0 * self.histogram / max(self.n_blocks, 1)

    def top_two(self) -> list[tuple[int, float]]:
        pct = self.percentages()
        order = np.argsort(-self.histogram, kind="stable")[:2]
        return [(int(k), float(pct[k])) for k in order]

    def format_top_two(self) -> str:
        """Like ``55.2% B / 19.9% G``."""
        return " / ".join(f"{pct:.1f}% {LETTERS[k]}" for k, pct in self.top_two())


def vote(labels) -> VoteReport:
    """Majority vote; ties go to the lowest label."""
    labels = np.asarray(labels, dtype=np.int64)
    check_labels(labels)
    hist = np.bincount(labels, minlength=N_LABELS)
    return VoteReport(hist, int(hist.argmax()))


def classify_image(projections, corpus: LabeledProjection, exclude_id: int | None = None) -> VoteReport:
    return vote(block_votes(projections, corpus, exclude_id))


def confusion_matrix(true_labels, predicted) -> np.ndarray:
    """7x7 counts, rows are true labels and columns predictions."""
    t = np.asarray(true_labels, dtype=np.int64)
    pr = np.asarray(predicted, dtype=np.int64)
    if t.shape != pr.shape:
        raise ShapeError("true and predicted label arrays differ in length")
    check_labels(t)
    check_labels(pr)
    cm = np.zeros((N_LABELS, N_LABELS), dtype=np.int64)
    np.add.at(cm, (t, pr), 1)
    return cm


def class_accuracy(cm) -> np.ndarray:
    """Diagonal fraction per true class (nan for empty rows)."""
    cm = np.asarray(cm, dtype=np.float64)
    rows = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.diag(cm) / rows


def classify_corpus(corpus: LabeledProjection, leave_one_out: bool = False) -> list[VoteReport]:
    """Classify the training images themselves (optionally without their own entries)."""
    return [
        classify_image(corpus.coords[:, j], corpus, corpus.image_ids[j] if leave_one_out else None)
        for j in range(corpus.n)
    ]


def format_confusion(cm) -> str:
    cm = np.asarray(cm)
    width = max(3, len(str(cm.max())))
    head = "    " + " ".join(f"{LETTERS[k]:>{width}}" for k in range(cm.shape[1]))
    lines = [head]
    for r in range(cm.shape[0]):
        lines.append(f"{LETTERS[r]:>3} " + " ".join(f"{v:>{width}d}" for v in cm[r]))
    return "\n".join(lines)
