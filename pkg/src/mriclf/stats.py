"""Classification metrics, confidence intervals and McNemar's test."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats as sps

from .errors import EmptyScores, MetricUndefined, NoDisagreement, SingleClass, TooFewIterations
from .rng import substream


@dataclass(frozen=True)
class ScoredSet:
    subject_ids: tuple
    labels: np.ndarray
    scores: np.ndarray
    predicted: np.ndarray

    @classmethod
    def build(cls, subject_ids, labels, scores, predicted=None, threshold=0.5):
        labels = np.asarray(labels, dtype=np.int64)
        scores = np.asarray(scores, dtype=np.float64)
        if predicted is None:
            predicted = (scores >= threshold).astype(np.int64)
        predicted = np.asarray(predicted, dtype=np.int64)
        ids = tuple(str(s) for s in subject_ids)
        if not (len(ids) == labels.size == scores.size == predicted.size):
            raise ValueError("ids, labels, scores and predictions must have equal length")
        if len(set(ids)) != len(ids):
            raise ValueError("subject ids must be unique")
        if not set(np.unique(labels).tolist()) <= {0, 1}:
            raise ValueError("labels must be 0/1")
        return cls(ids, labels, scores, predicted)

    def __len__(self):
        return len(self.subject_ids)

    def subset(self, idx) -> "ScoredSet":
        idx = np.asarray(idx)
        return ScoredSet(tuple(self.subject_ids[i] for i in idx), self.labels[idx], self.scores[idx],
                         self.predicted[idx])


@dataclass(frozen=True)
class ConfidenceInterval:
    point: float
    lower: float
    upper: float
    level: float
    method: str

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ContingencyTable:
    n00: int
    n01: int
    n10: int
    n11: int

    @property
    def total(self) -> int:
        return self.n00 + self.n01 + self.n10 + self.n11


def _split_classes(labels, scores):
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    pos, neg = scores[labels == 1], scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise SingleClass("AUC needs both classes")
    return pos, neg


def mann_whitney_u(labels, scores) -> float:
    """U statistic of the positives, ties counted as one half."""
    pos, neg = _split_classes(labels, scores)
    ranks = sps.rankdata(np.concatenate([pos, neg]))
    return float(ranks[: pos.size].sum()) - pos.size * (pos.size + 1) / 2.0


def auc(scored: ScoredSet) -> float:
    pos = int((scored.labels == 1).sum())
    neg = int(scored.labels.size - pos)
    return mann_whitney_u(scored.labels, scored.scores) / (pos * neg)


def accuracy(scored: ScoredSet) -> float:
    if len(scored) == 0:
        raise EmptyScores("accuracy of an empty set")
    return float(np.mean(scored.predicted == scored.labels))


METRICS: dict[str, Callable[[ScoredSet], float]] = {"auc": auc, "accuracy": accuracy}


def corrected_resampled_ci(values: Sequence[float], n_train: int, n_test: int,
                           level: float = 0.95) -> ConfidenceInterval:
    """t-interval for the mean of J repeated-split estimates.

    The variance is inflated by ``n_test / n_train`` to account for the overlap
    between training sets of different splits.
    """
    v = np.asarray(values, dtype=np.float64)
    J = v.size
    if J < 2:
        raise TooFewIterations("need at least two iterations")
    if n_train <= 0 or n_test <= 0:
        raise ValueError("n_train and n_test must be positive")
    if v.min() == v.max():
        # exact zero width; v.mean() can round away from the common value
        return ConfidenceInterval(float(v[0]), float(v[0]), float(v[0]), level, "corrected_resampled_t")
    mean = float(v.mean())
    var = float(v.var(ddof=1))
    t = float(sps.t.ppf((1 + level) / 2, J - 1))
    half = t * math.sqrt((1.0 / J + n_test / n_train) * var)
    return ConfidenceInterval(mean, mean - half, mean + half, level, "corrected_resampled_t")


def naive_t_ci(values: Sequence[float], level: float = 0.95) -> ConfidenceInterval:
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise TooFewIterations("need at least two values")
    mean = float(v.mean())
    half = float(sps.t.ppf((1 + level) / 2, v.size - 1)) * math.sqrt(v.var(ddof=1) / v.size)
    return ConfidenceInterval(mean, mean - half, mean + half, level, "naive_t")


def percentile_interval(values, level: float) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    lo, hi = np.quantile(v, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


def bootstrap_resamples(scored: ScoredSet, metric: str, B: int, seed: int) -> np.ndarray:
    """``B`` subject index resamples; AUC resamples lacking a class are redrawn."""
    n = len(scored)
    rng = substream(seed, "bootstrap")
    out = np.empty((B, n), dtype=np.int64)
    draws, k = 0, 0
    while k < B:
        if draws >= 100 * B:
            raise MetricUndefined(f"could not draw {B} two-class resamples in {100 * B} attempts")
        idx = rng.integers(0, n, size=n)
        draws += 1
        if metric == "auc":
            labs = scored.labels[idx]
            if labs.min() == labs.max():
                continue
        out[k] = idx
        k += 1
    return out


def bootstrap_ci(scored: ScoredSet, metric: str = "auc", B: int = 500, level: float = 0.95,
                 seed: int = 0, resamples=None) -> ConfidenceInterval:
    """Percentile bootstrap interval over subject resamples.

    ``resamples`` may supply explicit index sets instead of random draws.
    """
    if len(scored) == 0:
        raise EmptyScores("bootstrap of an empty set")
    if B < 1:
        raise ValueError("B must be at least 1")
    fn = METRICS[metric]
    point = fn(scored)
    if resamples is None:
        resamples = bootstrap_resamples(scored, metric, B, seed)
    values = np.array([fn(scored.subset(idx)) for idx in resamples])
    lo, hi = percentile_interval(values, level)
    return ConfidenceInterval(point, min(lo, point), max(hi, point), level, "bootstrap_percentile")


def contingency_table(correct_a, correct_b) -> ContingencyTable:
    a = np.asarray(correct_a, dtype=bool)
    b = np.asarray(correct_b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("correctness vectors must align")
    return ContingencyTable(int((~a & ~b).sum()), int((~a & b).sum()), int((a & ~b).sum()), int((a & b).sum()))


def mcnemar(table: ContingencyTable) -> tuple[float, float]:
    """Continuity-corrected McNemar chi-square statistic and its 1-df p-value."""
    disc = table.n01 + table.n10
    if disc <= 0:
        raise NoDisagreement("the classifiers never disagree")
    stat = (abs(table.n01 - table.n10) - 1.0) ** 2 / disc
    return float(stat), float(sps.chi2.sf(stat, 1))


def bonferroni_threshold(alpha: float, comparisons: int) -> float:
    return alpha / comparisons


# -- files -------------------------------------------------------------------------

PREDICTION_COLUMNS = ("subject_id", "true_label", "score", "predicted_label")


def write_predictions(scored: ScoredSet, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_COLUMNS)
        for sid, lab, sc, pr in zip(scored.subject_ids, scored.labels, scored.scores, scored.predicted):
            w.writerow([sid, int(lab), repr(float(sc)), int(pr)])


def read_predictions(path) -> ScoredSet:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return ScoredSet.build([r["subject_id"] for r in rows], [int(r["true_label"]) for r in rows],
                           [float(r["score"]) for r in rows], [int(r["predicted_label"]) for r in rows])
