"""Frame-level mAP, ROC AUC and EER over pooled (scene, speaker, frame) scores.

Tied scores are handled by expectation: average precision is the mean over
all orderings of each tied block, which is what a random tie-breaker would
give on average. AUC counts ties as one half.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata


@dataclass
class ScoredFrames:
    scores: np.ndarray
    labels: np.ndarray
    ids: list = field(default_factory=list)  # (scene_id, speaker_id, frame_idx)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.scores.shape != self.labels.shape:
            raise ValueError("scores and labels must have equal length")
        if self.ids and len(self.ids) != self.scores.shape[0]:
            raise ValueError("ids must match scores in length")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("labels must be 0/1")

    @property
    def n_pos(self) -> int:
        return int(self.labels.sum())

    @property
    def n_neg(self) -> int:
        return int(self.labels.shape[0] - self.labels.sum())

    @classmethod
    def concat(cls, parts: list["ScoredFrames"]) -> "ScoredFrames":
        return cls(np.concatenate([p.scores for p in parts]), np.concatenate([p.labels for p in parts]),
                   [i for p in parts for i in p.ids])


@dataclass(frozen=True)
class MetricReport:
    map: float
    auc: float
    eer: float
    n_pos: int
    n_neg: int

    def to_dict(self) -> dict:
        return asdict(self)


def _tie_blocks(sf: ScoredFrames):
    """Yield (n_before, pos_before, block_size, block_pos) for score blocks in descending order."""
    order = np.argsort(-sf.scores, kind="stable")
    s, y = sf.scores[order], sf.labels[order]
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    ends = np.r_[starts[1:], s.shape[0]]
    pos_cum = np.r_[0, np.cumsum(y)]
    for a, b in zip(starts, ends):
        yield int(a), int(pos_cum[a]), int(b - a), int(pos_cum[b] - pos_cum[a])


def average_precision(sf: ScoredFrames) -> float:
    """All-points AP; tied blocks contribute their expected precision sum."""
    n_pos = sf.n_pos
    if n_pos == 0:
        raise ValueError("average precision needs at least one positive")
    total = 0.0
    for n0, p0, m, k in _tie_blocks(sf):
        if k == 0:
            continue
        if m == 1:
            total += (p0 + 1) / (n0 + 1)
            continue
        r = np.arange(1, m + 1)
        # slot r holds a positive w.p. k/m; given that, E[#positives in earlier slots] = (r-1)(k-1)/(m-1)
        total += float(np.sum((k / m) * (p0 + 1 + (r - 1) * (k - 1) / (m - 1)) / (n0 + r)))
    return total / n_pos


def _check_both_classes(sf: ScoredFrames):
    if sf.n_pos == 0 or sf.n_neg == 0:
        raise ValueError(f"need both classes, got {sf.n_pos} positives and {sf.n_neg} negatives")


def roc_auc(sf: ScoredFrames) -> float:
    """Mann-Whitney statistic with mid-ranks (ties count one half)."""
    _check_both_classes(sf)
    ranks = rankdata(sf.scores, method="average")
    n_pos, n_neg = sf.n_pos, sf.n_neg
    u = ranks[sf.labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_points(sf: ScoredFrames) -> tuple[np.ndarray, np.ndarray]:
    """(FPR, TPR) at every distinct threshold, from (0, 0) to (1, 1)."""
    _check_both_classes(sf)
    fp, tp = [0], [0]
    for n0, p0, m, k in _tie_blocks(sf):
        tp.append(p0 + k)
        fp.append(n0 + m - p0 - k)
    return np.asarray(fp) / sf.n_neg, np.asarray(tp) / sf.n_pos


def eer(sf: ScoredFrames) -> float:
    """Rate where FPR = FNR, linearly interpolated between adjacent thresholds."""
    fpr, tpr = roc_points(sf)
    fnr = 1.0 - tpr
    diff = fnr - fpr  # non-increasing, from 1 to -1
    k = int(np.argmax(diff <= 0))
    if diff[k] == 0:
        return float(fpr[k])
    t = diff[k - 1] / (diff[k - 1] - diff[k])
    return float(fpr[k - 1] + t * (fpr[k] - fpr[k - 1]))


def precision_recall_points(sf: ScoredFrames) -> tuple[np.ndarray, np.ndarray]:
    prec, rec = [], []
    for n0, p0, m, k in _tie_blocks(sf):
        prec.append((p0 + k) / (n0 + m))
        rec.append((p0 + k) / max(sf.n_pos, 1))
    return np.asarray(rec), np.asarray(prec)


def evaluate_scores(sf: ScoredFrames) -> MetricReport:
    return MetricReport(average_precision(sf), roc_auc(sf), eer(sf), sf.n_pos, sf.n_neg)


def write_predictions(sf: ScoredFrames, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["scene_id", "speaker_id", "frame_idx", "score", "label"])
        for (scene, speaker, frame), s, y in zip(sf.ids, sf.scores, sf.labels):
            w.writerow([scene, speaker, int(frame), repr(float(s)), int(y)])


def read_predictions(path) -> ScoredFrames:
    ids, scores, labels = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        expected = ["scene_id", "speaker_id", "frame_idx", "score", "label"]
        if reader.fieldnames != expected:
            raise ValueError(f"{path}: expected columns {expected}, got {reader.fieldnames}")
        for rec in reader:
            ids.append((rec["scene_id"], rec["speaker_id"], int(rec["frame_idx"])))
            scores.append(float(rec["score"]))
            labels.append(int(rec["label"]))
    return ScoredFrames(np.asarray(scores), np.asarray(labels), ids)


def write_report(report: MetricReport, path, extra: dict | None = None) -> None:
    doc = report.to_dict()
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
