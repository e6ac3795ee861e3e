"""Evaluation: precision/recall/macro-F1, ROC AUC, threshold search, Pearson.

Conventions (documented, flagged in reports rather than silently applied):
  - precision/recall/F1 are 0 when their denominator is 0;
  - multi-class binarization takes the argmax, ties to the lowest class index;
  - multi-label AUC is the unweighted mean of per-class binary AUCs.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:
    from .models.spec import PredictionMatrix


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class ThresholdVector:
    thresholds: dict[str, float]

    def __post_init__(self):
        for cls, t in self.thresholds.items():
            if not 0.0 < t < 1.0:
                raise ValueError(f"threshold for {cls!r} must lie in (0,1), got {t}")

    def as_array(self, classes: Sequence[str]) -> np.ndarray:
        missing = set(classes) - set(self.thresholds)
        if missing:
            raise ValueError(f"thresholds missing for classes {sorted(missing)}")
        return np.array([self.thresholds[c] for c in classes])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.thresholds, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ThresholdVector":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class MetricsReport:
    producer: str
    classes: tuple[str, ...]
    per_class: dict[str, dict[str, float]]  # class -> {precision, recall, f1, auc}
    thresholds: ThresholdVector | None
    zero_division_flags: list[str] = field(default_factory=list)

    @property
    def macro(self) -> dict[str, float]:
        keys = ("precision", "recall", "f1", "auc")
        return {k: float(np.mean([self.per_class[c][k] for c in self.classes]))
                for k in keys}

    def to_dict(self) -> dict:
        return {
            "producer": self.producer,
            "per_class": self.per_class,
            "macro": self.macro,
            "thresholds": self.thresholds.thresholds if self.thresholds else None,
            "zero_division_flags": self.zero_division_flags,
        }

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class", "precision", "recall", "f1", "auc"])
            for c in self.classes:
                m = self.per_class[c]
                writer.writerow([c, m["precision"], m["recall"], m["f1"], m["auc"]])
            m = self.macro
            writer.writerow(["macro", m["precision"], m["recall"], m["f1"], m["auc"]])


@dataclass
class CorrelationReport:
    model_a: str
    model_b: str
    classes: tuple[str, ...]
    pearson_per_class: dict[str, float | None]  # None where variance is zero
    f1_a: dict[str, float]
    f1_b: dict[str, float]

    @property
    def averaged_pearson(self) -> float:
        values = [v for v in self.pearson_per_class.values() if v is not None]
        if not values:
            raise UndefinedMetricError("no class had a defined correlation")
        return float(np.mean(values))

    def to_dict(self) -> dict:
        return {
            "model_a": self.model_a,
            "model_b": self.model_b,
            "pearson_per_class": self.pearson_per_class,
            "averaged_pearson": self.averaged_pearson,
            "f1_a": self.f1_a,
            "f1_b": self.f1_b,
        }


def binarize(scores: np.ndarray, kind: str,
             thresholds: np.ndarray | None = None) -> np.ndarray:
    """Scores -> 0/1 labels. multi_label: score >= threshold; multi_class: argmax."""
    scores = np.asarray(scores)
    if kind == "multi_class":
        out = np.zeros_like(scores, dtype=np.int64)
        if len(scores):
            out[np.arange(len(scores)), scores.argmax(axis=1)] = 1
        return out
    if thresholds is None:
        raise ValueError("multi_label binarization needs thresholds")
    return (scores >= np.asarray(thresholds)[None, :]).astype(np.int64)


def prf1(pred: np.ndarray, gold: np.ndarray) -> tuple[float, float, float]:
    """Precision, recall, F1 for one binary class (0/0 -> 0 by convention)."""
    pred = np.asarray(pred, dtype=np.int64)
    gold = np.asarray(gold, dtype=np.int64)
    if pred.shape != gold.shape:
        raise ValueError("prediction/gold length mismatch")
    tp = int(((pred == 1) & (gold == 1)).sum())
    fp = int(((pred == 1) & (gold == 0)).sum())
    fn = int(((pred == 0) & (gold == 1)).sum())
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def roc_auc(scores: np.ndarray, gold: np.ndarray) -> float:
    """Mann-Whitney AUC: P(score+ > score-) + 0.5 * P(tie)."""
    scores = np.asarray(scores, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.int64)
    n_pos = int((gold == 1).sum())
    n_neg = int((gold == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC AUC needs both classes in gold")
    # rank-sum formulation with midranks for ties
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum_pos = ranks[gold == 1].sum()
    return float((rank_sum_pos - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def search_thresholds(scores: np.ndarray, gold: np.ndarray,
                      classes: Sequence[str]) -> ThresholdVector:
    """Per class, the F1-maximizing threshold over midpoints of consecutive
    distinct sorted scores plus 0.5; ties break toward the lowest threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.int64)
    out: dict[str, float] = {}
    for j, cls in enumerate(classes):
        col, g = scores[:, j], gold[:, j]
        distinct = np.unique(col)
        candidates = sorted(set((distinct[:-1] + distinct[1:]) / 2.0) | {0.5})
        candidates = [t for t in candidates if 0.0 < t < 1.0]
        best_t, best_f1 = None, -1.0
        for t in candidates:
            f1 = prf1((col >= t).astype(np.int64), g)[2]
            if f1 > best_f1:
                best_t, best_f1 = t, f1
        out[cls] = best_t if best_t is not None else 0.5
    return ThresholdVector(out)


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("pearson needs two equal-length 1-D arrays of length >= 2")
    da, db = a - a.mean(), b - b.mean()
    denom = np.sqrt((da * da).sum() * (db * db).sum())
    if denom == 0:
        raise UndefinedMetricError("pearson undefined: zero variance")
    return float(np.clip((da * db).sum() / denom, -1.0, 1.0))


def evaluate(preds: "PredictionMatrix", gold: np.ndarray, kind: str,
             thresholds: ThresholdVector | None = None) -> MetricsReport:
    """Full per-class + macro report for one prediction matrix."""
    classes = preds.classes
    t_arr = thresholds.as_array(classes) if thresholds is not None else None
    binary = binarize(preds.scores, kind, t_arr)
    per_class: dict[str, dict[str, float]] = {}
    flags: list[str] = []
    for j, cls in enumerate(classes):
        p, r, f1 = prf1(binary[:, j], gold[:, j])
        if binary[:, j].sum() == 0 and gold[:, j].sum() > 0:
            flags.append(f"{cls}: no predicted positives (P defined as 0)")
        try:
            auc = roc_auc(preds.scores[:, j], gold[:, j])
        except UndefinedMetricError:
            flags.append(f"{cls}: single-class gold, AUC undefined (reported 0)")
            auc = 0.0
        per_class[cls] = {"precision": p, "recall": r, "f1": f1, "auc": auc}
    return MetricsReport(producer=preds.producer, classes=tuple(classes),
                         per_class=per_class, thresholds=thresholds,
                         zero_division_flags=flags)


def correlation_report(preds_a: "PredictionMatrix", preds_b: "PredictionMatrix",
                       gold: np.ndarray, kind: str,
                       thresholds: ThresholdVector | None = None) -> CorrelationReport:
    if preds_a.ids != preds_b.ids or preds_a.classes != preds_b.classes:
        raise ValueError("prediction matrices must align on ids and classes")
    classes = preds_a.classes
    t_arr = thresholds.as_array(classes) if thresholds is not None else None
    bin_a = binarize(preds_a.scores, kind, t_arr)
    bin_b = binarize(preds_b.scores, kind, t_arr)
    corr: dict[str, float | None] = {}
    f1_a: dict[str, float] = {}
    f1_b: dict[str, float] = {}
    for j, cls in enumerate(classes):
        try:
            corr[cls] = pearson(preds_a.scores[:, j], preds_b.scores[:, j])
        except UndefinedMetricError:
            corr[cls] = None
        f1_a[cls] = prf1(bin_a[:, j], gold[:, j])[2]
        f1_b[cls] = prf1(bin_b[:, j], gold[:, j])[2]
    return CorrelationReport(model_a=preds_a.producer, model_b=preds_b.producer,
                             classes=tuple(classes), pearson_per_class=corr,
                             f1_a=f1_a, f1_b=f1_b)


def render_results_table(reports: Sequence[MetricsReport]) -> str:
    """Paper-layout comparison table: one row per model, P/R/F1/AUC columns."""
    lines = [f"{'Model':<40} {'P':>6} {'R':>6} {'F1':>6} {'AUC':>6}"]
    for rep in reports:
        m = rep.macro
        lines.append(f"{rep.producer:<40} {m['precision']:>6.3f} {m['recall']:>6.3f} "
                     f"{m['f1']:>6.3f} {m['auc']:>6.3f}")
    return "\n".join(lines)


def render_correlation_table(reports: Sequence[CorrelationReport]) -> str:
    lines = [f"{'Pair':<50} {'F1 a':>6} {'F1 b':>6} {'Pearson':>8}"]
    for rep in reports:
        mean_f1_a = float(np.mean(list(rep.f1_a.values())))
        mean_f1_b = float(np.mean(list(rep.f1_b.values())))
        lines.append(f"{rep.model_a + ' vs ' + rep.model_b:<50} "
                     f"{mean_f1_a:>6.3f} {mean_f1_b:>6.3f} {rep.averaged_pearson:>8.3f}")
    return "\n".join(lines)
