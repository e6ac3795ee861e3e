"""Leak-free out-of-fold stacking with gradient-boosted-tree meta-learners.

Base classifiers are trained once per (spec, fold) with the fold held out;
each training sample's stacked features therefore come from a model that
never saw it (asserted at construction, not just in tests).  Test-split
features are produced per fold-model; the k stackers trained in CV are
averaged at prediction time.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .corpus import Corpus, FoldAssignment
from .features import Tokenizer
from .models import ClassifierSpec, PredictionMatrix, TrainedModel, fit, predict


class LeakError(AssertionError):
    pass


@dataclass
class StackedFeatures:
    ids: list[str]
    columns: list[str]  # "<model>:<class>" base columns, then meta columns
    matrix: np.ndarray  # (n_samples, n_columns)
    provenance: np.ndarray  # fold index of the producing model per row

    def audit_leak_freedom(self, folds: FoldAssignment) -> None:
        """Hard assertion: every row was scored by the model that held out the
        row's own fold.  Provenance records the producing model's held-out
        fold, so any mismatch means the model trained on this sample."""
        violations = [
            i for i, sample_id in enumerate(self.ids)
            if sample_id in folds.assignment
            and folds.assignment[sample_id] != self.provenance[i]
        ]
        if violations:
            raise LeakError(
                f"{len(violations)} rows scored by a model trained on their fold")

    def save_csv(self, path: str | Path) -> None:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", *self.columns])
            for i, sample_id in enumerate(self.ids):
                writer.writerow([sample_id, *(repr(float(v)) for v in self.matrix[i])])
        sidecar = {"provenance": {i: int(f) for i, f in zip(self.ids, self.provenance)}}
        path.with_name(path.name + ".provenance.json").write_text(
            json.dumps(sidecar), encoding="utf-8")


def _swear_hits(tokens: Sequence[str], lexicon: frozenset[str]) -> int:
    return sum(1 for t in tokens if t in lexicon)


def meta_features(corpus_view: Corpus, lexicon: frozenset[str] | None) -> tuple[list[str], np.ndarray]:
    """Documented comment meta-features: token length and swear-lexicon hits."""
    tokenizer = Tokenizer()
    columns = ["meta:token_length"]
    rows = []
    for s in corpus_view.samples:
        tokens = tokenizer(s.text)
        row = [float(len(tokens))]
        if lexicon is not None:
            row.append(float(_swear_hits(tokens, lexicon)))
        rows.append(row)
    if lexicon is not None:
        columns.append("meta:swear_hits")
    matrix = np.array(rows) if rows else np.zeros((0, len(columns)))
    return columns, matrix


FitFn = Callable[[ClassifierSpec, Corpus, Corpus], TrainedModel]


def oof_predictions(specs: Sequence[ClassifierSpec], corpus: Corpus,
                    folds: FoldAssignment,
                    swear_lexicon: frozenset[str] | None = None,
                    include_meta: bool = True,
                    fit_fn: FitFn = fit,
                    ) -> tuple[StackedFeatures, list[StackedFeatures]]:
    """Train every (spec, fold) pair; return train OOF features and per-fold
    test features (one StackedFeatures per fold, aligned on the test split)."""
    train_view = corpus.train_view()
    test_view = corpus.test_view() if corpus.split is not None else None
    train_ids = train_view.ids
    missing = [i for i in train_ids if i not in folds.assignment]
    if missing:
        raise ValueError(f"{len(missing)} train ids lack a fold assignment")
    classes = corpus.schema.classes

    base_columns = [f"{spec.identifier}:{cls}" for spec in specs for cls in classes]
    n_base = len(base_columns)
    train_matrix = np.full((len(train_ids), n_base), np.nan)
    provenance = np.full(len(train_ids), -1, dtype=np.int64)
    row_of = {sample_id: i for i, sample_id in enumerate(train_ids)}
    test_matrices = [np.zeros((len(test_view) if test_view else 0, n_base))
                     for _ in range(folds.k)]

    for s_idx, spec in enumerate(specs):
        for fold in range(folds.k):
            held_out = [i for i in train_ids if folds.assignment[i] == fold]
            in_folds = [i for i in train_ids if folds.assignment[i] != fold]
            try:
                model = fit_fn(spec, corpus.subset(in_folds), corpus.subset(held_out))
            except Exception as exc:
                raise RuntimeError(
                    f"base fit failed for spec={spec.identifier!r} fold={fold}: {exc}"
                ) from exc
            oof = predict(model, corpus.subset(held_out))
            cols = slice(s_idx * len(classes), (s_idx + 1) * len(classes))
            for i, sample_id in enumerate(held_out):
                train_matrix[row_of[sample_id], cols] = oof.scores[i]
                provenance[row_of[sample_id]] = fold
            if test_view is not None and len(test_view):
                test_matrices[fold][:, cols] = predict(model, test_view).scores

    if np.isnan(train_matrix).any():
        raise RuntimeError("out-of-fold matrix has unscored rows")

    columns = list(base_columns)
    if include_meta:
        meta_cols, meta_train = meta_features(train_view, swear_lexicon)
        columns += meta_cols
        train_matrix = np.hstack([train_matrix, meta_train])
        if test_view is not None:
            _, meta_test = meta_features(test_view, swear_lexicon)
            test_matrices = [np.hstack([m, meta_test]) for m in test_matrices]

    train_features = StackedFeatures(ids=train_ids, columns=columns,
                                     matrix=train_matrix, provenance=provenance)
    train_features.audit_leak_freedom(folds)
    test_ids = test_view.ids if test_view is not None else []
    test_features = [
        StackedFeatures(ids=test_ids, columns=columns, matrix=m,
                        provenance=np.full(len(test_ids), f, dtype=np.int64))
        for f, m in enumerate(test_matrices)
    ]
    return train_features, test_features


# ---------------------------------------------------------------------------
# gradient-boosted decision trees (logistic loss, second-order leaf values)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GbdtConfig:
    trees: int = 100
    depth: int = 3
    learning_rate: float = 0.1
    min_leaf: int = 20
    reg_lambda: float = 1.0
    seed: int = 0


@dataclass
class TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    value: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def predict(self, X: np.ndarray) -> np.ndarray:
        if self.is_leaf:
            return np.full(len(X), self.value)
        go_left = X[:, self.feature] < self.threshold
        out = np.empty(len(X))
        out[go_left] = self.left.predict(X[go_left])
        out[~go_left] = self.right.predict(X[~go_left])
        return out

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"value": self.value}
        return {"feature": self.feature, "threshold": self.threshold,
                "left": self.left.to_dict(), "right": self.right.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "TreeNode":
        if "value" in d:
            return cls(value=d["value"])
        return cls(feature=d["feature"], threshold=d["threshold"],
                   left=cls.from_dict(d["left"]), right=cls.from_dict(d["right"]))

    def dump(self, names: Sequence[str], indent: int = 0) -> str:
        pad = "  " * indent
        if self.is_leaf:
            return f"{pad}leaf value={self.value:+.5f}"
        return (f"{pad}[{names[self.feature]} < {self.threshold:.6g}]\n"
                f"{self.left.dump(names, indent + 1)}\n"
                f"{self.right.dump(names, indent + 1)}")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -30, 30)))


def best_split(X: np.ndarray, g: np.ndarray, h: np.ndarray, min_leaf: int,
               reg_lambda: float) -> tuple[int, float, float] | None:
    """Exhaustive best (feature, midpoint threshold) by second-order gain.

    Threshold ties break toward the lower threshold; single-valued features
    are skipped.  Returns (feature, threshold, gain) or None.
    """
    G, H = g.sum(), h.sum()
    parent = G * G / (H + reg_lambda)
    best: tuple[int, float, float] | None = None
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="mergesort")
        xs, gs, hs = X[order, j], g[order], h[order]
        gl = np.cumsum(gs)
        hl = np.cumsum(hs)
        for i in range(min_leaf - 1, len(xs) - min_leaf):
            if xs[i] == xs[i + 1]:
                continue
            gain = (gl[i] ** 2 / (hl[i] + reg_lambda)
                    + (G - gl[i]) ** 2 / (H - hl[i] + reg_lambda) - parent)
            threshold = 0.5 * (xs[i] + xs[i + 1])
            if best is None or gain > best[2] + 1e-12:
                best = (j, threshold, gain)
    if best is None or best[2] <= 1e-12:
        return None
    return best


def _grow_tree(X: np.ndarray, g: np.ndarray, h: np.ndarray, depth: int,
               config: GbdtConfig) -> TreeNode:
    leaf_value = -g.sum() / (h.sum() + config.reg_lambda)
    if depth >= config.depth or len(X) < 2 * config.min_leaf:
        return TreeNode(value=leaf_value)
    split = best_split(X, g, h, config.min_leaf, config.reg_lambda)
    if split is None:
        return TreeNode(value=leaf_value)
    j, t, _ = split
    mask = X[:, j] < t
    return TreeNode(feature=j, threshold=t,
                    left=_grow_tree(X[mask], g[mask], h[mask], depth + 1, config),
                    right=_grow_tree(X[~mask], g[~mask], h[~mask], depth + 1, config))


@dataclass
class GbdtModel:
    classes: tuple[str, ...]
    columns: list[str]
    config: GbdtConfig
    base_scores: np.ndarray  # per-class log-odds prior
    trees: dict[str, list[TreeNode]] = field(default_factory=dict)
    training_loss: dict[str, list[float]] = field(default_factory=dict)

    def raw_scores(self, X: np.ndarray) -> np.ndarray:
        out = np.tile(self.base_scores, (len(X), 1))
        for j, cls in enumerate(self.classes):
            for tree in self.trees.get(cls, ()):
                out[:, j] += self.config.learning_rate * tree.predict(X)
        return out

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(self.raw_scores(X))

    def dump_trees(self) -> str:
        parts = []
        for cls in self.classes:
            parts.append(f"== class {cls} (base score {self.base_scores[self.classes.index(cls)]:+.5f}) ==")
            for i, tree in enumerate(self.trees.get(cls, ())):
                parts.append(f"-- tree {i} --")
                parts.append(tree.dump(self.columns))
        return "\n".join(parts)

    def save(self, path: str | Path) -> None:
        payload = {
            "version": 1,
            "classes": list(self.classes),
            "columns": self.columns,
            "config": self.config.__dict__,
            "base_scores": self.base_scores.tolist(),
            "trees": {cls: [t.to_dict() for t in ts] for cls, ts in self.trees.items()},
            "training_loss": self.training_loss,
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "GbdtModel":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            classes=tuple(payload["classes"]),
            columns=payload["columns"],
            config=GbdtConfig(**payload["config"]),
            base_scores=np.array(payload["base_scores"]),
            trees={c: [TreeNode.from_dict(d) for d in ts]
                   for c, ts in payload["trees"].items()},
            training_loss=payload["training_loss"],
        )


def gbdt_fit(features: StackedFeatures, labels: np.ndarray,
             classes: Sequence[str], config: GbdtConfig = GbdtConfig()) -> GbdtModel:
    """Boosted logistic-loss trees, one binary booster per class."""
    X = features.matrix
    labels = np.asarray(labels, dtype=np.float64)
    eps = 1e-6
    model = GbdtModel(classes=tuple(classes), columns=list(features.columns),
                      config=config,
                      base_scores=np.zeros(len(classes)))
    for j, cls in enumerate(classes):
        y = labels[:, j]
        rate = np.clip(y.mean(), eps, 1 - eps)
        base = math.log(rate / (1 - rate))
        model.base_scores[j] = base
        raw = np.full(len(y), base)
        loss_log: list[float] = []
        trees: list[TreeNode] = []
        constant = y.min() == y.max()
        for _round in range(0 if constant else config.trees):
            p = _sigmoid(raw)
            g = p - y
            h = np.maximum(p * (1 - p), 1e-12)
            tree = _grow_tree(X, g, h, 0, config)
            trees.append(tree)
            raw = raw + config.learning_rate * tree.predict(X)
            loss_log.append(float(np.mean(
                np.where(y == 1, -np.log(np.clip(_sigmoid(raw), 1e-12, None)),
                         -np.log(np.clip(1 - _sigmoid(raw), 1e-12, None))))))
        model.trees[cls] = trees
        model.training_loss[cls] = loss_log
    return model


def ensemble_predict(stackers: Sequence[GbdtModel],
                     test_features: Sequence[StackedFeatures],
                     producer: str = "ensemble") -> PredictionMatrix:
    """Mean of each fold-stacker applied to its fold's test features."""
    if len(stackers) != len(test_features):
        raise ValueError("need one test feature block per stacker")
    if not stackers:
        raise ValueError("no stackers given")
    total = np.zeros((len(test_features[0].ids), len(stackers[0].classes)))
    for stacker, feats in zip(stackers, test_features):
        total += stacker.predict_proba(feats.matrix)
    scores = total / len(stackers)
    return PredictionMatrix(ids=list(test_features[0].ids),
                            classes=stackers[0].classes, scores=scores,
                            producer=producer)


def stack_cv(train_features: StackedFeatures, labels: np.ndarray,
             classes: Sequence[str], folds: FoldAssignment,
             config: GbdtConfig = GbdtConfig()) -> list[GbdtModel]:
    """Train one stacker per CV fold on the OOF feature rows outside it."""
    stackers = []
    fold_of = np.array([folds.assignment[i] for i in train_features.ids])
    for fold in range(folds.k):
        keep = fold_of != fold
        sub = StackedFeatures(
            ids=[i for i, k in zip(train_features.ids, keep) if k],
            columns=train_features.columns,
            matrix=train_features.matrix[keep],
            provenance=train_features.provenance[keep],
        )
        stackers.append(gbdt_fit(sub, labels[keep], classes, config))
    return stackers
