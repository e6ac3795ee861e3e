"""Dataset ingestion, validation, splitting, and class statistics.

Two source formats are supported: the Kaggle Jigsaw CSV layout for the
Wikipedia talk-page comments (multi-label, six classes) and the Davidson
Twitter CSV layout (multi-class, three classes).  The canonical on-disk
format for everything downstream is newline-delimited JSON plus a schema
sidecar.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .rng import derive_rng


class IngestionError(ValueError):
    """Raised when a source file cannot be parsed row-for-row."""

    def __init__(self, message: str, row: int | None = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


@dataclass(frozen=True)
class LabelSchema:
    """Names and arity of the classification target."""

    name: str
    kind: str  # "multi_label" | "multi_class"
    classes: tuple[str, ...]

    def __post_init__(self):
        if self.kind not in ("multi_label", "multi_class"):
            raise ValueError(f"unknown schema kind {self.kind!r}")
        if not self.classes:
            raise ValueError("schema needs at least one class")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("class names must be unique")

    def validate_labels(self, labels: Sequence[int]) -> None:
        if len(labels) != len(self.classes):
            raise ValueError(
                f"label vector length {len(labels)} != {len(self.classes)} classes"
            )
        if any(b not in (0, 1) for b in labels):
            raise ValueError(f"label bits must be 0/1, got {labels!r}")
        if self.kind == "multi_class" and sum(labels) != 1:
            raise ValueError("multi_class sample must carry exactly one class")


WIKIPEDIA_SCHEMA = LabelSchema(
    name="wikipedia",
    kind="multi_label",
    classes=("toxic", "severe_toxic", "obscene", "threat", "insult", "identity_hate"),
)

TWITTER_SCHEMA = LabelSchema(
    name="twitter",
    kind="multi_class",
    classes=("hate", "offensive", "clean"),
)


@dataclass(frozen=True)
class Comment:
    id: str
    text: str
    labels: tuple[int, ...]


@dataclass(frozen=True)
class TrainTestSplit:
    train: tuple[str, ...]
    test: tuple[str, ...]


@dataclass(frozen=True)
class Corpus:
    schema: LabelSchema
    samples: tuple[Comment, ...]
    split: TrainTestSplit | None = None

    def __post_init__(self):
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate sample ids in corpus")
        for s in self.samples:
            self.schema.validate_labels(s.labels)
        if self.split is not None:
            train, test = set(self.split.train), set(self.split.test)
            if train & test:
                raise ValueError("train/test partitions overlap")
            if train | test != set(ids):
                raise ValueError("train/test partitions do not cover the corpus")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def by_id(self, sample_id: str) -> Comment:
        return self._index()[sample_id]

    def _index(self) -> dict[str, Comment]:
        # lazy id index; the dataclass is frozen so cache via object.__setattr__
        idx = getattr(self, "_id_index", None)
        if idx is None:
            idx = {s.id: s for s in self.samples}
            object.__setattr__(self, "_id_index", idx)
        return idx

    def subset(self, ids: Iterable[str]) -> "Corpus":
        """Sub-corpus containing ``ids`` in the given order, without a split."""
        index = self._index()
        return Corpus(self.schema, tuple(index[i] for i in ids), split=None)

    def train_view(self) -> "Corpus":
        if self.split is None:
            return replace(self, split=None)
        return self.subset(self.split.train)

    def test_view(self) -> "Corpus":
        if self.split is None:
            raise ValueError("corpus has no split")
        return self.subset(self.split.test)

    def label_matrix(self) -> np.ndarray:
        return np.array([s.labels for s in self.samples], dtype=np.int64).reshape(
            len(self.samples), len(self.schema.classes)
        )


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    assignment: dict[str, int]
    seed: int

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        bad = {i: f for i, f in self.assignment.items() if not 0 <= f < self.k}
        if bad:
            raise ValueError(f"fold indices out of range: {bad}")

    def fold_ids(self, fold: int) -> list[str]:
        return [i for i, f in self.assignment.items() if f == fold]


_JIGSAW_HEADER = [
    "id", "comment_text",
    "toxic", "severe_toxic", "obscene", "threat", "insult", "identity_hate",
]


def load_dataset(path: str | Path, schema: LabelSchema, format: str) -> Corpus:
    """Parse one source CSV into a Corpus, preserving file order.

    Jigsaw rows whose label fields are all -1 (the unscored-test sentinel)
    are dropped.
    """
    path = Path(path)
    if format == "jigsaw_csv":
        samples = _load_jigsaw(path, schema)
    elif format == "davidson_csv":
        samples = _load_davidson(path, schema)
    else:
        raise ValueError(f"unknown format {format!r}")
    return Corpus(schema=schema, samples=tuple(samples))


def _read_rows(path: Path) -> Iterable[list[str]]:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except UnicodeDecodeError as exc:  # pragma: no cover - open() rarely raises this
        raise IngestionError(str(exc))
    with fh:
        try:
            yield from csv.reader(fh)
        except UnicodeDecodeError as exc:
            raise IngestionError(f"non-UTF8 bytes: {exc}")


def _load_jigsaw(path: Path, schema: LabelSchema) -> list[Comment]:
    rows = iter(_read_rows(path))
    header = next(rows, None)
    if header is None or header != _JIGSAW_HEADER:
        raise IngestionError(f"bad jigsaw header {header!r}", row=1)
    samples = []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(_JIGSAW_HEADER):
            raise IngestionError(f"expected {len(_JIGSAW_HEADER)} columns, got {len(row)}", row=lineno)
        try:
            bits = [int(v) for v in row[2:]]
        except ValueError:
            raise IngestionError(f"non-integer label in {row[2:]!r}", row=lineno)
        if any(b not in (-1, 0, 1) for b in bits):
            raise IngestionError(f"label outside {{-1,0,1}}: {bits!r}", row=lineno)
        if all(b == -1 for b in bits):
            continue  # Kaggle unscored-test sentinel
        if any(b == -1 for b in bits):
            raise IngestionError("mixed -1 sentinel and real labels", row=lineno)
        samples.append(Comment(id=row[0], text=row[1], labels=tuple(bits)))
    return samples


# Davidson class codes: 0=hate, 1=offensive, 2=neither.
_DAVIDSON_CLASS_ORDER = ("hate", "offensive", "clean")


def _load_davidson(path: Path, schema: LabelSchema) -> list[Comment]:
    rows = iter(_read_rows(path))
    header = next(rows, None)
    if header is None or "tweet" not in header or "class" not in header:
        raise IngestionError(f"davidson header must include 'tweet' and 'class', got {header!r}", row=1)
    tweet_col = header.index("tweet")
    class_col = header.index("class")
    id_col = header.index("id") if "id" in header else None
    samples = []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise IngestionError(f"expected {len(header)} columns, got {len(row)}", row=lineno)
        try:
            cls = int(row[class_col])
        except ValueError:
            raise IngestionError(f"non-integer class {row[class_col]!r}", row=lineno)
        if cls not in (0, 1, 2):
            raise IngestionError(f"class outside {{0,1,2}}: {cls}", row=lineno)
        bits = [0] * len(schema.classes)
        bits[schema.classes.index(_DAVIDSON_CLASS_ORDER[cls])] = 1
        sample_id = row[id_col] if id_col is not None else str(lineno - 2)
        samples.append(Comment(id=sample_id, text=row[tweet_col], labels=tuple(bits)))
    return samples


def class_distribution(corpus: Corpus) -> dict[str, int]:
    """Per-class occurrence counts; multi-label schemas also get 'clean'."""
    mat = corpus.label_matrix()
    counts = {c: int(mat[:, j].sum()) for j, c in enumerate(corpus.schema.classes)}
    if corpus.schema.kind == "multi_label":
        counts["clean"] = int((mat.sum(axis=1) == 0).sum()) if len(corpus) else 0
    return counts


def split_folds(corpus: Corpus, k: int, seed: int) -> FoldAssignment:
    """Stratified k-fold assignment over the train split.

    Multi-class: plain per-class stratification (fold sizes within each
    class differ by at most one).  Multi-label: iterative stratification,
    rarest class first, so sparse classes spread evenly across folds.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    view = corpus.train_view()
    if len(view) < k:
        raise ValueError(f"k={k} exceeds train sample count {len(view)}")
    rng = derive_rng(seed, "split_folds", k)
    mat = view.label_matrix()
    ids = view.ids

    assignment: dict[str, int] = {}
    if corpus.schema.kind == "multi_class":
        for j in range(mat.shape[1]):
            members = [i for i in range(len(ids)) if mat[i, j] == 1]
            rng.shuffle(members)
            for pos, i in enumerate(members):
                assignment[ids[i]] = pos % k
    else:
        assignment_idx: dict[int, int] = {}
        class_order = np.argsort(mat.sum(axis=0), kind="stable")  # rarest first
        fold_class_counts = np.zeros((k, mat.shape[1]), dtype=np.int64)
        fold_sizes = np.zeros(k, dtype=np.int64)
        for j in class_order:
            members = [i for i in range(len(ids)) if mat[i, j] == 1 and i not in assignment_idx]
            rng.shuffle(members)
            for i in members:
                # fold wanting this class most; break ties by overall load
                counts = fold_class_counts[:, j]
                candidates = np.flatnonzero(counts == counts.min())
                f = int(candidates[np.argmin(fold_sizes[candidates], keepdims=False)])
                assignment_idx[i] = f
                fold_class_counts[f] += mat[i]
                fold_sizes[f] += 1
        clean = [i for i in range(len(ids)) if i not in assignment_idx]
        rng.shuffle(clean)
        for i in clean:
            f = int(np.argmin(fold_sizes))
            assignment_idx[i] = f
            fold_sizes[f] += 1
        assignment = {ids[i]: f for i, f in assignment_idx.items()}

    return FoldAssignment(k=k, assignment=assignment, seed=seed)


def stratified_holdout(corpus: Corpus, test_fraction: float, seed: int) -> Corpus:
    """Attach a seeded stratified train/test split (used for Twitter)."""
    mat = corpus.label_matrix()
    ids = corpus.ids
    rng = derive_rng(seed, "holdout", test_fraction)
    test: list[str] = []
    primary = mat.argmax(axis=1)  # exact class for multi_class; first set bit else
    clean_mask = mat.sum(axis=1) == 0
    strata = np.where(clean_mask, -1, primary)
    for stratum in np.unique(strata):
        members = [i for i in range(len(ids)) if strata[i] == stratum]
        rng.shuffle(members)
        n_test = int(round(len(members) * test_fraction))
        test.extend(ids[i] for i in members[:n_test])
    test_set = set(test)
    train = tuple(i for i in ids if i not in test_set)
    ordered_test = tuple(i for i in ids if i in test_set)
    return replace(corpus, split=TrainTestSplit(train=train, test=ordered_test))


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write canonical NDJSON records plus a schema sidecar."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for s in corpus.samples:
            fh.write(json.dumps({"id": s.id, "text": s.text, "labels": list(s.labels)},
                                ensure_ascii=False) + "\n")
    sidecar = {
        "schema": {
            "name": corpus.schema.name,
            "kind": corpus.schema.kind,
            "classes": list(corpus.schema.classes),
        },
        "split": None if corpus.split is None else {
            "train": list(corpus.split.train),
            "test": list(corpus.split.test),
        },
    }
    _sidecar_path(path).write_text(json.dumps(sidecar, indent=2), encoding="utf-8")


def load_corpus(path: str | Path) -> Corpus:
    path = Path(path)
    sidecar = json.loads(_sidecar_path(path).read_text(encoding="utf-8"))
    schema = LabelSchema(
        name=sidecar["schema"]["name"],
        kind=sidecar["schema"]["kind"],
        classes=tuple(sidecar["schema"]["classes"]),
    )
    samples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            samples.append(Comment(id=rec["id"], text=rec["text"], labels=tuple(rec["labels"])))
    split = None
    if sidecar["split"] is not None:
        split = TrainTestSplit(
            train=tuple(sidecar["split"]["train"]),
            test=tuple(sidecar["split"]["test"]),
        )
    return Corpus(schema=schema, samples=tuple(samples), split=split)


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".schema.json")
