"""Classifier configuration records, trained-model containers, prediction matrices."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..rng import fnv1a64

FAMILIES = ("lr_word", "lr_char", "cnn", "lstm", "bilstm", "bigru", "bigru_attention")
NEURAL_FAMILIES = ("cnn", "lstm", "bilstm", "bigru", "bigru_attention")
EMBEDDING_SOURCES = ("trained_subword", "pretrained_file", "learned_from_scratch")
HEADS = ("sigmoid_per_class", "softmax")


class TrainingError(RuntimeError):
    """Raised when training diverges (NaN loss) at a known epoch/batch."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


def default_hyperparameters(family: str) -> dict[str, Any]:
    hp: dict[str, Any] = {
        "seed": 0,
        "epochs": 4,
        "batch_size": 128,
        "learning_rate": 1e-3,
        "patience": 1,
        "max_len": 200,
        "embedding_dim": 100,
        "dropout": 0.1,
        "spatial_dropout": 0.1,
        "vocab_size": 100_000,
        "min_frequency": 2,
    }
    if family == "lstm":
        hp["units"] = 128
    elif family == "bilstm":
        hp["units"] = 128
    elif family in ("bigru", "bigru_attention"):
        hp["units"] = 64
    elif family == "cnn":
        hp["filter_widths"] = [3, 4, 5]
        hp["filters_per_width"] = 100
    elif family in ("lr_word", "lr_char"):
        hp = {
            "seed": 0,
            "l2": 1.0,
            "max_iterations": 1000,
            "n_min": 1 if family == "lr_word" else 2,
            "n_max": 2 if family == "lr_word" else 5,
            "max_features": 100_000 if family == "lr_word" else 300_000,
            "min_frequency": 2,
        }
    if family == "bigru_attention":
        hp["attention_dim"] = 64
    return hp


@dataclass(frozen=True)
class ClassifierSpec:
    family: str
    embedding_source: str = "learned_from_scratch"
    head: str = "sigmoid_per_class"
    hyperparameters: dict[str, Any] = field(default_factory=dict)
    name: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.embedding_source not in EMBEDDING_SOURCES:
            raise ValueError(f"unknown embedding source {self.embedding_source!r}")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        merged = default_hyperparameters(self.family)
        merged.update(self.hyperparameters)
        object.__setattr__(self, "hyperparameters", merged)

    @property
    def identifier(self) -> str:
        if self.name:
            return self.name
        if self.family in ("lr_word", "lr_char"):
            return self.family
        return f"{self.family}_{self.embedding_source}"

    def spec_hash(self) -> int:
        return fnv1a64(json.dumps(
            {"family": self.family, "embedding_source": self.embedding_source,
             "head": self.head, "hyperparameters": self.hyperparameters},
            sort_keys=True, default=str))


@dataclass
class TrainedModel:
    spec: ClassifierSpec
    classes: tuple[str, ...]
    payload: dict[str, Any]  # family-specific learned state
    training_log: list[dict[str, Any]] = field(default_factory=list)

    def check_finite(self) -> None:
        for key, value in self.payload.items():
            if isinstance(value, np.ndarray) and not np.isfinite(value).all():
                raise TrainingError(f"non-finite parameters in {key}")
            if isinstance(value, dict):
                for k2, v2 in value.items():
                    if isinstance(v2, np.ndarray) and not np.isfinite(v2).all():
                        raise TrainingError(f"non-finite parameters in {key}.{k2}")


@dataclass
class PredictionMatrix:
    ids: list[str]
    classes: tuple[str, ...]
    scores: np.ndarray  # (n_samples, n_classes) in [0,1]
    producer: str

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(
            len(self.ids), len(self.classes))
        if len(self.ids) and (self.scores.min() < 0 or self.scores.max() > 1):
            raise ValueError("prediction scores must lie in [0,1]")

    def column(self, cls: str) -> np.ndarray:
        return self.scores[:, self.classes.index(cls)]

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", *self.classes])
            for i, sample_id in enumerate(self.ids):
                writer.writerow([sample_id, *(repr(float(v)) for v in self.scores[i])])

    @classmethod
    def load_csv(cls, path: str | Path, producer: str = "file") -> "PredictionMatrix":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            ids, rows = [], []
            for row in reader:
                ids.append(row[0])
                rows.append([float(v) for v in row[1:]])
        scores = np.array(rows, dtype=np.float64) if rows else np.zeros((0, len(header) - 1))
        return cls(ids=ids, classes=tuple(header[1:]), scores=scores, producer=producer)

    def save_npz(self, path: str | Path) -> None:
        np.savez_compressed(
            path,
            scores=self.scores,
            ids=np.array(self.ids, dtype=object),
            classes=np.array(self.classes, dtype=object),
            producer=np.array(self.producer, dtype=object),
        )

    @classmethod
    def load_npz(cls, path: str | Path) -> "PredictionMatrix":
        data = np.load(path, allow_pickle=True)
        return cls(
            ids=[str(i) for i in data["ids"]],
            classes=tuple(str(c) for c in data["classes"]),
            scores=data["scores"],
            producer=str(data["producer"]),
        )
