"""Word embeddings: subword skip-gram training and pretrained-file loading.

Trained tables carry hashed character-n-gram bucket vectors so that
misspelled and obfuscated words still resolve to something meaningful:
a word's stored vector is the sum of its word row and its subword bucket
rows, and out-of-vocabulary words fall back to the mean of their bucket
vectors.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .features import ConfigurationError
from .rng import derive_rng, fnv1a64


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class SkipgramConfig:
    dimension: int = 100
    window: int = 5
    epochs: int = 5
    negative_samples: int = 5
    learning_rate: float = 0.05
    subword_n_min: int = 3
    subword_n_max: int = 6
    bucket_count: int = 1 << 21
    min_count: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.window < 1 or self.epochs < 1:
            raise ValueError("window and epochs must be >= 1")
        if self.bucket_count & (self.bucket_count - 1):
            raise ValueError("bucket_count must be a power of two")


@dataclass
class EmbeddingTable:
    dimension: int
    word_index: dict[str, int]
    word_vectors: np.ndarray  # (V, d)
    bucket_vectors: np.ndarray | None = None  # (B, d) for subword tables
    subword_range: tuple[int, int] | None = None
    metadata: dict = field(default_factory=dict)

    def has_subwords(self) -> bool:
        return self.bucket_vectors is not None

    def bucket_of(self, gram: str) -> int:
        assert self.bucket_vectors is not None
        return fnv1a64(gram) & (self.bucket_vectors.shape[0] - 1)

    def lookup(self, word: str) -> np.ndarray:
        """Total lookup: a d-vector for every string."""
        idx = self.word_index.get(word)
        if idx is not None:
            return self.word_vectors[idx].copy()
        if self.bucket_vectors is None:
            return np.zeros(self.dimension, dtype=self.word_vectors.dtype)
        grams = framed_ngrams(word, *self.subword_range)
        if not grams:
            return np.zeros(self.dimension, dtype=self.word_vectors.dtype)
        rows = np.array([self.bucket_of(g) for g in grams])
        return self.bucket_vectors[rows].mean(axis=0)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        arrays = {"word_vectors": self.word_vectors}
        if self.bucket_vectors is not None:
            arrays["bucket_vectors"] = self.bucket_vectors
        np.savez_compressed(path, **arrays)
        meta = {
            "version": 1,
            "dimension": self.dimension,
            "words": list(self.word_index),
            "subword_range": self.subword_range,
            "metadata": self.metadata,
        }
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingTable":
        path = Path(path)
        meta = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
        arrays = np.load(path if path.suffix == ".npz" else path.with_suffix(path.suffix))
        words = {w: i for i, w in enumerate(meta["words"])}
        subword_range = tuple(meta["subword_range"]) if meta["subword_range"] else None
        return cls(
            dimension=meta["dimension"],
            word_index=words,
            word_vectors=arrays["word_vectors"],
            bucket_vectors=arrays["bucket_vectors"] if "bucket_vectors" in arrays else None,
            subword_range=subword_range,
            metadata=meta["metadata"],
        )


def lookup(table: EmbeddingTable, word: str) -> np.ndarray:
    return table.lookup(word)


def framed_ngrams(word: str, n_min: int, n_max: int) -> list[str]:
    """Character n-grams of '<word>' (boundary markers included)."""
    framed = f"<{word}>"
    grams = []
    for n in range(n_min, n_max + 1):
        for i in range(len(framed) - n + 1):
            grams.append(framed[i : i + n])
    return grams


def positive_pairs(tokens: Sequence[int], window: int) -> Iterator[tuple[int, int]]:
    """(center, context) index pairs for one sentence with a fixed window."""
    for t in range(len(tokens)):
        lo = max(0, t - window)
        hi = min(len(tokens), t + window + 1)
        for c in range(lo, hi):
            if c != t:
                yield tokens[t], tokens[c]


def _sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -30, 30)))


def train_skipgram(sentences: Iterable[Sequence[str]], config: SkipgramConfig) -> EmbeddingTable:
    """Negative-sampling skip-gram with subword input vectors.

    Deterministic given the seed when run as-is (single-threaded).  The
    input side of a word is its word row plus its subword bucket rows;
    context (output) vectors are word-level only.
    """
    sentences = [list(s) for s in sentences if len(s) > 0]
    if not sentences:
        raise ConfigurationError("skip-gram training needs at least one non-empty sentence")

    counts: dict[str, int] = {}
    for s in sentences:
        for w in s:
            counts[w] = counts.get(w, 0) + 1
    words = sorted((w for w, c in counts.items() if c >= config.min_count),
                   key=lambda w: (-counts[w], w))
    if not words:
        raise ConfigurationError("empty vocabulary after min_count")
    word_index = {w: i for i, w in enumerate(words)}
    V, d = len(words), config.dimension

    rng = derive_rng(config.seed, "skipgram")
    word_in = (rng.random((V, d)) - 0.5) / d
    bucket_in = (rng.random((config.bucket_count, d)) - 0.5) / d
    context = np.zeros((V, d))

    # hashed subword rows per vocabulary word, precomputed
    word_grams = [
        np.array([fnv1a64(g) & (config.bucket_count - 1)
                  for g in framed_ngrams(w, config.subword_n_min, config.subword_n_max)],
                 dtype=np.int64)
        for w in words
    ]

    # unigram^(3/4) negative-sampling distribution
    freq = np.array([counts[w] for w in words], dtype=np.float64) ** 0.75
    noise = freq / freq.sum()

    total_positions = config.epochs * sum(len(s) for s in sentences)
    processed = 0
    lr0 = config.learning_rate
    epoch_loss: list[float] = []

    encoded = [np.array([word_index[w] for w in s if w in word_index], dtype=np.int64)
               for s in sentences]

    for _epoch in range(config.epochs):
        loss_sum, loss_n = 0.0, 0
        for sent in encoded:
            for t in range(len(sent)):
                lr = lr0 * max(1e-4, 1.0 - processed / max(1, total_positions))
                processed += 1
                center = int(sent[t])
                grams = word_grams[center]
                v = word_in[center] + bucket_in[grams].sum(axis=0)
                lo = max(0, t - config.window)
                hi = min(len(sent), t + config.window + 1)
                for c in range(lo, hi):
                    if c == t:
                        continue
                    targets = np.empty(1 + config.negative_samples, dtype=np.int64)
                    targets[0] = sent[c]
                    targets[1:] = rng.choice(V, size=config.negative_samples, p=noise)
                    labels = np.zeros(len(targets))
                    labels[0] = 1.0
                    u = context[targets]
                    scores = _sigmoid(u @ v)
                    loss_sum += -np.log(np.clip(np.where(labels == 1, scores, 1 - scores),
                                                1e-10, None)).sum()
                    loss_n += len(targets)
                    g = (scores - labels) * lr  # d(loss)/d(score) * lr
                    dv = g @ u
                    context[targets] -= np.outer(g, v)
                    word_in[center] -= dv
                    if len(grams):
                        np.add.at(bucket_in, grams, -dv)
        epoch_loss.append(loss_sum / max(1, loss_n))

    composed = np.array([word_in[i] + bucket_in[word_grams[i]].sum(axis=0)
                         for i in range(V)])
    return EmbeddingTable(
        dimension=d,
        word_index=word_index,
        word_vectors=composed,
        bucket_vectors=bucket_in,
        subword_range=(config.subword_n_min, config.subword_n_max),
        metadata={
            "source": "skipgram",
            "window": config.window,
            "epochs": config.epochs,
            "seed": config.seed,
            "epoch_loss": epoch_loss,
        },
    )


def load_pretrained(path: str | Path) -> EmbeddingTable:
    """Load a text word-vector file (word + floats per line, optional header)."""
    path = Path(path)
    word_index: dict[str, int] = {}
    vectors: list[np.ndarray] = []
    duplicates = 0
    dim: int | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if not line.strip():
                continue
            if lineno == 1 and len(parts) == 2:
                try:
                    int(parts[0]), int(parts[1])
                    continue  # count/dim header
                except ValueError:
                    pass
            word, values = parts[0], parts[1:]
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}")
            if dim is None:
                if len(vec) == 0:
                    raise ParseError(f"line {lineno}: no vector components")
                dim = len(vec)
            elif len(vec) != dim:
                raise ParseError(f"line {lineno}: expected {dim} components, got {len(vec)}")
            if word in word_index:
                duplicates += 1
                vectors[word_index[word]] = vec  # last wins
            else:
                word_index[word] = len(vectors)
                vectors.append(vec)
    if dim is None:
        raise ParseError("empty word-vector file")
    return EmbeddingTable(
        dimension=dim,
        word_index=word_index,
        word_vectors=np.vstack(vectors),
        metadata={"source": str(path), "duplicate_words": duplicates},
    )
