"""Text featurization: tokenization, vocabularies, n-grams, TF-IDF.

The shallow classifiers consume L2-normalized TF-IDF vectors over word or
character n-grams; the neural classifiers consume fixed-length token-id
sequences.  Everything here is deterministic and pure after fitting.
"""
from __future__ import annotations

import json
import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import Corpus
from .rng import fnv1a64

PAD_ID = 0
UNK_ID = 1

_URL_RE = re.compile(r"https?://\S+|www\.\S+")
_MENTION_RE = re.compile(r"@\w+")
# placeholders, words (letters/digits/apostrophes), or single punctuation marks
_TOKEN_RE = re.compile(r"<url>|<user>|[\w']+|[^\w\s]")


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class Tokenizer:
    """Normalizing word tokenizer.

    Rules, in order: unicode NFC, optional lowercasing, URL and @-mention
    folding to placeholder tokens, then splitting into word tokens and
    single punctuation tokens.
    """

    lowercase: bool = True
    fold_urls: bool = True
    fold_mentions: bool = True

    def __call__(self, text: str) -> list[str]:
        text = unicodedata.normalize("NFC", text)
        if self.lowercase:
            text = text.lower()
        if self.fold_urls:
            text = _URL_RE.sub(" <url> ", text)
        if self.fold_mentions:
            text = _MENTION_RE.sub(" <user> ", text)
        return [t for t in _TOKEN_RE.findall(text) if t]


def tokenize(text: str, tokenizer: Tokenizer | None = None) -> list[str]:
    return (tokenizer or Tokenizer())(text)


def char_ngrams(text: str, n_min: int, n_max: int) -> Counter:
    """All contiguous character n-grams of lengths n_min..n_max, with counts."""
    if not 1 <= n_min <= n_max:
        raise ValueError(f"bad n-gram range {n_min}..{n_max}")
    grams: Counter = Counter()
    for n in range(n_min, n_max + 1):
        for i in range(len(text) - n + 1):
            grams[text[i : i + n]] += 1
    return grams


def word_ngrams(tokens: Sequence[str], n_min: int, n_max: int) -> Counter:
    grams: Counter = Counter()
    for n in range(n_min, n_max + 1):
        for i in range(len(tokens) - n + 1):
            grams[" ".join(tokens[i : i + n])] += 1
    return grams


@dataclass
class Vocabulary:
    """token -> dense integer id; 0 is padding, 1 is unknown."""

    token_to_id: dict[str, int]
    max_size: int
    min_frequency: int

    @classmethod
    def build(cls, token_lists: Iterable[Sequence[str]], max_size: int = 100_000,
              min_frequency: int = 2) -> "Vocabulary":
        counts: Counter = Counter()
        for tokens in token_lists:
            counts.update(tokens)
        # frequency desc, then lexicographic, so ids are reproducible
        ranked = sorted(
            (t for t, c in counts.items() if c >= min_frequency),
            key=lambda t: (-counts[t], t),
        )[: max_size - 2]
        mapping = {t: i + 2 for i, t in enumerate(ranked)}
        return cls(token_to_id=mapping, max_size=max_size, min_frequency=min_frequency)

    def __len__(self) -> int:
        return len(self.token_to_id) + 2

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def config_hash(self) -> int:
        return fnv1a64(f"vocab:{self.max_size}:{self.min_frequency}")

    def save(self, path: str | Path) -> None:
        payload = {
            "version": 1,
            "config_hash": self.config_hash(),
            "max_size": self.max_size,
            "min_frequency": self.min_frequency,
            "tokens": self.token_to_id,
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        vocab = cls(
            token_to_id=dict(payload["tokens"]),
            max_size=payload["max_size"],
            min_frequency=payload["min_frequency"],
        )
        if payload["config_hash"] != vocab.config_hash():
            raise ConfigurationError("vocabulary file config hash mismatch")
        return vocab


def encode_sequence(vocab: Vocabulary, tokens: Sequence[str], max_len: int) -> np.ndarray:
    """First ``max_len`` token ids, unknowns -> 1, right-padded with 0."""
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    for i, tok in enumerate(tokens[:max_len]):
        ids[i] = vocab.id_of(tok)
    return ids


@dataclass(frozen=True)
class TfidfConfig:
    analyzer: str = "word"  # "word" | "char"
    n_min: int = 1
    n_max: int = 2
    max_features: int = 100_000
    min_frequency: int = 2  # minimum document frequency
    sublinear_tf: bool = True


@dataclass
class TfidfModel:
    """Fitted TF-IDF vectorizer over word or character n-grams.

    idf(t) = ln((1+N)/(1+df(t))) + 1; transforms are L2-normalized.
    """

    config: TfidfConfig
    feature_to_index: dict[str, int]
    document_frequency: np.ndarray
    n_documents: int
    tokenizer: Tokenizer = field(default_factory=Tokenizer)

    @property
    def dimension(self) -> int:
        return len(self.feature_to_index)

    def idf(self) -> np.ndarray:
        return np.log((1.0 + self.n_documents) / (1.0 + self.document_frequency)) + 1.0

    def _analyze(self, text: str) -> Counter:
        if self.config.analyzer == "char":
            normalized = unicodedata.normalize("NFC", text).lower()
            return char_ngrams(normalized, self.config.n_min, self.config.n_max)
        return word_ngrams(self.tokenizer(text), self.config.n_min, self.config.n_max)

    def transform_one(self, text: str) -> tuple[np.ndarray, np.ndarray]:
        """Sparse vector for one document as (sorted indices, weights)."""
        grams = self._analyze(text)
        idf = self.idf()
        pairs = []
        for gram, count in grams.items():
            j = self.feature_to_index.get(gram)
            if j is None:
                continue
            tf = 1.0 + math.log(count) if self.config.sublinear_tf else float(count)
            pairs.append((j, tf * idf[j]))
        pairs.sort()
        indices = np.array([p[0] for p in pairs], dtype=np.int64)
        weights = np.array([p[1] for p in pairs], dtype=np.float64)
        norm = float(np.linalg.norm(weights))
        if norm > 0:
            weights /= norm
        return indices, weights

    def transform(self, texts: Sequence[str]) -> sp.csr_matrix:
        data, indices, indptr = [], [], [0]
        for text in texts:
            idx, w = self.transform_one(text)
            indices.extend(idx.tolist())
            data.extend(w.tolist())
            indptr.append(len(indices))
        return sp.csr_matrix(
            (np.array(data), np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
            shape=(len(texts), self.dimension),
        )

    def config_hash(self) -> int:
        c = self.config
        return fnv1a64(f"tfidf:{c.analyzer}:{c.n_min}:{c.n_max}:{c.max_features}:"
                       f"{c.min_frequency}:{c.sublinear_tf}")

    def save(self, path: str | Path) -> None:
        payload = {
            "version": 1,
            "config_hash": self.config_hash(),
            "config": self.config.__dict__,
            "features": self.feature_to_index,
            "df": self.document_frequency.tolist(),
            "n_documents": self.n_documents,
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TfidfModel":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        model = cls(
            config=TfidfConfig(**payload["config"]),
            feature_to_index=dict(payload["features"]),
            document_frequency=np.array(payload["df"], dtype=np.int64),
            n_documents=payload["n_documents"],
        )
        if payload["config_hash"] != model.config_hash():
            raise ConfigurationError("tfidf file config hash mismatch")
        return model


def tfidf_fit(corpus: Corpus, config: TfidfConfig,
              tokenizer: Tokenizer | None = None) -> TfidfModel:
    """Fit document frequencies on the corpus train split only."""
    view = corpus.train_view()
    if len(view) == 0:
        raise ConfigurationError("cannot fit tfidf on an empty train split")
    tokenizer = tokenizer or Tokenizer()
    model = TfidfModel(
        config=config,
        feature_to_index={},
        document_frequency=np.zeros(0, dtype=np.int64),
        n_documents=len(view),
        tokenizer=tokenizer,
    )
    df: Counter = Counter()
    for sample in view.samples:
        df.update(model._analyze(sample.text).keys())
    kept = sorted(
        (g for g, c in df.items() if c >= config.min_frequency),
        key=lambda g: (-df[g], g),
    )[: config.max_features]
    if not kept:
        raise ConfigurationError(
            "tfidf vocabulary is empty after frequency/size caps; relax the config"
        )
    model.feature_to_index = {g: j for j, g in enumerate(kept)}
    model.document_frequency = np.array([df[g] for g in kept], dtype=np.int64)
    return model


def tfidf_transform(model: TfidfModel, text: str) -> tuple[np.ndarray, np.ndarray]:
    return model.transform_one(text)
