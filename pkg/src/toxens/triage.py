"""Human error-triage workflow: sample misclassified comments for a focal
class, collect binary error-class annotations, and report tag frequencies.

Annotation is tri-state: an item is unannotated, explicitly annotated empty
(reviewed, no error class applies), or tagged.  Percentages are computed
over annotated items only, and every tag other than ``doubtful_label`` is
reported over the subset whose gold label the annotator did not dispute.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus
from .rng import derive_rng

FN_TAGS = (
    "doubtful_label",
    "no_swear_words",
    "rhetorical_question",
    "metaphor_comparison",
    "rare_words",
    "sarcasm_irony",
)
FP_TAGS = (
    "doubtful_label",
    "swear_word_usage",
    "quotation_reference",
    "rare_words",
)

TAG_DESCRIPTIONS = {
    "doubtful_label": "the gold label looks wrong under the class definition",
    "no_swear_words": "toxic content without any common hate or swear word",
    "rhetorical_question": "toxicity wrapped in a rhetorical or suggestive question",
    "metaphor_comparison": "subtle metaphor or comparison needing world knowledge",
    "rare_words": "misspellings, neologisms, obfuscations, abbreviations, slang",
    "sarcasm_irony": "text states the opposite of what is meant",
    "swear_word_usage": "non-toxic comment flagged because it contains swear words",
    "quotation_reference": "quoted or referenced toxic language in a non-toxic comment",
}


class ValidationError(ValueError):
    pass


class ReportError(ValueError):
    pass


def taxonomy_for(kind: str) -> tuple[str, ...]:
    if kind == "FN":
        return FN_TAGS
    if kind == "FP":
        return FP_TAGS
    raise ValueError(f"kind must be 'FN' or 'FP', got {kind!r}")


@dataclass
class TriageItem:
    id: str
    text: str
    gold: list[int]
    score: float


@dataclass
class TriageSession:
    session_id: str
    focal_class: str
    kind: str  # "FN" | "FP"
    items: list[TriageItem]
    seed: int
    population_size: int
    annotations: dict[str, list[str]] = field(default_factory=dict)
    audit_log: list[dict] = field(default_factory=list)

    @property
    def taxonomy(self) -> tuple[str, ...]:
        return taxonomy_for(self.kind)

    def progress(self) -> tuple[int, int]:
        return len(self.annotations), len(self.items)

    def record_annotation(self, item_id: str, tags: Sequence[str]) -> None:
        """Store tags for one item (empty list = reviewed and clean).

        Repeated annotation overwrites; the audit log keeps every write.
        """
        if item_id not in {i.id for i in self.items}:
            raise ValidationError(f"unknown item {item_id!r}")
        bad = [t for t in tags if t not in self.taxonomy]
        if bad:
            raise ValidationError(
                f"tags {bad} are not in the {self.kind} taxonomy {list(self.taxonomy)}")
        tags = sorted(set(tags))
        self.audit_log.append({"item": item_id, "tags": tags, "time": time.time()})
        self.annotations[item_id] = tags

    def save(self, path: str | Path) -> None:
        payload = {
            "version": 1,
            "session_id": self.session_id,
            "focal_class": self.focal_class,
            "kind": self.kind,
            "seed": self.seed,
            "population_size": self.population_size,
            "items": [{"id": i.id, "text": i.text, "gold": i.gold, "score": i.score}
                      for i in self.items],
            "annotations": self.annotations,
            "audit_log": self.audit_log,
        }
        Path(path).write_text(json.dumps(payload, ensure_ascii=False, indent=2),
                              encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TriageSession":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            session_id=payload["session_id"],
            focal_class=payload["focal_class"],
            kind=payload["kind"],
            items=[TriageItem(**i) for i in payload["items"]],
            seed=payload["seed"],
            population_size=payload["population_size"],
            annotations={k: list(v) for k, v in payload["annotations"].items()},
            audit_log=payload["audit_log"],
        )


def sample_errors(corpus_view: Corpus, binary_preds: np.ndarray, scores: np.ndarray,
                  focal_class: str, kind: str, n: int, seed: int,
                  session_id: str | None = None) -> TriageSession:
    """Uniform sample (without replacement) of misclassified comments.

    FN: gold positive, predicted negative; FP: gold negative, predicted
    positive — for the focal class.  An empty population yields an empty
    session.
    """
    taxonomy_for(kind)  # validates kind
    classes = corpus_view.schema.classes
    j = classes.index(focal_class)
    gold = corpus_view.label_matrix()[:, j]
    pred = np.asarray(binary_preds)[:, j]
    if kind == "FN":
        population = np.flatnonzero((gold == 1) & (pred == 0))
    else:
        population = np.flatnonzero((gold == 0) & (pred == 1))
    rng = derive_rng(seed, "triage", focal_class, kind)
    take = min(n, len(population))
    chosen = sorted(rng.choice(population, size=take, replace=False).tolist())
    items = [
        TriageItem(id=corpus_view.samples[i].id, text=corpus_view.samples[i].text,
                   gold=list(corpus_view.samples[i].labels),
                   score=float(scores[i, j]))
        for i in chosen
    ]
    return TriageSession(
        session_id=session_id or f"{focal_class}-{kind}-{seed}",
        focal_class=focal_class, kind=kind, items=items, seed=seed,
        population_size=int(len(population)),
    )


def record_annotation(session: TriageSession, item_id: str,
                      tags: Sequence[str]) -> TriageSession:
    session.record_annotation(item_id, tags)
    return session


def frequency_report(session: TriageSession) -> dict:
    """Two accounting tables mirroring the error-analysis protocol.

    ``raw``: doubtful_label percentage over all annotated items.
    ``undoubtful``: every other tag's percentage over annotated items whose
    labels were not disputed.  Unannotated items never enter a denominator.
    """
    if not session.annotations:
        raise ReportError("nothing annotated yet")
    annotated = list(session.annotations.items())
    n_annotated = len(annotated)
    n_doubtful = sum(1 for _, tags in annotated if "doubtful_label" in tags)
    undoubtful = [(i, tags) for i, tags in annotated if "doubtful_label" not in tags]
    raw = {"doubtful_label": 100.0 * n_doubtful / n_annotated}
    sub: dict[str, float] = {}
    for tag in session.taxonomy:
        if tag == "doubtful_label":
            continue
        hits = sum(1 for _, tags in undoubtful if tag in tags)
        sub[tag] = 100.0 * hits / len(undoubtful) if undoubtful else 0.0
    return {
        "session_id": session.session_id,
        "kind": session.kind,
        "focal_class": session.focal_class,
        "population_size": session.population_size,
        "annotated": n_annotated,
        "total_items": len(session.items),
        "raw": raw,
        "undoubtful_count": len(undoubtful),
        "undoubtful": sub,
    }
