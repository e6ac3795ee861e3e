"""fit/predict contract tying corpora and feature artifacts to the learners."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from ..corpus import Corpus
from ..embeddings import EmbeddingTable
from ..features import (PAD_ID, UNK_ID, ConfigurationError, TfidfConfig, Tokenizer,
                        Vocabulary, encode_sequence, tfidf_fit)
from ..rng import derive_rng
from . import logistic
from .network import NeuralNetwork, train_network
from .spec import ClassifierSpec, PredictionMatrix, TrainedModel

MODEL_FORMAT_VERSION = 1


def fit(spec: ClassifierSpec, train_view: Corpus, val_view: Corpus,
        embedding_table: EmbeddingTable | None = None) -> TrainedModel:
    """Train one classifier on the train view, monitoring the validation view."""
    if len(train_view) == 0 or len(val_view) == 0:
        raise ValueError("train and validation views must be non-empty")
    schema = train_view.schema
    expected_head = "sigmoid_per_class" if schema.kind == "multi_label" else "softmax"
    if spec.head != expected_head:
        raise ConfigurationError(
            f"head {spec.head!r} does not match schema kind {schema.kind!r}")
    if spec.family in ("lr_word", "lr_char"):
        model = _fit_logistic(spec, train_view)
    else:
        model = _fit_neural(spec, train_view, val_view, embedding_table)
    model.check_finite()
    return model


def _fit_logistic(spec: ClassifierSpec, train_view: Corpus) -> TrainedModel:
    hp = spec.hyperparameters
    config = TfidfConfig(
        analyzer="word" if spec.family == "lr_word" else "char",
        n_min=int(hp["n_min"]), n_max=int(hp["n_max"]),
        max_features=int(hp["max_features"]), min_frequency=int(hp["min_frequency"]),
    )
    tfidf = tfidf_fit(train_view, config)
    X = tfidf.transform([s.text for s in train_view.samples])
    Y = train_view.label_matrix().astype(np.float64)
    l2 = float(hp["l2"])
    max_iter = int(hp["max_iterations"])
    log: list[dict[str, Any]] = []
    if train_view.schema.kind == "multi_label":
        W = np.zeros((tfidf.dimension, Y.shape[1]))
        b = np.zeros(Y.shape[1])
        for j, cls in enumerate(train_view.schema.classes):
            W[:, j], b[j], loss = logistic.fit_binary(X, Y[:, j], l2, max_iter)
            log.append({"class": cls, "final_loss": loss})
    else:
        W, b, loss = logistic.fit_multinomial(X, Y, l2, max_iter)
        log.append({"final_loss": loss})
    return TrainedModel(
        spec=spec, classes=train_view.schema.classes,
        payload={"kind": "logistic", "tfidf": tfidf, "W": W, "b": b},
        training_log=log,
    )


def _fit_neural(spec: ClassifierSpec, train_view: Corpus, val_view: Corpus,
                embedding_table: EmbeddingTable | None) -> TrainedModel:
    hp = spec.hyperparameters
    tokenizer = Tokenizer()
    train_tokens = [tokenizer(s.text) for s in train_view.samples]
    vocab = Vocabulary.build(train_tokens, max_size=int(hp["vocab_size"]),
                             min_frequency=int(hp["min_frequency"]))
    max_len = int(hp["max_len"])
    X_train = np.stack([encode_sequence(vocab, t, max_len) for t in train_tokens])
    X_val = np.stack([encode_sequence(vocab, tokenizer(s.text), max_len)
                      for s in val_view.samples]) if len(val_view) else np.zeros((0, max_len), dtype=np.int64)
    Y_train = train_view.label_matrix().astype(np.float64)
    Y_val = val_view.label_matrix().astype(np.float64)

    embedding_matrix, freeze = _resolve_embeddings(spec, vocab, embedding_table)
    seed = int(hp["seed"])
    net = NeuralNetwork(
        spec.family, vocab_size=len(vocab), n_classes=Y_train.shape[1],
        head=spec.head, hp=hp, seed=seed, dtype=np.float32,
        embedding_matrix=embedding_matrix, freeze_embeddings=freeze,
    )
    log = train_network(net, X_train, Y_train, X_val, Y_val, hp, seed)
    return TrainedModel(
        spec=spec, classes=train_view.schema.classes,
        payload={
            "kind": "neural", "vocab": vocab, "params": net.params,
            "config": {"family": spec.family, "head": spec.head,
                       "n_classes": Y_train.shape[1], "hp": hp,
                       "freeze_embeddings": freeze, "max_len": max_len},
        },
        training_log=log,
    )


def _resolve_embeddings(spec: ClassifierSpec, vocab: Vocabulary,
                        table: EmbeddingTable | None) -> tuple[np.ndarray | None, bool]:
    if spec.embedding_source == "learned_from_scratch":
        return None, False
    if table is None:
        path = spec.hyperparameters.get("embedding_path")
        if not path:
            raise ConfigurationError(
                f"{spec.embedding_source} requires an embedding table or embedding_path")
        if not Path(path).exists():
            raise ConfigurationError(f"embedding file not found: {path}")
        table = EmbeddingTable.load(path)
    rng = derive_rng(int(spec.hyperparameters["seed"]), "emb_init")
    matrix = np.zeros((len(vocab), table.dimension), dtype=np.float32)
    matrix[UNK_ID] = rng.uniform(-0.05, 0.05, size=table.dimension)
    for token, idx in vocab.token_to_id.items():
        vec = table.lookup(token)
        if not vec.any() and not table.has_subwords():
            vec = rng.uniform(-0.05, 0.05, size=table.dimension)
        matrix[idx] = vec
    matrix[PAD_ID] = 0.0
    return matrix, True


def predict(model: TrainedModel, view: Corpus) -> PredictionMatrix:
    """Per-class probability scores for every sample of the view, in order."""
    texts = [s.text for s in view.samples]
    if model.payload["kind"] == "logistic":
        tfidf = model.payload["tfidf"]
        X = tfidf.transform(texts)
        if model.spec.head == "sigmoid_per_class":
            scores = np.column_stack([
                logistic.predict_binary(model.payload["W"][:, j],
                                        model.payload["b"][j], X)
                for j in range(len(model.classes))
            ]) if len(texts) else np.zeros((0, len(model.classes)))
        else:
            scores = logistic.predict_multinomial(model.payload["W"],
                                                  model.payload["b"], X)
    else:
        cfg = model.payload["config"]
        vocab = model.payload["vocab"]
        tokenizer = Tokenizer()
        ids = (np.stack([encode_sequence(vocab, tokenizer(t), cfg["max_len"])
                         for t in texts])
               if texts else np.zeros((0, cfg["max_len"]), dtype=np.int64))
        net = NeuralNetwork(cfg["family"], vocab_size=len(vocab),
                            n_classes=cfg["n_classes"], head=cfg["head"],
                            hp=cfg["hp"], dtype=np.float32,
                            freeze_embeddings=cfg["freeze_embeddings"])
        net.params = model.payload["params"]
        scores = net.predict_proba(ids)
    scores = np.clip(scores, 0.0, 1.0)
    return PredictionMatrix(ids=view.ids, classes=model.classes, scores=scores,
                            producer=model.spec.identifier)


def save_model(model: TrainedModel, path: str | Path) -> None:
    """Versioned binary: arrays in an npz, everything else in a json sidecar."""
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    meta: dict[str, Any] = {
        "version": MODEL_FORMAT_VERSION,
        "spec": {"family": model.spec.family,
                 "embedding_source": model.spec.embedding_source,
                 "head": model.spec.head,
                 "hyperparameters": model.spec.hyperparameters,
                 "name": model.spec.name},
        "spec_hash": model.spec.spec_hash(),
        "classes": list(model.classes),
        "kind": model.payload["kind"],
        "training_log": model.training_log,
    }
    if model.payload["kind"] == "logistic":
        arrays["W"] = model.payload["W"]
        arrays["b"] = np.atleast_1d(model.payload["b"])
        arrays["tfidf_df"] = model.payload["tfidf"].document_frequency
        tfidf = model.payload["tfidf"]
        meta["tfidf"] = {"config": tfidf.config.__dict__,
                         "features": tfidf.feature_to_index,
                         "n_documents": tfidf.n_documents}
    else:
        for k, v in model.payload["params"].items():
            arrays[f"param_{k}"] = v
        vocab = model.payload["vocab"]
        meta["vocab"] = {"tokens": vocab.token_to_id, "max_size": vocab.max_size,
                         "min_frequency": vocab.min_frequency}
        meta["config"] = {k: v for k, v in model.payload["config"].items()}
    np.savez_compressed(path, **arrays)
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(meta, default=_json_default), encoding="utf-8")


def load_model(path: str | Path) -> TrainedModel:
    from ..features import TfidfModel

    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
    if meta["version"] != MODEL_FORMAT_VERSION:
        raise ConfigurationError(f"unsupported model format version {meta['version']}")
    arrays = np.load(path, allow_pickle=False)
    spec = ClassifierSpec(**meta["spec"])
    if spec.spec_hash() != meta["spec_hash"]:
        raise ConfigurationError("model file spec hash mismatch")
    if meta["kind"] == "logistic":
        tfidf = TfidfModel(
            config=TfidfConfig(**meta["tfidf"]["config"]),
            feature_to_index=dict(meta["tfidf"]["features"]),
            document_frequency=arrays["tfidf_df"],
            n_documents=meta["tfidf"]["n_documents"],
        )
        payload = {"kind": "logistic", "tfidf": tfidf, "W": arrays["W"], "b": arrays["b"]}
    else:
        vocab = Vocabulary(token_to_id=dict(meta["vocab"]["tokens"]),
                           max_size=meta["vocab"]["max_size"],
                           min_frequency=meta["vocab"]["min_frequency"])
        params = {k[len("param_"):]: arrays[k] for k in arrays.files
                  if k.startswith("param_")}
        payload = {"kind": "neural", "vocab": vocab, "params": params,
                   "config": meta["config"]}
    return TrainedModel(spec=spec, classes=tuple(meta["classes"]), payload=payload,
                        training_log=meta["training_log"])


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")
