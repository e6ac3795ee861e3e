"""Command-line orchestration of the full pipeline.

Subcommands: ingest, embed-train, fit, predict, oof, stack, evaluate,
thresholds, correlate, triage sample|serve|report.  Configuration is a
sectioned INI file parsed strictly: unknown sections or keys are hard
errors so typos never fall back to silent defaults.

Exit codes: 0 success, 1 validation/configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import ensemble as ens
from . import metrics as met
from . import triage as tri
from .corpus import (TWITTER_SCHEMA, WIKIPEDIA_SCHEMA, Corpus, FoldAssignment,
                     TrainTestSplit, class_distribution, load_corpus, load_dataset,
                     save_corpus, split_folds, stratified_holdout)
from .embeddings import SkipgramConfig, train_skipgram
from .features import ConfigurationError, Tokenizer
from .manifest import RunManifest, hash_config_text
from .models import ClassifierSpec, PredictionMatrix, fit, predict
from .models.api import load_model, save_model


class ConfigError(ValueError):
    pass


_SCHEMAS = {"wikipedia": WIKIPEDIA_SCHEMA, "twitter": TWITTER_SCHEMA}

_KNOWN_KEYS = {
    "dataset": {"train_path", "test_path", "format", "schema", "test_fraction",
                "corpus"},
    "features": {"max_len", "vocab_size", "min_frequency"},
    "embeddings": {"dimension", "window", "epochs", "negative_samples",
                   "learning_rate", "subword_n_min", "subword_n_max",
                   "bucket_count", "min_count", "output"},
    "ensemble": {"folds", "trees", "depth", "learning_rate", "min_leaf",
                 "meta_features", "swear_lexicon"},
    "metrics": {"granularity"},
    "triage": {"predictions", "thresholds", "focal_class", "kind", "n", "session"},
}
_MODEL_KEYS = {"family", "embedding_source", "head", "units", "epochs",
               "batch_size", "learning_rate", "patience", "max_len",
               "embedding_dim", "dropout", "spatial_dropout", "vocab_size",
               "min_frequency", "seed", "embedding_path", "filter_widths",
               "filters_per_width", "attention_dim", "l2", "max_iterations",
               "n_min", "n_max", "max_features", "val_fraction"}


def load_config(path: str | Path) -> tuple[configparser.ConfigParser, int]:
    parser = configparser.ConfigParser()
    text = Path(path).read_text(encoding="utf-8")
    parser.read_string(text)
    for section in parser.sections():
        if section.startswith("model."):
            known = _MODEL_KEYS
        elif section in _KNOWN_KEYS:
            known = _KNOWN_KEYS[section]
        else:
            raise ConfigError(f"unknown config section [{section}]")
        unknown = set(parser[section]) - known
        if unknown:
            raise ConfigError(
                f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    return parser, hash_config_text(text)


def _dataset_root() -> Path:
    return Path(os.environ.get("TOXENS_DATA_DIR", "."))


def _resolve(path_value: str) -> Path:
    path = Path(path_value)
    return path if path.is_absolute() else _dataset_root() / path


def _load_or_build_corpus(config: configparser.ConfigParser, seed: int) -> Corpus:
    section = config["dataset"]
    corpus_path = section.get("corpus")
    if corpus_path and _resolve(corpus_path).exists():
        return load_corpus(_resolve(corpus_path))
    return _ingest_corpus(config, seed)


def _ingest_corpus(config: configparser.ConfigParser, seed: int) -> Corpus:
    section = config["dataset"]
    schema = _SCHEMAS[section["schema"]]
    fmt = section["format"]
    train = load_dataset(_resolve(section["train_path"]), schema, fmt)
    if section.get("test_path"):
        test = load_dataset(_resolve(section["test_path"]), schema, fmt)
        samples = train.samples + test.samples
        split = TrainTestSplit(train=tuple(s.id for s in train.samples),
                               test=tuple(s.id for s in test.samples))
        return Corpus(schema=schema, samples=samples, split=split)
    fraction = section.getfloat("test_fraction", fallback=0.2)
    return stratified_holdout(train, fraction, seed)


def _model_spec(config: configparser.ConfigParser, name: str,
                schema_kind: str) -> ClassifierSpec:
    section_name = f"model.{name}"
    if section_name not in config:
        raise ConfigError(f"no [{section_name}] section in config")
    section = dict(config[section_name])
    family = section.pop("family")
    embedding_source = section.pop("embedding_source", "learned_from_scratch")
    head = section.pop("head",
                       "sigmoid_per_class" if schema_kind == "multi_label" else "softmax")
    section.pop("val_fraction", None)
    hp = {}
    for key, value in section.items():
        if key == "filter_widths":
            hp[key] = [int(v) for v in value.split(",")]
        elif key == "embedding_path":
            hp[key] = str(_resolve(value))
        elif key == "patience" and value == "none":
            hp[key] = None
        else:
            try:
                hp[key] = int(value)
            except ValueError:
                try:
                    hp[key] = float(value)
                except ValueError:
                    hp[key] = value
    return ClassifierSpec(family=family, embedding_source=embedding_source,
                          head=head, hyperparameters=hp, name=name)


def _model_names(config: configparser.ConfigParser) -> list[str]:
    return [s[len("model."):] for s in config.sections() if s.startswith("model.")]


def _train_val_views(corpus: Corpus, val_fraction: float, seed: int):
    train_view = corpus.train_view()
    n_val = max(1, int(len(train_view) * val_fraction))
    from .rng import derive_rng
    order = derive_rng(seed, "fit_val_split").permutation(len(train_view))
    ids = train_view.ids
    val_ids = [ids[i] for i in order[:n_val]]
    train_ids = [ids[i] for i in order[n_val:]]
    return train_view.subset(train_ids), train_view.subset(val_ids)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(args, config, config_hash) -> int:
    manifest = RunManifest("ingest", config_hash, {"seed": args.seed})
    corpus = _ingest_corpus(config, args.seed)
    out = Path(args.out_dir) / "corpus.ndjson"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_corpus(corpus, out)
    manifest.add_artifact("corpus", out)
    manifest.notes["class_distribution"] = class_distribution(corpus)
    manifest.notes["samples"] = len(corpus)
    path = manifest.write(args.out_dir)
    print(f"ingested {len(corpus)} samples -> {out}")
    for cls, count in class_distribution(corpus).items():
        print(f"  {cls}: {count}")
    print(f"manifest: {path}")
    return 0


def cmd_embed_train(args, config, config_hash) -> int:
    manifest = RunManifest("embed-train", config_hash, {"seed": args.seed})
    corpus = _load_or_build_corpus(config, args.seed)
    section = config["embeddings"] if "embeddings" in config else {}
    sg = SkipgramConfig(
        dimension=int(section.get("dimension", 100)),
        window=int(section.get("window", 5)),
        epochs=int(section.get("epochs", 5)),
        negative_samples=int(section.get("negative_samples", 5)),
        learning_rate=float(section.get("learning_rate", 0.05)),
        subword_n_min=int(section.get("subword_n_min", 3)),
        subword_n_max=int(section.get("subword_n_max", 6)),
        bucket_count=int(section.get("bucket_count", 1 << 21)),
        min_count=int(section.get("min_count", 1)),
        seed=args.seed,
    )
    tokenizer = Tokenizer()
    sentences = (tokenizer(s.text) for s in corpus.train_view().samples)
    table = train_skipgram(sentences, sg)
    out = Path(args.out_dir) / str(section.get("output", "embeddings.npz"))
    out.parent.mkdir(parents=True, exist_ok=True)
    table.save(out)
    manifest.add_artifact("embeddings", out)
    manifest.notes["epoch_loss"] = table.metadata["epoch_loss"]
    print(f"trained subword embeddings ({len(table.word_index)} words) -> {out}")
    print(f"manifest: {manifest.write(args.out_dir)}")
    return 0


def cmd_fit(args, config, config_hash) -> int:
    manifest = RunManifest("fit", config_hash, {"seed": args.seed})
    corpus = _load_or_build_corpus(config, args.seed)
    spec = _model_spec(config, args.model, corpus.schema.kind)
    val_fraction = config[f"model.{args.model}"].getfloat("val_fraction", fallback=0.1)
    train_view, val_view = _train_val_views(corpus, val_fraction, args.seed)
    model = fit(spec, train_view, val_view)
    out = Path(args.out_dir) / f"model-{args.model}.npz"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    manifest.add_artifact("model", out)
    manifest.notes["training_log"] = model.training_log
    print(f"fitted {spec.identifier} -> {out}")
    print(f"manifest: {manifest.write(args.out_dir)}")
    return 0


def cmd_predict(args, config, config_hash) -> int:
    manifest = RunManifest("predict", config_hash, {"seed": args.seed})
    corpus = _load_or_build_corpus(config, args.seed)
    model = load_model(args.model_file)
    view = corpus.test_view() if args.split == "test" else corpus.train_view()
    preds = predict(model, view)
    out = Path(args.out_dir) / f"predictions-{model.spec.identifier}-{args.split}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    preds.save_csv(out)
    manifest.add_artifact("predictions", out)
    print(f"predicted {len(preds.ids)} samples -> {out}")
    print(f"manifest: {manifest.write(args.out_dir)}")
    return 0


def cmd_oof(args, config, config_hash) -> int:
    manifest = RunManifest("oof", config_hash, {"seed": args.seed})
    corpus = _load_or_build_corpus(config, args.seed)
    section = config["ensemble"] if "ensemble" in config else {}
    k = int(section.get("folds", 5))
    folds = split_folds(corpus, k, args.seed)
    names = _model_names(config)
    if not names:
        raise ConfigError("oof needs at least one [model.X] section")
    specs = [_model_spec(config, n, corpus.schema.kind) for n in names]
    lexicon = _load_lexicon(section)
    include_meta = str(section.get("meta_features", "on")).lower() in ("on", "true", "1")
    train_features, test_features = ens.oof_predictions(
        specs, corpus, folds, swear_lexicon=lexicon, include_meta=include_meta)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_features.save_csv(out_dir / "stacked_train.csv")
    np.savez_compressed(out_dir / "stacked_test.npz",
                        **{f"fold{f}": tf.matrix for f, tf in enumerate(test_features)},
                        ids=np.array(test_features[0].ids, dtype=object),
                        columns=np.array(train_features.columns, dtype=object))
    (out_dir / "folds.json").write_text(
        json.dumps({"k": folds.k, "seed": folds.seed,
                    "assignment": folds.assignment}), encoding="utf-8")
    manifest.add_artifact("stacked_train", out_dir / "stacked_train.csv")
    manifest.add_artifact("stacked_test", out_dir / "stacked_test.npz")
    manifest.add_artifact("folds", out_dir / "folds.json")
    print(f"OOF features: {train_features.matrix.shape} -> {out_dir / 'stacked_train.csv'}")
    print(f"manifest: {manifest.write(args.out_dir)}")
    return 0


def cmd_stack(args, config, config_hash) -> int:
    manifest = RunManifest("stack", config_hash, {"seed": args.seed})
    corpus = _load_or_build_corpus(config, args.seed)
    out_dir = Path(args.out_dir)
    section = config["ensemble"] if "ensemble" in config else {}
    folds_payload = json.loads((out_dir / "folds.json").read_text(encoding="utf-8"))
    folds = FoldAssignment(k=folds_payload["k"],
                           assignment=folds_payload["assignment"],
                           seed=folds_payload["seed"])
    train_features = _load_stacked_train(out_dir / "stacked_train.csv")
    gold = corpus.train_view()
    order = {i: n for n, i in enumerate(gold.ids)}
    labels = gold.label_matrix()[[order[i] for i in train_features.ids]]
    gbdt_config = ens.GbdtConfig(
        trees=int(section.get("trees", 100)),
        depth=int(section.get("depth", 3)),
        learning_rate=float(section.get("learning_rate", 0.1)),
        min_leaf=int(section.get("min_leaf", 20)),
        seed=args.seed,
    )
    stackers = ens.stack_cv(train_features, labels, corpus.schema.classes,
                            folds, gbdt_config)
    test_data = np.load(out_dir / "stacked_test.npz", allow_pickle=True)
    test_ids = [str(i) for i in test_data["ids"]]
    columns = [str(c) for c in test_data["columns"]]
    test_features = [
        ens.StackedFeatures(ids=test_ids, columns=columns,
                            matrix=test_data[f"fold{f}"],
                            provenance=np.full(len(test_ids), f, dtype=np.int64))
        for f in range(folds.k)
    ]
    preds = ens.ensemble_predict(stackers, test_features)
    preds.save_csv(out_dir / "predictions-ensemble-test.csv")
    for f, stacker in enumerate(stackers):
        stacker.save(out_dir / f"gbdt-fold{f}.json")
        (out_dir / f"gbdt-fold{f}.txt").write_text(stacker.dump_trees(), encoding="utf-8")
    manifest.add_artifact("ensemble_predictions", out_dir / "predictions-ensemble-test.csv")
    print(f"ensemble predictions -> {out_dir / 'predictions-ensemble-test.csv'}")
    print(f"manifest: {manifest.write(args.out_dir)}")
    return 0


def _load_stacked_train(path: Path) -> ens.StackedFeatures:
    import csv as _csv
    with open(path, newline="", encoding="utf-8") as fh:
        reader = _csv.reader(fh)
        header = next(reader)
        ids, rows = [], []
        for row in reader:
            ids.append(row[0])
            rows.append([float(v) for v in row[1:]])
    provenance_payload = json.loads(
        path.with_name(path.name + ".provenance.json").read_text(encoding="utf-8"))
    provenance = np.array([provenance_payload["provenance"][i] for i in ids],
                          dtype=np.int64)
    return ens.StackedFeatures(ids=ids, columns=header[1:],
                               matrix=np.array(rows), provenance=provenance)


def _load_lexicon(section) -> frozenset[str] | None:
    path = section.get("swear_lexicon") if section else None
    if not path:
        return None
    return frozenset(
        w.strip().lower()
        for w in _resolve(path).read_text(encoding="utf-8").splitlines() if w.strip())


def _gold_for(corpus: Corpus, preds: PredictionMatrix) -> np.ndarray:
    index = {s.id: s.labels for s in corpus.samples}
    return np.array([index[i] for i in preds.ids], dtype=np.int64)


def cmd_evaluate(args, config, config_hash) -> int:
    manifest = RunManifest("evaluate", config_hash, {"seed": args.seed})
    corpus = _load_or_build_corpus(config, args.seed)
    preds = PredictionMatrix.load_csv(args.predictions,
                                      producer=Path(args.predictions).stem)
    thresholds = None
    if corpus.schema.kind == "multi_label":
        if args.thresholds:
            thresholds = met.ThresholdVector.load(args.thresholds)
        else:
            thresholds = met.ThresholdVector({c: 0.5 for c in corpus.schema.classes})
    report = met.evaluate(preds, _gold_for(corpus, preds), corpus.schema.kind,
                          thresholds)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.save_json(out_dir / f"report-{preds.producer}.json")
    report.save_csv(out_dir / f"report-{preds.producer}.csv")
    manifest.add_artifact("report_json", out_dir / f"report-{preds.producer}.json")
    manifest.add_artifact("report_csv", out_dir / f"report-{preds.producer}.csv")
    print(met.render_results_table([report]))
    print(f"manifest: {manifest.write(args.out_dir)}")
    return 0


def cmd_thresholds(args, config, config_hash) -> int:
    manifest = RunManifest("thresholds", config_hash, {"seed": args.seed})
    corpus = _load_or_build_corpus(config, args.seed)
    if corpus.schema.kind != "multi_label":
        raise ConfigError("threshold search applies to multi-label schemas only")
    preds = PredictionMatrix.load_csv(args.predictions)
    gold = _gold_for(corpus, preds)
    thresholds = met.search_thresholds(preds.scores, gold, preds.classes)
    out = Path(args.out_dir) / "thresholds.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    thresholds.save(out)
    manifest.add_artifact("thresholds", out)
    print(f"thresholds -> {out}")
    print(f"manifest: {manifest.write(args.out_dir)}")
    return 0


def cmd_correlate(args, config, config_hash) -> int:
    manifest = RunManifest("correlate", config_hash, {"seed": args.seed})
    corpus = _load_or_build_corpus(config, args.seed)
    preds_a = PredictionMatrix.load_csv(args.predictions_a,
                                        producer=Path(args.predictions_a).stem)
    preds_b = PredictionMatrix.load_csv(args.predictions_b,
                                        producer=Path(args.predictions_b).stem)
    thresholds = (met.ThresholdVector.load(args.thresholds) if args.thresholds
                  else None)
    report = met.correlation_report(preds_a, preds_b, _gold_for(corpus, preds_a),
                                    corpus.schema.kind, thresholds)
    out = Path(args.out_dir) / f"correlation-{preds_a.producer}-vs-{preds_b.producer}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
    manifest.add_artifact("correlation", out)
    print(met.render_correlation_table([report]))
    print(f"manifest: {manifest.write(args.out_dir)}")
    return 0


def cmd_triage_sample(args, config, config_hash) -> int:
    manifest = RunManifest("triage sample", config_hash, {"seed": args.seed})
    corpus = _load_or_build_corpus(config, args.seed)
    section = config["triage"]
    preds = PredictionMatrix.load_csv(_resolve(section["predictions"]))
    view = corpus.subset(preds.ids)
    if corpus.schema.kind == "multi_label":
        thresholds = met.ThresholdVector.load(_resolve(section["thresholds"]))
        binary = met.binarize(preds.scores, "multi_label",
                              thresholds.as_array(preds.classes))
    else:
        binary = met.binarize(preds.scores, "multi_class")
    session = tri.sample_errors(view, binary, preds.scores,
                                focal_class=section["focal_class"],
                                kind=section["kind"],
                                n=int(section.get("n", 200)), seed=args.seed)
    out = Path(args.out_dir) / str(section.get("session", "session.json"))
    out.parent.mkdir(parents=True, exist_ok=True)
    session.save(out)
    manifest.add_artifact("session", out)
    print(f"sampled {len(session.items)} of population {session.population_size} -> {out}")
    print(f"manifest: {manifest.write(args.out_dir)}")
    return 0


def cmd_triage_serve(args, config, config_hash) -> int:
    import uvicorn

    from .serve import create_app
    app = create_app(args.session, ui_dir=args.ui_dir)
    uvicorn.run(app, host="127.0.0.1", port=args.port)
    return 0


def cmd_triage_report(args, config, config_hash) -> int:
    session = tri.TriageSession.load(args.session)
    report = tri.frequency_report(session)
    out = Path(args.out_dir) / "triage-report.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2), encoding="utf-8")
    print(f"session {report['session_id']} ({report['kind']} on {report['focal_class']})")
    print(f"annotated {report['annotated']}/{report['total_items']} "
          f"(population {report['population_size']})")
    print(f"doubtful_label: {report['raw']['doubtful_label']:.1f}%")
    for tag, pct in report["undoubtful"].items():
        print(f"{tag}: {pct:.1f}% (over {report['undoubtful_count']} undoubtful)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="toxens")
    parser.add_argument("--config", default=None)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--deterministic", action="store_true")
    parser.add_argument("--out-dir", default="out")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("ingest")
    sub.add_parser("embed-train")
    p = sub.add_parser("fit")
    p.add_argument("--model", required=True)
    p = sub.add_parser("predict")
    p.add_argument("--model-file", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    sub.add_parser("oof")
    sub.add_parser("stack")
    p = sub.add_parser("evaluate")
    p.add_argument("--predictions", required=True)
    p.add_argument("--thresholds", default=None)
    p = sub.add_parser("thresholds")
    p.add_argument("--predictions", required=True)
    p = sub.add_parser("correlate")
    p.add_argument("--predictions-a", required=True)
    p.add_argument("--predictions-b", required=True)
    p.add_argument("--thresholds", default=None)
    p = sub.add_parser("triage")
    tsub = p.add_subparsers(dest="triage_command", required=True)
    tsub.add_parser("sample")
    tp = tsub.add_parser("serve")
    tp.add_argument("--session", required=True)
    tp.add_argument("--port", type=int, default=8000)
    tp.add_argument("--ui-dir", default=None)
    tp = tsub.add_parser("report")
    tp.add_argument("--session", required=True)
    return parser


_HANDLERS = {
    "ingest": cmd_ingest,
    "embed-train": cmd_embed_train,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "oof": cmd_oof,
    "stack": cmd_stack,
    "evaluate": cmd_evaluate,
    "thresholds": cmd_thresholds,
    "correlate": cmd_correlate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config, config_hash = (load_config(args.config) if args.config
                               else (configparser.ConfigParser(), 0))
        if args.command == "triage":
            handler = {"sample": cmd_triage_sample,
                       "serve": cmd_triage_serve,
                       "report": cmd_triage_report}[args.triage_command]
        else:
            handler = _HANDLERS[args.command]
        return handler(args, config, config_hash)
    except (ConfigError, ConfigurationError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
