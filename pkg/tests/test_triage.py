from __future__ import annotations

import numpy as np
import pytest

from toxens.corpus import WIKIPEDIA_SCHEMA, Comment, Corpus
from toxens.triage import (FN_TAGS, FP_TAGS, ReportError, TriageSession,
                           ValidationError, frequency_report, sample_errors,
                           taxonomy_for)


def toxic_corpus(n_pos, n_neg):
    samples = []
    for i in range(n_pos):
        samples.append(Comment(f"p{i}", f"bad text {i}", (1, 0, 0, 0, 0, 0)))
    for i in range(n_neg):
        samples.append(Comment(f"n{i}", f"fine text {i}", (0,) * 6))
    return Corpus(schema=WIKIPEDIA_SCHEMA, samples=tuple(samples))


def preds_for(corpus, fn_ids=(), fp_ids=()):
    """Binary predictions that misclassify exactly the named samples on 'toxic'."""
    gold = corpus.label_matrix()
    pred = gold.copy()
    for i, s in enumerate(corpus.samples):
        if s.id in fn_ids:
            pred[i, 0] = 0
        if s.id in fp_ids:
            pred[i, 0] = 1
    scores = pred.astype(float) * 0.9 + 0.05
    return pred, scores


class TestTaxonomy:
    def test_kinds(self):
        assert taxonomy_for("FN") == FN_TAGS
        assert taxonomy_for("FP") == FP_TAGS
        with pytest.raises(ValueError):
            taxonomy_for("xx")

    def test_doubtful_in_both(self):
        assert "doubtful_label" in FN_TAGS and "doubtful_label" in FP_TAGS


class TestSampleErrors:
    def test_population_and_sample_counts(self):
        corpus = toxic_corpus(100, 100)
        fn_ids = {f"p{i}" for i in range(55)}
        pred, scores = preds_for(corpus, fn_ids=fn_ids)
        session = sample_errors(corpus, pred, scores, "toxic", "FN", n=40, seed=3)
        assert session.population_size == 55
        assert len(session.items) == 40
        assert {i.id for i in session.items} <= fn_ids

    def test_small_population_takes_all(self):
        corpus = toxic_corpus(10, 10)
        pred, scores = preds_for(corpus, fn_ids={"p0", "p1", "p2"})
        session = sample_errors(corpus, pred, scores, "toxic", "FN", n=200, seed=0)
        assert session.population_size == 3
        assert sorted(i.id for i in session.items) == ["p0", "p1", "p2"]

    def test_empty_population_empty_session(self):
        corpus = toxic_corpus(5, 5)
        pred, scores = preds_for(corpus)
        session = sample_errors(corpus, pred, scores, "toxic", "FP", n=10, seed=0)
        assert session.population_size == 0
        assert session.items == []

    def test_fp_population(self):
        corpus = toxic_corpus(10, 20)
        fp_ids = {f"n{i}" for i in range(7)}
        pred, scores = preds_for(corpus, fp_ids=fp_ids)
        session = sample_errors(corpus, pred, scores, "toxic", "FP", n=50, seed=0)
        assert session.population_size == 7
        assert {i.id for i in session.items} == fp_ids

    def test_seed_reproducibility(self):
        corpus = toxic_corpus(60, 0)
        pred, scores = preds_for(corpus, fn_ids={f"p{i}" for i in range(60)})
        a = sample_errors(corpus, pred, scores, "toxic", "FN", n=20, seed=9)
        b = sample_errors(corpus, pred, scores, "toxic", "FN", n=20, seed=9)
        c = sample_errors(corpus, pred, scores, "toxic", "FN", n=20, seed=10)
        assert [i.id for i in a.items] == [i.id for i in b.items]
        assert [i.id for i in a.items] != [i.id for i in c.items]


def scripted_session(n=200, doubtful=46, tagged_fraction_no_swear=0.5):
    """Session with exact known annotation counts for arithmetic checks."""
    corpus = toxic_corpus(n, 0)
    pred, scores = preds_for(corpus, fn_ids={f"p{i}" for i in range(n)})
    session = sample_errors(corpus, pred, scores, "toxic", "FN", n=n, seed=0)
    ids = [i.id for i in session.items]
    undoubtful = ids[doubtful:]
    n_no_swear = int(len(undoubtful) * tagged_fraction_no_swear)
    for item_id in ids[:doubtful]:
        session.record_annotation(item_id, ["doubtful_label"])
    for k, item_id in enumerate(undoubtful):
        session.record_annotation(
            item_id, ["no_swear_words"] if k < n_no_swear else [])
    return session


class TestAnnotation:
    def test_tri_state(self):
        session = scripted_session(n=4, doubtful=1, tagged_fraction_no_swear=0.0)
        extra = toxic_corpus(6, 0)
        pred, scores = preds_for(extra, fn_ids={f"p{i}" for i in range(6)})
        fresh = sample_errors(extra, pred, scores, "toxic", "FN", n=3, seed=0)
        item = fresh.items[0].id
        assert item not in fresh.annotations          # unannotated
        fresh.record_annotation(item, [])
        assert fresh.annotations[item] == []          # reviewed, clean
        fresh.record_annotation(item, ["rare_words"])
        assert fresh.annotations[item] == ["rare_words"]  # tagged

    def test_unknown_item_rejected(self):
        session = scripted_session(n=4, doubtful=0)
        with pytest.raises(ValidationError, match="unknown item"):
            session.record_annotation("nope", [])

    def test_fp_tag_rejected_in_fn_session(self):
        session = scripted_session(n=4, doubtful=0)
        item = session.items[0].id
        with pytest.raises(ValidationError, match="swear_word_usage"):
            session.record_annotation(item, ["swear_word_usage"])

    def test_overwrite_keeps_audit_trail(self):
        session = scripted_session(n=4, doubtful=0)
        item = session.items[0].id
        before = len(session.audit_log)
        session.record_annotation(item, ["sarcasm_irony"])
        session.record_annotation(item, [])
        assert session.annotations[item] == []
        assert len(session.audit_log) == before + 2

    def test_tags_deduplicated_and_sorted(self):
        session = scripted_session(n=4, doubtful=0)
        item = session.items[0].id
        session.record_annotation(item, ["rare_words", "no_swear_words", "rare_words"])
        assert session.annotations[item] == ["no_swear_words", "rare_words"]


class TestFrequencyReport:
    def test_doubtful_rate_arithmetic(self):
        # 46 of 200 doubtful -> 23%; half of the rest tagged no_swear_words -> 50%
        session = scripted_session(n=200, doubtful=46, tagged_fraction_no_swear=0.5)
        report = frequency_report(session)
        assert report["annotated"] == 200
        assert report["raw"]["doubtful_label"] == pytest.approx(23.0)
        assert report["undoubtful_count"] == 154
        assert report["undoubtful"]["no_swear_words"] == pytest.approx(50.0)

    def test_denominator_excludes_unannotated(self):
        session = scripted_session(n=10, doubtful=0)
        # re-create with only 2 of 10 annotated
        corpus = toxic_corpus(10, 0)
        pred, scores = preds_for(corpus, fn_ids={f"p{i}" for i in range(10)})
        partial = sample_errors(corpus, pred, scores, "toxic", "FN", n=10, seed=0)
        partial.record_annotation(partial.items[0].id, ["rare_words"])
        partial.record_annotation(partial.items[1].id, [])
        report = frequency_report(partial)
        assert report["annotated"] == 2
        assert report["undoubtful"]["rare_words"] == pytest.approx(50.0)

    def test_all_doubtful_subrates_zero(self):
        session = scripted_session(n=5, doubtful=5)
        report = frequency_report(session)
        assert report["raw"]["doubtful_label"] == pytest.approx(100.0)
        assert report["undoubtful_count"] == 0
        assert all(v == 0.0 for v in report["undoubtful"].values())

    def test_empty_session_raises(self):
        corpus = toxic_corpus(5, 0)
        pred, scores = preds_for(corpus, fn_ids={"p0"})
        session = sample_errors(corpus, pred, scores, "toxic", "FN", n=1, seed=0)
        with pytest.raises(ReportError):
            frequency_report(session)


class TestSessionIO:
    def test_round_trip_with_audit_log(self, tmp_path):
        session = scripted_session(n=20, doubtful=4)
        session.save(tmp_path / "session.json")
        loaded = TriageSession.load(tmp_path / "session.json")
        assert loaded.annotations == session.annotations
        assert loaded.audit_log == session.audit_log
        assert [i.id for i in loaded.items] == [i.id for i in session.items]
        assert frequency_report(loaded) == frequency_report(session)

    def test_unicode_text_round_trip(self, tmp_path):
        corpus = Corpus(WIKIPEDIA_SCHEMA,
                        (Comment("u", "naïve 🤬 text", (1, 0, 0, 0, 0, 0)),))
        pred = np.zeros((1, 6), dtype=int)
        scores = np.full((1, 6), 0.1)
        session = sample_errors(corpus, pred, scores, "toxic", "FN", n=1, seed=0)
        session.save(tmp_path / "s.json")
        assert TriageSession.load(tmp_path / "s.json").items[0].text == "naïve 🤬 text"
