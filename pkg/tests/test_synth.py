from dataclasses import replace

import jsonschema
import numpy as np
import pytest

from conftest import load_schema
from m2lab import tokenizer as tok
from m2lab.encoder import EncoderConfig, EncoderModel
from m2lab.errors import ConfigurationError
from m2lab.synth import (NeedleTaskSpec, generate_needle_task, generate_separable_task,
                         key_token_span, needle_training_task, position_sweep, training_pairs,
                         visibility_regimes)

SPEC = NeedleTaskSpec(n_queries=12, passage_len=16, key_len=5, seed=7)


def test_spec_defaults():
    spec = NeedleTaskSpec()
    assert spec.n_distractors == 39 and spec.n_passages == 40 and spec.passage_len == 64


@pytest.mark.parametrize("changes", [
    {"position": 40}, {"position": -1}, {"passage_len": 4, "key_len": 6},
    {"passage_len": 40_000}, {"pool_size": 10}, {"n_queries": 0}, {"key_len": 1, "n_queries": 100},
])
def test_spec_validation(changes):
    with pytest.raises(ConfigurationError):
        NeedleTaskSpec(**changes)


def test_document_length_is_forty_passages():
    task = generate_needle_task(SPEC)
    for _, text in task.documents:
        n = len(tok.tokenize(text))
        assert 40 * SPEC.passage_len <= n <= 40 * SPEC.passage_len + 41


@pytest.mark.parametrize("position", [0, 17, 39])
def test_keys_are_unique_to_their_document(position):
    task = generate_needle_task(replace(SPEC, position=position))
    docs = dict(task.documents)
    for qid, key in task.queries:
        (own,) = task.qrels[qid]
        assert docs[own].count(key) == 1
        assert all(key not in text for did, text in task.documents if did != own)
        assert task.qrels[qid][own] == 1


def test_generation_is_deterministic():
    assert generate_needle_task(SPEC).documents == generate_needle_task(SPEC).documents


def test_only_the_slot_moves():
    a = generate_needle_task(replace(SPEC, position=3))
    b = generate_needle_task(replace(SPEC, position=30))
    for (_, ta), (_, tb), (_, key) in zip(a.documents, b.documents, a.queries):
        pa, pb = ta.split(" ")[::1], tb.split(" ")
        assert len(ta) == len(tb)
        assert sorted(ta.split(" ")) == sorted(tb.split(" "))
        assert key_token_span(ta, key)[0] < key_token_span(tb, key)[0]
        del pa, pb


def test_visibility_at_the_extremes():
    spec = NeedleTaskSpec(n_queries=20)
    for position, visible in ((0, True), (39, False)):
        task = generate_needle_task(replace(spec, position=position))
        for (_, text), (_, key) in zip(task.documents, task.queries):
            end = key_token_span(text, key)[1]
            assert (end <= 127) == visible


def test_regimes_agree_with_key_spans():
    spec = NeedleTaskSpec(n_queries=30, passage_len=8, key_len=6)
    visible, hidden = visibility_regimes(spec, 128)
    assert visible == list(range(14)) and hidden == list(range(14, 40))
    for p in (visible[-1], hidden[0]):
        task = generate_needle_task(replace(spec, position=p))
        for (_, text), (_, key) in zip(task.documents, task.queries):
            start, end = key_token_span(text, key)
            assert (end <= 127) if p in visible else (start >= 127)


def test_training_task_respects_slot_limit():
    spec = NeedleTaskSpec(n_queries=40, passage_len=8, key_len=6)
    task = needle_training_task(spec, seed=3, max_position=5)
    for (_, text), (_, key) in zip(task.documents, task.queries):
        assert key_token_span(text, key)[1] <= 1 + 6 * 9
    pairs = training_pairs(task)
    assert len(pairs) == 40 and all(q in d for q, d in pairs)
    with pytest.raises(ConfigurationError):
        needle_training_task(spec, seed=3, max_position=40)


def test_separable_task_shape():
    task = generate_separable_task(n_docs=10, doc_len=200, key_len=4, repeats=5, seed=1)
    docs = dict(task.documents)
    for qid, key in task.queries:
        (own,) = task.qrels[qid]
        assert docs[own].count(key) == 5
        assert abs(len(docs[own]) - 200) <= 1
    with pytest.raises(ConfigurationError):
        generate_separable_task(doc_len=10, repeats=5)


def test_position_sweep_report():
    model = EncoderModel.initialize(EncoderConfig(d_model=16, monarch_b=4, n_layers=1, max_seq_len=512))
    spec = NeedleTaskSpec(n_queries=4, passage_len=8, key_len=6, seed=1)
    report = position_sweep(model, spec=spec)
    assert report.positions == list(range(40)) and len(report.scores) == 40
    jsonschema.validate(report.to_json(), load_schema("sweep_report"))
    assert position_sweep(model, spec=spec, positions=[0, 39]).scores == [report.scores[0], report.scores[39]]
    table = report.table().splitlines()
    assert table[0] == "| Answer Position in Concat. Passage | nDCG@10 |" and len(table) == 42


def test_truncating_model_is_blind_past_the_window():
    model = EncoderModel.initialize(EncoderConfig(d_model=16, monarch_b=4, n_layers=1, max_seq_len=128))
    spec = NeedleTaskSpec(n_queries=20, passage_len=8, key_len=6, seed=2)
    report = position_sweep(model, spec=spec, positions=[20, 30, 39])
    assert report.scores[0] == report.scores[1] == report.scores[2]


def test_filler_has_exact_length():
    from m2lab.synth import filler
    r = np.random.default_rng(0)
    for n in list(range(0, 40)) * 5:
        text = filler(r, n)
        assert len(text) == n and text == text.lower()
