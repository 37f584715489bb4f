import itertools
import json
import math

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import load_schema
from m2lab.encoder import EncoderConfig, EncoderModel
from m2lab.errors import BoundsError, DataError, EmptyInputError, UndefinedQueryError
from m2lab.retrieval import (CHUNK_AVERAGE, TRUNCATE, BM25Retriever, BM25Stats, EmbeddingStrategy,
                             RetrievalTask, VectorIndex, bench_encode, bm25_score, bm25_tokens,
                             embed_document, embed_query, evaluate, format_bench_table, load_task,
                             ndcg_at_k, save_task, search, synthetic_document)

LN16 = math.log(1.6)
BM25_CORPUS = [("d1", "the cat sat"), ("d2", "the dog"), ("d3", "cat cat dog bird")]


def brute_ndcg(ranking, qrels, k):
    """Independent formulation: gains and discounts as explicit vectors."""
    gains = np.array([2.0 ** qrels.get(d, 0) - 1 for d in ranking[:k]])
    disc = 1.0 / np.log2(np.arange(2, gains.size + 2))
    ideal = np.sort(np.array([2.0 ** r - 1 for r in qrels.values()]))[::-1][:k]
    idcg = float(ideal @ (1.0 / np.log2(np.arange(2, ideal.size + 2))))
    return float(gains @ disc) / idcg if idcg > 0 else 0.0


# ---------------------------------------------------------------- task files

def small_task():
    docs = [("a", "alpha text"), ("b", "beta text"), ("c", "gamma text")]
    queries = [("q1", "alpha"), ("q2", "gamma")]
    return RetrievalTask(docs, queries, {"q1": {"a": 1}, "q2": {"c": 1, "b": 0}})


def test_task_validation():
    with pytest.raises(DataError):
        RetrievalTask([("a", "x"), ("a", "y")], [])
    with pytest.raises(DataError):
        RetrievalTask([("a", "x")], [("q", "x")], {"q": {"zzz": 1}})
    with pytest.raises(DataError):
        RetrievalTask([("a", "x")], [("q", "x")], {"other": {"a": 1}})


def test_files_round_trip(tmp_path):
    task = small_task()
    save_task(task, tmp_path)
    back = load_task(tmp_path)
    assert back.documents == task.documents and back.queries == task.queries
    assert back.qrels == task.qrels


def test_qrels_header_is_optional(tmp_path):
    save_task(small_task(), tmp_path)
    lines = (tmp_path / "qrels.tsv").read_text().splitlines()
    (tmp_path / "qrels.tsv").write_text("\n".join(lines[1:]) + "\n")
    assert load_task(tmp_path).qrels == small_task().qrels


def test_malformed_jsonl_reports_line(tmp_path):
    save_task(small_task(), tmp_path)
    with open(tmp_path / "corpus.jsonl", "a") as fh:
        fh.write("{not json\n")
    with pytest.raises(DataError, match=r"corpus.jsonl:4"):
        load_task(tmp_path)


def test_bad_relevance_reports_line(tmp_path):
    save_task(small_task(), tmp_path)
    with open(tmp_path / "qrels.tsv", "a") as fh:
        fh.write("q1\ta\tmaybe\n")
    with pytest.raises(DataError, match=r"qrels.tsv:5"):
        load_task(tmp_path)


# ---------------------------------------------------------------- embedding strategies

@pytest.fixture(scope="module")
def model64():
    return EncoderModel.initialize(EncoderConfig(d_model=16, monarch_b=4, n_layers=1, max_seq_len=64, seed=2))


def test_short_documents_agree_across_strategies(model64):
    text = "a short document"
    assert np.array_equal(embed_document(model64, text, TRUNCATE), embed_document(model64, text, CHUNK_AVERAGE))


def test_repeated_chunk_equals_single_chunk(model64):
    piece = "x" * 62                      # exactly one window of content
    single = embed_document(model64, piece, CHUNK_AVERAGE)
    assert np.abs(embed_document(model64, piece * 4, CHUNK_AVERAGE) - single).max() < 1e-12


def test_three_chunks_against_definition(model64):
    from m2lab.encoder import encode
    from m2lab import numeric as nm
    from m2lab import tokenizer as tok
    text = synthetic_document(62 * 3 + 2, seed=5)
    means = []
    with nm.no_grad():
        for i in range(3):
            ids = [tok.CLS, *text[62 * i:62 * (i + 1)].encode(), tok.SEP]
            means.append(encode(model64, ids, length=64).values[:64].mean(axis=0))
    expected = np.mean(means, axis=0)
    expected /= np.linalg.norm(expected)
    assert np.abs(embed_document(model64, text, CHUNK_AVERAGE) - expected).max() < 1e-10


def test_truncation_ignores_the_tail(model64):
    head = "h" * 62
    assert np.array_equal(embed_document(model64, head + "tail one"), embed_document(model64, head + "other"))


def test_empty_documents_are_rejected(model64):
    with pytest.raises(EmptyInputError):
        embed_document(model64, "")


def test_strategy_validation():
    with pytest.raises(ValueError):
        EmbeddingStrategy("median")
    with pytest.raises(ValueError):
        EmbeddingStrategy("truncate", -1)


# ---------------------------------------------------------------- index and search

def unit_rows(r, n, d=8):
    m = r.normal(size=(n, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def test_stored_row_ranks_first():
    r = np.random.default_rng(0)
    m = unit_rows(r, 10)
    top = search(VectorIndex(m, [f"d{i}" for i in range(10)]), m[4], 1)[0]
    assert top[0] == "d4" and top[1] == pytest.approx(1.0)


def test_full_depth_is_a_permutation():
    r = np.random.default_rng(1)
    ids = [f"d{i}" for i in range(12)]
    res = search(VectorIndex(unit_rows(r, 12), ids), unit_rows(r, 1)[0], 12)
    assert sorted(d for d, _ in res) == sorted(ids)


@settings(max_examples=30)
@given(seed=st.integers(0, 10 ** 6), k=st.integers(1, 20))
def test_search_matches_full_sort(seed, k):
    r = np.random.default_rng(seed)
    m = unit_rows(r, 20)
    ids = [f"doc{i:02d}" for i in r.permutation(20)]
    q = unit_rows(r, 1)[0]
    oracle = sorted(zip(ids, m @ q), key=lambda t: (-t[1], t[0]))[:k]
    assert [d for d, _ in search(VectorIndex(m, ids), q, k)] == [d for d, _ in oracle]


def test_ties_break_by_id():
    m = np.tile(np.array([[1.0, 0.0]]), (3, 1))
    assert [d for d, _ in search(VectorIndex(m, ["c", "a", "b"]), np.array([1.0, 0.0]), 3)] == ["a", "b", "c"]


def test_search_bounds():
    with pytest.raises(BoundsError):
        search(VectorIndex(np.eye(2), ["a", "b"]), np.array([1.0, 0.0]), 3)


def test_index_requires_unit_rows():
    with pytest.raises(DataError):
        VectorIndex(np.ones((2, 2)), ["a", "b"])


# ---------------------------------------------------------------- nDCG

def test_ndcg_hand_cases():
    assert ndcg_at_k(["r", "x", "y"], {"r": 1}) == 1.0
    assert ndcg_at_k(["x", "y", "r"], {"r": 1}) == 0.5
    assert ndcg_at_k(["x", "y"], {"r": 1}) == 0.0
    assert ndcg_at_k(["x"], {}) == 0.0


def test_ndcg_errors():
    with pytest.raises(UndefinedQueryError):
        ndcg_at_k(["a"], None)
    with pytest.raises(ValueError):
        ndcg_at_k(["a"], {"a": 1}, k=0)


def test_ndcg_matches_brute_force():
    r = np.random.default_rng(0)
    for _ in range(1000):
        n = int(r.integers(1, 30))
        docs = [f"d{i}" for i in range(n)]
        ranking = list(r.permutation(docs)[: int(r.integers(1, n + 1))])
        qrels = {d: int(r.integers(0, 3)) for d in r.choice(docs, size=int(r.integers(0, n + 1)), replace=False)}
        k = int(r.integers(1, 15))
        assert abs(ndcg_at_k(ranking, qrels, k) - brute_ndcg(ranking, qrels, k)) <= 1e-12


@pytest.mark.parametrize("n", range(1, 7))
def test_ndcg_is_one_iff_relevant_on_top(n):
    docs = [f"d{i}" for i in range(n)]
    for n_rel in range(1, n + 1):
        for rel in itertools.combinations(docs, n_rel):
            qrels = {d: 1 for d in rel}
            for ranking in itertools.permutations(docs):
                perfect = set(ranking[:n_rel]) == set(rel)
                assert (abs(ndcg_at_k(list(ranking), qrels, 10) - 1.0) < 1e-12) == perfect


# ---------------------------------------------------------------- evaluation

def self_task(n=12, seed=0):
    r = np.random.default_rng(seed)
    texts = [synthetic_document(int(r.integers(10, 60)), seed=i) for i in range(n)]
    return RetrievalTask([(f"d{i}", t) for i, t in enumerate(texts)],
                         [(f"q{i}", t) for i, t in enumerate(texts)],
                         {f"q{i}": {f"d{i}": 1} for i in range(n)})


def test_query_equal_to_document_scores_one(model64):
    report = evaluate(model64, self_task())
    assert report.mean == 1.0
    jsonschema.validate(report.to_json(), load_schema("eval_report"))


def test_evaluation_ignores_order(model64):
    task = self_task(seed=3)
    task.queries = [(q, "x" + t[:5]) for q, t in task.queries]
    base = evaluate(model64, task).per_query
    r = np.random.default_rng(1)
    shuffled = RetrievalTask([task.documents[i] for i in r.permutation(len(task.documents))],
                             [task.queries[i] for i in r.permutation(len(task.queries))], task.qrels)
    assert evaluate(model64, shuffled).per_query == base


def test_queries_use_truncation(model64):
    long_query = "q" * 200
    assert np.array_equal(embed_query(model64, long_query), embed_document(model64, long_query, TRUNCATE))


# ---------------------------------------------------------------- BM25

def test_bm25_absent_term_scores_zero():
    stats = BM25Stats.build([bm25_tokens(t) for _, t in BM25_CORPUS])
    assert bm25_score(["zebra"], 0, stats) == 0.0


def test_bm25_presence():
    stats = BM25Stats.build([["a", "b"], ["a"]])
    assert bm25_score(["b"], 1, stats) == 0.0
    assert bm25_score(["b"], 0, stats) > 0.0


def test_bm25_three_document_hand_oracle():
    stats = BM25Stats.build([bm25_tokens(t) for _, t in BM25_CORPUS])
    # avg length 3; idf(cat) = idf(dog) = ln(1 + 1.5/2.5) = ln 1.6; idf(bird) = ln(1 + 2.5/1.5)
    expected = {
        0: LN16 * 2.2 / (1 + 1.2 * 1.0),
        1: LN16 * 2.2 / (1 + 1.2 * 0.75),
        2: LN16 * 2 * 2.2 / (2 + 1.2 * 1.25) + LN16 * 2.2 / (1 + 1.2 * 1.25),
    }
    for doc, value in expected.items():
        assert abs(bm25_score(["cat", "dog"], doc, stats) - value) < 1e-9
    assert abs(bm25_score(["bird"], 2, stats) - math.log(8 / 3) * 2.2 / (1 + 1.2 * 1.25)) < 1e-9


def test_bm25_retriever_ranks_and_reports():
    task = RetrievalTask(BM25_CORPUS, [("q", "bird")], {"q": {"d3": 1}})
    report = evaluate(BM25Retriever(), task)
    assert report.mean == 1.0 and report.strategy == "lexical"
    jsonschema.validate(report.to_json(), load_schema("eval_report"))


# ---------------------------------------------------------------- throughput

def test_synthetic_document_length():
    from m2lab import tokenizer as tok
    assert len(tok.tokenize(synthetic_document(300))) == 300


def test_bench_rows_and_monotonicity():
    model = EncoderModel.initialize(EncoderConfig(d_model=16, monarch_b=4, n_layers=1, max_seq_len=8192))
    rows = bench_encode(model, (128, 2048, 8192), repeats=5)
    assert [r["length"] for r in rows] == [128, 2048, 8192]
    secs = [r["seconds"] for r in rows]
    assert secs == sorted(secs)
    jsonschema.validate({"max_seq_len": 8192, "strategy": "truncate", "rows": rows}, load_schema("bench_report"))
    table = format_bench_table(rows, "m2", 8192)
    assert table.splitlines()[0] == "| Model | Max. Seq. Length | 128 | 2048 | 8192 |"


def test_bench_truncation_bound():
    model = EncoderModel.initialize(EncoderConfig(d_model=16, monarch_b=4, n_layers=1, max_seq_len=128))
    with pytest.raises(BoundsError):
        bench_encode(model, (256,), repeats=1)


@pytest.mark.slow
def test_chunked_cost_grows_linearly():
    model = EncoderModel.initialize(EncoderConfig(d_model=16, monarch_b=4, n_layers=1, max_seq_len=2048))
    rows = bench_encode(model, (2048, 32768), CHUNK_AVERAGE, repeats=5)
    ratio = rows[1]["seconds"] / rows[0]["seconds"]
    assert 8 <= ratio <= 32
