"""Retrieval tasks, document-embedding strategies, dense search, nDCG@k and BM25."""

import json
import math
import re
import statistics
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numeric as nm
from . import tokenizer as tok
from .encoder import encode, masked_sum
from .errors import BoundsError, DataError, EmptyInputError, UndefinedQueryError


# ---------------------------------------------------------------- task model and files

@dataclass
class RetrievalTask:
    documents: list                     # [(doc_id, text)]
    queries: list                       # [(query_id, text)]
    qrels: dict = field(default_factory=dict)  # {query_id: {doc_id: relevance}}

    def __post_init__(self):
        doc_ids = [d for d, _ in self.documents]
        query_ids = [q for q, _ in self.queries]
        if len(set(doc_ids)) != len(doc_ids):
            raise DataError("duplicate document id")
        if len(set(query_ids)) != len(query_ids):
            raise DataError("duplicate query id")
        docs, queries = set(doc_ids), set(query_ids)
        for qid, rels in self.qrels.items():
            if qid not in queries:
                raise DataError(f"qrel references unknown query {qid!r}")
            for did in rels:
                if did not in docs:
                    raise DataError(f"qrel references unknown document {did!r}")


def read_jsonl(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rows.append((str(obj["_id"]), str(obj["text"])))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed record ({exc})") from exc
    return rows


def _read_qrels(path):
    qrels = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if not line.strip():
                continue
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
            qid, did, rel = parts
            try:
                rel = int(rel)
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise DataError(f"{path}:{lineno}: relevance must be an integer") from None
            qrels.setdefault(qid, {})[did] = rel
    return qrels


def load_task(directory):
    directory = Path(directory)
    return RetrievalTask(read_jsonl(directory / "corpus.jsonl"),
                         read_jsonl(directory / "queries.jsonl"),
                         _read_qrels(directory / "qrels.tsv"))


def save_task(task, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, rows in (("corpus.jsonl", task.documents), ("queries.jsonl", task.queries)):
        with open(directory / name, "w", encoding="utf-8") as fh:
            for _id, text in rows:
                fh.write(json.dumps({"_id": _id, "text": text}) + "\n")
    with open(directory / "qrels.tsv", "w", encoding="utf-8") as fh:
        fh.write("query-id\tcorpus-id\tscore\n")
        for qid, rels in task.qrels.items():
            for did, rel in rels.items():
                fh.write(f"{qid}\t{did}\t{int(rel)}\n")


# ---------------------------------------------------------------- dense embeddings

@dataclass(frozen=True)
class EmbeddingStrategy:
    kind: str = "truncate"      # "truncate" or "chunk_average"
    window: int = 0             # 0 means the model's maximum length

    def __post_init__(self):
        if self.kind not in ("truncate", "chunk_average"):
            raise ValueError(f"unknown strategy {self.kind!r}")
        if self.window < 0:
            raise ValueError("window must be positive")


TRUNCATE = EmbeddingStrategy("truncate")
CHUNK_AVERAGE = EmbeddingStrategy("chunk_average")


def _window(model, strategy):
    return strategy.window or model.max_seq_len


def _pooled(model, ids):
    return masked_sum(encode(model, ids), len(ids)).values / len(ids)


def embed_document(model, text, strategy=TRUNCATE):
    """Unit vector for a document under the truncation or chunk-average strategy."""
    if not tok.text_bytes(text):
        raise EmptyInputError("document is empty")
    S = _window(model, strategy)
    if S > model.max_seq_len:
        raise BoundsError(f"window {S} exceeds max_seq_len={model.max_seq_len}")
    with nm.no_grad():
        if strategy.kind == "truncate":
            vec = _pooled(model, tok.tokenize(text, S))
        else:
            vec = np.mean([_pooled(model, ids) for ids in tok.chunk(text, S)], axis=0)
    return vec / np.linalg.norm(vec)


def embed_query(model, text):
    """Queries are always truncated at the model's maximum length."""
    return embed_document(model, text, TRUNCATE)


# ---------------------------------------------------------------- index and search

class VectorIndex:
    """Brute-force inner-product index over unit-norm rows."""

    def __init__(self, matrix, doc_ids):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != len(doc_ids):
            raise DataError("matrix rows and doc ids differ")
        norms = np.linalg.norm(matrix, axis=1)
        if matrix.size and np.abs(norms - 1.0).max() > 1e-6:
            raise DataError("index rows must be unit-norm")
        self.matrix = matrix
        self.doc_ids = list(doc_ids)

    def __len__(self):
        return len(self.doc_ids)


def search(index, query_embedding, k):
    """Top-k (doc_id, score) by dot product, ties broken by doc_id."""
    if k > len(index):
        raise BoundsError(f"k={k} exceeds the {len(index)} indexed documents")
    scores = index.matrix @ np.asarray(query_embedding, dtype=float)
    order = sorted(range(len(index)), key=lambda i: (-scores[i], index.doc_ids[i]))[:k]
    return [(index.doc_ids[i], float(scores[i])) for i in order]


# ---------------------------------------------------------------- metric

def ndcg_at_k(ranking, qrels, k=10):
    """nDCG@k with gain ``2^rel - 1`` and discount ``log2(rank + 1)``.

    ``qrels`` maps doc id to relevance for one query; ``None`` marks a query
    without judgments.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if qrels is None:
        raise UndefinedQueryError("query has no relevance judgments")
    dcg = sum((2.0 ** qrels.get(d, 0) - 1.0) / math.log2(i + 2) for i, d in enumerate(ranking[:k]))
    ideal = sorted(qrels.values(), reverse=True)[:k]
    idcg = sum((2.0 ** r - 1.0) / math.log2(i + 2) for i, r in enumerate(ideal))
    return dcg / idcg if idcg > 0 else 0.0


# ---------------------------------------------------------------- retrievers and evaluation

class DenseRetriever:
    def __init__(self, model, strategy=TRUNCATE):
        self.model = model
        self.strategy = strategy
        self.index = None

    @property
    def name(self):
        c = self.model.config
        return f"m2-encoder-S{c.max_seq_len}-d{c.d_model}-L{c.n_layers}"

    def build(self, documents):
        vecs = [embed_document(self.model, text, self.strategy) for _, text in documents]
        self.index = VectorIndex(np.array(vecs).reshape(len(vecs), -1), [d for d, _ in documents])

    def search(self, query, k):
        return search(self.index, embed_query(self.model, query), k)


_WORD = re.compile(r"\w+")


def bm25_tokens(text):
    return _WORD.findall(text.lower())


@dataclass
class BM25Stats:
    N: int
    df: dict
    doc_len: list
    avg_len: float
    tf: list

    @classmethod
    def build(cls, docs_tokens):
        df = Counter()
        for toks in docs_tokens:
            df.update(set(toks))
        lens = [len(t) for t in docs_tokens]
        avg = sum(lens) / len(lens) if lens else 0.0
        return cls(len(docs_tokens), dict(df), lens, avg, [Counter(t) for t in docs_tokens])

    def idf(self, term):
        df = self.df.get(term, 0)
        return math.log(1.0 + (self.N - df + 0.5) / (df + 0.5))


def bm25_score(query_tokens, doc, stats, k1=1.2, b=0.75):
    """Okapi BM25 of document index ``doc`` against ``query_tokens``."""
    tf = stats.tf[doc]
    norm = 1.0 - b + b * stats.doc_len[doc] / stats.avg_len if stats.avg_len else 1.0
    score = 0.0
    for t in query_tokens:
        f = tf.get(t, 0)
        if f:
            score += stats.idf(t) * f * (k1 + 1.0) / (f + k1 * norm)
    return score


class BM25Retriever:
    name = "bm25"

    def __init__(self, k1=1.2, b=0.75):
        self.k1, self.b = k1, b

    def build(self, documents):
        self.doc_ids = [d for d, _ in documents]
        self.stats = BM25Stats.build([bm25_tokens(text) for _, text in documents])

    def search(self, query, k):
        if k > len(self.doc_ids):
            raise BoundsError(f"k={k} exceeds the {len(self.doc_ids)} indexed documents")
        q = bm25_tokens(query)
        scores = [bm25_score(q, i, self.stats, self.k1, self.b) for i in range(len(self.doc_ids))]
        order = sorted(range(len(scores)), key=lambda i: (-scores[i], self.doc_ids[i]))[:k]
        return [(self.doc_ids[i], scores[i]) for i in order]


@dataclass
class EvalReport:
    per_query: dict
    mean: float
    strategy: str
    model: str

    def to_json(self):
        return {"per_query": self.per_query, "mean_ndcg@10": self.mean,
                "strategy": self.strategy, "model": self.model}


def evaluate(model_or_retriever, task, strategy=TRUNCATE, k=10):
    """Mean nDCG@k of a dense model (or any object with ``build``/``search``) on ``task``."""
    retriever = model_or_retriever
    if not hasattr(retriever, "search"):
        retriever = DenseRetriever(model_or_retriever, strategy)
    retriever.build(task.documents)
    depth = min(k, len(task.documents))
    per_query = {}
    for qid, text in task.queries:
        ranking = [d for d, _ in retriever.search(text, depth)]
        per_query[qid] = ndcg_at_k(ranking, task.qrels.get(qid), k)
    mean = float(np.mean(list(per_query.values()))) if per_query else 0.0
    label = getattr(retriever, "strategy", None)
    return EvalReport(per_query, mean, label.kind if label else "lexical", retriever.name)


# ---------------------------------------------------------------- throughput

BENCH_LENGTHS = (128, 2048, 8192, 32768)


def synthetic_document(n_tokens, seed=0):
    """Lowercase text that tokenizes to exactly ``n_tokens`` ids (CLS and SEP included)."""
    rng = np.random.default_rng(seed)
    letters = np.frombuffer(b"abcdefghijklmnopqrstuvwxyz     ", dtype=np.uint8)
    return bytes(rng.choice(letters, size=max(n_tokens - 2, 1))).decode("ascii")


def bench_encode(model, lengths=BENCH_LENGTHS, strategy=TRUNCATE, repeats=5, warmup=1):
    """Median seconds to tokenize and embed a whole ``X``-token document, per length.

    Under truncation each length must fit the model; chunk-averaging covers
    any length with ``ceil`` windows of the model's maximum length.
    """
    rows = []
    for X in lengths:
        if strategy.kind == "truncate" and X > model.max_seq_len:
            raise BoundsError(f"length {X} exceeds max_seq_len={model.max_seq_len} under truncation")
        text = synthetic_document(X, seed=X)
        for _ in range(warmup):
            embed_document(model, text, strategy)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            embed_document(model, text, strategy)
            times.append(time.perf_counter() - t0)
        rows.append({"length": int(X), "seconds": statistics.median(times)})
    return rows


def format_bench_table(rows, model_name, max_len):
    head = "| Model | Max. Seq. Length | " + " | ".join(str(r["length"]) for r in rows) + " |"
    sep = "|" + "---|" * (len(rows) + 2)
    body = f"| {model_name} | {max_len} | " + " | ".join(f"{r['seconds']:.4g}" for r in rows) + " |"
    return "\n".join((head, sep, body))
