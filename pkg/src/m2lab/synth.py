"""Synthetic retrieval tasks: needle-in-a-haystack documents and a separable key task.

A needle document is 40 fixed-length passages joined by spaces: 39 lowercase
distractors drawn from a shared pool and one relevant passage that carries a
unique upper-case key. The query is the key itself. Everything except the slot
of the relevant passage is fixed by the seed, so sweeping the slot isolates
position as the only variable.
"""

import json
import string
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError
from .retrieval import TRUNCATE, RetrievalTask, evaluate

KEY_ALPHABET = string.ascii_uppercase + string.digits
MAX_DOCUMENT_CHARS = 1 << 20


@dataclass(frozen=True)
class NeedleTaskSpec:
    n_queries: int = 50
    n_distractors: int = 39
    passage_len: int = 64
    position: int = 0
    key_len: int = 6
    pool_size: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.n_queries < 1:
            raise ConfigurationError("n_queries must be positive")
        if not 0 <= self.position <= self.n_distractors:
            raise ConfigurationError(f"position must lie in [0, {self.n_distractors}]")
        if self.passage_len < self.key_len + 2:
            raise ConfigurationError("passage too short to hold the key")
        if self.passage_len * (self.n_distractors + 1) > MAX_DOCUMENT_CHARS:
            raise ConfigurationError("documents would exceed the tokenizer sanity bound")
        if self.pool_size < self.n_distractors:
            raise ConfigurationError("distractor pool smaller than the distractors per document")
        if len(KEY_ALPHABET) ** self.key_len < self.n_queries:
            raise ConfigurationError("key space too small for the number of queries")

    @property
    def n_passages(self):
        return self.n_distractors + 1


def filler(rng, n_chars):
    """Lowercase pseudo-words separated by single spaces, exactly ``n_chars`` long."""
    out = []
    size = -1                      # length of " ".join(out)
    while size < n_chars:
        w = "".join(rng.choice(list(string.ascii_lowercase), size=int(rng.integers(2, 8))))
        out.append(w)
        size += len(w) + 1
    return " ".join(out)[:n_chars]


def unique_keys(rng, n, key_len):
    keys, seen = [], set()
    alphabet = list(KEY_ALPHABET)
    while len(keys) < n:
        k = "".join(rng.choice(alphabet, size=key_len))
        if k not in seen:
            seen.add(k)
            keys.append(k)
    return keys


def keyed_passage(rng, key, n_chars):
    """Filler of length ``n_chars`` with `` key `` at a random offset."""
    inner = len(key) + 2
    left = int(rng.integers(0, n_chars - inner + 1))
    return filler(rng, left) + " " + key + " " + filler(rng, n_chars - inner - left)


def generate_needle_task(spec):
    rng = np.random.default_rng(spec.seed)
    keys = unique_keys(rng, spec.n_queries, spec.key_len)
    pool = [filler(rng, spec.passage_len) for _ in range(spec.pool_size)]
    documents, queries, qrels = [], [], {}
    for i, key in enumerate(keys):
        relevant = keyed_passage(rng, key, spec.passage_len)
        picks = rng.choice(spec.pool_size, size=spec.n_distractors, replace=False)
        passages = [pool[j] for j in picks]
        passages.insert(spec.position, relevant)
        qid, did = f"q{i:04d}", f"d{i:04d}"
        documents.append((did, " ".join(passages)))
        queries.append((qid, key))
        qrels[qid] = {did: 1}
    return RetrievalTask(documents, queries, qrels)


def key_token_span(document, key):
    """Token range ``[start, end)`` of ``key`` inside the tokenized document (CLS at 0)."""
    start = document.encode("utf-8").index(key.encode("utf-8")) + 1
    return start, start + len(key.encode("utf-8"))


def training_pairs(task):
    """(query text, relevant document text) for every query with a relevant document."""
    docs = dict(task.documents)
    pairs = []
    for qid, text in task.queries:
        rel = [d for d, r in task.qrels.get(qid, {}).items() if r > 0]
        if rel:
            pairs.append((text, docs[rel[0]]))
    return pairs


def needle_training_task(spec, seed, max_position=None):
    """Needle task with the relevant passage at a random slot per document.

    Slots are drawn uniformly from ``[0, max_position]`` (all slots by
    default). A truncating model should be trained only on slots it can see:
    pairs whose key is cut off carry no signal and pull the contrastive
    objective toward a constant-cosine solution.
    """
    top = spec.n_distractors if max_position is None else int(max_position)
    if not 0 <= top <= spec.n_distractors:
        raise ConfigurationError(f"max_position must lie in [0, {spec.n_distractors}]")
    base = replace(spec, seed=seed)
    rng = np.random.default_rng([seed, 1])
    slots = rng.integers(0, top + 1, size=spec.n_queries)
    tasks = {int(p): generate_needle_task(replace(base, position=int(p))) for p in np.unique(slots)}
    documents, queries, qrels = [], [], {}
    for i, p in enumerate(slots):
        t = tasks[int(p)]
        documents.append(t.documents[i])
        queries.append(t.queries[i])
        qrels[t.queries[i][0]] = t.qrels[t.queries[i][0]]
    return RetrievalTask(documents, queries, qrels)


def passage_start(spec, position):
    """Token index of the first byte of slot ``position`` (CLS occupies index 0)."""
    return 1 + position * (spec.passage_len + 1)


def visibility_regimes(spec, S):
    """Split slots by whether a window of ``S`` tokens can see the key.

    A slot is *visible* when the whole passage fits before the final SEP and
    *hidden* when it starts past the window. Slots straddling the cut belong
    to neither regime.
    """
    content_end = S - 1            # tokens [1, S-1) hold text after truncation
    visible, hidden = [], []
    for p in range(spec.n_passages):
        start = passage_start(spec, p)
        if start + spec.passage_len <= content_end:
            visible.append(p)
        elif start >= content_end:
            hidden.append(p)
    return visible, hidden


def generate_separable_task(n_docs=64, doc_len=512, key_len=4, repeats=8, seed=0):
    """Long lowercase documents, each sprinkled with its own upper-case key; queries are the keys."""
    if repeats * (key_len + 3) > doc_len + 1:
        raise ConfigurationError("document too short for the requested key repeats")
    rng = np.random.default_rng(seed)
    keys = unique_keys(rng, n_docs, key_len)
    seg = (doc_len - (repeats - 1)) // repeats
    documents, queries, qrels = [], [], {}
    for i, key in enumerate(keys):
        text = " ".join(keyed_passage(rng, key, seg) for _ in range(repeats))
        rest = doc_len - len(text)
        if rest >= 2:
            text += " " + filler(rng, rest - 1)
        elif rest == 1:
            text += " "
        qid, did = f"q{i:04d}", f"d{i:04d}"
        documents.append((did, text))
        queries.append((qid, key))
        qrels[qid] = {did: 1}
    return RetrievalTask(documents, queries, qrels)


@dataclass
class SweepReport:
    positions: list
    scores: list

    def to_json(self):
        return {"positions": self.positions, "scores": self.scores}

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)

    def table(self):
        lines = ["| Answer Position in Concat. Passage | nDCG@10 |", "|---|---|"]
        lines += [f"| {p} | {100 * s:.1f} |" for p, s in zip(self.positions, self.scores)]
        return "\n".join(lines)


def position_sweep(model, strategy=TRUNCATE, spec=NeedleTaskSpec(), positions=None):
    """Mean nDCG@10 with the relevant passage at each slot in turn."""
    if positions is None:
        positions = range(spec.n_passages)
    positions = [int(p) for p in positions]
    scores = []
    for p in positions:
        task = generate_needle_task(replace(spec, position=p))
        scores.append(evaluate(model, task, strategy).mean)
    return SweepReport(positions, scores)
