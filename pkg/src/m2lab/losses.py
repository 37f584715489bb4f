"""Fine-tuning objectives over unit-norm query/document embeddings."""

from dataclasses import dataclass, field

import numpy as np

from . import numeric as nm
from .errors import BatchContractError, DimensionError
from .numeric import DiffArray

DEFAULT_SCALE = 20.0


def _check_unit(v, what):
    n = float(np.linalg.norm(nm.as_diff(v).values))
    if abs(n - 1.0) > 1e-6:
        raise DimensionError(f"{what} is not unit-norm (|v| = {n:.8f})")


@dataclass
class PairBatch:
    query: DiffArray
    positive: DiffArray
    negatives: list = field(default_factory=list)

    def __post_init__(self):
        self.query = nm.as_diff(self.query)
        self.positive = nm.as_diff(self.positive)
        self.negatives = [nm.as_diff(n) for n in self.negatives]
        _check_unit(self.query, "query")
        _check_unit(self.positive, "positive")
        for i, neg in enumerate(self.negatives):
            _check_unit(neg, f"negative {i}")


def mnrl(batch, scale=DEFAULT_SCALE):
    """Cross-entropy of the positive against the negatives over scaled cosine scores."""
    if not batch.negatives:
        raise BatchContractError("multiple-negatives ranking needs at least one negative")
    if scale <= 0:
        raise ValueError("scale must be positive")
    docs = [batch.positive, *batch.negatives]
    scores = nm.stack([nm.cosine_sim(batch.query, d) for d in docs]) * scale
    return nm.softmax_cross_entropy(scores, 0)


def opl(query, doc, label):
    """Squared gap between the cosine of one pair and its 0/1 label."""
    if label not in (0.0, 1.0):
        raise ValueError("label must be 1.0 (positive) or 0.0 (negative)")
    return nm.square(nm.cosine_sim(query, doc) - label)


def prototype_loss(teacher_q, student_q, teacher_p, student_p):
    """``(1 - cos(Tq, Sq)) + (1 - cos(Tp, Sp))``; teacher vectors receive no gradient."""
    tq = DiffArray(nm.as_diff(teacher_q).values)
    tp = DiffArray(nm.as_diff(teacher_p).values)
    return (1.0 - nm.cosine_sim(tq, student_q)) + (1.0 - nm.cosine_sim(tp, student_p))
