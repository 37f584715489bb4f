"""Pretraining mixture, masking, optimizer, schedule and the two training loops."""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import numeric as nm
from . import tokenizer as tok
from .encoder import EncoderModel, embed_ids, encode, mlm_logits
from .errors import (BatchContractError, ConfigurationError, DataError, SamplingError,
                     TrainingFailure)
from .losses import DEFAULT_SCALE, PairBatch, mnrl, opl, prototype_loss

log = logging.getLogger(__name__)

LENGTH_TYPES = ("variable", "maximum")
MIN_VARIABLE_LEN = 10


# ---------------------------------------------------------------- mixture

@dataclass(frozen=True)
class MixtureSpec:
    """Sampling weight per (source index, length type) cell."""

    weights: tuple = ((0, "variable", 0.10), (1, "variable", 0.10), (2, "variable", 0.10),
                      (0, "maximum", 0.24), (1, "maximum", 0.23), (2, "maximum", 0.23))

    def __post_init__(self):
        total = sum(w for _, _, w in self.weights)
        if abs(total - 1.0) > 1e-9:
            raise ConfigurationError(f"mixture weights sum to {total}, not 1")
        for _, kind, w in self.weights:
            if kind not in LENGTH_TYPES or w < 0:
                raise ConfigurationError(f"bad mixture cell ({kind}, {w})")

    @classmethod
    def only(cls, kind, n_sources=3):
        return cls(tuple((s, kind, 1.0 / n_sources) for s in range(n_sources)))

    @classmethod
    def single(cls, source, kind):
        return cls(((source, kind, 1.0),))

    def cells(self):
        return [(s, k) for s, k, _ in self.weights]

    def probabilities(self):
        return np.array([w for _, _, w in self.weights])


@dataclass
class MixtureExample:
    source: int
    kind: str
    ids: list


def build_mixture(sources, spec, S, seed):
    """Endless deterministic stream of :class:`MixtureExample`.

    Variable-type examples are one passage cut to a length drawn uniformly
    from [10, S]; maximum-type examples join successive passages with SEP
    until exactly S tokens.
    """
    if not sources:
        raise DataError("no sources given")
    for i, src in enumerate(sources):
        if not src:
            raise DataError(f"source {i} is empty")
    for s, _ in spec.cells():
        if not 0 <= s < len(sources):
            raise DataError(f"mixture references missing source {s}")
    encoded = [[tok.text_bytes(p) for p in src] for src in sources]
    cells = spec.cells()
    probs = spec.probabilities()
    rng = np.random.default_rng(seed)
    while True:
        s, kind = cells[int(rng.choice(len(cells), p=probs))]
        passages = encoded[s]
        start = int(rng.integers(len(passages)))
        if kind == "variable":
            target = int(rng.integers(MIN_VARIABLE_LEN, S + 1))
            ids = tok.wrap(passages[start])
            if len(ids) > target:
                ids = ids[:target - 1] + [tok.SEP]
        else:
            ids = [tok.CLS]
            j = start
            while len(ids) < S:
                ids.extend(passages[j % len(passages)])
                ids.append(tok.SEP)
                j += 1
            ids = ids[:S]
        yield MixtureExample(s, kind, ids)


def mask_tokens(ids, p, rng, vocab_size=tok.VOCAB_SIZE, mask_id=tok.MASK, n_regular=256):
    """Select non-special positions with probability ``p``; 80% MASK, 10% random, 10% kept.

    Returns ``(masked_ids, labels)`` with labels ``IGNORE_INDEX`` off the selection.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("mask probability must lie in (0, 1)")
    rng = np.random.default_rng(rng)
    ids = np.asarray(ids, dtype=np.int64)
    eligible = ~np.isin(ids, list(tok.SPECIALS))
    selected = eligible & (rng.random(ids.size) < p)
    labels = np.where(selected, ids, nm.IGNORE_INDEX)
    roll = rng.random(ids.size)
    masked = ids.copy()
    masked[selected & (roll < 0.8)] = mask_id
    random_slots = selected & (roll >= 0.8) & (roll < 0.9)
    masked[random_slots] = rng.integers(0, min(n_regular, vocab_size), size=int(random_slots.sum()))
    return masked, labels


# ---------------------------------------------------------------- optimisation

@dataclass
class Schedule:
    total_steps: int
    peak_lr: float
    warmup_fraction: float = 0.06

    def __call__(self, step):
        T = self.total_steps
        warm = self.warmup_fraction * T
        if step <= 0:
            return 0.0
        if step >= T:
            return 0.0
        if step < warm:
            return self.peak_lr * step / warm
        return self.peak_lr * (T - step) / (T - warm)


@dataclass
class OptimizerState:
    lr: float
    betas: tuple = (0.9, 0.98)
    eps: float = 1e-6
    weight_decay: float = 1e-5
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class AdamW:
    """Adaptive moments with decoupled weight decay."""

    def __init__(self, params, lr=5e-4, betas=(0.9, 0.98), eps=1e-6, weight_decay=1e-5):
        self.params = list(params)
        self.state = OptimizerState(lr, tuple(betas), eps, weight_decay)
        for i, p in enumerate(self.params):
            self.state.m[i] = np.zeros_like(p.values)
            self.state.v[i] = np.zeros_like(p.values)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self, lr=None):
        st = self.state
        lr = st.lr if lr is None else lr
        b1, b2 = st.betas
        st.step += 1
        c1 = 1.0 - b1 ** st.step
        c2 = 1.0 - b2 ** st.step
        for i, p in enumerate(self.params):
            g = p.grad
            m, v = st.m[i], st.v[i]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.values *= 1.0 - lr * st.weight_decay
            p.values -= lr * (m / c1) / (np.sqrt(v / c2) + st.eps)


def grad_norm(params):
    return float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in params)))


def clip_grad_norm(params, max_norm):
    """Scale gradients in place so their global L2 norm is at most ``max_norm``; returns the old norm."""
    norm = grad_norm(params)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in params:
            p.grad *= scale
    return norm


# ---------------------------------------------------------------- pretraining

@dataclass
class StepMetrics:
    step: int
    lr: float
    loss: float
    mlm_accuracy: float


def mlm_step_loss(model, masked_ids, labels):
    """Masked-token loss and (correct, total) counts for one sequence."""
    n = len(masked_ids)
    states = encode(model, masked_ids)
    logits = mlm_logits(model, states)
    full = np.full(states.shape[0], nm.IGNORE_INDEX)
    full[:n] = labels
    loss = nm.cross_entropy_rows(logits, full)
    sel = full != nm.IGNORE_INDEX
    correct = int((logits.values[sel].argmax(axis=1) == full[sel]).sum())
    return loss, correct, int(sel.sum())


def write_metrics(path, metrics):
    with open(path, "w") as fh:
        fh.write("step\tlr\tloss\tmlm_accuracy\n")
        for m in metrics:
            fh.write(f"{m.step}\t{m.lr:.10g}\t{m.loss:.10g}\t{m.mlm_accuracy:.10g}\n")


def pretrain(model_or_config, stream, steps, seed, batch_size=4, peak_lr=5e-4,
             warmup_fraction=0.06, mask_prob=None, log_every=0):
    """Masked-language-model training on examples drawn from ``stream``.

    ``model_or_config`` is either an :class:`EncoderModel` (trained in place,
    e.g. a warm start) or an ``EncoderConfig`` for a fresh model. Returns the
    model and the per-step metrics.
    """
    if steps <= 0:
        raise ConfigurationError("steps must be positive")
    model = model_or_config if isinstance(model_or_config, EncoderModel) \
        else EncoderModel.initialize(model_or_config)
    p = model.config.mlm_mask_prob if mask_prob is None else mask_prob
    rng = np.random.default_rng(seed)
    opt = AdamW(model.parameters(), lr=peak_lr)
    sched = Schedule(steps, peak_lr, warmup_fraction)
    history = []
    for step in range(steps):
        opt.zero_grad()
        total_loss, correct, count = 0.0, 0, 0
        for _ in range(batch_size):
            ex = next(stream)
            masked, labels = mask_tokens(ex.ids, p, rng)
            loss, c, k = mlm_step_loss(model, masked, labels)
            (loss * (1.0 / batch_size)).backward()
            total_loss += loss.item() / batch_size
            correct += c
            count += k
        if not np.isfinite(total_loss):
            raise TrainingFailure(step)
        lr = sched(step)
        opt.step(lr)
        acc = correct / count if count else 0.0
        history.append(StepMetrics(step, lr, total_loss, acc))
        if log_every and step % log_every == 0:
            log.info("step %d lr %.3g loss %.4f acc %.3f", step, lr, total_loss, acc)
    return model, history


def mlm_accuracy(model, examples, p, seed):
    """Top-1 accuracy over masked positions of ``examples`` (forward only)."""
    rng = np.random.default_rng(seed)
    correct = total = 0
    with nm.no_grad():
        for ids in examples:
            masked, labels = mask_tokens(ids, p, rng)
            _, c, k = mlm_step_loss(model, masked, labels)
            correct += c
            total += k
    return correct / total if total else 0.0


# ---------------------------------------------------------------- fine-tuning

def sample_negatives(n_docs, query_index, k, rng):
    """``k`` distinct document indices drawn uniformly, never ``query_index``."""
    if k >= n_docs:
        raise SamplingError(f"cannot draw {k} negatives from {n_docs} documents")
    picks = np.asarray(rng.choice(n_docs - 1, size=k, replace=False))
    return [int(i) + (i >= query_index) for i in picks]


@dataclass
class FinetuneResult:
    model: EncoderModel
    losses: list
    pair_steps: int
    optimizer_steps: int


def _embed(model, text):
    return embed_ids(model, tok.tokenize(text, model.max_seq_len))


def _units(kind, n, order, negatives_per_pair, rng):
    """Per query: OPL yields one positive and k negative single-pair units; the others one unit."""
    for i in order:
        if kind == "opl":
            yield (i, i, 1.0)
            for j in sample_negatives(n, i, negatives_per_pair, rng):
                yield (i, j, 0.0)
        elif kind == "mnrl":
            yield (i, sample_negatives(n, i, negatives_per_pair, rng))
        else:
            yield (i,)


def finetune(model, pairs, loss_kind="opl", negatives_per_pair=32, batch_size=32, micro_batch=1,
             lr=5e-6, max_grad_norm=1.0, epochs=1, seed=0, teacher=None, scale=DEFAULT_SCALE,
             max_pair_steps=None, weight_decay=0.0, warmup_fraction=0.06):
    """Contrastive fine-tuning of a copy of ``model`` on (query, document) text pairs.

    OPL and PL accumulate ``batch_size`` single-pair losses per optimizer step,
    computed ``micro_batch`` pairs at a time; the update does not depend on the
    micro-batch size. MNRL needs every document of a query in one graph: its
    batch is the positive plus ``min(negatives_per_pair, batch_size - 1)``
    negatives, one optimizer step per query.
    """
    if loss_kind not in ("opl", "mnrl", "pl"):
        raise ConfigurationError(f"unknown loss {loss_kind!r}")
    if loss_kind == "mnrl" and batch_size < 2:
        raise BatchContractError("MNRL needs a batch of at least 2 (positive plus a negative)")
    if batch_size < 1 or micro_batch < 1:
        raise ConfigurationError("batch sizes must be positive")
    if loss_kind == "pl" and teacher is None:
        raise ConfigurationError("prototype loss needs a teacher model")
    n = len(pairs)
    if n < 2:
        raise DataError("need at least two pairs")
    model = model.copy()
    params = model.parameters()
    rng = np.random.default_rng(seed)
    opt = AdamW(params, lr=lr, weight_decay=weight_decay)

    k = min(negatives_per_pair, n - 1)
    if loss_kind == "mnrl":
        k = min(k, batch_size - 1)
        units_per_step = 1
    else:
        units_per_step = batch_size
    per_query = k + 1 if loss_kind == "opl" else 1
    total_units = epochs * n * per_query
    if max_pair_steps is not None:
        total_units = min(total_units, max_pair_steps)
    total_steps = max(1, -(-total_units // units_per_step))
    sched = Schedule(total_steps, lr, warmup_fraction)

    teacher_cache = {}

    def teacher_vec(text):
        if text not in teacher_cache:
            with nm.no_grad():
                teacher_cache[text] = _embed(teacher, text).values.copy()
        return teacher_cache[text]

    def unit_loss(unit):
        if loss_kind == "opl":
            i, j, label = unit
            return opl(_embed(model, pairs[i][0]), _embed(model, pairs[j][1]), label)
        if loss_kind == "mnrl":
            i, negs = unit
            batch = PairBatch(_embed(model, pairs[i][0]), _embed(model, pairs[i][1]),
                              [_embed(model, pairs[j][1]) for j in negs])
            return mnrl(batch, scale)
        (i,) = unit
        q, d = pairs[i]
        return prototype_loss(teacher_vec(q), _embed(model, q), teacher_vec(d), _embed(model, d))

    losses = []
    done = steps = 0
    pending = []
    in_step = 0

    def flush_micro():
        nonlocal pending
        if not pending:
            return
        total = None
        for u in pending:
            l = unit_loss(u)
            losses.append(l.item())
            total = l if total is None else total + l
        (total * (1.0 / units_per_step)).backward()
        pending = []

    def optimizer_step():
        nonlocal steps, in_step
        clip_grad_norm(params, max_grad_norm)
        opt.step(sched(steps + 1) if total_steps > 1 else lr)
        opt.zero_grad()
        steps += 1
        in_step = 0

    for _ in range(epochs):
        order = rng.permutation(n)
        for unit in _units(loss_kind, n, order, k, rng):
            if max_pair_steps is not None and done >= max_pair_steps:
                break
            pending.append(unit)
            done += 1
            in_step += 1
            if len(pending) == micro_batch or in_step == units_per_step:
                flush_micro()
            if in_step == units_per_step:
                optimizer_step()
            if losses and not np.isfinite(losses[-1]):
                raise TrainingFailure(done)
    flush_micro()
    if in_step:
        optimizer_step()
    return FinetuneResult(model, losses, done, steps)
