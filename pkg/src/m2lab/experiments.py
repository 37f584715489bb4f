"""Desk-scale ablation harnesses.

Each harness is a frozen setup dataclass plus a function that runs it and
returns a result with a ``table()`` method mirroring the layout of the
corresponding published ablation table. The default setups are the measured
configurations the acceptance suite runs; every field can be overridden for a
quicker smoke run.
"""

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .corpora import desk_sources
from .encoder import EncoderConfig, EncoderModel, extend_model
from .retrieval import TRUNCATE, evaluate
from .synth import (NeedleTaskSpec, generate_separable_task, needle_training_task,
                    position_sweep, training_pairs, visibility_regimes)
from .training import MixtureSpec, build_mixture, finetune, mlm_accuracy, pretrain


def _config(d_model, n_layers, max_seq_len, seed):
    b = int(round(d_model ** 0.5))
    return EncoderConfig(d_model=d_model, monarch_b=b, n_layers=n_layers,
                         max_seq_len=max_seq_len, seed=seed)


def _markdown(header, rows):
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(str(c) for c in row) + " |" for row in rows]
    return "\n".join(lines)


# ---------------------------------------------------------------- OPL at batch size 1

@dataclass(frozen=True)
class SeparableSetup:
    d_model: int = 64
    n_layers: int = 1
    max_seq_len: int = 512
    doc_len: int = 480
    repeats: int = 8
    key_len: int = 4
    n_train: int = 1000
    n_test: int = 128
    pair_steps: int = 2000
    negatives: int = 1
    lr: float = 1e-3
    seed: int = 0


@dataclass
class SeparableResult:
    baseline: float
    final: float
    pair_steps: int
    seconds: float
    model: object = None
    test_task: object = None


def separable_opl(setup=SeparableSetup()):
    """Fine-tune a fresh encoder with OPL at batch size 1 on the separable key task.

    ``baseline`` is the untrained encoder's test nDCG@10, reported so the
    fine-tuned score can be read against it.
    """
    model = EncoderModel.initialize(_config(setup.d_model, setup.n_layers, setup.max_seq_len, setup.seed))
    train = generate_separable_task(setup.n_train, setup.doc_len, setup.key_len, setup.repeats,
                                    seed=setup.seed + 1)
    test = generate_separable_task(setup.n_test, setup.doc_len, setup.key_len, setup.repeats,
                                   seed=setup.seed + 2)
    baseline = evaluate(model, test).mean
    t0 = time.perf_counter()
    result = finetune(model, training_pairs(train), "opl", negatives_per_pair=setup.negatives,
                      batch_size=1, micro_batch=1, lr=setup.lr, epochs=100,
                      max_pair_steps=setup.pair_steps, seed=setup.seed)
    seconds = time.perf_counter() - t0
    return SeparableResult(baseline, evaluate(result.model, test).mean, result.pair_steps, seconds,
                           result.model, test)


# ---------------------------------------------------------------- warm versus cold start

@dataclass(frozen=True)
class WarmColdSetup:
    d_model: int = 16
    n_layers: int = 2
    short_len: int = 256
    long_len: int = 1024
    short_steps: int = 600
    long_steps: int = 60
    batch_size: int = 4
    lr: float = 3e-3
    n_passages: int = 100
    eval_examples: int = 8
    seed: int = 0


@dataclass
class WarmColdResult:
    warm: float
    cold: float
    long_len: int
    long_steps: int

    def table(self):
        return _markdown(["Model", "Max. Seq. Length", "Checkpoint Selection", "MLM Accuracy"],
                         [["M2-encoder", self.long_len, "Warm-Start", f"{100 * self.warm:.1f}"],
                          ["M2-encoder", self.long_len, "Cold-Start", f"{100 * self.cold:.1f}"]])


def warm_vs_cold(setup=WarmColdSetup()):
    """MLM accuracy of a warm-started and a cold-started long model after the same budget.

    The warm model is pretrained at ``short_len``, extended to ``long_len`` and
    trained ``long_steps`` more; the cold model trains ``long_steps`` from
    scratch at ``long_len``. Accuracy is measured on held-out maximum-length
    examples from sources the models never saw.
    """
    sources = desk_sources(setup.n_passages, seed=setup.seed)
    held_out = desk_sources(max(setup.n_passages // 3, 1), seed=setup.seed + 99)
    cfg = _config(setup.d_model, setup.n_layers, setup.short_len, setup.seed)
    short, _ = pretrain(cfg, build_mixture(sources, MixtureSpec(), setup.short_len, setup.seed + 1),
                        setup.short_steps, seed=setup.seed + 1, batch_size=setup.batch_size,
                        peak_lr=setup.lr)

    def long_stream():
        return build_mixture(sources, MixtureSpec(), setup.long_len, setup.seed + 2)

    warm, _ = pretrain(extend_model(short, setup.long_len), long_stream(), setup.long_steps,
                       seed=setup.seed + 2, batch_size=setup.batch_size, peak_lr=setup.lr)
    cold, _ = pretrain(cfg.replace(max_seq_len=setup.long_len), long_stream(), setup.long_steps,
                       seed=setup.seed + 2, batch_size=setup.batch_size, peak_lr=setup.lr)
    examples = [e.ids for e in itertools.islice(
        build_mixture(held_out, MixtureSpec.only("maximum"), setup.long_len, setup.seed + 7),
        setup.eval_examples)]
    p = cfg.mlm_mask_prob
    return WarmColdResult(mlm_accuracy(warm, examples, p, setup.seed),
                          mlm_accuracy(cold, examples, p, setup.seed),
                          setup.long_len, setup.long_steps)


# ---------------------------------------------------------------- needle sweep

@dataclass(frozen=True)
class NeedleSetup:
    d_model: int = 64
    n_layers: int = 1
    full_len: int = 512
    truncated_len: int = 128
    passage_len: int = 8
    key_len: int = 6
    full_queries: int = 100
    truncated_queries: int = 300
    train_queries: int = 2000
    full_steps: int = 4000
    truncated_steps: int = 8000
    lr: float = 1e-3
    seed: int = 0

    def spec(self, n_queries):
        return NeedleTaskSpec(n_queries=n_queries, passage_len=self.passage_len,
                              key_len=self.key_len, seed=self.seed)


@dataclass
class NeedleResult:
    full: object            # SweepReport
    truncated: object       # SweepReport
    visible: list           # slots fully inside the truncated window
    hidden: list            # slots starting past it
    seconds: float = 0.0

    @property
    def truncated_gap(self):
        vis = np.mean([self.truncated.scores[p] for p in self.visible])
        hid = np.mean([self.truncated.scores[p] for p in self.hidden])
        return float(vis - hid)

    def table(self):
        rows = [[p, f"{100 * f:.1f}", f"{100 * t:.1f}"]
                for p, f, t in zip(self.full.positions, self.full.scores, self.truncated.scores)]
        return _markdown(["Answer Position in Concat. Passage", "Full length", "Truncated"], rows)


def _needle_model(setup, S, n_steps, max_position):
    model = EncoderModel.initialize(_config(setup.d_model, setup.n_layers, S, setup.seed))
    train = needle_training_task(setup.spec(setup.train_queries), seed=setup.seed + 11,
                                 max_position=max_position)
    return finetune(model, training_pairs(train), "opl", negatives_per_pair=1, batch_size=1,
                    lr=setup.lr, epochs=100, max_pair_steps=n_steps, seed=setup.seed).model


def needle_experiment(setup=NeedleSetup()):
    """Position sweep of a full-length model and of a truncating one.

    Each model is fine-tuned on needle documents whose relevant slot it can
    see: every slot for the full-length model, the visible slots for the
    truncating one.
    """
    t0 = time.perf_counter()
    probe = setup.spec(1)
    if probe.passage_len * probe.n_passages + probe.n_distractors + 2 > setup.full_len:
        raise ValueError("full-length model is shorter than the needle documents")
    visible, hidden = visibility_regimes(probe, setup.truncated_len)
    full = _needle_model(setup, setup.full_len, setup.full_steps, None)
    full_report = position_sweep(full, TRUNCATE, setup.spec(setup.full_queries))
    short = _needle_model(setup, setup.truncated_len, setup.truncated_steps, max(visible))
    short_report = position_sweep(short, TRUNCATE, setup.spec(setup.truncated_queries))
    return NeedleResult(full_report, short_report, visible, hidden, time.perf_counter() - t0)


# ---------------------------------------------------------------- pretraining example selection

@dataclass(frozen=True)
class SelectionSetup:
    d_model: int = 16
    n_layers: int = 1
    max_seq_len: int = 256
    pretrain_steps: int = 150
    batch_size: int = 2
    pretrain_lr: float = 3e-3
    n_passages: int = 60
    doc_len: int = 240
    repeats: int = 4
    n_train: int = 200
    n_test: int = 64
    negatives: int = 8
    pair_steps: int = 450
    finetune_lr: float = 1e-3
    seed: int = 0


SELECTIONS = (("Short Examples", MixtureSpec.only("variable")),
              ("Long Examples", MixtureSpec.only("maximum")),
              ("Mixed Examples", MixtureSpec()))


@dataclass
class SelectionResult:
    max_seq_len: int
    rows: list = field(default_factory=list)     # [(selection label, nDCG@10)]

    def table(self):
        return _markdown(["Model", "Max. Seq. Length", "Training Selection", "Synthetic nDCG@10"],
                         [["M2-encoder", self.max_seq_len, label, f"{100 * s:.1f}"]
                          for label, s in self.rows])


def mixture_ablation(setup=SelectionSetup()):
    """Pretrain on short-only, long-only and mixed examples, then fine-tune each identically.

    Fine-tuning uses a limited number of negatives per pair, as in the
    published ablation; the score is test nDCG@10 on the separable key task.
    """
    sources = desk_sources(setup.n_passages, seed=setup.seed)
    cfg = _config(setup.d_model, setup.n_layers, setup.max_seq_len, setup.seed)
    train = generate_separable_task(setup.n_train, setup.doc_len, repeats=setup.repeats,
                                    seed=setup.seed + 1)
    test = generate_separable_task(setup.n_test, setup.doc_len, repeats=setup.repeats,
                                   seed=setup.seed + 2)
    result = SelectionResult(setup.max_seq_len)
    for label, spec in SELECTIONS:
        model, _ = pretrain(cfg, build_mixture(sources, spec, setup.max_seq_len, setup.seed + 1),
                            setup.pretrain_steps, seed=setup.seed + 1,
                            batch_size=setup.batch_size, peak_lr=setup.pretrain_lr)
        tuned = finetune(model, training_pairs(train), "opl", negatives_per_pair=setup.negatives,
                         batch_size=1, lr=setup.finetune_lr, epochs=100,
                         max_pair_steps=setup.pair_steps, seed=setup.seed).model
        result.rows.append((label, evaluate(tuned, test).mean))
    return result


# ---------------------------------------------------------------- fine-tuning loss

@dataclass(frozen=True)
class LossSetup:
    d_model: int = 16
    n_layers: int = 1
    max_seq_len: int = 256
    doc_len: int = 240
    repeats: int = 8
    n_train: int = 300
    n_test: int = 64
    pair_steps: int = 600
    lr: float = 1e-3
    seed: int = 0


LOSS_ROWS = (("mnrl", 2), ("pl", 2), ("opl", 1))


@dataclass
class LossResult:
    rows: list = field(default_factory=list)     # [(loss, batch size, nDCG@10)]

    def table(self):
        base = self.rows[0][2]
        return _markdown(["Model", "Loss Function", "Batch Size", "Synthetic nDCG@10", "Delta Scores"],
                         [["M2-encoder", loss.upper(), bs, f"{100 * s:.1f}", f"{100 * (s - base):+.1f}"]
                          for loss, bs, s in self.rows])


def loss_ablation(setup=LossSetup(), teacher=None):
    """MNRL at batch 2, prototype loss at batch 2 and OPL at batch 1 from the same start.

    Every run gets the same ``pair_steps`` budget as counted by ``finetune``.
    The prototype loss aligns
    the student to ``teacher``, which defaults to a frozen copy of the
    starting model.
    """
    model = EncoderModel.initialize(_config(setup.d_model, setup.n_layers, setup.max_seq_len, setup.seed))
    teacher = model.copy() if teacher is None else teacher
    pairs = training_pairs(generate_separable_task(setup.n_train, setup.doc_len,
                                                   repeats=setup.repeats, seed=setup.seed + 1))
    test = generate_separable_task(setup.n_test, setup.doc_len, repeats=setup.repeats,
                                   seed=setup.seed + 2)
    result = LossResult()
    for loss, bs in LOSS_ROWS:
        tuned = finetune(model, pairs, loss, negatives_per_pair=1, batch_size=bs, lr=setup.lr,
                         epochs=100, max_pair_steps=setup.pair_steps, seed=setup.seed,
                         teacher=teacher if loss == "pl" else None).model
        result.rows.append((loss, bs, evaluate(tuned, test).mean))
    return result
