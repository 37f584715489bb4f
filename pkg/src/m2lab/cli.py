"""Command-line entry point: ``m2lab <command> [options]``.

Exit codes: 0 success, 2 usage/configuration/data error, 3 training failure.
Configuration files are INI-style (``[section]`` headers, ``key = value``);
unknown sections or keys are rejected. Every run writes its resolved
configuration next to its outputs.
"""

import argparse
import configparser
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import checkpoint as ckpt
from .corpora import desk_sources
from .encoder import EncoderConfig, EncoderModel, extend_model
from .errors import M2LabError, TrainingFailure
from .retrieval import (BM25Retriever, EmbeddingStrategy, bench_encode, embed_document,
                        evaluate, format_bench_table, load_task, read_jsonl, save_task)
from .synth import NeedleTaskSpec, generate_needle_task, position_sweep, training_pairs
from .training import MixtureSpec, build_mixture, finetune, pretrain, write_metrics

log = logging.getLogger("m2lab")

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 2, 3


def _floats(text):
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text):
    return tuple(int(x) for x in text.split(",") if x.strip())


SCHEMA = {
    "run": {"seed": int},
    "encoder": {"vocab_size": int, "d_model": int, "n_layers": int, "max_seq_len": int,
                "short_conv_width": int, "monarch_b": int, "mlm_mask_prob": float, "seed": int},
    "mixture": {"variable": _floats, "maximum": _floats, "n_passages": int, "corpus_seed": int},
    "pretrain": {"steps": int, "batch_size": int, "lr": float, "warmup_fraction": float},
    "finetune": {"loss": str, "negatives_per_pair": int, "batch_size": int, "micro_batch": int,
                 "lr": float, "max_grad_norm": float, "epochs": int, "scale": float,
                 "max_pair_steps": int},
    "eval": {"strategy": str, "k": int},
    "synth": {"n_queries": int, "n_distractors": int, "passage_len": int, "position": int,
              "key_len": int, "pool_size": int, "seed": int, "positions": _ints},
    "bench": {"lengths": _ints, "repeats": int, "strategy": str},
}

DEFAULTS = {
    "run": {"seed": 0},
    "mixture": {"variable": (0.10, 0.10, 0.10), "maximum": (0.24, 0.23, 0.23),
                "n_passages": 200, "corpus_seed": 0},
    "pretrain": {"steps": 200, "batch_size": 4, "lr": 5e-4, "warmup_fraction": 0.06},
    "finetune": {"loss": "opl", "negatives_per_pair": 32, "batch_size": 32, "micro_batch": 1,
                 "lr": 5e-6, "max_grad_norm": 1.0, "epochs": 1, "scale": 20.0, "max_pair_steps": 0},
    "eval": {"strategy": "truncate", "k": 10},
    "synth": {"positions": ()},
    "bench": {"lengths": (128, 2048, 8192, 32768), "repeats": 5, "strategy": "truncate"},
}


class UsageError(M2LabError):
    pass


def load_config(path):
    """Parse an INI file into ``{section: {key: typed value}}`` with defaults filled in."""
    cfg = {s: dict(v) for s, v in DEFAULTS.items()}
    if path is None:
        return cfg
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise UsageError(f"cannot parse {path}: {exc}") from exc
    for section in parser.sections():
        if section not in SCHEMA:
            raise UsageError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise UsageError(f"{path}: unknown key {key!r} in [{section}]")
            try:
                cfg.setdefault(section, {})[key] = SCHEMA[section][key](raw)
            except ValueError as exc:
                raise UsageError(f"{path}: bad value for {section}.{key}: {raw!r}") from exc
    return cfg


def dump_config(cfg):
    lines = []
    for section in SCHEMA:
        values = cfg.get(section)
        if not values:
            continue
        lines.append(f"[{section}]")
        for key in sorted(values):
            v = values[key]
            v = ",".join(str(x) for x in v) if isinstance(v, tuple) else v
            lines.append(f"{key} = {v}")
        lines.append("")
    return "\n".join(lines)


def _record_config(cfg, out_dir):
    text = dump_config(cfg)
    log.info("resolved configuration:\n%s", text)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "config.resolved.ini").write_text(text)


def _seed(cfg, args):
    return args.seed if args.seed is not None else cfg["run"]["seed"]


def _encoder_config(cfg, seed):
    values = dict(cfg.get("encoder", {}))
    values.setdefault("seed", seed)
    try:
        return EncoderConfig(**values)
    except M2LabError as exc:
        raise UsageError(str(exc)) from exc


def _mixture(cfg):
    m = cfg["mixture"]
    if len(m["variable"]) != len(m["maximum"]):
        raise UsageError("mixture.variable and mixture.maximum need one weight per source")
    cells = tuple((i, "variable", w) for i, w in enumerate(m["variable"]))
    cells += tuple((i, "maximum", w) for i, w in enumerate(m["maximum"]))
    try:
        return MixtureSpec(cells)
    except M2LabError as exc:
        raise UsageError(str(exc)) from exc


def _strategy(name):
    kinds = {"truncate": "truncate", "chunk": "chunk_average", "chunk_average": "chunk_average"}
    if name not in kinds:
        raise UsageError(f"unknown strategy {name!r}")
    return EmbeddingStrategy(kinds[name])


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _warm_start(path, config):
    base = ckpt.load_checkpoint(path)
    b = base.config
    for field in ("vocab_size", "d_model", "n_layers", "short_conv_width", "monarch_b"):
        if getattr(b, field) != getattr(config, field):
            raise UsageError(f"warm-start shape mismatch: {field} is {getattr(b, field)} in "
                             f"{path} but {getattr(config, field)} in the config")
    if config.max_seq_len == b.max_seq_len:
        return base
    try:
        return extend_model(base, config.max_seq_len)
    except M2LabError as exc:
        raise UsageError(f"cannot warm-start from {path}: {exc}") from exc


# ---------------------------------------------------------------- commands

def cmd_pretrain(args):
    if args.config is None:
        raise UsageError("pretrain needs --config")
    cfg = load_config(args.config)
    seed = _seed(cfg, args)
    config = _encoder_config(cfg, seed)
    out = Path(args.out or "pretrain_out")
    _record_config(cfg, out)
    model = _warm_start(args.warm_start, config) if args.warm_start else EncoderModel.initialize(config)
    m = cfg["mixture"]
    sources = desk_sources(m["n_passages"], m["corpus_seed"])
    stream = build_mixture(sources, _mixture(cfg), config.max_seq_len, seed)
    p = cfg["pretrain"]
    model, history = pretrain(model, stream, p["steps"], seed, batch_size=p["batch_size"],
                              peak_lr=p["lr"], warmup_fraction=p["warmup_fraction"])
    ckpt.save_checkpoint(model, out / "model.ckpt")
    write_metrics(out / "metrics.tsv", history)
    return EXIT_OK


def _load_model(path):
    if path is None:
        raise UsageError("--checkpoint is required")
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    return ckpt.load_checkpoint(path)


def cmd_finetune(args):
    cfg = load_config(args.config)
    seed = _seed(cfg, args)
    model = _load_model(args.checkpoint)
    task = load_task(args.task)
    f = dict(cfg["finetune"])
    if args.loss:
        f["loss"] = args.loss
    teacher = _load_model(args.teacher) if args.teacher else None
    out = Path(args.out or "finetuned.ckpt")
    _record_config(cfg, out.parent)
    result = finetune(model, training_pairs(task), f["loss"], negatives_per_pair=f["negatives_per_pair"],
                      batch_size=f["batch_size"], micro_batch=f["micro_batch"], lr=f["lr"],
                      max_grad_norm=f["max_grad_norm"], epochs=f["epochs"], seed=seed,
                      teacher=teacher, scale=f["scale"], max_pair_steps=f["max_pair_steps"] or None)
    ckpt.save_checkpoint(result.model, out)
    return EXIT_OK


def cmd_eval(args):
    cfg = load_config(args.config)
    task = load_task(args.task)
    strategy = _strategy(args.strategy or cfg["eval"]["strategy"])
    backend = BM25Retriever() if args.bm25 else _load_model(args.checkpoint)
    report = evaluate(backend, task, strategy, k=cfg["eval"]["k"])
    out = args.out or "eval_report.json"
    _write_json(out, report.to_json())
    print(f"mean nDCG@{cfg['eval']['k']}: {report.mean:.4f}")
    return EXIT_OK


def cmd_synth(args):
    cfg = load_config(args.config)
    seed = _seed(cfg, args)
    s = dict(cfg["synth"])
    positions = s.pop("positions")
    s.setdefault("seed", seed)
    try:
        spec = NeedleTaskSpec(**s)
    except (TypeError, M2LabError) as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out or "synth_out")
    _record_config(cfg, out)
    save_task(generate_needle_task(spec), out / "task")
    if args.checkpoint:
        model = _load_model(args.checkpoint)
        strategy = _strategy(args.strategy or cfg["eval"]["strategy"])
        report = position_sweep(model, strategy, spec, positions or None)
        _write_json(out / "sweep.json", report.to_json())
        print(report.table())
    return EXIT_OK


def cmd_bench(args):
    cfg = load_config(args.config)
    model = _load_model(args.checkpoint)
    b = cfg["bench"]
    strategy = _strategy(args.strategy or b["strategy"])
    rows = bench_encode(model, b["lengths"], strategy, repeats=b["repeats"])
    out = Path(args.out or "bench_out")
    out.mkdir(parents=True, exist_ok=True)
    table = format_bench_table(rows, "m2-encoder", model.max_seq_len)
    (out / "bench.txt").write_text(table + "\n")
    _write_json(out / "bench.json", {"max_seq_len": model.max_seq_len, "strategy": strategy.kind,
                                     "rows": rows})
    print(table)
    return EXIT_OK


def cmd_extend_pos(args):
    model = _load_model(args.checkpoint)
    if args.new_len is None:
        raise UsageError("extend-pos needs --new-len")
    try:
        extended = extend_model(model, args.new_len)
    except M2LabError as exc:
        raise UsageError(str(exc)) from exc
    ckpt.save_checkpoint(extended, args.out or "extended.ckpt")
    return EXIT_OK


def cmd_embed(args):
    model = _load_model(args.checkpoint)
    rows = read_jsonl(args.input)
    strategy = _strategy(args.strategy or "truncate")
    out = args.out or "embeddings.jsonl"
    with open(out, "w") as fh:
        for _id, text in rows:
            vec = embed_document(model, text, strategy)
            fh.write(json.dumps({"_id": _id, "embedding": [float(x) for x in vec]}) + "\n")
    return EXIT_OK


COMMANDS = {"pretrain": cmd_pretrain, "finetune": cmd_finetune, "eval": cmd_eval, "synth": cmd_synth,
            "bench": cmd_bench, "extend-pos": cmd_extend_pos, "embed": cmd_embed}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="m2lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--checkpoint")
        p.add_argument("--strategy", choices=("truncate", "chunk"))
        if name == "pretrain":
            p.add_argument("--warm-start")
        if name == "finetune":
            p.add_argument("--task", required=True)
            p.add_argument("--loss", choices=("mnrl", "opl", "pl"))
            p.add_argument("--teacher")
        if name == "eval":
            p.add_argument("--task", required=True)
            p.add_argument("--bm25", action="store_true")
        if name == "extend-pos":
            p.add_argument("--new-len", type=int)
        if name == "embed":
            p.add_argument("--input", required=True)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except TrainingFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (M2LabError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
