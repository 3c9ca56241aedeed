"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numerical failure (non-finite loss or gradient).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import gradcheck
from .data import (
    BilingualDictionary,
    CorpusFormatError,
    LanguageRegistry,
    SyntheticSpec,
    build_codeswitch,
    generate_synthetic,
    load_corpus,
    save_corpus,
    split_corpus,
    tokenize,
    write_codeswitch,
)
from .evaluation import evaluate_suite
from .losses import LossConfig, LossTermError
from .model import CheckpointError, init_model, load_checkpoint, save_checkpoint
from .numerics import NonFiniteError
from .project import export_projection, project_representations
from .trainer import TrainConfig, fit

SEED_ENV = "ORACLE_DIS_SEED"

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("oracle_dis")


class UsageError(Exception):
    pass


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


@dataclass
class RunConfig:
    objective: LossConfig
    train: TrainConfig
    model: dict
    paths: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        base = path.parent
        paths = dict(doc.get("paths", {}))
        for key, value in list(paths.items()):
            if isinstance(value, list):
                paths[key] = [str(base / v) for v in value]
            elif value is not None:
                paths[key] = str(base / value)
        model = {"hidden_layers": None, "activation": "tanh", "L": 2, **doc.get("model", {})}
        try:
            return cls(LossConfig.from_dict(doc.get("objective", {})), TrainConfig(**doc.get("train", {})), model, paths)
        except TypeError as exc:
            raise ConfigError(f"{path}: {exc}") from None


def _resolve_seed(flag_seed, config_seed: int) -> int:
    if flag_seed is not None:
        return flag_seed
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
    return config_seed


def _load_corpus_checked(path, what: str):
    if path is None:
        raise ConfigError(f"missing path for {what}")
    if not Path(path).is_file():
        raise ConfigError(f"{what} not found: {path}")
    return load_corpus(path)


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    paths = cfg.paths
    for key in ("train_corpora", "val_corpus", "test_corpus", "sts_corpus", "checkpoint_out", "report_out"):
        override = getattr(args, key, None)
        if override is not None:
            paths[key] = override
    seed = _resolve_seed(args.seed, cfg.train.seed)
    cfg.train.seed = seed

    train_paths = paths.get("train_corpora") or []
    if isinstance(train_paths, str):
        train_paths = [train_paths]
    if not train_paths:
        raise ConfigError("paths.train_corpora is empty")
    train = [_load_corpus_checked(p, "training corpus") for p in train_paths]
    val = _load_corpus_checked(paths.get("val_corpus"), "validation corpus")
    test = _load_corpus_checked(paths["test_corpus"], "test corpus") if paths.get("test_corpus") else None
    sts = _load_corpus_checked(paths["sts_corpus"], "STS corpus") if paths.get("sts_corpus") else None
    ckpt_out = paths.get("checkpoint_out")
    if not ckpt_out:
        raise ConfigError("paths.checkpoint_out is required")
    report_out = paths.get("report_out") or str(Path(ckpt_out).with_suffix(".report.json"))

    d = int(cfg.model.get("d") or train[0].d)
    for c in [*train, val, *(x for x in (test, sts) if x is not None)]:
        if c.d != d:
            raise ConfigError(f"corpus dimension {c.d} does not match model d={d}")
    hidden = cfg.model["hidden_layers"]
    hidden = [d] if hidden is None else hidden
    L = int(cfg.model["L"])
    init = init_model(seed, d, hidden, L, cfg.model["activation"])
    params, report = fit(train, val, cfg.train, cfg.objective, init)

    save_checkpoint(params, ckpt_out, cfg.objective.to_dict())
    doc = report.to_dict()
    doc["train_config"] = cfg.train.to_dict()
    doc["objective"] = cfg.objective.to_dict()
    if test is not None:
        doc["evaluation"] = evaluate_suite(test, params, sts).to_dict()
    Path(report_out).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    print(f"trained {report.iterations_run} iterations ({report.stop_reason}); "
          f"best {cfg.train.validation_metric}={report.best_validation_value:.6g} at {report.best_iteration}")
    print(f"checkpoint: {ckpt_out}\nreport: {report_out}")
    return EXIT_OK


def _registry(path) -> LanguageRegistry:
    return LanguageRegistry.load(path) if path else LanguageRegistry.default()


def cmd_eval(args) -> int:
    if not Path(args.ckpt).is_file():
        raise ConfigError(f"checkpoint not found: {args.ckpt}")
    params, _ = load_checkpoint(args.ckpt)
    corpus = _load_corpus_checked(args.corpus, "test corpus")
    sts = _load_corpus_checked(args.sts, "STS corpus") if args.sts else None
    report = evaluate_suite(corpus, params, sts)
    reg = _registry(args.registry)
    print(report.table(reg.iso(corpus.src_lang), reg.iso(corpus.tgt_lang)))
    if args.report_out:
        report.save(args.report_out)
    return EXIT_OK


def cmd_gen_synth(args) -> int:
    reg = _registry(args.registry)
    spec = SyntheticSpec(
        n_pairs=args.n, d=args.d, semantic_dim=args.k, language_offset_scale=args.offset,
        noise_sigma=args.sigma, seed=_resolve_seed(args.seed, 0), mixing=args.mixing,
        src_lang=reg.id_of(args.src), tgt_lang=reg.id_of(args.tgt), sts=args.sts,
    )
    corpus = generate_synthetic(spec)
    out = Path(args.out)
    if args.split:
        fractions = [float(x) for x in args.split.split(",")]
        parts = split_corpus(corpus, fractions, spec.seed)
        stem = out.with_suffix("")
        for name, part in zip(("train", "val", "test"), parts):
            path = Path(f"{stem}.{name}.oemb")
            save_corpus(part, path)
            print(f"{path}: {part.n} pairs, d={part.d}")
    else:
        save_corpus(corpus, out)
        print(f"{out}: {corpus.n} pairs, d={corpus.d}")
    if args.registry_out:
        reg.save(args.registry_out)
    return EXIT_OK


def cmd_codeswitch(args) -> int:
    for p, what in ((args.sentences, "sentence file"), (args.dict, "dictionary")):
        if not Path(p).is_file():
            raise ConfigError(f"{what} not found: {p}")
    dictionary = BilingualDictionary.load(args.dict)
    with open(args.sentences, encoding="utf-8") as fh:
        sentences = [tokenize(line) for line in fh if line.strip()]
    result = build_codeswitch(sentences, dictionary, args.rate, _resolve_seed(args.seed, 0))
    report_path = args.report or f"{args.out}.report.json"
    write_codeswitch(result, args.out, report_path)
    rep = result.report()
    print(f"emitted {rep['sentences_emitted']} sentences, excluded {rep['sentences_excluded']}, "
          f"{rep['replacements_total']} replacements ({rep['replacements_forced']} forced); "
          f"dictionary lines skipped: {dictionary.skipped_lines}")
    return EXIT_OK


def cmd_project(args) -> int:
    if not Path(args.ckpt).is_file():
        raise ConfigError(f"checkpoint not found: {args.ckpt}")
    params, _ = load_checkpoint(args.ckpt)
    corpus = _load_corpus_checked(args.corpus, "corpus")
    if args.max_rows and corpus.n > args.max_rows:
        corpus = corpus.subset(range(args.max_rows))
    result = project_representations(params, corpus)
    export_projection(result, args.out)
    ev = ", ".join(f"{v:.4f}" for v in result.explained_variance)
    print(f"{args.out}: {len(result.group_labels)} points, explained variance [{ev}]")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    worst = gradcheck.run_suite(args.instances, _resolve_seed(args.seed, 0))
    ok = True
    for name, err in worst.items():
        passed = err <= gradcheck.GRADCHECK_TOL
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name:<14} max rel err {err:.3e}")
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="oracle-dis", description="Disentangle cross-lingual sentence embeddings.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("train", help="train extraction networks from a config document")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--train", dest="train_corpora", nargs="+")
    t.add_argument("--val", dest="val_corpus")
    t.add_argument("--test", dest="test_corpus")
    t.add_argument("--sts", dest="sts_corpus")
    t.add_argument("--checkpoint-out", dest="checkpoint_out")
    t.add_argument("--report-out", dest="report_out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="retrieval/STS/leakage evaluation of a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--sts")
    e.add_argument("--registry")
    e.add_argument("--report-out")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gen-synth", help="write a planted synthetic corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=2000)
    g.add_argument("--d", type=int, default=16)
    g.add_argument("--k", type=int, default=8)
    g.add_argument("--offset", type=float, default=4.0)
    g.add_argument("--sigma", type=float, default=0.05)
    g.add_argument("--seed", type=int)
    g.add_argument("--mixing", choices=("random", "identity"), default="random")
    g.add_argument("--src", default="en")
    g.add_argument("--tgt", default="de")
    g.add_argument("--sts", action="store_true", help="graded pairs with gold scores")
    g.add_argument("--split", help="train,val,test fractions, e.g. 0.8,0.1,0.1")
    g.add_argument("--registry")
    g.add_argument("--registry-out")
    g.set_defaults(func=cmd_gen_synth)

    c = sub.add_parser("codeswitch", help="build a code-switched sentence set")
    c.add_argument("--sentences", required=True)
    c.add_argument("--dict", required=True)
    c.add_argument("--rate", type=float, required=True)
    c.add_argument("--seed", type=int)
    c.add_argument("--out", required=True)
    c.add_argument("--report")
    c.set_defaults(func=cmd_codeswitch)

    pr = sub.add_parser("project", help="export a 2-D PCA projection as CSV")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--corpus", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--max-rows", type=int, default=500)
    pr.set_defaults(func=cmd_project)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every loss gradient")
    gc.add_argument("--instances", type=int, default=20)
    gc.add_argument("--seed", type=int)
    gc.set_defaults(func=cmd_gradcheck)
    return p


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NonFiniteError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except LossTermError as exc:
        if isinstance(exc.cause, NonFiniteError):
            print(f"numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, CorpusFormatError, CheckpointError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
