"""Command-line entry point: ``tsner <subcommand> [options]``.

Stage commands share one working directory (``--out``)::

    specs/<lang>.json          language specs           (gen-corpus)
    data/<lang>.train.conll    source corpora, labeled  (gen-corpus)
    data/<tgt>.train.conll     target text, unlabeled   (gen-corpus)
    data/<tgt>.test.conll      target test set          (gen-corpus)
    vocab.json                 shared vocabulary        (gen-corpus)
    checkpoints/seed<N>-*.json teachers, langid, students
    weights.json               teacher weights          (weigh)
    metrics.json               F1 per arm               (evaluate, run, ablate)
    histogram.csv              correction histogram     (evaluate, run, ablate)

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or data
error, 3 gradient check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from tsner import gradcheck
from tsner.checkpoint import (
    config_digest,
    load_checkpoint,
    load_langid_checkpoint,
    save_checkpoint,
    save_langid_checkpoint,
)
from tsner.config import ARMS, MODES, WEIGHTINGS, ExperimentConfig, default_config, load_config
from tsner.corpus import Dataset, Vocab, ensure_dir, read_conll, write_conll
from tsner.distill import train_student, train_teacher
from tsner.ensemble import average_embeddings, is_simplex, langid_accuracy, train_langid
from tsner.errors import CheckpointError, ConfigError, ConllParseError, InvalidInputError
from tsner.evaluation import correction_histogram_from_dists, default_edges, f1_report
from tsner.experiment import (
    arm_names,
    build_world,
    compute_weights,
    ensemble_labels,
    langid_train_config,
    run_experiment,
    student_labels,
    student_tagger_config,
    student_train_config,
    teacher_tagger_config,
    teacher_train_config,
    write_json,
)

logger = logging.getLogger("tsner")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_GRADCHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# configuration and working directory


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else default_config()
    if getattr(args, "mode", None):
        cfg = replace(cfg, mode=args.mode)
    if getattr(args, "weighting", None):
        cfg = replace(cfg, ensemble=replace(cfg.ensemble, weighting=[args.weighting]))
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, corpus=replace(cfg.corpus, seeds=[args.seed]))
    if getattr(args, "arm", None) and args.command in ("run", "ablate"):
        cfg = replace(cfg, arms=[args.arm])
    return cfg.validate()


def _seed(cfg: ExperimentConfig) -> int:
    return cfg.corpus.seeds[0]


class Workdir:
    def __init__(self, root, cfg: ExperimentConfig):
        self.root = Path(root)
        self.cfg = cfg
        self.seed = _seed(cfg)

    @property
    def data(self) -> Path:
        return self.root / "data"

    @property
    def checkpoints(self) -> Path:
        return self.root / "checkpoints"

    def corpus(self, language: str, split: str) -> Dataset:
        path = self.data / f"{language}.{split}.conll"
        if not path.exists():
            raise FileNotFoundError(f"{path} not found; run gen-corpus first")
        return read_conll(path, language)

    def vocab(self) -> Vocab:
        path = self.root / "vocab.json"
        if not path.exists():
            raise FileNotFoundError(f"{path} not found; run gen-corpus first")
        return Vocab.load(path)

    def ckpt(self, what: str) -> Path:
        return self.checkpoints / f"seed{self.seed}-{what}.json"

    def sources(self) -> list[str]:
        return [s.language for s in self.cfg.sources]

    def teachers(self, vocab_size: int):
        tc = teacher_tagger_config(self.cfg, vocab_size)
        out = []
        for lang in self.sources():
            path = self.ckpt(f"teacher-{lang}")
            if not path.exists():
                raise FileNotFoundError(f"{path} not found; run train-teacher first")
            out.append(load_checkpoint(path, tc))
        return out

    def weights(self, weighting: str):
        if self.cfg.mode == "single":
            return [1.0]
        path = self.root / "weights.json"
        if not path.exists():
            raise FileNotFoundError(f"{path} not found; run weigh first")
        doc = json.loads(path.read_text(encoding="utf-8"))
        if weighting not in doc:
            raise FileNotFoundError(f"{path} has no {weighting!r} weights; run weigh --weighting {weighting}")
        return doc[weighting]["alpha"]


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_corpus(args, cfg):
    world = build_world(cfg, _seed(cfg))
    root = ensure_dir(args.out)
    specs, data = ensure_dir(root / "specs"), ensure_dir(root / "data")
    for spec in [world.target] + world.sources:
        spec.save(specs / f"{spec.language}.json")
    for ds in world.source_train:
        write_conll(ds, data / f"{ds.language}.train.conll")
    write_conll(world.target_train, data / f"{world.target.language}.train.conll")
    write_conll(world.target_test, data / f"{world.target.language}.test.conll")
    world.vocab.save(root / "vocab.json")
    print(f"wrote {len(world.sources)} source corpora, target train/test and a vocabulary of {len(world.vocab)} to {root}")


def cmd_train_teacher(args, cfg):
    wd = Workdir(args.out, cfg)
    vocab = wd.vocab()
    langs = [args.language] if args.language else wd.sources()
    digest = config_digest(cfg.to_dict())
    ensure_dir(wd.checkpoints)
    for lang in langs:
        if lang not in wd.sources():
            raise ConfigError("corpus.sources", f"{lang!r} is not a configured source language")
        data = wd.corpus(lang, "train")
        hist: list = []
        params = train_teacher(data, vocab, teacher_tagger_config(cfg, len(vocab)), teacher_train_config(cfg, wd.seed, lang), hist)
        save_checkpoint(params, wd.ckpt(f"teacher-{lang}"), wd.seed, digest)
        print(f"teacher[{lang}] final loss {hist[-1]:.6f} -> {wd.ckpt(f'teacher-{lang}')}")


def cmd_train_langid(args, cfg):
    wd = Workdir(args.out, cfg)
    vocab = wd.vocab()
    teachers = wd.teachers(len(vocab))
    ids = [vocab.encode_dataset(wd.corpus(lang, "train").unlabeled()) for lang in wd.sources()]
    params = train_langid(ids, average_embeddings([t.E for t in teachers]), langid_train_config(cfg, wd.seed))
    save_langid_checkpoint(params, wd.ckpt("langid"), wd.seed, config_digest(cfg.to_dict()))
    print(f"langid train accuracy {langid_accuracy(params, ids):.4f} -> {wd.ckpt('langid')}")


def cmd_weigh(args, cfg):
    wd = Workdir(args.out, cfg)
    vocab = wd.vocab()
    langid = None
    if "sim" in cfg.weightings:
        path = wd.ckpt("langid")
        if not path.exists():
            raise FileNotFoundError(f"{path} not found; run train-langid first")
        langid = load_langid_checkpoint(path)
    target = vocab.encode_dataset(wd.corpus(cfg.corpus.target, "train"))
    report = compute_weights(cfg.weightings, len(wd.sources()), langid, target, cfg.ensemble.langid.temperature)
    doc = report.to_dict()
    path = wd.root / "weights.json"
    if path.exists():
        old = json.loads(path.read_text(encoding="utf-8"))
        old.update(doc)
        doc = old
    doc["sources"] = wd.sources()
    write_json(path, doc)
    for w, r in report.results.items():
        print(f"{w}: alpha={[round(float(a), 6) for a in r.alpha]} tau={r.tau}")


def _student_name(cfg: ExperimentConfig, arm: str, weighting: str) -> str:
    if arm == "ours" and cfg.mode == "multi":
        return f"ours-{weighting}"
    return arm


def cmd_train_student(args, cfg):
    arm = args.arm or "ours"
    if arm == "mt":
        raise UsageError("the mt arm has no student; use evaluate --arm mt")
    wd = Workdir(args.out, cfg)
    vocab = wd.vocab()
    teachers = wd.teachers(len(vocab))
    weighting = args.weighting or cfg.primary_weighting
    if weighting not in cfg.weightings:
        weighting = cfg.weightings[0]
    alpha = wd.weights(weighting)
    target = wd.corpus(cfg.corpus.target, "train")
    hist: list = []
    student = train_student(
        teachers, target, vocab, student_tagger_config(cfg, len(vocab)),
        student_train_config(cfg, wd.seed, arm == "hl"), alpha, hist,
    )
    name = _student_name(cfg, arm, weighting)
    ensure_dir(wd.checkpoints)
    save_checkpoint(student, wd.ckpt(f"student-{name}"), wd.seed, config_digest(cfg.to_dict()))
    print(f"student[{name}] final loss {hist[-1]:.6f} -> {wd.ckpt(f'student-{name}')}")


def cmd_evaluate(args, cfg):
    wd = Workdir(args.out, cfg)
    vocab = wd.vocab()
    test = wd.corpus(cfg.corpus.target, "test")
    ids = vocab.encode_dataset(test)
    teachers = wd.teachers(len(vocab))
    sc = student_tagger_config(cfg, len(vocab))
    names = arm_names(cfg) if not args.arm else [n for n in arm_names(cfg) if n.split("-")[0] == args.arm]
    primary = cfg.primary_weighting
    arms, students = {}, {}
    for name in names:
        if name == "mt":
            _, pred = ensemble_labels(teachers, wd.weights(primary), ids)
        else:
            path = wd.ckpt(f"student-{name}")
            if not path.exists():
                logger.warning("skipping arm %s: %s not found", name, path)
                continue
            students[name] = load_checkpoint(path, sc)
            pred = student_labels(students[name], ids)
        arms[name] = f1_report(test, pred).to_dict()
    report = {"seed": wd.seed, "mode": cfg.mode, "arms": arms, "histogram": None}
    ours = "ours" if cfg.mode == "single" else f"ours-{primary}"
    if ours in students:
        tq, _ = ensemble_labels(teachers, wd.weights(primary), ids)
        hist = correction_histogram_from_dists(
            tq, student_labels(students[ours], ids), test, default_edges(cfg.histogram.bin_width, cfg.histogram.low)
        )
        hist.write_csv(wd.root / "histogram.csv", seed=wd.seed)
        report["histogram"] = hist.to_dict()
    write_json(wd.root / "metrics.json", report)
    for name, r in arms.items():
        print(f"{name:10s} P={r['precision']:.4f} R={r['recall']:.4f} F1={r['f1']:.4f}")


def _print_table(report: dict) -> None:
    arms = report["arms"]
    print("seed  " + "  ".join(f"{a:>9s}" for a in arms))
    for r in report["per_seed"]:
        print(f"{r['seed']:<5d} " + "  ".join(f"{r['arms'][a]['f1']:9.4f}" for a in arms))
    print("mean  " + "  ".join(f"{report['summary']['mean_f1'][a]:9.4f}" for a in arms))
    for k, v in report["summary"]["comparisons"].items():
        print(f"{k}: {v}/{report['summary']['n_seeds']}")


def cmd_run(args, cfg):
    report = run_experiment(cfg, args.out)
    for r in report["per_seed"]:
        for w, res in r["weights"].items():
            if not is_simplex(res["alpha"]):
                raise RuntimeError(f"seed {r['seed']}: {w} weights are not on the simplex")
    _print_table(report)
    print(f"wrote {Path(args.out) / 'metrics.json'}")


def cmd_ablate(args, cfg):
    if not args.arm:
        cfg = replace(cfg, arms=list(ARMS)).validate()
    cmd_run(args, cfg)


def cmd_gradcheck(args, cfg=None) -> int:
    results = gradcheck.run_all(args.instances, args.seed or 0, args.eps, args.tol)
    for r in results:
        print(f"{r.suite:10s} instances={r.instances} max_rel_error={r.max_error:.3e} {'PASS' if r.passed else 'FAIL'}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_GRADCHECK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tsner", description="Teacher-student cross-lingual sequence labeling.")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out=True):
        p.add_argument("--config", help="experiment config (JSON); defaults apply to missing fields")
        p.add_argument("--seed", type=int, help="run this seed instead of the config's seed list")
        p.add_argument("--mode", choices=MODES)
        p.add_argument("--weighting", choices=WEIGHTINGS)
        if out:
            p.add_argument("--out", required=True, help="working/output directory")
        return p

    common(sub.add_parser("gen-corpus", help="generate languages, corpora and the vocabulary"))
    p = common(sub.add_parser("train-teacher", help="train source-language teachers"))
    p.add_argument("--language", help="train only this source language")
    common(sub.add_parser("train-langid", help="fit the language identifier on source text"))
    common(sub.add_parser("weigh", help="compute teacher weights for the target corpus"))
    p = common(sub.add_parser("train-student", help="distill a student on unlabeled target text"))
    p.add_argument("--arm", choices=("ours", "hl"))
    p = common(sub.add_parser("evaluate", help="score available arms on the target test set"))
    p.add_argument("--arm", choices=ARMS)
    p = common(sub.add_parser("ablate", help="full pipeline over all arms with a comparison table"))
    p.add_argument("--arm", choices=ARMS)
    p = common(sub.add_parser("run", help="full pipeline for every configured seed"))
    p.add_argument("--arm", choices=ARMS)
    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=gradcheck.DEFAULT_EPS)
    p.add_argument("--tol", type=float, default=gradcheck.DEFAULT_TOL)
    return parser


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "train-teacher": cmd_train_teacher,
    "train-langid": cmd_train_langid,
    "weigh": cmd_weigh,
    "train-student": cmd_train_student,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "run": cmd_run,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gradcheck":
            if args.instances < 1 or args.eps <= 0:
                raise UsageError("gradcheck: --instances must be >= 1 and --eps > 0")
            return cmd_gradcheck(args)
        cfg = resolve_config(args)
        if args.command == "train-langid" and cfg.mode != "multi":
            raise UsageError("train-langid needs multi-source mode (--mode multi)")
        COMMANDS[args.command](args, cfg)
        return EXIT_OK
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InvalidInputError, ConllParseError, CheckpointError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
