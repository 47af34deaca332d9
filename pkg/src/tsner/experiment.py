"""End-to-end experiment pipeline shared by ``run``, ``ablate`` and the stage commands.

Every random choice is derived from the experiment seed with
:func:`tsner.corpus.derive_seed`, so a stage run on its own reproduces the
corresponding step of a full run.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from tsner.checkpoint import config_digest, save_checkpoint, save_langid_checkpoint
from tsner.config import ExperimentConfig
from tsner.corpus import (
    Dataset,
    LanguageSpec,
    Vocab,
    build_vocab,
    derive_seed,
    ensure_dir,
    generate_corpus,
    random_language_spec,
    related_language_spec,
)
from tsner.distill import TrainConfig, teacher_distributions, train_student, train_teacher
from tsner.ensemble import (
    LangIdConfig,
    LangIdParams,
    WeightResult,
    average_embeddings,
    is_simplex,
    langid_accuracy,
    similarity_summary,
    similarity_table,
    train_langid,
    uniform_weights,
    weights_from_similarities,
)
from tsner.evaluation import CorrectionHistogram, correction_histogram_from_dists, default_edges, f1_report
from tsner.tagger import TaggerConfig, TaggerParams

logger = logging.getLogger(__name__)

REPORT_VERSION = 1


@dataclass
class World:
    """Languages and corpora for one seed."""

    seed: int
    target: LanguageSpec
    sources: list[LanguageSpec]
    source_train: list[Dataset]
    target_train: Dataset
    target_test: Dataset
    vocab: Vocab


def build_world(cfg: ExperimentConfig, seed: int) -> World:
    c = cfg.corpus
    target = random_language_spec(
        c.target,
        derive_seed(seed, "spec", c.target),
        n_function_words=c.n_function_words,
        names_per_type=c.names_per_type,
        n_templates=c.n_templates,
        n_entity_templates=c.n_entity_templates,
    )
    sources = [related_language_spec(target, s.language, s.rho, derive_seed(seed, "spec", s.language)) for s in cfg.sources]
    source_train = [generate_corpus(s, c.n_train, derive_seed(seed, "corpus", s.language, "train")) for s in sources]
    target_train = generate_corpus(target, c.n_target_train, derive_seed(seed, "corpus", c.target, "train")).unlabeled()
    target_test = generate_corpus(target, c.n_test, derive_seed(seed, "corpus", c.target, "test"))
    vocab = build_vocab(source_train + [target_train], min_count=c.min_count)
    return World(seed, target, sources, source_train, target_train, target_test, vocab)


def teacher_tagger_config(cfg: ExperimentConfig, vocab_size: int) -> TaggerConfig:
    t = cfg.tagger
    return TaggerConfig(vocab_size, t.emb_dim, t.radius, t.hidden)


def student_tagger_config(cfg: ExperimentConfig, vocab_size: int) -> TaggerConfig:
    t = cfg.tagger
    return TaggerConfig(vocab_size, t.emb_dim, t.student_radius, t.hidden)


def teacher_train_config(cfg: ExperimentConfig, seed: int, language: str) -> TrainConfig:
    return replace(cfg.train.teacher, seed=derive_seed(seed, "teacher", language), label_mode="soft")


def student_train_config(cfg: ExperimentConfig, seed: int, hard: bool) -> TrainConfig:
    # every arm shares the seed so that arms differ only in their targets
    return replace(cfg.train.student, seed=derive_seed(seed, "student"), label_mode="hard" if hard else "soft")


def langid_train_config(cfg: ExperimentConfig, seed: int) -> LangIdConfig:
    return replace(cfg.ensemble.langid, seed=derive_seed(seed, "langid"))


def train_teachers(cfg: ExperimentConfig, world: World, histories: dict | None = None) -> list[TaggerParams]:
    tc = teacher_tagger_config(cfg, len(world.vocab))
    teachers = []
    for data in world.source_train:
        hist: list = []
        teachers.append(train_teacher(data, world.vocab, tc, teacher_train_config(cfg, world.seed, data.language), hist))
        if histories is not None:
            histories[data.language] = hist
    return teachers


def fit_langid(cfg: ExperimentConfig, world: World, teachers: Sequence[TaggerParams]) -> LangIdParams:
    Eg = average_embeddings([t.E for t in teachers])
    ids = [world.vocab.encode_dataset(d.unlabeled()) for d in world.source_train]
    return train_langid(ids, Eg, langid_train_config(cfg, world.seed))


@dataclass
class WeightReport:
    results: dict[str, WeightResult]
    extras: dict = field(default_factory=dict)

    def alpha(self, weighting: str) -> np.ndarray:
        return self.results[weighting].alpha

    def to_dict(self) -> dict:
        out = {}
        for w, r in self.results.items():
            d = r.to_dict()
            d.update(self.extras.get(w, {}))
            out[w] = d
        return out


def compute_weights(
    weightings: Sequence[str], n_teachers: int, langid: LangIdParams | None, target_ids: Sequence, temperature
) -> WeightReport:
    results, extras = {}, {}
    for w in weightings:
        if w == "avg":
            results[w] = WeightResult(uniform_weights(n_teachers), None, False)
        else:
            if langid is None:
                raise ValueError("similarity weighting needs a trained language identifier")
            S = similarity_table(langid, target_ids)
            results[w] = weights_from_similarities(S, temperature)
            extras[w] = {"similarity": similarity_summary(S)}
        if not is_simplex(results[w].alpha):
            raise RuntimeError(f"{w} weights left the simplex: {results[w].alpha}")
    return WeightReport(results, extras)


def ensemble_labels(teachers: Sequence[TaggerParams], alpha, sentences: Sequence) -> tuple[list, list]:
    """Direct transfer: (weighted) teacher distributions and their argmax labels."""
    dists = teacher_distributions(teachers, alpha, sentences)
    return dists, [np.argmax(q, axis=1) for q in dists]


def student_labels(student: TaggerParams, sentences: Sequence) -> list[np.ndarray]:
    from tsner.tagger import predict_dist_batch

    return [np.argmax(p, axis=1) for p in predict_dist_batch(student, sentences)]


def arm_names(cfg: ExperimentConfig) -> list[str]:
    names = []
    for arm in cfg.arms:
        if arm == "ours" and cfg.mode == "multi":
            names.extend(f"ours-{w}" for w in cfg.weightings)
        else:
            names.append(arm)
    return names


def _round_trip_floats(obj):
    # json floats are repr-exact, this only normalises numpy scalars
    return json.loads(json.dumps(obj, default=float))


def run_seed(cfg: ExperimentConfig, seed: int, checkpoint_dir: Path | None = None) -> tuple[dict, CorrectionHistogram | None]:
    digest = config_digest(cfg.to_dict())
    world = build_world(cfg, seed)
    V = len(world.vocab)
    logger.info("seed %d: vocabulary of %d types", seed, V)
    histories: dict = {"teachers": {}, "students": {}}
    teachers = train_teachers(cfg, world, histories["teachers"])

    langid = None
    langid_acc = None
    if "sim" in cfg.weightings:
        langid = fit_langid(cfg, world, teachers)
        langid_acc = langid_accuracy(langid, [world.vocab.encode_dataset(d) for d in world.source_train])
    target_ids = world.vocab.encode_dataset(world.target_train)
    weights = compute_weights(cfg.weightings, len(teachers), langid, target_ids, cfg.ensemble.langid.temperature)
    primary = cfg.primary_weighting

    test_ids = world.vocab.encode_dataset(world.target_test)
    sc = student_tagger_config(cfg, V)
    arms: dict[str, dict] = {}
    students: dict[str, TaggerParams] = {}
    for name in arm_names(cfg):
        if name == "mt":
            _, pred = ensemble_labels(teachers, weights.alpha(primary), test_ids)
            entry = {"label_mode": None, "weighting": primary}
        else:
            hard = name == "hl"
            w = name.split("-", 1)[1] if name.startswith("ours-") else primary
            hist: list = []
            student = train_student(
                teachers, world.target_train, world.vocab, sc, student_train_config(cfg, seed, hard), weights.alpha(w), hist
            )
            students[name] = student
            histories["students"][name] = hist
            pred = student_labels(student, test_ids)
            entry = {"label_mode": "hard" if hard else "soft", "weighting": w}
        entry.update(f1_report(world.target_test, pred).to_dict())
        arms[name] = entry

    histogram = None
    ours_primary = "ours" if cfg.mode == "single" else f"ours-{primary}"
    if ours_primary in students:
        tq, _ = ensemble_labels(teachers, weights.alpha(primary), test_ids)
        histogram = correction_histogram_from_dists(
            tq,
            student_labels(students[ours_primary], test_ids),
            world.target_test,
            default_edges(cfg.histogram.bin_width, cfg.histogram.low),
        )

    if checkpoint_dir is not None:
        d = ensure_dir(checkpoint_dir)
        for spec, t in zip(world.sources, teachers):
            save_checkpoint(t, d / f"seed{seed}-teacher-{spec.language}.json", seed, digest)
        if langid is not None:
            save_langid_checkpoint(langid, d / f"seed{seed}-langid.json", seed, digest)
        for name, s in students.items():
            save_checkpoint(s, d / f"seed{seed}-student-{name}.json", seed, digest)

    result = {
        "seed": seed,
        "vocab_size": V,
        "sources": [{"language": s.language, "rho": s.rho} for s in world.sources],
        "weights": weights.to_dict(),
        "langid_train_accuracy": langid_acc,
        "arms": arms,
        "histogram": None if histogram is None else histogram.to_dict(),
        "losses": histories,
    }
    return _round_trip_floats(result), histogram


def _summary(cfg: ExperimentConfig, per_seed: list[dict]) -> dict:
    names = arm_names(cfg)
    mean_f1 = {a: float(np.mean([r["arms"][a]["f1"] for r in per_seed])) for a in names}
    comparisons: dict = {}

    def count(pred) -> int:
        return int(sum(bool(pred(r)) for r in per_seed))

    ours = "ours" if cfg.mode == "single" else f"ours-{cfg.primary_weighting}"
    if ours in names and "mt" in names:
        comparisons["ours_f1_gt_mt"] = count(lambda r: r["arms"][ours]["f1"] > r["arms"]["mt"]["f1"])
    if ours in names and "hl" in names:
        comparisons["ours_f1_ge_hl"] = count(lambda r: r["arms"][ours]["f1"] >= r["arms"]["hl"]["f1"])
    if "ours-sim" in names and "ours-avg" in names:
        comparisons["sim_f1_ge_avg"] = count(lambda r: r["arms"]["ours-sim"]["f1"] >= r["arms"]["ours-avg"]["f1"])
    if "sim" in cfg.weightings:
        rhos = [s.rho for s in cfg.sources]
        order = sorted(range(len(rhos)), key=lambda k: -rhos[k])

        def follows_rho(r) -> bool:
            a = r["weights"]["sim"]["alpha"]
            return all(a[order[i]] > a[order[i + 1]] for i in range(len(order) - 1))

        if len(set(rhos)) == len(rhos):
            comparisons["sim_alpha_follows_rho"] = count(follows_rho)

    def low_beats_high(r) -> bool:
        h = r["histogram"]
        if h is None:
            return False
        fr = [f for f in h["fractions"] if f is not None]
        return len(fr) > 0 and fr[0] > fr[-1]

    if any(r["histogram"] is not None for r in per_seed):
        comparisons["histogram_low_gt_high"] = count(low_beats_high)
    return {"n_seeds": len(per_seed), "mean_f1": mean_f1, "comparisons": comparisons}


def run_experiment(cfg: ExperimentConfig, out_dir=None, seeds: Sequence[int] | None = None) -> dict:
    """Run every seed; write ``metrics.json``, ``weights.json``, ``histogram.csv`` and checkpoints if ``out_dir``."""
    seeds = list(cfg.corpus.seeds if seeds is None else seeds)
    out = ensure_dir(out_dir) if out_dir is not None else None
    per_seed, hists = [], []
    for seed in seeds:
        res, hist = run_seed(cfg, seed, None if out is None else out / "checkpoints")
        per_seed.append(res)
        hists.append((seed, hist))
    report = {
        "report_version": REPORT_VERSION,
        "mode": cfg.mode,
        "config": cfg.to_dict(),
        "config_digest": config_digest(cfg.to_dict()),
        "seeds": seeds,
        "arms": arm_names(cfg),
        "per_seed": per_seed,
        "summary": _summary(cfg, per_seed),
    }
    if out is not None:
        write_json(out / "metrics.json", report)
        write_json(out / "weights.json", weights_document(report))
        write_histograms(out / "histogram.csv", hists)
    return report


def weights_document(report: dict) -> dict:
    return {
        "mode": report["mode"],
        "per_seed": [
            {"seed": r["seed"], "sources": r["sources"], "weights": r["weights"],
             "langid_train_accuracy": r["langid_train_accuracy"]}
            for r in report["per_seed"]
        ],
    }


def write_histograms(path, hists: Sequence[tuple[int, CorrectionHistogram | None]]) -> None:
    first = True
    for seed, h in hists:
        if h is None:
            continue
        h.write_csv(path, seed=seed, append=not first)
        first = False
    if first:
        Path(path).write_text("seed,bin_lo,bin_hi,count,corrected,fraction\n", encoding="utf-8")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def metrics_schema() -> dict:
    """The JSON schema every metrics report validates against."""
    from importlib import resources

    return json.loads(resources.files("tsner").joinpath("schemas/metrics.schema.json").read_text(encoding="utf-8"))
