"""Command-line interface: prepare, rules, train, eval, predict, synthetic.

A run directory chains the stages by path only::

    emoreact prepare --posts posts.tsv --affective aff.tsv --isear isear.tsv \\
        --fairy fairy.tsv --test-set isear --seed 1 --out run1/
    emoreact train run1/ --variant constr --seed 1
    emoreact eval run1/

Exit codes: 0 success, 1 acceptance failure (synthetic), 2 input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import __version__, folc, net, synthetic, trainer
from .labels import EMOTION, EMOTIONS, REACTION, REACTIONS
from .metrics import MetricsReport, aggregate_splits, render_table
from .textprep import (EMOTION_SETS, MAX_LEN, UNK, Corpus, FilterConfig, Record, Vocabulary,
                       artificial_augment, build_vocab, census, encode_corpus, encode_example, filter_posts,
                       ingest_emotion_dataset, make_splits, preprocess, read_lines, read_posts)

log = logging.getLogger("emoreact")

DATA_DIR_ENV = "EMOREACT_DATA_DIR"
MANIFEST = "manifest.json"
SPLITS = ("train", "val", "test")
EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2

# model settings for the +Emb setup: a hidden layer of 25 units in the reaction head
EMB_HIDDEN_R = (25,)


class InputError(Exception):
    """Bad user input; reported on stderr with exit code 2."""


# ---------------------------------------------------------------------------
# Run manifest


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Everything needed to rerun a stage: config echo, input digests, seed, artifacts."""

    config: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    seed: int | None = None
    artifacts: dict = field(default_factory=dict)
    stages: dict = field(default_factory=dict)
    version: str = __version__

    @classmethod
    def load(cls, run_dir: Path) -> "RunManifest":
        path = Path(run_dir) / MANIFEST
        if not path.exists():
            raise InputError(f"{run_dir}: no {MANIFEST}; run 'prepare' first")
        data = json.loads(path.read_text())
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})

    def save(self, run_dir: Path) -> None:
        path = Path(run_dir) / MANIFEST
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        tmp.replace(path)

    def record_stage(self, name: str, config: dict, seed: int | None, artifacts: dict, inputs: dict | None = None):
        self.stages[name] = {"config": config, "seed": seed, "artifacts": artifacts, "inputs": inputs or {}}
        self.artifacts.update(artifacts)


# ---------------------------------------------------------------------------
# Split files


def _record_json(r: Record) -> str:
    return json.dumps({"text": r.text, "tokens": list(r.tokens), "task": r.task, "label": r.label,
                       "source": r.source}, ensure_ascii=False)


def write_split(path: Path, corpus: Corpus) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in corpus.all():
            fh.write(_record_json(r) + "\n")


def read_split(path: Path) -> Corpus:
    corpus = Corpus()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                d = json.loads(line)
                r = Record(d["text"], tuple(d["tokens"]), d["task"], d["label"], d["source"])
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise InputError(f"{path}:{lineno}: malformed record ({e})") from None
            {REACTION: corpus.T_r, EMOTION: corpus.T_e, None: corpus.T_u}[r.task].append(r)
    return corpus


def load_run(run_dir: Path, max_len: int = MAX_LEN):
    """Vocabulary, manifest and encoded splits of a prepared run directory."""
    run_dir = Path(run_dir)
    manifest = RunManifest.load(run_dir)
    vocab = Vocabulary.load(run_dir / "vocab.txt")
    if manifest.artifacts.get("vocab_hash") not in (None, vocab.digest()):
        raise InputError(f"{run_dir}: vocab.txt does not match the manifest")
    splits = {name: encode_corpus(read_split(run_dir / f"{name}.jsonl"), vocab, max_len) for name in SPLITS}
    return manifest, vocab, splits


# ---------------------------------------------------------------------------
# Commands


def _resolve(path: str | None, data_dir: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.is_absolute() and not p.exists() and data_dir:
        p = Path(data_dir) / p
    if not p.is_file():
        raise InputError(f"input file not found: {path}")
    return p


def cmd_prepare(args) -> int:
    paths = {name: _resolve(getattr(args, name), args.data_dir)
             for name in ("posts", "affective", "isear", "fairy", "unlabeled")}
    fcfg = FilterConfig(args.tau, args.gamma, args.dominance)
    posts = read_posts(paths["posts"])
    labeled = filter_posts(posts, fcfg)
    emotion_sets = {
        "affective": ingest_emotion_dataset(paths["affective"], "affective"),
        "isear": ingest_emotion_dataset(paths["isear"], "isear"),
        "fairy": ingest_emotion_dataset(paths["fairy"], "fairy"),
    }
    unlabeled = read_lines(paths["unlabeled"]) if paths["unlabeled"] else []
    train, val, test = make_splits(labeled, unlabeled, emotion_sets["affective"], emotion_sets["isear"],
                                   emotion_sets["fairy"], args.test_set, args.seed)
    vocab = build_vocab((r.tokens for r in train.all()), args.vocab_size)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    # stage everything in a sibling temp dir so a failure leaves no partial outputs
    staging = Path(tempfile.mkdtemp(prefix=".prepare-", dir=out.parent))
    try:
        for name, corpus in zip(SPLITS, (train, val, test)):
            write_split(staging / f"{name}.jsonl", corpus)
        vocab.save(staging / "vocab.txt")
        config = {"tau": args.tau, "gamma": args.gamma, "dominance": args.dominance, "test_set": args.test_set,
                  "vocab_size": args.vocab_size}
        artifacts = {"vocab": "vocab.txt", "vocab_hash": vocab.digest(),
                     **{name: f"{name}.jsonl" for name in SPLITS}}
        manifest = RunManifest(config=config, seed=args.seed,
                               inputs={name: {"path": str(p), "sha256": file_digest(p)}
                                       for name, p in paths.items() if p})
        summary = {"posts_read": len(posts), "posts_kept": len(labeled), "reaction_census": census(labeled),
                   **{f"{name}_sizes": c.sizes() for name, c in zip(SPLITS, (train, val, test))}}
        manifest.record_stage("prepare", {**config, "summary": summary}, args.seed, artifacts)
        manifest.save(staging)
        out.mkdir(exist_ok=True)
        for item in staging.iterdir():
            item.replace(out / item.name)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    print(f"kept {len(labeled)} of {len(posts)} posts; census {census(labeled)}")
    for name, c in zip(SPLITS, (train, val, test)):
        print(f"{name}: {c.sizes()}")
    print(f"vocabulary: {len(vocab)} tokens -> {out / 'vocab.txt'}")
    return EXIT_OK


def cmd_rules(args) -> int:
    rules = folc.load_rules(args.rules) if args.rules else folc.default_ruleset(args.w_strong, args.w_weak)
    compiled = folc.compile_rules(rules)
    for c in compiled:
        print(f"{c.rule.id:>2}  {c.rule.formula:<26} w={c.weight:<4g} {folc.print_poly(c)}")
    if args.check_grid:
        reports = [folc.check_grid(c) for c in compiled]
        ok = all(r.ok() for r in reports)
        worst = max(r.max_error for r in reports)
        mism = sum(r.boolean_mismatches for r in reports)
        print(f"grid check: {'PASS' if ok else 'FAIL'} (max error {worst:.2e}, boolean mismatches {mism})")
        return EXIT_OK if ok else EXIT_FAIL
    return EXIT_OK


_TRAIN_FLAGS = {"lr": "lr", "epochs": "max_epochs", "patience": "patience", "lambda_c": "lambda_c",
                "w_weak": "w_weak", "batch_size": None}
_MODEL_FLAGS = {"d_emb": "d_emb", "d_h": "d_h", "dropout": "dropout"}


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read config {path}: {e}") from None
    if not isinstance(data, dict):
        raise InputError(f"{path}: config must be a JSON object")
    return data


def build_configs(args, vocab_size: int) -> tuple[net.ModelConfig, trainer.TrainConfig]:
    """Config file first, then explicit flags on top."""
    raw = _load_config(args.config)
    model_raw = dict(raw.pop("model", {}))
    for flag, key in _MODEL_FLAGS.items():
        if getattr(args, flag, None) is not None:
            model_raw[key] = getattr(args, flag)
    if args.embeddings:
        model_raw["d_emb"] = _embedding_dim(args.embeddings)
        model_raw.setdefault("hidden_r", list(EMB_HIDDEN_R))
    model_raw["vocab_size"] = vocab_size
    for flag, key in _TRAIN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if flag == "batch_size":
            raw.update(batch_r=value, batch_e=value, batch_all=2 * value)
        else:
            raw[key] = value
    raw["variant"] = args.variant
    raw["seed"] = args.seed
    try:
        return net.ModelConfig.from_dict(model_raw), trainer.TrainConfig.from_dict(raw)
    except TypeError as e:
        raise InputError(f"unknown config key: {e}") from None


def _embedding_dim(path) -> int:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().split()
        if len(first) == 2 and all(p.isdigit() for p in first):
            return int(first[1])
        return len(first) - 1


def cmd_train(args) -> int:
    run_dir = Path(args.run_dir)
    manifest, vocab, splits = load_run(run_dir)
    model_cfg, cfg = build_configs(args, len(vocab))
    rules = folc.load_rules(args.rules) if args.rules else None
    constraints = trainer.variant_constraints(cfg, rules)
    train_corpus = splits["train"]
    if cfg.variant == "artificial":
        train_corpus = artificial_augment(train_corpus)
    params = net.init_params(model_cfg, cfg.seed)
    inputs = {}
    if args.embeddings:
        filled = net.load_embeddings(params, args.embeddings, vocab)
        inputs["embeddings"] = {"path": str(args.embeddings), "sha256": file_digest(args.embeddings)}
        print(f"loaded {filled} pre-trained vectors")
    if args.rules:
        inputs["rules"] = {"path": str(args.rules), "sha256": file_digest(args.rules)}

    log_path = run_dir / "train_log.jsonl"
    t0 = time.time()
    with open(log_path, "w", encoding="utf-8") as fh:
        def on_epoch(entry):
            fh.write(json.dumps(entry) + "\n")
            fh.flush()
            if not args.quiet:
                print(f"epoch {entry['epoch']:>3}  loss {entry['train_total']:.4f}  "
                      f"val avg F1 {entry['val_avg_f1']:.4f}{'  *' if entry['improved'] else ''}")

        best, history = trainer.train(train_corpus, splits["val"], params, cfg, constraints, on_epoch=on_epoch)
    best_epoch = max((h for h in history), key=lambda h: h["val_avg_f1"], default={"epoch": 0})["epoch"]
    extra = {"train_config": cfg.to_dict(), "best_epoch": best_epoch}
    net.save_checkpoint(run_dir / "checkpoint.npz", best, vocab.digest(), extra)
    manifest.record_stage("train", {"model": model_cfg.to_dict(), "train": cfg.to_dict()}, cfg.seed,
                          {"checkpoint": "checkpoint.npz", "train_log": "train_log.jsonl"}, inputs)
    manifest.save(run_dir)
    print(f"best epoch {best_epoch} of {len(history)}; {time.time() - t0:.1f}s; "
          f"checkpoint -> {run_dir / 'checkpoint.npz'}")
    return EXIT_OK


def _load_model(run_dir: Path, vocab: Vocabulary):
    path = run_dir / "checkpoint.npz"
    if not path.exists():
        raise InputError(f"{run_dir}: no checkpoint; run 'train' first")
    return net.load_checkpoint(path, vocab.digest())


def evaluate_run(run_dir: Path, split: str = "test") -> MetricsReport:
    _, vocab, splits = load_run(run_dir)
    params, _ = _load_model(run_dir, vocab)
    return trainer.evaluate(params, splits[split])


def _write_metrics(out_dir: Path, report: MetricsReport, title: str, stem: str = "metrics") -> str:
    payload = {"tasks": report.to_json(), "average_f1": report.average_f1(), "std": "population"}
    (out_dir / f"{stem}.json").write_text(json.dumps(payload, indent=2) + "\n")
    text = "\n\n".join(render_table({title: m}, f"{task} F1") for task, m in report.tasks.items())
    (out_dir / f"{stem}.txt").write_text(text + "\n")
    return text


def cmd_eval(args) -> int:
    if args.splits:
        runs = [Path(p) for p in args.splits]
        reports = [evaluate_run(r, args.split) for r in runs]
        agg = aggregate_splits(reports)
        out_dir = Path(args.out) if args.out else runs[0].parent
        out_dir.mkdir(parents=True, exist_ok=True)
        text = _write_metrics(out_dir, agg, args.label or f"mean of {len(runs)}", stem="metrics_aggregate")
        print(text)
        return EXIT_OK
    if not args.run_dir:
        raise InputError("eval needs a run directory or --splits")
    run_dir = Path(args.run_dir)
    report = evaluate_run(run_dir, args.split)
    label = args.label
    if label is None:
        manifest = RunManifest.load(run_dir)
        label = manifest.stages.get("train", {}).get("config", {}).get("train", {}).get("variant", "model")
    print(_write_metrics(run_dir, report, label))
    manifest = RunManifest.load(run_dir)
    manifest.record_stage("eval", {"split": args.split}, None, {"metrics": "metrics.json"})
    manifest.save(run_dir)
    return EXIT_OK


def cmd_predict(args) -> int:
    run_dir = Path(args.run_dir)
    vocab = Vocabulary.load(run_dir / "vocab.txt")
    params, _ = _load_model(run_dir, vocab)
    if args.input in (None, "-"):
        texts = [line.rstrip("\n") for line in sys.stdin if line.strip()]
    else:
        texts = read_lines(_resolve(args.input, None))
    # a line with no tokens at all is encoded as a lone UNK
    seqs = [encode_example(preprocess(t) or [UNK], vocab).ids for t in texts]
    p_r, p_e = net.predict_proba(seqs, params)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        out.write("\t".join(["text", "emotion", *(f"p_{e}" for e in EMOTIONS),
                             "reaction", *(f"p_{r}" for r in REACTIONS)]) + "\n")
        for text, pr, pe in zip(texts, p_r, p_e):
            emotion, reaction = net.argmax_pair(pr, pe)
            out.write("\t".join([text.replace("\t", " "), emotion, *(f"{v:.6f}" for v in pe),
                                 reaction, *(f"{v:.6f}" for v in pr)]) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_synthetic(args) -> int:
    settings = synthetic.ExperimentSettings(seeds=tuple(range(args.seed, args.seed + args.seeds)),
                                            max_epochs=args.epochs, patience=args.patience)
    t0 = time.time()

    def progress(seed, variant, pair, epochs):
        if not args.quiet:
            print(f"seed {seed} {variant:<11} reaction F1 {pair[0]:.3f}  emotion F1 {pair[1]:.3f}  "
                  f"({epochs} epochs)", flush=True)

    result = synthetic.run_comparison(settings, progress=progress)
    print()
    print(f"mean over {len(settings.seeds)} seeds")
    print(result.table())
    for name, ok in result.checks().items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    print(f"constr - plain emotion F1: {result.emotion_gain():+.3f}; {time.time() - t0:.0f}s")
    if args.json:
        Path(args.json).write_text(json.dumps({"scores": result.scores, "settings": asdict(settings),
                                               "checks": result.checks(), "passed": result.passed}, indent=2))
    return EXIT_OK if result.passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="emoreact", description="Joint emotion / reaction classification "
                                "with logic-rule constraints.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("prepare", help="filter, preprocess and split the corpora")
    pr.add_argument("--posts", required=True, help="posts TSV with reaction counts")
    pr.add_argument("--affective", required=True)
    pr.add_argument("--isear", required=True)
    pr.add_argument("--fairy", required=True, help="text+label, or text plus four annotator labels")
    pr.add_argument("--unlabeled", help="unlabeled posts, one per line")
    pr.add_argument("--test-set", choices=EMOTION_SETS, required=True)
    pr.add_argument("--tau", type=int, default=20)
    pr.add_argument("--gamma", type=float, default=0.4)
    pr.add_argument("--dominance", choices=("mass", "each"), default="mass")
    pr.add_argument("--vocab-size", type=int, default=10000)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--data-dir", default=os.environ.get(DATA_DIR_ENV),
                    help=f"base for relative input paths (default ${DATA_DIR_ENV})")
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_prepare)

    ru = sub.add_parser("rules", help="print compiled rule polynomials")
    ru.add_argument("--rules", help="rules file (default: built-in set)")
    ru.add_argument("--w-strong", type=float, default=folc.DEFAULT_STRONG_WEIGHT)
    ru.add_argument("--w-weak", type=float, default=folc.DEFAULT_WEAK_WEIGHT)
    ru.add_argument("--check-grid", action="store_true", help="compare against the reference evaluator")
    ru.set_defaults(func=cmd_rules)

    tr = sub.add_parser("train", help="train a model in a prepared run directory")
    tr.add_argument("run_dir")
    tr.add_argument("--variant", choices=trainer.VARIANTS, default="constr")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--config", help="JSON with training fields and an optional 'model' object")
    tr.add_argument("--rules", help="rules file (default: built-in set)")
    tr.add_argument("--embeddings", help="pre-trained vectors, word2vec text format")
    tr.add_argument("--lr", type=float)
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--patience", type=int)
    tr.add_argument("--batch-size", type=int)
    tr.add_argument("--lambda-c", type=float)
    tr.add_argument("--w-weak", type=float)
    tr.add_argument("--d-emb", type=int)
    tr.add_argument("--d-h", type=int)
    tr.add_argument("--dropout", type=float)
    tr.add_argument("-q", "--quiet", action="store_true")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="score a trained run, or aggregate several")
    ev.add_argument("run_dir", nargs="?")
    ev.add_argument("--splits", nargs="+", metavar="RUN_DIR", help="aggregate mean/std over these runs")
    ev.add_argument("--split", choices=SPLITS, default="test")
    ev.add_argument("--label", help="row label in the table")
    ev.add_argument("--out", help="output directory for aggregated metrics")
    ev.set_defaults(func=cmd_eval)

    pd = sub.add_parser("predict", help="emotion and reaction for each input line")
    pd.add_argument("run_dir")
    pd.add_argument("input", nargs="?", help="text file, one sentence per line (default stdin)")
    pd.add_argument("--out", help="TSV output (default stdout)")
    pd.set_defaults(func=cmd_predict)

    sy = sub.add_parser("synthetic", help="plain / constr / artificial on generated corpora")
    sy.add_argument("--seeds", type=int, default=5, help="number of seeds")
    sy.add_argument("--seed", type=int, default=0, help="first seed")
    sy.add_argument("--epochs", type=int, default=synthetic.ExperimentSettings.max_epochs)
    sy.add_argument("--patience", type=int, default=synthetic.ExperimentSettings.patience)
    sy.add_argument("--json", help="write raw scores here")
    sy.add_argument("-q", "--quiet", action="store_true")
    sy.set_defaults(func=cmd_synthetic)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
