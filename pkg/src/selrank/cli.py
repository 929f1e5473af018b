"""Command-line entry point: ``selrank <command> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data validation
failure, 3 numeric failure. Logs go to standard error as JSON lines; command
results are JSON on standard output or in ``--out`` files.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import tempfile
import time
from dataclasses import fields
from importlib import resources
from pathlib import Path
from typing import Sequence

from . import __version__
from .analysis import corpus_report
from .corpus import TASKS, load_dataset, load_sections, write_dataset
from .errors import DataError, NumericError, SelrankError
from .evaluation import (
    FACETS,
    Scored,
    decode_threshold,
    encode_threshold,
    evaluate,
    join_run,
    load_gold,
    map_mrr,
    read_run,
    threshold_sweep,
    write_run,
)
from .features import SubtreeConfig, attach_parses, load_embeddings, read_parses
from .models import (
    MODEL_KINDS,
    CnnConfig,
    GruConfig,
    TrainConfig,
    load_model,
    predict_run,
    save_model,
    train_model,
)
from .retrieval import INDEX_MAGIC, build_index, flag_suspicious, generate_triggering, load_index, save_index
from .tensor import CHECKPOINT_MAGIC, CHECKPOINT_VERSION

log = logging.getLogger("selrank")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        entry = {"level": record.levelname.lower(), "logger": record.name, "msg": record.getMessage()}
        if record.exc_info:
            entry["exc"] = self.formatException(record.exc_info)
        return json.dumps(entry)


def _setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter())
    root = logging.getLogger("selrank")
    root.handlers[:] = [handler]
    root.setLevel(level.upper())
    root.propagate = False


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2) + "\n")


def _write_json(obj, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _task(value: str) -> str:
    task = value.upper()
    if task not in TASKS:
        raise argparse.ArgumentTypeError(f"task must be one of {', '.join(TASKS)}")
    return task


def version_info() -> dict:
    return {
        "selrank": __version__,
        "index_format": INDEX_MAGIC.decode(),
        "checkpoint_format": CHECKPOINT_MAGIC.decode(),
        "checkpoint_version": CHECKPOINT_VERSION,
    }


# ---------------------------------------------------------------- configuration

_SECTIONS = {"cnn": CnnConfig, "gru": GruConfig, "subtree": SubtreeConfig}
_NOT_CONFIGURABLE = {("cnn", "emb_dim"), ("gru", "emb_dim")}


def _config_keys() -> dict[str, type]:
    keys = {f.name: TrainConfig for f in fields(TrainConfig)}
    for prefix, cls in _SECTIONS.items():
        keys.update({f"{prefix}.{f.name}": cls for f in fields(cls) if (prefix, f.name) not in _NOT_CONFIGURABLE})
    return keys


def _coerce(key: str, raw: str):
    raw = raw.strip()
    name = key.rsplit(".", 1)[-1]
    if name in ("trainable_embeddings",):
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise UsageError(f"config {key}: expected a boolean, got {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    if name == "filter_heights":
        try:
            return tuple(int(x) for x in raw.split(","))
        except ValueError:
            raise UsageError(f"config {key}: expected comma-separated integers, got {raw!r}") from None
    if name in ("comparator", "metric", "pooling"):
        return raw
    if raw.lower() in ("none", "null", ""):
        return None
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        raise UsageError(f"config {key}: expected a number, got {raw!r}") from None


def parse_config_lines(lines: Sequence[str], where: str) -> dict:
    """``key=value`` pairs; blank lines and ``#`` comments are ignored."""
    known = _config_keys()
    out = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{where}:{lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise UsageError(f"{where}:{lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, value)
    return out


def effective_config(args) -> dict:
    """Config file first, then ``--set`` pairs, then dedicated flags."""
    config: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise DataError(f"config file not found: {path}")
        config.update(parse_config_lines(path.read_text(encoding="utf-8").splitlines(), str(path)))
    config.update(parse_config_lines(args.set or [], "--set"))
    for key in ("seed", "epochs", "batch_size", "lr"):
        value = getattr(args, key)
        if value is not None:
            config[key] = value
    if config.get("seed") is None:
        raise UsageError("a seed is required (--seed N or seed=N in the config file)")
    return dict(sorted(config.items()))


def _split_config(config: dict, emb_dim: int) -> tuple[TrainConfig, CnnConfig, GruConfig, SubtreeConfig]:
    parts: dict[str, dict] = {"": {}, "cnn": {"emb_dim": emb_dim}, "gru": {"emb_dim": emb_dim}, "subtree": {}}
    for key, value in config.items():
        prefix, _, name = key.rpartition(".")
        parts[prefix][name] = value
    try:
        return (
            TrainConfig(**parts[""]),
            CnnConfig(**parts["cnn"]),
            GruConfig(**parts["gru"]),
            SubtreeConfig(**parts["subtree"]),
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


# ---------------------------------------------------------------- shared loading

def _load(args, task: str):
    sections = load_sections(args.sections)
    dataset = load_dataset(args.data if hasattr(args, "data") else args.dataset, sections, task)
    if getattr(args, "parses", None):
        n = attach_parses(dataset, read_parses(args.parses))
        log.info("attached %d dependency parses", n)
    return sections, dataset


def _score_dataset(model, dataset) -> tuple[list[dict], dict[str, list[Scored]]]:
    rows, run = [], {}
    for q in dataset.questions:
        cands = dataset.candidates[q.id]
        pred = predict_run(model, q, cands, dataset.sections)
        run[q.id] = [Scored(c.section_id, c.sent_index, s, c.label) for c, s in pred.scored]
        rows.extend(
            {"question_id": q.id, "section_id": c.section_id, "sent_index": c.sent_index, "score": s} for c, s in pred.scored
        )
    return rows, run


# ---------------------------------------------------------------- commands

def cmd_index_build(args) -> int:
    sections = load_sections(args.sections)
    index = build_index(sections)
    meta = {"command": "index build", "sections": args.sections, "k1": 1.2, "b": 0.75, "seed": None}
    save_index(index, args.out, meta)
    summary = {"out": args.out, "sections": index.N, "terms": len(index.postings), "avgdl": index.avgdl, "config": meta}
    _emit(summary)
    return 0


def cmd_suspicious(args) -> int:
    _, dataset = _load(args, "ASS")
    index = load_index(args.index)
    flagged = sorted(flag_suspicious(dataset, index, args.k))
    n = len(dataset.questions)
    report = {
        "config": {"command": "suspicious", "dataset": args.dataset, "sections": args.sections, "index": args.index, "k": args.k, "seed": None},
        "questions": n,
        "suspicious": len(flagged),
        "fraction": len(flagged) / n if n else 0.0,
        "flagged": flagged,
    }
    if args.out:
        _write_json(report, args.out)
    _emit(report)
    return 0


def cmd_triggering(args) -> int:
    sections, dataset = _load(args, "ASS")
    index = load_index(args.index)
    at = generate_triggering(dataset, index, args.k, sections)
    answerable = sum(at.answerable(q.id) for q in at.questions)
    meta = {
        "command": "triggering",
        "dataset": args.dataset,
        "sections": args.sections,
        "index": args.index,
        "k": args.k,
        "seed": None,
    }
    write_dataset(at, args.out, meta)
    _emit({"out": args.out, "questions": len(at.questions), "answerable": answerable, "config": meta})
    return 0


def cmd_stats(args) -> int:
    _, dataset = _load(args, args.task)
    report = corpus_report(dataset)
    report["config"] = {"command": "stats", "dataset": args.dataset, "sections": args.sections, "task": args.task, "seed": None}
    if args.out:
        _write_json(report, args.out)
    _emit(report)
    return 0


def cmd_train(args) -> int:
    config = effective_config(args)
    _, dataset = _load(args, args.task)
    emb = load_embeddings(args.emb)
    train_config, cnn_config, gru_config, subtree = _split_config(config, emb.dim)
    trn = dataset.split("TRN")
    if not trn.questions:
        raise DataError(f"{args.data}: no TRN questions to train on")
    start = time.perf_counter()
    model = train_model(args.model, trn, emb, train_config, cnn_config, gru_config, subtree)
    elapsed = time.perf_counter() - start

    dev = dataset.split("DEV")
    dev_report = None
    if dev.questions:
        _, run = _score_dataset(model, dev)
        if train_config.threshold is None:
            model.threshold = threshold_sweep(run)
        dev_report = {"questions": len(run)}
        if all(any(c.label for c in cands) for cands in run.values()):
            dev_report["MAP"], dev_report["MRR"] = map_mrr(run)
    threshold_source = "config" if train_config.threshold is not None else "dev" if dev.questions else "default"

    extra = {
        "config": config,
        "seed": train_config.seed,
        "task": args.task,
        "inputs": {"data": args.data, "sections": args.sections, "emb": args.emb, "parses": args.parses},
        "history": model.history,
        "dev": dev_report,
        "threshold": encode_threshold(model.threshold),
        "threshold_source": threshold_source,
    }
    save_model(model, args.out, extra)
    _emit(
        {
            "out": args.out,
            "model": args.model,
            "seed": train_config.seed,
            "epochs": train_config.epochs,
            "final_loss": model.history[-1] if model.history else None,
            "threshold": encode_threshold(model.threshold),
            "dev": dev_report,
            "seconds": round(elapsed, 3),
        }
    )
    return 0


def cmd_score(args) -> int:
    model = load_model(args.model)
    _, dataset = _load(args, args.task)
    if args.split:
        dataset = dataset.split(args.split)
    rows, _ = _score_dataset(model, dataset)
    ckpt = getattr(model, "checkpoint_meta", {})
    meta = {
        "command": "score",
        "model": args.model,
        "kind": model.kind,
        "data": args.data,
        "split": args.split,
        "task": args.task,
        "threshold": encode_threshold(model.threshold),
        "config": ckpt.get("config"),
        "seed": ckpt.get("seed"),
    }
    write_run(rows, args.out, meta)
    _emit({"out": args.out, "questions": len(dataset.questions), "rows": len(rows), "config": meta})
    return 0


def _facets(spec: str | None) -> list[str]:
    if not spec:
        return []
    out = []
    for name in (s.strip() for s in spec.split(",") if s.strip()):
        expanded = ["q_length", "s_length"] if name == "length" else [name]
        for facet in expanded:
            if facet not in FACETS:
                raise UsageError(f"unknown facet {name!r}; expected topic, qtype, origin, length, q_length or s_length")
            if facet not in out:
                out.append(facet)
    return out


def cmd_eval(args) -> int:
    facets = _facets(args.facets)
    gold = load_gold(args.gold)
    rows, run_meta = read_run(args.run)
    run, info = join_run(rows, gold)
    threshold, source = None, None
    if args.threshold is not None:
        try:
            threshold, source = decode_threshold(args.threshold), "flag"
        except ValueError:
            raise UsageError(f"--threshold: not a number: {args.threshold!r}") from None
    elif args.sweep:
        dev_rows, _ = read_run(args.sweep)
        dev_run, _ = join_run(dev_rows, gold)
        threshold, source = threshold_sweep(dev_run), f"sweep:{args.sweep}"
    elif args.task == "AT" and "threshold" in run_meta:
        threshold, source = decode_threshold(run_meta["threshold"]), "run"
    report = evaluate(args.task, run, info, threshold, facets)
    report["config"] = {
        "command": "eval",
        "task": args.task,
        "run": args.run,
        "gold": args.gold,
        "facets": facets,
        "threshold": encode_threshold(threshold) if threshold is not None else None,
        "threshold_source": source,
        "seed": run_meta.get("seed"),
        "run_config": run_meta.get("config"),
    }
    if args.out:
        _write_json(report, args.out)
    _emit(report)
    return 0


def cmd_gradcheck(args) -> int:
    from .diagnostics import LOSSES, check_losses

    names = [n.strip() for n in args.models.split(",") if n.strip()]
    bad = [n for n in names if n not in LOSSES]
    if bad:
        raise UsageError(f"unknown loss {bad[0]!r}; expected some of {', '.join(LOSSES)}")
    start = time.perf_counter()
    results = check_losses(range(args.seeds), names, tol=args.tol, h=args.h)
    report = {
        "config": {"command": "gradcheck", "models": names, "seeds": args.seeds, "h": args.h, "tol": args.tol},
        "checks": [
            {"loss": name, "seed": seed, "passed": r.passed, "max_rel_error": r.max_rel_error, "coords": r.n_coords, "message": r.message}
            for name, seed, r in results
        ],
        "passed": all(r.passed for _, _, r in results),
        "seconds": round(time.perf_counter() - start, 3),
    }
    _emit(report)
    if not report["passed"]:
        raise NumericError("gradient check failed")
    return 0


def _fixture_dir() -> Path:
    return Path(str(resources.files("selrank") / "fixtures"))


def cmd_demo(args) -> int:
    """End-to-end run over the bundled synthetic fixtures."""
    work = Path(args.workdir) if args.workdir else Path(tempfile.mkdtemp(prefix="selrank-demo-"))
    work.mkdir(parents=True, exist_ok=True)
    for name in ("sections.jsonl", "questions.jsonl", "parses.txt", "emb.txt", "demo.cfg"):
        shutil.copyfile(_fixture_dir() / name, work / name)
    p = {name: str(work / name) for name in ("sections.jsonl", "questions.jsonl", "parses.txt", "emb.txt", "demo.cfg")}
    w = lambda name: str(work / name)  # noqa: E731
    start = time.perf_counter()
    steps = [
        ["index", "build", "--sections", p["sections.jsonl"], "--out", w("index.bin")],
        ["suspicious", "--dataset", p["questions.jsonl"], "--sections", p["sections.jsonl"], "--index", w("index.bin"), "--k", "5", "--out", w("suspicious.json")],
        ["triggering", "--dataset", p["questions.jsonl"], "--sections", p["sections.jsonl"], "--index", w("index.bin"), "--k", "5", "--out", w("at.jsonl")],
        ["stats", "--dataset", p["questions.jsonl"], "--sections", p["sections.jsonl"], "--out", w("stats.json")],
        ["train", "--model", "cnn-subtree", "--data", p["questions.jsonl"], "--sections", p["sections.jsonl"], "--emb", p["emb.txt"], "--parses", p["parses.txt"], "--config", p["demo.cfg"], "--out", w("cnn.bin")],
        ["score", "--model", w("cnn.bin"), "--data", p["questions.jsonl"], "--sections", p["sections.jsonl"], "--parses", p["parses.txt"], "--split", "TST", "--out", w("ass_tst.jsonl")],
        ["eval", "--task", "ass", "--run", w("ass_tst.jsonl"), "--gold", p["questions.jsonl"], "--facets", "topic,qtype,origin,length", "--out", w("ass_report.json")],
        ["train", "--model", "ap", "--data", p["questions.jsonl"], "--sections", p["sections.jsonl"], "--emb", p["emb.txt"], "--config", p["demo.cfg"], "--out", w("ap.bin")],
        ["score", "--model", w("ap.bin"), "--task", "at", "--data", w("at.jsonl"), "--sections", p["sections.jsonl"], "--split", "DEV", "--out", w("at_dev.jsonl")],
        ["score", "--model", w("ap.bin"), "--task", "at", "--data", w("at.jsonl"), "--sections", p["sections.jsonl"], "--split", "TST", "--out", w("at_tst.jsonl")],
        ["eval", "--task", "at", "--run", w("at_tst.jsonl"), "--gold", w("at.jsonl"), "--sweep", w("at_dev.jsonl"), "--facets", "qtype", "--out", w("at_report.json")],
    ]
    stdout = sys.stdout
    for step in steps:
        log.info("demo: selrank %s", " ".join(step[:2]))
        sys.stdout = open(work / "demo.log", "a", encoding="utf-8")
        try:
            code = main(step, configure_logging=False)
        finally:
            sys.stdout.close()
            sys.stdout = stdout
        if code != 0:
            return code
    ass = json.loads((work / "ass_report.json").read_text())
    at = json.loads((work / "at_report.json").read_text())
    _emit(
        {
            "workdir": str(work),
            "seconds": round(time.perf_counter() - start, 3),
            "ASS": {"MAP": ass["MAP"], "MRR": ass["MRR"]},
            "AT": {k: at.get(k) for k in ("P", "R", "F1", "threshold")},
        }
    )
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="selrank", description="Selection-based question answering toolkit.")
    parser.add_argument("--version", action="store_true", help="print package and container format versions")
    parser.add_argument("--log-level", default="info", choices=["debug", "info", "warning", "error"])
    sub = parser.add_subparsers(dest="command", metavar="command")

    index = sub.add_parser("index", help="inverted index operations")
    index_sub = index.add_subparsers(dest="index_command", metavar="action", required=True)
    build = index_sub.add_parser("build", help="build a BM25 index over a section store")
    build.add_argument("--sections", required=True)
    build.add_argument("--out", required=True)
    build.set_defaults(func=cmd_index_build)

    sus = sub.add_parser("suspicious", help="flag questions whose answer section is not retrieved")
    sus.add_argument("--dataset", required=True)
    sus.add_argument("--sections", required=True)
    sus.add_argument("--index", required=True)
    sus.add_argument("--k", type=int, default=5)
    sus.add_argument("--out")
    sus.set_defaults(func=cmd_suspicious)

    trig = sub.add_parser("triggering", help="build an answer-triggering dataset from retrieval")
    trig.add_argument("--dataset", required=True)
    trig.add_argument("--sections", required=True)
    trig.add_argument("--index", required=True)
    trig.add_argument("--k", type=int, default=5)
    trig.add_argument("--out", required=True)
    trig.set_defaults(func=cmd_triggering)

    stats = sub.add_parser("stats", help="corpus and overlap statistics")
    stats.add_argument("--dataset", required=True)
    stats.add_argument("--sections", required=True)
    stats.add_argument("--task", type=_task, default="ASS")
    stats.add_argument("--out")
    stats.set_defaults(func=cmd_stats)

    train = sub.add_parser("train", help="train a ranker on the TRN split")
    train.add_argument("--model", required=True, choices=MODEL_KINDS)
    train.add_argument("--data", required=True)
    train.add_argument("--sections", required=True)
    train.add_argument("--emb", required=True)
    train.add_argument("--parses")
    train.add_argument("--task", type=_task, default="ASS")
    train.add_argument("--config", help="key=value file; flags override it")
    train.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    train.add_argument("--seed", type=int)
    train.add_argument("--epochs", type=int)
    train.add_argument("--batch-size", dest="batch_size", type=int)
    train.add_argument("--lr", type=float)
    train.add_argument("--out", required=True)
    train.set_defaults(func=cmd_train)

    score = sub.add_parser("score", help="score every candidate with a trained model")
    score.add_argument("--model", required=True)
    score.add_argument("--data", required=True)
    score.add_argument("--sections", required=True)
    score.add_argument("--parses")
    score.add_argument("--task", type=_task, default="ASS")
    score.add_argument("--split", choices=["TRN", "DEV", "TST"])
    score.add_argument("--out", required=True)
    score.set_defaults(func=cmd_score)

    ev = sub.add_parser("eval", help="MAP/MRR or answer-triggering metrics for a run")
    ev.add_argument("--task", type=_task, required=True)
    ev.add_argument("--run", required=True)
    ev.add_argument("--gold", required=True)
    group = ev.add_mutually_exclusive_group()
    group.add_argument("--threshold")
    group.add_argument("--sweep", metavar="DEV_RUN")
    ev.add_argument("--facets", help="comma list of topic, qtype, origin, length")
    ev.add_argument("--out")
    ev.set_defaults(func=cmd_eval)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every model loss")
    gc.add_argument("--seeds", type=int, default=5)
    gc.add_argument("--models", default="cnn,oneway,ap")
    gc.add_argument("--h", type=float, default=1e-5)
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.set_defaults(func=cmd_gradcheck)

    demo = sub.add_parser("demo", help="end-to-end run on the bundled fixtures")
    demo.add_argument("--workdir")
    demo.set_defaults(func=cmd_demo)
    return parser


def main(argv: Sequence[str] | None = None, configure_logging: bool = True) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if configure_logging:
        _setup_logging(args.log_level)
    if args.version:
        _emit(version_info())
        return 0
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        return 1
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return 3
    except (SelrankError, OSError) as exc:
        log.error("data error: %s", exc)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
