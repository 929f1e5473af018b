"""Ranking and answer-triggering metrics with per-facet breakdowns.

A run maps question ids to scored candidates carrying gold labels. Candidates
are ranked by descending score, ties broken by ascending
``(section_id, sent_index)``.

Answer triggering fires on a question when its top candidate's score is
strictly above the threshold; the firing is correct when that candidate is a
gold answer. Precision is correct/fired, recall is correct/answerable.
"""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .analysis import Q_BUCKETS, S_BUCKETS, length_bucket
from .corpus import QTYPES, TOPICS, classify_qtype, read_question_records, tokenize
from .errors import DataError

FACETS = ("topic", "qtype", "origin", "q_length", "s_length")


@dataclass(frozen=True)
class Scored:
    section_id: str
    sent_index: int
    score: float
    label: int


@dataclass(frozen=True)
class QuestionInfo:
    topic: str
    qtype: str
    origin: str
    q_length: int
    s_length: int


Run = Mapping[str, Sequence[Scored]]


def ranked(cands: Iterable[Scored]) -> list[Scored]:
    return sorted(cands, key=lambda c: (-c.score, c.section_id, c.sent_index))


def _labels(cands: Sequence[Scored] | Sequence[int]) -> list[int]:
    if cands and isinstance(cands[0], Scored):
        return [c.label for c in ranked(cands)]
    return list(cands)


def average_precision(ranking: Sequence[Scored] | Sequence[int]) -> float:
    """Mean over positives of precision at the positive's rank.

    Accepts scored candidates (ranked here) or 0/1 labels already in rank order.
    """
    labels = _labels(ranking)
    hits, total = 0, 0.0
    for rank, y in enumerate(labels, start=1):
        if y:
            hits += 1
            total += hits / rank
    if hits == 0:
        raise DataError("average_precision: ranking has no positive candidate")
    return total / hits


def reciprocal_rank(ranking: Sequence[Scored] | Sequence[int]) -> float:
    for rank, y in enumerate(_labels(ranking), start=1):
        if y:
            return 1.0 / rank
    raise DataError("reciprocal_rank: ranking has no positive candidate")


def map_mrr(run: Run) -> tuple[float, float]:
    if not run:
        raise DataError("map_mrr: empty run")
    aps, rrs = [], []
    for qid, cands in run.items():
        try:
            aps.append(average_precision(list(cands)))
            rrs.append(reciprocal_rank(list(cands)))
        except DataError:
            raise DataError(f"map_mrr: question {qid} has no positive candidate") from None
    return math.fsum(aps) / len(aps), math.fsum(rrs) / len(rrs)


def _top(cands: Sequence[Scored]) -> Scored | None:
    return ranked(cands)[0] if cands else None


def _answerable(cands: Sequence[Scored]) -> bool:
    return any(c.label for c in cands)


def trigger_f1(run: Run, threshold: float) -> tuple[float, float, float]:
    fired = correct = answerable = 0
    for cands in run.values():
        answerable += _answerable(cands)
        top = _top(cands)
        if top is not None and top.score > threshold:
            fired += 1
            correct += top.label == 1
    p = correct / fired if fired else 0.0
    r = correct / answerable if answerable else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def threshold_sweep(run: Run) -> float:
    """Threshold maximizing question-level F1 on ``run``.

    Candidates are -inf and every distinct top-candidate score; the lowest
    maximizer wins. Returns +inf (never fire) when no threshold gives F1 > 0.
    """
    tops = sorted({t.score for t in (_top(c) for c in run.values()) if t is not None})
    best, best_f1 = math.inf, 0.0
    for t in [-math.inf] + tops:
        f1 = trigger_f1(run, t)[2]
        if f1 > best_f1:
            best, best_f1 = t, f1
    return best


def accuracy_answerable(run: Run) -> float:
    answerable = [c for c in run.values() if _answerable(c)]
    if not answerable:
        raise DataError("accuracy_answerable: no answerable question in run")
    return sum(_top(c).label == 1 for c in answerable) / len(answerable)


# ---------------------------------------------------------------- facets

def facet_value(info: QuestionInfo, facet: str) -> str:
    if facet == "q_length":
        return length_bucket(info.q_length, max(info.s_length, 1))[0]
    if facet == "s_length":
        return length_bucket(max(info.q_length, 1), info.s_length)[1]
    if facet not in FACETS:
        raise ValueError(f"unknown facet {facet!r}; expected one of {FACETS}")
    return getattr(info, facet)


_FACET_ORDER = {
    "topic": TOPICS,
    "qtype": QTYPES,
    "origin": ("original", "paraphrase"),
    "q_length": Q_BUCKETS,
    "s_length": S_BUCKETS,
}


def breakdown(run: Run, info: Mapping[str, QuestionInfo], facet: str, task: str, threshold: float | None = None) -> dict:
    """Per-bucket metric table. Buckets with no questions are left out.

    ASS buckets report MAP and MRR; AT buckets report answerable-subset
    accuracy (omitted when the bucket has no answerable question) and, with a
    threshold, P/R/F1.
    """
    groups: dict[str, dict] = defaultdict(dict)
    for qid, cands in run.items():
        groups[facet_value(info[qid], facet)][qid] = cands
    order = [b for b in _FACET_ORDER[facet] if b in groups] + sorted(b for b in groups if b not in _FACET_ORDER[facet])
    table = {}
    for bucket in order:
        sub = groups[bucket]
        row: dict = {"n": len(sub)}
        if task == "ASS":
            row["MAP"], row["MRR"] = map_mrr(sub)
        else:
            n_ans = sum(_answerable(c) for c in sub.values())
            row["answerable"] = n_ans
            if n_ans:
                row["accuracy"] = accuracy_answerable(sub)
            if threshold is not None:
                row["P"], row["R"], row["F1"] = trigger_f1(sub, threshold)
        table[bucket] = row
    return table


# ---------------------------------------------------------------- files

def read_run(path: str | Path) -> tuple[list[dict], dict]:
    """Run lines ``{question_id, section_id, sent_index, score}`` plus the optional ``_meta`` header."""
    rows, meta = [], {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if "_meta" in obj:
                meta = obj["_meta"]
                continue
            missing = [k for k in ("question_id", "section_id", "sent_index", "score") if k not in obj]
            if missing:
                raise DataError(f"{path}:{lineno}: missing field(s) {', '.join(missing)}")
            rows.append(obj)
    return rows, meta


def write_run(rows: Iterable[Mapping], path: str | Path, meta: Mapping | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if meta is not None:
            fh.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
        for r in rows:
            fh.write(
                json.dumps(
                    {
                        "question_id": r["question_id"],
                        "section_id": r["section_id"],
                        "sent_index": r["sent_index"],
                        "score": float(r["score"]),
                    }
                )
                + "\n"
            )


def question_info(record: Mapping) -> QuestionInfo:
    """Facet metadata from a questions.jsonl record.

    Section length counts the record's candidates drawn from its primary
    section: the section of the first answer, else of the first candidate.
    """
    tokens = tokenize(record["text"])
    cands = record["candidates"]
    primary = next((c["section_id"] for c in cands if c["label"] == 1), cands[0]["section_id"] if cands else None)
    s_len = sum(1 for c in cands if c["section_id"] == primary)
    return QuestionInfo(record["topic"], classify_qtype(tokens), record["origin"], len(tokens), s_len)


def join_run(rows: Iterable[Mapping], gold: Iterable[Mapping]) -> tuple[dict[str, list[Scored]], dict[str, QuestionInfo]]:
    """Attach gold labels to run rows. Only questions present in the run are kept,
    and each of those must score every gold candidate exactly once."""
    gold_by_id = {g["id"]: g for g in gold}
    scores: dict[str, dict[tuple[str, int], float]] = defaultdict(dict)
    for r in rows:
        qid = r["question_id"]
        if qid not in gold_by_id:
            raise DataError(f"run: question {qid!r} not in gold data")
        key = (str(r["section_id"]), int(r["sent_index"]))
        if key in scores[qid]:
            raise DataError(f"run: duplicate score for question {qid!r} candidate {key}")
        scores[qid][key] = float(r["score"])
    run, info = {}, {}
    for qid, by_key in scores.items():
        g = gold_by_id[qid]
        labels = {(str(c["section_id"]), int(c["sent_index"])): int(c["label"]) for c in g["candidates"]}
        extra = set(by_key) - set(labels)
        missing = set(labels) - set(by_key)
        if extra or missing:
            raise DataError(f"run: question {qid!r} candidates differ from gold (extra {sorted(extra)[:3]}, missing {sorted(missing)[:3]})")
        run[qid] = [Scored(sid, idx, s, labels[(sid, idx)]) for (sid, idx), s in by_key.items()]
        info[qid] = question_info(g)
    return run, info


def load_gold(path: str | Path) -> list[dict]:
    return read_question_records(path)


def evaluate(
    task: str,
    run: Run,
    info: Mapping[str, QuestionInfo],
    threshold: float | None = None,
    facets: Sequence[str] = (),
) -> dict:
    report: dict = {"task": task, "questions": len(run)}
    if task == "ASS":
        report["MAP"], report["MRR"] = map_mrr(run)
    elif task == "AT":
        report["answerable"] = sum(_answerable(c) for c in run.values())
        if report["answerable"]:
            report["accuracy_answerable"] = accuracy_answerable(run)
        if threshold is not None:
            p, r, f1 = trigger_f1(run, threshold)
            report.update({"threshold": encode_threshold(threshold), "P": p, "R": r, "F1": f1})
    else:
        raise ValueError(f"task must be ASS or AT, got {task!r}")
    if facets:
        report["breakdown"] = {f: breakdown(run, info, f, task, threshold) for f in facets}
    return report


def encode_threshold(t: float) -> float | str:
    """JSON-safe threshold: infinities become the strings "inf" / "-inf"."""
    if math.isinf(t):
        return "inf" if t > 0 else "-inf"
    return t


def decode_threshold(t) -> float:
    return float(t)
