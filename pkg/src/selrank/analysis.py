"""Word-overlap statistics and corpus facet reports."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable

from .corpus import QTYPES, TOPICS, Dataset, Token, corpus_counts, is_punctuation
from .errors import DataError

Q_BUCKETS = ("<=5", "6-8", "9-11", ">=12")
S_BUCKETS = ("3-7", "8-12", "13-18", ">=19")


@dataclass(frozen=True)
class OverlapStats:
    omega_q: float
    omega_a: float
    omega_f: float


def content_types(tokens: Iterable[Token]) -> set[str]:
    """Distinct case-folded token types, punctuation dropped."""
    return {t.lower for t in tokens if not is_punctuation(t.form)}


def harmonic(x: float, y: float) -> float:
    return 2.0 * x * y / (x + y) if x + y > 0 else 0.0


def overlap(q: list[Token], a: list[Token]) -> OverlapStats:
    qt, at = content_types(q), content_types(a)
    if not qt or not at:
        raise DataError("overlap: both sides need at least one non-punctuation token")
    shared = len(qt & at)
    # the harmonic mean of shared/|q| and shared/|a| reduces to 2*shared/(|q|+|a|),
    # which rounds once instead of four times
    return OverlapStats(shared / len(qt), shared / len(at), 2 * shared / (len(qt) + len(at)))


def length_bucket(question_len: int, section_len: int) -> tuple[str, str]:
    if question_len <= 5:
        qb = Q_BUCKETS[0]
    elif question_len <= 8:
        qb = Q_BUCKETS[1]
    elif question_len <= 11:
        qb = Q_BUCKETS[2]
    else:
        qb = Q_BUCKETS[3]
    # sections shorter than 3 sentences fall in the first bucket
    if section_len <= 7:
        sb = S_BUCKETS[0]
    elif section_len <= 12:
        sb = S_BUCKETS[1]
    elif section_len <= 18:
        sb = S_BUCKETS[2]
    else:
        sb = S_BUCKETS[3]
    return qb, sb


def corpus_report(dataset: Dataset) -> dict:
    """Macro-averaged overlap (percent), single/multi-sentence answer counts and facet counts.

    A question's answer context is the concatenation of its answer sentences;
    unanswerable questions are left out of the overlap averages.
    """
    sums = [0.0, 0.0, 0.0]
    n_overlap = 0
    q_single = q_multi = 0
    for q in dataset.questions:
        answers = dataset.answers(q.id)
        if not answers:
            continue
        if len(answers) == 1:
            q_single += 1
        else:
            q_multi += 1
        context = [tok for c in answers for tok in dataset.sentence(c).tokens]
        if not content_types(q.tokens) or not content_types(context):
            continue
        stats = overlap(q.tokens, context)
        sums[0] += stats.omega_q
        sums[1] += stats.omega_a
        sums[2] += stats.omega_f
        n_overlap += 1
    mean = [100.0 * s / n_overlap if n_overlap else 0.0 for s in sums]
    topics = Counter(q.topic for q in dataset.questions)
    qtypes = Counter(q.qtype for q in dataset.questions)
    origins = Counter(q.origin for q in dataset.questions)
    n = len(dataset.questions)
    answerable = sum(1 for q in dataset.questions if dataset.answerable(q.id))
    used = {c.section_id for cands in dataset.candidates.values() for c in cands}
    return {
        "task": dataset.task,
        "lexical": corpus_counts(dataset.sections),
        "Q_s": q_single,
        "Q_m": q_multi,
        "Q_s+m": q_single + q_multi,
        "omega_q": mean[0],
        "omega_a": mean[1],
        "omega_f": mean[2],
        "questions": n,
        "answerable": answerable,
        "answerable_fraction": answerable / n if n else 0.0,
        "splits": split_distribution(dataset),
        "candidate_sections": len(used),
        "candidate_sentences": sum(len(c) for c in dataset.candidates.values()),
        "by_topic": {t: topics[t] for t in TOPICS if topics[t]},
        "by_qtype": {t: qtypes[t] for t in QTYPES if qtypes[t]},
        "by_origin": dict(sorted(origins.items())),
    }


def split_distribution(dataset: Dataset) -> dict[str, dict[str, int]]:
    """Questions, candidate sections and candidate sentences per split.

    Sections and sentences are counted per question, so a section shared by two
    questions counts twice.
    """
    out = {}
    for split in ("TRN", "DEV", "TST"):
        qs = [q for q in dataset.questions if q.split == split]
        sec = sum(len({c.section_id for c in dataset.candidates[q.id]}) for q in qs)
        sen = sum(len(dataset.candidates[q.id]) for q in qs)
        out[split] = {"Q": len(qs), "Sec": sec, "Sen": sen}
    return out
