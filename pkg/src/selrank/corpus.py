"""Corpus data model, tokenization and JSON-lines ingestion.

Sections hold sentences; questions point at candidate sentences by
``(section_id, sent_index)``. A :class:`Dataset` is either an answer sentence
selection (ASS) set, where every question has at least one answer, or an
answer triggering (AT) set, where questions may have none.
"""
from __future__ import annotations

import json
import logging
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .errors import DataError

log = logging.getLogger(__name__)

TOPICS = ("Arts", "Country", "Food", "Historical Events", "Movies", "Music", "Science", "Sports", "Travel", "TV")
QTYPES = ("What", "How", "Who", "When", "Where", "Why", "Misc")
ORIGINS = ("original", "paraphrase")
SPLITS = ("TRN", "DEV", "TST")
TASKS = ("ASS", "AT")

_WH = {q.lower(): q for q in QTYPES if q != "Misc"}


@dataclass(frozen=True)
class Token:
    form: str
    lower: str
    index: int


@dataclass
class Sentence:
    section_id: str
    sent_index: int
    raw: str
    tokens: list[Token]
    tree: "DependencyTree | None" = None  # noqa: F821 - set by features.attach_parses

    @property
    def forms(self) -> list[str]:
        return [t.form for t in self.tokens]


@dataclass
class Section:
    article_id: str
    section_id: str
    topic: str
    title: str
    sentences: list[Sentence]


@dataclass
class Question:
    id: str
    text: str
    tokens: list[Token]
    topic: str
    origin: str
    qtype: str
    split: str
    tree: "DependencyTree | None" = None  # noqa: F821


@dataclass(frozen=True)
class Candidate:
    question_id: str
    section_id: str
    sent_index: int
    label: int  # 1 = answer, 0 = non-answer


@dataclass
class Dataset:
    task: str
    questions: list[Question]
    candidates: dict[str, list[Candidate]]
    sections: dict[str, Section]
    meta: dict = field(default_factory=dict)

    def sentence(self, cand: Candidate) -> Sentence:
        return self.sections[cand.section_id].sentences[cand.sent_index]

    def split(self, name: str) -> "Dataset":
        qs = [q for q in self.questions if q.split == name]
        return Dataset(self.task, qs, {q.id: self.candidates[q.id] for q in qs}, self.sections, dict(self.meta))

    def split_sizes(self) -> dict[str, int]:
        counts = Counter(q.split for q in self.questions)
        return {s: counts.get(s, 0) for s in SPLITS}

    def answers(self, qid: str) -> list[Candidate]:
        return [c for c in self.candidates[qid] if c.label == 1]

    def answerable(self, qid: str) -> bool:
        return any(c.label == 1 for c in self.candidates[qid])

    def by_id(self) -> dict[str, Question]:
        return {q.id: q for q in self.questions}


# ---------------------------------------------------------------- tokenization

def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def is_punctuation(form: str) -> bool:
    return bool(form) and all(_is_punct(ch) for ch in form)


def _peel(chunk: str) -> list[str]:
    start, end = 0, len(chunk)
    while start < end and _is_punct(chunk[start]):
        start += 1
    while end > start and _is_punct(chunk[end - 1]):
        end -= 1
    return list(chunk[:start]) + ([chunk[start:end]] if start < end else []) + list(chunk[end:])


def tokenize(text: str) -> list[Token]:
    """Whitespace split, then leading/trailing punctuation peeled off one char at a time."""
    forms = [piece for chunk in text.split() for piece in _peel(chunk)]
    return [Token(form, form.casefold(), i) for i, form in enumerate(forms)]


def make_tokens(forms: Iterable[str]) -> list[Token]:
    return [Token(f, f.casefold(), i) for i, f in enumerate(forms)]


def classify_qtype(q: "Question | list[Token]") -> str:
    """First token if it is a wh-word, else the first wh-word anywhere, else Misc."""
    tokens = q.tokens if isinstance(q, Question) else q
    if tokens and tokens[0].lower in _WH:
        return _WH[tokens[0].lower]
    for tok in tokens:
        if tok.lower in _WH:
            return _WH[tok.lower]
    return "Misc"


# ---------------------------------------------------------------- loading

def _jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            if "_meta" in obj:
                continue
            yield lineno, obj


def _require(obj: dict, keys: Iterable[str], where: str) -> None:
    missing = [k for k in keys if k not in obj]
    if missing:
        raise DataError(f"{where}: missing field(s) {', '.join(missing)}")


def section_from_dict(obj: Mapping, where: str = "section") -> Section:
    _require(obj, ("article_id", "section_id", "topic", "title", "sentences"), where)
    if obj["topic"] not in TOPICS:
        raise DataError(f"{where}: unknown topic {obj['topic']!r}")
    if not isinstance(obj["sentences"], list):
        raise DataError(f"{where}: 'sentences' must be a list")
    sid = str(obj["section_id"])
    sentences = [Sentence(sid, i, raw, tokenize(raw)) for i, raw in enumerate(obj["sentences"])]
    return Section(str(obj["article_id"]), sid, obj["topic"], obj["title"], sentences)


def load_sections(path: str | Path) -> dict[str, Section]:
    store: dict[str, Section] = {}
    for lineno, obj in _jsonl(path):
        section = section_from_dict(obj, f"{path}:{lineno}")
        if section.section_id in store:
            raise DataError(f"{path}:{lineno}: duplicate section_id {section.section_id!r}")
        store[section.section_id] = section
    counts = corpus_counts(store)
    log.info("loaded %(articles)d articles, %(sections)d sections, %(sentences)d sentences, %(tokens)d tokens", counts)
    return store


def corpus_counts(store: Mapping[str, Section]) -> dict[str, int]:
    """Article/section/sentence/token totals."""
    return {
        "articles": len({s.article_id for s in store.values()}),
        "sections": len(store),
        "sentences": sum(len(s.sentences) for s in store.values()),
        "tokens": sum(len(sent.tokens) for s in store.values() for sent in s.sentences),
    }


def read_question_records(path: str | Path) -> list[dict]:
    """Raw question records, schema-checked but not resolved against sections."""
    records, seen = [], set()
    for lineno, obj in _jsonl(path):
        where = f"{path}:{lineno}"
        _require(obj, ("id", "text", "topic", "origin", "split", "candidates"), where)
        if obj["id"] in seen:
            raise DataError(f"{where}: duplicate question id {obj['id']!r}")
        seen.add(obj["id"])
        if obj["origin"] not in ORIGINS:
            raise DataError(f"{where}: origin must be one of {ORIGINS}, got {obj['origin']!r}")
        if obj["split"] not in SPLITS:
            raise DataError(f"{where}: split must be one of {SPLITS}, got {obj['split']!r}")
        for cand in obj["candidates"]:
            _require(cand, ("section_id", "sent_index", "label"), where)
            if cand["label"] not in (0, 1):
                raise DataError(f"{where}: candidate label must be 0 or 1")
        obj["_where"] = where
        records.append(obj)
    return records


def question_from_record(obj: Mapping) -> Question:
    tokens = tokenize(obj["text"])
    return Question(
        id=str(obj["id"]),
        text=obj["text"],
        tokens=tokens,
        topic=obj["topic"],
        origin=obj["origin"],
        qtype=classify_qtype(tokens),
        split=obj["split"],
    )


def build_dataset(records: Iterable[Mapping], sections: Mapping[str, Section], task: str) -> Dataset:
    if task not in TASKS:
        raise DataError(f"task must be one of {TASKS}, got {task!r}")
    questions, candidates, unanswerable = [], {}, []
    for obj in records:
        q = question_from_record(obj)
        where = obj.get("_where", f"question {q.id}")
        cands = []
        for c in obj["candidates"]:
            sid, idx = str(c["section_id"]), int(c["sent_index"])
            section = sections.get(sid)
            if section is None or not 0 <= idx < len(section.sentences):
                raise DataError(f"{where}: dangling candidate ({sid}, {idx}) for question {q.id}")
            cands.append(Candidate(q.id, sid, idx, int(c["label"])))
        if not any(c.label for c in cands):
            unanswerable.append(q.id)
        questions.append(q)
        candidates[q.id] = cands
    if task == "ASS" and unanswerable:
        raise DataError(f"ASS dataset has questions without answers: {', '.join(unanswerable)}")
    return Dataset(task, questions, candidates, dict(sections))


def load_dataset(path: str | Path, sections: Mapping[str, Section], task: str) -> Dataset:
    ds = build_dataset(read_question_records(path), sections, task)
    log.info("loaded %s dataset %s: %s", task, path, ds.split_sizes())
    return ds


def question_record(q: Question, cands: Iterable[Candidate]) -> dict:
    return {
        "id": q.id,
        "text": q.text,
        "topic": q.topic,
        "origin": q.origin,
        "split": q.split,
        "candidates": [{"section_id": c.section_id, "sent_index": c.sent_index, "label": c.label} for c in cands],
    }


def write_dataset(ds: Dataset, path: str | Path, meta: Mapping | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if meta is not None:
            fh.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
        for q in ds.questions:
            fh.write(json.dumps(question_record(q, ds.candidates[q.id])) + "\n")


def section_record(s: Section) -> dict:
    return {
        "article_id": s.article_id,
        "section_id": s.section_id,
        "topic": s.topic,
        "title": s.title,
        "sentences": [sent.raw for sent in s.sentences],
    }


def write_sections(store: Mapping[str, Section], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in store.values():
            fh.write(json.dumps(section_record(s)) + "\n")
