"""BM25 inverted index over sections, suspicious-question flagging and
answer-triggering candidate generation.

Each section is one document. Scoring is Okapi BM25 with ``k1=1.2``,
``b=0.75`` and ``idf(t) = ln((N - df + 0.5) / (df + 0.5) + 1)``; a query is
the set of distinct case-folded tokens of the question text.
"""
from __future__ import annotations

import json
import math
import struct
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import Candidate, Dataset, Section, Token
from .errors import DataError

K1 = 1.2
B = 0.75
INDEX_MAGIC = b"SELIDX01"


@dataclass
class InvertedIndex:
    postings: dict[str, list[tuple[str, int]]]
    doc_len: dict[str, int]
    meta: dict = field(default_factory=dict)
    _tf: dict[str, dict[str, int]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._tf = {term: dict(plist) for term, plist in self.postings.items()}

    @property
    def N(self) -> int:
        return len(self.doc_len)

    @property
    def avgdl(self) -> float:
        return sum(self.doc_len.values()) / self.N if self.N else 0.0

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def idf(self, term: str) -> float:
        df = self.df(term)
        return math.log((self.N - df + 0.5) / (df + 0.5) + 1.0)

    def tf(self, term: str, section_id: str) -> int:
        return self._tf.get(term, {}).get(section_id, 0)


@dataclass
class RetrievalResult:
    question_id: str
    hits: list[tuple[str, float]]


def build_index(sections: Mapping[str, Section] | Iterable[Section]) -> InvertedIndex:
    items = list(sections.values()) if isinstance(sections, Mapping) else list(sections)
    if not items:
        raise DataError("build_index: empty section store")
    postings: dict[str, list[tuple[str, int]]] = defaultdict(list)
    doc_len: dict[str, int] = {}
    for section in items:
        terms = [tok.lower for sent in section.sentences for tok in sent.tokens]
        doc_len[section.section_id] = len(terms)
        for term, tf in Counter(terms).items():
            postings[term].append((section.section_id, tf))
    return InvertedIndex(dict(postings), doc_len)


def query_terms(tokens: Iterable[Token | str]) -> list[str]:
    """Distinct case-folded terms in first-occurrence order."""
    seen: dict[str, None] = {}
    for tok in tokens:
        term = tok.lower if isinstance(tok, Token) else tok.casefold()
        seen.setdefault(term, None)
    return list(seen)


def _term_score(index: InvertedIndex, idf: float, tf: int, section_id: str, avgdl: float) -> float:
    norm = 1.0 - B + B * index.doc_len[section_id] / avgdl if avgdl > 0 else 1.0
    return idf * tf * (K1 + 1.0) / (tf + K1 * norm)


def score(index: InvertedIndex, query_tokens: Sequence[Token | str], section_id: str) -> float:
    if section_id not in index.doc_len:
        raise DataError(f"score: section {section_id!r} is not indexed")
    avgdl = index.avgdl
    total = 0.0
    for term in query_terms(query_tokens):
        tf = index.tf(term, section_id)
        if tf:
            total += _term_score(index, index.idf(term), tf, section_id, avgdl)
    return total


def search(index: InvertedIndex, query_tokens: Sequence[Token | str], k: int, question_id: str = "") -> RetrievalResult:
    if k < 1:
        raise ValueError(f"search: k must be >= 1, got {k}")
    avgdl = index.avgdl
    acc: dict[str, float] = {}
    # accumulate in query-term order so totals equal score() bit for bit
    for term in query_terms(query_tokens):
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = index.idf(term)
        for sid, tf in plist:
            acc[sid] = acc.get(sid, 0.0) + _term_score(index, idf, tf, sid, avgdl)
    ranked = sorted(((sid, s) for sid, s in acc.items() if s > 0), key=lambda x: (-x[1], x[0]))
    return RetrievalResult(question_id, ranked[:k])


def flag_suspicious(dataset: Dataset, index: InvertedIndex, k: int = 5) -> set[str]:
    """Questions none of whose answer sections appear in their top-k hits."""
    flagged = set()
    for q in dataset.questions:
        answer_sections = {c.section_id for c in dataset.answers(q.id)}
        hits = {sid for sid, _ in search(index, q.tokens, k, q.id).hits}
        if not answer_sections & hits:
            flagged.add(q.id)
    return flagged


def generate_triggering(
    dataset: Dataset, index: InvertedIndex, k: int = 5, sections: Mapping[str, Section] | None = None
) -> Dataset:
    """Candidates = every sentence of the question's top-k sections.

    A candidate is an answer only if it is an answer of that question in the
    source dataset. ``sections`` is the candidate-pool store the index was built
    from; it defaults to the dataset's own sections.
    """
    pool = dict(sections) if sections is not None else dict(dataset.sections)
    missing = [sid for sid in index.doc_len if sid not in pool]
    if missing:
        raise DataError(f"generate_triggering: indexed sections missing from the store: {missing[:5]}")
    candidates = {}
    for q in dataset.questions:
        gold = {(c.section_id, c.sent_index) for c in dataset.answers(q.id)}
        cands = []
        for sid, _ in search(index, q.tokens, k, q.id).hits:
            for sent in pool[sid].sentences:
                label = 1 if (sid, sent.sent_index) in gold else 0
                cands.append(Candidate(q.id, sid, sent.sent_index, label))
        candidates[q.id] = cands
    merged = dict(dataset.sections)
    merged.update(pool)
    return Dataset("AT", list(dataset.questions), candidates, merged, dict(dataset.meta))


def answerable_fraction(dataset: Dataset) -> float:
    if not dataset.questions:
        return 0.0
    return sum(dataset.answerable(q.id) for q in dataset.questions) / len(dataset.questions)


# ---------------------------------------------------------------- index file

def _u32(n: int) -> bytes:
    return struct.pack("<I", n)


def _str(s: str) -> bytes:
    b = s.encode("utf-8")
    return _u32(len(b)) + b


def save_index(index: InvertedIndex, path: str | Path, meta: Mapping | None = None) -> None:
    """Write ``SELIDX01 | meta | sections | postings`` with little-endian uint32 fields."""
    order = sorted(index.doc_len)
    ordinal = {sid: i for i, sid in enumerate(order)}
    parts = [INDEX_MAGIC, _str(json.dumps(dict(meta or index.meta), sort_keys=True)), _u32(len(order))]
    for sid in order:
        parts += [_str(sid), _u32(index.doc_len[sid])]
    parts.append(_u32(len(index.postings)))
    for term in sorted(index.postings):
        plist = index.postings[term]
        parts += [_str(term), _u32(len(plist))]
        parts += [_u32(ordinal[sid]) + _u32(tf) for sid, tf in plist]
    Path(path).write_bytes(b"".join(parts))


def load_index(path: str | Path) -> InvertedIndex:
    buf = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise DataError(f"{path}: truncated index at byte {pos}")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    def u32():
        return struct.unpack("<I", take(4))[0]

    def string():
        return take(u32()).decode("utf-8")

    if take(len(INDEX_MAGIC)) != INDEX_MAGIC:
        raise DataError(f"{path}: not a SELIDX01 index")
    meta = json.loads(string())
    order = []
    doc_len = {}
    for _ in range(u32()):
        sid = string()
        order.append(sid)
        doc_len[sid] = u32()
    postings = {}
    for _ in range(u32()):
        term = string()
        postings[term] = [(order[u32()], u32()) for _ in range(u32())]
    return InvertedIndex(postings, doc_len, meta)
