"""Lexical and dependency-subtree features for the logistic-regression stage.

Subtree matching compares, for every word shared by a question and a
candidate, the word's parent, siblings and children across the two dependency
trees. Comparisons use either lowered word forms (1 on equality, else 0) or
embedding cosine similarity; sibling and child comparison lists are reduced by
``sum``, ``avg`` or ``max``.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Dataset, Sentence, Token, is_punctuation
from .errors import DataError

ROOT = -1
COMPARATORS = ("form", "embedding")
METRICS = ("sum", "avg", "max")
FEATURE_NAMES = ("cnn_score", "overlap_count", "overlap_idf", "q_len", "s_parent", "s_sibling", "s_child")


@dataclass(frozen=True)
class DependencyTree:
    forms: tuple[str, ...]
    heads: tuple[int, ...]

    def __post_init__(self):
        n = len(self.heads)
        if len(self.forms) != n:
            raise DataError(f"tree: {len(self.forms)} forms but {n} heads")
        roots = [i for i, h in enumerate(self.heads) if h == ROOT]
        if n and len(roots) != 1:
            raise DataError(f"tree: expected exactly one root, found {len(roots)}")
        for i, h in enumerate(self.heads):
            if h == i or not (h == ROOT or 0 <= h < n):
                raise DataError(f"tree: invalid head {h} for token {i}")
        for i in range(n):
            seen, node = set(), i
            while node != ROOT:
                if node in seen:
                    raise DataError(f"tree: cycle through token {i}")
                seen.add(node)
                node = self.heads[node]

    def __len__(self) -> int:
        return len(self.heads)

    def _check(self, i: int) -> None:
        if not 0 <= i < len(self.heads):
            raise DataError(f"tree: token index {i} out of bounds for {len(self.heads)} tokens")

    def parent(self, i: int) -> int:
        self._check(i)
        return self.heads[i]

    def siblings(self, i: int) -> list[int]:
        self._check(i)
        h = self.heads[i]
        return [j for j, hj in enumerate(self.heads) if hj == h and j != i]

    def children(self, i: int) -> list[int]:
        self._check(i)
        return [j for j, hj in enumerate(self.heads) if hj == i]


@dataclass(frozen=True)
class SubtreeConfig:
    comparator: str = "form"
    metric: str = "avg"

    def __post_init__(self):
        if self.comparator not in COMPARATORS:
            raise ValueError(f"comparator must be one of {COMPARATORS}")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")


@dataclass(frozen=True)
class SubtreeScore:
    s_parent: float
    s_sibling: float
    s_child: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.s_parent, self.s_sibling, self.s_child)


class EmbeddingTable:
    """Word vectors with a reserved all-zero row 0 for out-of-vocabulary words.

    Lookup tries the exact form first, then its case-folded form.
    """

    def __init__(self, words: Sequence[str], vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2 or vectors.shape[0] != len(words):
            raise DataError(f"embeddings: {len(words)} words but vectors of shape {vectors.shape}")
        self.dim = vectors.shape[1]
        self.words = list(words)
        self.matrix = np.vstack([np.zeros((1, self.dim), dtype=np.float32), vectors])
        self._ids = {}
        for i, w in enumerate(self.words, start=1):
            self._ids.setdefault(w, i)

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, form: str) -> bool:
        return self.index(form) != 0

    def index(self, form: str) -> int:
        i = self._ids.get(form)
        if i is None:
            i = self._ids.get(form.casefold(), 0)
        return i

    def indices(self, forms: Iterable[str]) -> np.ndarray:
        return np.array([self.index(f) for f in forms], dtype=np.int64)

    def vector(self, form: str) -> np.ndarray:
        return self.matrix[self.index(form)]

    @classmethod
    def random(cls, vocab: Iterable[str], dim: int, seed: int, scale: float = 0.5) -> "EmbeddingTable":
        words = sorted(set(vocab))
        rng = np.random.default_rng(seed)
        return cls(words, rng.uniform(-scale, scale, size=(len(words), dim)))


def load_embeddings(path: str | Path) -> EmbeddingTable:
    """Text format: ``V dim`` header, then ``word v1 ... v_dim`` per line."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise DataError(f"{path}:1: expected 'V dim' header")
        n, dim = int(header[0]), int(header[1])
        words, rows = [], []
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(" ")
            if not line.strip():
                continue
            if len(parts) != dim + 1:
                raise DataError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            words.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    if len(words) != n:
        raise DataError(f"{path}: header says {n} words, found {len(words)}")
    return EmbeddingTable(words, np.array(rows, dtype=np.float32).reshape(n, dim))


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table.words)} {table.dim}\n")
        for i, w in enumerate(table.words, start=1):
            fh.write(w + " " + " ".join(repr(float(x)) for x in table.matrix[i]) + "\n")


# ---------------------------------------------------------------- subtree matching

def _lowered(seq) -> list[str]:
    return [t.lower if isinstance(t, Token) else t.casefold() for t in seq]


def cooccurring(q, a) -> list[tuple[int, int, str]]:
    """Shared lowered types as ``(q_index, a_index, form)``, first occurrences, in question order."""
    ql, al = _lowered(q), _lowered(a)
    first_a: dict[str, int] = {}
    for j, w in enumerate(al):
        first_a.setdefault(w, j)
    out, seen = [], set()
    for i, w in enumerate(ql):
        if w in first_a and w not in seen:
            seen.add(w)
            out.append((i, first_a[w], w))
    return out


def _reduce(values: list[float], metric: str) -> float:
    if not values:
        return 0.0
    if metric == "sum":
        return float(sum(values))
    if metric == "avg":
        return float(sum(values) / len(values))
    return float(max(values))


def _cos(x: np.ndarray, y: np.ndarray) -> float:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        return 0.0
    return float(np.dot(x, y) / (nx * ny))


def subtree_match(
    dq: DependencyTree,
    da: DependencyTree,
    shared: Sequence[tuple[int, int, str]],
    config: SubtreeConfig,
    emb: EmbeddingTable | None = None,
) -> SubtreeScore:
    if config.comparator == "embedding" and emb is None:
        raise ValueError("subtree_match: embedding comparator needs an EmbeddingTable")

    if config.comparator == "form":
        def compare(x: str, y: str) -> float:
            return 1.0 if x.casefold() == y.casefold() else 0.0
    else:
        def compare(x: str, y: str) -> float:
            return _cos(emb.vector(x), emb.vector(y))

    def compare_parent(pq: int, pa: int) -> float:
        if pq == ROOT or pa == ROOT:
            # virtual ROOT only matches itself
            return 1.0 if pq == pa else 0.0
        return compare(dq.forms[pq], da.forms[pa])

    s = [0.0, 0.0, 0.0]
    for qi, ai, _ in shared:
        s[0] += compare_parent(dq.parent(qi), da.parent(ai))
        vals = [compare(dq.forms[x], da.forms[y]) for x in dq.siblings(qi) for y in da.siblings(ai)]
        s[1] += _reduce(vals, config.metric)
        vals = [compare(dq.forms[x], da.forms[y]) for x in dq.children(qi) for y in da.children(ai)]
        s[2] += _reduce(vals, config.metric)
    return SubtreeScore(*s)


def sentence_subtree(q_tree: DependencyTree, a_tree: DependencyTree, config: SubtreeConfig, emb=None) -> SubtreeScore:
    return subtree_match(q_tree, a_tree, cooccurring(q_tree.forms, a_tree.forms), config, emb)


# ---------------------------------------------------------------- lexical features

class IdfTable:
    """``idf(w) = ln((N_s + 1) / (df(w) + 1)) + 1`` with sentences as documents."""

    def __init__(self, n_docs: int, df: Mapping[str, int]):
        self.n_docs = n_docs
        self.df = dict(df)

    def __call__(self, word: str) -> float:
        return math.log((self.n_docs + 1) / (self.df.get(word, 0) + 1)) + 1.0

    def to_dict(self) -> dict:
        return {"n_docs": self.n_docs, "df": dict(sorted(self.df.items()))}

    @classmethod
    def from_dict(cls, d: Mapping) -> "IdfTable":
        return cls(int(d["n_docs"]), d["df"])


def build_idf(sentences: Iterable[Sentence | Sequence[Token | str]]) -> IdfTable:
    df: Counter = Counter()
    n = 0
    for s in sentences:
        toks = s.tokens if isinstance(s, Sentence) else s
        df.update(set(_lowered(toks)))
        n += 1
    if n == 0:
        raise DataError("build_idf: empty corpus")
    return IdfTable(n, df)


def lexical_features(q: Sequence[Token], a: Sequence[Token], idf: IdfTable) -> tuple[float, float, float]:
    """(shared type count, shared IDF mass / question IDF mass, question length).

    Punctuation types are ignored in the overlap terms.
    """
    q_types = {w for w in _lowered(q) if not is_punctuation(w)}
    a_types = {w for w in _lowered(a) if not is_punctuation(w)}
    shared = q_types & a_types
    denom = sum(idf(w) for w in sorted(q_types))
    num = sum(idf(w) for w in sorted(shared))
    return float(len(shared)), (num / denom if denom > 0 else 0.0), float(len(q))


def feature_vector(
    cnn_score: float,
    q: Sequence[Token],
    a: Sequence[Token],
    idf: IdfTable,
    subtree: SubtreeScore | None = None,
) -> np.ndarray:
    count, ratio, q_len = lexical_features(q, a, idf)
    dep = subtree.as_tuple() if subtree is not None else (0.0, 0.0, 0.0)
    return np.array([cnn_score, count, ratio, q_len, *dep], dtype=np.float64)


# ---------------------------------------------------------------- parse files

def read_parses(path: str | Path) -> dict[str | tuple[str, int], DependencyTree]:
    """Blocks of ``# section_id sent_index`` (or ``# question_id``) followed by
    ``index<TAB>form<TAB>head`` lines with head -1 for the root."""
    trees: dict = {}
    key = None
    forms: list[str] = []
    heads: list[int] = []

    def flush(lineno):
        nonlocal key, forms, heads
        if key is not None:
            if key in trees:
                raise DataError(f"{path}:{lineno}: duplicate parse for {key}")
            try:
                trees[key] = DependencyTree(tuple(forms), tuple(heads))
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
        key, forms, heads = None, [], []

    with open(path, encoding="utf-8") as fh:
        lineno = 0
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                flush(lineno)
                continue
            if line.startswith("#"):
                flush(lineno)
                fields = line[1:].split()
                if len(fields) == 2:
                    key = (fields[0], int(fields[1]))
                elif len(fields) == 1:
                    key = fields[0]
                else:
                    raise DataError(f"{path}:{lineno}: bad block header {line!r}")
                continue
            if key is None:
                raise DataError(f"{path}:{lineno}: token line outside a block")
            cols = line.split("\t")
            if len(cols) != 3:
                raise DataError(f"{path}:{lineno}: expected index<TAB>form<TAB>head")
            idx, form, head = int(cols[0]), cols[1], int(cols[2])
            if idx != len(forms):
                raise DataError(f"{path}:{lineno}: token index {idx} out of order")
            forms.append(form)
            heads.append(head)
        flush(lineno + 1)
    return trees


def write_parses(trees: Mapping, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, tree in trees.items():
            header = f"{key[0]} {key[1]}" if isinstance(key, tuple) else str(key)
            fh.write(f"# {header}\n")
            for i, (form, head) in enumerate(zip(tree.forms, tree.heads)):
                fh.write(f"{i}\t{form}\t{head}\n")
            fh.write("\n")


def attach_parses(dataset: Dataset, trees: Mapping) -> int:
    """Attach trees to questions and sentences; returns how many were attached.

    A tree must have exactly as many tokens as the tokenized text it belongs to.
    """
    attached = 0
    for q in dataset.questions:
        tree = trees.get(q.id)
        if tree is not None:
            if len(tree) != len(q.tokens):
                raise DataError(f"parse for question {q.id}: {len(tree)} tokens, text has {len(q.tokens)}")
            q.tree = tree
            attached += 1
    for section in dataset.sections.values():
        for sent in section.sentences:
            tree = trees.get((section.section_id, sent.sent_index))
            if tree is not None:
                if len(tree) != len(sent.tokens):
                    raise DataError(
                        f"parse for ({section.section_id}, {sent.sent_index}): "
                        f"{len(tree)} tokens, sentence has {len(sent.tokens)}"
                    )
                sent.tree = tree
                attached += 1
    return attached
