"""Seeded synthetic corpora for smoke runs and learning-sanity checks.

Every question gets its own section. One sentence of that section (the answer)
contains a "key" word planted in the question; the other sentences are filler
and, with probability ``distractor_rate``, carry a different key word so that
a ranker has to match keys rather than just spot one. Question fillers and
sentence fillers come from disjoint vocabularies, so the key is the only word
a question can share with its answer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import TOPICS, Candidate, Dataset, Question, Section, Sentence, classify_qtype, tokenize
from .features import DependencyTree, EmbeddingTable

WH = ("what", "how", "who", "when", "where", "why", "name")


@dataclass
class SyntheticCorpus:
    sections: dict[str, Section]
    dataset: Dataset
    trees: dict
    vocab: list[str]

    def embeddings(self, dim: int, seed: int, key_shift: float = 0.0) -> EmbeddingTable:
        """Uniform random vectors; key words additionally share a common offset
        of norm ``key_shift`` so they form a loose cluster, like content words."""
        table = EmbeddingTable.random(self.vocab, dim, seed)
        if key_shift:
            direction = np.random.default_rng(seed + 1).normal(size=dim)
            direction *= key_shift / np.linalg.norm(direction)
            for i, w in enumerate(table.words):
                if w.startswith("k"):
                    table.matrix[i + 1] += direction
        return table


def random_tree(forms: list[str], rng: np.random.Generator) -> DependencyTree:
    order = rng.permutation(len(forms))
    heads = [0] * len(forms)
    heads[order[0]] = -1
    for pos in range(1, len(order)):
        heads[order[pos]] = int(order[rng.integers(0, pos)])
    return DependencyTree(tuple(forms), tuple(heads))


def make_corpus(
    n_questions: int = 50,
    seed: int = 0,
    sentences_per_section: tuple[int, int] = (4, 8),
    n_fillers: int = 120,
    n_keys: int = 20,
    distractor_rate: float = 0.0,
    n_extra_sections: int = 10,
    splits: tuple[float, float] = (0.6, 0.2),
    sentence_fillers: tuple[int, int] = (2, 4),
    question_fillers: tuple[int, int] = (1, 3),
) -> SyntheticCorpus:
    rng = np.random.default_rng(seed)
    fillers = [f"w{i:03d}" for i in range(n_fillers)]
    q_fillers = [f"v{i:03d}" for i in range(n_fillers)]
    keys = [f"k{i:02d}" for i in range(n_keys)]

    def filler(span, vocab=fillers):
        n = int(rng.integers(span[0], span[1] + 1))
        return [vocab[i] for i in rng.integers(0, n_fillers, size=n)]

    sections: dict[str, Section] = {}
    trees: dict = {}
    questions: list[Question] = []
    candidates: dict[str, list[Candidate]] = {}
    n_trn = int(round(splits[0] * n_questions))
    n_dev = int(round(splits[1] * n_questions))

    def add_section(sid: str, topic: str, sentence_forms: list[list[str]]):
        sents = []
        for i, forms in enumerate(sentence_forms):
            raw = " ".join(forms) + " ."
            sent = Sentence(sid, i, raw, tokenize(raw))
            sents.append(sent)
            trees[(sid, i)] = random_tree([t.form for t in sent.tokens], rng)
        sections[sid] = Section(f"a{len(sections) // 3:03d}", sid, topic, f"title {sid}", sents)

    for qi in range(n_questions):
        topic = TOPICS[qi % len(TOPICS)]
        key = keys[int(rng.integers(0, n_keys))]
        n_sent = int(rng.integers(sentences_per_section[0], sentences_per_section[1] + 1))
        answer_at = int(rng.integers(0, n_sent))
        forms = []
        for j in range(n_sent):
            words = filler(sentence_fillers)
            if j == answer_at:
                words.insert(int(rng.integers(0, len(words) + 1)), key)
            elif rng.random() < distractor_rate:
                other = keys[int(rng.integers(0, n_keys))]
                if other != key:
                    words.insert(int(rng.integers(0, len(words) + 1)), other)
            forms.append(words)
        sid = f"s{qi:03d}"
        add_section(sid, topic, forms)

        wh = WH[qi % len(WH)]
        q_words = filler(question_fillers, q_fillers)
        q_words.insert(int(rng.integers(0, len(q_words) + 1)), key)
        raw = " ".join([wh.capitalize()] + q_words) + " ?"
        qid = f"q{qi:03d}"
        split = "TRN" if qi < n_trn else "DEV" if qi < n_trn + n_dev else "TST"
        tokens = tokenize(raw)
        questions.append(
            Question(qid, raw, tokens, topic, "original" if qi % 2 == 0 else "paraphrase", classify_qtype(tokens), split)
        )
        trees[qid] = random_tree([t.form for t in tokens], rng)
        candidates[qid] = [Candidate(qid, sid, j, int(j == answer_at)) for j in range(n_sent)]

    for ei in range(n_extra_sections):
        n_sent = int(rng.integers(sentences_per_section[0], sentences_per_section[1] + 1))
        forms = [filler(sentence_fillers) for _ in range(n_sent)]
        if rng.random() < 0.5:
            forms[0].append(keys[int(rng.integers(0, n_keys))])
        add_section(f"x{ei:03d}", TOPICS[ei % len(TOPICS)], forms)

    for q in questions:
        q.tree = trees[q.id]
    for s in sections.values():
        for sent in s.sentences:
            sent.tree = trees[(s.section_id, sent.sent_index)]

    vocab = sorted({t.lower for s in sections.values() for sent in s.sentences for t in sent.tokens}
                   | {t.lower for q in questions for t in q.tokens})
    question_sections = {sid: sections[sid] for sid in sections if sid.startswith("s")}
    dataset = Dataset("ASS", questions, candidates, question_sections)
    return SyntheticCorpus(sections, dataset, trees, vocab)


def write_fixtures(directory, n_questions: int = 50, seed: int = 0, dim: int = 32, key_shift: float = 2.0) -> dict[str, str]:
    """Write sections.jsonl, questions.jsonl, parses.txt and emb.txt for a
    synthetic corpus; returns the written paths by role."""
    from pathlib import Path

    from .corpus import write_dataset, write_sections
    from .features import save_embeddings, write_parses

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    corpus = make_corpus(n_questions, seed=seed)
    paths = {
        "sections": out / "sections.jsonl",
        "questions": out / "questions.jsonl",
        "parses": out / "parses.txt",
        "emb": out / "emb.txt",
    }
    write_sections(corpus.sections, paths["sections"])
    write_dataset(corpus.dataset, paths["questions"])
    write_parses(corpus.trees, paths["parses"])
    save_embeddings(corpus.embeddings(dim, seed, key_shift), paths["emb"])
    return {k: str(v) for k, v in paths.items()}
