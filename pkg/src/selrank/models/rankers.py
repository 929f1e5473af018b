"""Trainable rankers, their training loops and checkpoint round-trips.

``cnn``          CNN pair scorer, then logistic regression over
                 [cnn score, overlap count, IDF-weighted overlap, question length].
``cnn-subtree``  same, plus the three dependency subtree-matching features.
``oneway``       BiGRU encoder with one-way attention from the last question state.
``ap``           BiGRU encoder with attentive pooling.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from ..corpus import Candidate, Dataset, Question, Section, Sentence
from ..errors import DataError
from ..evaluation import encode_threshold
from ..features import (
    EmbeddingTable,
    IdfTable,
    SubtreeConfig,
    build_idf,
    feature_vector,
    sentence_subtree,
)
from ..tensor import (
    CHECKPOINT_VERSION,
    Rmsprop,
    Tensor,
    backward,
    load_checkpoint,
    no_grad,
    save_checkpoint,
)
from ..tensor import ops
from .cnn import CnnConfig, cnn_logit, image_ids, init_cnn_params
from .lr import LrModel, lr_predict, lr_train
from .rnn import GruConfig, ap_score, encode, hinge_loss, init_gru_params, oneway_score

log = logging.getLogger(__name__)

MODEL_KINDS = ("cnn", "cnn-subtree", "oneway", "ap")
CNN_KINDS = ("cnn", "cnn-subtree")
ATTENTION_KINDS = ("oneway", "ap")


@dataclass
class TrainConfig:
    seed: int
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    decay: float = 0.9
    eps: float = 1e-8
    negatives_per_positive: int | None = None
    threshold: float | None = None
    lr_l2: float = 1e-2

    def __post_init__(self):
        if self.seed is None:
            raise ValueError("TrainConfig.seed is mandatory")
        for name in ("epochs", "batch_size", "lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"TrainConfig.{name} must be positive")
        if self.negatives_per_positive is not None and self.negatives_per_positive <= 0:
            raise ValueError("TrainConfig.negatives_per_positive must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Prediction:
    question_id: str
    scored: list[tuple[Candidate, float]]
    decision: Candidate | None


def rank_order(scored: Sequence[tuple[Candidate, float]]) -> list[tuple[Candidate, float]]:
    """Descending score, ties by ascending (section_id, sent_index)."""
    return sorted(scored, key=lambda cs: (-cs[1], cs[0].section_id, cs[0].sent_index))


class Ranker:
    kind: str
    threshold: float
    emb: EmbeddingTable
    history: list[float]

    def score(self, question: Question, sentences: Sequence[Sentence]) -> np.ndarray:
        raise NotImplementedError

    def arrays(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def meta(self) -> dict:
        raise NotImplementedError


def predict_run(model: Ranker, question: Question, candidates: Sequence[Candidate], sections: Mapping[str, Section]) -> Prediction:
    """Score every candidate; fire on the top one only if its score beats the threshold."""
    sentences = [sections[c.section_id].sentences[c.sent_index] for c in candidates]
    scores = model.score(question, sentences) if candidates else np.zeros(0)
    scored = [(c, float(s)) for c, s in zip(candidates, scores)]
    decision = None
    if scored:
        top, top_score = rank_order(scored)[0]
        if top_score > model.threshold:
            decision = top
    return Prediction(question.id, scored, decision)


def _token_ids(emb: EmbeddingTable, tokens) -> np.ndarray:
    return emb.indices([t.form for t in tokens])


# ---------------------------------------------------------------- CNN + LR

def cnn_batch_loss(params: Mapping[str, Tensor], emb: Tensor, batch: Sequence[tuple[np.ndarray, float]], config: CnnConfig) -> Tensor:
    """Mean binary cross-entropy over ``(image_ids, label)`` pairs."""
    logits = ops.stack([cnn_logit(ids, emb, params, config) for ids, _ in batch])
    return ops.mean(ops.bce_with_logits(logits, np.array([y for _, y in batch])))


class CnnRanker(Ranker):
    def __init__(
        self,
        kind: str,
        config: CnnConfig,
        emb: EmbeddingTable,
        params: Mapping[str, np.ndarray],
        subtree: SubtreeConfig | None = None,
        idf: IdfTable | None = None,
        lr_model: LrModel | None = None,
        threshold: float = 0.5,
    ):
        if kind not in CNN_KINDS:
            raise ValueError(f"CnnRanker kind must be one of {CNN_KINDS}")
        if emb.dim != config.emb_dim:
            raise DataError(f"embedding dim {emb.dim} does not match config emb_dim {config.emb_dim}")
        self.kind = kind
        self.config = config
        self.emb = emb
        self.params = {k: Tensor(np.asarray(v, dtype=np.float32), requires_grad=True, name=k) for k, v in params.items()}
        self.subtree = subtree if kind == "cnn-subtree" else None
        if kind == "cnn-subtree" and self.subtree is None:
            self.subtree = SubtreeConfig()
        self.idf = idf
        self.lr_model = lr_model
        self.threshold = threshold
        self.history: list[float] = []

    def embedding_tensor(self) -> Tensor:
        # a copy, so training never writes into the caller's table
        return Tensor(self.emb.matrix.copy(), requires_grad=self.config.trainable_embeddings, name="emb")

    def cnn_scores(self, question: Question, sentences: Sequence[Sentence]) -> np.ndarray:
        q_ids = _token_ids(self.emb, question.tokens)
        emb = Tensor(self.emb.matrix)
        out = np.empty(len(sentences))
        with no_grad():
            for i, s in enumerate(sentences):
                ids = image_ids(q_ids, _token_ids(self.emb, s.tokens), self.config.max_len)
                out[i] = float(ops.sigmoid(cnn_logit(ids, emb, self.params, self.config)).data)
        return out

    def features(self, question: Question, sentences: Sequence[Sentence], cnn_scores: np.ndarray) -> np.ndarray:
        rows = []
        for s, c in zip(sentences, cnn_scores):
            dep = None
            if self.subtree is not None:
                if question.tree is None:
                    raise DataError(f"cnn-subtree: question {question.id} has no dependency parse")
                if s.tree is None:
                    raise DataError(f"cnn-subtree: sentence ({s.section_id}, {s.sent_index}) has no dependency parse")
                dep = sentence_subtree(question.tree, s.tree, self.subtree, self.emb)
            rows.append(feature_vector(c, question.tokens, s.tokens, self.idf, dep))
        return np.array(rows).reshape(len(rows), 7)

    def score(self, question: Question, sentences: Sequence[Sentence]) -> np.ndarray:
        cnn = self.cnn_scores(question, sentences)
        if self.lr_model is None:
            return cnn
        return lr_predict(self.lr_model, self.features(question, sentences, cnn))

    def fit_lr(self, dataset: Dataset, l2: float) -> None:
        seen, sents = set(), []
        for q in dataset.questions:
            for c in dataset.candidates[q.id]:
                if (c.section_id, c.sent_index) not in seen:
                    seen.add((c.section_id, c.sent_index))
                    sents.append(dataset.sentence(c))
        self.idf = build_idf(sents)
        X, y = [], []
        for q in dataset.questions:
            cands = dataset.candidates[q.id]
            sentences = [dataset.sentence(c) for c in cands]
            X.append(self.features(q, sentences, self.cnn_scores(q, sentences)))
            y.extend(c.label for c in cands)
        self.lr_model = lr_train(np.vstack(X), np.array(y), l2=l2)

    def arrays(self) -> dict[str, np.ndarray]:
        out = {k: t.data for k, t in self.params.items()}
        out["emb"] = self.emb.matrix
        return out

    def meta(self) -> dict:
        return {
            "kind": self.kind,
            "cnn_config": self.config.to_dict(),
            "subtree": asdict(self.subtree) if self.subtree else None,
            "idf": self.idf.to_dict() if self.idf else None,
            "lr": self.lr_model.to_dict() if self.lr_model else None,
            "threshold": encode_threshold(self.threshold),
            "vocab": self.emb.words,
        }


def cnn_pairs(dataset: Dataset, emb: EmbeddingTable, config: CnnConfig, negatives_per_positive, rng) -> list[tuple[np.ndarray, float]]:
    pairs = []
    for q in dataset.questions:
        q_ids = _token_ids(emb, q.tokens)
        cands = dataset.candidates[q.id]
        pos = [c for c in cands if c.label == 1]
        neg = [c for c in cands if c.label == 0]
        if negatives_per_positive is not None and pos:
            k = min(len(neg), negatives_per_positive * len(pos))
            neg = [neg[i] for i in sorted(rng.choice(len(neg), size=k, replace=False))]
        for c in pos + neg:
            ids = image_ids(q_ids, _token_ids(emb, dataset.sentence(c).tokens), config.max_len)
            pairs.append((ids, float(c.label)))
    return pairs


def train_cnn(
    dataset: Dataset,
    config: CnnConfig,
    train_config: TrainConfig,
    emb: EmbeddingTable,
    kind: str = "cnn",
    subtree: SubtreeConfig | None = None,
) -> CnnRanker:
    if dataset.task == "ASS":
        missing = [q.id for q in dataset.questions if not dataset.answerable(q.id)]
        if missing:
            raise DataError(f"train_cnn: questions without a positive candidate: {missing}")
    rng = np.random.default_rng(train_config.seed)
    model = CnnRanker(kind, config, emb, init_cnn_params(config, rng), subtree)
    pairs = cnn_pairs(dataset, emb, config, train_config.negatives_per_positive, rng)
    if not pairs:
        raise DataError("train_cnn: no training pairs")

    emb_t = model.embedding_tensor()
    trainable = dict(model.params)
    masks = None
    if config.trainable_embeddings:
        trainable["emb"] = emb_t
        masks = {"emb": np.ones_like(emb_t.data)}
        masks["emb"][0] = 0.0  # OOV / padding row stays zero
    opt = Rmsprop(trainable, lr=train_config.lr, decay=train_config.decay, eps=train_config.eps, l2=0.0, exempt={"emb"})

    with no_grad():
        model.history.append(float(cnn_batch_loss(model.params, emb_t, pairs, config).data))
    bs = train_config.batch_size
    for epoch in range(train_config.epochs):
        order = rng.permutation(len(pairs))
        total = 0.0
        for start in range(0, len(pairs), bs):
            batch = [pairs[i] for i in order[start : start + bs]]
            opt.zero_grad()
            loss = cnn_batch_loss(model.params, emb_t, batch, config)
            backward(loss)
            opt.step(masks)
            total += float(loss.data) * len(batch)
        model.history.append(total / len(pairs))
        log.info("cnn epoch %d loss %.5f", epoch + 1, model.history[-1])
    if config.trainable_embeddings:
        model.emb = EmbeddingTable(emb.words, emb_t.data[1:].copy())
    model.fit_lr(dataset, train_config.lr_l2)
    return model


# ---------------------------------------------------------------- attention GRU

def pair_score(variant: str, Q: Tensor, A: Tensor, U: Tensor, pooling: str = "max") -> Tensor:
    if variant == "ap":
        return ap_score(Q, A, U, pooling)
    return oneway_score(Q[Q.shape[0] - 1], A, U)


def attention_batch_loss(
    params: Mapping[str, Tensor],
    emb: Tensor,
    batch: Sequence[tuple[np.ndarray, list[np.ndarray], list[tuple[int, int]]]],
    variant: str,
    config: GruConfig,
) -> Tensor:
    """Mean pairwise hinge loss.

    Each batch item is ``(question_ids, candidate_ids_list, [(pos, neg), ...])``
    where the pairs index into the candidate list.
    """
    losses = []
    for q_ids, cand_ids, triples in batch:
        Q = encode(q_ids, emb, params, config.h)
        cache: dict[int, Tensor] = {}

        def s(i):
            if i not in cache:
                cache[i] = pair_score(variant, Q, encode(cand_ids[i], emb, params, config.h), params["att.U"], config.pooling)
            return cache[i]

        for p, n in triples:
            losses.append(hinge_loss(s(p), s(n), config.margin))
    return ops.mean(ops.stack(losses))


class AttentionRanker(Ranker):
    def __init__(self, variant: str, config: GruConfig, emb: EmbeddingTable, params: Mapping[str, np.ndarray], threshold: float = 0.0):
        if variant not in ATTENTION_KINDS:
            raise ValueError(f"AttentionRanker variant must be one of {ATTENTION_KINDS}")
        if emb.dim != config.emb_dim:
            raise DataError(f"embedding dim {emb.dim} does not match config emb_dim {config.emb_dim}")
        self.kind = variant
        self.config = config
        self.emb = emb
        self.params = {k: Tensor(np.asarray(v, dtype=np.float32), requires_grad=True, name=k) for k, v in params.items()}
        self.threshold = threshold
        self.history: list[float] = []

    def score(self, question: Question, sentences: Sequence[Sentence]) -> np.ndarray:
        emb = Tensor(self.emb.matrix)
        out = np.empty(len(sentences))
        with no_grad():
            Q = encode(_token_ids(self.emb, question.tokens), emb, self.params, self.config.h)
            for i, s in enumerate(sentences):
                A = encode(_token_ids(self.emb, s.tokens), emb, self.params, self.config.h)
                out[i] = float(pair_score(self.kind, Q, A, self.params["att.U"], self.config.pooling).data)
        return out

    def arrays(self) -> dict[str, np.ndarray]:
        out = {k: t.data for k, t in self.params.items()}
        out["emb"] = self.emb.matrix
        return out

    def meta(self) -> dict:
        return {"kind": self.kind, "gru_config": self.config.to_dict(), "threshold": encode_threshold(self.threshold), "vocab": self.emb.words}


def attention_examples(dataset: Dataset, emb: EmbeddingTable) -> list[tuple[Question, np.ndarray, list[np.ndarray], list[int], list[int]]]:
    out = []
    for q in dataset.questions:
        cands = dataset.candidates[q.id]
        pos = [i for i, c in enumerate(cands) if c.label == 1]
        neg = [i for i, c in enumerate(cands) if c.label == 0]
        if not pos or not neg:
            log.warning("question %s skipped: needs at least one positive and one negative candidate", q.id)
            continue
        ids = [_token_ids(emb, dataset.sentence(c).tokens) for c in cands]
        out.append((q, _token_ids(emb, q.tokens), ids, pos, neg))
    return out


def sample_triples(pos: list[int], neg: list[int], k: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    triples = []
    for p in pos:
        picks = rng.choice(len(neg), size=min(k, len(neg)), replace=False)
        triples.extend((p, neg[j]) for j in picks)
    return triples


def train_attention(
    dataset: Dataset,
    variant: str,
    config: GruConfig,
    train_config: TrainConfig,
    emb: EmbeddingTable,
    on_epoch: Callable[[AttentionRanker, int], None] | None = None,
) -> AttentionRanker:
    """Pairwise hinge training. ``on_epoch(model, epoch)`` runs after each epoch
    (epochs counted from 1), e.g. to track dev metrics."""
    rng = np.random.default_rng(train_config.seed)
    model = AttentionRanker(variant, config, emb, init_gru_params(config, rng))
    examples = attention_examples(dataset, emb)
    if not examples:
        raise DataError("train_attention: no question has both positive and negative candidates")
    k = train_config.negatives_per_positive or 5
    emb_t = Tensor(emb.matrix)
    opt = Rmsprop(model.params, lr=train_config.lr, decay=train_config.decay, eps=train_config.eps, l2=config.l2)
    bs = train_config.batch_size
    for epoch in range(train_config.epochs):
        order = rng.permutation(len(examples))
        total, n = 0.0, 0
        for start in range(0, len(examples), bs):
            batch = []
            for i in order[start : start + bs]:
                _, q_ids, cand_ids, pos, neg = examples[i]
                batch.append((q_ids, cand_ids, sample_triples(pos, neg, k, rng)))
            opt.zero_grad()
            loss = attention_batch_loss(model.params, emb_t, batch, variant, config)
            backward(loss)
            opt.step()
            total += float(loss.data)
            n += 1
        model.history.append(total / n)
        log.info("%s epoch %d loss %.5f", variant, epoch + 1, model.history[-1])
        if on_epoch is not None:
            on_epoch(model, epoch + 1)
    return model


# ---------------------------------------------------------------- dispatch / persistence

def train_model(
    kind: str,
    dataset: Dataset,
    emb: EmbeddingTable,
    train_config: TrainConfig,
    cnn_config: CnnConfig | None = None,
    gru_config: GruConfig | None = None,
    subtree: SubtreeConfig | None = None,
    on_epoch: Callable[[Ranker, int], None] | None = None,
) -> Ranker:
    """Train any ranker kind. ``on_epoch`` is only honored by the attention kinds,
    whose score is complete after every epoch."""
    if kind in CNN_KINDS:
        model = train_cnn(dataset, cnn_config or CnnConfig(emb_dim=emb.dim), train_config, emb, kind, subtree)
    elif kind in ATTENTION_KINDS:
        model = train_attention(dataset, kind, gru_config or GruConfig(emb_dim=emb.dim), train_config, emb, on_epoch)
    else:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    if train_config.threshold is not None:
        model.threshold = train_config.threshold
    return model


def save_model(model: Ranker, path: str | Path, extra: Mapping | None = None) -> None:
    meta = dict(model.meta())
    meta["format_version"] = CHECKPOINT_VERSION
    if extra:
        meta.update(extra)
    save_checkpoint(path, model.arrays(), meta)


def load_model(path: str | Path) -> Ranker:
    arrays, meta = load_checkpoint(path)
    emb_matrix = arrays.pop("emb")
    emb = EmbeddingTable(meta["vocab"], emb_matrix[1:])
    kind = meta.get("kind")
    if kind in CNN_KINDS:
        cfg = CnnConfig(**meta["cnn_config"])
        model = CnnRanker(
            kind,
            cfg,
            emb,
            arrays,
            SubtreeConfig(**meta["subtree"]) if meta.get("subtree") else None,
            IdfTable.from_dict(meta["idf"]) if meta.get("idf") else None,
            LrModel.from_dict(meta["lr"]) if meta.get("lr") else None,
            float(meta["threshold"]),
        )
    elif kind in ATTENTION_KINDS:
        model = AttentionRanker(kind, GruConfig(**meta["gru_config"]), emb, arrays, float(meta["threshold"]))
    else:
        raise DataError(f"{path}: unknown model kind {kind!r}")
    model.checkpoint_meta = meta
    return model
