import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from selrank.corpus import Candidate, Question, Section, Sentence, make_tokens
from selrank.errors import DataError
from selrank.evaluation import Scored, map_mrr
from selrank.features import EmbeddingTable
from selrank.models import (
    AttentionRanker,
    CnnConfig,
    GruConfig,
    LrModel,
    Ranker,
    TrainConfig,
    ap_score,
    cnn_forward,
    encode,
    hinge_loss,
    image_ids,
    init_cnn_params,
    init_gru_params,
    load_model,
    lr_predict,
    lr_train,
    oneway_score,
    predict_run,
    save_model,
    train_model,
)
from selrank.models.lr import objective
from selrank.synthetic import make_corpus
from selrank.tensor import Tensor

import oracles


def cnn_oracle(ids, emb, params, config):
    image = emb[ids]
    L = config.max_len
    q_parts, a_parts = [], []
    for h in config.filter_heights:
        w, b = params[f"conv{h}.w"], params[f"conv{h}.b"]
        rows = np.array([[np.sum(image[i : i + h] * w[k]) for k in range(len(w))] for i in range(2 * L - h + 1)])
        fmap = np.tanh(rows + b)
        q_parts.append(fmap[: L - h + 1].max(axis=0))
        a_parts.append(fmap[L:].max(axis=0))
    pooled = np.concatenate(q_parts + a_parts)
    hidden = np.tanh(pooled @ params["hidden.w"] + params["hidden.b"])
    return oracles.sigmoid(hidden @ params["out.w"] + params["out.b"][0])


def small_cnn(seed=0, max_len=6, dim=5):
    rng = np.random.default_rng(seed)
    config = CnnConfig(max_len=max_len, emb_dim=dim, filter_heights=(2, 3), filters_per_height=4, hidden_dim=3)
    params = {k: v.astype(np.float64) for k, v in init_cnn_params(config, rng).items()}
    for k in params:
        if k.endswith(".b"):
            params[k] = rng.normal(scale=0.1, size=params[k].shape)
    emb = rng.normal(size=(15, dim))
    emb[0] = 0.0
    return config, params, emb


def tiny_corpus(n=24, seed=0, dim=16):
    corpus = make_corpus(n, seed=seed)
    return corpus, corpus.embeddings(dim, seed, key_shift=2.0)


class TestCnn:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_forward_matches_oracle(self, seed):
        config, params, emb = small_cnn(seed)
        q, a = np.array([1, 4, 7]), np.array([2, 3, 5, 9, 11])
        got = cnn_forward(q, a, emb, params, config)
        want = cnn_oracle(image_ids(q, a, config.max_len), emb, params, config)
        assert got == pytest.approx(want, abs=1e-10)

    def test_image_layout(self):
        ids = image_ids(np.array([3, 4]), np.array([5, 6, 7, 8]), 3)
        np.testing.assert_array_equal(ids, [3, 4, 0, 5, 6, 7])

    def test_zero_embeddings_constant(self):
        config, params, emb = small_cnn()
        emb = np.zeros_like(emb)
        scores = {cnn_forward(np.array(q), np.array(a), emb, params, config) for q, a in [([1], [2]), ([3, 4, 5], [6, 7]), ([9] * 8, [1, 2, 3])]}
        assert len(scores) == 1

    def test_long_answer_truncated(self):
        rng = np.random.default_rng(4)
        config = CnnConfig(emb_dim=4, filters_per_height=3, hidden_dim=3)
        params = init_cnn_params(config, rng)
        emb = rng.normal(size=(60, 4))
        a = rng.integers(1, 60, size=45)
        q = np.array([1, 2, 3])
        assert cnn_forward(q, a, emb, params, config) == cnn_forward(q, a[:40], emb, params, config)
        assert len(image_ids(q, a, 40)) == 80

    def test_empty_input(self):
        with pytest.raises(DataError):
            image_ids(np.array([], dtype=int), np.array([1]), 4)

    def test_bad_filter_height(self):
        with pytest.raises(ValueError):
            CnnConfig(max_len=2, filter_heights=(3,))


class TestCnnTraining:
    def test_loss_decreases_on_one_question(self):
        corpus, emb = tiny_corpus()
        one = corpus.dataset.split("TRN")
        one = type(one)(one.task, one.questions[:1], {one.questions[0].id: one.candidates[one.questions[0].id]}, one.sections)
        cfg = CnnConfig(emb_dim=16, filters_per_height=6, hidden_dim=6)
        model = train_model("cnn", one, emb, TrainConfig(seed=0, epochs=15, batch_size=4, lr=1e-2), cnn_config=cfg)
        assert model.history[-1] < model.history[0]

    def test_trainable_embeddings_touch_only_seen_rows(self):
        corpus, _ = tiny_corpus()
        vocab = corpus.vocab + ["zz_unused_a", "zz_unused_b"]
        emb = EmbeddingTable.random(vocab, 8, 0)
        trn = corpus.dataset.split("TRN")
        cfg = CnnConfig(emb_dim=8, filters_per_height=3, hidden_dim=3, trainable_embeddings=True)
        model = train_model("cnn", trn, emb, TrainConfig(seed=0, epochs=2, batch_size=8, lr=1e-2), cnn_config=cfg)
        seen = {t.lower for q in trn.questions for c in trn.candidates[q.id] for t in trn.sentence(c).tokens}
        seen |= {t.lower for q in trn.questions for t in q.tokens}
        for w in ("zz_unused_a", "zz_unused_b"):
            np.testing.assert_array_equal(model.emb.vector(w), emb.vector(w))
        changed = [w for w in seen if w in emb and not np.array_equal(model.emb.vector(w), emb.vector(w))]
        assert changed
        assert np.all(model.emb.matrix[0] == 0)

    def test_subtree_requires_parses(self):
        corpus, emb = tiny_corpus()
        trn = corpus.dataset.split("TRN")
        trn.questions[0].tree = None
        with pytest.raises(DataError, match="parse"):
            train_model("cnn-subtree", trn, emb, TrainConfig(seed=0, epochs=1), cnn_config=CnnConfig(emb_dim=16, filters_per_height=2, hidden_dim=2))

    def test_unknown_kind(self):
        corpus, emb = tiny_corpus()
        with pytest.raises(ValueError):
            train_model("svm", corpus.dataset, emb, TrainConfig(seed=0))

    def test_seed_is_mandatory(self):
        with pytest.raises(ValueError):
            TrainConfig(seed=None)


class TestLogisticRegression:
    def test_zero_model(self):
        np.testing.assert_allclose(lr_predict(LrModel.zeros(), np.random.default_rng(0).normal(size=(4, 7))), 0.5)

    def test_separable(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(40, 7))
        y = (X[:, 0] + 0.5 * X[:, 3] > 0).astype(float)
        model = lr_train(X, y, l2=1e-3)
        assert np.mean((lr_predict(model, X) > 0.5) == y) == 1.0

    def test_matches_generic_optimizer(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(20, 7)) * [1, 5, 0.1, 3, 1, 1, 2] + [0, 2, 0, 7, 0, 0, 0]
        y = (X[:, 0] + rng.normal(size=20) > 0).astype(float)
        model = lr_train(X, y, l2=1e-2)
        Z = (X - X.mean(0)) / X.std(0)

        def loss(theta):
            z = Z @ theta[:-1] + theta[-1]
            return np.mean(np.logaddexp(0, z) - y * z) + 0.005 * theta[:-1] @ theta[:-1]

        theta = minimize(loss, np.zeros(8), method="BFGS", options={"gtol": 1e-10}).x
        want = oracles.sigmoid(Z @ theta[:-1] + theta[-1])
        np.testing.assert_allclose(lr_predict(model, X), want, atol=1e-3)

    def test_objective_gradient(self):
        rng = np.random.default_rng(3)
        Z, y, theta = rng.normal(size=(10, 3)), rng.integers(0, 2, 10).astype(float), rng.normal(size=4)
        _, g = objective(theta, Z, y, 0.1)
        num = np.array([(objective(theta + e, Z, y, 0.1)[0] - objective(theta - e, Z, y, 0.1)[0]) / 2e-6 for e in np.eye(4) * 1e-6])
        np.testing.assert_allclose(g, num, atol=1e-7)

    def test_constant_column(self):
        X = np.hstack([np.random.default_rng(0).normal(size=(10, 1)), np.ones((10, 1))])
        model = lr_train(X, (X[:, 0] > 0).astype(float))
        assert model.std[1] == 1.0 and np.all(np.isfinite(model.weights))

    def test_single_class_rejected(self):
        with pytest.raises(DataError):
            lr_train(np.ones((3, 7)), np.zeros(3))

    def test_dict_round_trip(self):
        m = LrModel(np.arange(7.0), -0.5, np.ones(7), np.full(7, 2.0))
        back = LrModel.from_dict(m.to_dict())
        np.testing.assert_array_equal(back.weights, m.weights)
        assert back.bias == m.bias


def gru_params(seed, e=3, h=2):
    rng = np.random.default_rng(seed)
    p = {k: v.astype(np.float64) for k, v in init_gru_params(GruConfig(h=h, emb_dim=e), rng).items()}
    for d in ("fw", "bw"):
        p[f"{d}.b"] = rng.normal(scale=0.2, size=3 * h)
    emb = rng.normal(size=(10, e))
    emb[0] = 0
    return p, emb


class TestGru:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_encode_matches_oracle(self, seed):
        p, emb = gru_params(seed)
        ids = np.array([3, 1, 4, 1, 5])
        got = encode(ids, Tensor(emb), {k: Tensor(v) for k, v in p.items()}, 2).data
        X = emb[ids]
        fw = oracles.gru(X, p["fw.W"], p["fw.U"], p["fw.b"], 2)
        bw = oracles.gru(X, p["bw.W"], p["bw.U"], p["bw.b"], 2, reverse=True)
        np.testing.assert_allclose(got, np.hstack([fw, bw]), atol=1e-12)

    def test_zero_weights_zero_output(self):
        p, emb = gru_params(0)
        p = {k: np.zeros_like(v) for k, v in p.items()}
        out = encode(np.array([1, 2, 3]), Tensor(emb), {k: Tensor(v) for k, v in p.items()}, 2).data
        np.testing.assert_array_equal(out, 0.0)

    def test_single_token_shape(self):
        p, emb = gru_params(0)
        out = encode(np.array([7]), Tensor(emb), {k: Tensor(v) for k, v in p.items()}, 2)
        assert out.shape == (1, 4)

    def test_empty_rejected(self):
        p, emb = gru_params(0)
        with pytest.raises(DataError):
            encode(np.array([], dtype=int), Tensor(emb), {k: Tensor(v) for k, v in p.items()}, 2)

    def test_orthogonal_init_blocks(self):
        p = init_gru_params(GruConfig(h=4, emb_dim=4), np.random.default_rng(0))
        for i in range(3):
            blk = p["fw.U"][:, 4 * i : 4 * (i + 1)].astype(np.float64)
            np.testing.assert_allclose(blk.T @ blk, np.eye(4), atol=1e-5)


class TestAttentionScores:
    def test_ap_matches_oracle(self):
        rng = np.random.default_rng(0)
        Q, A, U = rng.normal(size=(3, 4)), rng.normal(size=(5, 4)), rng.normal(size=(4, 4))
        H = np.tanh(Q @ U @ A.T)
        rq, ra = Q.T @ oracles.softmax(H.max(axis=1)), A.T @ oracles.softmax(H.max(axis=0))
        assert ap_score(Q, A, U).item() == pytest.approx(oracles.cosine(rq, ra), abs=1e-12)

    def test_ap_avg_pooling(self):
        rng = np.random.default_rng(1)
        Q, A, U = rng.normal(size=(3, 4)), rng.normal(size=(2, 4)), rng.normal(size=(4, 4))
        H = np.tanh(Q @ U @ A.T)
        rq, ra = Q.T @ oracles.softmax(H.mean(axis=1)), A.T @ oracles.softmax(H.mean(axis=0))
        assert ap_score(Q, A, U, "avg").item() == pytest.approx(oracles.cosine(rq, ra), abs=1e-12)

    def test_oneway_matches_oracle(self):
        rng = np.random.default_rng(2)
        q, A, U = rng.normal(size=4), rng.normal(size=(6, 4)), rng.normal(size=(4, 4))
        ra = A.T @ oracles.softmax(np.tanh(A @ U @ q))
        assert oneway_score(q, A, U).item() == pytest.approx(oracles.cosine(q, ra), abs=1e-12)

    def test_identical_inputs(self):
        rng = np.random.default_rng(3)
        Q = rng.normal(size=(4, 4))
        assert ap_score(Q, Q, np.eye(4)).item() == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 10_000))
    def test_ap_symmetry(self, m, n, seed):
        rng = np.random.default_rng(seed)
        Q, A, U = rng.normal(size=(m, 3)), rng.normal(size=(n, 3)), rng.normal(size=(3, 3))
        s1 = ap_score(Q, A, U).item()
        assert s1 == pytest.approx(ap_score(A, Q, U.T).item(), abs=1e-6)
        assert -1 - 1e-9 <= s1 <= 1 + 1e-9

    def test_shape_errors(self):
        with pytest.raises(DataError):
            ap_score(np.ones((2, 3)), np.ones((2, 4)), np.eye(3))
        with pytest.raises(DataError):
            oneway_score(np.ones((2, 3)), np.ones((2, 3)), np.eye(3))

    @pytest.mark.parametrize("pos,neg,margin,want", [(0.9, 0.1, 0.5, 0.0), (0.3, 0.1, 0.5, 0.3), (0.0, 0.0, 0.5, 0.5), (0.1, 0.9, 0.2, 1.0)])
    def test_hinge(self, pos, neg, margin, want):
        assert hinge_loss(Tensor(np.float64(pos)), Tensor(np.float64(neg)), margin).item() == pytest.approx(want)


def dev_mrr(model, ds):
    run = {}
    for q in ds.questions:
        cands = ds.candidates[q.id]
        scores = model.score(q, [ds.sentence(c) for c in cands])
        run[q.id] = [Scored(c.section_id, c.sent_index, float(s), c.label) for c, s in zip(cands, scores)]
    return map_mrr(run)[1]


class TestAttentionTraining:
    def test_loss_decreases(self):
        corpus, emb = tiny_corpus()
        trn = corpus.dataset.split("TRN")
        model = train_model("ap", trn, emb, TrainConfig(seed=0, epochs=4, batch_size=4, lr=1e-2), gru_config=GruConfig(h=6, emb_dim=16))
        assert model.history[-1] < model.history[0]

    def test_on_epoch_hook(self):
        corpus, emb = tiny_corpus(n=10)
        seen = []
        train_model("oneway", corpus.dataset.split("TRN"), emb, TrainConfig(seed=0, epochs=3, batch_size=4),
                    gru_config=GruConfig(h=3, emb_dim=16), on_epoch=lambda m, e: seen.append((e, m.kind)))
        assert seen == [(1, "oneway"), (2, "oneway"), (3, "oneway")]

    def test_needs_positive_and_negative(self):
        corpus, emb = tiny_corpus(n=6)
        ds = corpus.dataset.split("TRN")
        ds.candidates = {qid: [c for c in cs if c.label == 1] for qid, cs in ds.candidates.items()}
        with pytest.raises(DataError):
            train_model("ap", ds, emb, TrainConfig(seed=0, epochs=1), gru_config=GruConfig(h=3, emb_dim=16))


class FixedRanker(Ranker):
    def __init__(self, scores, threshold):
        self.scores, self.threshold = np.asarray(scores), threshold

    def score(self, question, sentences):
        return self.scores[: len(sentences)]


def five_candidates():
    sents = [Sentence("s1", i, f"w{i}", make_tokens([f"w{i}"])) for i in range(5)]
    sections = {"s1": Section("a", "s1", "Art", "t", sents)}
    q = Question("q", "what ?", make_tokens(["what", "?"]), "Art", "original", "what", "TST")
    cands = [Candidate("q", "s1", i, int(i == 3)) for i in range(5)]
    return q, cands, sections


class TestPrediction:
    def test_fires_above_threshold(self):
        q, cands, sections = five_candidates()
        pred = predict_run(FixedRanker([0.1, 0.7, 0.2, 0.9, 0.4], 0.5), q, cands, sections)
        assert pred.decision == cands[3]
        assert [s for _, s in pred.scored] == [0.1, 0.7, 0.2, 0.9, 0.4]

    def test_abstains_at_or_below_threshold(self):
        q, cands, sections = five_candidates()
        assert predict_run(FixedRanker([0.1, 0.3, 0.2, 0.5, 0.4], 0.5), q, cands, sections).decision is None

    def test_tie_goes_to_lower_index(self):
        q, cands, sections = five_candidates()
        pred = predict_run(FixedRanker([0.6, 0.8, 0.8, 0.1, 0.1], 0.5), q, cands, sections)
        assert pred.decision == cands[1]

    def test_no_candidates(self):
        q, _, sections = five_candidates()
        assert predict_run(FixedRanker([], 0.0), q, [], sections).decision is None


@pytest.fixture(scope="module")
def trained():
    corpus, emb = tiny_corpus(n=20)
    trn = corpus.dataset.split("TRN")
    tc = TrainConfig(seed=3, epochs=2, batch_size=8, lr=1e-2)
    models = {
        "cnn-subtree": train_model("cnn-subtree", trn, emb, tc, cnn_config=CnnConfig(emb_dim=16, filters_per_height=3, hidden_dim=3)),
        "ap": train_model("ap", trn, emb, tc, gru_config=GruConfig(h=4, emb_dim=16)),
    }
    return corpus, emb, models


class TestPersistence:
    @pytest.mark.parametrize("kind", ["cnn-subtree", "ap"])
    def test_round_trip_scores(self, trained, kind, tmp_path):
        corpus, _, models = trained
        model = models[kind]
        model.threshold = -math.inf
        save_model(model, tmp_path / "m.bin", {"seed": 3})
        back = load_model(tmp_path / "m.bin")
        assert back.kind == kind and back.threshold == -math.inf
        assert back.checkpoint_meta["seed"] == 3
        ds = corpus.dataset.split("DEV")
        for q in ds.questions:
            sents = [ds.sentence(c) for c in ds.candidates[q.id]]
            np.testing.assert_array_equal(back.score(q, sents), model.score(q, sents))

    def test_unknown_kind(self, trained, tmp_path):
        from selrank.tensor import save_checkpoint

        save_checkpoint(tmp_path / "m.bin", {"emb": np.zeros((1, 2), dtype=np.float32)}, {"kind": "svm", "vocab": []})
        with pytest.raises(DataError):
            load_model(tmp_path / "m.bin")

    def test_embedding_dim_mismatch(self):
        emb = EmbeddingTable(["a"], np.ones((1, 3)))
        with pytest.raises(DataError):
            AttentionRanker("ap", GruConfig(h=2, emb_dim=4), emb, {})


class TestDeterminism:
    @pytest.mark.parametrize("kind,extra", [("cnn", {"cnn_config": CnnConfig(emb_dim=16, filters_per_height=3, hidden_dim=3)}),
                                            ("oneway", {"gru_config": GruConfig(h=3, emb_dim=16)})])
    def test_same_seed_same_weights(self, kind, extra):
        corpus, emb = tiny_corpus(n=12)
        trn = corpus.dataset.split("TRN")
        tc = TrainConfig(seed=7, epochs=2, batch_size=4, lr=1e-2)
        a = train_model(kind, trn, emb, tc, **extra).arrays()
        b = train_model(kind, trn, emb, tc, **extra).arrays()
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])

    def test_different_seed_differs(self):
        corpus, emb = tiny_corpus(n=12)
        trn = corpus.dataset.split("TRN")
        g = GruConfig(h=3, emb_dim=16)
        a = train_model("ap", trn, emb, TrainConfig(seed=1, epochs=1), gru_config=g).arrays()
        b = train_model("ap", trn, emb, TrainConfig(seed=2, epochs=1), gru_config=g).arrays()
        assert not np.array_equal(a["att.U"], b["att.U"])
