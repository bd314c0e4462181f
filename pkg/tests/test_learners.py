import numpy as np
import pytest
import scipy.sparse as sp

from edre.corpus import Clarity
from edre.embed import DenseVector, SparseVector, build_vocabulary, csr_row, tfidf_matrix
from edre.learners import (
    DEFAULT_GRIDS,
    Algorithm,
    EmbeddingMismatchError,
    TrainingError,
    TrainSet,
    load_model,
    model_bytes,
    predict,
    predict_matrix,
    resolve_config,
    save_model,
    train,
    train_matrix,
)
from edre.learners.logreg import fit_logreg, loss_and_grad, softmax
from edre.serial import FormatError, UnsupportedVersionError
from edre.textprep import preprocess

FAST = {
    Algorithm.NB: {},
    Algorithm.LOGREG: {"max_iter": 200},
    Algorithm.SVM: {"epochs": 5},
    Algorithm.RF: {"n_trees": 10, "max_depth": 6},
    Algorithm.GBRT: {"n_rounds": 10},
}


@pytest.fixture(scope="module")
def tfidf_data():
    from edre.synth import generate_reviews

    corpus = generate_reviews(240, seed=11)
    docs = [preprocess(r.comment) for r in corpus]
    vocab = build_vocabulary(docs)
    return tfidf_matrix(docs, vocab), [r.clarity for r in corpus], vocab


def nb_toy():
    # columns: bad, code, good
    X = sp.csr_matrix(np.array([[0, 1, 1], [1, 1, 0]], dtype=float))
    return train_matrix("nb", X, [Clarity.CLEAR, Clarity.UNCLEAR], {"alpha": 1.0}, embedding_fingerprint="toy")


class TestNaiveBayes:
    def test_toy_posterior(self):
        model = nb_toy()
        label, scores = predict(model, SparseVector.from_entries(3, {2: 1.0}, "toy"))
        assert label is Clarity.CLEAR
        # P(good|clear) = 2/5, P(good|unclear) = 1/5, equal priors
        assert abs(scores.as_dict()["clear"] - 2 / 3) < 1e-9
        assert abs(scores.values.sum() - 1) < 1e-12

    def test_training_point_gets_its_label(self):
        model = nb_toy()
        labels, _, _ = predict_matrix(model, sp.csr_matrix(np.array([[0, 1, 1], [1, 1, 0]], dtype=float)))
        assert labels == [Clarity.CLEAR, Clarity.UNCLEAR]

    def test_empty_vector_uses_prior(self):
        X = sp.csr_matrix(np.array([[1, 0], [1, 0], [0, 1]], dtype=float))
        model = train_matrix("nb", X, [Clarity.CLEAR, Clarity.CLEAR, Clarity.UNCLEAR])
        label, scores = predict(model, SparseVector.from_entries(2, {}))
        assert label is Clarity.CLEAR
        assert scores.low_confidence and scores.kind == "prior"
        np.testing.assert_allclose(scores.values, [1 / 3, 2 / 3])

    def test_log_space_no_underflow(self):
        X = np.array([[5000.0, 0.0], [0.0, 5000.0]])
        model = train_matrix("nb", X, [Clarity.CLEAR, Clarity.UNCLEAR])
        _, scores, _ = predict_matrix(model, np.array([[3000.0, 2990.0]]))
        assert np.isfinite(scores).all() and abs(scores.sum() - 1) < 1e-12

    def test_negative_features_rejected(self):
        with pytest.raises(TrainingError, match="nonnegative"):
            train_matrix("nb", np.array([[-1.0], [1.0]]), [Clarity.CLEAR, Clarity.UNCLEAR])

    def test_joint_scaling_of_counts_and_alpha(self, tfidf_data):
        # multiplying counts and alpha by c leaves every estimated probability unchanged
        X, y, _ = tfidf_data
        base = train_matrix("nb", X, y, {"alpha": 0.5})
        for c in (0.25, 3.0, 10.0):
            scaled = train_matrix("nb", X * c, y, {"alpha": 0.5 * c})
            la, sa, _ = predict_matrix(base, X)
            lb, sb, _ = predict_matrix(scaled, X)
            assert la == lb
            np.testing.assert_allclose(sa, sb, atol=1e-9)

    def test_scaling_with_vanishing_alpha(self):
        # every class has seen every feature, so the alpha -> 0 limit is scale free
        rng = np.random.default_rng(4)
        X = rng.integers(1, 6, size=(60, 8)).astype(float)
        y = [Clarity(int(v)) for v in rng.integers(0, 4, 60)]
        base = train_matrix("nb", X, y, {"alpha": 1e-10})
        for c in (0.5, 2.0, 7.0):
            scaled = train_matrix("nb", X * c, y, {"alpha": 1e-10})
            assert predict_matrix(base, X)[0] == predict_matrix(scaled, X)[0]

    def test_duplicate_example_keeps_correct_prediction(self, tfidf_data):
        X, y, _ = tfidf_data
        model = train_matrix("nb", X, y)
        labels, _, _ = predict_matrix(model, X)
        checked = 0
        for i in range(0, X.shape[0], 7):
            if labels[i] != y[i]:
                continue
            aug = train_matrix("nb", sp.vstack([X, X[i]]).tocsr(), y + [y[i]])
            assert predict_matrix(aug, X[i])[0][0] == y[i]
            checked += 1
        assert checked > 5


class TestLogReg:
    @pytest.mark.parametrize("trial", range(50))
    def test_gradient_matches_finite_differences(self, trial):
        rng = np.random.default_rng(trial)
        n, d, k = 12, 10, 4
        X = rng.normal(size=(n, d))
        Y = np.eye(k)[rng.integers(0, k, n)]
        W, b = rng.normal(size=(k, d)), rng.normal(size=k)
        l2 = 0.1
        _, gW, gb = loss_and_grad(W, b, X, Y, l2)
        theta = np.concatenate([W.ravel(), b])
        f = lambda t: loss_and_grad(t[: k * d].reshape(k, d), t[k * d :], X, Y, l2)[0]  # noqa: E731
        h = 1e-6
        fd = np.array([(f(theta + h * e) - f(theta - h * e)) / (2 * h) for e in np.eye(theta.size)])
        analytic = np.concatenate([gW.ravel(), gb])
        rel = np.linalg.norm(fd - analytic) / max(np.linalg.norm(fd), 1e-12)
        assert rel < 1e-4

    def test_loss_non_increasing(self, tfidf_data):
        X, y, _ = tfidf_data
        classes = sorted(set(y))
        history = []
        fit_logreg(X, np.array([classes.index(c) for c in y]), len(classes), {"l2": 0.001, "max_iter": 300, "tol": 0.0}, history=history)
        diffs = np.diff(history)
        assert len(history) == 300
        assert (diffs <= 1e-12).all()

    def test_probabilities_sum_to_one(self, tfidf_data):
        X, y, _ = tfidf_data
        model = train_matrix("logreg", X, y, FAST[Algorithm.LOGREG])
        rng = np.random.default_rng(0)
        Q = sp.random(100, X.shape[1], density=0.01, random_state=1, format="csr")
        Q.data = rng.random(Q.nnz)
        _, scores, _ = predict_matrix(model, Q)
        np.testing.assert_allclose(scores.sum(axis=1), 1.0, atol=1e-9)

    def test_softmax_stable(self):
        p = softmax(np.array([[1000.0, 0.0, -1000.0]]))
        np.testing.assert_allclose(p, [[1.0, 0.0, 0.0]])


class TestSVM:
    def test_separable_toy(self):
        rng = np.random.default_rng(2)
        pos = rng.uniform(0.5, 2.0, size=(10, 2)) + np.array([2.0, 2.0])
        neg = rng.uniform(0.5, 2.0, size=(10, 2)) * -1
        X = np.vstack([pos, neg])
        y = [Clarity.CLEAR] * 10 + [Clarity.UNCLEAR] * 10
        model = train_matrix("svm", X, y, {"C": 10.0, "epochs": 50})
        labels, scores, _ = predict_matrix(model, X)
        assert labels == y
        # exhaustive check: every training point is on the correct side of the OvR margins
        assert (scores[:10, 1] > scores[:10, 0]).all() and (scores[10:, 0] > scores[10:, 1]).all()

    def test_bad_config(self):
        with pytest.raises(TrainingError):
            train_matrix("svm", np.eye(2), [Clarity.CLEAR, Clarity.UNCLEAR], {"C": 0})


class TestCommon:
    @pytest.mark.parametrize("algorithm", list(Algorithm))
    def test_deterministic_bytes(self, algorithm, tfidf_data):
        X, y, vocab = tfidf_data
        a = train_matrix(algorithm, X, y, FAST[algorithm], seed=5, embedding_fingerprint=vocab.fingerprint, embedding=vocab)
        b = train_matrix(algorithm, X, y, FAST[algorithm], seed=5, embedding_fingerprint=vocab.fingerprint, embedding=vocab)
        assert model_bytes(a) == model_bytes(b)

    @pytest.mark.parametrize("algorithm", [Algorithm.RF, Algorithm.GBRT])
    def test_seed_changes_ensembles(self, algorithm, tfidf_data):
        X, y, _ = tfidf_data
        a = train_matrix(algorithm, X, y, FAST[algorithm], seed=1)
        b = train_matrix(algorithm, X, y, FAST[algorithm], seed=2)
        assert model_bytes(a) != model_bytes(b)

    @pytest.mark.parametrize("algorithm", list(Algorithm))
    def test_argmax_consistency(self, algorithm, tfidf_data):
        X, y, _ = tfidf_data
        model = train_matrix(algorithm, X, y, FAST[algorithm], seed=0)
        rng = np.random.default_rng(9)
        Q = sp.random(1000, X.shape[1], density=0.003, random_state=3, format="csr")
        Q.data = rng.random(Q.nnz)
        labels, scores, _ = predict_matrix(model, Q)
        assert labels == [model.classes[i] for i in np.argmax(scores, axis=1)]

    @pytest.mark.parametrize("algorithm", list(Algorithm))
    def test_roundtrip_predictions(self, algorithm, tfidf_data, tmp_path):
        X, y, vocab = tfidf_data
        model = train_matrix(algorithm, X, y, FAST[algorithm], seed=3, embedding_fingerprint=vocab.fingerprint, embedding=vocab)
        save_model(model, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        la, sa, _ = predict_matrix(model, X)
        lb, sb, _ = predict_matrix(back, X)
        assert la == lb
        np.testing.assert_array_equal(sa, sb)
        assert back.embedding.fingerprint == vocab.fingerprint
        assert model_bytes(back) == model_bytes(model)

    def test_ties_go_to_less_clear(self):
        X = np.array([[1.0, 0.0], [1.0, 0.0]])
        model = train_matrix("nb", X, [Clarity.CLEAR, Clarity.SOMEWHAT_UNCLEAR])
        label, scores = predict(model, np.array([1.0, 0.0]))
        assert scores.values[0] == scores.values[1]
        assert label is Clarity.SOMEWHAT_UNCLEAR

    def test_single_class_rejected(self):
        with pytest.raises(TrainingError, match="2 distinct"):
            train_matrix("svm", np.eye(3), [Clarity.CLEAR] * 3)

    def test_non_finite_rejected(self):
        with pytest.raises(TrainingError, match="finite"):
            train_matrix("logreg", np.array([[np.nan], [1.0]]), [Clarity.CLEAR, Clarity.UNCLEAR])

    def test_unknown_hyperparameter(self):
        with pytest.raises(TrainingError, match="unknown hyperparameter"):
            resolve_config("rf", {"trees": 5})

    def test_default_grids_cover_algorithms(self):
        assert set(DEFAULT_GRIDS) == set(Algorithm)
        for algo, grid in DEFAULT_GRIDS.items():
            resolve_config(algo, {k: v[0] for k, v in grid.items()})

    def test_fingerprint_and_dimension_mismatch(self, tfidf_data):
        X, y, vocab = tfidf_data
        model = train_matrix("svm", X, y, FAST[Algorithm.SVM], embedding_fingerprint=vocab.fingerprint)
        with pytest.raises(EmbeddingMismatchError, match="does not match"):
            predict(model, csr_row(X, 0, "tfidf:other"))
        with pytest.raises(EmbeddingMismatchError, match="dimension"):
            predict(model, SparseVector.from_entries(3, {0: 1.0}))

    def test_train_on_trainset(self, toy_corpus):
        docs = [preprocess(r.comment) for r in toy_corpus]
        vocab = build_vocabulary(docs)
        X = tfidf_matrix(docs, vocab)
        data = TrainSet([csr_row(X, i, vocab.fingerprint) for i in range(X.shape[0])], [r.clarity for r in toy_corpus], [r.id for r in toy_corpus])
        model = train("svm", data, seed=0, embedding=vocab)
        assert model.classes == tuple(Clarity)
        assert model.embedding_fingerprint == vocab.fingerprint

    def test_trainset_alignment(self):
        with pytest.raises(TrainingError):
            TrainSet([DenseVector(np.ones(2))], [Clarity.CLEAR, Clarity.UNCLEAR], ["a"])


class TestModelFile:
    def test_nb_roundtrip_posterior(self, tmp_path):
        model = nb_toy()
        save_model(model, tmp_path / "nb.json")
        q = SparseVector.from_entries(3, {2: 1.0}, "toy")
        assert predict(load_model(tmp_path / "nb.json"), q)[1].values.tolist() == predict(model, q)[1].values.tolist()

    def test_truncated(self, tmp_path):
        path = tmp_path / "m.json"
        save_model(nb_toy(), path)
        path.write_text(path.read_text()[:50])
        with pytest.raises(FormatError):
            load_model(path)

    def test_future_version_names_both(self, tmp_path):
        path = tmp_path / "m.json"
        save_model(nb_toy(), path)
        path.write_text(path.read_text().replace('"format_version":1', '"format_version":7'))
        with pytest.raises(UnsupportedVersionError, match=r"format_version 7.*version 1"):
            load_model(path)

    def test_damaged_parameters(self, tmp_path):
        path = tmp_path / "m.json"
        save_model(nb_toy(), path)
        path.write_text(path.read_text().replace('"algorithm":"nb"', '"algorithm":"xx"'))
        with pytest.raises(FormatError):
            load_model(path)
