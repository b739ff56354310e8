import numpy as np
import pytest

from tsuq import (
    KernelSpec,
    SvmClassifier,
    ValidationError,
    classify,
    kernel_eval,
    kernel_matrix,
    select_classifier,
    svm_train,
)


def gaussian_blobs(centers, n_per=30, scale=0.3, seed=0):
    rng = np.random.default_rng(seed)
    X, y = [], []
    for label, center in enumerate(centers):
        X.append(rng.normal(0, scale, size=(n_per, len(center))) + np.asarray(center))
        y += [label] * n_per
    return np.vstack(X), np.array(y)


class TestKernelEval:
    def test_linear_dot_product(self):
        assert kernel_eval(KernelSpec("linear"), (1.0, 2.0), (1.0, 2.0)) == pytest.approx(5.0)

    def test_rbf_identical_points(self):
        assert kernel_eval(KernelSpec("rbf", gamma=0.7), (1.0, -2.0), (1.0, -2.0)) == pytest.approx(1.0)

    def test_cosine_orthogonal(self):
        assert kernel_eval(KernelSpec("cosine"), (1.0, 0.0), (0.0, 1.0)) == pytest.approx(0.0)

    def test_cosine_zero_vector_rejected(self):
        with pytest.raises(ValidationError):
            kernel_eval(KernelSpec("cosine"), (0.0, 0.0), (1.0, 0.0))

    def test_poly_hand_value(self):
        spec = KernelSpec("poly", gamma=1.0, degree=2, coef0=1.0)
        assert kernel_eval(spec, (1.0, 1.0), (1.0, 1.0)) == pytest.approx(9.0)

    def test_sigmoid_hand_value(self):
        spec = KernelSpec("sigmoid", gamma=0.5, coef0=0.0)
        assert kernel_eval(spec, (2.0, 0.0), (1.0, 0.0)) == pytest.approx(np.tanh(1.0))

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            kernel_matrix(KernelSpec("linear"), np.zeros((2, 3)), np.zeros((2, 4)))

    def test_unknown_kernel(self):
        with pytest.raises(ValidationError):
            KernelSpec("laplacian")


class TestSvmTrain:
    def test_separable_blobs_zero_training_error(self):
        X, y = gaussian_blobs([(-1.0, 0.0), (1.0, 0.0)], scale=0.15)
        model = svm_train(X, y, KernelSpec("linear"))
        assert np.mean(model.predict(X) != y) == 0.0

    def test_xor_linear_fails_rbf_succeeds(self):
        X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
        y = np.array([0, 0, 1, 1])
        linear = svm_train(X, y, KernelSpec("linear"))
        assert np.mean(linear.predict(X) != y) > 0.0
        rbf = svm_train(X, y, KernelSpec("rbf", gamma=1.0), C=1e4)
        np.testing.assert_array_equal(rbf.predict(X), y)

    def test_duplicating_points_keeps_decision_function(self):
        X, y = gaussian_blobs([(-1.5, 0.0), (1.5, 0.0)], scale=0.2, seed=3)
        base = svm_train(X, y, KernelSpec("linear"))
        doubled = svm_train(np.vstack([X, X]), np.concatenate([y, y]), KernelSpec("linear"))
        probe = np.random.default_rng(0).normal(size=(20, 2))
        np.testing.assert_allclose(
            base.pair_decisions(probe), doubled.pair_decisions(probe), atol=1e-6
        )

    def test_single_class_rejected(self):
        with pytest.raises(ValidationError):
            svm_train(np.zeros((5, 2)), np.zeros(5, dtype=int), KernelSpec("linear"))

    def test_matches_reference_predictions(self):
        # the numpy decision path must agree with the reference SMO solver's
        # own predictions on held-out points
        from sklearn.svm import SVC

        X, y = gaussian_blobs([(-1.0, 0.0), (0.5, 0.8), (1.5, -0.5)], scale=0.5, seed=7)
        model = svm_train(X, y, KernelSpec("rbf"))
        probe = np.random.default_rng(1).normal(size=(50, 2))
        reference = SVC(kernel="rbf", gamma="scale", C=1.0, tol=1e-3).fit(X, y)
        agree = np.mean(model.predict(probe) == reference.predict(probe))
        assert agree >= 0.95

    def test_linear_decision_equals_explicit_weights(self):
        X, y = gaussian_blobs([(-1.0, -0.5), (1.0, 0.5)], scale=0.4, seed=9)
        model = svm_train(X, y, KernelSpec("linear"))
        machine = model.machines_[0]
        w = machine.dual_coef @ machine.support_vectors
        probe = np.random.default_rng(2).normal(size=(25, 2))
        explicit = probe @ w + machine.intercept
        np.testing.assert_allclose(model.pair_decisions(probe)[:, 0], explicit, atol=1e-8)

    def test_row_reordering_invariance(self):
        X, y = gaussian_blobs([(-1.0, 0.0), (1.0, 0.0)], scale=0.3, seed=4)
        perm = np.random.default_rng(5).permutation(X.shape[0])
        base = svm_train(X, y, KernelSpec("rbf"))
        shuffled = svm_train(X[perm], y[perm], KernelSpec("rbf"))
        probe = np.random.default_rng(6).normal(size=(30, 2))
        np.testing.assert_array_equal(base.predict(probe), shuffled.predict(probe))


class TestClassify:
    def test_support_vector_keeps_its_label(self):
        X, y = gaussian_blobs([(-2.0, 0.0), (2.0, 0.0)], scale=0.2, seed=11)
        model = svm_train(X, y, KernelSpec("linear"))
        sv = model.machines_[0].support_vectors
        labels = classify(model, sv)
        # match each support vector back to its training row
        for vec, label in zip(sv, labels):
            idx = int(np.argmin(np.abs(X - vec).sum(axis=1)))
            assert label == y[idx]

    def test_permutation_equivariance(self):
        X, y = gaussian_blobs([(-1.0, 0.0), (1.0, 0.0), (0.0, 2.0)], scale=0.3, seed=12)
        model = svm_train(X, y, KernelSpec("linear"))
        probe = np.random.default_rng(7).normal(size=(40, 2))
        perm = np.random.default_rng(8).permutation(40)
        np.testing.assert_array_equal(classify(model, probe)[perm], classify(model, probe[perm]))

    def test_dimension_mismatch(self):
        X, y = gaussian_blobs([(-1.0, 0.0), (1.0, 0.0)])
        model = svm_train(X, y, KernelSpec("linear"))
        with pytest.raises(ValidationError):
            classify(model, np.zeros((3, 7)))


class TestSelectClassifier:
    def test_single_proposal_separable(self):
        X, y = gaussian_blobs([(-2.0, 0.0), (2.0, 0.0)], n_per=40, scale=0.3, seed=13)
        model = select_classifier(X, y, proposals=[KernelSpec("linear")], k=5, seed=0)
        assert model.kernel.kind == "linear"
        assert model.cv_misclassification_ <= 0.05

    def test_selected_rate_is_minimal(self):
        X, y = gaussian_blobs([(-1.0, 0.0), (1.0, 0.0)], n_per=50, scale=0.8, seed=14)
        proposals = [KernelSpec("linear"), KernelSpec("rbf"), KernelSpec("sigmoid")]
        model = select_classifier(X, y, proposals=proposals, k=5, seed=1)
        rates = [entry["misclassification"] for entry in model.proposal_report_]
        assert model.cv_misclassification_ == min(r for r in rates if r is not None)

    def test_ties_prefer_first_proposal(self):
        X, y = gaussian_blobs([(-3.0, 0.0), (3.0, 0.0)], n_per=30, scale=0.1, seed=15)
        # both kernels will reach rate 0; list order decides
        model = select_classifier(X, y, proposals=[KernelSpec("rbf"), KernelSpec("linear")], k=5, seed=2)
        assert model.kernel.kind == "rbf"

    def test_deterministic_folds(self):
        X, y = gaussian_blobs([(-1.0, 0.0), (1.0, 0.0)], n_per=40, scale=0.6, seed=16)
        m1 = select_classifier(X, y, k=4, seed=3)
        m2 = select_classifier(X, y, k=4, seed=3)
        assert m1.cv_misclassification_ == m2.cv_misclassification_
        assert m1.kernel == m2.kernel

    def test_needs_enough_rows(self):
        with pytest.raises(ValidationError):
            select_classifier(np.zeros((3, 2)), np.array([0, 1, 0]), k=10)


class TestPersistence:
    def test_round_trip_bit_exact(self, tmp_path):
        X, y = gaussian_blobs([(-1.0, 0.0), (0.8, 0.9), (1.5, -1.0)], scale=0.5, seed=17)
        model = select_classifier(X, y, k=5, seed=4)
        path = tmp_path / "classifier.json"
        model.save(path)
        loaded = SvmClassifier.load(path)
        probe = np.random.default_rng(9).normal(size=(60, 2))
        np.testing.assert_array_equal(model.predict(probe), loaded.predict(probe))
        np.testing.assert_array_equal(
            model.pair_decisions(probe), loaded.pair_decisions(probe)
        )
        assert loaded.cv_misclassification_ == model.cv_misclassification_

    def test_double_round_trip_stable_bytes(self, tmp_path):
        X, y = gaussian_blobs([(-1.0, 0.0), (1.0, 0.0)], scale=0.4, seed=18)
        model = svm_train(X, y, KernelSpec("rbf"))
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        model.save(p1)
        SvmClassifier.load(p1).save(p2)
        assert p1.read_bytes() == p2.read_bytes()
