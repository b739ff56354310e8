"""Kernel SVM training, cross-validated kernel selection, and persistence.

Binary subproblems are solved one-vs-one by libsvm's SMO (via scikit-learn)
on precomputed kernel matrices; everything downstream of the dual solve --
kernel evaluation, voting, persistence -- runs through this module so that a
reloaded classifier reproduces its classifications bit-exactly.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, asdict
from itertools import combinations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.svm import SVC
from sklearn.utils.validation import check_is_fitted

from .errors import ValidationError
from .timeseries import subseed

KERNEL_KINDS = ("linear", "rbf", "poly", "sigmoid", "cosine")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family and coefficients.

    gamma=None resolves at fit time to 1 / (n_features * variance of the
    training features), the usual "scale" convention.
    """

    kind: str
    gamma: float | None = None
    degree: int = 3
    coef0: float = 0.0

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValidationError(f"unknown kernel {self.kind!r}; choose from {KERNEL_KINDS}")
        if self.gamma is not None and self.gamma <= 0:
            raise ValidationError("gamma must be positive")
        if self.degree < 1:
            raise ValidationError("degree must be at least 1")

    def resolve_gamma(self, X: np.ndarray) -> float:
        if self.gamma is not None:
            return float(self.gamma)
        variance = float(np.asarray(X).var())
        n_features = X.shape[1]
        return 1.0 / (n_features * variance) if variance > 0 else 1.0 / n_features

    def label(self) -> str:
        return self.kind


DEFAULT_SVM_PROPOSALS = (
    KernelSpec("linear"),
    KernelSpec("rbf"),
    KernelSpec("poly"),
    KernelSpec("sigmoid"),
)


def kernel_matrix(spec: KernelSpec, X, Y, gamma: float | None = None) -> np.ndarray:
    """Kernel Gram block K[i, j] = k(X_i, Y_j)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise ValidationError("kernel arguments must share the feature dimension")
    if spec.kind == "linear":
        return X @ Y.T
    if spec.kind == "cosine":
        xn = np.linalg.norm(X, axis=1)
        yn = np.linalg.norm(Y, axis=1)
        if np.any(xn == 0) or np.any(yn == 0):
            raise ValidationError("cosine kernel is undefined for zero vectors")
        return (X / xn[:, None]) @ (Y / yn[:, None]).T
    g = spec.gamma if spec.gamma is not None else gamma
    if g is None:
        raise ValidationError(f"{spec.kind} kernel needs gamma resolved before evaluation")
    if spec.kind == "rbf":
        x2 = np.einsum("ij,ij->i", X, X)[:, None]
        y2 = np.einsum("ij,ij->i", Y, Y)[None, :]
        d2 = np.maximum(x2 - 2.0 * (X @ Y.T) + y2, 0.0)
        return np.exp(-g * d2)
    if spec.kind == "poly":
        return (g * (X @ Y.T) + spec.coef0) ** spec.degree
    # sigmoid
    return np.tanh(g * (X @ Y.T) + spec.coef0)


def kernel_eval(spec: KernelSpec, x, y, gamma: float | None = None) -> float:
    """Kernel value for a single pair of feature vectors."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    y = np.asarray(y, dtype=float).reshape(1, -1)
    return float(kernel_matrix(spec, x, y, gamma=gamma)[0, 0])


@dataclass
class _PairMachine:
    """One binary machine of the one-vs-one decomposition."""

    class_a: int
    class_b: int
    support_vectors: np.ndarray
    dual_coef: np.ndarray
    intercept: float


class SvmClassifier(ClassifierMixin, BaseEstimator):
    """One-vs-one kernel SVM with a numpy prediction path.

    Parameters
    ----------
    kernel : KernelSpec
    C : float
        Box constraint of the soft-margin dual problem.
    tol : float
        KKT tolerance of the SMO solver.
    max_iter : int
        Iteration cap per binary problem; exceeding it flags the model.
    """

    def __init__(self, kernel=KernelSpec("linear"), C=1.0, tol=1e-3, max_iter=1_000_000):
        self.kernel = kernel
        self.C = C
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=int)
        if y.shape[0] != X.shape[0]:
            raise ValidationError("labels do not match rows")
        if self.C <= 0:
            raise ValidationError("C must be positive")
        classes = np.unique(y)
        if classes.size < 2:
            raise ValidationError("need at least two classes to train a classifier")

        self.classes_ = classes
        self.gamma_ = self.kernel.resolve_gamma(X)
        self.n_features_in_ = X.shape[1]
        self.converged_ = True
        self.machines_ = []
        for class_a, class_b in combinations(classes.tolist(), 2):
            mask = (y == class_a) | (y == class_b)
            X_pair, y_pair = X[mask], y[mask]
            K = kernel_matrix(self.kernel, X_pair, X_pair, gamma=self.gamma_)
            svc = SVC(kernel="precomputed", C=self.C, tol=self.tol, max_iter=self.max_iter)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                svc.fit(K, y_pair)
            if svc.fit_status_ != 0:
                self.converged_ = False
            self.machines_.append(
                _PairMachine(
                    class_a=int(class_a),
                    class_b=int(class_b),
                    support_vectors=X_pair[svc.support_],
                    dual_coef=svc.dual_coef_[0].copy(),
                    intercept=float(svc.intercept_[0]),
                )
            )
        return self

    def pair_decisions(self, X) -> np.ndarray:
        """Decision values of every one-vs-one machine, one column per pair."""
        check_is_fitted(self, "machines_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features_in_:
            raise ValidationError("feature count does not match the trained classifier")
        cols = []
        for machine in self.machines_:
            K = kernel_matrix(self.kernel, X, machine.support_vectors, gamma=self.gamma_)
            cols.append(K @ machine.dual_coef + machine.intercept)
        return np.column_stack(cols)

    def predict(self, X) -> np.ndarray:
        """Pairwise-vote labels; vote ties resolve to the lowest class index."""
        decisions = self.pair_decisions(X)
        n = decisions.shape[0]
        class_pos = {c: i for i, c in enumerate(self.classes_.tolist())}
        votes = np.zeros((n, self.classes_.size), dtype=int)
        for col, machine in enumerate(self.machines_):
            positive = decisions[:, col] > 0
            votes[positive, class_pos[machine.class_b]] += 1
            votes[~positive, class_pos[machine.class_a]] += 1
        return self.classes_[np.argmax(votes, axis=1)]

    def to_dict(self) -> dict:
        check_is_fitted(self, "machines_")
        return {
            "format_version": 1,
            "kind": "svm_classifier",
            "kernel": asdict(self.kernel),
            "C": self.C,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "gamma_resolved": self.gamma_,
            "classes": self.classes_.tolist(),
            "n_features": self.n_features_in_,
            "converged": bool(self.converged_),
            "cv_misclassification": getattr(self, "cv_misclassification_", None),
            "machines": [
                {
                    "class_a": m.class_a,
                    "class_b": m.class_b,
                    "support_vectors": m.support_vectors.tolist(),
                    "dual_coef": m.dual_coef.tolist(),
                    "intercept": m.intercept,
                }
                for m in self.machines_
            ],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SvmClassifier":
        if payload.get("kind") != "svm_classifier":
            raise ValidationError("not a persisted classifier")
        model = cls(
            kernel=KernelSpec(**payload["kernel"]),
            C=payload["C"],
            tol=payload["tol"],
            max_iter=payload["max_iter"],
        )
        model.gamma_ = payload["gamma_resolved"]
        model.classes_ = np.array(payload["classes"], dtype=int)
        model.n_features_in_ = payload["n_features"]
        model.converged_ = payload["converged"]
        if payload.get("cv_misclassification") is not None:
            model.cv_misclassification_ = payload["cv_misclassification"]
        model.machines_ = [
            _PairMachine(
                class_a=m["class_a"],
                class_b=m["class_b"],
                support_vectors=np.array(m["support_vectors"], dtype=float),
                dual_coef=np.array(m["dual_coef"], dtype=float),
                intercept=m["intercept"],
            )
            for m in payload["machines"]
        ]
        return model

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "SvmClassifier":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def svm_train(X, y, spec: KernelSpec, C=1.0, tol=1e-3, max_iter=1_000_000, seed=None) -> SvmClassifier:
    """Train a one-vs-one kernel SVM on labeled rows."""
    return SvmClassifier(kernel=spec, C=C, tol=tol, max_iter=max_iter).fit(X, y)


def _fold_indices(n: int, k: int, seed) -> list[np.ndarray]:
    rng = np.random.default_rng(subseed(0 if seed is None else int(seed), 0))
    return [np.sort(fold) for fold in np.array_split(rng.permutation(n), k)]


def select_classifier(X, y, proposals=DEFAULT_SVM_PROPOSALS, k=10, C=1.0, tol=1e-3, seed=None) -> SvmClassifier:
    """Pick the proposal with the best k-fold CV misclassification rate.

    Folds are a deterministic shuffled split shared by every proposal.  The
    winning proposal (ties: first in list order) is retrained on all rows;
    its average fold misclassification is recorded on the returned model,
    and per-proposal rates are kept in `proposal_report_`.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=int)
    proposals = list(proposals)
    if not proposals:
        raise ValidationError("need at least one kernel proposal")
    if k < 2:
        raise ValidationError("need at least two folds")
    if X.shape[0] < k:
        raise ValidationError("need at least one row per fold")

    folds = _fold_indices(X.shape[0], k, seed)
    all_rows = np.arange(X.shape[0])
    rates: list[float | None] = []
    for spec in proposals:
        fold_rates = []
        for fold in folds:
            train_mask = np.ones(X.shape[0], dtype=bool)
            train_mask[fold] = False
            y_train = y[train_mask]
            if np.unique(y_train).size < 2:
                warnings.warn(
                    f"fold leaves a single class in training data; skipping it for {spec.label()}"
                )
                continue
            model = SvmClassifier(kernel=spec, C=C, tol=tol).fit(X[train_mask], y_train)
            predictions = model.predict(X[fold])
            fold_rates.append(float(np.mean(predictions != y[fold])))
        if fold_rates:
            rates.append(float(np.mean(fold_rates)))
        else:
            warnings.warn(f"no usable folds for proposal {spec.label()}; skipping it")
            rates.append(None)

    usable = [(i, r) for i, r in enumerate(rates) if r is not None]
    if not usable:
        raise ValidationError("every proposal was skipped; cannot select a classifier")
    best_idx = min(usable, key=lambda item: item[1])[0]

    winner = SvmClassifier(kernel=proposals[best_idx], C=C, tol=tol).fit(X[all_rows], y)
    winner.cv_misclassification_ = rates[best_idx]
    winner.proposal_report_ = [
        {"kernel": spec.label(), "misclassification": rate}
        for spec, rate in zip(proposals, rates)
    ]
    return winner


def classify(model: SvmClassifier, values) -> np.ndarray:
    """Labels for new filtered rows."""
    return model.predict(values)
