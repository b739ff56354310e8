"""Per-cluster feature standardization and kernel-PCA QoI extraction.

For each dynamics cluster the predicted rows are standardized, a set of
candidate kernels is scored by the proportion of (positive) spectrum their
leading components explain, and the winning kernel's principal components
become the learned quantities of interest for that cluster.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, asdict

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import NumericalError, ValidationError
from .svm import KernelSpec, kernel_matrix

EIG_FLOOR = 1e-12

DEFAULT_KPCA_PROPOSALS = (
    KernelSpec("linear"),
    KernelSpec("rbf"),
    KernelSpec("sigmoid", coef0=1.0),
    KernelSpec("poly", coef0=1.0),
    KernelSpec("cosine"),
)


class Standardizer(TransformerMixin, BaseEstimator):
    """Column-wise centering and unit-variance scaling.

    Zero-variance columns keep scale 1 so the transform stays defined; such
    columns map to all zeros.
    """

    def fit(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[0] == 0:
            raise ValidationError("cannot standardize an empty matrix")
        self.means_ = X.mean(axis=0)
        stds = X.std(axis=0)
        self.stds_ = np.where(stds > 0, stds, 1.0)
        return self

    def transform(self, X):
        check_is_fitted(self, "means_")
        X = np.asarray(X, dtype=float)
        if X.size == 0:
            return np.empty((0, self.means_.size))
        return (np.atleast_2d(X) - self.means_) / self.stds_


def standardize_fit_apply(Y_pred_cluster, Y_obs_cluster):
    """Fit statistics on the predicted rows, transform both sides with them."""
    scaler = Standardizer().fit(Y_pred_cluster)
    return scaler, scaler.transform(Y_pred_cluster), scaler.transform(Y_obs_cluster)


class KernelPca(TransformerMixin, BaseEstimator):
    """Kernel principal component analysis on a double-centered Gram matrix.

    Eigenvalues are sorted descending and clipped at zero; negative
    eigenvalues of indefinite kernels are never selectable as components and
    do not count toward the explained-variance denominator.  Each eigenvector
    is oriented so its largest-magnitude entry is positive.
    """

    def __init__(self, kernel=KernelSpec("linear")):
        self.kernel = kernel

    def fit(self, X):
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
        if X.shape[0] < 2:
            raise ValidationError("kernel PCA needs at least two rows")
        self.X_fit_ = X
        self.gamma_ = self.kernel.resolve_gamma(X)
        K = kernel_matrix(self.kernel, X, X, gamma=self.gamma_)
        if not np.all(np.isfinite(K)):
            raise NumericalError("kernel matrix has non-finite entries")
        col_means = K.mean(axis=0)
        grand = float(K.mean())
        centered = K - col_means[None, :] - col_means[:, None] + grand
        eigvals, eigvecs = np.linalg.eigh(centered)
        order = np.argsort(eigvals)[::-1]
        eigvals = eigvals[order]
        eigvecs = eigvecs[:, order]
        flip = eigvecs[np.argmax(np.abs(eigvecs), axis=0), np.arange(eigvecs.shape[1])] < 0
        eigvecs[:, flip] *= -1.0
        self.col_means_ = col_means
        self.grand_mean_ = grand
        self.eigenvalues_raw_ = eigvals
        self.eigenvalues_ = np.maximum(eigvals, 0.0)
        # C-contiguous so persisted copies reproduce matrix products bit-exactly
        self.alphas_ = np.ascontiguousarray(eigvecs)
        return self

    @property
    def n_usable_(self) -> int:
        return int(np.sum(self.eigenvalues_ > EIG_FLOOR))

    def explained_variance(self, n_components: int) -> float:
        """Share of the positive spectrum carried by the first n components."""
        check_is_fitted(self, "eigenvalues_")
        total = float(self.eigenvalues_.sum())
        if total <= 0:
            return 0.0
        return float(self.eigenvalues_[: n_components].sum()) / total

    def transform(self, X, n_components: int | None = None):
        """Project rows on the leading components (out-of-sample formula)."""
        check_is_fitted(self, "alphas_")
        X = np.asarray(X, dtype=float)
        usable = self.n_usable_
        if n_components is None:
            n_components = usable
        if n_components > usable:
            warnings.warn(
                f"only {usable} components have eigenvalue above {EIG_FLOOR}; "
                f"dropping {n_components - usable} requested component(s)"
            )
            n_components = usable
        if X.size == 0:
            return np.empty((0, n_components))
        X = np.atleast_2d(X)
        k_new = kernel_matrix(self.kernel, X, self.X_fit_, gamma=self.gamma_)
        k_centered = (
            k_new
            - k_new.mean(axis=1, keepdims=True)
            - self.col_means_[None, :]
            + self.grand_mean_
        )
        lam = self.eigenvalues_[:n_components]
        alpha = self.alphas_[:, :n_components]
        return k_centered @ (alpha / np.sqrt(lam))

    def training_scores(self, n_components: int | None = None):
        """Scores of the training rows (transform applied to them exactly)."""
        check_is_fitted(self, "alphas_")
        usable = self.n_usable_
        if n_components is None:
            n_components = usable
        n_components = min(n_components, usable)
        lam = self.eigenvalues_[:n_components]
        return self.alphas_[:, :n_components] * np.sqrt(lam)


def kpca_fit(Y_std, kernel: KernelSpec) -> KernelPca:
    """Fit kernel PCA on standardized rows."""
    return KernelPca(kernel=kernel).fit(Y_std)


def kpca_transform(model: KernelPca, Y_std_new, n_components: int | None = None):
    """Out-of-sample projection of standardized rows."""
    return model.transform(Y_std_new, n_components)


@dataclass
class QoiMap:
    """Learned per-cluster transform from filtered rows to QoI values."""

    cluster: int
    standardizer: Standardizer
    kpca: KernelPca
    n_qoi: int
    variance_explained: float

    def transform(self, filtered_rows) -> np.ndarray:
        return self.kpca.transform(self.standardizer.transform(filtered_rows), self.n_qoi)

    def to_dict(self) -> dict:
        return {
            "cluster": self.cluster,
            "kernel": asdict(self.kpca.kernel),
            "gamma_resolved": self.kpca.gamma_,
            "n_qoi": self.n_qoi,
            "variance_explained": self.variance_explained,
            "standardizer": {
                "means": self.standardizer.means_.tolist(),
                "stds": self.standardizer.stds_.tolist(),
            },
            "training_rows": self.kpca.X_fit_.tolist(),
            "col_means": self.kpca.col_means_.tolist(),
            "grand_mean": self.kpca.grand_mean_,
            "eigenvalues_raw": self.kpca.eigenvalues_raw_.tolist(),
            "eigenvectors": self.kpca.alphas_.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "QoiMap":
        scaler = Standardizer()
        scaler.means_ = np.array(payload["standardizer"]["means"], dtype=float)
        scaler.stds_ = np.array(payload["standardizer"]["stds"], dtype=float)
        kpca = KernelPca(kernel=KernelSpec(**payload["kernel"]))
        kpca.X_fit_ = np.array(payload["training_rows"], dtype=float)
        kpca.gamma_ = payload["gamma_resolved"]
        kpca.col_means_ = np.array(payload["col_means"], dtype=float)
        kpca.grand_mean_ = payload["grand_mean"]
        kpca.eigenvalues_raw_ = np.array(payload["eigenvalues_raw"], dtype=float)
        kpca.eigenvalues_ = np.maximum(kpca.eigenvalues_raw_, 0.0)
        kpca.alphas_ = np.array(payload["eigenvectors"], dtype=float)
        return cls(
            cluster=payload["cluster"],
            standardizer=scaler,
            kpca=kpca,
            n_qoi=payload["n_qoi"],
            variance_explained=payload["variance_explained"],
        )


@dataclass
class QoiSamples:
    """Per-cluster QoI values with back-references to original row indices."""

    cluster: int
    predicted: np.ndarray
    observed: np.ndarray
    predicted_index: np.ndarray
    observed_index: np.ndarray


def save_qoi_maps(maps, path) -> None:
    payload = {
        "format_version": 1,
        "kind": "qoi_maps",
        "clusters": [m.to_dict() for m in maps],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_qoi_maps(path) -> list[QoiMap]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("kind") != "qoi_maps":
        raise ValidationError("not a persisted QoI map store")
    return [QoiMap.from_dict(entry) for entry in payload["clusters"]]


def _minimal_components(model: KernelPca, rate: float) -> int | None:
    usable = model.n_usable_
    for n in range(1, usable + 1):
        if model.explained_variance(n) >= rate:
            return n
    return None


def learn_qois_and_transform(
    pred_values,
    pred_labels,
    obs_values,
    obs_labels,
    num_qoi: int | None = None,
    variance_rate: float | None = None,
    proposals=DEFAULT_KPCA_PROPOSALS,
):
    """Select a kernel PCA per cluster and transform both data sets.

    Exactly one of `num_qoi` (fixed component count; the proposal explaining
    the most variance with that many components wins) or `variance_rate`
    (smallest component count reaching the rate wins, ties by explained
    variance) must be given.  Returns (maps, samples, report) where report
    carries per-proposal scores for printing.
    """
    if (num_qoi is None) == (variance_rate is None):
        raise ValidationError("provide exactly one of num_qoi or variance_rate")
    proposals = list(proposals)
    if not proposals:
        raise ValidationError("need at least one kernel proposal")
    pred_values = np.atleast_2d(np.asarray(pred_values, dtype=float))
    obs_values = np.atleast_2d(np.asarray(obs_values, dtype=float))
    pred_labels = np.asarray(pred_labels, dtype=int)
    obs_labels = np.asarray(obs_labels, dtype=int)
    n_clusters = int(pred_labels.max()) + 1

    maps: list[QoiMap] = []
    samples: list[QoiSamples] = []
    report: list[dict] = []
    for cluster in range(n_clusters):
        pred_idx = np.flatnonzero(pred_labels == cluster)
        obs_idx = np.flatnonzero(obs_labels == cluster)
        if pred_idx.size == 0:
            raise ValidationError(f"cluster {cluster} has no predicted members")
        scaler, pred_std, obs_std = standardize_fit_apply(
            pred_values[pred_idx], obs_values[obs_idx]
        )
        fitted = [KernelPca(kernel=spec).fit(pred_std) for spec in proposals]

        if num_qoi is not None:
            variances = [model.explained_variance(num_qoi) for model in fitted]
            best = int(np.argmax(variances))
            chosen_n = num_qoi
            entries = [
                {"kernel": spec.label(), "n": num_qoi, "variance": var}
                for spec, var in zip(proposals, variances)
            ]
        else:
            minima = [_minimal_components(model, variance_rate) for model in fitted]
            entries = [
                {
                    "kernel": spec.label(),
                    "n": n,
                    "variance": model.explained_variance(n) if n is not None else None,
                }
                for spec, model, n in zip(proposals, fitted, minima)
            ]
            achievable = [n for n in minima if n is not None]
            if not achievable:
                best_rates = {
                    spec.label(): model.explained_variance(model.n_usable_)
                    for spec, model in zip(proposals, fitted)
                }
                raise ValidationError(
                    f"cluster {cluster}: no proposal reaches variance rate "
                    f"{variance_rate}; best achievable rates: {best_rates}"
                )
            chosen_n = min(achievable)
            candidates = [i for i, n in enumerate(minima) if n == chosen_n]
            best = max(candidates, key=lambda i: fitted[i].explained_variance(chosen_n))

        model = fitted[best]
        usable = model.n_usable_
        if chosen_n > usable:
            warnings.warn(
                f"cluster {cluster}: only {usable} usable components; reducing QoI count"
            )
            chosen_n = usable
        variance = model.explained_variance(chosen_n)
        # spectral gap just past the kept components, as a share of the
        # positive spectrum (reported only; never used for selection)
        total = float(model.eigenvalues_.sum())
        if total > 0 and chosen_n < model.eigenvalues_.size:
            gap = float(
                (model.eigenvalues_[chosen_n - 1] - model.eigenvalues_[chosen_n]) / total
            )
        else:
            gap = None
        qoi_map = QoiMap(
            cluster=cluster,
            standardizer=scaler,
            kpca=model,
            n_qoi=chosen_n,
            variance_explained=variance,
        )
        maps.append(qoi_map)
        samples.append(
            QoiSamples(
                cluster=cluster,
                predicted=model.transform(pred_std, chosen_n),
                observed=model.transform(obs_std, chosen_n),
                predicted_index=pred_idx,
                observed_index=obs_idx,
            )
        )
        report.append(
            {"cluster": cluster, "proposals": entries, "selected": best, "spectral_gap": gap}
        )
    return maps, samples, report
