"""Unsupervised labeling of filtered series into dynamics clusters.

Lloyd's iterations from k-means++ starts, with independent deterministic
restarts; the restart with the smallest within-cluster sum of squares wins.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import ValidationError
from .timeseries import subseed

_MAX_LLOYD_ITER = 300


def _squared_distances(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # (n, k) matrix of squared Euclidean distances
    cross = X @ centers.T
    x2 = np.einsum("ij,ij->i", X, X)[:, None]
    c2 = np.einsum("ij,ij->i", centers, centers)[None, :]
    return np.maximum(x2 - 2.0 * cross + c2, 0.0)


def _kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = _squared_distances(X, centers[:1])[:, 0]
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers[j] = X[idx]
        d2 = np.minimum(d2, _squared_distances(X, centers[j : j + 1])[:, 0])
    return centers


def _lloyd(X: np.ndarray, centers: np.ndarray):
    k = centers.shape[0]
    d2 = _squared_distances(X, centers)
    labels = np.argmin(d2, axis=1)
    inertia_history = [float(d2[np.arange(X.shape[0]), labels].sum())]
    for _ in range(_MAX_LLOYD_ITER):
        new_centers = centers.copy()
        empty = []
        for j in range(k):
            members = labels == j
            if members.any():
                new_centers[j] = X[members].mean(axis=0)
            else:
                empty.append(j)
        # a cluster that lost every member restarts at the point currently
        # farthest from its assigned centroid; each reseed takes a new point
        if empty:
            dist_own = _squared_distances(X, new_centers)[np.arange(X.shape[0]), labels]
            for j in empty:
                idx = int(np.argmax(dist_own))
                new_centers[j] = X[idx]
                dist_own[idx] = -1.0
        centers = new_centers
        d2 = _squared_distances(X, centers)
        new_labels = np.argmin(d2, axis=1)
        inertia_history.append(float(d2[np.arange(X.shape[0]), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return centers, labels, inertia_history[-1], inertia_history


class LloydKMeans(BaseEstimator):
    """k-means clustering with deterministic restarts.

    Parameters
    ----------
    n_clusters : int
        Number of clusters; must be manually specified.
    n_init : int
        Independent k-means++ restarts; the lowest-inertia run is kept.
    random_state : int or None
        Seed; restart r draws from a stream derived from (seed, r).
    """

    def __init__(self, n_clusters=3, n_init=10, random_state=None):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.random_state = random_state

    def fit(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[0] == 0:
            raise ValidationError("empty input")
        if self.n_clusters < 1:
            raise ValidationError("n_clusters must be at least 1")
        if X.shape[0] < self.n_clusters:
            raise ValidationError("need at least as many points as clusters")
        if self.n_init < 1:
            raise ValidationError("n_init must be at least 1")

        seed = 0 if self.random_state is None else int(self.random_state)
        best = None
        for restart in range(self.n_init):
            rng = np.random.default_rng(subseed(seed, restart))
            centers0 = _kmeans_pp_init(X, self.n_clusters, rng)
            centers, labels, inertia, history = _lloyd(X, centers0)
            if best is None or inertia < best[2]:
                best = (centers, labels, inertia, history)
        self.cluster_centers_, self.labels_, self.inertia_, self.inertia_history_ = best
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.cluster_centers_.shape[1]:
            raise ValidationError("feature count does not match the fitted centroids")
        # argmin resolves distance ties toward the lowest cluster index
        return np.argmin(_squared_distances(X, self.cluster_centers_), axis=1)

    def fit_predict(self, X):
        return self.fit(X).labels_


def kmeans_fit(values, n_clusters, n_init=10, seed=None) -> LloydKMeans:
    """Fit k-means on ensemble rows and return the fitted model."""
    return LloydKMeans(n_clusters=n_clusters, n_init=n_init, random_state=seed).fit(values)


def kmeans_assign(model: LloydKMeans, values) -> np.ndarray:
    """Nearest-centroid labels for new rows (ties toward the lowest index)."""
    return model.predict(values)
