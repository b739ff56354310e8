"""Kernel density estimation, density ratios, and the observation-consistent
parameter update.

The observed and predicted QoI samples of every cluster get Gaussian product
KDEs; the pointwise ratio of the two densities at the predicted samples,
together with the observed cluster weights, reweights the initial parameter
samples into the updated density.  The mean ratio per cluster is the
standard consistency diagnostic (it estimates 1 when the densities are
accurate).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .errors import ValidationError
from .timeseries import ParameterSampleSet, subseed

_DENSITY_FLOOR = 1e-300
_CHUNK_ELEMENTS = 4_000_000


class GaussianKde(BaseEstimator):
    """Weighted Gaussian product-kernel density estimate.

    Per-dimension bandwidths follow Scott's rule scaled by the effective
    sample size: h_j = sigma_j * n_eff**(-1/(d+4)); degenerate dimensions
    get a floored bandwidth so the estimate stays defined.
    """

    def fit(self, X, weights=None):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n, d = X.shape
        if n < 2:
            raise ValidationError("KDE needs at least two samples")
        if weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.asarray(weights, dtype=float)
            if w.shape != (n,):
                raise ValidationError("weights must match the sample count")
            if np.any(w < 0):
                raise ValidationError("weights must be nonnegative")
            total = w.sum()
            if total <= 0:
                raise ValidationError("weights must not all be zero")
            w = w / total
        self.samples_ = X
        self.weights_ = w
        self.neff_ = 1.0 / float(np.sum(w * w))

        mean = w @ X
        centered = X - mean
        biased_var = w @ (centered * centered)
        denom = 1.0 - float(np.sum(w * w))
        var = biased_var / denom if denom > 1e-12 else biased_var
        sigma = np.sqrt(var)
        h = sigma * self.neff_ ** (-1.0 / (d + 4))
        span = X.max(axis=0) - X.min(axis=0)
        floor = 1e-6 * np.where(span > 0, span, 1.0)
        self.bandwidths_ = np.maximum(h, floor)
        return self

    def evaluate(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        scalar_input = pts.ndim == 0
        if pts.ndim <= 1 and self.samples_.shape[1] == 1:
            pts = np.atleast_1d(pts)[:, None]
        elif pts.ndim == 1:
            pts = pts[None, :]
        if pts.shape[1] != self.samples_.shape[1]:
            raise ValidationError("query dimension does not match the samples")
        n = self.samples_.shape[0]
        h = self.bandwidths_
        norm = np.prod(h * np.sqrt(2.0 * np.pi))
        out = np.empty(pts.shape[0])
        chunk = max(1, _CHUNK_ELEMENTS // n)
        for start in range(0, pts.shape[0], chunk):
            block = pts[start : start + chunk]
            z = (block[:, None, :] - self.samples_[None, :, :]) / h
            kernels = np.exp(-0.5 * np.einsum("mnd,mnd->mn", z, z))
            out[start : start + chunk] = (kernels @ self.weights_) / norm
        return float(out[0]) if scalar_input else out

    __call__ = evaluate


def kde_fit(samples, weights=None) -> GaussianKde:
    """Fit a (possibly weighted) Gaussian KDE."""
    return GaussianKde().fit(samples, weights)


@dataclass
class ClusterInversion:
    """Densities and ratio diagnostics for one dynamics cluster."""

    cluster: int
    n_pred: int
    n_obs: int
    ratios: np.ndarray
    diagnostic: float | None
    weight: float = 0.0
    predicted_kde: GaussianKde | None = None
    observed_kde: GaussianKde | None = None
    underflow_count: int = 0


@dataclass
class RatioResult:
    """Density ratios at the predicted points and their sample mean."""

    ratios: np.ndarray
    diagnostic: float
    predicted_kde: GaussianKde
    observed_kde: GaussianKde
    underflow_count: int


def compute_ratios(predicted_qoi, observed_qoi) -> RatioResult:
    """Observed/predicted KDE ratio at every predicted QoI point.

    The diagnostic is the sample mean of the ratios (estimates 1 when both
    densities are accurate); points where the predicted density underflows
    get ratio 0 and are counted.
    """
    pred = np.atleast_2d(np.asarray(predicted_qoi, dtype=float))
    obs = np.atleast_2d(np.asarray(observed_qoi, dtype=float))
    if pred.shape[0] == 0 or obs.shape[0] == 0:
        raise ValidationError("both QoI sample sets must be non-empty")
    kde_pred = GaussianKde().fit(pred)
    kde_obs = GaussianKde().fit(obs)
    p = kde_pred.evaluate(pred)
    o = kde_obs.evaluate(pred)
    dead = p < _DENSITY_FLOOR
    if dead.any():
        warnings.warn(f"{int(dead.sum())} predicted points have vanishing predicted density")
    ratios = np.where(dead, 0.0, o / np.where(dead, 1.0, p))
    return RatioResult(ratios, float(ratios.mean()), kde_pred, kde_obs, int(dead.sum()))


def cluster_weights(observed_labels, n_clusters: int) -> np.ndarray:
    """Fraction of observed series classified into each cluster."""
    labels = np.asarray(observed_labels, dtype=int)
    if labels.size == 0:
        raise ValidationError("no observed labels")
    if labels.min() < 0 or labels.max() >= n_clusters:
        raise ValidationError("labels outside [0, n_clusters)")
    counts = np.bincount(labels, minlength=n_clusters)
    return counts / labels.size


@dataclass
class InversionResult:
    """Updated-density weights over the initial samples plus diagnostics."""

    initial_samples: ParameterSampleSet
    labels: np.ndarray
    ratios: np.ndarray
    weights: np.ndarray
    clusters: list[ClusterInversion] = field(default_factory=list)
    update_weights: np.ndarray = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        self.ratios = np.asarray(self.ratios, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        n = self.initial_samples.n_samples
        if self.labels.shape != (n,) or self.ratios.shape != (n,):
            raise ValidationError("labels and ratios must align with the initial samples")
        if self.update_weights is None:
            # the ratio denominator is a normalized per-cluster KDE, but the
            # restricted predicted density it stands in for carries only the
            # cluster's share of initial mass; dividing by that share keeps
            # cluster masses observation-consistent (an identity update stays
            # the identity)
            counts = np.bincount(self.labels, minlength=self.weights.size)
            pred_fraction = counts / n
            scale = np.divide(
                self.weights, pred_fraction, out=np.zeros_like(self.weights),
                where=pred_fraction > 0,
            )
            raw = scale[self.labels] * self.ratios
            total = raw.sum()
            if total <= 0:
                raise ValidationError("every update weight is zero; nothing to invert")
            self.update_weights = raw / total

    @property
    def diagnostics(self) -> list[float | None]:
        return [c.diagnostic for c in self.clusters]

    def updated_cluster_probability(self, cluster: int) -> float:
        """Mass the updated density assigns to one cluster's parameter set."""
        return float(self.update_weights[self.labels == cluster].sum())

    def updated_marginal_kde(self, param_index: int) -> GaussianKde:
        """Weighted KDE of one parameter marginal under the updated density."""
        column = self.initial_samples.samples[:, param_index]
        return GaussianKde().fit(column, weights=self.update_weights)


def updated_density(
    init_samples: ParameterSampleSet,
    labels,
    ratios,
    weights,
    clusters: list[ClusterInversion] | None = None,
) -> InversionResult:
    """Assemble per-sample update weights: u_i scales with (w_k / p_k) r_i
    for i in cluster k, where p_k is the cluster's share of initial samples,
    normalized to sum 1."""
    return InversionResult(
        initial_samples=init_samples,
        labels=np.asarray(labels, dtype=int),
        ratios=np.asarray(ratios, dtype=float),
        weights=np.asarray(weights, dtype=float),
        clusters=clusters or [],
    )


def invert(qoi_samples, observed_labels, init_samples: ParameterSampleSet) -> InversionResult:
    """Full inversion across clusters from per-cluster QoI samples.

    Clusters whose observed side cannot support a KDE (fewer than two
    members) contribute nothing to the update and get an undefined
    diagnostic.
    """
    observed_labels = np.asarray(observed_labels, dtype=int)
    n_clusters = len(qoi_samples)
    weights = cluster_weights(observed_labels, n_clusters)
    full_labels = np.empty(init_samples.n_samples, dtype=int)
    full_ratios = np.zeros(init_samples.n_samples)
    clusters = []
    for sample_set in qoi_samples:
        k = sample_set.cluster
        full_labels[sample_set.predicted_index] = k
        if sample_set.observed.shape[0] < 2:
            if sample_set.observed.shape[0]:
                warnings.warn(
                    f"cluster {k} has a single observed member; dropping its contribution"
                )
            clusters.append(
                ClusterInversion(
                    cluster=k,
                    n_pred=sample_set.predicted.shape[0],
                    n_obs=int(sample_set.observed.shape[0]),
                    ratios=np.zeros(sample_set.predicted.shape[0]),
                    diagnostic=None,
                    weight=float(weights[k]),
                )
            )
            continue
        ratio_result = compute_ratios(sample_set.predicted, sample_set.observed)
        full_ratios[sample_set.predicted_index] = ratio_result.ratios
        clusters.append(
            ClusterInversion(
                cluster=k,
                n_pred=sample_set.predicted.shape[0],
                n_obs=sample_set.observed.shape[0],
                ratios=ratio_result.ratios,
                diagnostic=ratio_result.diagnostic,
                weight=float(weights[k]),
                predicted_kde=ratio_result.predicted_kde,
                observed_kde=ratio_result.observed_kde,
                underflow_count=ratio_result.underflow_count,
            )
        )
    return updated_density(init_samples, full_labels, full_ratios, weights, clusters)


def rejection_sample(result: InversionResult, seed: int) -> np.ndarray:
    """Indices of initial samples accepted with probability u_i / max(u)."""
    u = result.update_weights
    peak = u.max()
    if peak <= 0:
        raise ValidationError("all update weights are zero")
    rng = np.random.default_rng(subseed(seed, 0))
    draws = rng.uniform(size=u.size)
    return np.flatnonzero(draws < u / peak)


def tv_distance(p, q, support, grid_n: int = 2001, extend: float = 0.0) -> float:
    """Total variation distance via trapezoid quadrature on a uniform grid.

    `support` is the nominal interval; `extend` widens it on both sides
    (pass 3x the largest KDE bandwidth involved so leaked mass is counted).
    """
    lo, hi = float(support[0]), float(support[1])
    if not lo < hi:
        raise ValidationError("degenerate support interval")
    if grid_n < 2:
        raise ValidationError("grid_n must be at least 2")
    grid = np.linspace(lo - extend, hi + extend, grid_n)
    diff = np.abs(np.asarray(p(grid), dtype=float) - np.asarray(q(grid), dtype=float))
    tv = 0.5 * float(np.trapezoid(diff, grid))
    return float(np.clip(tv, 0.0, 1.0 + 1e-3))
