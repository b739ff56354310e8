"""Adaptive piecewise-linear spline filtering of noisy time series.

Each raw series is approximated by a free-knot piecewise-linear spline whose
interior knot locations and all knot values are fit by bound-constrained
nonlinear least squares.  The knot count is grown adaptively until the
filtered samples (spline values at uniform filter times) stop changing, then
the filtered samples stand in for the raw series downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .errors import NumericalError, ValidationError
from .timeseries import TimeGrid, TimeSeriesEnsemble


@dataclass(frozen=True)
class SplineModel:
    """Piecewise-linear interpolant through (knot_times, knot_values)."""

    knot_times: np.ndarray
    knot_values: np.ndarray

    def __post_init__(self):
        kt = np.asarray(self.knot_times, dtype=float)
        kv = np.asarray(self.knot_values, dtype=float)
        if kt.size < 2 or kt.size != kv.size:
            raise ValidationError("need matching knot times/values with at least two knots")
        if not kt[0] < kt[-1]:
            raise ValidationError("first knot time must precede the last")
        if kt.min() < kt[0] or kt.max() > kt[-1]:
            raise ValidationError("interior knots must lie within the end knots")
        if np.any(np.diff(kt) < 0):
            raise ValidationError("knot times must be sorted")
        object.__setattr__(self, "knot_times", kt)
        object.__setattr__(self, "knot_values", kv)

    def __call__(self, t):
        return eval_spline(self, t)


def eval_spline(spline: SplineModel, t):
    """Evaluate the spline; t must lie within [first knot, last knot]."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < spline.knot_times[0]) or np.any(t_arr > spline.knot_times[-1]):
        raise ValidationError("evaluation point outside the spline support")
    out = np.interp(t_arr, spline.knot_times, spline.knot_values)
    return float(out) if np.isscalar(t) or t_arr.ndim == 0 else out


@dataclass(frozen=True)
class FilterConfig:
    """Window indices, filter sampling, and knot-adaptation controls.

    Indices are zero-based positions into the raw time grid; the window is
    inclusive on both ends.  `opt_tol` is the relative-residual-change
    stopping tolerance of the inner least-squares solver.
    """

    time_start_idx: int
    time_end_idx: int
    num_filter_obs: int
    tol: float = 5e-2
    min_knots: int = 3
    max_knots: int = 12
    opt_tol: float = 1e-8

    def __post_init__(self):
        if self.time_start_idx < 0 or self.time_end_idx <= self.time_start_idx:
            raise ValidationError("need 0 <= time_start_idx < time_end_idx")
        if self.num_filter_obs < 2:
            raise ValidationError("num_filter_obs must be at least 2")
        if self.tol <= 0:
            raise ValidationError("tol must be positive")
        if self.min_knots < 2:
            raise ValidationError("min_knots must be at least 2")
        if self.max_knots < self.min_knots:
            raise ValidationError("max_knots must be >= min_knots")
        if self.opt_tol <= 0:
            raise ValidationError("opt_tol must be positive")


@dataclass(frozen=True)
class FilteredEnsemble:
    """Spline samples of every series at shared uniform filter times."""

    filter_times: np.ndarray
    values: np.ndarray
    knots_used: np.ndarray
    converged: np.ndarray
    kind: str = "predicted"

    def __post_init__(self):
        ft = np.asarray(self.filter_times, dtype=float)
        vals = np.atleast_2d(np.asarray(self.values, dtype=float))
        if vals.shape[1] != ft.size:
            raise ValidationError("filtered values do not match filter times")
        spacing = np.diff(ft)
        if ft.size > 2 and not np.allclose(spacing, spacing[0], rtol=1e-9, atol=0):
            raise ValidationError("filter times must be uniformly spaced")
        object.__setattr__(self, "filter_times", ft)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "knots_used", np.asarray(self.knots_used, dtype=int))
        object.__setattr__(self, "converged", np.asarray(self.converged, dtype=bool))

    @property
    def n_series(self) -> int:
        return self.values.shape[0]

    def to_ensemble(self) -> TimeSeriesEnsemble:
        """Re-express as an ensemble on the filter-time grid (CSV-exportable)."""
        return TimeSeriesEnsemble(TimeGrid(self.filter_times), self.values, self.kind)


def _knots_from_params(t0: float, t1: float, tau: np.ndarray, dt: float) -> np.ndarray:
    """Assemble the sorted knot vector, separating near-coincident knots."""
    knots = np.concatenate(([t0], np.sort(tau), [t1]))
    span = t1 - t0
    if np.any(np.diff(knots) < 1e-12 * span):
        knots = knots.copy()
        for i in range(1, knots.size):
            lo = knots[i - 1] + dt
            if knots[i] < lo:
                knots[i] = lo
        np.minimum(knots, t1, out=knots)
        knots[-1] = t1
    return knots


def fit_spline(raw_times, raw_values, m: int, seed=None, opt_tol: float = 1e-8):
    """Least-squares free-knot spline fit with m knots over the given window.

    End knots are pinned to the window endpoints; interior knot times are
    bound-constrained to the window and re-sorted at every solver step.
    Returns the fitted model and its residual sum of squares.  `seed` is
    accepted for interface stability; the initialization is deterministic.
    """
    t = np.asarray(raw_times, dtype=float)
    y = np.asarray(raw_values, dtype=float)
    if t.ndim != 1 or t.shape != y.shape:
        raise ValidationError("raw_times and raw_values must be matching 1-D arrays")
    if m < 2:
        raise ValidationError("need at least two knots")
    if t.size < 2 * m:
        raise ValidationError(f"window of {t.size} points cannot identify {m} knots")
    if not np.all(np.diff(t) > 0):
        raise ValidationError("raw window times must be strictly increasing")

    t0, t1 = t[0], t[-1]
    dt = (t1 - t0) / (t.size - 1)
    n_interior = m - 2
    rows = np.arange(t.size)

    def resid(theta):
        knots = _knots_from_params(t0, t1, theta[:n_interior], dt)
        return y - np.interp(t, knots, theta[n_interior:])

    def jac(theta):
        tau = theta[:n_interior]
        order = np.argsort(tau, kind="stable")
        knots = _knots_from_params(t0, t1, tau, dt)
        vals = theta[n_interior:]
        seg = np.clip(np.searchsorted(knots, t, side="right") - 1, 0, m - 2)
        left, right = knots[seg], knots[seg + 1]
        # a zero-width segment can only hold points equal to both its ends;
        # their derivative contributions vanish, so a unit gap is safe
        gap = np.where(right > left, right - left, 1.0)
        u = (t - left) / gap
        j_mat = np.zeros((t.size, theta.size))
        j_mat[rows, n_interior + seg] = -(1.0 - u)
        j_mat[rows, n_interior + seg + 1] += -u
        if n_interior:
            dval = vals[seg + 1] - vals[seg]
            d_left = dval * (t - right) / gap**2
            d_right = -dval * (t - left) / gap**2
            # a segment endpoint contributes only when it is an interior knot;
            # sorted interior position j maps back to parameter column order[j]
            has_left = seg >= 1
            cols_left = order[np.clip(seg - 1, 0, n_interior - 1)]
            j_mat[rows[has_left], cols_left[has_left]] += -d_left[has_left]
            has_right = seg + 1 <= m - 2
            cols_right = order[np.clip(seg, 0, n_interior - 1)]
            j_mat[rows[has_right], cols_right[has_right]] += -d_right[has_right]
        return j_mat

    tau0 = np.linspace(t0, t1, m)[1:-1]
    knots0 = np.concatenate(([t0], tau0, [t1]))
    vals0 = np.interp(knots0, t, y)
    theta0 = np.concatenate([tau0, vals0])

    y_scale = np.abs(y).mean() or 1.0
    x_scale = np.concatenate([np.full(n_interior, t1 - t0), np.full(m, y_scale)])
    lower = np.concatenate([np.full(n_interior, t0), np.full(m, -np.inf)])
    upper = np.concatenate([np.full(n_interior, t1), np.full(m, np.inf)])

    result = least_squares(
        resid,
        theta0,
        jac=jac,
        bounds=(lower, upper),
        method="trf",
        ftol=opt_tol,
        xtol=opt_tol,
        gtol=1e-14,
        x_scale=x_scale,
    )
    if not np.all(np.isfinite(result.x)):
        raise NumericalError("spline optimizer produced a non-finite iterate")
    # knot values are attached to sorted knot positions, so they carry over
    # unpermuted once the knot vector is assembled
    knots = _knots_from_params(t0, t1, result.x[:n_interior], dt)
    spline = SplineModel(knots, result.x[n_interior:])
    return spline, float(2.0 * result.cost)


def filter_series(raw_times, raw_values, cfg: FilterConfig, seed=None):
    """Adaptive knot-count filtering of one series.

    Grows the knot count from `cfg.min_knots`, comparing spline samples at
    the filter times between successive knot counts; stops when the mean
    absolute change per filter point, relative to the mean magnitude of the
    raw window, falls to `cfg.tol`, or at `cfg.max_knots`.  Returns the
    filtered values, the knot count used, and the convergence flag.
    """
    t = np.asarray(raw_times, dtype=float)
    y = np.asarray(raw_values, dtype=float)
    if cfg.time_end_idx >= t.size:
        raise ValidationError("window end index past the end of the grid")
    window_t = t[cfg.time_start_idx : cfg.time_end_idx + 1]
    window_y = y[cfg.time_start_idx : cfg.time_end_idx + 1]
    if window_t.size < 2 * cfg.max_knots:
        raise ValidationError(
            f"window of {window_t.size} points cannot identify {cfg.max_knots} knots"
        )

    # mean magnitude of the raw window; an all-zero window falls back to an
    # absolute error metric instead of dividing by zero
    y_p = float(np.abs(window_y).mean()) or 1.0
    filter_times = np.linspace(window_t[0], window_t[-1], cfg.num_filter_obs)

    def fitted_samples(m):
        spline, _ = fit_spline(window_t, window_y, m, opt_tol=cfg.opt_tol)
        return np.interp(filter_times, spline.knot_times, spline.knot_values)

    if cfg.max_knots == cfg.min_knots:
        # the adaptive comparison needs two knot counts; report the single
        # available fit without claiming convergence
        return fitted_samples(cfg.min_knots), cfg.min_knots, False

    previous = fitted_samples(cfg.min_knots)
    current = fitted_samples(cfg.min_knots + 1)
    error = float(np.abs(previous - current).mean()) / y_p
    m = cfg.min_knots + 1
    while error > cfg.tol and m < cfg.max_knots:
        m += 1
        previous = current
        current = fitted_samples(m)
        error = float(np.abs(previous - current).mean()) / y_p
    return current, m, error <= cfg.tol


def filter_ensemble(ens: TimeSeriesEnsemble, cfg: FilterConfig, seed=None) -> FilteredEnsemble:
    """Filter every series of the ensemble independently."""
    times = ens.grid.times
    n = ens.n_series
    values = np.empty((n, cfg.num_filter_obs))
    knots = np.empty(n, dtype=int)
    converged = np.empty(n, dtype=bool)
    filter_times = np.linspace(
        times[cfg.time_start_idx], times[cfg.time_end_idx], cfg.num_filter_obs
    )
    for i in range(n):
        try:
            values[i], knots[i], converged[i] = filter_series(times, ens.values[i], cfg)
        except (ValidationError, NumericalError) as exc:
            raise type(exc)(f"series {i}: {exc}") from exc
    return FilteredEnsemble(
        filter_times=filter_times,
        values=values,
        knots_used=knots,
        converged=converged,
        kind=ens.kind,
    )
