"""Forward models for the desk-scale experiments.

Three systems generate the prediction/observation ensembles: a damped
harmonic oscillator (closed form), a two-species kinetic system with a Hopf
bifurcation (adaptive RK45), and an inviscid Burgers' wave probed at a fixed
location (first-order Godunov finite volume).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import solve_ivp

from .errors import NumericalError, ValidationError
from .timeseries import (
    NoiseModel,
    ParameterDist,
    ParameterSampleSet,
    TimeGrid,
    TimeSeriesEnsemble,
    add_noise,
    sample_parameters,
    subseed,
)


@dataclass(frozen=True)
class OscillatorParams:
    """Damping constant and natural frequency; release from rest at y=3."""

    c: float
    omega0: float

    Y0 = 3.0
    V0 = 0.0

    def __post_init__(self):
        if self.c <= 0 or self.omega0 <= 0:
            raise ValidationError("oscillator parameters must be positive")


def oscillator_solution(p: OscillatorParams, times) -> np.ndarray:
    """Closed-form displacement of y'' + 2c y' + w0^2 y = 0, y(0)=3, y'(0)=0."""
    t = np.asarray(times, dtype=float)
    c, w0, y0 = p.c, p.omega0, p.Y0
    disc = c * c - w0 * w0
    if disc < 0:  # under-damped
        wd = np.sqrt(-disc)
        return np.exp(-c * t) * (y0 * np.cos(wd * t) + (y0 * c / wd) * np.sin(wd * t))
    if disc == 0:  # critically damped
        return np.exp(-c * t) * (y0 + y0 * c * t)
    # over-damped: y = A e^{r1 t} + B e^{r2 t}, A + B = y0, A r1 + B r2 = 0
    root = np.sqrt(disc)
    r1, r2 = -c + root, -c - root
    a = -y0 * r2 / (r1 - r2)
    b = y0 * r1 / (r1 - r2)
    return a * np.exp(r1 * t) + b * np.exp(r2 * t)


def rk45_integrate(rhs, y_init, t_span, rtol, atol, output_times) -> np.ndarray:
    """Adaptive embedded 4(5) Runge-Kutta integration sampled at output_times.

    Returns an array of shape (n_states, n_output_times).
    """
    if rtol <= 0 or atol <= 0:
        raise ValidationError("rtol and atol must be positive")
    sol = solve_ivp(
        rhs,
        t_span,
        np.asarray(y_init, dtype=float),
        method="RK45",
        t_eval=np.asarray(output_times, dtype=float),
        rtol=rtol,
        atol=atol,
    )
    if not sol.success:
        raise NumericalError(f"integration failed: {sol.message}")
    return sol.y


@dataclass(frozen=True)
class SelkovParams:
    """Kinetic parameters of the glycolysis-type oscillator; x(0)=y(0)=1."""

    a: float
    b: float

    X0 = 1.0
    Y0 = 1.0

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValidationError("kinetic parameters must be positive")
        if 1.0 - 8.0 * self.a < 0:
            raise ValidationError("need 1 - 8a >= 0 for the bifurcation locus")


def selkov_rhs(t, z, a, b):
    x, y = z
    shifted = y + b / (a + b * b)
    xb = x + b
    coupling = xb * xb * shifted
    return (-xb + a * shifted + coupling, b - a * shifted - coupling)


def selkov_hopf_locus(a: float) -> tuple[float, float]:
    """Critical b-values between which the equilibrium sheds a periodic orbit."""
    root = np.sqrt(1.0 - 8.0 * a)
    b1 = np.sqrt((1.0 - root - 2.0 * a) / 2.0)
    b2 = np.sqrt((1.0 + root - 2.0 * a) / 2.0)
    return float(b1), float(b2)


def selkov_series(p: SelkovParams, times, rtol=1e-6, atol=1e-9) -> np.ndarray:
    """x-concentration of the kinetic system at the requested times."""
    t = np.asarray(times, dtype=float)
    span = (min(0.0, t[0]), t[-1])
    y = rk45_integrate(
        lambda tt, z: selkov_rhs(tt, z, p.a, p.b),
        (p.X0, p.Y0),
        span,
        rtol,
        atol,
        t,
    )
    return y[0]


@dataclass(frozen=True)
class BurgersSetup:
    """Ramp initial condition parameters and probe location for q_t + (q^2/2)_x = 0."""

    a: float
    probe_x: float
    f_l: float = 1.5
    f_r: float = 1.0
    domain: tuple[float, float] = (0.0, 10.0)
    cells: int = 500

    RAMP_CENTER = 3.25

    def __post_init__(self):
        if not (self.f_l > self.f_r > 0):
            raise ValidationError("need f_l > f_r > 0")
        if self.a <= 0:
            raise ValidationError("ramp half-width must be positive")
        if self.RAMP_CENTER + self.a > self.domain[1]:
            raise ValidationError("ramp extends past the right boundary")
        if not (self.domain[0] <= self.probe_x <= self.domain[1]):
            raise ValidationError("probe outside the domain")
        if self.cells < 2:
            raise ValidationError("need at least two cells")

    def initial_condition(self, x: np.ndarray) -> np.ndarray:
        left = self.RAMP_CENTER - self.a
        right = self.RAMP_CENTER + self.a
        ramp = 0.5 * (
            (self.f_l + self.f_r)
            - (self.f_l - self.f_r) * (x - self.RAMP_CENTER) / self.a
        )
        return np.where(x <= left, self.f_l, np.where(x <= right, ramp, self.f_r))

    def shock_time(self) -> float:
        """Time at which the ramp steepens into a discontinuity."""
        return 2.0 * self.a / (self.f_l - self.f_r)

    def shock_speed(self) -> float:
        return 0.5 * (self.f_l + self.f_r)


def _godunov_flux(ql: np.ndarray, qr: np.ndarray) -> np.ndarray:
    """Exact Riemann flux for the convex flux q^2/2."""
    flux_l = 0.5 * ql * ql
    flux_r = 0.5 * qr * qr
    shock = ql > qr
    s = 0.5 * (ql + qr)
    shock_flux = np.where(s > 0, flux_l, flux_r)
    # rarefaction: upwind by characteristic sign, sonic point gives zero flux
    rare_flux = np.where(ql >= 0, flux_l, np.where(qr <= 0, flux_r, 0.0))
    return np.where(shock, shock_flux, rare_flux)


def _burgers_steps(setup: BurgersSetup, t_end: float, cfl: float):
    """Yield (t_prev, t_new, q_prev, q_new) for each finite-volume step."""
    lo, hi = setup.domain
    dx = (hi - lo) / setup.cells
    centers = lo + dx * (np.arange(setup.cells) + 0.5)
    q = setup.initial_condition(centers)
    t = 0.0
    while t < t_end:
        dt = cfl * dx / np.abs(q).max()
        dt = min(dt, t_end - t)
        padded = np.concatenate(([q[0]], q, [q[-1]]))
        flux = _godunov_flux(padded[:-1], padded[1:])
        q_new = q - (dt / dx) * (flux[1:] - flux[:-1])
        yield t, t + dt, q, q_new
        q, t = q_new, t + dt


def burgers_state(setup: BurgersSetup, t_end: float, cfl=0.9):
    """Cell centers and cell averages of the finite-volume field at t_end."""
    lo, hi = setup.domain
    dx = (hi - lo) / setup.cells
    centers = lo + dx * (np.arange(setup.cells) + 0.5)
    q = setup.initial_condition(centers)
    for _, _, _, q in _burgers_steps(setup, t_end, cfl):
        pass
    return centers, q


def burgers_series(setup: BurgersSetup, output_times, cfl=0.9) -> np.ndarray:
    """Probe values of the finite-volume solution at each output time.

    First-order Godunov on a uniform mesh with non-reflecting (zero-order
    extrapolation) boundaries; probe values are the averages of the cell
    containing probe_x, interpolated linearly in time between steps.
    """
    t_out = np.asarray(output_times, dtype=float)
    if t_out.size == 0:
        return np.empty(0)
    if np.any(np.diff(t_out) <= 0):
        raise ValidationError("output times must be strictly increasing")
    if t_out[0] < 0:
        raise ValidationError("output times must be nonnegative")

    lo, hi = setup.domain
    dx = (hi - lo) / setup.cells
    probe_idx = min(int((setup.probe_x - lo) / dx), setup.cells - 1)

    out = np.empty_like(t_out)
    k = 0
    if t_out[0] <= 0.0:
        centers = lo + dx * (np.arange(setup.cells) + 0.5)
        q0 = setup.initial_condition(centers)
        while k < t_out.size and t_out[k] <= 0.0:
            out[k] = q0[probe_idx]
            k += 1
    for t, t_new, q, q_new in _burgers_steps(setup, t_out[-1], cfl):
        while k < t_out.size and t_out[k] <= t_new:
            w = (t_out[k] - t) / (t_new - t)
            out[k] = (1 - w) * q[probe_idx] + w * q_new[probe_idx]
            k += 1
        if k >= t_out.size:
            break
    return out


@dataclass(frozen=True)
class ExperimentSpec:
    """Complete description of one desk-scale data-generation setup."""

    name: str
    times: np.ndarray
    init_dists: tuple[ParameterDist, ...]
    dg_dists: tuple[ParameterDist, ...]
    n_predicted: int
    n_observed: int
    sigma: float
    noisy_predictions: bool = False
    probe_x: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))

    @property
    def bounds(self) -> tuple[tuple[float, float], ...]:
        return tuple((d.lo, d.hi) for d in self.init_dists)

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.init_dists)


EXPERIMENT_NAMES = ("oscillator", "hopf", "shock")

# Seed stream indices for the generation stage.
_STREAM_PRED_PARAMS = 1
_STREAM_OBS_PARAMS = 2
_STREAM_PRED_NOISE = 3
_STREAM_OBS_NOISE = 4


def experiment_spec(
    name: str,
    n_predicted: int | None = None,
    n_observed: int | None = None,
    sigma: float | None = None,
    probe_x: float | None = None,
) -> ExperimentSpec:
    """Default configuration for a named experiment, with optional overrides."""
    if name == "oscillator":
        spec = ExperimentSpec(
            name=name,
            times=1.0 + 0.01 * np.arange(501),
            init_dists=(
                ParameterDist("c", 0.1, 1.0, "uniform"),
                ParameterDist("omega0", 0.5, 1.0, "uniform"),
            ),
            dg_dists=(
                ParameterDist("c", 0.1, 1.0, "beta", 2.0, 2.0),
                ParameterDist("omega0", 0.5, 1.0, "beta", 2.0, 2.0),
            ),
            n_predicted=2000,
            n_observed=300,
            sigma=0.25,
        )
    elif name == "hopf":
        spec = ExperimentSpec(
            name=name,
            times=np.linspace(0.0, 6.5, 651),
            init_dists=(
                ParameterDist("a", 0.01, 0.124, "uniform"),
                ParameterDist("b", 0.05, 1.5, "uniform"),
            ),
            dg_dists=(
                ParameterDist("a", 0.01, 0.124, "beta", 2.0, 2.0),
                ParameterDist("b", 0.05, 1.5, "beta", 2.0, 2.0),
            ),
            n_predicted=3000,
            n_observed=500,
            sigma=0.0125,
        )
    elif name == "shock":
        # the stated grid has 1000 evenly spaced times over [0, 10]
        spec = ExperimentSpec(
            name=name,
            times=np.linspace(0.0, 10.0, 1000),
            init_dists=(ParameterDist("a", 0.75, 3.0, "uniform"),),
            dg_dists=(ParameterDist("a", 0.75, 3.0, "beta", 2.0, 2.0),),
            n_predicted=1000,
            n_observed=500,
            sigma=0.025,
            noisy_predictions=True,
            probe_x=6.5,
        )
    else:
        raise ValidationError(f"unknown experiment {name!r}; choose from {EXPERIMENT_NAMES}")
    overrides = {}
    if n_predicted is not None:
        overrides["n_predicted"] = int(n_predicted)
    if n_observed is not None:
        overrides["n_observed"] = int(n_observed)
    if sigma is not None:
        overrides["sigma"] = float(sigma)
    if probe_x is not None:
        if name != "shock":
            raise ValidationError("probe_x applies to the shock experiment only")
        overrides["probe_x"] = float(probe_x)
    return replace(spec, **overrides) if overrides else spec


def _solve_rows(spec: ExperimentSpec, params: ParameterSampleSet) -> np.ndarray:
    rows = np.empty((params.n_samples, spec.times.size))
    if spec.name == "oscillator":
        for i, (c, w0) in enumerate(params.samples):
            rows[i] = oscillator_solution(OscillatorParams(c, w0), spec.times)
    elif spec.name == "hopf":
        for i, (a, b) in enumerate(params.samples):
            rows[i] = selkov_series(SelkovParams(a, b), spec.times)
    elif spec.name == "shock":
        for i, (a,) in enumerate(params.samples):
            setup = BurgersSetup(a=a, probe_x=spec.probe_x)
            rows[i] = burgers_series(setup, spec.times)
    else:  # pragma: no cover - spec construction already validates
        raise ValidationError(f"unknown experiment {spec.name!r}")
    return rows


@dataclass(frozen=True)
class GeneratedExperiment:
    spec: ExperimentSpec
    predicted: TimeSeriesEnsemble
    observed: TimeSeriesEnsemble
    predicted_params: ParameterSampleSet
    observed_params: ParameterSampleSet


def generate_experiment(spec: ExperimentSpec, seed: int) -> GeneratedExperiment:
    """Draw parameters, solve the forward model, and apply the noise model.

    Predicted samples come from the initial (uniform) distributions and
    observed samples from the data-generating (Beta) distributions.
    """
    pred_params = sample_parameters(
        spec.init_dists, spec.n_predicted, subseed(seed, _STREAM_PRED_PARAMS)
    )
    obs_params = sample_parameters(
        spec.dg_dists, spec.n_observed, subseed(seed, _STREAM_OBS_PARAMS)
    )
    grid = TimeGrid(spec.times)
    predicted = TimeSeriesEnsemble(grid, _solve_rows(spec, pred_params), "predicted")
    observed = TimeSeriesEnsemble(grid, _solve_rows(spec, obs_params), "observed")
    if spec.noisy_predictions and spec.sigma > 0:
        predicted = add_noise(
            predicted, NoiseModel(spec.sigma, subseed(seed, _STREAM_PRED_NOISE))
        )
    if spec.sigma > 0:
        observed = add_noise(
            observed, NoiseModel(spec.sigma, subseed(seed, _STREAM_OBS_NOISE))
        )
    return GeneratedExperiment(spec, predicted, observed, pred_params, obs_params)
