"""Ensemble data model, CSV interchange, noise model, and parameter sampling.

An ensemble is a dense rectangular matrix of N series observed on one shared
time grid.  All types here are treated as immutable after construction and
every operation is a pure function of its inputs and an explicit seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError

EnsembleKind = str  # "predicted" | "observed"

_KINDS = ("predicted", "observed")


def _fmt(x: float) -> str:
    # repr of a Python float is the shortest string that round-trips exactly
    return repr(float(x))


def subseed(seed: int, stream: int) -> int:
    """Derive an independent, reproducible integer seed for one RNG stream."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing observation times shared by every series."""

    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise ValidationError("time grid needs at least two time stamps")
        if not np.all(np.isfinite(times)):
            raise ValidationError("time grid contains non-finite entries")
        if not np.all(np.diff(times) > 0):
            raise ValidationError("time grid must be strictly increasing")
        object.__setattr__(self, "times", times)

    def __len__(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class TimeSeriesEnsemble:
    """N series of n values each, row i holding series i on the shared grid."""

    grid: TimeGrid
    values: np.ndarray
    kind: EnsembleKind

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if values.shape[1] != len(self.grid):
            raise ValidationError(
                f"series length {values.shape[1]} does not match grid length {len(self.grid)}"
            )
        if not np.all(np.isfinite(values)):
            raise ValidationError("ensemble contains non-finite values")
        if self.kind not in _KINDS:
            raise ValidationError(f"kind must be one of {_KINDS}, got {self.kind!r}")
        object.__setattr__(self, "values", values)

    @property
    def n_series(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ParameterSampleSet:
    """Rows of parameter samples, one column per named parameter."""

    names: tuple[str, ...]
    samples: np.ndarray
    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        names = tuple(self.names)
        samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if len(names) < 1:
            raise ValidationError("need at least one parameter")
        if samples.shape[1] != len(names):
            raise ValidationError("sample columns do not match parameter names")
        if len(bounds) != len(names):
            raise ValidationError("bounds do not match parameter names")
        for j, (lo, hi) in enumerate(bounds):
            if not lo < hi:
                raise ValidationError(f"bounds for {names[j]!r} must satisfy lo < hi")
            col = samples[:, j]
            if col.size and (col.min() < lo or col.max() > hi):
                raise ValidationError(f"samples for {names[j]!r} fall outside [{lo}, {hi}]")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "bounds", bounds)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class NoiseModel:
    """Additive i.i.d. Gaussian measurement error with standard deviation sigma."""

    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValidationError("sigma must be nonnegative")


@dataclass(frozen=True)
class ParameterDist:
    """Marginal sampling distribution for one parameter over [lo, hi]."""

    name: str
    lo: float
    hi: float
    dist: str = "uniform"  # "uniform" | "beta"
    alpha: float = field(default=1.0)
    beta: float = field(default=1.0)

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValidationError(f"{self.name}: lo must be < hi")
        if self.dist not in ("uniform", "beta"):
            raise ValidationError(f"{self.name}: unknown distribution {self.dist!r}")
        if self.dist == "beta" and (self.alpha <= 0 or self.beta <= 0):
            raise ValidationError(f"{self.name}: beta shape parameters must be positive")

    def draw(self, count: int, rng: np.random.Generator) -> np.ndarray:
        if self.dist == "uniform":
            return rng.uniform(self.lo, self.hi, count)
        unit = rng.beta(self.alpha, self.beta, count)
        return self.lo + (self.hi - self.lo) * unit

    def pdf(self, x: np.ndarray) -> np.ndarray:
        """Exact density of the mapped distribution, zero outside [lo, hi]."""
        x = np.asarray(x, dtype=float)
        width = self.hi - self.lo
        inside = (x >= self.lo) & (x <= self.hi)
        if self.dist == "uniform":
            return np.where(inside, 1.0 / width, 0.0)
        from math import lgamma

        a, b = self.alpha, self.beta
        lognorm = lgamma(a + b) - lgamma(a) - lgamma(b)
        u = np.clip((x - self.lo) / width, 1e-300, 1.0 - 1e-16)
        logpdf = lognorm + (a - 1) * np.log(u) + (b - 1) * np.log1p(-u) - np.log(width)
        return np.where(inside, np.exp(logpdf), 0.0)


def add_noise(ens: TimeSeriesEnsemble, noise: NoiseModel) -> TimeSeriesEnsemble:
    """Perturb every entry by an independent N(0, sigma^2) draw."""
    if noise.sigma == 0:
        return ens
    rng = np.random.default_rng(subseed(noise.seed, 0))
    eta = rng.normal(0.0, noise.sigma, size=ens.values.shape)
    return TimeSeriesEnsemble(grid=ens.grid, values=ens.values + eta, kind=ens.kind)


def sample_parameters(dists, count: int, seed: int) -> ParameterSampleSet:
    """Draw `count` i.i.d. samples for each parameter distribution."""
    dists = list(dists)
    if count < 1:
        raise ValidationError("count must be positive")
    rng = np.random.default_rng(subseed(seed, 0))
    cols = [d.draw(count, rng) for d in dists]
    return ParameterSampleSet(
        names=tuple(d.name for d in dists),
        samples=np.column_stack(cols),
        bounds=tuple((d.lo, d.hi) for d in dists),
    )


def load_ensemble(path, kind: EnsembleKind) -> TimeSeriesEnsemble:
    """Read an ensemble CSV: header `t,<t_1>,...`, one series per row."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if not header or header[0] != "t":
            raise FormatError(f"{path}: first header cell must be 't'")
        try:
            times = np.array([float(v) for v in header[1:]], dtype=float)
        except ValueError as exc:
            raise FormatError(f"{path}: unparseable time stamp in header: {exc}") from None
        rows = []
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise FormatError(
                    f"{path}:{lineno}: row has {len(row)} cells, expected {width}"
                )
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: unparseable value: {exc}") from None
    if not rows:
        raise FormatError(f"{path}: no series rows")
    return TimeSeriesEnsemble(grid=TimeGrid(times), values=np.array(rows), kind=kind)


def save_ensemble(ens: TimeSeriesEnsemble, path) -> None:
    """Write an ensemble in the CSV interchange layout (round-trips exactly)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + [_fmt(t) for t in ens.grid.times])
        for i, row in enumerate(ens.values):
            writer.writerow([str(i)] + [_fmt(v) for v in row])


def load_parameters(path, bounds=None) -> ParameterSampleSet:
    """Read a parameter CSV: header of names, one sample per row.

    Bounds are not stored in the CSV; pass them explicitly or the observed
    min/max of each column is used.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            names = tuple(next(reader))
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(names):
                raise FormatError(
                    f"{path}:{lineno}: row has {len(row)} cells, expected {len(names)}"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: unparseable value: {exc}") from None
    if not rows:
        raise FormatError(f"{path}: no sample rows")
    samples = np.array(rows)
    if bounds is None:
        bounds = tuple((samples[:, j].min(), samples[:, j].max()) for j in range(len(names)))
    return ParameterSampleSet(names=names, samples=samples, bounds=tuple(bounds))


def save_parameters(params: ParameterSampleSet, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(params.names))
        for row in params.samples:
            writer.writerow([_fmt(v) for v in row])
