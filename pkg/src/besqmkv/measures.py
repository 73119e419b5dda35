"""Empirical measures on [0, inf), Wasserstein-1 distances and test statistics."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

__all__ = [
    "EmpiricalMeasure",
    "GammaParams",
    "IncomparableMeasures",
    "MeasurePath",
    "gamma_cdf",
    "ks_statistic",
    "moment",
    "path_distance",
    "wasserstein1",
]

SUMMARY_HEADER = ("t", "q01", "q05", "q25", "q50", "q75", "q95", "q99", "mean", "var")
_SUMMARY_LEVELS = (0.01, 0.05, 0.25, 0.50, 0.75, 0.95, 0.99)


class IncomparableMeasures(ValueError):
    pass


def fmt(value: float) -> str:
    """Nine significant digits, the precision every CSV in the package uses."""
    return f"{float(value):.9g}"


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniform-weight atoms on [0, inf), stored sorted ascending."""

    atoms: np.ndarray

    def __init__(self, atoms: Sequence[float] | np.ndarray):
        arr = np.sort(np.asarray(atoms, dtype=float).ravel())
        if arr.size < 1:
            raise ValueError("an empirical measure needs at least one atom")
        if not np.all(np.isfinite(arr)):
            raise ValueError("atoms must be finite")
        if arr[0] < 0:
            raise ValueError(f"atoms must be non-negative, got {arr[0]!r}")
        arr.setflags(write=False)
        object.__setattr__(self, "atoms", arr)

    @classmethod
    def _from_sorted(cls, atoms: np.ndarray) -> EmpiricalMeasure:
        obj = object.__new__(cls)
        arr = np.asarray(atoms, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(obj, "atoms", arr)
        return obj

    @property
    def n(self) -> int:
        return int(self.atoms.size)

    def mean(self) -> float:
        return float(self.atoms.mean())

    def var(self) -> float:
        return float(self.atoms.var())

    def quantile(self, q) -> np.ndarray:
        return np.quantile(self.atoms, q)

    def cdf(self, x) -> np.ndarray:
        return np.searchsorted(self.atoms, x, side="right") / self.n

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmpiricalMeasure):
            return NotImplemented
        return self.n == other.n and bool(np.array_equal(self.atoms, other.atoms))

    def __hash__(self) -> int:
        return hash(self.atoms.tobytes())


@dataclass(frozen=True)
class GammaParams:
    """Gamma law with scale ``a`` and shape ``b`` (mean ``a * b``)."""

    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and math.isfinite(self.a) and math.isfinite(self.b)):
            raise ValueError(f"Gamma parameters must be positive and finite, got a={self.a}, b={self.b}")

    @property
    def mean(self) -> float:
        return self.a * self.b

    @property
    def var(self) -> float:
        return self.a * self.a * self.b

    def cdf(self, x):
        return gamma_cdf(x, self)

    def quantiles(self, k: int) -> np.ndarray:
        """Midpoint quantiles ``F^{-1}((j + 1/2) / k)``, j = 0..k-1."""
        levels = (np.arange(k) + 0.5) / k
        return self.a * special.gammaincinv(self.b, levels)


def gamma_cdf(x, params: GammaParams):
    # scipy's gammainc switches between the series and the continued fraction
    # at x ~ b + 1, which is the split we want for accuracy.
    z = np.maximum(np.asarray(x, dtype=float), 0.0) / params.a
    return special.gammainc(params.b, z)


def _lift(mu: EmpiricalMeasure, n: int) -> np.ndarray:
    k = n // mu.n
    return np.repeat(mu.atoms, k)


def wasserstein1(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact d1 between uniform atom measures through the sorted coupling.

    Equal atom counts are the normal case.  A reference ensemble whose size is
    an integer multiple of the other is also accepted: repeating every atom of
    the smaller measure k times leaves the measure unchanged, so the sorted
    coupling stays exact.
    """
    if mu.n == nu.n:
        x, y = mu.atoms, nu.atoms
    elif mu.n > nu.n and mu.n % nu.n == 0:
        x, y = mu.atoms, _lift(nu, mu.n)
    elif nu.n > mu.n and nu.n % mu.n == 0:
        x, y = _lift(mu, nu.n), nu.atoms
    else:
        raise IncomparableMeasures(f"incomparable measures: {mu.n} vs {nu.n} atoms")
    return float(np.abs(x - y).mean())


def moment(mu: EmpiricalMeasure, p: float) -> float:
    if not p > 0:
        raise ValueError("moment order must be positive")
    return float(np.mean(mu.atoms**p))


def ks_statistic(mu: EmpiricalMeasure, target: GammaParams) -> float:
    """Kolmogorov-Smirnov distance between ``mu`` and a Gamma law."""
    x = mu.atoms
    F = gamma_cdf(x, target)
    n = mu.n
    # The empirical CDF jumps at each atom; check both sides of every jump.
    upper = np.arange(1, n + 1) / n - F
    lower = F - np.arange(n) / n
    return float(max(upper.max(), lower.max(), 0.0))


@dataclass(frozen=True)
class MeasurePath:
    """A path of empirical marginals on a time grid from 0 to T."""

    grid: np.ndarray
    measures: tuple[EmpiricalMeasure, ...] = field(repr=False)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        if grid.ndim != 1 or grid.size < 1:
            raise ValueError("grid must be a non-empty 1-D array")
        if grid[0] != 0.0:
            raise ValueError("grid must start at 0")
        if grid.size > 1 and np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if len(self.measures) != grid.size:
            raise ValueError("need exactly one measure per grid node")
        sizes = {m.n for m in self.measures}
        if len(sizes) != 1:
            raise ValueError("all measures on a path must share the atom count")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "measures", tuple(self.measures))

    @classmethod
    def from_states(cls, grid, states: np.ndarray) -> MeasurePath:
        """Build from an ``(n, K)`` array holding one column per grid node."""
        cols = np.sort(np.asarray(states, dtype=float), axis=0)
        if cols.size and cols[0].min() < 0:
            raise ValueError("states must be non-negative")
        return cls(grid, tuple(EmpiricalMeasure._from_sorted(cols[:, k]) for k in range(cols.shape[1])))

    @property
    def n(self) -> int:
        return self.measures[0].n

    @property
    def T(self) -> float:
        return float(self.grid[-1])

    def mean_path(self) -> np.ndarray:
        return np.array([m.mean() for m in self.measures])

    def var_path(self) -> np.ndarray:
        return np.array([m.var() for m in self.measures])

    def summary_rows(self):
        for t, m in zip(self.grid, self.measures):
            qs = np.quantile(m.atoms, _SUMMARY_LEVELS)
            yield (t, *qs, m.mean(), m.var())

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(",".join(SUMMARY_HEADER) + "\n")
        for row in self.summary_rows():
            buf.write(",".join(fmt(v) for v in row) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def path_distance(a: MeasurePath, b: MeasurePath) -> float:
    """Sup over grid nodes of d1, the uniform metric on marginal paths."""
    if a.grid.shape != b.grid.shape or not np.allclose(a.grid, b.grid, rtol=0, atol=1e-12):
        raise ValueError("grid mismatch")
    return max(wasserstein1(x, y) for x, y in zip(a.measures, b.measures))
