"""Solvers for the non-local limit SDE and its analytic moment flows.

The limit ``dX = [delta + (E X(t) - X) phi(L(X(t)))] dt + 2 sqrt(X) dW`` is
approximated by a large self-interacting ensemble (``mean_field="empirical"``)
or by the same ensemble with the exact mean flow ``m_lambda + delta t`` in the
drift (``mean_field="exact"``, the reduced form when delta = 0).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .measures import EmpiricalMeasure, MeasurePath, fmt
from .model import ModelSpec
from .particles import ControlSpec, NumericalError, _run
from .sde import SchemeConfig, n_steps

__all__ = [
    "LawPath",
    "PicardDivergence",
    "monotonicity_time",
    "picard_iterate",
    "solve_selfconsistent",
    "variance_closed_form",
    "variance_ode",
]


class PicardDivergence(NumericalError):
    def __init__(self, gaps):
        self.gaps = list(gaps)
        super().__init__(f"Picard iteration did not converge; last gap {self.gaps[-1]:.3e}")


@dataclass(frozen=True)
class LawPath:
    """N-sample approximation of the marginal laws of the limit process."""

    grid: np.ndarray
    states: np.ndarray = field(repr=False)  # (N, K)
    phi_path: np.ndarray
    mean_path: np.ndarray
    var_path: np.ndarray
    step_grid: np.ndarray = field(repr=False, default=None)
    step_phi: np.ndarray = field(repr=False, default=None)
    step_mean: np.ndarray = field(repr=False, default=None)
    iterations: int = 1
    gaps: tuple = ()

    @property
    def N(self) -> int:
        return self.states.shape[0]

    @property
    def measure_path(self) -> MeasurePath:
        return MeasurePath.from_states(self.grid, self.states)

    def measure(self, k: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.states[:, k])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write("t,mean,var,phi,q05,q50,q95\n")
        qs = np.quantile(self.states, [0.05, 0.5, 0.95], axis=0)
        for k, t in enumerate(self.grid):
            row = (t, self.mean_path[k], self.var_path[k], self.phi_path[k], *qs[:, k])
            buf.write(",".join(fmt(v) for v in row) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _auto_save_every(T: float, dt: float, target: int = 200) -> int:
    M = n_steps(T, dt)
    return max(1, M // target)


def _law_from_batch(batch, iterations=1, gaps=()) -> LawPath:
    states = batch.states[0]
    idx = np.searchsorted(batch.step_grid, batch.grid - 1e-12)
    return LawPath(
        grid=batch.grid,
        states=states,
        phi_path=batch.phi_path[0][idx],
        mean_path=states.mean(axis=0),
        var_path=states.var(axis=0),
        step_grid=batch.step_grid,
        step_phi=batch.phi_path[0],
        step_mean=batch.mean_path[0],
        iterations=iterations,
        gaps=tuple(gaps),
    )


def solve_selfconsistent(
    spec: ModelSpec,
    N: int,
    cfg: SchemeConfig,
    T: float,
    *,
    mean_field: str = "empirical",
    save_every: int | None = None,
    control: ControlSpec | None = None,
) -> LawPath:
    """Approximate the law flow by an N-particle self-interacting ensemble."""
    if N < 100:
        raise ValueError("ensemble size N must be at least 100")
    if save_every is None:
        save_every = _auto_save_every(T, cfg.dt)
    x0 = spec.initial_law.configuration(N)
    batch = _run(x0[None, :], spec, cfg, T, [cfg.stream_id], mean_field=mean_field, control=control, save_every=save_every)
    return _law_from_batch(batch)


def picard_iterate(
    spec: ModelSpec,
    N: int,
    cfg: SchemeConfig,
    T: float,
    tol: float,
    max_iter: int = 50,
    *,
    mean_field: str = "exact",
    save_every: int | None = None,
) -> LawPath:
    """Fixed point of the frozen-flow map on (mean path, phi path).

    Each iteration simulates N independent particles whose drift uses the
    previous iterate's mean and phi paths, with the same random stream every
    time so the map is deterministic.  Stops once the sup-over-grid d1 between
    successive sampled laws falls below ``tol``.  With ``mean_field="exact"``
    the mean path stays at ``m_lambda + delta t`` and only phi is iterated.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if save_every is None:
        save_every = _auto_save_every(T, cfg.dt)
    M = n_steps(T, cfg.dt)
    t = np.linspace(0.0, T, M + 1)
    x0 = spec.initial_law.configuration(N)
    mean_flow = spec.m_lambda + spec.delta * t
    phi_flow = np.full(M + 1, spec.phi(x0))
    prev = None
    gaps: list[float] = []
    for it in range(1, max_iter + 1):
        batch = _run(x0[None, :], spec, cfg, T, [cfg.stream_id], frozen=(mean_flow, phi_flow), save_every=save_every)
        sample = batch.states[0]
        if prev is not None:
            srt_a = np.sort(prev, axis=0)
            srt_b = np.sort(sample, axis=0)
            gaps.append(float(np.abs(srt_a - srt_b).mean(axis=0).max()))
            if gaps[-1] < tol:
                return _law_from_batch(batch, iterations=it, gaps=gaps)
        prev = sample
        phi_flow = batch.phi_path[0].copy()
        if mean_field == "empirical":
            mean_flow = batch.mean_path[0].copy()
    raise PicardDivergence(gaps or [math.inf])


def _mean_on_grid(m_lambda, grid: np.ndarray) -> np.ndarray:
    m = np.asarray(m_lambda, dtype=float)
    return np.broadcast_to(m, grid.shape).astype(float)


def variance_closed_form(phi_path, m_lambda, grid) -> np.ndarray:
    """``V(t) = int_0^t 4 m(s) exp(-2 int_s^t phi) ds`` on the grid.

    Inside each cell phi is replaced by its trapezoid average and m by its
    linear interpolant; the resulting exponential integrals are done exactly,
    which is exact for constant phi.  ``m_lambda`` may be a scalar or a mean
    path on the grid.
    """
    grid = np.asarray(grid, dtype=float)
    phi = np.broadcast_to(np.asarray(phi_path, dtype=float), grid.shape)
    if np.any(phi < 0):
        raise ValueError("phi must be non-negative")
    m = _mean_on_grid(m_lambda, grid)
    V = np.zeros_like(grid)
    for k in range(1, grid.size):
        h = grid[k] - grid[k - 1]
        c = phi[k - 1] + phi[k]  # 2 * cell average
        a = c * h
        # int_0^h (m0 + (m1 - m0) s / h) exp(-c (h - s)) ds
        if a > 1e-8:
            e = math.exp(-a)
            i0 = -math.expm1(-a) / c
            i1 = (h - i0) / c  # int_0^h s exp(-c (h - s)) ds
        else:
            e = math.exp(-a)
            i0 = h * (1 - a / 2 + a * a / 6)
            i1 = h * h * (0.5 - a / 6 + a * a / 24)
        V[k] = V[k - 1] * e + 4.0 * (m[k - 1] * i0 + (m[k] - m[k - 1]) * i1 / h)
    return V


def variance_ode(phi_path, m_lambda, grid) -> np.ndarray:
    """RK4 for ``V' = 4 m(t) - 2 phi(t) V``, ``V(0) = 0``; phi and m linear between nodes."""
    grid = np.asarray(grid, dtype=float)
    phi = np.broadcast_to(np.asarray(phi_path, dtype=float), grid.shape)
    if np.any(phi < 0):
        raise ValueError("phi must be non-negative")
    m = _mean_on_grid(m_lambda, grid)
    V = np.zeros_like(grid)

    def rhs(v, p, mm):
        return 4.0 * mm - 2.0 * p * v

    for k in range(1, grid.size):
        h = grid[k] - grid[k - 1]
        p0, p1 = phi[k - 1], phi[k]
        m0, m1 = m[k - 1], m[k]
        pm, mm = 0.5 * (p0 + p1), 0.5 * (m0 + m1)
        v = V[k - 1]
        k1 = rhs(v, p0, m0)
        k2 = rhs(v + 0.5 * h * k1, pm, mm)
        k3 = rhs(v + 0.5 * h * k2, pm, mm)
        k4 = rhs(v + h * k3, p1, m1)
        V[k] = v + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
    return V


def monotonicity_time(phi_path, m_lambda, grid) -> float | None:
    """First grid time with ``phi V >= 2 m``; the variance grows strictly before it."""
    grid = np.asarray(grid, dtype=float)
    phi = np.broadcast_to(np.asarray(phi_path, dtype=float), grid.shape)
    m = _mean_on_grid(m_lambda, grid)
    V = variance_ode(phi, m, grid)
    hit = np.nonzero((phi * V >= 2.0 * m)[1:])[0]
    if hit.size == 0:
        return None
    k = int(hit[0]) + 1
    if np.any(np.diff(V[:k]) < -1e-12 * max(1.0, float(V[:k].max()))):
        raise NumericalError("variance decreased before the monotonicity time")
    return float(grid[k])
