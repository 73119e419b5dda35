"""Single-path schemes for square-root diffusions and path statistics."""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .measures import fmt
from .rng import StreamRNG

__all__ = [
    "PathSample",
    "Scheme",
    "SchemeConfig",
    "TimeChange",
    "cir_transition",
    "local_time_at_zero",
    "n_steps",
    "quadratic_variation",
    "sample_besq_exact",
    "simulate_besq_path",
    "simulate_path",
    "step_full_truncation",
    "time_change_transform",
]


class Scheme(str, enum.Enum):
    FULL_TRUNCATION_EULER = "FullTruncationEuler"
    EXACT_BESQ = "ExactBesq"


@dataclass(frozen=True)
class SchemeConfig:
    dt: float
    scheme: Scheme = Scheme.FULL_TRUNCATION_EULER
    seed: int = 0
    stream_id: int = 0

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not (0 <= self.seed < 2**64 and 0 <= self.stream_id < 2**64):
            raise ValueError("seed and stream_id must be unsigned 64-bit integers")

    def with_stream(self, stream_id: int) -> SchemeConfig:
        return SchemeConfig(self.dt, self.scheme, self.seed, stream_id)

    def with_seed(self, seed: int) -> SchemeConfig:
        return SchemeConfig(self.dt, self.scheme, seed, self.stream_id)

    def rng(self, stream_id: int | None = None) -> StreamRNG:
        return StreamRNG(self.seed, self.stream_id if stream_id is None else stream_id)


def n_steps(T: float, dt: float) -> int:
    """Number of uniform steps covering [0, T]; dt is shrunk to divide T."""
    if not T > 0:
        raise ValueError("T must be positive")
    if dt > T * (1 + 1e-12):
        raise ValueError(f"dt={dt} exceeds T={T}")
    return max(1, int(math.ceil(T / dt - 1e-9)))


@dataclass(frozen=True)
class PathSample:
    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.shape != values.shape or grid.ndim != 1:
            raise ValueError("grid and values must be 1-D arrays of equal length")
        if values.min() < 0:
            raise ValueError("path values must be non-negative")
        if grid.size > 2:
            steps = np.diff(grid)
            if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
                raise ValueError("grid must be uniform")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def dt(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write("t,x\n")
        for t, x in zip(self.grid, self.values):
            buf.write(f"{fmt(t)},{fmt(x)}\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def step_full_truncation(x: float, drift: float, g_at_x: float, dt: float, dW: float) -> float:
    """One full-truncation Euler step for ``dX = drift dt + sqrt(X) g(X) dW``."""
    for name, v in (("x", x), ("drift", drift), ("g_at_x", g_at_x), ("dt", dt), ("dW", dW)):
        if not math.isfinite(v):
            raise ValueError(f"non-finite input {name}={v}")
    if x < 0 or not dt > 0:
        raise ValueError("need x >= 0 and dt > 0")
    return max(0.0, x + drift * dt + math.sqrt(max(x, 0.0)) * g_at_x * dW)


def cir_transition(x, level, kappa, h, rng: np.random.Generator, g: float = 2.0):
    """Exact transition of ``dX = (level - kappa X) dt + g sqrt(X) dW`` over ``h``.

    Noncentral chi-square drawn as a Poisson mixture of central chi-squares.
    ``level`` and ``kappa`` may be arrays broadcasting against ``x``.
    """
    x = np.asarray(x, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    g2 = g * g
    with np.errstate(divide="ignore", invalid="ignore"):
        decay = np.exp(-kappa * h)
        scale = np.where(kappa * h > 1e-12, g2 * -np.expm1(-kappa * h) / (4.0 * kappa), g2 * h / 4.0)
    dim = 4.0 * np.asarray(level, dtype=float) / g2
    noncentral = x * decay / scale
    shape = np.broadcast(x, dim, noncentral).shape
    k = rng.poisson(np.broadcast_to(noncentral / 2.0, shape))
    # gamma(0) is exactly 0: the absorbed branch of BESQ(0) needs no special case
    return 2.0 * scale * rng.gamma(np.broadcast_to(dim / 2.0, shape) + k)


def sample_besq_exact(x0: float, dim: float, t: float, rng: np.random.Generator, size=None):
    """Exact squared-Bessel transition with ``sigma(x) = 2 sqrt(x)``.

    ``X_t = t * chi2'(dim, x0 / t)``, so that ``E[X_t] = x0 + dim * t``.
    """
    if x0 < 0 or dim < 0 or not t > 0:
        raise ValueError("need x0 >= 0, dim >= 0, t > 0")
    if x0 == 0 and dim == 0:
        return 0.0 if size is None else np.zeros(size)
    x = np.full(() if size is None else size, float(x0))
    out = cir_transition(x, dim, 0.0, t, rng)
    return float(out) if size is None else out


def simulate_path(
    x0: float,
    drift: Callable[[float, float], float],
    cfg: SchemeConfig,
    T: float,
    g: Callable[[float], float] | float = 2.0,
) -> PathSample:
    """Full-truncation Euler path of ``dX = drift(t, X) dt + sqrt(X) g(X) dW``."""
    if cfg.scheme is not Scheme.FULL_TRUNCATION_EULER:
        raise ValueError("simulate_path only runs the Euler scheme; use simulate_besq_path for exact draws")
    M = n_steps(T, cfg.dt)
    h = T / M
    z = cfg.rng().normals
    gfun = g if callable(g) else (lambda _x, c=float(g): c)
    vals = np.empty(M + 1)
    vals[0] = x = float(x0)
    sq = math.sqrt(h)
    for k in range(M):
        x = step_full_truncation(x, drift(k * h, x), gfun(x), h, sq * z(k, 1)[0])
        vals[k + 1] = x
    return PathSample(np.linspace(0.0, T, M + 1), vals)


def simulate_besq_path(x0: float, dim: float, cfg: SchemeConfig, T: float, n_paths: int | None = None):
    """BESQ(dim) paths on the uniform grid, by Euler or exact transitions.

    Returns a PathSample, or an ``(n_paths, M+1)`` array when ``n_paths`` is given.
    """
    M = n_steps(T, cfg.dt)
    h = T / M
    R = 1 if n_paths is None else int(n_paths)
    rng = cfg.rng()
    out = np.empty((R, M + 1))
    out[:, 0] = x0
    x = np.full(R, float(x0))
    for k in range(M):
        if cfg.scheme is Scheme.EXACT_BESQ:
            x = cir_transition(x, dim, 0.0, h, rng.generator(k, StreamRNG.LANE_EXACT))
        else:
            dW = math.sqrt(h) * rng.normals(k, R)
            x = np.maximum(0.0, x + dim * h + 2.0 * np.sqrt(x) * dW)
        out[:, k + 1] = x
    if n_paths is None:
        return PathSample(np.linspace(0.0, T, M + 1), out[0])
    return out


def _cumtrapz(y: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros_like(y, dtype=float)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1])) * h
    return out


@dataclass(frozen=True)
class TimeChange:
    grid: np.ndarray
    zeta: np.ndarray
    psi: np.ndarray
    xi: np.ndarray
    dimension: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.xi / self.zeta**2


def time_change_transform(x: PathSample, phi_path, m_lambda: float) -> TimeChange:
    """Integrating-factor transform turning X into a time-changed BESQ-like ``xi``.

    ``zeta = exp(int phi / 2)``, ``psi = int zeta^2``, ``xi = X zeta^2``.  On
    the clock ``psi`` the process ``xi`` has instantaneous dimension
    ``m_lambda * phi``.
    """
    phi = np.broadcast_to(np.asarray(phi_path, dtype=float), x.grid.shape)
    if np.any(phi < 0):
        raise ValueError("phi must be non-negative")
    h = x.dt
    zeta = np.exp(0.5 * _cumtrapz(phi, h))
    psi = _cumtrapz(zeta**2, h)
    return TimeChange(
        grid=x.grid,
        zeta=zeta,
        psi=psi,
        xi=x.values * zeta**2,
        dimension=m_lambda * phi.copy(),
    )


def quadratic_variation(x: PathSample, g: float = 2.0) -> np.ndarray:
    """Model quadratic variation ``int g^2 X ds`` (``4 X`` for the case study)."""
    return _cumtrapz(g * g * x.values, x.dt)


def local_time_at_zero(x: PathSample, epsilon: float, g: float = 2.0) -> float:
    """Finite-epsilon occupation estimate of the semimartingale local time at 0."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    v = x.values[:-1]
    return float(np.sum(np.where(v < epsilon, g * g * v, 0.0)) * x.dt / (2.0 * epsilon))
