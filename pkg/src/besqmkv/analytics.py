"""Boundary classification, the Laplace-transform PDE and the stationary Gamma law."""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .measures import GammaParams, fmt
from .model import AssumptionError, PhiSpec
from .particles import NumericalError

__all__ = [
    "BoundaryClass",
    "BoundaryReport",
    "LaplaceGrid",
    "NotRecurrent",
    "classify_boundary",
    "gamma_laplace",
    "laplace_pde_residual",
    "laplace_pde_solve",
    "stationary_fixed_point",
]


class BoundaryClass(str, enum.Enum):
    TRANSIENT_NEVER_HITS_ZERO = "TransientNeverHitsZero"
    RECURRENT = "Recurrent"
    HITS_ZERO_NULL_LOCAL_TIME = "HitsZeroNullLocalTime"
    REFLECTING_WITH_LOCAL_TIME = "ReflectingWithLocalTime"
    INDETERMINATE = "Indeterminate"


@dataclass(frozen=True)
class BoundaryReport:
    """Classification plus the inequalities it was read from.

    Stated for a point-mass initial law; products are ``m_lambda * inf phi``
    and ``m_lambda * sup phi``.
    """

    cls: BoundaryClass
    lower: float
    upper: float
    transient: bool
    recurrent: bool
    never_hits_zero: bool
    hits_zero: bool
    null_local_time: bool
    reflecting: bool

    def __str__(self) -> str:
        return self.cls.value


def classify_boundary(m_lambda: float, phi_inf: float, phi_sup: float) -> BoundaryReport:
    if not (m_lambda > 0):
        raise ValueError("m_lambda must be positive")
    if phi_inf < 0 or phi_inf > phi_sup:
        raise ValueError(f"need 0 <= phi_inf <= phi_sup, got {phi_inf}, {phi_sup}")
    lo = m_lambda * phi_inf
    hi = m_lambda * phi_sup
    transient = lo > 2
    recurrent = hi <= 2
    never_hits = lo >= 2
    null_lt = 1 < lo and hi < 2
    reflecting = 0 < lo and hi <= 1
    if transient:
        cls = BoundaryClass.TRANSIENT_NEVER_HITS_ZERO
    elif never_hits and recurrent:
        cls = BoundaryClass.RECURRENT
    elif null_lt:
        cls = BoundaryClass.HITS_ZERO_NULL_LOCAL_TIME
    elif reflecting:
        cls = BoundaryClass.REFLECTING_WITH_LOCAL_TIME
    else:
        cls = BoundaryClass.INDETERMINATE
    return BoundaryReport(cls, lo, hi, transient, recurrent, never_hits, null_lt, null_lt, reflecting)


def _phi_function(phi_path, grid=None) -> Callable[[float], float]:
    if callable(phi_path):
        return phi_path
    arr = np.asarray(phi_path, dtype=float)
    if arr.ndim == 0:
        c = float(arr)
        return lambda s: c
    if grid is None:
        raise ValueError("a sampled phi path needs its grid")
    g = np.asarray(grid, dtype=float)
    return lambda s: float(np.interp(s, g, arr))


def laplace_pde_solve(
    phi_path,
    m_lambda: float,
    u0: Callable[[float], float],
    t: float,
    x: float,
    *,
    grid=None,
    dt_char: float = 1e-4,
) -> float:
    """``U(t, x) = E exp(-x X(t))`` by backward characteristics.

    Along ``x'(s) = x (phi(s) + 2 x)`` the solution satisfies
    ``dU/ds = -m_lambda phi(s) x(s) U``; integrating from ``(t, x)`` back to
    ``s = 0`` with RK4 gives ``U = u0(x(0)) exp(-m_lambda int_0^t phi x ds)``.
    ``phi_path`` is a constant, a callable of time, or samples on ``grid``.
    """
    if x < 0:
        raise ValueError("x must be non-negative")
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0 or x == 0:
        return float(u0(x)) if t == 0 else float(u0(0.0))
    phi = _phi_function(phi_path, grid)
    steps = max(1, int(math.ceil(t / dt_char - 1e-9)))
    h = t / steps

    def rhs(s, y, a):
        p = phi(s)
        return y * (p + 2.0 * y), p * y

    y, acc = float(x), 0.0
    s = t
    for _ in range(steps):
        # backwards in time: step -h
        k1y, k1a = rhs(s, y, acc)
        k2y, k2a = rhs(s - h / 2, y - h / 2 * k1y, 0)
        k3y, k3a = rhs(s - h / 2, y - h / 2 * k2y, 0)
        k4y, k4a = rhs(s - h, y - h * k3y, 0)
        y -= h * (k1y + 2 * k2y + 2 * k3y + k4y) / 6.0
        acc += h * (k1a + 2 * k2a + 2 * k3a + k4a) / 6.0
        s -= h
        if not (math.isfinite(y) and math.isfinite(acc)):
            raise NumericalError("non-finite characteristic")
    return float(u0(y)) * math.exp(-m_lambda * acc)


def laplace_pde_residual(phi_path, m_lambda, u0, t: float, x: float, *, grid=None, h: float = 1e-3, dt_char: float = 1e-4) -> float:
    """Central-difference residual of ``U_t + x (phi + 2x) U_x + m x phi U`` at (t, x)."""
    phi = _phi_function(phi_path, grid)

    def U(tt, xx):
        return laplace_pde_solve(phi, m_lambda, u0, tt, xx, dt_char=dt_char)

    ut = (U(t + h, x) - U(t - h, x)) / (2 * h)
    ux = (U(t, x + h) - U(t, x - h)) / (2 * h)
    p = phi(t)
    return float(ut + x * (p + 2 * x) * ux + m_lambda * x * p * U(t, x))


@dataclass(frozen=True)
class LaplaceGrid:
    t: np.ndarray
    x: np.ndarray
    U_pde: np.ndarray  # (len(t), len(x))
    U_mc: np.ndarray | None = None
    m_lambda: float = 1.0

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write("t,x,U_pde,U_mc,abs_err\n")
        for i, tt in enumerate(self.t):
            for j, xx in enumerate(self.x):
                u = self.U_pde[i, j]
                mc = self.U_mc[i, j] if self.U_mc is not None else float("nan")
                buf.write(",".join(fmt(v) for v in (tt, xx, u, mc, abs(u - mc))) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def gamma_laplace(p: GammaParams, x):
    """Laplace transform ``(1 + a x)^(-b)`` of the Gamma law."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("x must be non-negative")
    out = (1.0 + p.a * x) ** (-p.b)
    return float(out) if out.ndim == 0 else out


class NotRecurrent(AssumptionError):
    def __init__(self, detail: str):
        super().__init__("recurrence", detail)


def stationary_fixed_point(
    phi: PhiSpec,
    m_lambda: float,
    tol: float = 1e-10,
    max_iter: int = 500,
    *,
    theta: float = 0.5,
    n_quantiles: int = 4096,
) -> tuple[float, GammaParams]:
    """Solve ``phi(Gamma(2/phi*, phi* m/2)) = phi*`` by damped iteration.

    phi is evaluated on the midpoint-quantile discretization of the Gamma law.
    """
    report = classify_boundary(m_lambda, phi.lo, phi.hi)
    if not report.recurrent:
        raise NotRecurrent(f"m_lambda * sup phi = {report.upper:.6g} > 2: no recurrence guarantee")
    if phi.hi <= 0:
        raise NotRecurrent("phi vanishes identically: no stationary Gamma law")

    def law(p: float) -> GammaParams:
        return GammaParams(2.0 / p, p * m_lambda / 2.0)

    cur = 0.5 * (phi.lo + phi.hi)
    resid = math.inf
    for _ in range(max_iter):
        target = phi(law(cur).quantiles(n_quantiles))
        nxt = (1.0 - theta) * cur + theta * target
        resid = abs(nxt - cur)
        cur = nxt
        if not cur > 0:
            raise NumericalError("fixed-point iterate left (0, inf)")
        if resid < tol:
            return cur, law(cur)
    raise NumericalError(f"stationary fixed point not reached; last residual {resid:.3e}")
