"""Rare events of the empirical mean: control costs, importance sampling, decay rates.

A control ``u`` tilts every particle's Brownian motion, adding ``u sigma(x)``
to the drift.  Its cost ``(1/2) mean_i int u_i^2 dt`` bounds the large
deviation rate of any event it makes typical; importance sampling with the
Girsanov weight measures the actual probabilities.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from .measures import fmt
from .mckean_vlasov import LawPath, solve_selfconsistent
from .model import ModelSpec
from .particles import ControlSpec, NumericalError, ReplicaBatch, simulate_replicas
from .sde import SchemeConfig, n_steps

__all__ = [
    "ISResult",
    "LowESSWarning",
    "RareEvent",
    "RateReport",
    "constant_control_search",
    "controlled_mean_flow",
    "importance_sampling",
    "log_mgf_mean",
    "rate_fit",
    "simulate_controlled_limit",
    "sum_tilt_control",
    "tilt_parameter",
]

EVENT_KINDS = ("TerminalMeanAbove", "TerminalMeanBelow", "PathSupAbove")


class LowESSWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RareEvent:
    """Event on the path of the empirical mean ``t -> mean(rho^n(t))``."""

    kind: str
    threshold: float

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"event kind must be one of {EVENT_KINDS}")
        if not math.isfinite(self.threshold):
            raise ValueError("threshold must be finite")

    @classmethod
    def terminal_mean_above(cls, a: float) -> RareEvent:
        return cls("TerminalMeanAbove", float(a))

    @classmethod
    def terminal_mean_below(cls, a: float) -> RareEvent:
        return cls("TerminalMeanBelow", float(a))

    @classmethod
    def path_sup_above(cls, a: float) -> RareEvent:
        return cls("PathSupAbove", float(a))

    def on_mean_path(self, mean_path: np.ndarray) -> np.ndarray:
        """Indicator for mean paths of shape ``(..., K)``."""
        mean_path = np.asarray(mean_path, dtype=float)
        if self.kind == "TerminalMeanAbove":
            return mean_path[..., -1] > self.threshold
        if self.kind == "TerminalMeanBelow":
            return mean_path[..., -1] < self.threshold
        return mean_path.max(axis=-1) > self.threshold

    def on_batch(self, batch: ReplicaBatch) -> np.ndarray:
        return self.on_mean_path(batch.mean_path)

    def __str__(self) -> str:
        return f"{self.kind}({self.threshold:g})"


def simulate_controlled_limit(
    spec: ModelSpec,
    u: Callable[[float], float],
    N: int,
    cfg: SchemeConfig,
    T: float,
    *,
    save_every: int | None = None,
) -> LawPath:
    """Self-consistent ensemble of the limit dynamics tilted by ``u(t) sigma(x)``."""
    ctrl = u if isinstance(u, ControlSpec) else ControlSpec.of_time(u)
    return solve_selfconsistent(spec, N, cfg, T, save_every=save_every, control=ctrl)


def controlled_mean_flow(spec: ModelSpec, u: float, N: int, cfg: SchemeConfig, T: float) -> np.ndarray:
    """Mean flow ``t -> E X(t)`` of the limit under the constant control u, on every step."""
    if u == 0.0:
        # the uncontrolled mean flow is known exactly
        M = n_steps(T, cfg.dt)
        return spec.m_lambda + spec.delta * np.linspace(0.0, T, M + 1)
    law = simulate_controlled_limit(spec, ControlSpec.constant(u), N, cfg, T)
    return law.step_mean


def constant_control_search(
    event: RareEvent,
    spec: ModelSpec,
    T: float,
    u_grid: Sequence[float],
    *,
    N: int = 20000,
    cfg: SchemeConfig | None = None,
) -> tuple[float, float]:
    """Cheapest constant control whose controlled mean flow realizes the event.

    Candidates are tried in order of increasing cost ``u^2 T / 2``; all
    simulations share one random stream, so the mean flow is monotone in u up
    to discretization.  Returns ``(u_best, cost_best)``.
    """
    grid = np.asarray(list(u_grid), dtype=float)
    if grid.size == 0 or not np.all(np.isfinite(grid)):
        raise ValueError("u_grid must be a non-empty finite grid")
    cfg = cfg or SchemeConfig(dt=1e-3, seed=0)
    for u in grid[np.argsort(np.abs(grid), kind="stable")]:
        flow = controlled_mean_flow(spec, float(u), N, cfg, T)
        if event.on_mean_path(flow[None, :])[0] or _touches(event, flow):
            return float(u), 0.5 * float(u) ** 2 * T
    raise NumericalError("event unreachable on grid")


def _touches(event: RareEvent, flow: np.ndarray) -> bool:
    # "hits the threshold": allow equality for the deterministic flow
    if event.kind == "TerminalMeanAbove":
        return flow[-1] >= event.threshold
    if event.kind == "TerminalMeanBelow":
        return flow[-1] <= event.threshold
    return flow.max() >= event.threshold


def log_mgf_mean(theta, spec: ModelSpec, T: float):
    """Scaled log-MGF ``(1/n) log E exp(theta S_n(T))`` of the particle sum.

    With constant g = c the sum ``S_n`` solves ``dS = n delta dt + c sqrt(S) dB``
    whatever phi is, so ``4 S / c^2`` is a squared Bessel process of dimension
    ``4 n delta / c^2``.
    """
    if not spec.g.is_constant:
        raise ValueError("the sum process is a squared Bessel process only for constant g")
    c2 = spec.g.inf**2
    theta = np.asarray(theta, dtype=float)
    den = 1.0 - 0.5 * c2 * theta * T
    if np.any(den <= 0):
        raise ValueError("theta outside the domain of the moment generating function")
    return -(2.0 * spec.delta / c2) * np.log(den) + spec.m_lambda * theta / den


def tilt_parameter(event: RareEvent, spec: ModelSpec, T: float) -> float:
    """theta with ``d/dtheta log_mgf_mean = threshold`` (the exponential tilt of the event)."""
    if event.kind == "PathSupAbove":
        event = RareEvent.terminal_mean_above(event.threshold)
    c2 = spec.g.inf**2
    m, d, a = spec.m_lambda, spec.delta, event.threshold
    typical = m + d * T
    if a <= 0:
        raise ValueError("threshold must be positive")
    if abs(a - typical) < 1e-15:
        return 0.0
    top = 2.0 / (c2 * T)

    def slope(th):
        den = 1.0 - 0.5 * c2 * th * T
        return d * T / den + m / den**2 - a

    if a > typical:
        return float(optimize.brentq(slope, 0.0, top * (1 - 1e-12), xtol=1e-14))
    lo = -1.0
    while slope(lo) > 0:
        lo *= 2.0
        if lo < -1e12:
            raise NumericalError("cannot bracket the tilt parameter")
    return float(optimize.brentq(slope, lo, 0.0, xtol=1e-14))


def sum_tilt_control(theta: float, spec: ModelSpec, T: float) -> ControlSpec:
    """Feedback control realizing the exponential tilt ``exp(theta S_n(T))``.

    ``u_i(t) = c theta sqrt(X_i) / (1 - (c^2/2) theta (T - t))`` is the
    Doob h-transform of the sum process; it tilts the terminal mean law to
    mean ``d/dtheta log_mgf_mean``.
    """
    if not spec.g.is_constant:
        raise ValueError("the sum tilt needs constant g")
    c = spec.g.inf
    if not 1.0 - 0.5 * c * c * theta * T > 0:
        raise ValueError("theta too large for horizon T")

    def u(t, x, mean):
        return c * theta * np.sqrt(np.maximum(x, 0.0)) / (1.0 - 0.5 * c * c * theta * (T - t))

    return ControlSpec(u, label=f"tilt:{theta:.6g}", value=0.0 if theta == 0.0 else None)


@dataclass(frozen=True)
class ISResult:
    p_hat: float
    stderr: float
    ess: float
    hits: int
    low_ess: bool
    mean_cost: float


def _is_estimate(event: RareEvent, batch: ReplicaBatch) -> ISResult:
    hit = event.on_batch(batch)
    w = np.where(hit, np.exp(batch.log_weight), 0.0)
    R = w.size
    p = float(w.mean())
    se = float(w.std(ddof=1) / math.sqrt(R)) if R > 1 else math.inf
    s2 = float(np.sum(w * w))
    ess = float(w.sum() ** 2 / s2) if s2 > 0 else 0.0
    return ISResult(p, se, ess, int(hit.sum()), ess < 10.0, float(batch.cost.mean()))


def importance_sampling(
    event: RareEvent,
    n: int,
    spec: ModelSpec,
    cfg: SchemeConfig,
    T: float,
    ctrl: ControlSpec | None,
    replicas: int,
    *,
    threads: int = 1,
) -> ISResult:
    """``p_hat = mean_r 1{event} exp(log_weight_r)`` over tilted replicas.

    Unbiased for the event probability of the discretized system; ``ctrl=None``
    or the zero control is plain Monte Carlo.
    """
    if replicas < 100:
        raise ValueError("importance sampling needs at least 100 replicas")
    batch = simulate_replicas(n, spec, cfg, T, replicas, control=ctrl, threads=threads)
    res = _is_estimate(event, batch)
    if res.low_ess:
        warnings.warn(f"effective sample size {res.ess:.1f} < 10", LowESSWarning, stacklevel=2)
    return res


@dataclass(frozen=True)
class RateReport:
    n: tuple
    p_hat: tuple
    stderr: tuple
    rates: tuple  # -(1/n) log p_hat
    control: str
    cost: tuple  # realized mean control cost per n
    ess: tuple

    @property
    def relative_spread(self) -> float:
        """``|r_last - r_prev| / min(r_last, r_prev)`` for the last two rates."""
        a, b = self.rates[-2], self.rates[-1]
        lo = min(abs(a), abs(b))
        if lo == 0:
            return 0.0 if a == b else math.inf
        return abs(a - b) / lo

    @property
    def extrapolated_rate(self) -> float:
        """Least-squares intercept of rate against 1/n."""
        x = 1.0 / np.asarray(self.n, dtype=float)
        y = np.asarray(self.rates)
        A = np.column_stack([np.ones_like(x), x])
        return float(np.linalg.lstsq(A, y, rcond=None)[0][0])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write("n,p_hat,stderr,neg_log_p_over_n,control,cost\n")
        for i, n in enumerate(self.n):
            buf.write(f"{n},{fmt(self.p_hat[i])},{fmt(self.stderr[i])},{fmt(self.rates[i])},{self.control},{fmt(self.cost[i])}\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def rate_fit(
    event: RareEvent,
    spec: ModelSpec,
    cfg: SchemeConfig,
    T: float,
    n_list: Sequence[int],
    replicas: int,
    *,
    control: str | Callable[[int], ControlSpec | None] = "tilt",
    threads: int = 1,
) -> RateReport:
    """Estimate ``p_n`` for each n and report ``-(1/n) log p_n``.

    ``control="tilt"`` uses the exponential-tilt feedback of the particle sum,
    ``"none"`` is plain Monte Carlo, and a callable maps n to a ControlSpec.
    Replica streams restart at ``cfg.stream_id`` for every n.
    """
    n_list = [int(n) for n in n_list]
    if len(n_list) < 3 or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be increasing with at least 3 values")
    if control == "tilt":
        theta = tilt_parameter(event, spec, T)
        ctrl_for = lambda n: sum_tilt_control(theta, spec, T)  # noqa: E731
        label = f"tilt:{theta:.6g}"
    elif control == "none":
        ctrl_for = lambda n: None  # noqa: E731
        label = "none"
    elif callable(control):
        ctrl_for = control
        label = "custom"
    else:
        raise ValueError("control must be 'tilt', 'none' or a callable")
    ps, ses, rates, costs, esss = [], [], [], [], []
    for n in n_list:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LowESSWarning)
            res = importance_sampling(event, n, spec, cfg, T, ctrl_for(n), replicas, threads=threads)
        if res.hits == 0 or res.p_hat <= 0:
            raise NumericalError(f"no event hits at n={n}: increase replicas or control")
        ps.append(res.p_hat)
        ses.append(res.stderr)
        rates.append(-math.log(min(res.p_hat, 1.0)) / n)
        costs.append(res.mean_cost)
        esss.append(res.ess)
    return RateReport(tuple(n_list), tuple(ps), tuple(ses), tuple(rates), label, tuple(costs), tuple(esss))
