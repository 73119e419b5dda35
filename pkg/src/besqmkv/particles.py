"""The n-particle mean-field system, its controlled version and diagnostics.

Every particle obeys ``dX_i = b(X_i, rho^n) dt + sqrt(X_i) g(X_i) dW_i`` with
``b(x, mu) = delta + (mean(mu) - x) phi(mu)``.  Replicas are rows of a 2-D
state array; row ``r`` draws its noise from stream ``stream_ids[r]`` so a
replica is bit-identical whether it runs alone, in a batch or on a thread.
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .measures import MeasurePath, fmt
from .model import ModelSpec
from .rng import StreamRNG, brownian_normals
from .sde import Scheme, SchemeConfig, n_steps

__all__ = [
    "ControlSpec",
    "NumericalError",
    "ReplicaBatch",
    "SystemTrajectory",
    "TestFunction",
    "coupling_gap",
    "martingale_residual",
    "simulate",
    "simulate_controlled",
    "simulate_replicas",
]

MEAN_FIELD_MODES = ("empirical", "exact")


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class ControlSpec:
    """Control ``u(t, x, mean)`` applied as extra drift ``u * sigma(x)``.

    ``x`` is the ``(R, n)`` state array and ``mean`` the ``(R,)`` ensemble
    means; the return value must broadcast to ``x``.  ``bound`` is a declared
    bound on ``|u|`` used to check that the cost stays finite.
    """

    u: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    bound: float | None = None
    label: str = "custom"
    value: float | None = field(default=None, compare=False)

    @classmethod
    def zero(cls) -> ControlSpec:
        return cls.constant(0.0)

    @classmethod
    def constant(cls, c: float) -> ControlSpec:
        c = float(c)
        return cls(lambda t, x, m: c, bound=abs(c), label=f"const:{c:g}", value=c)

    @classmethod
    def of_time(cls, fn: Callable[[float], float], bound: float | None = None, label: str = "u(t)") -> ControlSpec:
        return cls(lambda t, x, m: fn(t), bound=bound, label=label)

    @property
    def is_zero(self) -> bool:
        return self.value == 0.0

    def __call__(self, t, x, mean):
        return self.u(t, x, mean)


@dataclass(frozen=True)
class SystemTrajectory:
    """One n-particle run: ``states[i, k]`` is particle i at ``grid[k]``."""

    grid: np.ndarray
    states: np.ndarray
    spec: ModelSpec = field(repr=False)

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def measure_path(self) -> MeasurePath:
        return MeasurePath.from_states(self.grid, self.states)

    def mean_path(self) -> np.ndarray:
        return self.states.mean(axis=0)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write("t,i,x\n")
        for k, t in enumerate(self.grid):
            ts = fmt(t)
            for i in range(self.n):
                buf.write(f"{ts},{i},{fmt(self.states[i, k])}\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


@dataclass(frozen=True)
class ReplicaBatch:
    """Independent replicas of the system.

    ``states`` has shape ``(R, n, K)`` on the saved ``grid``; ``mean_path`` and
    ``phi_path`` hold the ensemble mean and phi at every time step.
    """

    grid: np.ndarray
    states: np.ndarray
    step_grid: np.ndarray
    mean_path: np.ndarray
    phi_path: np.ndarray
    log_weight: np.ndarray
    kappa: np.ndarray
    spec: ModelSpec = field(repr=False)
    stream_ids: np.ndarray = field(repr=False, default=None)

    @property
    def replicas(self) -> int:
        return self.states.shape[0]

    @property
    def cost(self) -> np.ndarray:
        """Per-replica control cost ``(1/2) * mean_i int u_i^2 dt``."""
        return 0.5 * self.kappa.mean(axis=1)

    def terminal(self) -> np.ndarray:
        return self.states[:, :, -1]

    def trajectory(self, r: int) -> SystemTrajectory:
        return SystemTrajectory(self.grid, self.states[r], self.spec)


def _initial_states(n: int, spec: ModelSpec, init) -> np.ndarray:
    if init is None:
        return spec.initial_law.configuration(n)
    x0 = np.asarray(init, dtype=float)
    if x0.shape != (n,):
        raise ValueError(f"init must have shape ({n},)")
    if x0.min() < 0:
        raise ValueError("initial states must be non-negative")
    return x0


def _exact_level(delta: float, mean: np.ndarray, kappa: np.ndarray, h: float) -> np.ndarray:
    # Frozen-coefficient level chosen so the conditional mean of the particle
    # sum grows by exactly n delta h per step: E[X'] = x e^{-kh} + level c1.
    base = kappa * mean
    if delta == 0.0:
        return base
    with np.errstate(divide="ignore", invalid="ignore"):
        c1 = np.where(kappa * h > 1e-12, -np.expm1(-kappa * h) / kappa, h)
    return base + delta * h / c1


def _exact_step(x, level, kappa, h, gens, g):
    """Exact CIR transition per row with frozen (level, kappa); row r draws from gens[r]."""
    g2 = g * g
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(kappa * h > 1e-12, g2 * -np.expm1(-kappa * h) / (4.0 * kappa), g2 * h / 4.0)
    half_dim = (2.0 * level / g2)[:, None]
    half_nc = x * (np.exp(-kappa * h) / (2.0 * scale))[:, None]
    out = np.empty_like(x)
    for r, gen in enumerate(gens):
        k = gen.poisson(half_nc[r])
        out[r] = gen.standard_gamma(half_dim[r] + k)
    return out * (2.0 * scale)[:, None]


def _evolve_chunk(
    x0: np.ndarray,
    spec: ModelSpec,
    cfg: SchemeConfig,
    T: float,
    stream_ids: np.ndarray,
    mean_field: str,
    frozen: tuple[np.ndarray, np.ndarray] | None,
    control: ControlSpec | None,
    save_every: int | None,
):
    R, n = x0.shape
    M = n_steps(T, cfg.dt)
    h = T / M
    sqh = math.sqrt(h)
    keys = np.array([StreamRNG(cfg.seed, int(s)).key for s in stream_ids], dtype=np.uint64)
    exact = cfg.scheme is Scheme.EXACT_BESQ
    if exact and not spec.g.is_constant:
        raise ValueError("the exact scheme needs a constant g")
    if exact and control is not None:
        raise ValueError("the exact scheme does not support controls")
    # one sequential generator per replica: draws depend only on the replica's stream
    gens = [StreamRNG(cfg.seed, int(s)).generator(0, StreamRNG.LANE_EXACT) for s in stream_ids] if exact else None
    use_control = control is not None and not control.is_zero
    split = exact and frozen is None and mean_field == "empirical"

    x = x0.copy()
    saved = [x.copy()]
    means = np.empty((R, M + 1))
    phis = np.empty((R, M + 1))
    logw = np.zeros(R)
    kappa = np.zeros((R, n))

    def stats(k, state):
        # ensemble phi is always recorded; frozen flows override what drives the drift
        ens_phi = spec.phi.evaluate(state)
        if frozen is not None:
            return np.full(R, frozen[0][k]), np.full(R, frozen[1][k]), ens_phi
        if mean_field == "exact":
            m = np.full(R, spec.m_lambda + spec.delta * k * h)
        else:
            m = state.mean(axis=1)
        return m, ens_phi, ens_phi

    for k in range(M):
        t = k * h
        m, phi, phis[:, k] = stats(k, x)
        means[:, k] = x.mean(axis=1)
        if exact:
            if split:
                # Strang splitting: the relaxation toward the ensemble mean conserves the sum,
                # and independent BESQ(delta) moves make the sum exactly BESQ(n delta).
                a = np.exp(-0.5 * h * phi)[:, None]
                x = m[:, None] * (1.0 - a) + x * a
                x = _exact_step(x, np.full(R, spec.delta), np.zeros(R), h, gens, spec.g.inf)
                mid = x.mean(axis=1)[:, None]
                x = mid * (1.0 - a) + x * a
            else:
                x = _exact_step(x, _exact_level(spec.delta, m, phi, h), phi, h, gens, spec.g.inf)
        else:
            dW = sqh * brownian_normals(keys, k, n)
            sig = spec.g.sigma(x)
            drift = spec.delta + (m[:, None] - x) * phi[:, None]
            if use_control:
                u = np.broadcast_to(np.asarray(control(t, x, m), dtype=float), x.shape)
                with np.errstate(over="ignore", invalid="ignore"):
                    uu = u * u
                    logw -= (u * dW).sum(axis=1) + 0.5 * h * uu.sum(axis=1)
                if not np.all(np.isfinite(logw)):
                    raise NumericalError(f"non-finite Girsanov log-weight at t={t:.6g}: control too large for dt")
                drift = drift + u * sig
                kappa += uu * h
            x = np.maximum(0.0, x + drift * h + sig * dW)
        if save_every and (k + 1) % save_every == 0:
            saved.append(x.copy())
    means[:, M] = x.mean(axis=1)
    phis[:, M] = stats(M, x)[2]
    if not save_every or M % save_every:
        saved.append(x.copy())
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite state")
    return np.stack(saved, axis=-1), means, phis, logw, kappa


def _saved_grid(T: float, M: int, save_every: int | None) -> np.ndarray:
    full = np.linspace(0.0, T, M + 1)
    if not save_every:
        return full[[0, M]]
    idx = list(range(0, M + 1, save_every))
    if idx[-1] != M:
        idx.append(M)
    return full[idx]


def _run(
    x0: np.ndarray,
    spec: ModelSpec,
    cfg: SchemeConfig,
    T: float,
    stream_ids: Sequence[int],
    *,
    mean_field: str = "empirical",
    frozen=None,
    control: ControlSpec | None = None,
    save_every: int | None = 1,
    threads: int = 1,
) -> ReplicaBatch:
    if mean_field not in MEAN_FIELD_MODES:
        raise ValueError(f"mean_field must be one of {MEAN_FIELD_MODES}")
    stream_ids = np.asarray(stream_ids, dtype=np.uint64)
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        x0 = np.broadcast_to(x0, (stream_ids.size, x0.size))
    R = stream_ids.size
    M = n_steps(T, cfg.dt)
    args = (spec, cfg, T)
    kw = dict(mean_field=mean_field, frozen=frozen, control=control, save_every=save_every)
    threads = max(1, min(int(threads), R))
    if threads == 1:
        parts = [_evolve_chunk(x0, *args, stream_ids, **kw)]
    else:
        bounds = np.linspace(0, R, threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futs = [
                pool.submit(_evolve_chunk, x0[a:b], *args, stream_ids[a:b], **kw)
                for a, b in zip(bounds[:-1], bounds[1:])
                if b > a
            ]
            parts = [f.result() for f in futs]
    states, means, phis, logw, kappa = (np.concatenate(p, axis=0) for p in zip(*parts))
    return ReplicaBatch(
        grid=_saved_grid(T, M, save_every),
        states=states,
        step_grid=np.linspace(0.0, T, M + 1),
        mean_path=means,
        phi_path=phis,
        log_weight=logw,
        kappa=kappa,
        spec=spec,
        stream_ids=stream_ids,
    )


def simulate(
    n: int,
    spec: ModelSpec,
    cfg: SchemeConfig,
    T: float,
    *,
    init=None,
    save_every: int = 1,
    mean_field: str = "empirical",
) -> SystemTrajectory:
    """Simulate the interacting system once on stream ``cfg.stream_id``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x0 = _initial_states(n, spec, init)
    batch = _run(x0[None, :], spec, cfg, T, [cfg.stream_id], save_every=save_every, mean_field=mean_field)
    return SystemTrajectory(batch.grid, batch.states[0], spec)


def simulate_replicas(
    n: int,
    spec: ModelSpec,
    cfg: SchemeConfig,
    T: float,
    replicas: int,
    *,
    init=None,
    save_every: int | None = None,
    control: ControlSpec | None = None,
    mean_field: str = "empirical",
    threads: int = 1,
) -> ReplicaBatch:
    """Independent replicas on streams ``cfg.stream_id + r``.

    With ``save_every=None`` only the initial and terminal states are kept.
    """
    if n < 1 or replicas < 1:
        raise ValueError("n and replicas must be >= 1")
    x0 = _initial_states(n, spec, init)
    streams = cfg.stream_id + np.arange(replicas, dtype=np.uint64)
    return _run(x0, spec, cfg, T, streams, save_every=save_every, control=control, mean_field=mean_field, threads=threads)


def simulate_controlled(
    n: int,
    spec: ModelSpec,
    cfg: SchemeConfig,
    T: float,
    ctrl: ControlSpec,
    *,
    init=None,
    save_every: int = 1,
) -> tuple[SystemTrajectory, float, float]:
    """Tilted system; returns (trajectory, Girsanov log-weight, control cost)."""
    x0 = _initial_states(n, spec, init)
    batch = _run(x0[None, :], spec, cfg, T, [cfg.stream_id], control=ctrl, save_every=save_every)
    cost = float(batch.cost[0])
    if not math.isfinite(cost):
        raise NumericalError("infinite control cost")
    return SystemTrajectory(batch.grid, batch.states[0], spec), float(batch.log_weight[0]), cost


@dataclass(frozen=True)
class TestFunction:
    """Test function on the tagged coordinates with gradient and Hessian diagonal.

    Each callable maps an array ``(..., k)`` to ``(...)`` (``f``) or ``(..., k)``.
    """

    __test__ = False

    f: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess_diag: Callable[[np.ndarray], np.ndarray]

    @classmethod
    def constant(cls, c: float = 1.0) -> TestFunction:
        return cls(
            lambda x: np.full(x.shape[:-1], c),
            lambda x: np.zeros_like(x),
            lambda x: np.zeros_like(x),
        )

    @classmethod
    def identity_sum(cls) -> TestFunction:
        return cls(lambda x: x.sum(axis=-1), lambda x: np.ones_like(x), lambda x: np.zeros_like(x))

    @classmethod
    def exp_neg_sum(cls) -> TestFunction:
        def f(x):
            return np.exp(-x.sum(axis=-1))

        def grad(x):
            return np.broadcast_to(-f(x)[..., None], x.shape)

        def hess(x):
            return np.broadcast_to(f(x)[..., None], x.shape)

        return cls(f, grad, hess)


def martingale_residual(f: TestFunction, traj, tagged: Sequence[int] = (0,)) -> np.ndarray:
    """Discrete compensated process for the tagged particles.

    ``M(t_k) = f(X(t_k)) - f(X(0)) - sum_{j<k} sum_i [b f_i + sigma^2 f_ii / 2] dt``.
    Accepts a SystemTrajectory (returns shape ``(K,)``) or a ReplicaBatch saved
    on every step (returns ``(R, K)``).
    """
    states = traj.states if traj.states.ndim == 3 else traj.states[None]
    grid = traj.grid
    spec = traj.spec
    dts = np.diff(grid)
    tagged = list(tagged)
    x = states  # (R, n, K)
    mean = x.mean(axis=1)  # (R, K)
    phi = np.stack([spec.phi.evaluate(x[:, :, k]) for k in range(x.shape[2])], axis=1)
    xt = np.moveaxis(x[:, tagged, :], 1, -1)  # (R, K, k)
    b = spec.drift(xt, mean[..., None], phi[..., None])
    sig2 = spec.g.sigma(xt) ** 2
    gen = (b * f.grad(xt) + 0.5 * sig2 * f.hess_diag(xt)).sum(axis=-1)  # (R, K)
    comp = np.zeros_like(gen)
    comp[:, 1:] = np.cumsum(gen[:, :-1] * dts, axis=1)
    fx = f.f(xt)
    res = fx - fx[:, :1] - comp
    return res if traj.states.ndim == 3 else res[0]


def coupling_gap(
    n: int,
    spec: ModelSpec,
    cfg: SchemeConfig,
    T: float,
    init_a,
    init_b,
    *,
    save_every: int = 1,
    replicas: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Gap ``sum_i |X_i(t) - Xt_i(t)|`` between two systems driven by the same noise.

    Returns ``(grid, gap)``; ``gap`` has shape ``(K,)`` for one replica and
    ``(replicas, K)`` otherwise, replica r using stream ``cfg.stream_id + r``.
    """
    a = _initial_states(n, spec, init_a)
    b = _initial_states(n, spec, init_b)
    streams = cfg.stream_id + np.arange(replicas, dtype=np.uint64)
    both = np.concatenate([streams, streams])
    x0 = np.concatenate([np.broadcast_to(a, (replicas, n)), np.broadcast_to(b, (replicas, n))])
    batch = _run(x0, spec, cfg, T, both, save_every=save_every)
    gap = np.abs(batch.states[:replicas] - batch.states[replicas:]).sum(axis=1)
    return batch.grid, (gap[0] if replicas == 1 else gap)
