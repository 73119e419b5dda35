"""Model coefficients for the mean-field square-root system and their checks.

The drift is ``b(x, mu) = delta + (mean(mu) - x) * phi(mu)`` and the
diffusion ``sigma(x) = sqrt(x) * g(x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .measures import EmpiricalMeasure, GammaParams, wasserstein1

__all__ = [
    "AssumptionError",
    "AssumptionReport",
    "GSpec",
    "InitialLaw",
    "ModelSpec",
    "PhiSpec",
    "validate_assumptions",
]


class AssumptionError(ValueError):
    """A model coefficient violates the standing assumptions."""

    def __init__(self, assumption: str, detail: str = "", report: AssumptionReport | None = None):
        self.assumption = assumption
        self.report = report
        super().__init__(f"{assumption}: {detail}" if detail else assumption)


@dataclass(frozen=True)
class PhiSpec:
    """Interaction intensity ``phi(mu)`` with declared bounds ``lo <= phi <= hi``.

    Kinds: ``constant`` (value c), ``logistic_in_mean``
    ``lo + (hi - lo) / (1 + exp(-a (mean - b)))`` and ``custom`` (callback on a
    1-D array of atoms).
    """

    kind: str
    lo: float
    hi: float
    params: tuple = ()
    fn: Callable[[np.ndarray], float] | None = field(default=None, compare=False)
    lipschitz: float | None = None

    @classmethod
    def constant(cls, c: float) -> PhiSpec:
        if not c >= 0:
            raise AssumptionError("phi nonnegativity", f"constant phi={c} < 0")
        return cls("constant", float(c), float(c), (float(c),), lipschitz=0.0)

    @classmethod
    def logistic_in_mean(cls, a: float, b: float, lo: float, hi: float) -> PhiSpec:
        if not (0 <= lo <= hi):
            raise ValueError("need 0 <= lo <= hi")
        return cls("logistic_in_mean", float(lo), float(hi), (float(a), float(b)), lipschitz=(hi - lo) * abs(a) / 4.0)

    @classmethod
    def custom(cls, fn: Callable[[np.ndarray], float], lo: float, hi: float, lipschitz: float | None = None) -> PhiSpec:
        if not (lo <= hi):
            raise ValueError("need lo <= hi")
        return cls("custom", float(lo), float(hi), (), fn=fn, lipschitz=lipschitz)

    def _logistic(self, mean):
        a, b = self.params
        return self.lo + (self.hi - self.lo) * special.expit(a * (mean - b))

    def __call__(self, atoms) -> float:
        if isinstance(atoms, EmpiricalMeasure):
            atoms = atoms.atoms
        atoms = np.asarray(atoms, dtype=float)
        if self.kind == "constant":
            return self.lo
        if self.kind == "logistic_in_mean":
            return float(self._logistic(atoms.mean()))
        return float(self.fn(atoms))

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Row-wise phi for an ``(R, n)`` array of ensembles."""
        if self.kind == "constant":
            return np.full(x.shape[0], self.lo)
        if self.kind == "logistic_in_mean":
            return self._logistic(x.mean(axis=1))
        return np.array([float(self.fn(row)) for row in x])

    def depends_on_mean_only(self) -> bool:
        return self.kind in ("constant", "logistic_in_mean")

    def of_mean(self, mean):
        """phi as a function of the first moment (mean-only kinds)."""
        if self.kind == "constant":
            return np.full(np.shape(mean), self.lo) if np.ndim(mean) else self.lo
        if self.kind == "logistic_in_mean":
            return self._logistic(mean)
        raise TypeError("custom phi is not a function of the mean alone")


@dataclass(frozen=True)
class GSpec:
    """Diffusion factor g in ``sigma(x) = sqrt(x) g(x)``."""

    kind: str
    inf: float
    sup: float
    fn: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)

    @classmethod
    def constant(cls, c: float = 2.0) -> GSpec:
        if not c > 0:
            raise AssumptionError("g positivity", f"constant g={c} must be > 0")
        return cls("constant", float(c), float(c))

    @classmethod
    def custom(cls, fn, inf: float, sup: float) -> GSpec:
        return cls("custom", float(inf), float(sup), fn=fn)

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def __call__(self, x):
        if self.kind == "constant":
            return np.full(np.shape(x), self.inf) if np.ndim(x) else self.inf
        return self.fn(x)

    def sigma(self, x: np.ndarray) -> np.ndarray:
        xp = np.maximum(x, 0.0)
        if self.kind == "constant":
            return self.inf * np.sqrt(xp)
        return np.sqrt(xp) * self.fn(xp)


@dataclass(frozen=True)
class InitialLaw:
    """Initial law lambda: a point mass, a list of atoms, or a Gamma law."""

    kind: str
    x0: float = 0.0
    atoms: tuple = ()
    gamma: GammaParams | None = None

    @classmethod
    def point(cls, x0: float) -> InitialLaw:
        if not x0 >= 0:
            raise ValueError("point mass must sit in [0, inf)")
        return cls("point", x0=float(x0))

    @classmethod
    def from_atoms(cls, atoms: Sequence[float]) -> InitialLaw:
        atoms = tuple(float(a) for a in atoms)
        if not atoms or min(atoms) < 0:
            raise ValueError("atoms must be a non-empty list of non-negative reals")
        return cls("atoms", atoms=atoms)

    @classmethod
    def gamma_law(cls, params: GammaParams) -> InitialLaw:
        return cls("gamma", gamma=params)

    @property
    def m_lambda(self) -> float:
        if self.kind == "point":
            return self.x0
        if self.kind == "atoms":
            return float(np.mean(self.atoms))
        return self.gamma.mean

    def configuration(self, n: int) -> np.ndarray:
        """Deterministic n-particle initial configuration converging to lambda."""
        if self.kind == "point":
            return np.full(n, self.x0)
        if self.kind == "atoms":
            src = np.sort(np.asarray(self.atoms))
            if src.size == n:
                return src.copy()
            return np.quantile(src, (np.arange(n) + 0.5) / n, method="inverted_cdf")
        return self.gamma.quantiles(n)

    def laplace(self, x):
        """Laplace transform ``int exp(-x y) lambda(dy)``."""
        x = np.asarray(x, dtype=float)
        if self.kind == "point":
            return np.exp(-x * self.x0)
        if self.kind == "atoms":
            return np.mean(np.exp(-np.multiply.outer(x, np.asarray(self.atoms))), axis=-1)
        return (1.0 + self.gamma.a * x) ** (-self.gamma.b)


@dataclass(frozen=True)
class ModelSpec:
    delta: float
    phi: PhiSpec
    g: GSpec
    initial_law: InitialLaw

    def __post_init__(self):
        if not (self.delta >= 0 and math.isfinite(self.delta)):
            raise AssumptionError("delta >= 0", f"got delta={self.delta}")

    @property
    def m_lambda(self) -> float:
        return self.initial_law.m_lambda

    def drift(self, x, mean, phi):
        return self.delta + (mean - x) * phi

    def drift_lipschitz(self, state_bound: float = 0.0) -> float:
        """Constant C with sum_i |b(x_i, mu) - b(y_i, nu)| <= C sum_i |x_i - y_i|.

        For non-constant phi the ``(mean - x) * phi`` product is only Lipschitz
        on bounded states, so ``state_bound`` enters through phi's constant.
        """
        lip_phi = self.phi.lipschitz or 0.0
        return 2.0 * self.phi.hi + 2.0 * state_bound * lip_phi


@dataclass
class AssumptionReport:
    min_b0: float
    phi_range: tuple[float, float]
    phi_violations: int
    g_range: tuple[float, float]
    g_violations: int
    phi_lipschitz_estimate: float
    phi_lipschitz_declared: float | None
    m_lambda: float
    passed: bool = True
    failures: list[str] = field(default_factory=list)


def _probe_measures(spec: ModelSpec, probes: int, rng: np.random.Generator) -> list[np.ndarray]:
    m = max(spec.m_lambda, 1e-3)
    out = [spec.initial_law.configuration(64)]
    for _ in range(probes):
        size = int(rng.integers(2, 64))
        shape = rng.uniform(0.2, 5.0)
        scale = rng.uniform(0.05, 4.0) * m / shape
        out.append(rng.gamma(shape, scale, size))
    return out


def validate_assumptions(spec: ModelSpec, probes: int = 64, seed: int = 0) -> AssumptionReport:
    """Check coefficient assumptions on sampled measures; raise on violation."""
    if probes < 1:
        raise ValueError("probes must be >= 1")
    rng = np.random.default_rng(seed)
    mus = _probe_measures(spec, probes, rng)

    phis = np.array([spec.phi(mu) for mu in mus])
    phi_viol = int(np.sum((phis < spec.phi.lo - 1e-12) | (phis > spec.phi.hi + 1e-12)))
    b0 = np.array([spec.drift(0.0, mu.mean(), p) for mu, p in zip(mus, phis)])

    xs = np.concatenate([[0.0], np.geomspace(1e-8, 1e4, 200)])
    gs = np.asarray(spec.g(xs), dtype=float)
    g_viol = int(np.sum(~np.isfinite(gs) | (gs <= 0) | (gs < spec.g.inf - 1e-12) | (gs > spec.g.sup + 1e-12)))

    lip = 0.0
    for mu in mus[1:]:
        bumped = mu + rng.uniform(0.0, 0.05 * max(mu.mean(), 1e-3), mu.size)
        d = wasserstein1(EmpiricalMeasure(mu), EmpiricalMeasure(bumped))
        if d > 0:
            lip = max(lip, abs(spec.phi(bumped) - spec.phi(mu)) / d)

    report = AssumptionReport(
        min_b0=float(b0.min()),
        phi_range=(float(phis.min()), float(phis.max())),
        phi_violations=phi_viol,
        g_range=(float(np.nanmin(gs)), float(np.nanmax(gs))),
        g_violations=g_viol,
        phi_lipschitz_estimate=lip,
        phi_lipschitz_declared=spec.phi.lipschitz,
        m_lambda=spec.m_lambda,
    )
    checks = [
        (spec.phi.lo >= 0 and phis.min() >= 0, "phi nonnegativity", f"min sampled phi = {phis.min():.6g}"),
        (phi_viol == 0, "phi bounds", f"{phi_viol} probes outside [{spec.phi.lo}, {spec.phi.hi}]"),
        (g_viol == 0 and spec.g.inf > 0, "g positivity/boundedness", f"{g_viol} probes violate 0 < g in [{spec.g.inf}, {spec.g.sup}]"),
        (spec.m_lambda > 0, "m_lambda > 0", f"initial law has first moment {spec.m_lambda:.6g}"),
        (report.min_b0 > 0, "b(0, .) > 0", f"min sampled b(0, mu) = {report.min_b0:.6g}"),
        (
            spec.phi.lipschitz is None or lip <= spec.phi.lipschitz * (1 + 1e-6) + 1e-12,
            "phi Lipschitz",
            f"finite-difference estimate {lip:.6g} exceeds declared {spec.phi.lipschitz}",
        ),
    ]
    for ok, name, detail in checks:
        if not ok:
            report.failures.append(f"{name}: {detail}")
    report.passed = not report.failures
    if not report.passed:
        first, detail = next((name, detail) for ok, name, detail in checks if not ok)
        raise AssumptionError(first, "; ".join([detail, *report.failures[1:]]), report)
    return report
