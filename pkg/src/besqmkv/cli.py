"""Command-line experiment runner.

    besqmkv <kind> key=value ... [--config FILE] [--out DIR] [--threads K]

Every run writes deterministic CSV files plus ``manifest.json`` into the
output directory.  Exit codes: 0 success, 1 usage error, 2 a model
assumption failed, 3 a numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy
from scipy import stats

from .analytics import LaplaceGrid, classify_boundary, laplace_pde_solve, stationary_fixed_point
from .ldp import RareEvent, constant_control_search, rate_fit
from .measures import EmpiricalMeasure, GammaParams, fmt, ks_statistic
from .mckean_vlasov import picard_iterate, solve_selfconsistent, variance_closed_form, variance_ode
from .model import AssumptionError, GSpec, InitialLaw, ModelSpec, PhiSpec, validate_assumptions
from .particles import NumericalError, coupling_gap, simulate_replicas
from .sde import SchemeConfig, cir_transition

__all__ = ["main", "parse_config", "run", "emit_manifest", "ConfigError"]


class ConfigError(ValueError):
    pass


MODEL_KEYS = {
    "delta": (float, 0.0),
    "phi": (str, "const:1"),
    "g": (str, "const:2"),
    "lambda": (str, "point:1"),
    "T": (float, 1.0),
    "dt": (float, 1e-3),
    "seed": (int, 0),
    "scheme": (str, "FullTruncationEuler"),
    "validate": (int, 1),
}

KINDS = {
    "simulate": (
        "n-particle system replicas; terminal-mean summary (acceptance 1, 2, 8, 10)",
        {"n": (int, 1000), "replicas": (int, 1), "save_every": (int, 10), "mean_field": (str, "empirical"), "perturb": (float, 0.0)},
    ),
    "mkv": (
        "law flow of the limit equation by ensemble or Picard iteration (acceptance 5)",
        {"N": (int, 5000), "mean_field": (str, "empirical"), "picard": (int, 0), "tol": (float, 1e-3), "max_iter": (int, 50)},
    ),
    "variance": (
        "ensemble variance against the variance ODE and its closed form (acceptance 3)",
        {"N": (int, 5000), "probes": (str, "0.5,1,2")},
    ),
    "stationary": (
        "stationary Gamma fixed point, optionally checked by a long run (acceptance 4, 12)",
        {"N": (int, 0), "tol": (float, 1e-12), "max_iter": (int, 1000)},
    ),
    "laplace": (
        "Laplace transform by characteristics against exact sampling (acceptance 7)",
        {"t": (str, "0.5,1"), "x": (str, "0.5,1,2"), "samples": (int, 100000), "dt_char": (float, 1e-4)},
    ),
    "boundary": (
        "boundary classification at zero (acceptance 11)",
        {"m_lambda": (float, None), "phi_inf": (float, None), "phi_sup": (float, None)},
    ),
    "ldp": (
        "rare-event decay rates and constant-control cost (acceptance 8, 9)",
        {
            "event": (str, "TerminalMeanAbove"),
            "a": (float, None),
            "n_list": (str, "50,100,200"),
            "replicas": (int, 2000),
            "u_max": (float, 3.0),
            "u_step": (float, 0.025),
            "N": (int, 20000),
        },
    ),
    "chaos": (
        "correlation of two tagged particles against n (acceptance 6)",
        {"n_list": (str, "100,400,1600"), "replicas": (int, 2000)},
    ),
}

POSITIVE = {"T", "dt", "n", "N", "replicas", "samples", "dt_char", "tol", "max_iter", "save_every", "u_step", "u_max"}


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def parse_phi(text: str) -> PhiSpec:
    kind, _, args = text.partition(":")
    vals = _floats(args)
    if kind in ("const", "constant") and len(vals) == 1:
        return PhiSpec.constant(vals[0])
    if kind in ("logistic", "logistic_in_mean") and len(vals) == 4:
        return PhiSpec.logistic_in_mean(*vals)
    raise ConfigError(f"bad phi spec {text!r}; use const:c or logistic:a,b,lo,hi")


def parse_g(text: str) -> GSpec:
    kind, _, args = text.partition(":")
    vals = _floats(args)
    if kind in ("const", "constant") and len(vals) == 1:
        return GSpec.constant(vals[0])
    raise ConfigError(f"bad g spec {text!r}; use const:c")


def parse_lambda(text: str) -> InitialLaw:
    kind, _, args = text.partition(":")
    vals = _floats(args)
    if kind == "point" and len(vals) == 1:
        return InitialLaw.point(vals[0])
    if kind == "gamma" and len(vals) == 2:
        return InitialLaw.gamma_law(GammaParams(*vals))
    if kind == "atoms" and vals:
        return InitialLaw.from_atoms(vals)
    raise ConfigError(f"bad lambda spec {text!r}; use point:x0, gamma:a,b or atoms:x1,x2,...")


def _read_config_file(path: str) -> tuple[str | None, dict[str, str]]:
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        return data.get("kind"), {k: str(v) for k, v in data.get("config", {}).items()}
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        out[key.strip()] = val.strip()
    return None, out


def parse_config(kind: str, tokens: dict[str, str]) -> dict:
    """Typed config with defaults; rejects unknown keys and bad values."""
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; choose from {', '.join(KINDS)}")
    schema = dict(MODEL_KEYS)
    schema.update(KINDS[kind][1])
    unknown = sorted(set(tokens) - set(schema))
    if unknown:
        raise ConfigError(f"unknown keys for {kind}: {', '.join(unknown)}")
    cfg = {}
    for key, (typ, default) in schema.items():
        if key in tokens:
            raw = tokens[key]
            try:
                val = typ(float(raw)) if typ is int and raw.replace(".", "", 1).lstrip("-").isdigit() else typ(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        else:
            val = default
        # a default of 0 means "off" and stays allowed
        if key in POSITIVE and val is not None and not (val > 0 or (default == 0 and val == 0)):
            raise ConfigError(f"{key} must be positive")
        if isinstance(val, float) and not math.isfinite(val):
            raise ConfigError(f"{key} must be finite")
        cfg[key] = val
    return cfg


def build_spec(cfg: dict) -> ModelSpec:
    return ModelSpec(cfg["delta"], parse_phi(cfg["phi"]), parse_g(cfg["g"]), parse_lambda(cfg["lambda"]))


def _scheme(cfg: dict, stream_id: int = 0) -> SchemeConfig:
    return SchemeConfig(dt=min(cfg["dt"], cfg["T"]), scheme=cfg["scheme"], seed=cfg["seed"], stream_id=stream_id)


def _write(out: Path, name: str, text: str, written: list) -> None:
    (out / name).write_text(text, newline="")
    written.append(name)


def _rows(header: str, rows) -> str:
    lines = [header]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def _run_simulate(cfg, spec, out, threads, written, log):
    n, R = cfg["n"], cfg["replicas"]
    sc = _scheme(cfg)
    batch = simulate_replicas(n, spec, sc, cfg["T"], R, save_every=cfg["save_every"], mean_field=cfg["mean_field"], threads=threads)
    _write(out, "summary.csv", batch.trajectory(0).measure_path.to_csv(), written)
    term = batch.terminal().mean(axis=1)
    _write(out, "replicas.csv", _rows("replica,terminal_mean,terminal_sum", ((str(r), term[r], term[r] * n) for r in range(R))), written)
    se = term.std(ddof=1) / math.sqrt(R) if R > 1 else float("nan")
    log(f"terminal mean {fmt(term.mean())} +/- {fmt(se)} (typical value {fmt(spec.m_lambda + spec.delta * cfg['T'])})")
    if cfg["perturb"] > 0:
        eps = cfg["perturb"]
        x0 = spec.initial_law.configuration(n)
        grid, gap = coupling_gap(n, spec, sc, cfg["T"], x0, x0 + eps / n, save_every=cfg["save_every"], replicas=R)
        gap = np.atleast_2d(gap)
        bound = eps * np.exp(spec.drift_lipschitz() * grid)
        _write(out, "coupling.csv", _rows("t,mean_gap,bound", zip(grid, gap.mean(axis=0), bound)), written)
        log(f"terminal coupling gap {fmt(gap[:, -1].mean())} (bound {fmt(1.5 * bound[-1])})")


def _run_mkv(cfg, spec, out, threads, written, log):
    sc = _scheme(cfg)
    if cfg["picard"]:
        law = picard_iterate(spec, cfg["N"], sc, cfg["T"], cfg["tol"], cfg["max_iter"], mean_field=cfg["mean_field"])
        log(f"Picard converged in {law.iterations} iterations, gaps {', '.join(fmt(g) for g in law.gaps)}")
    else:
        law = solve_selfconsistent(spec, cfg["N"], sc, cfg["T"], mean_field=cfg["mean_field"])
    _write(out, "law.csv", law.to_csv(), written)
    log(f"terminal mean {fmt(law.mean_path[-1])}, variance {fmt(law.var_path[-1])}")


def _run_variance(cfg, spec, out, threads, written, log):
    sc = _scheme(cfg)
    law = solve_selfconsistent(spec, cfg["N"], sc, cfg["T"], mean_field="exact", save_every=1)
    mean = spec.m_lambda + spec.delta * law.grid
    v_ode = variance_ode(law.phi_path, mean, law.grid)
    v_cf = variance_closed_form(law.phi_path, mean, law.grid)
    probes = [p for p in _floats(cfg["probes"]) if 0 < p <= cfg["T"]]
    idx = [int(np.argmin(np.abs(law.grid - p))) for p in probes]
    rows = []
    for k in idx:
        rel = abs(law.var_path[k] - v_ode[k]) / v_ode[k] if v_ode[k] > 0 else float("nan")
        rows.append((law.grid[k], law.var_path[k], v_ode[k], v_cf[k], rel))
    _write(out, "variance.csv", _rows("t,var_mc,var_ode,var_closed,rel_err", rows), written)
    for r in rows:
        log(f"t={fmt(r[0])}: ensemble {fmt(r[1])} vs ODE {fmt(r[2])} (rel err {fmt(r[4])})")


def _run_stationary(cfg, spec, out, threads, written, log):
    phi_star, gp = stationary_fixed_point(spec.phi, spec.m_lambda, cfg["tol"], cfg["max_iter"])
    row = [phi_star, gp.a, gp.b]
    header = "phi_star,a,b"
    if cfg["N"]:
        law = solve_selfconsistent(spec, cfg["N"], _scheme(cfg), cfg["T"], mean_field="exact")
        ks = ks_statistic(EmpiricalMeasure(law.states[:, -1]), gp)
        row.append(ks)
        header += ",ks"
        log(f"KS distance of the terminal ensemble to the Gamma law: {fmt(ks)}")
    _write(out, "stationary.csv", _rows(header, [row]), written)
    log(f"phi* = {fmt(phi_star)}; Gamma(a={fmt(gp.a)}, b={fmt(gp.b)})")


def _laplace_mc(spec: ModelSpec, c: float, t: float, xs, samples: int, rng) -> tuple[np.ndarray, np.ndarray]:
    law = spec.initial_law
    if law.kind == "point":
        x0 = np.full(samples, law.x0)
    elif law.kind == "gamma":
        x0 = rng.gamma(law.gamma.b, law.gamma.a, samples)
    else:
        x0 = rng.choice(np.asarray(law.atoms), samples)
    draws = cir_transition(x0, spec.m_lambda * c, c, t, rng, g=spec.g.inf)
    e = np.exp(-np.multiply.outer(np.asarray(xs), draws))
    return e.mean(axis=1), e.std(axis=1, ddof=1) / math.sqrt(samples)


def _run_laplace(cfg, spec, out, threads, written, log):
    if spec.delta != 0:
        raise ConfigError("the Laplace equation is stated for delta = 0")
    if not spec.phi.depends_on_mean_only():
        raise ConfigError("laplace needs a phi that depends on the mean only")
    if spec.g.inf != 2.0 or not spec.g.is_constant:
        raise ConfigError("laplace needs g = const:2")
    c = float(spec.phi.of_mean(spec.m_lambda))  # the mean is frozen at m_lambda when delta = 0
    ts, xs = _floats(cfg["t"]), _floats(cfg["x"])
    U = np.array([[laplace_pde_solve(c, spec.m_lambda, spec.initial_law.laplace, t, x, dt_char=cfg["dt_char"]) for x in xs] for t in ts])
    mc = np.empty_like(U)
    for i, t in enumerate(ts):
        rng = _scheme(cfg).rng(i).generator(0, 3)
        mc[i], _ = _laplace_mc(spec, c, t, xs, cfg["samples"], rng)
    grid = LaplaceGrid(np.array(ts), np.array(xs), U, mc, spec.m_lambda)
    _write(out, "laplace.csv", grid.to_csv(), written)
    log(f"max |U_pde - U_mc| = {fmt(np.abs(U - mc).max())}")


def _run_boundary(cfg, spec, out, threads, written, log):
    m = cfg["m_lambda"] if cfg["m_lambda"] is not None else spec.m_lambda
    lo = cfg["phi_inf"] if cfg["phi_inf"] is not None else spec.phi.lo
    hi = cfg["phi_sup"] if cfg["phi_sup"] is not None else spec.phi.hi
    rep = classify_boundary(m, lo, hi)
    _write(
        out,
        "boundary.csv",
        _rows(
            "m_lambda,phi_inf,phi_sup,lower,upper,class",
            [(m, lo, hi, rep.lower, rep.upper, rep.cls.value)],
        ),
        written,
    )
    log(rep.cls.value)


def _run_ldp(cfg, spec, out, threads, written, log):
    T = cfg["T"]
    a = cfg["a"] if cfg["a"] is not None else spec.m_lambda + spec.delta * T + 0.3
    event = RareEvent(cfg["event"], a)
    sc = _scheme(cfg)
    n_list = [int(v) for v in _floats(cfg["n_list"])]
    rep = rate_fit(event, spec, sc, T, n_list, cfg["replicas"], threads=threads)
    _write(out, "rates.csv", rep.to_csv(), written)
    steps = int(round(cfg["u_max"] / cfg["u_step"]))
    sign = -1.0 if event.kind == "TerminalMeanBelow" else 1.0
    u_grid = sign * cfg["u_step"] * np.arange(steps + 1)
    u_best, cost = constant_control_search(event, spec, T, u_grid, N=cfg["N"], cfg=sc)
    _write(out, "control.csv", _rows("event,u_best,cost", [(str(event), u_best, cost)]), written)
    log(f"rates {', '.join(fmt(r) for r in rep.rates)}; spread {fmt(rep.relative_spread)}; constant-control cost {fmt(cost)}")


def _run_chaos(cfg, spec, out, threads, written, log):
    sc = _scheme(cfg)
    rows = []
    for n in (int(v) for v in _floats(cfg["n_list"])):
        if n < 2:
            raise ConfigError("chaos needs n >= 2")
        term = simulate_replicas(n, spec, sc, cfg["T"], cfg["replicas"], threads=threads).terminal()
        r = float(np.corrcoef(term[:, 0], term[:, 1])[0, 1])
        rows.append((str(n), r, 1.0 / math.sqrt(cfg["replicas"])))
        log(f"n={n}: corr(X_1, X_2) = {fmt(r)}")
    _write(out, "chaos.csv", _rows("n,corr,stderr_null", rows), written)


RUNNERS = {
    "simulate": _run_simulate,
    "mkv": _run_mkv,
    "variance": _run_variance,
    "stationary": _run_stationary,
    "laplace": _run_laplace,
    "boundary": _run_boundary,
    "ldp": _run_ldp,
    "chaos": _run_chaos,
}


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"besqmkv": pkg, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


def emit_manifest(out: Path, kind: str, cfg: dict, outputs: list, wall_time: float) -> Path:
    """Write ``manifest.json``; feeding it back through ``--config`` reproduces the outputs."""
    data = {
        "kind": kind,
        "config": {k: v for k, v in cfg.items() if v is not None},
        "seed": cfg.get("seed"),
        "versions": _versions(),
        "outputs": outputs,
        "wall_time_s": round(wall_time, 3),
    }
    path = Path(out) / "manifest.json"
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def run(kind: str, cfg: dict, out: str | Path = ".", threads: int = 1, log=print) -> int:
    """Execute one experiment; returns the process exit code."""
    start = time.perf_counter()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written: list[str] = []
    try:
        spec = build_spec(cfg)
        if cfg["validate"] and kind != "boundary":
            validate_assumptions(spec)
        RUNNERS[kind](cfg, spec, out, threads, written, log)
    except AssumptionError as exc:
        print(f"assumption violated: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure in {kind}: {exc}", file=sys.stderr)
        return 3
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    emit_manifest(out, kind, cfg, written, time.perf_counter() - start)
    return 0


def _help_epilog() -> str:
    lines = ["experiment kinds:"]
    for name, (desc, keys) in KINDS.items():
        lines.append(f"  {name:<11}{desc}")
        lines.append(f"  {'':<11}keys: {', '.join(keys)}")
    lines.append(f"model keys (all kinds): {', '.join(MODEL_KEYS)}")
    lines.append("spec strings: phi=const:c | logistic:a,b,lo,hi; g=const:c; lambda=point:x0 | gamma:a,b | atoms:x1,x2,...")
    lines.append("exit codes: 0 ok, 1 usage/config error, 2 assumption violated, 3 numerical failure")
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="besqmkv",
        description="Mean-field square-root particle systems: simulation and analytic checks.",
        epilog=_help_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("kind", nargs="?", help="experiment kind (see below)")
    parser.add_argument("params", nargs="*", help="key=value settings")
    parser.add_argument("--config", help="key=value file or a manifest.json from a previous run")
    parser.add_argument("--out", default=".", help="output directory (default: current)")
    parser.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
    args = parser.parse_args(argv)

    tokens: dict[str, str] = {}
    kind = args.kind
    try:
        if args.config:
            file_kind, tokens = _read_config_file(args.config)
            if kind is None:
                kind = file_kind
            elif file_kind is not None and file_kind != kind:
                raise ConfigError(f"config file is for {file_kind!r}, not {kind!r}")
        if kind is None:
            parser.print_help(sys.stderr)
            return 1
        for tok in args.params:
            key, sep, val = tok.partition("=")
            if not sep or not key:
                raise ConfigError(f"expected key=value, got {tok!r}")
            tokens[key] = val
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = parse_config(kind, tokens)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    return run(kind, cfg, args.out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
