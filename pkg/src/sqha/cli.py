"""Command-line interface: simulate, scan-theta, analyze, gen-noise, validate."""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from . import svgplot
from .config import RunConfig, default_config, parse_config
from .correlated_noise import sample_increment
from .deterministic_solver import EvolveConfig, evolve, stationarity_residual, write_trajectory_csv
from .errors import ConfigurationError, SQHAError
from .grid_state import WFMField, init_profile, make_grid, normalize, read_profile_table
from .nonlocality import analyze
from .reporting import RUN_SCHEMA, write_ensemble_csv, write_json, write_noise_csv
from .sqha_solver import OBSERVABLES, SQHAConfig, run_ensemble, write_traces_csv

log = logging.getLogger("sqha")

MAX_SNAPSHOTS = 6


def resolve_seed(cfg: RunConfig, cli_seed: int | None) -> int:
    """--seed beats SQHA_SEED, which beats the config value."""
    if cli_seed is not None:
        seed = cli_seed
    elif os.environ.get("SQHA_SEED", "").strip():
        try:
            seed = int(os.environ["SQHA_SEED"])
        except ValueError:
            raise ConfigurationError(f"SQHA_SEED={os.environ['SQHA_SEED']!r} is not an integer") from None
    else:
        seed = cfg["ensemble"]["base_seed"]
    if not 0 <= seed < 2**64:
        raise ConfigurationError("seed must be an unsigned 64-bit integer")
    return seed


def _echo(cfg: RunConfig, **effective) -> dict:
    doc = cfg.echo()
    doc["effective"] = effective
    return doc


def _initial_field(cfg: RunConfig, grid=None) -> WFMField:
    grid = grid or cfg.grid()
    return init_profile(grid, cfg.profile_spec(grid), cfg.constants)


def _snapshot_plot(path, grid, times, densities, timestamp):
    idx = np.unique(np.linspace(0, len(times) - 1, min(MAX_SNAPSHOTS, len(times))).astype(int))
    series = [svgplot.Series(f"t={times[i]:.4g}", grid.centers, densities[i]) for i in idx]
    svgplot.write(path, series, title="density snapshots", xlabel="q", ylabel="n(q)", timestamp=timestamp)


def _trace_plot(path, traces, timestamp):
    series = []
    for name in OBSERVABLES + ("stationarity_residual",):
        rows = [(t, v) for _, t, nm, v in traces if nm == name]
        if not rows:
            continue
        ts = np.array(sorted({t for t, _ in rows}))
        mean = np.array([np.mean([v for t2, v in rows if t2 == t]) for t in ts])
        series.append(svgplot.Series(name, ts, np.abs(mean)))
    svgplot.write(path, series, title="observables (ensemble mean, absolute value)", xlabel="t", ylabel="value",
                  log_y=True, timestamp=timestamp)


# --- commands ------------------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, out: Path, seed: int, threads: int | None = None, timestamp: bool = True) -> dict:
    t0 = time.perf_counter()
    out.mkdir(parents=True, exist_ok=True)
    c = cfg.constants
    grid = cfg.grid()
    field0 = _initial_field(cfg, grid)
    V = cfg.potential(grid)
    e = cfg["evolve"]
    dt = cfg.dt()
    threads = threads or cfg["ensemble"]["threads"]
    members = cfg["ensemble"]["members"]
    noise = cfg.noise_model()

    ecfg = EvolveConfig(dt=dt, t_end=e["t_end"], record_every=e["record_every"], integrator=e["integrator"],
                        c_cfl=e["c_cfl"], floor=e["floor"])
    try:
        traj = evolve(field0, V, ecfg, c, include_qp=e["include_qp"])
    except SQHAError as exc:
        raise type(exc)(f"deterministic evolution failed: {exc}") from exc
    write_trajectory_csv(traj, out / "trajectory.csv")
    m0 = grid.integrate(field0.n)
    traces = []
    for t, f in zip(traj.times, traj.fields):
        traces.append((0, t, "mass_drift", grid.integrate(f.n) - m0))
        traces.append((0, t, "stationarity_residual", stationarity_residual(f, V, grid, c, e["floor"])))
    _snapshot_plot(out / "density.svg", grid, traj.times, [f.n for f in traj.fields], timestamp)

    diag = None
    steps = ecfg.n_steps
    if noise.theta > 0:
        scfg = SQHAConfig(dt=dt, t_end=e["t_end"], reanchor_interval=e["reanchor_interval"],
                          positivity_policy=e["positivity_policy"], renormalize_each_step=e["renormalize_each_step"],
                          max_retries=e["max_retries"], record_every=e["record_every"], c_cfl=e["c_cfl"],
                          floor=e["floor"])
        try:
            run = run_ensemble(field0, V, c, noise, scfg, base_seed=seed, members=members, threads=threads,
                               include_qp=e["include_qp"])
        except SQHAError as exc:
            raise type(exc)(f"stochastic ensemble failed: {exc}") from exc
        traces = run.traces
        write_ensemble_csv(out / "ensemble_final.csv", run.state.n, run.state.n0, grid)
        if members >= dg.MIN_MEMBERS:
            ens, n0 = run.state.n, run.state.n0[0]
            stats = dg.estimate_correlation(ens, grid, n0=n0, delta_t=e["t_end"])
            diag = dg.report(stats, dg.gradsq_variance(ens, grid, stats), dg.laplacian_variance(ens, grid, stats),
                             dg.cross_term(ens, grid), dg.qp_variance(ens, grid, c, stats, n0, e["floor"]))
        else:
            diag = {"skipped": f"needs at least {dg.MIN_MEMBERS} members, have {members}"}
    write_traces_csv(traces, out / "traces.csv")
    _trace_plot(out / "observables.svg", traces, timestamp)

    try:
        nonloc = _analyze_field(cfg, field0).to_dict()
    except SQHAError as exc:
        nonloc = {"error": str(exc)}
    final = {}
    for name in sorted({r[2] for r in traces}):
        last_t = max(r[1] for r in traces if r[2] == name)
        final[name] = float(np.mean([r[3] for r in traces if r[2] == name and r[1] == last_t]))
    doc = {
        "schema": RUN_SCHEMA,
        "command": "simulate",
        "config": _echo(cfg, dt=dt, base_seed=seed, members=members, threads=threads),
        "steps": steps,
        "recorded_times": len(traj.times),
        "final_observables": final,
        "diagnostics": diag,
        "nonlocality": nonloc,
    }
    if timestamp:
        doc["wall_clock_s"] = time.perf_counter() - t0
    write_json(out / "report.json", doc)
    return doc


def synthetic_variances(thetas, boltzmann: float = 1.0):
    """Plumbing check: exact (k theta)^3 and (k theta)^4 laws."""
    kt = np.asarray(thetas, dtype=float) * boltzmann
    return kt**3, kt**4


def cmd_scan_theta(cfg: RunConfig, out: Path, thetas, seed: int, threads: int | None = None,
                   synthetic: bool | None = None, timestamp: bool = True) -> dict:
    t0 = time.perf_counter()
    thetas = tuple(float(t) for t in thetas)
    if len(thetas) < 4:
        raise ConfigurationError(f"scan-theta needs at least 4 theta values, got {len(thetas)}")
    if any(not t > 0 for t in thetas):
        raise ConfigurationError("scan-theta values must be > 0")
    out.mkdir(parents=True, exist_ok=True)
    s = cfg["scan"]
    c = cfg.constants
    synthetic = s["synthetic"] if synthetic is None else synthetic
    if synthetic:
        v3, v4 = synthetic_variances(thetas, c.boltzmann)
        points = [{"theta": t, "var_istar": a, "var_grad_istar": b} for t, a, b in zip(thetas, v3, v4)]
        window = "synthetic"
    else:
        window = s["window"] if s["window"] == "coherence" else float(s["window"])
        res = dg.theta_sweep(thetas, n_cells=s["n_cells"], spacing=s["spacing"], members=s["members"],
                             base_seed=seed, form_factor=s["form_factor"], window=window, constants=c,
                             threads=threads or cfg["ensemble"]["threads"])
        points = [vars(p) for p in res.points]
        window = res.window_rule
    fit3 = dg.scaling_fit(thetas, [p["var_istar"] for p in points], c.boltzmann)
    fit4 = dg.scaling_fit(thetas, [p["var_grad_istar"] for p in points], c.boltzmann)
    kt = np.array(thetas) * c.boltzmann
    series = [
        svgplot.Series("Var(I*)", kt, [p["var_istar"] for p in points], "scatter"),
        svgplot.Series(f"fit slope {fit3.exponent:.3f}", kt, np.exp(fit3.intercept) * kt**fit3.exponent),
        svgplot.Series("Var(dI*/dq)", kt, [p["var_grad_istar"] for p in points], "scatter"),
        svgplot.Series(f"fit slope {fit4.exponent:.3f}", kt, np.exp(fit4.intercept) * kt**fit4.exponent),
    ]
    svgplot.write(out / "scan.svg", series, title="fluctuation variance against k theta", xlabel="k theta",
                  ylabel="variance", log_x=True, log_y=True, timestamp=timestamp)

    def fit_doc(f):
        return {"exponent": f.exponent, "exponent_se": f.exponent_se, "intercept": f.intercept, "r2": f.r_squared}

    doc = {
        "schema": "sqha.scan.v1",
        "command": "scan-theta",
        "config": _echo(cfg, thetas=list(thetas), base_seed=seed, synthetic=synthetic),
        "window": window,
        "points": points,
        "slope": fit3.exponent,
        "fit": {"istar": fit_doc(fit3), "grad_istar": fit_doc(fit4)},
    }
    if timestamp:
        doc["wall_clock_s"] = time.perf_counter() - t0
    write_json(out / "scan.json", doc)
    return doc


def _analyze_field(cfg: RunConfig, field: WFMField):
    a = cfg["analysis"]
    return analyze(field, cfg.constants, theta=cfg["noise"]["theta"], resolution=a["resolution"],
                   system_length=a["system_length"], floor=a["floor"], macro_ratio=a["macro_ratio"],
                   local_ratio=a["local_ratio"])


def cmd_analyze(cfg: RunConfig, out: Path, data: str | None = None):
    out.mkdir(parents=True, exist_ok=True)
    grid = cfg.grid()
    if data:
        n = read_profile_table(data, grid)
        if not np.any(n > 0):
            raise ConfigurationError(f"{data}: profile is zero on the grid")
        field = normalize(WFMField(grid, n))
    else:
        field = _initial_field(cfg, grid)
    rep = _analyze_field(cfg, field)
    doc = rep.to_dict()
    doc["config"] = _echo(cfg, data=data)
    doc["verdict_line"] = rep.verdict_line()
    write_json(out / "nonlocality.json", doc)
    return rep


def cmd_gen_noise(cfg: RunConfig, out: Path, seed: int, timestamp: bool = True) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    grid = cfg.grid()
    model = cfg.noise_model()
    g = cfg["gen_noise"]
    samples = sample_increment(grid, model, g["dt"], seed, size=g["samples"])
    write_noise_csv(out / "noise.csv", samples, grid)
    lag_max = min(grid.n_cells // 2, 64)
    x = samples - samples.mean(axis=0) if samples.shape[0] > 1 else samples
    emp = np.array([np.mean(x * np.roll(x, -k, axis=-1)) for k in range(lag_max + 1)])
    emp = emp / emp[0] if emp[0] > 0 else emp
    lags = grid.spacing * np.arange(lag_max + 1)
    target = model.kernel(lags / model.lambda_c) if model.theta > 0 else np.where(lags == 0, 1.0, 0.0)
    svgplot.write(out / "noise_correlation.svg",
                  [svgplot.Series("sampled", lags, emp, "scatter"), svgplot.Series("kernel", lags, target)],
                  title="noise correlation", xlabel="distance", ylabel="G", timestamp=timestamp)
    svgplot.write(out / "noise_samples.svg",
                  [svgplot.Series(f"sample {i}", grid.centers, samples[i]) for i in range(min(3, len(samples)))],
                  title="sampled increments", xlabel="q", ylabel="increment", timestamp=timestamp)
    doc = {"schema": "sqha.noise_report.v1", "command": "gen-noise", "config": _echo(cfg, base_seed=seed),
           "lambda_c": model.lambda_c, "g0": model.g0, "variance_target": model.g0 * g["dt"],
           "variance_sampled": float(np.mean(samples**2)), "lags": lags, "G_sampled": emp, "G_kernel": target}
    write_json(out / "noise.json", doc)
    return doc


def cmd_validate(out: Path, only=None, qp_prefactor: float | None = None, echo=print) -> int:
    from . import acceptance
    from .quantum_potential import mutated_prefactor

    out.mkdir(parents=True, exist_ok=True)
    if qp_prefactor is None:
        results = acceptance.run(only, echo=echo)
    else:
        with mutated_prefactor(qp_prefactor):
            results = acceptance.run(only, echo=echo)
    failed = [r.number for r in results if not r.passed]
    write_json(out / "acceptance.json", {"schema": "sqha.acceptance.v1", "qp_prefactor_scale": qp_prefactor,
                                         "results": [vars(r) for r in results], "failed": failed})
    echo(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return 1 if failed else 0


# --- argument parsing ------------------------------------------------------------------

def _parse_only(text: str):
    try:
        items = sorted({int(t) for t in text.replace(",", " ").split()})
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected criterion numbers, got {text!r}") from None
    if not items or any(not 1 <= i <= 10 for i in items):
        raise argparse.ArgumentTypeError("criterion numbers run from 1 to 10")
    return items


def _parse_thetas(text: str):
    try:
        return tuple(float(t) for t in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad theta list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file (defaults apply when omitted)")
    common.add_argument("--out", help="output directory (overrides [output] directory)")
    common.add_argument("--seed", type=int, help="base seed (overrides SQHA_SEED and the config)")
    common.add_argument("--threads", type=int, help="worker threads for ensembles")
    common.add_argument("--no-timestamp", action="store_true", help="omit timestamps and wall-clock times")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="sqha", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="deterministic run plus stochastic ensemble")
    scan = sub.add_parser("scan-theta", parents=[common], help="variance scaling against theta")
    scan.add_argument("--thetas", type=_parse_thetas, help="theta values (overrides [scan] thetas)")
    scan.add_argument("--synthetic", action="store_true", help="analytic variances, no dynamics")
    an = sub.add_parser("analyze", parents=[common], help="tail exponent, lambda_L and regime of a profile")
    an.add_argument("--data", help="two-column (q, n) table with a header line")
    sub.add_parser("gen-noise", parents=[common], help="dump sampled noise fields")
    val = sub.add_parser("validate", parents=[common], help="run the acceptance suite")
    val.add_argument("--only", type=_parse_only, help="criterion numbers, e.g. 3,4")
    val.add_argument("--qp-prefactor-scale", type=float, help="test hook: scale the quantum-potential prefactor")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = parse_config(args.config) if args.config else default_config()
        out = Path(args.out or cfg["output"]["directory"])
        if args.threads is not None and args.threads < 1:
            raise ConfigurationError("--threads must be >= 1")
        stamp = not args.no_timestamp
        if args.command == "validate":
            return cmd_validate(out, args.only, args.qp_prefactor_scale)
        seed = resolve_seed(cfg, args.seed)
        if args.command == "simulate":
            doc = cmd_simulate(cfg, out, seed, args.threads, stamp)
            print(f"simulate: {doc['steps']} steps written to {out}")
        elif args.command == "scan-theta":
            thetas = args.thetas if args.thetas is not None else cfg["scan"]["thetas"]
            doc = cmd_scan_theta(cfg, out, thetas, seed, args.threads, args.synthetic or None, stamp)
            print(f"scan-theta: slope {doc['fit']['istar']['exponent']:.4f} (I*), "
                  f"{doc['fit']['grad_istar']['exponent']:.4f} (dI*/dq)")
        elif args.command == "analyze":
            print(cmd_analyze(cfg, out, args.data).verdict_line())
        elif args.command == "gen-noise":
            doc = cmd_gen_noise(cfg, out, seed, stamp)
            print(f"gen-noise: {cfg['gen_noise']['samples']} samples, lambda_c {doc['lambda_c']:.6g}")
    except SQHAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
