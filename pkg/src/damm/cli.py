"""Command-line front end: ``damm {simulate,fit,filter,forecast,bench}``.

Each command reads a YAML config (see :mod:`damm.config`), writes its outputs
under ``--out`` and records run metadata (including wall-clock timestamps) in
``metadata.json`` there. All other outputs are deterministic given the config
and seed. Log verbosity comes from the ``DAMM_LOG`` environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import BenchConfig, FilterConfig, FitConfig, ForecastConfig, SimulateConfig, load_config
from .errors import DammError, EstimationError, SpecError
from .estimation import fit_ml
from .io import read_csv, write_csv, write_json
from .mappings import assemble_full_map
from .score import FilterTrace, filter_pass, mixture_moments
from .simulation import (
    corr_pattern_path,
    implied_corr_path,
    simulate_bivariate_corr,
    simulate_damm,
    simulate_dgp4,
    simulate_mixfix,
    simulate_sdmm,
    weight_pattern_path,
)
from .studies import TABLE_COLUMNS, run_study

log = logging.getLogger("damm")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def _series_names(d: int) -> list[str]:
    return ["y"] if d == 1 else [f"y{i + 1}" for i in range(d)]


def _load_data(path, d: int) -> np.ndarray:
    header, data = read_csv(path)
    if data.shape[1] != d:
        raise SpecError(f"{path}: expected {d} data columns, found {data.shape[1]} ({header})")
    return data


def trace_table(trace: FilterTrace) -> tuple[list[str], np.ndarray]:
    spec = trace.spec
    J = spec.J
    header = (
        ["t", "loglik"]
        + [f"weight{j + 1}" for j in range(J)]
        + [f"xi{j + 1}" for j in range(J)]
        + [f"state.{lab}" for lab in spec.coordinate_labels()]
    )
    t = np.arange(1, trace.T + 1, dtype=float)
    body = np.column_stack([t, trace.loglik_contrib, trace.weights, trace.xi, trace.theta_tilde])
    return header, body


def _write_trace(path, trace: FilterTrace) -> None:
    header, body = trace_table(trace)
    rows = [[int(r[0])] + list(r[1:]) for r in body]
    write_csv(path, header, rows)


# ---------------------------------------------------------------------------
# Commands. Each returns the list of files written.
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: SimulateConfig, out: Path, jobs: int = 1) -> list[Path]:
    rng = np.random.default_rng(cfg.seed)
    T = cfg.T
    if cfg.generator == "sdmm":
        path = simulate_sdmm(T, rng)
        data = path.data[:, None]
        truth_header = ["omega", "mean", "variance", "mu1", "mu2", "sigma2_1", "sigma2_2"]
        truth = np.column_stack([path.omega, path.mean, path.variance, path.mu, path.sigma2])
    elif cfg.generator == "corr-pattern":
        rho = corr_pattern_path(cfg.pattern, T, rng)
        data = simulate_bivariate_corr(rho, rng)
        truth_header, truth = ["rho"], rho[:, None]
    elif cfg.generator == "weight-pattern":
        omega = weight_pattern_path(cfg.pattern, T, rng)
        data = simulate_mixfix(omega, rng)[:, None]
        truth_header, truth = ["omega"], omega[:, None]
    elif cfg.generator == "dgp":
        data, corr, trace = simulate_dgp4(cfg.dgp, T, rng)
        d = data.shape[1]
        pairs = [(i, k) for i in range(d) for k in range(i + 1, d)]
        truth_header = ["weight1"] + [f"rho{i + 1}{k + 1}" for i, k in pairs]
        truth = np.column_stack([trace.weights[:, 0]] + [corr[:, i, k] for i, k in pairs])
    else:
        spec = cfg.spec.build()
        data, trace = simulate_damm(spec, cfg.coefficients.build(), T, rng)
        truth_header, truth = trace_table(trace)
    data_path = out / cfg.data_file
    truth_path = out / cfg.truth_file
    write_csv(data_path, _series_names(data.shape[1]), data)
    write_csv(truth_path, truth_header, truth)
    print(f"simulate: generator={cfg.generator} seed={cfg.seed} rows={T} columns={data.shape[1]} -> {data_path}, {truth_path}")
    return [data_path, truth_path]


def cmd_fit(cfg: FitConfig, out: Path, jobs: int = 1) -> list[Path]:
    spec = cfg.spec.build()
    y = _load_data(cfg.data, spec.d)
    config = cfg.estimation.build(cfg.seed)
    fixed_state = None if cfg.fixed_state is None else np.asarray(cfg.fixed_state, dtype=float)
    try:
        fit = fit_ml(spec, y, config, fixed_blocks=tuple(cfg.fixed_blocks), fixed_state=fixed_state)
    except EstimationError as exc:
        diag = out / "fit_error.json"
        write_json(diag, {"error": str(exc), "diagnostics": getattr(exc, "diagnostics", None)})
        raise
    result_path = out / cfg.result_file
    write_json(result_path, fit.to_dict())
    written = [result_path]
    if cfg.write_trace:
        trace_path = out / cfg.trace_file
        _write_trace(trace_path, fit.filter(y))
        written.append(trace_path)
    print(f"fit: loglik={fit.loglik!r} params={fit.n_params} converged={fit.converged} -> {result_path}")
    return written


def cmd_filter(cfg: FilterConfig, out: Path, jobs: int = 1) -> list[Path]:
    spec = cfg.spec.build()
    y = _load_data(cfg.data, spec.d)
    trace = filter_pass(spec, cfg.coefficients.build(), y)
    path = out / cfg.trace_file
    _write_trace(path, trace)
    print(f"filter: rows={trace.T} loglik={trace.loglik!r} -> {path}")
    return [path]


def _component_dict(p) -> dict:
    d = {"type": type(p).__name__}
    d.update(dataclasses.asdict(p))
    return d


def cmd_forecast(cfg: ForecastConfig, out: Path, jobs: int = 1) -> list[Path]:
    """One-step-ahead predictive mixture after the last observation."""
    spec = cfg.spec.build()
    y = _load_data(cfg.data, spec.d)
    trace = filter_pass(spec, cfg.coefficients.build(), y)
    params, _ = assemble_full_map(spec, trace.next_state)
    result = {
        "horizon": 1,
        "n_obs": trace.T,
        "state": trace.next_state,
        "weights": params.weights,
        "components": [_component_dict(c) for c in params.components],
    }
    if spec.is_copula:
        result["mean"] = result["covariance"] = None
    else:
        mean, cov = mixture_moments(params.weights, params.components)
        result["mean"], result["covariance"] = mean, cov
    if spec.family == "mv-gaussian":
        result["correlation"] = implied_corr_path(spec, trace.next_state[None, :])[0]
    path = out / cfg.forecast_file
    write_json(path, result)
    print(f"forecast: horizon=1 after {trace.T} observations -> {path}")
    return [path]


def cmd_bench(cfg: BenchConfig, out: Path, jobs: int = 1) -> list[Path]:
    result = run_study(cfg.settings(), jobs=jobs)
    rows = result.table()
    path = out / cfg.table_file
    write_csv(path, TABLE_COLUMNS, [[r[c] for c in TABLE_COLUMNS] for r in rows])
    failed = sum(r["n_failed"] for r in rows)
    print(f"bench: study={cfg.study} B={cfg.B} T={cfg.T} seed={cfg.seed} rows={len(rows)} failed={failed} -> {path}")
    return [path]


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "filter": cmd_filter, "forecast": cmd_forecast, "bench": cmd_bench}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _configure_logging():
    level = os.environ.get("DAMM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="damm", description="Dynamic adaptive mixture models")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        doc = COMMANDS[name].__doc__
        p = sub.add_parser(name, help=doc.strip().splitlines()[0] if doc else f"run the {name} command")
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed (unsigned 64-bit)")
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes (bench only)")
        p.add_argument("--out", default=".", help="output directory")
    return parser


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    try:
        cfg = load_config(args.config, args.command)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise SpecError("config error: --seed must be an unsigned 64-bit integer")
            cfg = cfg.model_copy(update={"seed": args.seed})
    except (SpecError, FileNotFoundError) as exc:
        print(f"damm: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = COMMANDS[args.command](cfg, out, jobs=max(1, args.jobs))
        write_json(
            out / "metadata.json",
            {
                "command": args.command,
                "version": __version__,
                "seed": cfg.seed,
                "config": cfg.model_dump(),
                "outputs": [str(p) for p in written],
                "started": started,
                "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            },
        )
    except (DammError, OSError, ValueError) as exc:
        print(f"damm: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
