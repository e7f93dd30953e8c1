"""Command-line interface: ``ssi-sampler {sample,compare,ablate,diag}``.

Exit codes: 0 success, 1 runtime failure (partial artifacts kept), 2 invalid
configuration or arguments. Progress goes to stderr; ``diag`` prints JSON on
stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import analysis
from .config import ConfigError, bundled_configs, load_config, resolve_config_path
from .io import to_jsonable

OUTPUT_ROOT_ENV = "SSI_SAMPLER_OUTPUT_ROOT"

log = logging.getLogger("ssi_sampler")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def _run_dir(explicit: str | None, cfg_dir: str | None, name: str) -> Path:
    if explicit:
        return Path(explicit)
    if cfg_dir:
        return Path(cfg_dir)
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
    return output_root() / f"{name}-{stamp}"


def _progress(done, total):
    log.info("blocks finished: %d/%d", done, total)


def cmd_sample(args) -> int:
    from .experiments import RunFailure, run_experiment

    try:
        path = resolve_config_path(args.config)
        cfg = load_config(path)
        if args.seed is not None:
            cfg = cfg.model_copy(update={"seed": args.seed})
    except ConfigError as err:
        log.error("%s", err)
        return EXIT_INVALID
    out = _run_dir(args.output, cfg.output.directory, path.stem)
    log.info("running %s (%s) -> %s", path.stem, cfg.method.name, out)
    try:
        outcome = run_experiment(cfg, out, source=str(path), workers=args.workers, progress=_progress)
    except RunFailure as err:
        log.error("run failed: %s (partial artifacts in %s)", err, out)
        return EXIT_RUNTIME
    except (ValueError, TypeError) as err:
        log.error("%s", err)
        return EXIT_INVALID
    log.info("metrics: %s", json.dumps(to_jsonable({k: v for k, v in outcome.metrics.to_dict().items() if k != "mode_weights"})))
    return EXIT_OK


def cmd_compare(args) -> int:
    from .experiments import compare_configs

    try:
        path = resolve_config_path(args.config_dir)
    except ConfigError as err:
        log.error("%s", err)
        return EXIT_INVALID
    if not path.is_dir():
        log.error("%s is not a directory", path)
        return EXIT_INVALID
    files = sorted(p for p in path.iterdir() if p.suffix in (".yaml", ".yml"))
    if not files:
        log.error("no config files in %s", path)
        return EXIT_INVALID
    try:
        configs = [(p.stem, load_config(p)) for p in files]
    except ConfigError as err:
        log.error("%s", err)
        return EXIT_INVALID
    out = _run_dir(args.output, None, f"compare-{path.name}")
    try:
        labels, _, failed = compare_configs(configs, out, workers=args.workers, progress=_progress)
    except ValueError as err:
        log.error("%s", err)
        return EXIT_INVALID
    log.info("comparison table: %s", out / "table.csv")
    if failed:
        log.error("failed methods: %s", ", ".join(failed))
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .experiments import run_ablation

    try:
        path = resolve_config_path(args.config)
        cfg = load_config(path)
        if cfg.ablation is None:
            raise ConfigError(f"{path}: missing 'ablation' section")
    except ConfigError as err:
        log.error("%s", err)
        return EXIT_INVALID
    out = _run_dir(args.output, cfg.output.directory, f"ablate-{path.stem}")

    def on_row(r):
        log.info("T0=%.2f precondition=%s seed=%d mmd=%.4g w2=%.4g", r.T0, r.precondition, r.seed, r.mmd, r.w2)

    try:
        rows, _ = run_ablation(cfg, out, workers=args.workers, on_row=on_row)
    except ValueError as err:
        log.error("%s", err)
        return EXIT_INVALID
    log.info("ablation tables in %s", out)
    return EXIT_RUNTIME if any(r.error for r in rows) else EXIT_OK


def diagnostics(R: float | None, sigma2: float | None, m: float | None, t_grid: list[float]) -> dict:
    """Closed-form diagnostic values as a JSON-ready dict."""
    out: dict = {}
    if R is not None and sigma2 is not None:
        spec = analysis.ConvolutionSpec(R, sigma2)
        out["R"], out["sigma2"] = R, sigma2
        out["beta_t"] = [{"t": t, "beta": analysis.beta_t(spec, t)} for t in t_grid]
        out["T_star"] = analysis.critical_time_T_star(spec)
        out["T_star_bisection"] = analysis.beta_root_bisection(spec)
        if 0.0 < sigma2 < 1.0:
            sharp, crude = analysis.lsi_bound(R, sigma2)
            out["lsi_bound"] = sharp
            out["lsi_bound_crude"] = crude
    if m is not None:
        out["m"] = m
        out["bifurcation_time"] = analysis.gmm_bifurcation_time(m)
        out["bifurcation_time_numeric"] = analysis.curvature_flip_time(m)
    return out


def cmd_diag(args) -> int:
    if (args.R is None) != (args.sigma2 is None):
        log.error("--R and --sigma2 must be given together")
        return EXIT_INVALID
    if args.R is None and args.m is None:
        log.error("nothing to compute: give --R/--sigma2 and/or --m")
        return EXIT_INVALID
    try:
        grid = [float(t) for t in args.t_grid.split(",")] if args.t_grid else list(np.round(np.arange(0.1, 1.0, 0.1), 10))
        out = diagnostics(args.R, args.sigma2, args.m, grid)
    except ValueError as err:
        log.error("%s", err)
        return EXIT_INVALID
    json.dump(to_jsonable(out), sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ssi-sampler", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--output", "-o", help=f"run directory (default: ${OUTPUT_ROOT_ENV}/<name>-<time>)")
        sp.add_argument("--workers", type=int, default=1, help="worker threads; results do not depend on it")

    sp = sub.add_parser("sample", help="run one configured sampler")
    sp.add_argument("config", help="config file or bundled config name")
    sp.add_argument("--seed", type=int, help="override the config seed")
    common(sp)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("compare", help="run every config in a directory and tabulate metrics")
    sp.add_argument("config_dir", help="directory of configs or bundled suite name")
    common(sp)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("ablate", help="sweep the initial time T0")
    sp.add_argument("config", help="config file with an ablation section")
    common(sp)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("diag", help="print closed-form diagnostics as JSON")
    sp.add_argument("--R", type=float, help="support radius")
    sp.add_argument("--sigma2", type=float, help="smoothing variance")
    sp.add_argument("--m", type=float, help="half distance of the two-mode mixture")
    sp.add_argument("--t-grid", help="comma-separated times for the beta_t table")
    sp.set_defaults(func=cmd_diag)

    sub.add_parser("list", help="list bundled configs").set_defaults(
        func=lambda a: print("\n".join(bundled_configs())) or EXIT_OK
    )
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    if getattr(args, "workers", 1) < 1:
        log.error("--workers must be positive")
        return EXIT_INVALID
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
