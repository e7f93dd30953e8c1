"""Config-driven runs: sampling, method comparison and T0 ablation.

These functions hold the logic behind the CLI commands and write all
artifacts into a run directory.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import MetricsReport, compute_metrics, mmd, w2
from .config import ExperimentConfig, HMCMethod, SSIMethod
from .dynamics import HMCKernel, MALAKernel, PULAKernel, ULAKernel, run_chain, stream
from .flow import SSIRunError, ablate_T0, run_ssi
from .io import write_json, write_samples_csv, write_table_csv
from .targets import TargetDensity, build_target

__all__ = [
    "RunFailure",
    "RunOutcome",
    "make_target",
    "reference_samples",
    "sample_method",
    "run_experiment",
    "compare_configs",
    "run_ablation",
    "aggregate_ablation",
]

log = logging.getLogger(__name__)

# Stream keys that keep reference draws and baseline initial draws apart
# from the run streams.
_REFERENCE_KEY = 7_000_001
_BASELINE_INIT_KEY = 7_000_002
_BASELINE_CHAIN_KEY = 7_000_003


class RunFailure(RuntimeError):
    """A run failed after producing partial output."""

    def __init__(self, message: str, samples: np.ndarray | None = None, info: dict | None = None):
        super().__init__(message)
        self.samples = samples
        self.info = info or {}


@dataclass
class RunOutcome:
    samples: np.ndarray
    info: dict = field(default_factory=dict)
    metrics: MetricsReport | None = None
    directory: Path | None = None


def make_target(cfg: ExperimentConfig) -> TargetDensity:
    return build_target(cfg.target.name, **cfg.target.params)


def reference_samples(target: TargetDensity, cfg: ExperimentConfig) -> np.ndarray | None:
    """Ground-truth draws for MMD/W2, independent of the run seed."""
    if not target.has_sampler:
        return None
    n = cfg.metrics.reference_size or cfg.method.n_samples
    return target.sample(stream(cfg.metrics.reference_seed, _REFERENCE_KEY), n)


def _baseline_start(method, target, seed):
    n, d = method.n_particles, target.dim
    if method.init == "origin":
        return np.zeros((n, d))
    return method.init_scale * stream(seed, _BASELINE_INIT_KEY).standard_normal((n, d))


def sample_method(cfg: ExperimentConfig, target: TargetDensity, *, workers: int = 1, progress=None) -> RunOutcome:
    """Run the configured sampler and return its final cloud.

    Raises:
        RunFailure: With whatever partial output exists.
    """
    method = cfg.method
    t0 = time.perf_counter()
    if isinstance(method, SSIMethod):
        try:
            rec = run_ssi(
                method.build(), target, cfg.seed, workers=workers,
                checkpoint_every=cfg.output.checkpoint_every or None, progress=progress,
            )
        except SSIRunError as err:
            raise RunFailure(str(err), err.record.samples, {"run": err.record.metadata()}) from err
        return RunOutcome(rec.samples, {"run": rec.metadata(), "checkpoints": rec.checkpoints})

    if isinstance(method, HMCMethod):
        kernel = HMCKernel(target.log_density, target.score, method.hmc())
        steps = method.num_transitions
    elif method.name == "ula":
        kernel = ULAKernel(target.score, method.step_size, target.in_support if _has_support(target) else None)
        steps = method.num_steps
    elif method.name == "pula":
        kernel = PULAKernel(target.score, method.langevin(), target.in_support if _has_support(target) else None)
        steps = method.num_steps
    else:
        kernel = MALAKernel(target.log_density, target.score, method.step_size)
        steps = method.num_steps
    x0 = _baseline_start(method, target, cfg.seed)
    try:
        x, stats = run_chain(
            x0, kernel, steps, cfg.seed, block_size=method.block_size, workers=workers,
            stream_key=(_BASELINE_CHAIN_KEY,),
        )
    except Exception as err:  # noqa: BLE001 - surfaced as a run failure
        raise RunFailure(f"{type(err).__name__}: {err}", None, {}) from err
    info = {
        "run": {
            "seed": cfg.seed,
            "timings": {"wall": time.perf_counter() - t0},
            "acceptance_rate": None if math.isnan(stats.acceptance_rate) else stats.acceptance_rate,
            "clamped": stats.clamped,
            "complete": True,
        }
    }
    return RunOutcome(x, info)


def _has_support(target):
    return target.in_support(np.zeros((1, target.dim))) is not None


def evaluate(cfg: ExperimentConfig, target: TargetDensity, samples: np.ndarray, reference=None) -> MetricsReport:
    if reference is None:
        reference = reference_samples(target, cfg)
    return compute_metrics(
        samples,
        target,
        reference,
        which=tuple(cfg.metrics.which),
        w2_subsample=cfg.metrics.w2_subsample,
        w2_repeats=cfg.metrics.w2_repeats,
        mode_radius=cfg.metrics.mode_radius,
        seed=cfg.metrics.reference_seed,
    )


def _metadata(cfg, target, source, info, workers):
    meta = {
        "package_version": __version__,
        "config_source": source,
        "seed": cfg.seed,
        "target": {"name": target.name, "dim": target.dim, "log_normalizer": target.log_normalizer},
        "method": cfg.method.name,
        "workers": workers,
    }
    meta.update(info.get("run", {}))
    meta["seed"] = cfg.seed
    return meta


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: Path,
    *,
    source: str = "<config>",
    workers: int = 1,
    progress=None,
    target: TargetDensity | None = None,
    reference: np.ndarray | None = None,
) -> RunOutcome:
    """Sample, evaluate and write ``samples.csv``, ``config.json``,
    ``metadata.json`` and ``metrics.json`` into ``out_dir``.

    On failure the partial samples (NaN rows for unfinished particles) and
    metadata are still written before RunFailure propagates.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "config.json", cfg.model_dump(mode="json"))
    target = make_target(cfg) if target is None else target
    try:
        outcome = sample_method(cfg, target, workers=workers, progress=progress)
    except RunFailure as err:
        if err.samples is not None:
            write_samples_csv(out_dir / "samples.csv", err.samples)
        meta = _metadata(cfg, target, source, err.info, workers)
        meta.update(complete=False, error=str(err))
        write_json(out_dir / "metadata.json", meta)
        raise
    write_samples_csv(out_dir / "samples.csv", outcome.samples)
    for step, arr in sorted(outcome.info.get("checkpoints", {}).items()):
        write_samples_csv(out_dir / f"checkpoint_{step:05d}.csv", arr)
    outcome.metrics = evaluate(cfg, target, outcome.samples, reference)
    write_json(out_dir / "metadata.json", _metadata(cfg, target, source, outcome.info, workers))
    write_json(out_dir / "metrics.json", outcome.metrics.to_dict())
    outcome.directory = out_dir
    return outcome


COMPARE_ROWS = ("nll", "mmd", "w2", "modes_found")


def compare_configs(
    configs: list[tuple[str, ExperimentConfig]], out_dir: Path, *, workers: int = 1, progress=None
) -> tuple[list[str], dict[str, dict], list[str]]:
    """Run every config and write a metrics-by-method ``table.csv``.

    Args:
        configs: ``(label, config)`` pairs in column order; all must share
            one target section.
        out_dir: Receives one subdirectory per method plus ``table.csv``.

    Returns:
        Tuple ``(labels, metrics_by_label, failed_labels)``.
    """
    if not configs:
        raise ValueError("no configs to compare")
    first = configs[0][1].target
    for label, cfg in configs:
        if cfg.target != first:
            raise ValueError(f"config {label!r} uses a different target than {configs[0][0]!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    target = make_target(configs[0][1])
    labels, results, failed = [], {}, []
    refs: dict = {}
    for label, cfg in configs:
        labels.append(label)
        key = (cfg.metrics.reference_seed, cfg.metrics.reference_size or cfg.method.n_samples)
        if key not in refs:
            refs[key] = reference_samples(target, cfg)
        try:
            outcome = run_experiment(
                cfg, out_dir / label, source=label, workers=workers, progress=progress,
                target=target, reference=refs[key],
            )
            results[label] = outcome.metrics.to_dict()
        except Exception as err:  # noqa: BLE001 - failed methods become NaN columns
            log.error("method %s failed: %s", label, err)
            failed.append(label)
            results[label] = {}
    rows = []
    for metric in COMPARE_ROWS:
        row = [metric]
        for label in labels:
            v = results[label].get(metric)
            row.append(float("nan") if v is None else v)
        rows.append(row)
    write_table_csv(out_dir / "table.csv", ["metric", *labels], rows)
    return labels, results, failed


def aggregate_ablation(rows) -> list[dict]:
    """Mean MMD and W2 over seeds per ``(precondition, T0)`` cell, skipping failed seeds."""
    cells: dict = {}
    for r in rows:
        cells.setdefault((r.precondition, r.T0), []).append(r)
    out = []
    for (pre, T0), rs in sorted(cells.items()):
        ok = [r for r in rs if r.error is None]
        out.append({
            "T0": T0,
            "precondition": pre,
            "mmd": float(np.mean([r.mmd for r in ok])) if ok else float("nan"),
            "w2": float(np.mean([r.w2 for r in ok])) if ok else float("nan"),
            "n_seeds": len(ok),
            "n_failed": len(rs) - len(ok),
        })
    return out


def run_ablation(cfg: ExperimentConfig, out_dir: Path, *, workers: int = 1, on_row=None):
    """T0 sweep; writes ``ablation_long.csv`` and ``ablation_aggregate.csv``.

    Returns:
        Tuple ``(rows, aggregate)``.
    """
    if cfg.ablation is None or not isinstance(cfg.method, SSIMethod):
        raise ValueError("config has no ablation section")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "config.json", cfg.model_dump(mode="json"))
    target = make_target(cfg)
    reference = reference_samples(target, cfg)
    if reference is None:
        raise ValueError(f"target {target.name!r} has no exact sampler for reference metrics")
    m = cfg.metrics

    def metric_fn(samples, ref, seed):
        finite = np.all(np.isfinite(samples), axis=1)
        return (
            mmd(samples[finite], ref, seed=m.reference_seed).mmd2,
            w2(samples[finite], ref, subsample=m.w2_subsample, repeats=m.w2_repeats, seed=seed).w2,
        )

    rows = ablate_T0(
        cfg.ablation.grid, cfg.method.build(), target, cfg.ablation.seeds, reference,
        preconditioning=tuple(cfg.ablation.preconditioning), metric_fn=metric_fn, workers=workers, on_row=on_row,
    )
    write_table_csv(
        out_dir / "ablation_long.csv",
        ["T0", "precondition", "seed", "mmd", "w2", "error"],
        [[r.T0, r.precondition, r.seed, r.mmd, r.w2, r.error or ""] for r in rows],
    )
    agg = aggregate_ablation(rows)
    write_table_csv(
        out_dir / "ablation_aggregate.csv",
        ["T0", "precondition", "mmd", "w2", "n_seeds", "n_failed"],
        [[a["T0"], a["precondition"], a["mmd"], a["w2"], a["n_seeds"], a["n_failed"]] for a in agg],
    )
    return rows, agg
