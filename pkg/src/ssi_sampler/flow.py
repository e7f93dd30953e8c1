"""Sampling by Euler integration of the probability-flow ODE.

Pipeline: draw ``N(0, I)`` particles, run L Langevin steps on the estimated
score of ``X_{T0}`` (flow initialization), then advance every particle from
``T0`` to ``T_end`` with M Euler steps of the estimated velocity.

Outer particles are split into fixed blocks. Block ``b`` uses the stream
``stream(seed, b)`` for its whole trajectory (initial draw, initialization
chain, and all inner velocity estimates), so results are bit-identical for
any number of workers.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .dynamics import LangevinConfig, RmspropState, pula_step, stream, ula_step
from .interpolant import (
    LINEAR,
    InterpolantSchedule,
    VelocityEstimatorConfig,
    estimate_velocity_batch,
    score_from_velocity,
)
from .targets import TargetDensity

__all__ = [
    "FlowConfig",
    "FlowError",
    "RunRecord",
    "SSIRunError",
    "time_grid",
    "initialize_flow",
    "integrate_flow",
    "run_ssi",
    "ablate_T0",
    "AblationRow",
]

log = logging.getLogger(__name__)

VelocityFn = Callable[[float, np.ndarray], np.ndarray]

# Below this initial time the Langevin initialization is skipped and the
# N(0, I) draw is used directly.
GAUSSIAN_INIT_BELOW = 0.05


@dataclass(frozen=True)
class FlowConfig:
    """Settings of a full sampling run.

    Attributes:
        T0: Initial time of the flow.
        T_end: Terminal time (early stopping before 1).
        M: Number of Euler steps, ``h = (T_end - T0) / M``.
        init_tau: Step size tau of the initialization chain.
        init_steps: Number L of initialization steps; 0 keeps the Gaussian draw.
        init_precondition: Precondition the initialization chain.
        velocity: Velocity estimator settings.
        n_outer: Number of output particles.
        block_size: Particles per RNG block (fixes the random stream layout).
        init_smoothing: RMSprop smoothing of the initialization chain.
        init_tolerance: RMSprop tolerance of the initialization chain.
    """

    T0: float = 0.2
    T_end: float = 0.99
    M: int = 100
    init_tau: float = 0.1
    init_steps: int = 100
    init_precondition: bool = False
    velocity: VelocityEstimatorConfig = field(default_factory=VelocityEstimatorConfig)
    n_outer: int = 1000
    block_size: int = 128
    init_smoothing: float = 0.99
    init_tolerance: float = 1e-5

    def __post_init__(self):
        if not 0.0 < self.T0 < self.T_end < 1.0:
            raise ValueError(f"need 0 < T0 < T_end < 1, got T0={self.T0}, T_end={self.T_end}")
        if self.M < 1:
            raise ValueError("M must be at least 1")
        if not self.init_tau > 0:
            raise ValueError("init_tau must be positive")
        if self.init_steps < 0:
            raise ValueError("init_steps must be nonnegative")
        if self.n_outer < 1:
            raise ValueError("n_outer must be at least 1")
        if self.block_size < 1:
            raise ValueError("block_size must be positive")
        if not 0 < self.init_smoothing < 1 or not self.init_tolerance > 0:
            raise ValueError("invalid initialization preconditioner settings")

    @property
    def h(self) -> float:
        return (self.T_end - self.T0) / self.M

    def to_dict(self) -> dict:
        return asdict(self)


class FlowError(FloatingPointError):
    """Non-finite velocity during integration."""

    def __init__(self, index: int, t: float):
        super().__init__(f"non-finite velocity for particle {index} at t={t:.6g}")
        self.index = index
        self.t = t


@dataclass
class RunRecord:
    """Outcome of ``run_ssi``.

    Attributes:
        config: Snapshot of the flow configuration.
        seed: Master seed.
        samples: Final particles, shape ``(n_outer, d)``; rows of blocks that
            did not finish are NaN in a partial record.
        timings: Wall-clock seconds per stage, summed over blocks.
        diagnostics: Per-time-step means of inner-estimator diagnostics.
        checkpoints: Mapping from step index to particle array.
        complete: False for a partial record saved after a failure.
        error: Failure message of a partial record.
    """

    config: FlowConfig
    seed: int
    samples: np.ndarray
    timings: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    checkpoints: dict = field(default_factory=dict)
    complete: bool = True
    error: str | None = None

    def metadata(self) -> dict:
        return {
            "seed": self.seed,
            "config": self.config.to_dict(),
            "timings": self.timings,
            "diagnostics": self.diagnostics,
            "complete": self.complete,
            "error": self.error,
            "checkpoint_steps": sorted(self.checkpoints),
        }


class SSIRunError(RuntimeError):
    """A run failed; ``record`` holds the partial RunRecord."""

    def __init__(self, message: str, record: RunRecord):
        super().__init__(message)
        self.record = record


def time_grid(T0: float, T_end: float, M: int) -> np.ndarray:
    """``T0 + m h`` for ``m = 0..M`` with the last point pinned to ``T_end``."""
    h = (T_end - T0) / M
    ts = T0 + h * np.arange(M + 1)
    ts[-1] = T_end
    return ts


class _Tracker:
    """Accumulates inner diagnostics per outer time index."""

    def __init__(self, n_times):
        self.n_eff = np.zeros(n_times)
        self.drift = np.zeros(n_times)
        self.count = np.zeros(n_times)
        self.clamped = 0
        self.init_n_eff = 0.0
        self.init_count = 0

    def add(self, m, diag):
        n = diag.drift_norm.size
        self.drift[m] += diag.drift_norm.sum()
        self.n_eff[m] += np.nansum(diag.n_eff)
        self.count[m] += n
        self.clamped += diag.clamped

    def add_init(self, diag):
        self.init_n_eff += np.nansum(diag.n_eff)
        self.init_count += diag.n_eff.size
        self.clamped += diag.clamped

    def merge(self, other):
        for name in ("n_eff", "drift", "count"):
            getattr(self, name).__iadd__(getattr(other, name))
        self.clamped += other.clamped
        self.init_n_eff += other.init_n_eff
        self.init_count += other.init_count

    def summary(self):
        with np.errstate(invalid="ignore"):
            return {
                "mean_n_eff": (self.n_eff / self.count).tolist(),
                "mean_drift_norm": (self.drift / self.count).tolist(),
                "init_mean_n_eff": self.init_n_eff / self.init_count if self.init_count else None,
                "inner_clamped": int(self.clamped),
            }


def _init_block(x, cfg, target, rng, schedule, tracker):
    """Langevin steps on the estimated score of ``X_{T0}`` for one block."""
    t = cfg.T0
    vcfg = cfg.velocity
    rms = RmspropState.zeros(x.shape)
    warm = None
    pcfg = LangevinConfig(cfg.init_tau, max(cfg.init_steps, 1), True, cfg.init_smoothing, cfg.init_tolerance)
    for _ in range(cfg.init_steps):
        u, diag, warm = estimate_velocity_batch(t, x, target, vcfg, rng, schedule=schedule, warm=warm)
        if tracker is not None:
            tracker.add_init(diag)
        s = score_from_velocity(t, x, u, schedule)
        if cfg.init_precondition:
            x, rms, _ = pula_step(x, None, rms, pcfg, rng, score=s)
        else:
            x, _ = ula_step(x, None, cfg.init_tau, rng, score=s)
    return x


def initialize_flow(
    cfg: FlowConfig,
    target: TargetDensity,
    rng: np.random.Generator,
    *,
    n: int | None = None,
    schedule: InterpolantSchedule = LINEAR,
) -> np.ndarray:
    """Approximate samples of ``X_{T0}``.

    Draws ``n`` (default ``cfg.n_outer``) standard-normal particles and runs
    ``cfg.init_steps`` (preconditioned) Langevin steps of size ``init_tau``
    driven by the estimated score at ``T0``. With ``init_steps = 0`` the
    Gaussian draw is returned unchanged.
    """
    n = cfg.n_outer if n is None else n
    x = rng.standard_normal((n, target.dim))
    return _init_block(x, cfg, target, rng, schedule, None)


def _integrate_block(x, cfg, target, rng, schedule, tracker, velocity_fn, checkpoint_every, offset):
    ts = time_grid(cfg.T0, cfg.T_end, cfg.M)
    warm = None
    checkpoints = {}
    for m in range(cfg.M):
        t, h = ts[m], ts[m + 1] - ts[m]
        if velocity_fn is None:
            u, diag, warm = estimate_velocity_batch(t, x, target, cfg.velocity, rng, schedule=schedule, warm=warm)
            if tracker is not None:
                tracker.add(m, diag)
        else:
            u = velocity_fn(t, x)
        bad = ~np.all(np.isfinite(u), axis=1)
        if bad.any():
            raise FlowError(offset + int(np.argmax(bad)), float(t))
        x = x + h * u
        if checkpoint_every and (m + 1) % checkpoint_every == 0 and m + 1 < cfg.M:
            checkpoints[m + 1] = x.copy()
    return x, checkpoints


def integrate_flow(
    x_T0: np.ndarray,
    cfg: FlowConfig,
    target: TargetDensity,
    rng: np.random.Generator,
    *,
    velocity_fn: VelocityFn | None = None,
    schedule: InterpolantSchedule = LINEAR,
) -> np.ndarray:
    """Euler integration ``x <- x + h u(t_m, x)`` from ``T0`` to ``T_end``.

    Args:
        x_T0: Particles at ``T0``, shape ``(n, d)``.
        cfg: Flow settings.
        target: Target density.
        rng: Stream for the velocity estimates.
        velocity_fn: Deterministic velocity ``(t, x) -> u`` replacing the
            estimator, e.g. an exact oracle.
        schedule: Interpolant schedule.

    Raises:
        FlowError: If a velocity is non-finite.
    """
    x = np.array(x_T0, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("initial particles must be finite")
    return _integrate_block(x, cfg, target, rng, schedule, None, velocity_fn, None, 0)[0]


def default_checkpoint_every(M: int) -> int:
    """Checkpoint cadence of ceil(M / 10) Euler steps."""
    return -(-M // 10)


def run_ssi(
    cfg: FlowConfig,
    target: TargetDensity,
    seed: int,
    *,
    workers: int = 1,
    checkpoint_every: int | None = None,
    schedule: InterpolantSchedule = LINEAR,
    progress: Callable[[int, int], None] | None = None,
) -> RunRecord:
    """Run the full sampler and return a RunRecord.

    Args:
        cfg: Flow settings.
        target: Target density.
        seed: Master seed; together with ``cfg`` it fixes the output bitwise.
        workers: Number of threads over particle blocks (results do not
            depend on it).
        checkpoint_every: Store particles every this many Euler steps; 0 or
            None disables checkpoints.
        schedule: Interpolant schedule.
        progress: Callback ``(blocks_done, blocks_total)``.

    Raises:
        SSIRunError: On any failure, carrying the partial record.
    """
    n, d = cfg.n_outer, target.dim
    starts = list(range(0, n, cfg.block_size))
    total = len(starts)
    done = [0]

    def job(b):
        start = starts[b]
        size = min(cfg.block_size, n - start)
        rng = stream(seed, b)
        tracker = _Tracker(cfg.M)
        t0 = time.perf_counter()
        x = rng.standard_normal((size, d))
        x = _init_block(x, cfg, target, rng, schedule, tracker)
        t1 = time.perf_counter()
        x, ckpt = _integrate_block(x, cfg, target, rng, schedule, tracker, None, checkpoint_every, start)
        t2 = time.perf_counter()
        done[0] += 1
        if progress is not None:
            progress(done[0], total)
        return x, ckpt, tracker, (t1 - t0, t2 - t1)

    def safe_job(b):
        try:
            return job(b)
        except Exception as err:  # noqa: BLE001 - reported through the partial record
            return err

    wall = time.perf_counter()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(safe_job, range(total)))
    else:
        results = []
        for b in range(total):
            results.append(safe_job(b))
            if isinstance(results[-1], Exception):
                break

    samples = np.full((n, d), np.nan)
    checkpoints: dict[int, np.ndarray] = {}
    tracker = _Tracker(cfg.M)
    timings = {"initialize": 0.0, "integrate": 0.0}
    failure = None
    for b, res in enumerate(results):
        if isinstance(res, Exception):
            failure = failure or res
            continue
        x, ckpt, tr, (ti, tf) = res
        start = starts[b]
        samples[start:start + x.shape[0]] = x
        for step, arr in ckpt.items():
            checkpoints.setdefault(step, np.full((n, d), np.nan))[start:start + x.shape[0]] = arr
        tracker.merge(tr)
        timings["initialize"] += ti
        timings["integrate"] += tf
    timings["wall"] = time.perf_counter() - wall
    record = RunRecord(
        config=cfg,
        seed=seed,
        samples=samples,
        timings=timings,
        diagnostics=tracker.summary(),
        checkpoints=checkpoints,
    )
    if failure is not None or len(results) < total:
        record.complete = False
        record.error = f"{type(failure).__name__}: {failure}"
        raise SSIRunError(record.error, record) from failure
    return record


@dataclass
class AblationRow:
    T0: float
    precondition: bool
    seed: int
    mmd: float
    w2: float
    error: str | None = None


def ablation_config(base: FlowConfig, T0: float, precondition: bool) -> FlowConfig:
    """Variant of ``base`` at initial time ``T0`` with preconditioning on or off.

    The initialization chain is skipped (L = 0) when ``T0 < 0.05``.
    """
    inner = replace(base.velocity.inner, precondition=precondition)
    velocity = replace(base.velocity, inner=inner)
    steps = 0 if T0 < GAUSSIAN_INIT_BELOW else base.init_steps
    return replace(base, T0=T0, init_steps=steps, init_precondition=precondition, velocity=velocity)


def ablate_T0(
    grid,
    base_cfg: FlowConfig,
    target: TargetDensity,
    seeds,
    reference: np.ndarray,
    *,
    preconditioning=(False, True),
    metric_fn: Callable[[np.ndarray, np.ndarray, int], tuple[float, float]] | None = None,
    workers: int = 1,
    on_row: Callable[[AblationRow], None] | None = None,
) -> list[AblationRow]:
    """Sweep the initial time with and without preconditioning.

    Args:
        grid: Initial times, each in ``(0, T_end)``.
        base_cfg: Settings shared by every cell.
        target: Target density.
        seeds: Master seeds; every cell runs once per seed.
        reference: Ground-truth samples for the metrics.
        preconditioning: Flags to sweep.
        metric_fn: ``(samples, reference, seed) -> (mmd, w2)``; defaults to
            the analysis-module estimators.
        workers: Threads per run.
        on_row: Called after each finished cell.

    Returns:
        Long-format rows; failed cells carry NaN metrics and the error text.
    """
    if metric_fn is None:
        from .analysis import mmd, w2

        def metric_fn(samples, ref, seed):
            return mmd(samples, ref).mmd2, w2(samples, ref, seed=seed).w2

    grid = [float(t) for t in grid]
    for t in grid:
        if not 0.0 < t < base_cfg.T_end:
            raise ValueError(f"grid point {t} outside (0, T_end)")
    rows = []
    for precondition in preconditioning:
        for T0 in grid:
            cfg = ablation_config(base_cfg, T0, precondition)
            for seed in seeds:
                try:
                    rec = run_ssi(cfg, target, int(seed), workers=workers)
                    m, w = metric_fn(rec.samples, reference, int(seed))
                    row = AblationRow(T0, precondition, int(seed), float(m), float(w))
                except Exception as err:  # noqa: BLE001 - a failed cell must not stop the sweep
                    log.warning("ablation cell T0=%s precondition=%s seed=%s failed: %s", T0, precondition, seed, err)
                    row = AblationRow(T0, precondition, int(seed), float("nan"), float("nan"), str(err))
                rows.append(row)
                if on_row is not None:
                    on_row(row)
    return rows
