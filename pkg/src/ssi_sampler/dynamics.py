"""Langevin and Hamiltonian transition kernels.

All kernels act on a batch of independent particles stored as an ``(n, d)``
array; every row evolves as its own chain. Score and log-density callbacks
receive ``(n, d)`` batches.

Support handling differs by kernel family. Unadjusted kernels (ULA, pULA)
keep a particle in place when its proposal leaves the target support and
count the event; Metropolis kernels (MALA, HMC) simply reject such proposals.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "ScoreError",
    "LangevinConfig",
    "HmcConfig",
    "RmspropState",
    "stream",
    "check_score",
    "ula_step",
    "pula_step",
    "mala_step",
    "leapfrog",
    "hmc_transition",
    "ULAKernel",
    "PULAKernel",
    "MALAKernel",
    "HMCKernel",
    "ChainStats",
    "run_chain",
]

ScoreFn = Callable[[np.ndarray], np.ndarray]
LogDensityFn = Callable[[np.ndarray], np.ndarray]
SupportFn = Callable[[np.ndarray], np.ndarray]

# Scores larger than this signal a diverging chain.
SCORE_LIMIT = 1e8


class ScoreError(FloatingPointError):
    """Raised when a score evaluation is non-finite or overflows.

    Attributes:
        position: The offending particle position.
        index: Row of the offending particle in the batch.
    """

    def __init__(self, message: str, position: np.ndarray, index: int):
        super().__init__(f"{message} at particle {index}, position {np.array2string(position, precision=6)}")
        self.position = position
        self.index = index


@dataclass(frozen=True)
class LangevinConfig:
    """Settings of a (preconditioned) unadjusted Langevin chain.

    Attributes:
        step_size: Step size eta.
        num_steps: Number of steps K.
        precondition: Use the RMSprop preconditioner.
        smoothing: Accumulator smoothing constant alpha.
        tolerance: Preconditioner regularizer epsilon.
    """

    step_size: float
    num_steps: int
    precondition: bool = False
    smoothing: float = 0.99
    tolerance: float = 1e-5

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.num_steps < 1:
            raise ValueError("num_steps must be at least 1")
        if not 0 < self.smoothing < 1:
            raise ValueError("smoothing must lie in (0, 1)")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True)
class HmcConfig:
    step_size: float
    leapfrog_steps: int
    num_transitions: int = 1

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.leapfrog_steps < 1 or self.num_transitions < 1:
            raise ValueError("leapfrog_steps and num_transitions must be positive")


@dataclass
class RmspropState:
    """Per-particle accumulator of squared scores, shape ``(n, d)``."""

    v: np.ndarray

    @classmethod
    def zeros(cls, shape) -> "RmspropState":
        return cls(np.zeros(shape))


def stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the substream labelled by ``key``.

    Distinct keys give statistically independent streams; the same
    ``(seed, key)`` always yields the same draws.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(key))))


def check_score(s: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Raise ScoreError if any score row is non-finite or larger than SCORE_LIMIT."""
    bad = ~np.isfinite(s)
    if bad.any():
        i = int(np.argwhere(bad)[0][0])
        raise ScoreError("non-finite score", x[i], i)
    norms = np.sqrt(np.sum(s * s, axis=-1))
    if norms.size and norms.max() > SCORE_LIMIT:
        i = int(np.argmax(norms))
        raise ScoreError(f"score norm {norms[i]:.3g} exceeds {SCORE_LIMIT:.0e}", x[i], i)
    return s


def _clamp(x, prop, support_fn):
    if support_fn is None:
        return prop, 0
    inside = np.asarray(support_fn(prop), dtype=bool)
    if inside.all():
        return prop, 0
    return np.where(inside[..., None], prop, x), int((~inside).sum())


def ula_step(
    x: np.ndarray,
    score_fn: ScoreFn,
    step_size: float,
    rng: np.random.Generator,
    *,
    score: np.ndarray | None = None,
    max_step: float | None = None,
    support_fn: SupportFn | None = None,
) -> tuple[np.ndarray, int]:
    """One unadjusted Langevin step ``x + eta s(x) + sqrt(2 eta) xi``.

    Args:
        x: Current positions, shape ``(n, d)``.
        score_fn: Score callback.
        step_size: Step size eta.
        rng: Source of the Gaussian increments.
        score: Precomputed ``score_fn(x)``; evaluated when omitted.
        max_step: Optional cap on the effective step size.
        support_fn: Support mask; proposals outside keep their particle.

    Returns:
        Tuple ``(x_new, n_clamped)``.
    """
    s = check_score(score_fn(x) if score is None else score, x)
    step = step_size if max_step is None else min(step_size, max_step)
    xi = rng.standard_normal(x.shape)
    prop = x + step * s + np.sqrt(2.0 * step) * xi
    return _clamp(x, prop, support_fn)


def pula_step(
    x: np.ndarray,
    score_fn: ScoreFn,
    state: RmspropState,
    cfg: LangevinConfig,
    rng: np.random.Generator,
    *,
    score: np.ndarray | None = None,
    max_step: float | None = None,
    support_fn: SupportFn | None = None,
    preconditioner: np.ndarray | None = None,
) -> tuple[np.ndarray, RmspropState, int]:
    """One RMSprop-preconditioned Langevin step.

    ``v' = alpha v + (1 - alpha) s*s``, ``P = 1 / (sqrt(v') + eps)`` and the
    move is ``x + eta P s + N(0, 2 eta P)``. The divergence correction of the
    preconditioned diffusion is omitted, which is accurate for alpha near 1.

    Args:
        x: Current positions, shape ``(n, d)``.
        score_fn: Score callback.
        state: Accumulator state; not modified in place.
        cfg: Step size, smoothing and tolerance.
        rng: Source of the Gaussian increments.
        score: Precomputed ``score_fn(x)``.
        max_step: Optional cap on the per-coordinate effective step ``eta P``.
        support_fn: Support mask; proposals outside keep their particle.
        preconditioner: Force this diagonal preconditioner instead of the
            accumulator (the state is still updated).

    Returns:
        Tuple ``(x_new, new_state, n_clamped)``.
    """
    s = check_score(score_fn(x) if score is None else score, x)
    a = cfg.smoothing
    v = a * state.v + (1.0 - a) * s * s
    P = 1.0 / (np.sqrt(v) + cfg.tolerance) if preconditioner is None else preconditioner
    step = cfg.step_size * P
    if max_step is not None:
        step = np.minimum(step, max_step)
    xi = rng.standard_normal(x.shape)
    prop = x + step * s + np.sqrt(2.0 * step) * xi
    out, n_clamped = _clamp(x, prop, support_fn)
    return out, RmspropState(v), n_clamped


def _mala_log_q(to, frm, score_frm, step_size):
    # log N(to; frm + eta s(frm), 2 eta I) up to a constant
    r = to - frm - step_size * score_frm
    return -np.sum(r * r, axis=-1) / (4.0 * step_size)


def mala_step(
    x: np.ndarray,
    log_density_fn: LogDensityFn,
    score_fn: ScoreFn,
    step_size: float,
    rng: np.random.Generator,
    *,
    logp: np.ndarray | None = None,
    score: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Metropolis-adjusted Langevin step.

    Args:
        x: Current positions, shape ``(n, d)``; log-density must be finite.
        log_density_fn: Unnormalized log-density callback.
        score_fn: Score callback.
        step_size: Step size eta.
        rng: Source of proposal noise and acceptance uniforms.
        logp: Cached log-density at ``x``.
        score: Cached score at ``x``.

    Returns:
        Tuple ``(x_new, accepted, logp_new, score_new)``; the last two are
        the caches for the next call.
    """
    logp = log_density_fn(x) if logp is None else logp
    score = check_score(score_fn(x) if score is None else score, x)
    xi = rng.standard_normal(x.shape)
    u = rng.random(x.shape[0])
    y = x + step_size * score + math.sqrt(2.0 * step_size) * xi
    logp_y = log_density_fn(y)
    ok = np.isfinite(logp_y)
    score_y = score_fn(y)
    score_y = np.where(ok[:, None], score_y, 0.0)
    with np.errstate(invalid="ignore"):
        log_ratio = logp_y - logp + _mala_log_q(x, y, score_y, step_size) - _mala_log_q(y, x, score, step_size)
    accepted = ok & np.isfinite(log_ratio) & (np.log(u) < log_ratio)
    return (
        np.where(accepted[:, None], y, x),
        accepted,
        np.where(accepted, logp_y, logp),
        np.where(accepted[:, None], score_y, score),
    )


def leapfrog(
    x: np.ndarray, p: np.ndarray, score_fn: ScoreFn, step_size: float, n_steps: int, score: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Leapfrog integration of Hamiltonian dynamics with unit mass.

    Returns:
        Tuple ``(x, p, score_at_x)`` after ``n_steps`` steps.
    """
    g = score_fn(x) if score is None else score
    p = p + 0.5 * step_size * g
    for i in range(n_steps):
        x = x + step_size * p
        g = score_fn(x)
        if i < n_steps - 1:
            p = p + step_size * g
    p = p + 0.5 * step_size * g
    return x, p, g


def hmc_transition(
    x: np.ndarray,
    log_density_fn: LogDensityFn,
    score_fn: ScoreFn,
    cfg: HmcConfig,
    rng: np.random.Generator,
    *,
    logp: np.ndarray | None = None,
    score: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One HMC transition: fresh momentum, leapfrog, Metropolis correction.

    Transitions whose final energy is non-finite are rejected.

    Returns:
        Tuple ``(x_new, accepted, logp_new, score_new)``.
    """
    logp = log_density_fn(x) if logp is None else logp
    score = score_fn(x) if score is None else score
    p0 = rng.standard_normal(x.shape)
    u = rng.random(x.shape[0])
    with np.errstate(over="ignore", invalid="ignore"):
        y, p1, score_y = leapfrog(x, p0, score_fn, cfg.step_size, cfg.leapfrog_steps, score)
        logp_y = log_density_fn(y)
        h0 = -logp + 0.5 * np.sum(p0 * p0, axis=-1)
        h1 = -logp_y + 0.5 * np.sum(p1 * p1, axis=-1)
        delta = h0 - h1
    ok = np.isfinite(delta) & np.all(np.isfinite(y), axis=-1)
    accepted = ok & (np.log(u) < np.where(ok, delta, -np.inf))
    return (
        np.where(accepted[:, None], y, x),
        accepted,
        np.where(accepted, logp_y, logp),
        np.where(accepted[:, None], score_y, score),
    )


# ---------------------------------------------------------------------------
# Kernel objects for run_chain
# ---------------------------------------------------------------------------


@dataclass
class ChainStats:
    """Counters accumulated while running chains."""

    steps: int = 0
    proposals: int = 0
    accepted: int = 0
    clamped: int = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposals if self.proposals else float("nan")

    def merge(self, other: "ChainStats") -> "ChainStats":
        return ChainStats(
            max(self.steps, other.steps),
            self.proposals + other.proposals,
            self.accepted + other.accepted,
            self.clamped + other.clamped,
        )


class ULAKernel:
    """Unadjusted Langevin kernel for ``run_chain``."""

    def __init__(self, score_fn: ScoreFn, step_size: float, support_fn: SupportFn | None = None):
        if not step_size > 0:
            raise ValueError("step_size must be positive")
        self.score_fn = score_fn
        self.step_size = step_size
        self.support_fn = support_fn

    def init(self, x):
        return {"x": x}

    def step(self, state, rng, stats):
        x, n_clamped = ula_step(state["x"], self.score_fn, self.step_size, rng, support_fn=self.support_fn)
        stats.clamped += n_clamped
        return {"x": x}


class PULAKernel:
    """RMSprop-preconditioned Langevin kernel for ``run_chain``."""

    def __init__(self, score_fn: ScoreFn, cfg: LangevinConfig, support_fn: SupportFn | None = None):
        self.score_fn = score_fn
        self.cfg = cfg
        self.support_fn = support_fn

    def init(self, x):
        return {"x": x, "rms": RmspropState.zeros(x.shape)}

    def step(self, state, rng, stats):
        if not self.cfg.precondition:
            x, n_clamped = ula_step(state["x"], self.score_fn, self.cfg.step_size, rng, support_fn=self.support_fn)
            stats.clamped += n_clamped
            return {"x": x, "rms": state["rms"]}
        x, rms, n_clamped = pula_step(
            state["x"], self.score_fn, state["rms"], self.cfg, rng, support_fn=self.support_fn
        )
        stats.clamped += n_clamped
        return {"x": x, "rms": rms}


class MALAKernel:
    """Metropolis-adjusted Langevin kernel for ``run_chain``."""

    def __init__(self, log_density_fn: LogDensityFn, score_fn: ScoreFn, step_size: float):
        if not step_size > 0:
            raise ValueError("step_size must be positive")
        self.log_density_fn = log_density_fn
        self.score_fn = score_fn
        self.step_size = step_size

    def init(self, x):
        return {"x": x, "logp": self.log_density_fn(x), "score": self.score_fn(x)}

    def step(self, state, rng, stats):
        x, acc, logp, score = mala_step(
            state["x"], self.log_density_fn, self.score_fn, self.step_size, rng,
            logp=state["logp"], score=state["score"],
        )
        stats.proposals += acc.size
        stats.accepted += int(acc.sum())
        return {"x": x, "logp": logp, "score": score}


class HMCKernel:
    """HMC kernel for ``run_chain``; one step is one transition."""

    def __init__(self, log_density_fn: LogDensityFn, score_fn: ScoreFn, cfg: HmcConfig):
        self.log_density_fn = log_density_fn
        self.score_fn = score_fn
        self.cfg = cfg

    def init(self, x):
        return {"x": x, "logp": self.log_density_fn(x), "score": self.score_fn(x)}

    def step(self, state, rng, stats):
        x, acc, logp, score = hmc_transition(
            state["x"], self.log_density_fn, self.score_fn, self.cfg, rng,
            logp=state["logp"], score=state["score"],
        )
        stats.proposals += acc.size
        stats.accepted += int(acc.sum())
        return {"x": x, "logp": logp, "score": score}


def _run_block(x0, kernel, steps, rng):
    stats = ChainStats(steps=steps)
    state = kernel.init(np.array(x0, dtype=np.float64))
    for _ in range(steps):
        state = kernel.step(state, rng, stats)
    return state["x"], stats


def run_chain(
    x0: np.ndarray,
    kernel,
    steps: int,
    seed: int,
    *,
    block_size: int = 256,
    workers: int = 1,
    stream_key: tuple[int, ...] = (),
) -> tuple[np.ndarray, ChainStats]:
    """Run ``steps`` kernel applications on every particle of ``x0``.

    Particles are split into fixed blocks of ``block_size`` rows; block ``b``
    draws from ``stream(seed, *stream_key, b)``. The partition does not depend
    on ``workers``, so the output is bit-identical for any worker count.

    Returns:
        Tuple ``(x, stats)``.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    if block_size < 1:
        raise ValueError("block_size must be positive")
    if steps == 0:
        return x0.copy(), ChainStats()
    starts = range(0, x0.shape[0], block_size)

    def job(b_start):
        b, start = b_start
        return _run_block(x0[start:start + block_size], kernel, steps, stream(seed, *stream_key, b))

    jobs = list(enumerate(starts))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, jobs))
    else:
        results = [job(j) for j in jobs]
    stats = ChainStats()
    for _, s in results:
        stats = stats.merge(s)
    return np.concatenate([r[0] for r in results], axis=0), stats
