"""Interpolant schedules and the Monte Carlo Langevin velocity estimator.

The interpolant is ``X_t = alpha_t X0 + beta_t X1`` with ``X0 ~ N(0, I)``
and ``X1`` the target. Given ``X_t = x``, the posterior of ``X1`` is the
denoising distribution

    p(x1 | x) ∝ N(x; beta x1, alpha^2 I) p(x1),

whose samples give the velocity ``u(t, x) = E[d/dt X_t | X_t = x]``.
Estimators here work on batches of outer points: each of the ``B`` rows of
``x_t`` owns an independent inner cloud of chains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from scipy import special

from .dynamics import LangevinConfig, RmspropState, pula_step, ula_step
from .targets import TargetDensity

__all__ = [
    "InterpolantSchedule",
    "VelocityEstimatorConfig",
    "DenoisingProblem",
    "ProposalMissError",
    "VelocityDiagnostics",
    "InnerCloud",
    "denoising_score",
    "importance_sampling_init",
    "estimate_velocity",
    "estimate_velocity_batch",
    "estimate_score_at",
    "score_from_velocity",
    "velocity_from_score",
    "gaussian_velocity",
    "gmm_interpolant_density",
]


@dataclass(frozen=True)
class InterpolantSchedule:
    """Time schedule ``(alpha_t, beta_t)`` with derivatives."""

    alpha: Callable[[float], float]
    beta: Callable[[float], float]
    alpha_dot: Callable[[float], float]
    beta_dot: Callable[[float], float]
    name: str = "custom"

    @classmethod
    def linear(cls) -> "InterpolantSchedule":
        """``alpha_t = 1 - t``, ``beta_t = t``."""
        return cls(lambda t: 1.0 - t, lambda t: t, lambda t: -1.0, lambda t: 1.0, name="linear")

    def sigma2(self, t: float) -> float:
        """Variance factor ``alpha_t^2 + beta_t^2`` of a standard-normal target."""
        return self.alpha(t) ** 2 + self.beta(t) ** 2


LINEAR = InterpolantSchedule.linear()


@dataclass(frozen=True)
class VelocityEstimatorConfig:
    """Settings of the velocity estimator.

    Attributes:
        inner: Inner Langevin chain settings (eta, K, preconditioning).
        n_particles: Number n of inner samples averaged per estimate.
        form: ``"direct"`` averages posterior samples, ``"rescaled"``
            averages the target score at posterior samples.
        warm_start: ``"importance_sampling"`` re-initializes every call;
            ``"carry_over"`` reuses the previous inner cloud when provided.
        chains: Independent inner chains c; ``n = c * r`` with r the retained
            tail of each chain. Defaults to ``n`` (final iterate only).
        num_proposals: Importance-sampling proposals per estimate; defaults
            to ``n``.
        step_cap: Caps the inner step at ``step_cap * alpha_t^2 / beta_t^2``,
            the inverse curvature of the Gaussian factor, so the chain stays
            stable as ``t -> 1``. ``None`` disables the cap.
        min_gap: Smallest admissible ``1 - t`` for the direct form.
    """

    inner: LangevinConfig = field(default_factory=lambda: LangevinConfig(step_size=0.01, num_steps=100))
    n_particles: int = 800
    form: Literal["direct", "rescaled"] = "direct"
    warm_start: Literal["importance_sampling", "carry_over"] = "importance_sampling"
    chains: int | None = None
    num_proposals: int | None = None
    step_cap: float | None = 0.5
    min_gap: float = 1e-3

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be at least 1")
        if self.form not in ("direct", "rescaled"):
            raise ValueError(f"unknown velocity form {self.form!r}")
        if self.warm_start not in ("importance_sampling", "carry_over"):
            raise ValueError(f"unknown warm start {self.warm_start!r}")
        c = self.n_chains
        if c < 1 or self.n_particles % c:
            raise ValueError("chains must divide n_particles")
        if self.retained > self.inner.num_steps + 1:
            raise ValueError("retained tail n_particles / chains exceeds the chain length K + 1")
        if self.num_proposals is not None and self.num_proposals < 1:
            raise ValueError("num_proposals must be positive")
        if self.step_cap is not None and not self.step_cap > 0:
            raise ValueError("step_cap must be positive")

    @property
    def n_chains(self) -> int:
        return self.n_particles if self.chains is None else self.chains

    @property
    def retained(self) -> int:
        return self.n_particles // self.n_chains

    @property
    def n_proposals(self) -> int:
        return self.n_particles if self.num_proposals is None else self.num_proposals


@dataclass(frozen=True)
class DenoisingProblem:
    """The denoising posterior of ``X1`` given ``X_t = x_t``.

    ``x_t`` may hold a single point ``(d,)`` or a batch ``(B, d)``.
    """

    t: float
    x_t: np.ndarray
    target: TargetDensity
    schedule: InterpolantSchedule = LINEAR

    def __post_init__(self):
        if not 0.0 < self.t < 1.0:
            raise ValueError(f"t must lie in (0, 1), got {self.t}")
        object.__setattr__(self, "x_t", np.asarray(self.x_t, dtype=np.float64))

    @property
    def alpha(self) -> float:
        return self.schedule.alpha(self.t)

    @property
    def beta(self) -> float:
        return self.schedule.beta(self.t)


class ProposalMissError(RuntimeError):
    """All importance weights vanished: the proposal misses the support."""


@dataclass
class VelocityDiagnostics:
    """Per-outer-point diagnostics of one velocity estimate.

    Attributes:
        n_eff: Effective sample size of the importance-sampling start, or
            NaN when the inner cloud was carried over.
        drift_norm: Norm of the chain-averaged denoising score at the last
            inner step; small values indicate an equilibrated cloud.
        clamped: Inner proposals kept in place for leaving the support.
    """

    n_eff: np.ndarray
    drift_norm: np.ndarray
    clamped: int = 0


@dataclass
class InnerCloud:
    """Inner chain state that can be carried to the next estimate."""

    z: np.ndarray  # (B, c, d)
    v: np.ndarray | None = None  # RMSprop accumulator, same shape


def denoising_score(prob: DenoisingProblem, x1: np.ndarray) -> np.ndarray:
    """Score of the denoising posterior at ``x1``.

    For the linear schedule this is ``t (x_t - t x1) / (1 - t)^2 + s(x1)``.
    ``x1`` of shape ``(..., d)`` broadcasts against ``x_t``.
    """
    a, b = prob.alpha, prob.beta
    if a <= 0:
        raise ValueError("denoising score is undefined at alpha_t = 0")
    x1 = np.asarray(x1, dtype=np.float64)
    return b * (prob.x_t - b * x1) / a**2 + prob.target.score(x1)


def _ess(logw: np.ndarray) -> np.ndarray:
    """Effective sample size ``(sum w)^2 / sum w^2`` from log-weights, row-wise."""
    return np.exp(2.0 * special.logsumexp(logw, axis=-1) - special.logsumexp(2.0 * logw, axis=-1))


def _is_init_batch(t, x_t, target, schedule, n_out, n_prop, rng):
    """Importance-resampling start for every row of ``x_t`` (shape ``(B, d)``)."""
    a, b = schedule.alpha(t), schedule.beta(t)
    B, d = x_t.shape
    props = x_t[:, None, :] / b + (a / b) * rng.standard_normal((B, n_prop, d))
    u = rng.random((B, n_out))
    logw = target.log_density(props.reshape(-1, d)).reshape(B, n_prop)
    top = np.max(logw, axis=1)
    if not np.all(np.isfinite(top)):
        i = int(np.argmin(np.isfinite(top)))
        raise ProposalMissError(f"proposal misses support for outer point {i} at t={t:.6g}")
    w = np.exp(logw - top[:, None])
    cdf = np.cumsum(w, axis=1)
    cdf /= cdf[:, -1:]
    idx = np.empty((B, n_out), dtype=np.int64)
    for i in range(B):
        idx[i] = np.searchsorted(cdf[i], u[i], side="right")
    np.minimum(idx, n_prop - 1, out=idx)
    z = np.take_along_axis(props, idx[:, :, None], axis=1)
    return z, _ess(logw)


def importance_sampling_init(
    prob: DenoisingProblem, n: int, rng: np.random.Generator, num_proposals: int | None = None
) -> tuple[np.ndarray, np.ndarray | float]:
    """Warm start for the denoising chain by importance resampling.

    Proposals come from ``N(x_t / beta, (alpha / beta)^2 I)``, the Gaussian
    factor of the posterior, so the weights are the target density. After
    max-shifting and normalizing, ``n`` particles are drawn multinomially.

    Returns:
        Tuple ``(cloud, n_eff)``; for a batched ``x_t`` the cloud has shape
        ``(B, n, d)`` and ``n_eff`` shape ``(B,)``.

    Raises:
        ProposalMissError: If every weight is zero.
    """
    single = prob.x_t.ndim == 1
    x_t = np.atleast_2d(prob.x_t)
    z, n_eff = _is_init_batch(prob.t, x_t, prob.target, prob.schedule, n, num_proposals or n, rng)
    if single:
        return z[0], float(n_eff[0])
    return z, n_eff


def _check_time(t, cfg):
    if not 0.0 < t < 1.0:
        raise ValueError(f"t must lie in (0, 1), got {t}")
    if cfg.form == "direct" and 1.0 - t < cfg.min_gap:
        raise ValueError(f"direct velocity form needs 1 - t >= {cfg.min_gap}, got t={t}")


def estimate_velocity_batch(
    t: float,
    x_t: np.ndarray,
    target: TargetDensity,
    cfg: VelocityEstimatorConfig,
    rng: np.random.Generator,
    *,
    schedule: InterpolantSchedule = LINEAR,
    warm: InnerCloud | None = None,
) -> tuple[np.ndarray, VelocityDiagnostics, InnerCloud]:
    """Velocity estimates for a batch of outer points.

    Args:
        t: Interpolant time in (0, 1).
        x_t: Outer points, shape ``(B, d)``.
        target: Target density of ``X1``.
        cfg: Estimator settings.
        rng: Stream for all inner randomness of this batch.
        schedule: Interpolant schedule.
        warm: Previous inner cloud, used when ``cfg.warm_start`` is
            ``"carry_over"``.

    Returns:
        Tuple ``(u_hat, diagnostics, inner_cloud)`` with ``u_hat`` of shape
        ``(B, d)``.
    """
    _check_time(t, cfg)
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    B, d = x_t.shape
    c, r, K = cfg.n_chains, cfg.retained, cfg.inner.num_steps
    a, b = schedule.alpha(t), schedule.beta(t)
    a_dot, b_dot = schedule.alpha_dot(t), schedule.beta_dot(t)

    if cfg.warm_start == "carry_over" and warm is not None and warm.z.shape == (B, c, d):
        z = warm.z.reshape(B * c, d)
        v = warm.v.reshape(B * c, d) if warm.v is not None else np.zeros((B * c, d))
        n_eff = np.full(B, np.nan)
    else:
        zb, n_eff = _is_init_batch(t, x_t, target, schedule, c, cfg.n_proposals, rng)
        z = zb.reshape(B * c, d)
        v = np.zeros((B * c, d))

    anchor = np.repeat(x_t, c, axis=0)
    max_step = None if cfg.step_cap is None else cfg.step_cap * a**2 / b**2
    support = target.in_support if target.in_support(z[:1]) is not None else None
    rms = RmspropState(v)
    want_score_mean = cfg.form == "rescaled"
    acc = np.zeros((B * c, d))
    clamped = 0
    drift = None
    first_kept = K + 1 - r  # iterates k = K - r + 1, ..., K are retained
    for k in range(K):
        s_target = target.score(z)
        if k >= first_kept:
            acc += s_target if want_score_mean else z
        drift = b * (anchor - b * z) / a**2 + s_target
        if cfg.inner.precondition:
            z, rms, n_cl = pula_step(z, None, rms, cfg.inner, rng, score=drift, max_step=max_step, support_fn=support)
        else:
            z, n_cl = ula_step(z, None, cfg.inner.step_size, rng, score=drift, max_step=max_step, support_fn=support)
        clamped += n_cl
    acc += target.score(z) if want_score_mean else z
    mean = acc.reshape(B, c, d).sum(axis=1) / (c * r)

    if want_score_mean:
        u = (b_dot / b) * x_t + a * (a * b_dot - a_dot * b) / b**2 * mean
    else:
        u = (a_dot / a) * x_t + (b_dot - a_dot * b / a) * mean
    drift_norm = np.linalg.norm(drift.reshape(B, c, d).mean(axis=1), axis=-1)
    diag = VelocityDiagnostics(n_eff=np.asarray(n_eff, dtype=np.float64), drift_norm=drift_norm, clamped=clamped)
    return u, diag, InnerCloud(z.reshape(B, c, d), rms.v.reshape(B, c, d) if cfg.inner.precondition else None)


def estimate_velocity(
    prob: DenoisingProblem, cfg: VelocityEstimatorConfig, rng: np.random.Generator
) -> tuple[np.ndarray, VelocityDiagnostics]:
    """Monte Carlo Langevin estimate of ``u(t, x_t)``.

    Inner particles are initialized by importance resampling, evolved for K
    (preconditioned) Langevin steps on the denoising score, and averaged:

    * direct: ``u = (-x_t + mean Z) / (1 - t)``,
    * rescaled: ``u = x_t / t + (1 - t) / t^2 * mean s(Z)``,

    shown for the linear schedule.
    """
    single = prob.x_t.ndim == 1
    u, diag, _ = estimate_velocity_batch(prob.t, np.atleast_2d(prob.x_t), prob.target, cfg, rng, schedule=prob.schedule)
    return (u[0] if single else u), diag


def score_from_velocity(t: float, x: np.ndarray, u: np.ndarray, schedule: InterpolantSchedule = LINEAR) -> np.ndarray:
    """Score of ``X_t`` implied by a velocity; ``t u / (1 - t) - x / (1 - t)`` when linear."""
    a, b = schedule.alpha(t), schedule.beta(t)
    a_dot, b_dot = schedule.alpha_dot(t), schedule.beta_dot(t)
    if schedule.name == "linear":
        return (t / (1.0 - t)) * u - x / (1.0 - t)
    mean = (u - (a_dot / a) * x) / (b_dot - a_dot * b / a)
    return (b * mean - x) / a**2


def velocity_from_score(t: float, x: np.ndarray, s: np.ndarray, schedule: InterpolantSchedule = LINEAR) -> np.ndarray:
    """Inverse of ``score_from_velocity``; ``(x + (1 - t) s) / t`` when linear."""
    a, b = schedule.alpha(t), schedule.beta(t)
    a_dot, b_dot = schedule.alpha_dot(t), schedule.beta_dot(t)
    if schedule.name == "linear":
        return (x + (1.0 - t) * s) / t
    mean = (x + a**2 * s) / b
    return (a_dot / a) * x + (b_dot - a_dot * b / a) * mean


def estimate_score_at(prob: DenoisingProblem, cfg: VelocityEstimatorConfig, rng: np.random.Generator) -> np.ndarray:
    """Score of ``p_{X_t}`` at ``x_t`` derived from the velocity estimate."""
    u, _ = estimate_velocity(prob, cfg, rng)
    return score_from_velocity(prob.t, prob.x_t, u, prob.schedule)


def gaussian_velocity(t: float, x: np.ndarray, variance: float = 1.0) -> np.ndarray:
    """Exact velocity of the linear interpolant for the target ``N(0, variance I)``."""
    return (t * variance - (1.0 - t)) / ((1.0 - t) ** 2 + t**2 * variance) * np.asarray(x)


def gmm_interpolant_density(m: float, t: float, x) -> np.ndarray:
    """Density of ``X_t`` when ``X1 ~ (N(-m, 1) + N(m, 1)) / 2`` in one dimension.

    Equals ``(g(x - m t) + g(x + m t)) / 2`` with ``g`` the centered normal
    density of variance ``t^2 + (1 - t)^2``.
    """
    s2 = t**2 + (1.0 - t) ** 2
    x = np.asarray(x, dtype=np.float64)
    c = 1.0 / math.sqrt(2.0 * math.pi * s2)
    return 0.5 * c * (np.exp(-((x - m * t) ** 2) / (2 * s2)) + np.exp(-((x + m * t) ** 2) / (2 * s2)))
