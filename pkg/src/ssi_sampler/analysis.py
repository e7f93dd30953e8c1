"""Sample-quality metrics and closed-form diagnostic formulas.

Metrics compare a particle cloud against ground-truth samples (MMD, W2) or
against the target density (NLL, mode coverage). The diagnostic formulas
concern targets of the form ``p = mu * N(0, sigma2 I)`` with ``mu`` supported
in a ball of radius R.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist, pdist

from .targets import TargetDensity

__all__ = [
    "MMDResult",
    "W2Result",
    "NLLResult",
    "ModeCoverage",
    "MetricsReport",
    "ConvolutionSpec",
    "median_bandwidth",
    "gaussian_kernel_mmd2",
    "mmd",
    "w2",
    "nll",
    "mode_coverage",
    "compute_metrics",
    "beta_t",
    "critical_time_T_star",
    "beta_root_bisection",
    "lsi_bound",
    "lsi_bound_at_T0",
    "gmm_bifurcation_time",
    "curvature_flip_time",
]


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass
class MMDResult:
    """Squared MMD with a Gaussian kernel.

    Attributes:
        mmd2: Signed estimate (U-statistic unless the V-statistic was asked for).
        mmd2_clamped: ``max(mmd2, 0)``.
        bandwidth: Kernel length scale h in ``exp(-|x - y|^2 / (2 h^2))``.
    """

    mmd2: float
    mmd2_clamped: float
    bandwidth: float
    n_x: int
    n_y: int


@dataclass
class W2Result:
    """Exact empirical 2-Wasserstein distance averaged over subsamples."""

    w2: float
    std_err: float
    subsample: int
    repeats: int
    seed: int
    values: list = field(default_factory=list)


@dataclass
class NLLResult:
    """Mean negative log-density of a cloud.

    ``normalized`` is False when the target's normalizer is unknown, in
    which case ``nll`` uses the unnormalized density.
    """

    nll: float
    normalized: bool
    n_infinite: int


@dataclass
class ModeCoverage:
    modes_found: int
    mode_weights: np.ndarray
    counts: np.ndarray
    threshold: float
    unassigned: int


@dataclass
class MetricsReport:
    """Metrics of one run plus estimator settings."""

    nll: float | None = None
    nll_normalized: bool | None = None
    mmd: float | None = None
    mmd_raw: float | None = None
    w2: float | None = None
    w2_std_err: float | None = None
    modes_found: int | None = None
    n_modes: int | None = None
    mode_weights: list | None = None
    estimator_meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _as_cloud(x):
    x = np.asarray(x, dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x


def median_bandwidth(X: np.ndarray, Y: np.ndarray, max_points: int = 2000, seed: int = 0) -> float:
    """Median pairwise distance of the pooled cloud (on at most ``max_points`` points)."""
    Z = np.concatenate([_as_cloud(X), _as_cloud(Y)], axis=0)
    if Z.shape[0] > max_points:
        Z = Z[np.random.default_rng(seed).choice(Z.shape[0], max_points, replace=False)]
    h = float(np.median(pdist(Z)))
    return h if h > 0 else 1.0


def _kernel_sum(A, B, gamma, chunk, same):
    """Sum of ``exp(-gamma |a - b|^2)`` over pairs, excluding the diagonal when ``same``."""
    total = 0.0
    for i in range(0, A.shape[0], chunk):
        block = np.exp(-gamma * cdist(A[i:i + chunk], B, "sqeuclidean"))
        total += block.sum()
    if same:
        total -= A.shape[0]
    return total


def gaussian_kernel_mmd2(X, Y, bandwidth: float, chunk: int = 1024, unbiased: bool = True) -> float:
    """Squared MMD for a fixed Gaussian bandwidth.

    The default is the unbiased U-statistic; ``unbiased=False`` gives the
    V-statistic, which is nonnegative and exactly zero for identical clouds.
    """
    X, Y = _as_cloud(X), _as_cloud(Y)
    n, m = X.shape[0], Y.shape[0]
    if n < 2 or m < 2:
        raise ValueError("MMD needs at least two points per cloud")
    gamma = 1.0 / (2.0 * bandwidth**2)
    if unbiased:
        kxx = _kernel_sum(X, X, gamma, chunk, True) / (n * (n - 1))
        kyy = _kernel_sum(Y, Y, gamma, chunk, True) / (m * (m - 1))
    else:
        kxx = _kernel_sum(X, X, gamma, chunk, False) / n**2
        kyy = _kernel_sum(Y, Y, gamma, chunk, False) / m**2
    kxy = _kernel_sum(X, Y, gamma, chunk, False) / (n * m)
    return kxx + kyy - 2.0 * kxy


def mmd(X, Y, bandwidth: float | None = None, seed: int = 0, unbiased: bool = True) -> MMDResult:
    """Squared MMD between two clouds; bandwidth defaults to the pooled median heuristic."""
    X, Y = _as_cloud(X), _as_cloud(Y)
    if X.shape[1] != Y.shape[1]:
        raise ValueError("clouds must share a dimension")
    h = median_bandwidth(X, Y, seed=seed) if bandwidth is None else float(bandwidth)
    val = gaussian_kernel_mmd2(X, Y, h, unbiased=unbiased)
    return MMDResult(val, max(val, 0.0), h, X.shape[0], Y.shape[0])


def w2(X, Y, subsample: int = 1024, repeats: int = 4, seed: int = 0) -> W2Result:
    """Exact W2 between equal-size subsamples via optimal assignment.

    Each repeat draws ``min(subsample, |X|, |Y|)`` points from each cloud
    without replacement, solves the assignment problem on squared Euclidean
    costs, and takes the square root of the mean matched cost.
    """
    X, Y = _as_cloud(X), _as_cloud(Y)
    if X.shape[1] != Y.shape[1]:
        raise ValueError("clouds must share a dimension")
    if subsample < 1 or repeats < 1:
        raise ValueError("subsample and repeats must be positive")
    k = min(subsample, X.shape[0], Y.shape[0])
    rng = np.random.default_rng(seed)
    full = k == X.shape[0] == Y.shape[0]
    values = []
    for _ in range(1 if full else repeats):
        xs = X if k == X.shape[0] else X[rng.choice(X.shape[0], k, replace=False)]
        ys = Y if k == Y.shape[0] else Y[rng.choice(Y.shape[0], k, replace=False)]
        if xs.shape != ys.shape:
            raise ValueError("subsample sizes differ")
        cost = cdist(xs, ys, "sqeuclidean")
        rows, cols = linear_sum_assignment(cost)
        values.append(math.sqrt(cost[rows, cols].mean()))
    vals = np.array(values)
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return W2Result(float(vals.mean()), se, k, len(values), seed, values)


def nll(X, target: TargetDensity) -> NLLResult:
    """``-(1/n) sum log p(x_i)``, normalized when the target knows its normalizer."""
    X = _as_cloud(X)
    logp = target.log_density(X)
    normalized = target.log_normalizer is not None
    if normalized:
        logp = logp - target.log_normalizer
    bad = int(np.sum(~np.isfinite(logp)))
    value = float("inf") if bad else float(-np.mean(logp))
    return NLLResult(value, normalized, bad)


def mode_coverage(X, mode_centers, radius: float) -> ModeCoverage:
    """Assign particles to their nearest center within ``radius`` and count populated modes.

    A mode counts as found when it holds at least ``max(5, 0.1 n / K)``
    particles. Weights are counts normalized over assigned particles.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    X = _as_cloud(X)
    C = _as_cloud(mode_centers)
    n, K = X.shape[0], C.shape[0]
    counts = np.zeros(K, dtype=np.int64)
    unassigned = 0
    for i in range(0, n, 4096):
        dist = cdist(X[i:i + 4096], C)
        near = np.argmin(dist, axis=1)
        ok = dist[np.arange(near.size), near] <= radius
        counts += np.bincount(near[ok], minlength=K)
        unassigned += int((~ok).sum())
    threshold = max(5.0, 0.1 * n / K)
    total = counts.sum()
    weights = counts / total if total else np.zeros(K)
    return ModeCoverage(int(np.sum(counts >= threshold)), weights, counts, threshold, unassigned)


def compute_metrics(
    samples: np.ndarray,
    target: TargetDensity,
    reference: np.ndarray | None = None,
    *,
    which=("nll", "mmd", "w2", "modes"),
    w2_subsample: int = 1024,
    w2_repeats: int = 4,
    mode_radius: float | None = None,
    seed: int = 0,
) -> MetricsReport:
    """Evaluate the requested metrics; MMD and W2 need ``reference`` samples."""
    rep = MetricsReport()
    meta = {"seed": seed}
    finite = np.all(np.isfinite(samples), axis=1)
    if not finite.all():
        meta["non_finite_particles"] = int((~finite).sum())
    if "nll" in which:
        r = nll(samples, target)
        rep.nll, rep.nll_normalized = r.nll, r.normalized
        meta["nll_infinite"] = r.n_infinite
    if reference is not None and "mmd" in which:
        r = mmd(samples[finite], reference, seed=seed)
        rep.mmd, rep.mmd_raw = r.mmd2_clamped, r.mmd2
        meta["mmd_bandwidth"] = r.bandwidth
        meta["mmd_kernel"] = "gaussian"
    if reference is not None and "w2" in which:
        r = w2(samples[finite], reference, subsample=w2_subsample, repeats=w2_repeats, seed=seed)
        rep.w2, rep.w2_std_err = r.w2, r.std_err
        meta["w2_subsample"], meta["w2_repeats"] = r.subsample, r.repeats
    if "modes" in which and target.mode_centers is not None:
        radius = mode_radius if mode_radius is not None else target.mode_radius
        if radius is not None:
            r = mode_coverage(samples[finite], target.mode_centers, radius)
            rep.modes_found, rep.n_modes = r.modes_found, len(r.counts)
            rep.mode_weights = r.mode_weights.tolist()
            meta["mode_radius"], meta["mode_threshold"] = radius, r.threshold
    rep.estimator_meta = meta
    return rep


# ---------------------------------------------------------------------------
# Diagnostic formulas
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvolutionSpec:
    """Target ``mu * N(0, sigma2 I)`` with ``supp(mu)`` in the ball of radius R."""

    R: float
    sigma2: float

    def __post_init__(self):
        if not self.R >= 0 or not self.sigma2 > 0:
            raise ValueError("need R >= 0 and sigma2 > 0")


def beta_t(spec: ConvolutionSpec, t: float) -> float:
    """Lower curvature bound ``t^2/(1-t)^2 + 1/sigma2 - R^2/sigma2^2`` of the denoising density."""
    if not 0.0 < t < 1.0:
        raise ValueError("t must lie in (0, 1)")
    return t**2 / (1.0 - t) ** 2 + 1.0 / spec.sigma2 - spec.R**2 / spec.sigma2**2


def critical_time_T_star(spec: ConvolutionSpec) -> float:
    """Time after which the denoising density is strongly log-concave."""
    R2, s2 = spec.R**2, spec.sigma2
    if R2 <= s2:
        return 0.0
    if R2 == s2 + s2**2:
        return 0.5
    T = (R2 - s2 - s2 * math.sqrt(R2 - s2)) / (R2 - s2 - s2**2)
    # Position relative to 1/2 is fixed by R^2 versus sigma2 + sigma2^2.
    assert (T < 0.5) == (R2 < s2 + s2**2) or math.isclose(T, 0.5, rel_tol=1e-9)
    return T


def beta_root_bisection(spec: ConvolutionSpec, xtol: float = 1e-14) -> float:
    """Zero of ``t -> beta_t`` on (0, 1) by bisection; 0 when beta_t > 0 throughout."""
    lo = 1e-15
    if beta_t(spec, lo) >= 0:
        return 0.0
    return optimize.bisect(lambda t: beta_t(spec, t), lo, 1.0 - 1e-15, xtol=xtol)


def lsi_bound(R: float, sigma2: float) -> tuple[float, float]:
    """Log-Sobolev constant bounds for a Gaussian-smoothed compactly supported density.

    Returns:
        Tuple ``(6 (4R^2 + sigma2) e^{4R^2/sigma2}, 6 e^{8R^2/sigma2})``; the
        first is the sharper one.
    """
    if not 0.0 < sigma2 < 1.0:
        raise ValueError("sigma2 must lie in (0, 1)")
    if R < 0:
        raise ValueError("R must be nonnegative")
    r = R**2 / sigma2
    return 6.0 * (4.0 * R**2 + sigma2) * math.exp(4.0 * r), 6.0 * math.exp(8.0 * r)


def lsi_bound_at_T0(R: float, sigma2: float, T0: float) -> float:
    """Crude LSI bound ``6 exp(8 T0^2 R^2 / (1 - T0 (1 - sigma))^2)`` for ``X_{T0}``."""
    if not 0.0 < sigma2 < 1.0:
        raise ValueError("sigma2 must lie in (0, 1)")
    if not 0.0 < T0 < 1.0:
        raise ValueError("T0 must lie in (0, 1)")
    sigma = math.sqrt(sigma2)
    return 6.0 * math.exp(8.0 * T0**2 * R**2 / (1.0 - T0 * (1.0 - sigma)) ** 2)


def gmm_bifurcation_time(m: float) -> float:
    """Time at which ``X_t`` for ``X1 ~ (N(-m,1) + N(m,1))/2`` turns bimodal.

    Equals ``(sqrt(m^2 - 1) - 1) / (m^2 - 2)``, defined for ``m > sqrt(2)``.
    """
    if not m > math.sqrt(2.0):
        raise ValueError("the interpolant stays unimodal for m <= sqrt(2)")
    return (math.sqrt(m**2 - 1.0) - 1.0) / (m**2 - 2.0)


def curvature_flip_time(m: float, h: float = 1e-3) -> float:
    """Root of ``d^2/dx^2 p_{X_t}(0)`` in t, found numerically.

    Uses a central second difference of the interpolant density and Brent's
    method on (0, 1).
    """
    from .interpolant import gmm_interpolant_density

    def curv(t):
        f = lambda x: float(gmm_interpolant_density(m, t, x))  # noqa: E731
        return (f(h) - 2.0 * f(0.0) + f(-h)) / h**2

    return optimize.brentq(curv, 1e-6, 1.0 - 1e-6, xtol=1e-13)
