"""Benchmark target densities.

Every target evaluates its unnormalized log-density and analytic score on
batches of points with shape ``(..., d)``. Targets are immutable after
construction, so the callbacks can be shared freely between workers.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, special

from . import _kernels

__all__ = [
    "TargetDensity",
    "CallableTarget",
    "GaussianMixtureSpec",
    "GaussianMixture",
    "Rings",
    "ManyWell",
    "MixtureCentersPosterior",
    "make_gmm",
    "make_standard_gaussian",
    "make_mog7x7",
    "make_mog40",
    "make_rings",
    "make_many_well",
    "make_bayes_gmm_posterior",
    "simulate_mixture_observations",
    "build_target",
    "TARGET_BUILDERS",
]


class TargetDensity:
    """Base class for target densities.

    Attributes:
        name: Identifier used in configs and reports.
        dim: Dimension of the sample space.
        log_normalizer: ``log Z`` such that ``log_density(x) - log_normalizer``
            is the normalized log-density, or ``None`` when unknown.
        mode_centers: Known mode locations, shape ``(K, d)``, or ``None``.
        mode_radius: Default assignment radius for mode-coverage metrics.
    """

    name: str = "target"
    dim: int = 1
    log_normalizer: float | None = None
    mode_centers: np.ndarray | None = None
    mode_radius: float | None = None

    def log_density(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def score(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def log_density_and_score(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.log_density(x), self.score(x)

    def in_support(self, x: np.ndarray) -> np.ndarray | None:
        """Boolean mask of points inside the support, or None for all of R^d."""
        return None

    @property
    def has_sampler(self) -> bool:
        return False

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError(f"target {self.name!r} has no exact sampler")

    def normalized_log_density(self, x: np.ndarray) -> np.ndarray:
        if self.log_normalizer is None:
            raise ValueError(f"target {self.name!r} has no known normalizer")
        return self.log_density(x) - self.log_normalizer

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r}, dim={self.dim})"


def _as_points(x: np.ndarray, dim: int) -> tuple[np.ndarray, tuple[int, ...]]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != dim:
        raise ValueError(f"expected trailing dimension {dim}, got shape {x.shape}")
    batch = x.shape[:-1]
    return np.ascontiguousarray(x.reshape(-1, dim)), batch


class CallableTarget(TargetDensity):
    """Target assembled from user callbacks.

    The callbacks receive batches of shape ``(n, d)`` and must return arrays of
    shape ``(n,)`` and ``(n, d)`` respectively.
    """

    def __init__(
        self,
        dim: int,
        log_density_fn: Callable[[np.ndarray], np.ndarray],
        score_fn: Callable[[np.ndarray], np.ndarray],
        name: str = "custom",
        sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None,
        log_normalizer: float | None = None,
        support_fn: Callable[[np.ndarray], np.ndarray] | None = None,
    ):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.name = name
        self._log_density_fn = log_density_fn
        self._score_fn = score_fn
        self._sampler = sampler
        self._support_fn = support_fn
        self.log_normalizer = log_normalizer

    def log_density(self, x):
        pts, batch = _as_points(x, self.dim)
        out = np.asarray(self._log_density_fn(pts), dtype=np.float64)
        if self._support_fn is not None:
            out = np.where(self._support_fn(pts), out, -np.inf)
        return out.reshape(batch)

    def score(self, x):
        pts, batch = _as_points(x, self.dim)
        out = np.asarray(self._score_fn(pts), dtype=np.float64)
        if self._support_fn is not None:
            out = np.where(self._support_fn(pts)[:, None], out, 0.0)
        return out.reshape(batch + (self.dim,))

    def in_support(self, x):
        if self._support_fn is None:
            return None
        pts, batch = _as_points(x, self.dim)
        return np.asarray(self._support_fn(pts), dtype=bool).reshape(batch)

    @property
    def has_sampler(self):
        return self._sampler is not None

    def sample(self, rng, n):
        if self._sampler is None:
            return super().sample(rng, n)
        return np.asarray(self._sampler(rng, n), dtype=np.float64).reshape(n, self.dim)


# ---------------------------------------------------------------------------
# Gaussian mixtures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianMixtureSpec:
    """Parameters of a Gaussian mixture.

    Exactly one of ``common_variance`` (isotropic components) and
    ``covariances`` (shape ``(K, d, d)``) is used; ``covariances`` wins when
    both are given.
    """

    means: np.ndarray
    common_variance: float | None = 1.0
    weights: np.ndarray | None = None
    covariances: np.ndarray | None = None

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        object.__setattr__(self, "means", means)
        K = means.shape[0]
        weights = np.full(K, 1.0 / K) if self.weights is None else np.asarray(self.weights, dtype=np.float64)
        if weights.shape != (K,):
            raise ValueError(f"weights must have shape ({K},), got {weights.shape}")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1 within 1e-12")
        object.__setattr__(self, "weights", weights)
        if self.covariances is not None:
            covs = np.asarray(self.covariances, dtype=np.float64)
            d = means.shape[1]
            if covs.shape != (K, d, d):
                raise ValueError(f"covariances must have shape ({K}, {d}, {d}), got {covs.shape}")
            for k, c in enumerate(covs):
                if not np.allclose(c, c.T):
                    raise ValueError(f"covariance {k} is not symmetric")
                try:
                    np.linalg.cholesky(c)
                except np.linalg.LinAlgError as err:
                    raise ValueError(f"covariance {k} is not positive definite") from err
            object.__setattr__(self, "covariances", covs)
        elif self.common_variance is None or not self.common_variance > 0:
            raise ValueError("common_variance must be positive")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]


class GaussianMixture(TargetDensity):
    """Normalized Gaussian mixture with analytic score and exact sampler.

    Isotropic mixtures go through a compiled kernel; general covariances use
    per-component Cholesky factors.
    """

    def __init__(self, spec: GaussianMixtureSpec, name: str = "gmm", mode_radius: float | None = None):
        self.spec = spec
        self.name = name
        self.dim = spec.dim
        self.log_normalizer = 0.0
        self.mode_centers = spec.means
        self.mode_radius = mode_radius
        self._means = np.ascontiguousarray(spec.means)
        with np.errstate(divide="ignore"):
            self._log_w = np.log(spec.weights)
        if spec.covariances is None:
            var = float(spec.common_variance)
            self._inv_var = 1.0 / var
            self._log_norm = -0.5 * self.dim * math.log(2.0 * math.pi * var)
            self._chol = None
        else:
            self._chol = np.linalg.cholesky(spec.covariances)
            self._prec = np.linalg.inv(spec.covariances)
            logdet = 2.0 * np.sum(np.log(np.diagonal(self._chol, axis1=1, axis2=2)), axis=1)
            self._comp_log_norm = -0.5 * (self.dim * math.log(2.0 * math.pi) + logdet)

    def _eval(self, x, want_score):
        pts, batch = _as_points(x, self.dim)
        if self._chol is None:
            logp, score = _kernels.isotropic_mixture(
                pts, self._means, self._log_w, self._inv_var, self._log_norm, want_score
            )
        else:
            diff = pts[:, None, :] - self._means[None, :, :]
            pdiff = np.einsum("kij,nkj->nki", self._prec, diff)
            lc = self._log_w + self._comp_log_norm - 0.5 * np.sum(diff * pdiff, axis=-1)
            logp = special.logsumexp(lc, axis=1)
            resp = np.exp(lc - logp[:, None])
            score = -np.einsum("nk,nki->ni", resp, pdiff)
        return logp.reshape(batch), score.reshape(batch + (self.dim,))

    def log_density(self, x):
        return self._eval(x, False)[0]

    def score(self, x):
        return self._eval(x, True)[1]

    def log_density_and_score(self, x):
        return self._eval(x, True)

    @property
    def has_sampler(self):
        return True

    def sample(self, rng, n):
        comp = rng.choice(self.spec.n_components, size=n, p=self.spec.weights)
        z = rng.standard_normal((n, self.dim))
        if self._chol is None:
            return self._means[comp] + math.sqrt(self.spec.common_variance) * z
        return self._means[comp] + np.einsum("nij,nj->ni", self._chol[comp], z)


def make_gmm(spec: GaussianMixtureSpec, name: str = "gmm", mode_radius: float | None = None) -> GaussianMixture:
    """Build a normalized Gaussian-mixture target (``log_normalizer = 0``)."""
    return GaussianMixture(spec, name=name, mode_radius=mode_radius)


def make_standard_gaussian(dim: int = 2) -> GaussianMixture:
    return make_gmm(GaussianMixtureSpec(means=np.zeros((1, dim))), name="gaussian")


def make_mog7x7(spacing: float = 5.0, variance: float = 0.25) -> GaussianMixture:
    """Equal-weight mixture of 49 isotropic Gaussians on a centred 7x7 grid."""
    axis = spacing * np.arange(-3, 4, dtype=np.float64)
    means = np.array([(a, b) for a in axis for b in axis])
    return make_gmm(
        GaussianMixtureSpec(means=means, common_variance=variance),
        name="mog7x7",
        mode_radius=0.3 * spacing,
    )


# Means of the 40-component benchmark mixture: uniform on [-40, 40]^2 drawn
# with the generator convention of the original benchmark (seed 0).
_MOG40_MEANS = np.array([
    (-0.2994728088378906, 21.457744598388672),
    (-32.92180633544922, -29.43756103515625),
    (-15.406174659729004, 10.72629451751709),
    (-0.7925271987915039, 31.715579986572266),
    (-3.5497617721557617, 10.584502220153809),
    (-12.088522911071777, -7.862615585327148),
    (-38.21393966674805, -26.491283416748047),
    (-16.488924026489258, 1.4817428588867188),
    (15.813407897949219, 24.000911712646484),
    (-27.117643356323242, -17.418514251708984),
    (14.528684616088867, 33.215518951416016),
    (-8.232007026672363, 29.932470321655273),
    (-6.447334289550781, 4.2325639724731445),
    (36.21904754638672, -37.106815338134766),
    (-25.1815185546875, -10.126609802246094),
    (-15.591998100280762, 34.56003189086914),
    (-25.92718505859375, -18.413314819335938),
    (-27.94561767578125, -37.462440490722656),
    (-23.349618911743164, 34.3839225769043),
    (17.848735809326172, 19.38690185546875),
    (2.1036624908447266, -20.507339477539062),
    (6.767387390136719, -37.3477897644043),
    (-28.90264892578125, -20.621200561523438),
    (25.237518310546875, 23.452850341796875),
    (-17.73980140686035, -1.4432954788208008),
    (25.582427978515625, 39.765323638916016),
    (15.875287055969238, 5.403714179992676),
    (26.819454193115234, -23.552093505859375),
    (7.453761100769043, -31.01222038269043),
    (-27.723445892333984, -20.663341522216797),
    (18.098922729492188, 16.086416244506836),
    (-23.69409942626953, 12.084283828735352),
    (21.958881378173828, -5.048694610595703),
    (1.527261734008789, 9.2681884765625),
    (24.8150634765625, 38.40776443481445),
    (-30.82494354248047, -14.65878963470459),
    (15.720396041870117, 33.14197540283203),
    (34.808292388916016, 35.29426956176758),
    (7.9605817794799805, -34.78330612182617),
    (3.6796998977661133, -25.024213790893555),
])

# softplus(1): the benchmark's per-coordinate component scale.
_MOG40_SCALE = 1.3132616875182228


def make_mog40(scale: float = _MOG40_SCALE, mode_radius: float = 2.0) -> GaussianMixture:
    """Equal-weight 40-component mixture with means spread over [-40, 40]^2."""
    return make_gmm(
        GaussianMixtureSpec(means=_MOG40_MEANS.copy(), common_variance=scale**2),
        name="mog40",
        mode_radius=mode_radius,
    )


# ---------------------------------------------------------------------------
# Rings
# ---------------------------------------------------------------------------


class Rings(TargetDensity):
    """Concentric rings, each carrying equal probability mass.

    ``p(x) ∝ sum_k w_k exp(-(|x| - r_k)^2 / (2 s^2))`` with ``w_k ∝ 1/r_k``.
    The radial integrals are available in closed form, so the normalizer and
    an exact polar sampler are provided.
    """

    def __init__(self, radii: np.ndarray, radial_std: float):
        radii = np.asarray(radii, dtype=np.float64)
        if radii.ndim != 1 or radii.size < 1 or np.any(radii <= 0):
            raise ValueError("radii must be a nonempty vector of positive reals")
        if not radial_std > 0:
            raise ValueError("radial_std must be positive")
        self.name = "rings"
        self.dim = 2
        self.radii = radii
        self.radial_std = float(radial_std)
        w = 1.0 / radii
        self.weights = w / w.sum()
        self._log_w = np.log(self.weights)
        s = self.radial_std
        # int_0^inf r exp(-(r - a)^2 / 2s^2) dr
        radial = s**2 * np.exp(-(radii**2) / (2 * s**2)) + radii * s * math.sqrt(math.pi / 2) * (
            1.0 + special.erf(radii / (s * math.sqrt(2.0)))
        )
        self.ring_masses = 2.0 * math.pi * self.weights * radial
        self.log_normalizer = float(np.log(self.ring_masses.sum()))
        self.mode_centers = None
        self.mode_radius = None

    def _eval(self, x, want_score):
        pts, batch = _as_points(x, 2)
        r = np.sqrt(np.sum(pts**2, axis=1))
        lc = self._log_w[None, :] - 0.5 * ((r[:, None] - self.radii[None, :]) / self.radial_std) ** 2
        logp = special.logsumexp(lc, axis=1)
        score = None
        if want_score:
            resp = np.exp(lc - logp[:, None])
            dlog_dr = -np.sum(resp * (r[:, None] - self.radii[None, :]), axis=1) / self.radial_std**2
            with np.errstate(invalid="ignore", divide="ignore"):
                unit = np.where(r[:, None] > 0, pts / r[:, None], 0.0)
            score = (dlog_dr[:, None] * unit).reshape(batch + (2,))
        return logp.reshape(batch), score

    def log_density(self, x):
        return self._eval(x, False)[0]

    def score(self, x):
        return self._eval(x, True)[1]

    def log_density_and_score(self, x):
        return self._eval(x, True)

    @property
    def has_sampler(self):
        return True

    def sample(self, rng, n):
        ring = rng.choice(self.radii.size, size=n, p=self.ring_masses / self.ring_masses.sum())
        s = self.radial_std
        r = np.empty(n)
        todo = np.arange(n)
        # Radial density ∝ r exp(-(r - a)^2 / 2s^2) on r > 0: Gaussian proposal,
        # acceptance r / (a + 10 s); mass beyond a + 10 s is below 1e-22.
        while todo.size:
            a = self.radii[ring[todo]]
            prop = a + s * rng.standard_normal(todo.size)
            u = rng.random(todo.size)
            ok = (prop > 0) & (u * (a + 10 * s) < prop)
            r[todo[ok]] = prop[ok]
            todo = todo[~ok]
        theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
        return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)


def make_rings(num_rings: int = 8, radial_std: float = 0.2, spacing: float = 2.0, dim: int = 2) -> Rings:
    """Rings with radii ``spacing * (1, ..., num_rings)``."""
    if dim != 2:
        raise ValueError("the rings target is only defined in two dimensions")
    if num_rings < 1:
        raise ValueError("num_rings must be at least 1")
    return Rings(spacing * np.arange(1, num_rings + 1, dtype=np.float64), radial_std)


# ---------------------------------------------------------------------------
# Many well
# ---------------------------------------------------------------------------


class ManyWell(TargetDensity):
    """Product of identical 2D double-well blocks.

    Each block ``(x1, x2)`` has energy ``a x1 + b x1^2 + c x1^4 + x2^2 / 2``;
    the defaults ``a=-0.5, b=-6, c=1`` follow the common benchmark convention.
    The 1D normalizer is computed by quadrature.
    """

    def __init__(self, dim: int = 8, a: float = -0.5, b: float = -6.0, c: float = 1.0):
        if dim < 2 or dim % 2:
            raise ValueError("many-well dimension must be a positive even integer")
        if not c > 0:
            raise ValueError("quartic coefficient c must be positive")
        self.name = "many_well"
        self.dim = dim
        self.n_blocks = dim // 2
        self.a, self.b, self.c = float(a), float(b), float(c)
        self._well_max = self._locate_wells()
        self._e_min = min(self._energy1(w) for w in self._well_max)
        # Density beyond |x1| = bound is negligible (energy grows like x^4).
        self._bound = float(max(abs(w) for w in self._well_max) + 3.0)
        z1, _ = integrate.quad(lambda u: math.exp(-(self._energy1(u) - self._e_min)), -np.inf, np.inf, limit=200)
        self._log_z1 = math.log(z1) - self._e_min
        self.log_normalizer = self.n_blocks * (self._log_z1 + 0.5 * math.log(2.0 * math.pi))
        if len(self._well_max) == 2:
            signs = itertools.product(range(2), repeat=self.n_blocks)
            centers = []
            for pattern in signs:
                c = np.zeros(dim)
                c[0::2] = [self._well_max[p] for p in pattern]
                centers.append(c)
            self.mode_centers = np.array(centers)
        else:
            self.mode_centers = None
        self.mode_radius = 1.0

    def _energy1(self, u):
        return self.a * u + self.b * u**2 + self.c * u**4

    def _locate_wells(self):
        roots = np.roots([4 * self.c, 0.0, 2 * self.b, self.a])
        real = np.sort(roots[np.abs(roots.imag) < 1e-9].real)
        # local minima of the energy have positive curvature
        return [float(r) for r in real if 2 * self.b + 12 * self.c * r**2 > 0]

    def log_density(self, x):
        pts, batch = _as_points(x, self.dim)
        x1, x2 = pts[:, 0::2], pts[:, 1::2]
        e = self._energy1(x1) + 0.5 * x2**2
        return -np.sum(e, axis=1).reshape(batch)

    def score(self, x):
        pts, batch = _as_points(x, self.dim)
        out = np.empty_like(pts)
        x1 = pts[:, 0::2]
        out[:, 0::2] = -(self.a + 2 * self.b * x1 + 4 * self.c * x1**3)
        out[:, 1::2] = -pts[:, 1::2]
        return out.reshape(batch + (self.dim,))

    @property
    def has_sampler(self):
        return True

    def _sample_x1(self, rng, n):
        # Uniform-envelope rejection on [-bound, bound].
        out = np.empty(n)
        filled = 0
        while filled < n:
            m = max(2 * (n - filled), 1024)
            u = rng.uniform(-self._bound, self._bound, size=m)
            keep = u[rng.random(m) < np.exp(-(self._energy1(u) - self._e_min))]
            take = min(keep.size, n - filled)
            out[filled:filled + take] = keep[:take]
            filled += take
        return out

    def sample(self, rng, n):
        out = np.empty((n, self.dim))
        x1 = self._sample_x1(rng, n * self.n_blocks).reshape(n, self.n_blocks)
        out[:, 0::2] = x1
        out[:, 1::2] = rng.standard_normal((n, self.n_blocks))
        return out


def make_many_well(dim: int = 8, a: float = -0.5, b: float = -6.0, c: float = 1.0) -> ManyWell:
    return ManyWell(dim=dim, a=a, b=b, c=c)


# ---------------------------------------------------------------------------
# Bayesian posterior over mixture centers
# ---------------------------------------------------------------------------


class MixtureCentersPosterior(TargetDensity):
    """Posterior over the centers of an equal-weight 1D Gaussian mixture.

    Uniform prior on the box ``[low, high]^K``; outside the box the
    log-density is ``-inf`` and the score is zero. The density is invariant
    under any permutation of the centers.
    """

    def __init__(self, observations, n_components: int, sigma2: float, box: tuple[float, float]):
        obs = np.ascontiguousarray(np.asarray(observations, dtype=np.float64).ravel())
        low, high = float(box[0]), float(box[1])
        if not low < high:
            raise ValueError("box must satisfy low < high")
        if n_components < 1:
            raise ValueError("n_components must be positive")
        if not sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        self.name = "bayes_gmm"
        self.dim = int(n_components)
        self.observations = obs
        self.sigma2 = float(sigma2)
        self.box = (low, high)
        self.log_normalizer = None
        self.mode_centers = None
        self.mode_radius = 1.0
        m = obs.size
        self._log_norm = -m * math.log(n_components) - 0.5 * m * math.log(2.0 * math.pi * sigma2)

    def in_support(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.all((x >= self.box[0]) & (x <= self.box[1]), axis=-1)

    def _eval(self, x, want_score):
        pts, batch = _as_points(x, self.dim)
        inside = self.in_support(pts)
        logp, score = _kernels.mixture_centers_posterior(
            pts, self.observations, 1.0 / self.sigma2, self._log_norm, want_score
        )
        logp = np.where(inside, logp, -np.inf)
        score = np.where(inside[:, None], score, 0.0)
        return logp.reshape(batch), score.reshape(batch + (self.dim,))

    def log_density(self, x):
        return self._eval(x, False)[0]

    def score(self, x):
        return self._eval(x, True)[1]

    def log_density_and_score(self, x):
        return self._eval(x, True)

    def set_mode_centers(self, centers) -> None:
        """Register the permutations of ``centers`` as the posterior modes."""
        centers = np.asarray(centers, dtype=np.float64)
        self.mode_centers = np.array(sorted(set(itertools.permutations(centers.tolist()))))


def simulate_mixture_observations(centers, sigma2: float, m: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``m`` i.i.d. observations from the equal-weight mixture of N(c_k, sigma2)."""
    centers = np.asarray(centers, dtype=np.float64)
    comp = rng.integers(0, centers.size, size=m)
    return centers[comp] + math.sqrt(sigma2) * rng.standard_normal(m)


def make_bayes_gmm_posterior(observations, K: int, sigma2: float, box: tuple[float, float]) -> MixtureCentersPosterior:
    return MixtureCentersPosterior(observations, K, sigma2, box)


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------


def _build_bayes(
    centers=(-3.0, 0.0, 3.0, 6.0),
    sigma2: float = 1.0,
    n_observations: int = 100,
    box=(-10.0, 10.0),
    data_seed: int = 2024,
    mode_radius: float = 1.0,
):
    rng = np.random.default_rng(data_seed)
    obs = simulate_mixture_observations(centers, sigma2, n_observations, rng)
    target = make_bayes_gmm_posterior(obs, len(centers), sigma2, tuple(box))
    target.set_mode_centers(centers)
    target.mode_radius = mode_radius
    return target


def _build_gmm(means, variance: float = 1.0, weights=None, covariances=None, mode_radius=None):
    spec = GaussianMixtureSpec(
        means=np.asarray(means, dtype=np.float64),
        common_variance=variance,
        weights=None if weights is None else np.asarray(weights, dtype=np.float64),
        covariances=None if covariances is None else np.asarray(covariances, dtype=np.float64),
    )
    return make_gmm(spec, mode_radius=mode_radius)


TARGET_BUILDERS: dict[str, Callable[..., TargetDensity]] = {
    "gaussian": make_standard_gaussian,
    "gmm": _build_gmm,
    "mog7x7": make_mog7x7,
    "mog40": make_mog40,
    "rings": make_rings,
    "many_well": make_many_well,
    "bayes_gmm": _build_bayes,
}


def build_target(name: str, **params) -> TargetDensity:
    """Instantiate a registered target by name."""
    try:
        builder = TARGET_BUILDERS[name]
    except KeyError:
        raise ValueError(f"unknown target {name!r}; choose from {sorted(TARGET_BUILDERS)}") from None
    return builder(**params)
