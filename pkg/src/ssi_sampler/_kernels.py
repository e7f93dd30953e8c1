"""Compiled inner loops for the mixture-type targets.

The samplers evaluate mixture log-densities and scores millions of times per
run, so these loops are compiled with numba. All functions take C-contiguous
float64 arrays and release the GIL.
"""

import numba
import numpy as np

# exp(-50) ~ 2e-22: components this far below the dominant one cannot change
# a double-precision sum, so their exponentials are skipped.
_NEGLIGIBLE = -50.0

# Reassociation and approximate transcendental functions change results by a
# few ulps only. Infinity and NaN semantics are kept because -inf marks
# points outside the support.
_FASTMATH = {"contract", "reassoc", "arcp", "nsz", "afn"}


@numba.njit(cache=True, nogil=True, fastmath=_FASTMATH)
def isotropic_mixture(x, means, log_weights, inv_var, log_norm, want_score):
    """Log-density and score of sum_k w_k N(x; mu_k, var * I).

    Args:
        x: Points, shape ``(n, d)``.
        means: Component means, shape ``(K, d)``.
        log_weights: Log mixture weights, shape ``(K,)``.
        inv_var: Inverse of the common component variance.
        log_norm: Gaussian normalizing constant ``-d/2 log(2 pi var)``.
        want_score: Skip the score accumulation when False.

    Returns:
        Tuple ``(logp, score)`` with shapes ``(n,)`` and ``(n, d)``.
    """
    n, d = x.shape
    K = means.shape[0]
    logp = np.empty(n)
    score = np.zeros((n, d))
    lc = np.empty(K)
    for i in range(n):
        top = -np.inf
        for k in range(K):
            q = 0.0
            for j in range(d):
                r = x[i, j] - means[k, j]
                q += r * r
            lc[k] = log_weights[k] - 0.5 * q * inv_var
            if lc[k] > top:
                top = lc[k]
        tot = 0.0
        for k in range(K):
            a = lc[k] - top
            if a < _NEGLIGIBLE:
                continue
            w = np.exp(a)
            tot += w
            if want_score:
                for j in range(d):
                    score[i, j] += w * (means[k, j] - x[i, j])
        logp[i] = top + np.log(tot) + log_norm
        if want_score:
            c = inv_var / tot
            for j in range(d):
                score[i, j] *= c
    return logp, score


@numba.njit(cache=True, nogil=True, fastmath=_FASTMATH)
def mixture_centers_posterior(theta, obs, inv_var, log_norm, want_score):
    """Log-likelihood and gradient of i.i.d. data under an equal-weight 1D mixture.

    The mixture has unknown centers ``theta`` and a known common variance; the
    log-likelihood is ``sum_i log(1/K sum_k N(y_i; theta_k, var))``.

    Args:
        theta: Center vectors, shape ``(n, K)``.
        obs: Observations, shape ``(m,)``.
        inv_var: Inverse of the known observation variance.
        log_norm: Constant ``-m log K - m/2 log(2 pi var)``.
        want_score: Skip the gradient accumulation when False.

    Returns:
        Tuple ``(logp, score)`` with shapes ``(n,)`` and ``(n, K)``.
    """
    n, K = theta.shape
    m = obs.shape[0]
    logp = np.empty(n)
    score = np.zeros((n, K))
    lc = np.empty(K)
    for i in range(n):
        acc = 0.0
        for s in range(m):
            y = obs[s]
            top = -np.inf
            for k in range(K):
                r = y - theta[i, k]
                lc[k] = -0.5 * r * r * inv_var
                if lc[k] > top:
                    top = lc[k]
            tot = 0.0
            for k in range(K):
                a = lc[k] - top
                if a < _NEGLIGIBLE:
                    lc[k] = 0.0
                    continue
                lc[k] = np.exp(a)
                tot += lc[k]
            acc += top + np.log(tot)
            if want_score:
                c = inv_var / tot
                for k in range(K):
                    if lc[k] != 0.0:
                        score[i, k] += lc[k] * c * (y - theta[i, k])
        logp[i] = acc + log_norm
    return logp, score
