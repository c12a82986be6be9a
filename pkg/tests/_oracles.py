"""Brute-force reference implementations for oracle tests.

Everything here is written with explicit loops from the model definitions so
the main code paths are checked against an independent construction; only
generic dense inversion/determinant routines are borrowed from numpy.
"""

import math

import numpy as np


def dist(a, b):
    return math.hypot(a[0] - b[0], a[1] - b[1])


def g_loo(coords, phi, alpha=1.0):
    """Leave-one-out absorption weights, scalar loops."""
    n = len(coords)
    g = np.zeros(n)
    for i in range(n):
        s = 0.0
        for j in range(n):
            if j != i:
                s += math.exp(-dist(coords[i], coords[j]) / phi) ** alpha
        g[i] = 1.0 / (1.0 + s)
    return g


def sigma_w(coords, theta):
    n = len(coords)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            out[i, j] = math.exp(-dist(coords[i], coords[j]) / theta)
    return out


def sigma_y(coords, params):
    """Marginal covariance of y built element by element."""
    n = len(coords)
    g = g_loo(coords, params.phi, params.alpha)
    Sw = sigma_w(coords, params.theta)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            core = params.gamma ** 2 * Sw[i, j]
            if i == j:
                core += params.sigma2_eps
            out[i, j] = g[i] * g[j] * core
    return out


def mean_y(coords, X, params):
    n = len(coords)
    g = g_loo(coords, params.phi, params.alpha)
    out = np.zeros(n)
    for i in range(n):
        m = params.mu
        for l in range(X.shape[1]):
            m += X[i, l] * params.beta[l]
        out[i] = g[i] * m
    return out


def gaussian_logpdf(x, mean, cov):
    n = len(x)
    r = np.asarray(x) - np.asarray(mean)
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    return float(-0.5 * (n * math.log(2 * math.pi) + logdet
                         + r @ np.linalg.inv(cov) @ r))


def conditional_latent(coords, X, y, params, targets=None):
    """Conditional mean/cov of the latent field (and optional targets) given
    the observed entries of y, from the stacked joint Gaussian."""
    n = len(coords)
    obs = [i for i in range(n) if not math.isnan(y[i])]
    g = g_loo(coords, params.phi, params.alpha)
    Sw = sigma_w(coords, params.theta)
    Sy = sigma_y(coords, params)
    my = mean_y(coords, X, params)

    if targets is None:
        t_coords = list(coords)
        cov_tw_obs = np.array([[params.gamma * Sw[i, j] * g[j] for j in obs]
                               for i in range(n)])
        prior = Sw
    else:
        t_coords = list(targets)
        cov_tw_obs = np.array(
            [[params.gamma * math.exp(-dist(t, coords[j]) / params.theta) * g[j]
              for j in obs] for t in t_coords])
        prior = np.array([[math.exp(-dist(a, b) / params.theta)
                           for b in t_coords] for a in t_coords])

    V = Sy[np.ix_(obs, obs)]
    Vinv = np.linalg.inv(V)
    r = np.array([y[i] - my[i] for i in obs])
    mean = cov_tw_obs @ Vinv @ r
    cov = prior - cov_tw_obs @ Vinv @ cov_tw_obs.T
    return mean, cov


def info_matrix(eps_obs, d_eps_obs, Sigma_obs, d_Sigma_obs, labels):
    """Information approximation, term by term with explicit loops."""
    k = len(labels)
    Sinv = np.linalg.inv(Sigma_obs)
    out = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            li, lj = labels[i], labels[j]
            t1 = d_eps_obs[li] @ Sinv @ d_eps_obs[lj]
            Ai = Sinv @ d_Sigma_obs[li]
            Aj = Sinv @ d_Sigma_obs[lj]
            t2 = 0.5 * np.trace(Ai @ Aj)
            t3 = 0.25 * np.trace(Ai) * np.trace(Aj)
            out[i, j] = t1 + t2 + t3
    return out


def central_diff_vector(f, x, h):
    """Central finite difference of a vector/matrix-valued function."""
    return (np.asarray(f(x + h)) - np.asarray(f(x - h))) / (2.0 * h)
