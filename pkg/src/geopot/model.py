"""Covariance assembly, observed-data log-likelihood, forward simulation.

The measurement model for the site vector is y = G (1 mu + X beta + gamma w
+ eps), with G the diagonal matrix of leave-one-out absorption weights, w a
zero-mean latent Gaussian field with exponential correlation and eps iid
Gaussian noise.  The marginal covariance of y is

    Sigma_y = G (gamma^2 Sigma_w + sigma2_eps I) G' =
              gg' o (gamma^2 Sigma_w + sigma2_eps I),

with o the Hadamard product, and the latent/observation cross-covariance is
Sigma_wy = gamma Sigma_w G'.  With missing data every formula is applied to
blocks extracted *before* inversion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.linalg.lapack import dpotrf, dpotrs

from .core import IndexPartition, ParamVector, SiteSet, distance_matrix, partition
from .errors import SingularCovariance
from .kernels import CorrelationSpec, InteractionSpec, correlation_matrix, g_vector

_JITTER_BASE = 1e-10
_JITTER_MAX = 1e-6


def chol_spd(A, *, lower=True):
    """Lower Cholesky factor with escalating diagonal jitter.

    Tries the plain factorization first so that well-conditioned matrices are
    reproduced exactly; on failure adds base_jitter * mean(diag) escalating
    tenfold up to the maximum before raising SingularCovariance.  Returns
    (factor, jitter_used).  Raw LAPACK is used on purpose: these
    factorizations dominate the EM hot loop and the scipy wrappers cost more
    than the N~100 factorization itself.
    """
    A = np.asarray(A, dtype=float)
    L, info = dpotrf(A, lower=True)
    if info == 0:
        return L, 0.0
    scale = float(np.trace(A)) / A.shape[0]
    if scale <= 0:
        raise SingularCovariance("covariance has nonpositive trace")
    jitter = _JITTER_BASE
    eye = np.eye(A.shape[0])
    while jitter <= _JITTER_MAX:
        L, info = dpotrf(A + jitter * scale * eye, lower=True)
        if info == 0:
            return L, jitter * scale
        jitter *= 10.0
    raise SingularCovariance(
        f"factorization failed even with jitter {_JITTER_MAX * scale:g}")


def chol_solve(L, b) -> np.ndarray:
    """Solve (L L') x = b for a lower Cholesky factor L."""
    x, info = dpotrs(L, b, lower=True)
    if info != 0:
        raise SingularCovariance("triangular solve failed")
    return x


@dataclass(frozen=True)
class CovarianceBundle:
    """All covariance pieces of the model at one parameter value.

    Sigma_y carries the Hadamard identity gg' o (gamma^2 Sigma_w + sigma2 I);
    chol_y_obs is the lower Cholesky factor of the observed block of Sigma_y,
    extracted before factorization.
    """

    Sigma_w: np.ndarray
    G_diag: np.ndarray
    Sigma_y: np.ndarray
    Sigma_wy: np.ndarray
    sigma2_eps: float
    mean_y: np.ndarray
    part: IndexPartition
    chol_y_obs: np.ndarray
    jitter: float

    @property
    def Sigma_eps(self) -> np.ndarray:
        return self.sigma2_eps * np.eye(self.G_diag.size)


def mean_vector(params: ParamVector, sites: SiteSet, g=None) -> np.ndarray:
    """Model mean of y: G (1 mu + X beta)."""
    if g is None:
        g = g_vector(sites, InteractionSpec(params.phi, params.alpha))
    base = np.full(sites.n, params.mu)
    if sites.b:
        base = base + sites.X @ params.beta
    return g * base


def assemble(params: ParamVector, sites: SiteSet, *, H=None,
             part: IndexPartition = None) -> CovarianceBundle:
    """Covariance bundle at the given parameters.

    The observed block of Sigma_y is factorized eagerly; SingularCovariance
    is raised if that fails even at the maximum jitter.
    """
    if H is None:
        H = distance_matrix(sites)
    if part is None:
        part = partition(sites)
    Sigma_w = correlation_matrix(CorrelationSpec(params.theta), H)
    g = g_vector(sites, InteractionSpec(params.phi, params.alpha), H=H)
    gg = np.outer(g, g)
    core = params.gamma ** 2 * Sigma_w
    core = core + params.sigma2_eps * np.eye(sites.n)
    Sigma_y = gg * core
    Sigma_wy = params.gamma * Sigma_w * g[None, :]
    L_obs, jitter = chol_spd(part.gather_matrix(Sigma_y))
    mean_y = mean_vector(params, sites, g=g)
    return CovarianceBundle(Sigma_w, g, Sigma_y, Sigma_wy, params.sigma2_eps,
                            mean_y, part, L_obs, jitter)


def _solve_obs(bundle: CovarianceBundle, rhs) -> np.ndarray:
    return chol_solve(bundle.chol_y_obs, rhs)


def _loglik_from_bundle(bundle: CovarianceBundle, sites: SiteSet) -> float:
    part = bundle.part
    r = part.gather(sites.y) - part.gather(bundle.mean_y)
    alpha = _solve_obs(bundle, r)
    logdet = 2.0 * np.log(np.diag(bundle.chol_y_obs)).sum()
    n = part.n_observed
    return float(-0.5 * (n * np.log(2.0 * np.pi) + logdet + r @ alpha))


def log_likelihood(params: ParamVector, sites: SiteSet) -> float:
    """Gaussian log density of the observed subvector at its model law."""
    return _loglik_from_bundle(assemble(params, sites), sites)


def simulate(params: ParamVector, sites: SiteSet, seed) -> SiteSet:
    """Forward draw of a synthetic data set preserving the missing pattern.

    Draws the latent field over all sites (observed and missing) from a
    factorization of Sigma_w, then the measurement noise, and masks the
    entries that are missing in the input.  Deterministic for a fixed seed;
    the draw order (w first, then eps) is part of the reproducibility
    contract.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    H = distance_matrix(sites)
    Sigma_w = correlation_matrix(CorrelationSpec(params.theta), H)
    L_w, _ = chol_spd(Sigma_w)
    w = L_w @ rng.standard_normal(sites.n)
    eps = np.sqrt(params.sigma2_eps) * rng.standard_normal(sites.n)
    g = g_vector(sites, InteractionSpec(params.phi, params.alpha), H=H)
    base = np.full(sites.n, params.mu)
    if sites.b:
        base = base + sites.X @ params.beta
    y = g * (base + params.gamma * w + eps)
    y = np.where(sites.observed, y, np.nan)
    return sites.with_y(y)
