"""Approximate information matrix, Wald intervals, parametric bootstrap.

The information approximation for the innovation eps = y - G (1 mu + X beta)
with covariance Sigma = gg' o (gamma^2 Sigma_w + sigma2 I) is

    I_ij = d_i eps' Sigma^-1 d_j eps
           + 1/2 tr(Sigma^-1 d_i Sigma Sigma^-1 d_j Sigma)
           + 1/4 tr(Sigma^-1 d_i Sigma) tr(Sigma^-1 d_j Sigma),

implemented exactly as printed (the quarter term differs from the usual
multivariate-normal information convention; see the README note).  With
missing data every block is extracted before inversion.  Analytic
phi-derivatives require interaction shape alpha = 1; otherwise central
finite differences are substituted and flagged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import ndtri

from .core import ParamVector, SiteSet, distance_matrix, partition
from .errors import SingularInformation
from .estimation import EMOptions, FitResult, default_init, fit_em
from .kernels import (CorrelationSpec, InteractionSpec, _g_from_H,
                      _g_phi_gradient_from_H, correlation_matrix, g_vector)
from .model import chol_spd, simulate


@dataclass(frozen=True)
class InfoMatrix:
    """Approximate information matrix over the free parameters."""

    labels: tuple
    I_tilde: np.ndarray
    phi_derivatives: str = "analytic"  # or "finite-difference" when alpha != 1


@dataclass(frozen=True)
class BootstrapSample:
    """Raw and filtered parameter draws from the bootstrap replicates.

    kept_mask marks the replicates that converged and passed the filter
    rule; only those contribute to intervals and the empirical covariance.
    """

    raw: tuple
    raw_converged: tuple
    kept_mask: tuple
    filter_rule: str
    seed: int

    @property
    def kept(self) -> tuple:
        return tuple(p for p, k in zip(self.raw, self.kept_mask) if k)

    @property
    def n_nonconverged(self) -> int:
        return sum(1 for c in self.raw_converged if not c)

    @property
    def n_filtered(self) -> int:
        return sum(1 for c, k in zip(self.raw_converged, self.kept_mask)
                   if c and not k)

    def kept_matrix(self) -> np.ndarray:
        """(n_kept, k) array of the kept free-parameter vectors."""
        return np.array([p.free_values() for p in self.kept])


def epsilon_and_derivatives(params: ParamVector, sites: SiteSet, *, H=None):
    """Innovation vector, its covariance, and their parameter derivatives.

    Returns (eps, d_eps, Sigma, d_Sigma, phi_mode) with the derivative
    dictionaries keyed by the free-parameter labels.  phi_mode records
    whether the phi entries are analytic or finite-difference substitutes
    (the latter whenever alpha != 1).
    """
    if H is None:
        H = distance_matrix(sites)
    n = sites.n
    g = _g_from_H(H, params.phi, params.alpha)
    Sigma_w = correlation_matrix(CorrelationSpec(params.theta), H)
    gg = np.outer(g, g)
    core = params.gamma ** 2 * Sigma_w + params.sigma2_eps * np.eye(n)
    Sigma = gg * core
    base = np.full(n, params.mu)
    if sites.b:
        base = base + sites.X @ params.beta
    eps = sites.y - g * base
    eps = np.where(sites.observed, eps, 0.0)  # missing rows are dropped by extraction

    if params.alpha == 1.0:
        dg = _g_phi_gradient_from_H(H, params.phi)
        phi_mode = "analytic"
    else:
        h = 1e-6 * params.phi
        dg = (_g_from_H(H, params.phi + h, params.alpha)
              - _g_from_H(H, params.phi - h, params.alpha)) / (2.0 * h)
        phi_mode = "finite-difference"
    G_tilde = np.outer(dg, g) + np.outer(g, dg)

    d_eps, d_Sigma = {}, {}
    zeros_v, zeros_m = np.zeros(n), np.zeros((n, n))
    if not params.mu_fixed_zero:
        d_eps["mu"] = -g
        d_Sigma["mu"] = zeros_m
    for l in range(sites.b):
        d_eps[f"beta{l + 1}"] = -g * sites.X[:, l]
        d_Sigma[f"beta{l + 1}"] = zeros_m
    d_eps["sigma2_eps"] = zeros_v
    d_Sigma["sigma2_eps"] = gg * np.eye(n)
    d_eps["gamma"] = zeros_v
    d_Sigma["gamma"] = 2.0 * params.gamma * gg * Sigma_w
    d_eps["theta"] = zeros_v
    d_Sigma["theta"] = params.gamma ** 2 * gg * (H / params.theta ** 2) * Sigma_w
    d_eps["phi"] = -dg * base
    d_Sigma["phi"] = G_tilde * core
    return eps, d_eps, Sigma, d_Sigma, phi_mode


def fisher_information(params: ParamVector, sites: SiteSet, *, H=None) -> InfoMatrix:
    """Information approximation on the observed blocks.

    Every block (innovation, covariance, derivatives) is extracted to the
    observed rows/columns before any inversion takes place.
    """
    eps, d_eps, Sigma, d_Sigma, phi_mode = epsilon_and_derivatives(
        params, sites, H=H)
    part = partition(sites)
    labels = params.free_labels()
    L, _ = chol_spd(part.gather_matrix(Sigma))
    cf = (L, True)

    solved_eps = {lab: scipy.linalg.cho_solve(cf, part.gather(d_eps[lab]),
                                              check_finite=False)
                  for lab in labels}
    solved_Sig = {lab: scipy.linalg.cho_solve(cf, part.gather_matrix(d_Sigma[lab]),
                                              check_finite=False)
                  for lab in labels}
    traces = {lab: float(np.trace(m)) for lab, m in solved_Sig.items()}

    k = len(labels)
    info = np.zeros((k, k))
    for i, li in enumerate(labels):
        ei = part.gather(d_eps[li])
        for j in range(i, k):
            lj = labels[j]
            term = float(ei @ solved_eps[lj])
            term += 0.5 * float(np.sum(solved_Sig[li] * solved_Sig[lj].T))
            term += 0.25 * traces[li] * traces[lj]
            info[i, j] = info[j, i] = term
    info = 0.5 * (info + info.T)
    return InfoMatrix(labels, info, phi_mode)


@dataclass(frozen=True)
class WaldIntervals:
    """Normal-approximation confidence intervals from the information matrix.

    The normal approximation is trustworthy only for large site counts; the
    small-sample flag is set when the observed count is modest relative to
    the number of free parameters.
    """

    labels: tuple
    estimates: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    small_sample_caveat: bool


def wald_intervals(fit: FitResult, info: InfoMatrix, level=0.95,
                   n_observed=None) -> WaldIntervals:
    """estimate +/- z(level) * sqrt(diag(I^-1)) per free parameter."""
    if not (0.0 < level < 1.0):
        raise ValueError("level must be in (0, 1)")
    try:
        c = scipy.linalg.cho_factor(info.I_tilde, check_finite=False)
        cov = scipy.linalg.cho_solve(c, np.eye(info.I_tilde.shape[0]),
                                     check_finite=False)
    except scipy.linalg.LinAlgError:
        raise SingularInformation("information matrix is not positive definite")
    z = float(ndtri(0.5 + level / 2.0))
    est = fit.params.free_values()
    half = z * np.sqrt(np.diag(cov))
    caveat = (n_observed is not None
              and n_observed < 10 * len(info.labels))
    return WaldIntervals(info.labels, est, est - half, est + half, level,
                         bool(caveat))


def default_filter_rule(sites: SiteSet):
    """Drop runs whose interaction strength exceeds the site-set diameter."""
    d_max = float(distance_matrix(sites).max())
    if d_max <= 0:
        d_max = np.inf

    def rule(p: ParamVector) -> bool:
        return p.phi <= d_max

    rule.description = f"phi <= {d_max:g} (max pairwise distance) and converged"
    return rule


def _one_replicate(params, sites, seed, em_opts):
    # single-threaded BLAS: replicate results must be bitwise identical
    # whether they run serially or in worker processes
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=1):
        rng = np.random.default_rng(seed)
        rep_sites = simulate(params, sites, rng)
        init = default_init(rep_sites, mu_fixed_zero=params.mu_fixed_zero,
                            alpha=params.alpha)
        fit = fit_em(rep_sites, init, em_opts)
    return fit.params, fit.converged


def bootstrap(fit: FitResult, sites: SiteSet, M: int, *, filter_rule=None,
              level=0.95, seed=0, n_jobs=1, em_opts: EMOptions = None):
    """Parametric bootstrap around the fitted parameters.

    Each replicate simulates a data set at the fitted parameters (the
    missing pattern is preserved), refits it with the EM loop from the
    standard deterministic initializer, and the kept, converged runs form
    the empirical parameter sample.  Returns (BootstrapSample, intervals,
    empirical_cov) where intervals maps each free parameter to its
    percentile interval over the kept runs.

    Replicates use one spawned RNG stream each and are merged by replicate
    index, so results are bitwise reproducible for a fixed seed regardless
    of n_jobs.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    em_opts = em_opts or EMOptions()
    if filter_rule is None:
        filter_rule = default_filter_rule(sites)
    rule_desc = getattr(filter_rule, "description", repr(filter_rule))
    seeds = np.random.SeedSequence(seed).spawn(M)

    if n_jobs == 1:
        results = [_one_replicate(fit.params, sites, s, em_opts) for s in seeds]
    else:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=n_jobs)(
            delayed(_one_replicate)(fit.params, sites, s, em_opts)
            for s in seeds)

    raw = tuple(p for p, _ in results)
    raw_converged = tuple(bool(c) for _, c in results)
    kept_mask = tuple(bool(c) and bool(filter_rule(p))
                      for p, c in results)
    sample = BootstrapSample(raw, raw_converged, kept_mask, rule_desc, seed)
    kept = sample.kept

    labels = fit.params.free_labels()
    if kept:
        mat = sample.kept_matrix()
        lo_q, hi_q = 100.0 * (1 - level) / 2.0, 100.0 * (1 + level) / 2.0
        intervals = {lab: (float(np.percentile(mat[:, j], lo_q)),
                           float(np.percentile(mat[:, j], hi_q)))
                     for j, lab in enumerate(labels)}
        if mat.shape[0] >= 2:
            emp_cov = np.cov(mat, rowvar=False, ddof=1)
        else:
            emp_cov = np.full((len(labels), len(labels)), np.nan)
    else:
        intervals = {lab: (np.nan, np.nan) for lab in labels}
        emp_cov = np.full((len(labels), len(labels)), np.nan)
    return sample, intervals, np.atleast_2d(emp_cov)


def wald_vs_bootstrap_table(info: InfoMatrix, emp_cov: np.ndarray):
    """Side-by-side standard deviations from the two uncertainty sources.

    The normal-approximation variances tend to sit below the bootstrap ones
    in practice; this table reports the comparison without asserting it.
    """
    try:
        c = scipy.linalg.cho_factor(info.I_tilde, check_finite=False)
        cov = scipy.linalg.cho_solve(c, np.eye(len(info.labels)),
                                     check_finite=False)
        wald_sd = np.sqrt(np.diag(cov))
    except scipy.linalg.LinAlgError:
        wald_sd = np.full(len(info.labels), np.nan)
    boot_sd = np.sqrt(np.diag(emp_cov))
    return [(lab, float(w), float(b))
            for lab, w, b in zip(info.labels, wald_sd, boot_sd)]
