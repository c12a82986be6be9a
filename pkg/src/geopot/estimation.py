"""EM parameter fitting: conditional latent moments, closed-form updates,
numeric range/interaction updates, convergence control.

Each iteration computes the conditional mean and variance of the latent
field given the observed rows (E-step), applies the closed-form updates for
(mu, beta, sigma2_eps, gamma), and improves (theta, phi) by a bounded
derivative-free coordinate search on the E-step-completed complete-data
log-likelihood Q.  The complete data are the observed measurement rows plus
the latent field at all sites, so a parameter move that does not decrease Q
cannot decrease the observed-data log-likelihood.

Inside the fit loop the closed-form updates are applied one coordinate at a
time (each single update, evaluated at the current vector, maximizes or
improves Q in that coordinate) and the (theta, phi) search only ever accepts
improvements, so every EM step is monotone.  The loop wraps the EM step in a
squared-extrapolation accelerator whose candidates are accepted only when
the observed-data log-likelihood does not drop, which preserves the
monotone trace while cutting the iteration count substantially.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize
from scipy.linalg.lapack import dpotri

from .core import ParamVector, SiteSet, distance_matrix, partition
from .errors import RankDeficientX, SingularCovariance
from .kernels import _g_from_H
from .model import (CovarianceBundle, assemble, chol_solve, chol_spd,
                    _loglik_from_bundle, _solve_obs)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class EStepResult:
    """Conditional mean and variance of the latent field given observed data."""

    w_hat: np.ndarray
    A_hat: np.ndarray


@dataclass(frozen=True)
class FitResult:
    """Converged parameters with the fit trace and diagnostics."""

    params: ParamVector
    loglik_trace: np.ndarray
    iterations: int
    converged: bool
    e_step: EStepResult
    numeric_stalls: int = 0


@dataclass(frozen=True)
class EMOptions:
    """Convergence and search controls for the EM loop.

    theta/phi bounds default to [1e-3, 10] times the maximum pairwise
    distance.  The loop stops when both the log-likelihood change and the
    maximum relative parameter change between consecutive EM steps fall
    below tol.
    """

    max_iter: int = 500
    tol: float = 1e-6
    theta_bounds: tuple = None
    phi_bounds: tuple = None
    probe_step: float = 0.02  # log10 half-width of the in-loop coordinate probe
    accelerate: bool = True


@dataclass(frozen=True)
class ClosedUpdates:
    mu: float
    beta: np.ndarray
    sigma2_eps: float
    gamma: float


def _e_step_from_bundle(bundle: CovarianceBundle, sites: SiteSet) -> EStepResult:
    part = bundle.part
    C = part.gather_cols(bundle.Sigma_wy)          # Sigma_wy with observed columns
    r = part.gather(sites.y) - part.gather(bundle.mean_y)
    w_hat = C @ _solve_obs(bundle, r)
    A_hat = bundle.Sigma_w - C @ _solve_obs(bundle, C.T)
    A_hat = 0.5 * (A_hat + A_hat.T)
    return EStepResult(w_hat, A_hat)


def e_step(params: ParamVector, sites: SiteSet) -> EStepResult:
    """Conditional moments of the latent field given the observed rows.

    The conditioning covariance is the observed block of Sigma_y, extracted
    before inversion; with no missing data this reduces to the plain
    joint-Gaussian formulas over all sites.
    """
    return _e_step_from_bundle(assemble(params, sites), sites)


def _latent_part(theta, H, M, n):
    """Latent-field block of Q at correlation range theta.

    M is the conditional second moment w_hat w_hat' + A_hat.  The trace term
    tr(Sigma^-1 M) is computed from the explicit inverse (dpotri after the
    factorization): forming it costs N^3/3 against the 2 N^3 of a full
    triangular solve with N right-hand sides, and this sits in the innermost
    search loop.  Returns -inf when the correlation matrix cannot be
    factorized inside the search box.
    """
    try:
        L, _ = chol_spd(np.exp(-H / theta))
    except SingularCovariance:
        return -np.inf
    logdet = 2.0 * float(np.log(np.diag(L)).sum())
    Sinv_low, info = dpotri(L, lower=True)
    if info != 0:
        return -np.inf
    # only the lower triangle of the inverse is populated; M is symmetric
    tr = (2.0 * float(np.sum(np.tril(Sinv_low, -1) * np.tril(M, -1)))
          + float(np.sum(np.diag(Sinv_low) * np.diag(M))))
    return -0.5 * (n * _LOG_2PI + logdet + tr)


def _measurement_part(phi, alpha, H, obs_idx, y_obs, m_obs, gamma2_trA,
                      sigma2, n_obs):
    """Observed-row block of Q at interaction strength phi.

    m_obs holds mu + X beta + gamma w_hat on the observed rows; gamma2_trA
    is gamma^2 times the trace of the observed A_hat block.
    """
    g_obs = _g_from_H(H, phi, alpha)[obs_idx]
    z = y_obs / g_obs
    quad = float(((z - m_obs) ** 2).sum()) + gamma2_trA
    return (-0.5 * n_obs * (_LOG_2PI + math.log(sigma2))
            - float(np.log(g_obs).sum()) - 0.5 * quad / sigma2)


def expected_complete_loglik(params: ParamVector, sites: SiteSet,
                             e: EStepResult, *, H=None) -> float:
    """E-step-completed complete-data log-likelihood Q(params; e).

    e carries the conditional moments computed at the current iterate.  A
    parameter value with higher Q than the current iterate is guaranteed not
    to lower the observed-data log-likelihood.
    """
    if H is None:
        H = distance_matrix(sites)
    obs_idx = np.flatnonzero(sites.observed)
    M = np.outer(e.w_hat, e.w_hat) + e.A_hat
    latent = _latent_part(params.theta, H, M, sites.n)
    y_obs = sites.y[obs_idx]
    m_obs = np.full(obs_idx.size, params.mu)
    if sites.b:
        m_obs = m_obs + sites.X[obs_idx] @ params.beta
    m_obs = m_obs + params.gamma * e.w_hat[obs_idx]
    gamma2_trA = params.gamma ** 2 * float(np.diag(e.A_hat)[obs_idx].sum())
    meas = _measurement_part(params.phi, params.alpha, H, obs_idx, y_obs,
                             m_obs, gamma2_trA, params.sigma2_eps, obs_idx.size)
    return latent + meas


def _closed_scalar(mu, beta, sigma2, gamma, mu_fixed, z, X_obs, w_obs,
                   trA_obs, n, n_miss):
    """Closed-form updates on plain values (hot path, no dataclass churn)."""
    e_hat = z - mu - gamma * w_obs
    if X_obs.shape[1]:
        e_hat = e_hat - X_obs @ beta

    mu_new = 0.0 if mu_fixed else mu + float(e_hat.mean())

    if X_obs.shape[1]:
        XtX = X_obs.T @ X_obs
        try:
            c = scipy.linalg.cho_factor(XtX, check_finite=False)
        except scipy.linalg.LinAlgError:
            raise RankDeficientX("X has rank-deficient observed rows")
        beta_new = scipy.linalg.cho_solve(
            c, X_obs.T @ (e_hat + X_obs @ beta), check_finite=False)
    else:
        beta_new = beta

    sigma2_new = (float(e_hat @ e_hat) + gamma ** 2 * trA_obs
                  + sigma2 * n_miss) / n
    sigma2_new = max(sigma2_new, np.finfo(float).tiny)

    den = float(w_obs @ w_obs) + trA_obs
    if den > 0:
        gamma_new = float((e_hat + gamma * w_obs) @ w_obs) / den
    else:
        gamma_new = gamma

    return mu_new, np.asarray(beta_new, dtype=float), sigma2_new, gamma_new


def _closed_updates(params_k: ParamVector, z, X_obs, w_obs, trA_obs,
                    n, n_miss) -> ClosedUpdates:
    """Closed-form updates from precomputed observed-row quantities."""
    mu, beta, s2, gamma = _closed_scalar(
        params_k.mu, params_k.beta, params_k.sigma2_eps, params_k.gamma,
        params_k.mu_fixed_zero, z, X_obs, w_obs, trA_obs, n, n_miss)
    return ClosedUpdates(mu, beta, s2, gamma)


def m_step_closed(params_k: ParamVector, sites: SiteSet,
                  e: EStepResult) -> ClosedUpdates:
    """Closed-form updates of (mu, beta, sigma2_eps, gamma).

    All right-hand sides are evaluated at params_k, with
    e_hat = G^-1 y - mu 1 - X beta - gamma w_hat on the observed rows.  The
    noise update spreads the previous noise level over the missing rows and
    divides by the full site count; the mu update averages over the observed
    rows only, and is skipped (kept at zero) when mu is pinned.
    """
    obs_idx = np.flatnonzero(sites.observed)
    H = distance_matrix(sites)
    g_obs = _g_from_H(H, params_k.phi, params_k.alpha)[obs_idx]
    z = sites.y[obs_idx] / g_obs
    trA_obs = float(np.diag(e.A_hat)[obs_idx].sum())
    return _closed_updates(params_k, z, sites.X[obs_idx], e.w_hat[obs_idx],
                           trA_obs, sites.n, sites.n - obs_idx.size)


def _search_1d(f, x0, lo, hi, *, precise, probe_step):
    """Maximize f over [lo, hi] in log10 space, never returning a worse point.

    precise runs a bounded scalar search over the whole box; otherwise a
    single quadratic-interpolation step from x0 is taken (enough for one
    generalized-EM iteration).  Returns (x_best, f_best, improved).
    """
    llo, lhi = math.log10(lo), math.log10(hi)
    lx0 = min(max(math.log10(x0), llo), lhi)
    f0 = f(10.0 ** lx0)
    best_x, best_f = lx0, f0
    if precise:
        res = scipy.optimize.minimize_scalar(
            lambda t: -f(10.0 ** t), bounds=(llo, lhi), method="bounded",
            options={"xatol": 1e-10, "maxiter": 500})
        if np.isfinite(res.fun) and -res.fun > best_f:
            best_x, best_f = float(res.x), float(-res.fun)
    else:
        d = probe_step
        xm, xp = max(llo, lx0 - d), min(lhi, lx0 + d)
        fm = f(10.0 ** xm) if xm < lx0 else f0
        fp = f(10.0 ** xp) if xp > lx0 else f0
        for x, fx in ((xm, fm), (xp, fp)):
            if fx > best_f:
                best_x, best_f = x, fx
        # quadratic interpolation through the three probes
        denom = (xm - lx0) * (xm - xp) * (lx0 - xp)
        if denom != 0 and np.isfinite([fm, f0, fp]).all():
            a = (xp * (f0 - fm) + lx0 * (fm - fp) + xm * (fp - f0)) / denom
            b = (xp ** 2 * (fm - f0) + lx0 ** 2 * (fp - fm)
                 + xm ** 2 * (f0 - fp)) / denom
            if a < 0:  # concave fit, vertex is a maximum
                xv = min(max(-b / (2.0 * a), lx0 - 25 * d), lx0 + 25 * d)
                xv = min(max(xv, llo), lhi)
                if abs(xv - lx0) > 1e-3 * d:  # skip a no-op vertex probe
                    fv = f(10.0 ** xv)
                    if fv > best_f:
                        best_x, best_f = xv, fv
    if best_f <= f0:
        return x0, f0, False
    return 10.0 ** best_x, best_f, True


def default_bounds(H) -> tuple:
    """Search box for theta and phi: [1e-3, 10] x max pairwise distance."""
    d_max = float(H.max())
    if d_max <= 0:
        return (1e-3, 10.0)
    return (1e-3 * d_max, 10.0 * d_max)


def m_step_numeric(params_k: ParamVector, sites: SiteSet, e: EStepResult, *,
                   theta_bounds=None, phi_bounds=None, precise=True,
                   probe_step=0.02, H=None):
    """Numeric update of (theta, phi) by maximizing Q over a bounded box.

    Q separates into a latent block depending on theta only and a
    measurement block depending on phi only, so the two coordinates are
    searched independently.  The update never decreases Q: if the search
    cannot improve a coordinate the current value is returned, and a
    full stall is flagged rather than raised.  Returns (theta, phi,
    stalled).
    """
    if H is None:
        H = distance_matrix(sites)
    theta_bounds = theta_bounds or default_bounds(H)
    phi_bounds = phi_bounds or default_bounds(H)
    obs_idx = np.flatnonzero(sites.observed)
    n, n_obs = sites.n, obs_idx.size

    M = np.outer(e.w_hat, e.w_hat) + e.A_hat
    theta_new, _, th_improved = _search_1d(
        lambda t: _latent_part(t, H, M, n),
        params_k.theta, *theta_bounds, precise=precise, probe_step=probe_step)

    if n == 1:
        # no interaction with a single site: Q does not depend on phi
        return theta_new, params_k.phi, False

    y_obs = sites.y[obs_idx]
    m_obs = np.full(n_obs, params_k.mu)
    if sites.b:
        m_obs = m_obs + sites.X[obs_idx] @ params_k.beta
    m_obs = m_obs + params_k.gamma * e.w_hat[obs_idx]
    gamma2_trA = params_k.gamma ** 2 * float(np.diag(e.A_hat)[obs_idx].sum())
    phi_new, _, ph_improved = _search_1d(
        lambda p: _measurement_part(p, params_k.alpha, H, obs_idx, y_obs,
                                    m_obs, gamma2_trA, params_k.sigma2_eps,
                                    n_obs),
        params_k.phi, *phi_bounds, precise=precise, probe_step=probe_step)

    return theta_new, phi_new, not (th_improved or ph_improved)


def default_init(sites: SiteSet, *, mu_fixed_zero=False, alpha=1.0,
                 H=None) -> ParamVector:
    """Deterministic, scale-aware starting point for the EM loop.

    The correlation range starts at the median pairwise distance and the
    interaction strength at the median nearest-neighbor distance (the
    leave-one-out interaction sum is dominated by nearest neighbors, and a
    pairwise-scale start puts the absorption weights near zero, inflating
    every other parameter).  mu and beta come from a least-squares fit of
    the absorption-corrected observations; the residual variance is split
    evenly between the noise and the latent scale.
    """
    if H is None:
        H = distance_matrix(sites)
    n = sites.n
    if n > 1:
        iu = np.triu_indices(n, k=1)
        med_pair = float(np.median(H[iu]))
        off_diag = H + np.diag(np.full(n, np.inf))
        med_nn = float(np.median(off_diag.min(axis=1)))
    else:
        med_pair = med_nn = 1.0
    lo, hi = default_bounds(H)
    theta0 = min(max(med_pair if med_pair > 0 else 1.0, lo), hi)
    phi0 = min(max(med_nn if med_nn > 0 else 1.0, lo), hi)

    obs_idx = np.flatnonzero(sites.observed)
    g_obs = _g_from_H(H, phi0, alpha)[obs_idx]
    z = sites.y[obs_idx] / g_obs
    mu0 = 0.0 if mu_fixed_zero else float(z.mean())
    if sites.b:
        beta0, *_ = np.linalg.lstsq(sites.X[obs_idx], z, rcond=None)
    else:
        beta0 = np.zeros(0)
    r = z - mu0
    if sites.b:
        r = r - sites.X[obs_idx] @ beta0
    v = float(np.var(r))
    if v <= 0:
        v = 1e-6 * (1.0 + float(np.mean(z ** 2)))
    return ParamVector(mu0, beta0, v / 2.0, math.sqrt(v / 2.0), theta0, phi0,
                       alpha=alpha, mu_fixed_zero=mu_fixed_zero)


# ---------------------------------------------------------------------------
# fit loop internals

class _FitContext:
    """Per-fit precomputed arrays shared by every EM step."""

    def __init__(self, sites: SiteSet, opts: EMOptions):
        self.sites = sites
        self.H = distance_matrix(sites)
        self.part = partition(sites)
        self.obs_idx = self.part.observed_idx
        self.y_obs = sites.y[self.obs_idx]
        self.X_obs = sites.X[self.obs_idx]
        self.n = sites.n
        self.n_miss = sites.n_missing
        self.theta_bounds = opts.theta_bounds or default_bounds(self.H)
        self.phi_bounds = opts.phi_bounds or default_bounds(self.H)
        self.probe_step = opts.probe_step

    def loglik(self, params: ParamVector) -> float:
        bundle = assemble(params, self.sites, H=self.H, part=self.part)
        return _loglik_from_bundle(bundle, self.sites)


def _em_step(ctx: _FitContext, params: ParamVector):
    """One monotone EM step: E-step, sequential closed updates, bounded
    (theta, phi) improvement.  Returns (new_params, ll_at_input,
    stalled_numeric)."""
    sites = ctx.sites
    bundle = assemble(params, sites, H=ctx.H, part=ctx.part)
    ll_in = _loglik_from_bundle(bundle, sites)
    e = _e_step_from_bundle(bundle, sites)
    w_obs = e.w_hat[ctx.obs_idx]
    A_diag_obs = np.diag(e.A_hat)[ctx.obs_idx]
    trA_obs = float(A_diag_obs.sum())
    z = ctx.y_obs / bundle.G_diag[ctx.obs_idx]

    # one coordinate at a time: each update at the current vector improves Q
    mu, beta = params.mu, params.beta
    s2, gamma = params.sigma2_eps, params.gamma
    fixed = params.mu_fixed_zero
    args = (z, ctx.X_obs, w_obs, trA_obs, ctx.n, ctx.n_miss)
    mu = _closed_scalar(mu, beta, s2, gamma, fixed, *args)[0]
    if sites.b:
        beta = _closed_scalar(mu, beta, s2, gamma, fixed, *args)[1]
    gamma = _closed_scalar(mu, beta, s2, gamma, fixed, *args)[3]
    s2 = _closed_scalar(mu, beta, s2, gamma, fixed, *args)[2]

    # bounded improvement of (theta, phi); Q separates in the two coordinates
    M = np.outer(e.w_hat, e.w_hat) + e.A_hat
    theta, _, th_improved = _search_1d(
        lambda t: _latent_part(t, ctx.H, M, ctx.n),
        params.theta, *ctx.theta_bounds, precise=False,
        probe_step=ctx.probe_step)
    phi = params.phi
    ph_improved = False
    if ctx.n > 1:
        m_obs = np.full(ctx.obs_idx.size, mu)
        if sites.b:
            m_obs = m_obs + ctx.X_obs @ beta
        m_obs = m_obs + gamma * w_obs
        gamma2_trA = gamma ** 2 * trA_obs
        phi, _, ph_improved = _search_1d(
            lambda p: _measurement_part(p, params.alpha, ctx.H, ctx.obs_idx,
                                        ctx.y_obs, m_obs, gamma2_trA, s2,
                                        ctx.obs_idx.size),
            params.phi, *ctx.phi_bounds, precise=False,
            probe_step=ctx.probe_step)

    new = params.replace(mu=mu, beta=beta, sigma2_eps=s2, gamma=gamma,
                         theta=theta, phi=phi)
    return new, ll_in, not (th_improved or ph_improved)


def _to_working(p: ParamVector) -> np.ndarray:
    """Free parameters with positives on the log scale, for extrapolation."""
    head = [] if p.mu_fixed_zero else [p.mu]
    return np.array(head + list(p.beta)
                    + [math.log(p.sigma2_eps), p.gamma,
                       math.log(p.theta), math.log(p.phi)])


def _from_working(t: np.ndarray, template: ParamVector,
                  theta_bounds, phi_bounds) -> ParamVector:
    k = 0
    mu = 0.0
    if not template.mu_fixed_zero:
        mu = float(t[0])
        k = 1
    beta = t[k:k + template.b]
    s2, gamma, theta, phi = t[k + template.b:]
    clip = lambda x, lo, hi: min(max(x, lo), hi)
    return template.replace(
        mu=mu, beta=beta, sigma2_eps=math.exp(s2), gamma=float(gamma),
        theta=clip(math.exp(theta), *theta_bounds),
        phi=clip(math.exp(phi), *phi_bounds))


def _extrapolate(p0, p1, p2, theta_bounds, phi_bounds, cap):
    """Squared-extrapolation candidate from three consecutive EM iterates.

    Returns (candidate, capped): capped is True when the step length hit the
    current cap, which signals the caller to enlarge the cap if the
    candidate is accepted (long ridges need growing steps).
    """
    t0, t1, t2 = _to_working(p0), _to_working(p1), _to_working(p2)
    r = t1 - t0
    v = (t2 - t1) - r
    vv = float(v @ v)
    if vv < 1e-28:
        return None, False
    alpha = -math.sqrt(float(r @ r) / vv)
    capped = alpha < -cap
    alpha = min(-1.0, max(alpha, -cap))
    cand = t0 - 2.0 * alpha * r + alpha ** 2 * v
    if not np.all(np.isfinite(cand)):
        return None, False
    return _from_working(cand, p2, theta_bounds, phi_bounds), capped


def _rel_change(old: ParamVector, new: ParamVector) -> float:
    a, b = old.free_values(), new.free_values()
    return float(np.max(np.abs(b - a) / np.maximum(np.abs(a), 1.0)))


def fit_em(sites: SiteSet, init: ParamVector = None,
           opts: EMOptions = None) -> FitResult:
    """Maximum-likelihood fit by EM with monotone likelihood trace.

    Convergence requires both the log-likelihood change and the maximum
    relative parameter change between consecutive EM steps to fall below
    opts.tol; hitting max_iter reports converged=False rather than raising.
    Acceleration candidates are kept only when the observed-data
    log-likelihood does not decrease, so the recorded trace never drops.
    """
    opts = opts or EMOptions()
    ctx = _FitContext(sites, opts)
    if init is None:
        init = default_init(sites, H=ctx.H)
    clip = lambda x, lo, hi: min(max(x, lo), hi)
    params = init.replace(theta=clip(init.theta, *ctx.theta_bounds),
                          phi=clip(init.phi, *ctx.phi_bounds))

    trace = [ctx.loglik(params)]
    converged = False
    stalls = 0
    steps = 0
    step_cap = 4.0

    while steps < opts.max_iter and not converged:
        cycle_start = params
        p1, _, s1 = _em_step(ctx, cycle_start)
        steps += 1
        stalls += int(s1)
        params = p1
        if steps >= opts.max_iter:
            trace.append(ctx.loglik(p1))
            break

        p2, ll1, s2 = _em_step(ctx, p1)     # evaluates the likelihood at p1
        steps += 1
        trace.append(ll1)
        ll2 = ctx.loglik(p2)
        trace.append(ll2)
        stalls += int(s2)
        converged = (abs(ll2 - ll1) < opts.tol
                     and _rel_change(p1, p2) < opts.tol)
        params = p2
        if converged or steps >= opts.max_iter:
            break

        if opts.accelerate:
            cand, capped = _extrapolate(cycle_start, p1, p2, ctx.theta_bounds,
                                        ctx.phi_bounds, step_cap)
            if cand is not None:
                try:
                    p3, _, s3 = _em_step(ctx, cand)
                    ll3 = ctx.loglik(p3)
                except SingularCovariance:
                    p3, ll3 = None, -np.inf
                if p3 is not None and ll3 >= ll2:
                    # accelerated candidate kept only when the likelihood
                    # does not drop, so the trace stays monotone
                    steps += 1
                    stalls += int(s3)
                    trace.append(ll3)
                    params = p3
                    if capped:
                        step_cap = min(step_cap * 4.0, 1e4)
                else:
                    step_cap = max(step_cap / 4.0, 4.0)

    e_final = _e_step_from_bundle(
        assemble(params, sites, H=ctx.H, part=ctx.part), sites)
    return FitResult(params, np.asarray(trace), steps, converged, e_final,
                     numeric_stalls=stalls)
