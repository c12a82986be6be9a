"""Kriging of the latent field, potential and conditional-potential surfaces
with uncertainty, and greedy total-potential estimation.

The plug-in potential at a target location s is q(s) = mu + x(s) beta +
gamma w_hat(s), with w_hat(s) the conditional mean of the latent field given
the observed rows.  The conditional potential multiplies q(s) by the
absorption weight of s against all current sites; the total-potential search
grows a fresh site pattern greedily, always inserting the grid cell where
the current conditional potential is largest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import (GridSpec, ParamVector, SiteSet, Surface, cross_distances,
                   partition)
from .errors import (CovariateCoverageGap, EmptyFeasibleSet,
                     NoUncertaintySource, DimensionMismatch)
from .estimation import FitResult
from .inference import BootstrapSample, InfoMatrix, fisher_information
from .kernels import (CorrelationSpec, InteractionSpec, absorption_weights,
                      correlation_matrix, interaction_f)
from .model import assemble, chol_spd, _solve_obs


@dataclass(frozen=True)
class PredictionTargets:
    """Prediction locations with their covariate values."""

    locations: np.ndarray
    X_targets: np.ndarray = None

    def __post_init__(self):
        loc = np.atleast_2d(np.asarray(self.locations, dtype=float))
        if loc.ndim != 2 or loc.shape[1] != 2:
            raise DimensionMismatch("locations must be (T, 2)")
        if not np.all(np.isfinite(loc)):
            raise DimensionMismatch("target coordinates must be finite")
        X = self.X_targets
        if X is None:
            X = np.zeros((loc.shape[0], 0))
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(loc.shape[0], -1)
        if X.shape[0] != loc.shape[0]:
            raise DimensionMismatch("X_targets rows must match locations")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "X_targets", X)


@dataclass(frozen=True)
class TotalPotentialResult:
    """Greedy total-potential search outcome."""

    chosen_sites: np.ndarray
    v_curve: np.ndarray
    stopped_reason: str  # max_n | tolerance | nonpositive-gain | exhausted


def _check_fit(fit: FitResult, force: bool):
    if not fit.converged and not force:
        raise ValueError("fit did not converge; pass force=True to predict anyway")


def krige_latent(fit: FitResult, sites: SiteSet, targets, *, force=False):
    """Conditional mean and variance of the latent field at target locations.

    The cross-covariance of a target with the observations is
    gamma * rho(target, sites) * G restricted to the observed columns.
    Variances are on the correlation scale and lie in [0, 1]: far from all
    data the prediction reverts to the zero marginal mean with unit
    variance.  Returns (w_hat_targets, var_targets).
    """
    _check_fit(fit, force)
    if isinstance(targets, PredictionTargets):
        targets = targets.locations
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    params = fit.params
    bundle = assemble(params, sites)
    part = bundle.part
    rho_ts = correlation_matrix(CorrelationSpec(params.theta),
                                cross_distances(targets, sites.coords))
    cov_ty = params.gamma * rho_ts * bundle.G_diag[None, :]
    C = cov_ty[:, part.observed_idx]
    r = part.gather(sites.y) - part.gather(bundle.mean_y)
    w_hat = C @ _solve_obs(bundle, r)
    var = 1.0 - np.sum(C * _solve_obs(bundle, C.T).T, axis=1)
    var = np.clip(var, 0.0, 1.0)
    return w_hat, var


def _grid_covariates(grid: GridSpec, covariates, b: int):
    """Per-cell covariate matrix and coverage mask from rasters.

    covariates may be None (only for a model with no covariates), an
    (ny, nx, b) array, or a list of b (ny, nx) arrays.  Cells with
    non-finite covariate values are masked.
    """
    n_cells = grid.n_cells
    if b == 0:
        return np.zeros((n_cells, 0)), np.zeros(n_cells, dtype=bool)
    if covariates is None:
        raise CovariateCoverageGap("model has covariates but no rasters given")
    if isinstance(covariates, (list, tuple)):
        covariates = np.stack([np.asarray(c, dtype=float) for c in covariates],
                              axis=-1)
    covariates = np.asarray(covariates, dtype=float)
    if covariates.shape != (grid.ny, grid.nx, b):
        raise DimensionMismatch(
            f"covariate rasters must be (ny, nx, b) = {(grid.ny, grid.nx, b)}")
    X_grid = covariates.reshape(n_cells, b)
    masked = ~np.all(np.isfinite(X_grid), axis=1)
    return np.where(np.isfinite(X_grid), X_grid, 0.0), masked


def potential_surface(fit: FitResult, sites: SiteSet, grid: GridSpec,
                      covariates=None, *, force=False) -> Surface:
    """Plug-in potential over a grid: mu + x(s) beta + gamma w_hat(s).

    Cells not covered by the covariate rasters are masked in the output.
    """
    _check_fit(fit, force)
    params = fit.params
    X_grid, masked = _grid_covariates(grid, covariates, params.b)
    if masked.all():
        raise CovariateCoverageGap("covariate rasters cover no grid cell")
    w_hat, _ = krige_latent(fit, sites, grid.cell_centers(), force=True)
    q = np.full(grid.n_cells, params.mu)
    if params.b:
        q = q + X_grid @ params.beta
    q = q + params.gamma * w_hat
    q = np.where(masked, 0.0, q)
    return Surface(grid, q.reshape(grid.ny, grid.nx), "potential",
                   masked.reshape(grid.ny, grid.nx))


def absorption_surface(sites: SiteSet, params: ParamVector,
                       grid: GridSpec) -> np.ndarray:
    """Weight g(s; S) per grid cell with all N sites as absorbers."""
    spec = InteractionSpec(params.phi, params.alpha)
    return absorption_weights(grid.cell_centers(), sites.coords, spec)


def conditional_surface(fit: FitResult, sites: SiteSet, grid: GridSpec,
                        covariates=None, *, potential: Surface = None,
                        force=False) -> Surface:
    """Conditional potential q(s) * g(s; S) over a grid.

    By construction the values equal the potential surface multiplied
    cellwise by the absorption weights of the full site set.
    """
    if potential is None:
        potential = potential_surface(fit, sites, grid, covariates, force=force)
    g = absorption_surface(sites, fit.params, grid).reshape(grid.ny, grid.nx)
    vals = np.where(potential.mask, 0.0, potential.values * g)
    return Surface(grid, vals, "conditional", potential.mask)


def _draw_params(fit: FitResult, sites: SiteSet, source, draws, rng,
                 info: InfoMatrix):
    """Parameter draws for uncertainty surfaces plus the redraw count."""
    params = fit.params
    if isinstance(source, BootstrapSample):
        kept = source.kept
        if not kept:
            raise NoUncertaintySource("bootstrap sample has no kept runs")
        idx = rng.integers(0, len(kept), size=draws)
        return [kept[i] for i in idx], 0
    if source == "wald":
        if info is None:
            info = fisher_information(params, sites)
        try:
            c = scipy.linalg.cho_factor(info.I_tilde, check_finite=False)
            cov = scipy.linalg.cho_solve(c, np.eye(len(info.labels)),
                                         check_finite=False)
        except scipy.linalg.LinAlgError:
            raise NoUncertaintySource("information matrix is not invertible")
        L, _ = chol_spd(0.5 * (cov + cov.T))
        mean = params.free_values()
        labels = info.labels
        pos = [j for j, lab in enumerate(labels)
               if lab in ("sigma2_eps", "theta", "phi")]
        out, redrawn = [], 0
        budget = 1000 * draws
        while len(out) < draws and budget > 0:
            draw = mean + L @ rng.standard_normal(len(labels))
            budget -= 1
            if all(draw[j] > 0 for j in pos):
                out.append(params.with_free_values(draw))
            else:
                redrawn += 1
        if len(out) < draws:
            raise NoUncertaintySource(
                "positivity redraw budget exhausted; intervals too wide")
        return out, redrawn
    raise NoUncertaintySource(f"unknown uncertainty source {source!r}")


def uncertainty_surfaces(fit: FitResult, sites: SiteSet, grid: GridSpec,
                         covariates=None, *, source="wald", draws=200, seed=0,
                         kind="conditional", info: InfoMatrix = None,
                         force=False):
    """Pointwise standard deviation of a surface across parameter draws.

    source is either "wald" (draws from the normal approximation around the
    fit, redrawing any vector violating the positivity bounds) or a
    BootstrapSample (draws from the kept runs).  Returns (Surface, n_redrawn).
    """
    _check_fit(fit, force)
    if kind not in ("potential", "conditional"):
        raise ValueError("kind must be potential or conditional")
    if draws < 1:
        raise ValueError("draws must be at least 1")
    if source is None:
        raise NoUncertaintySource("no uncertainty source supplied")
    rng = np.random.default_rng(seed)
    param_draws, n_redrawn = _draw_params(fit, sites, source, draws, rng, info)
    X_grid, masked = _grid_covariates(grid, covariates, fit.params.b)

    stack = np.empty((draws, grid.n_cells))
    for d, p in enumerate(param_draws):
        sub = FitResult(p, fit.loglik_trace, fit.iterations, True, fit.e_step)
        w_hat, _ = krige_latent(sub, sites, grid.cell_centers(), force=True)
        q = np.full(grid.n_cells, p.mu)
        if p.b:
            q = q + X_grid @ p.beta
        q = q + p.gamma * w_hat
        if kind == "conditional":
            q = q * absorption_surface(sites, p, grid)
        stack[d] = q
    sd = stack.std(axis=0, ddof=0)
    sd = np.where(masked, 0.0, sd)
    surface = Surface(grid, sd.reshape(grid.ny, grid.nx), "stddev",
                      masked.reshape(grid.ny, grid.nx))
    return surface, n_redrawn


def default_grid(sites: SiteSet, theta_hat: float, cell_size=50.0) -> GridSpec:
    """50 m cells over the site bounding box inflated by three correlation
    lengths (beyond that the kriged latent field is effectively zero)."""
    return GridSpec.around(sites.coords, cell_size, pad=3.0 * theta_hat)


def total_potential(fit: FitResult, potential: Surface, *, max_n=500,
                    min_distance=0.0, rel_tol=1e-3) -> TotalPotentialResult:
    """Greedy estimate of the maximum aggregate conditional potential.

    Starting from an empty pattern, repeatedly insert the feasible grid cell
    with the largest current conditional potential (ties break on the lowest
    row-major cell index).  After each insertion the running total
    recomputes every member's conditional value against the rest of the
    pattern.  Stops at max_n sites, when the relative gain drops below
    rel_tol ("tolerance"), when no candidate has positive value or an
    insertion would lower the total ("nonpositive-gain"), or when the
    min_distance rule leaves no feasible cell ("exhausted").
    """
    if max_n < 1:
        raise ValueError("max_n must be at least 1")
    grid = potential.grid
    cells = grid.cell_centers()
    q = potential.flat_values()
    feasible = np.isfinite(q)
    if not feasible.any():
        raise EmptyFeasibleSet("every grid cell is masked")
    spec = InteractionSpec(fit.params.phi, fit.params.alpha)

    sum_f = np.zeros(grid.n_cells)
    chosen_idx = []
    chosen_q = []
    F_chosen = np.zeros((0, 0))
    v_curve = []
    reason = "max_n"

    while True:
        cond = np.where(feasible, q / (1.0 + sum_f), -np.inf)
        best = int(np.argmax(cond))
        if not np.isfinite(cond[best]):
            reason = "exhausted"
            break
        if cond[best] <= 0.0:
            reason = "nonpositive-gain"
            break

        s_new = cells[best]
        f_new = interaction_f(spec, cross_distances(
            cells[chosen_idx], s_new[None, :]))[:, 0] if chosen_idx else np.zeros(0)
        n_old = len(chosen_idx)
        F_next = np.zeros((n_old + 1, n_old + 1))
        F_next[:n_old, :n_old] = F_chosen
        F_next[:n_old, n_old] = f_new
        F_next[n_old, :n_old] = f_new
        q_next = chosen_q + [q[best]]
        v_new = float(np.sum(np.asarray(q_next)
                             / (1.0 + F_next.sum(axis=1))))
        if v_curve and v_new <= v_curve[-1]:
            # inserting the best candidate lowers the running total
            reason = "nonpositive-gain"
            break

        chosen_idx.append(best)
        chosen_q = q_next
        F_chosen = F_next
        v_curve.append(v_new)
        sum_f = sum_f + interaction_f(spec, cross_distances(
            cells, s_new[None, :]))[:, 0]
        if min_distance > 0:
            d = cross_distances(cells, s_new[None, :])[:, 0]
            feasible = feasible & (d >= min_distance)

        if len(v_curve) >= 2:
            prev = v_curve[-2]
            if prev != 0 and (v_new - prev) < rel_tol * abs(prev):
                reason = "tolerance"
                break
        if len(chosen_idx) >= max_n:
            reason = "max_n"
            break

    return TotalPotentialResult(cells[chosen_idx] if chosen_idx
                                else np.zeros((0, 2)),
                                np.asarray(v_curve), reason)
