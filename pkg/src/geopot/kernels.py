"""Spatial correlation and interaction kernels with analytic phi-derivatives.

The correlation family is exponential, rho(d) = exp(-d / theta).  The
interaction family is exponential-power, f(d) = exp(-d / phi) ** alpha, and
the absorption weight of a location s against a set of absorbers S is
g(s; S) = 1 / (1 + sum of f over S), with the empty sum equal to zero.
Analytic derivatives with respect to phi are available only for alpha = 1;
callers must fall back to finite differences otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SiteSet, cross_distances, distance_matrix
from .errors import AlphaNotOne, NonPositiveTheta


@dataclass(frozen=True)
class CorrelationSpec:
    """Exponential spatial correlation with range theta (meters)."""

    theta: float
    family: str = "exponential"

    def __post_init__(self):
        if self.family != "exponential":
            raise ValueError(f"unknown correlation family {self.family!r}")
        if not (self.theta > 0):
            raise NonPositiveTheta(f"theta must be positive, got {self.theta}")


@dataclass(frozen=True)
class InteractionSpec:
    """Exponential-power interaction with strength phi (meters) and shape alpha."""

    phi: float
    alpha: float = 1.0
    family: str = "exponential-power"

    def __post_init__(self):
        if self.family != "exponential-power":
            raise ValueError(f"unknown interaction family {self.family!r}")
        if not (self.phi > 0):
            raise ValueError(f"phi must be positive, got {self.phi}")
        if not (self.alpha > 0):
            raise ValueError(f"alpha must be positive, got {self.alpha}")


def correlation_matrix(spec: CorrelationSpec, H) -> np.ndarray:
    """Elementwise exponential correlation of a distance matrix.

    For a site distance matrix the result has unit diagonal, is symmetric and
    has entries in (0, 1].  Rectangular cross-distance matrices are accepted.
    """
    if not (spec.theta > 0):
        raise NonPositiveTheta(f"theta must be positive, got {spec.theta}")
    H = np.asarray(H, dtype=float)
    return np.exp(-H / spec.theta)


def interaction_f(spec: InteractionSpec, d) -> np.ndarray:
    """Pairwise interaction strength f(d) = exp(-d / phi) ** alpha."""
    d = np.asarray(d, dtype=float)
    base = np.exp(-d / spec.phi)
    if spec.alpha == 1.0:
        return base
    return base ** spec.alpha


def absorption_weights(targets, absorbers, spec: InteractionSpec) -> np.ndarray:
    """Weight g(s; S) for each target location s against the absorber set S.

    This is the one implementation of the absorption weight; surface and
    greedy-search code reuse it rather than re-deriving the formula.  An
    empty absorber set yields weight 1 for every target.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    absorbers = np.asarray(absorbers, dtype=float).reshape(-1, 2)
    if absorbers.shape[0] == 0:
        return np.ones(targets.shape[0])
    F = interaction_f(spec, cross_distances(targets, absorbers))
    return 1.0 / (1.0 + F.sum(axis=1))


def g_weight(s, others, spec: InteractionSpec) -> float:
    """Scalar absorption weight of a single location against a location list."""
    others = np.asarray(others, dtype=float).reshape(-1, 2)
    return float(absorption_weights(np.asarray(s, dtype=float).reshape(1, 2),
                                    others, spec)[0])


def _g_from_H(H, phi, alpha=1.0) -> np.ndarray:
    """Leave-one-out weights from a precomputed site distance matrix."""
    base = np.exp(-H / phi)
    F = base if alpha == 1.0 else base ** alpha
    sum_f = F.sum(axis=1) - np.diag(F)
    return 1.0 / (1.0 + sum_f)


def g_vector(sites: SiteSet, spec: InteractionSpec, *, H=None) -> np.ndarray:
    """Leave-one-out weight vector g_i = g(s_i; S without s_i)."""
    if H is None:
        H = distance_matrix(sites)
    return _g_from_H(H, spec.phi, spec.alpha)


def _g_phi_gradient_from_H(H, phi) -> np.ndarray:
    """d g_i / d phi for alpha = 1, from a precomputed distance matrix."""
    F = np.exp(-H / phi)
    np.fill_diagonal(F, 0.0)
    sum_f = F.sum(axis=1)
    # d f / d phi = (h / phi^2) exp(-h / phi); denominator is (1 + sum f)^2,
    # the derivative of g = (1 + sum f)^-1
    dsum = (H / phi ** 2 * F).sum(axis=1)
    return -dsum / (1.0 + sum_f) ** 2


def g_phi_gradient(sites: SiteSet, spec: InteractionSpec, *, H=None) -> np.ndarray:
    """Analytic derivative of the leave-one-out weights with respect to phi.

    Entries are nonpositive: a larger phi strengthens absorption and lowers
    every weight.  Raises AlphaNotOne when the interaction shape is not 1;
    callers then fall back to finite differences.
    """
    if spec.alpha != 1.0:
        raise AlphaNotOne(f"analytic phi-gradient requires alpha = 1, "
                          f"got {spec.alpha}")
    if H is None:
        H = distance_matrix(sites)
    return _g_phi_gradient_from_H(H, spec.phi)


def g_tilde_matrix(sites: SiteSet, spec: InteractionSpec, *, H=None) -> np.ndarray:
    """Elementwise derivative of g g' with respect to phi (alpha = 1 only).

    Entry (p, q) is dg_p * g_q + g_p * dg_q; the matrix is symmetric.
    """
    if spec.alpha != 1.0:
        raise AlphaNotOne(f"analytic phi-gradient requires alpha = 1, "
                          f"got {spec.alpha}")
    if H is None:
        H = distance_matrix(sites)
    g = _g_from_H(H, spec.phi, 1.0)
    dg = _g_phi_gradient_from_H(H, spec.phi)
    return np.outer(dg, g) + np.outer(g, dg)
