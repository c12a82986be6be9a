"""Domain types, planar geometry, and missing-data index bookkeeping.

All types are immutable after construction (arrays are made read-only) and
safe to share across concurrent tasks.  Missing observations are encoded as
NaN in the observation vector; elimination/commutation bookkeeping is done
with index sets rather than materialized permutation matrices.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import AllMissing, DimensionMismatch


def _frozen_array(a, dtype=float):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SiteSet:
    """Measurement sites on a projected plane.

    Attributes
    ----------
    coords : (N, 2) array
        Site coordinates in meters (projected planar coordinates).
    y : (N,) array
        Observed values; NaN marks a missing observation.
    X : (N, b) array
        Covariate matrix, b >= 0.  Dimensionless after rescaling.
    """

    coords: np.ndarray
    y: np.ndarray
    X: np.ndarray
    has_duplicates: bool = field(init=False)

    def __post_init__(self):
        coords = _frozen_array(self.coords)
        y = _frozen_array(self.y)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise DimensionMismatch(f"coords must be (N, 2), got {coords.shape}")
        n = coords.shape[0]
        if n < 1:
            raise DimensionMismatch("at least one site is required")
        if y.shape != (n,):
            raise DimensionMismatch(f"y must have length {n}, got {y.shape}")
        X = self.X
        if X is None:
            X = np.zeros((n, 0))
        X = _frozen_array(X)
        if X.ndim == 1:
            X = _frozen_array(X.reshape(n, -1))
        if X.shape[0] != n:
            raise DimensionMismatch(f"X must have {n} rows, got {X.shape[0]}")
        if not np.all(np.isfinite(coords)):
            raise DimensionMismatch("coordinates must be finite")
        if not np.all(np.isfinite(X)):
            raise DimensionMismatch("covariates must be finite")
        observed = ~np.isnan(y)
        if not observed.any():
            raise AllMissing("every observation is missing")
        if not np.all(np.isfinite(y[observed])):
            raise DimensionMismatch("observed values must be finite")
        # duplicate coordinates are permitted but flagged; covariance assembly
        # relies on jitter to stay positive definite in that case
        uniq = np.unique(coords, axis=0)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "has_duplicates", uniq.shape[0] < n)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def b(self) -> int:
        return self.X.shape[1]

    @property
    def observed(self) -> np.ndarray:
        """Boolean mask, True where the observation is present."""
        return ~np.isnan(self.y)

    @property
    def n_missing(self) -> int:
        return int(np.isnan(self.y).sum())

    def with_y(self, y) -> "SiteSet":
        """Same layout and covariates with a replacement observation vector."""
        return SiteSet(self.coords, y, self.X)


@dataclass(frozen=True)
class ParamVector:
    """Full parameterization of the potential model.

    mu, beta and gamma are in potential units; sigma2_eps in squared potential
    units; theta and phi in meters; alpha is dimensionless.  When
    mu_fixed_zero is set, mu is pinned to zero and excluded from estimation
    and from the information matrix.
    """

    mu: float
    beta: np.ndarray
    sigma2_eps: float
    gamma: float
    theta: float
    phi: float
    alpha: float = 1.0
    mu_fixed_zero: bool = False

    def __post_init__(self):
        beta = _frozen_array(np.atleast_1d(self.beta))
        if beta.ndim != 1:
            raise DimensionMismatch("beta must be a vector")
        object.__setattr__(self, "beta", beta)
        for name in ("mu", "sigma2_eps", "gamma", "theta", "phi", "alpha"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not np.isfinite([self.mu, self.sigma2_eps, self.gamma,
                            self.theta, self.phi, self.alpha]).all():
            raise ValueError("parameters must be finite")
        if self.sigma2_eps < 0:
            raise ValueError("sigma2_eps must be nonnegative")
        if self.theta <= 0:
            raise ValueError("theta must be positive")
        if self.phi <= 0:
            raise ValueError("phi must be positive")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.mu_fixed_zero and self.mu != 0.0:
            raise ValueError("mu must be exactly 0 when mu_fixed_zero is set")

    @property
    def b(self) -> int:
        return self.beta.shape[0]

    def replace(self, **kw) -> "ParamVector":
        return dataclasses.replace(self, **kw)

    def free_labels(self) -> tuple:
        """Names of the estimated parameters, in reporting order."""
        labels = [] if self.mu_fixed_zero else ["mu"]
        labels += [f"beta{l + 1}" for l in range(self.b)]
        labels += ["sigma2_eps", "gamma", "theta", "phi"]
        return tuple(labels)

    def free_values(self) -> np.ndarray:
        vals = [] if self.mu_fixed_zero else [self.mu]
        vals = vals + list(self.beta) + [self.sigma2_eps, self.gamma,
                                         self.theta, self.phi]
        return np.array(vals)

    def with_free_values(self, values) -> "ParamVector":
        """Rebuild a ParamVector from a free-parameter vector (labels order)."""
        values = np.asarray(values, dtype=float)
        expect = len(self.free_labels())
        if values.shape != (expect,):
            raise DimensionMismatch(f"expected {expect} free values")
        k = 0
        mu = 0.0
        if not self.mu_fixed_zero:
            mu = values[0]
            k = 1
        beta = values[k:k + self.b]
        s2, gamma, theta, phi = values[k + self.b:]
        return ParamVector(mu, beta, s2, gamma, theta, phi,
                           alpha=self.alpha, mu_fixed_zero=self.mu_fixed_zero)


@dataclass(frozen=True)
class IndexPartition:
    """Observed/missing index bookkeeping for a length-N vector.

    Realizes the elimination (gather) and commutation (scatter) mappings with
    index sets.  Submatrix extraction must happen before inversion wherever a
    formula requires the inverse of an observed block: in general the
    submatrix of an inverse is not the inverse of the submatrix.
    """

    observed_idx: np.ndarray
    missing_idx: np.ndarray
    n: int

    def __post_init__(self):
        obs = _frozen_array(self.observed_idx, dtype=int)
        mis = _frozen_array(self.missing_idx, dtype=int)
        if obs.size == 0:
            raise AllMissing("partition requires at least one observed entry")
        merged = np.concatenate([obs, mis])
        if (np.sort(merged) != np.arange(self.n)).any():
            raise DimensionMismatch("indices must partition 0..N-1")
        if obs.size > 1 and (np.diff(obs) <= 0).any():
            raise DimensionMismatch("observed_idx must be strictly increasing")
        if mis.size > 1 and (np.diff(mis) <= 0).any():
            raise DimensionMismatch("missing_idx must be strictly increasing")
        object.__setattr__(self, "observed_idx", obs)
        object.__setattr__(self, "missing_idx", mis)

    @classmethod
    def from_mask(cls, observed_mask) -> "IndexPartition":
        mask = np.asarray(observed_mask, dtype=bool)
        return cls(np.flatnonzero(mask), np.flatnonzero(~mask), mask.size)

    @property
    def n_observed(self) -> int:
        return self.observed_idx.size

    def gather(self, v) -> np.ndarray:
        """Subvector of the nonmissing entries (the L mapping)."""
        return np.asarray(v)[..., self.observed_idx]

    def scatter(self, values, fill=np.nan) -> np.ndarray:
        """Spread observed-order values back to full length (the D mapping)."""
        values = np.asarray(values, dtype=float)
        out = np.full(self.n, fill, dtype=float)
        out[self.observed_idx] = values
        return out

    def gather_matrix(self, B) -> np.ndarray:
        """Observed-by-observed block L B L' of a square matrix."""
        B = np.asarray(B)
        return B[np.ix_(self.observed_idx, self.observed_idx)]

    def gather_cols(self, B) -> np.ndarray:
        """Observed columns B L' of a matrix."""
        return np.asarray(B)[:, self.observed_idx]


def distance_matrix(sites: SiteSet) -> np.ndarray:
    """Symmetric Euclidean distance matrix of the site coordinates, meters."""
    return cross_distances(sites.coords, sites.coords)


def cross_distances(a, b) -> np.ndarray:
    """Pairwise Euclidean distances between two point lists, (len(a), len(b))."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    diff = a[:, None, :] - b[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def partition(sites: SiteSet) -> IndexPartition:
    """Observed/missing index partition of a site set."""
    return IndexPartition.from_mask(sites.observed)


@dataclass(frozen=True)
class GridSpec:
    """Rectangular grid of cell centers: origin is the center of cell (0, 0)."""

    origin_x: float
    origin_y: float
    cell_size: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise DimensionMismatch("grid must have at least one cell per axis")
        if self.cell_size <= 0:
            raise DimensionMismatch("cell size must be positive")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    def xs(self) -> np.ndarray:
        return self.origin_x + self.cell_size * np.arange(self.nx)

    def ys(self) -> np.ndarray:
        return self.origin_y + self.cell_size * np.arange(self.ny)

    def cell_centers(self) -> np.ndarray:
        """(nx*ny, 2) cell-center coordinates, row-major with y as the outer axis."""
        xs, ys = self.xs(), self.ys()
        xx, yy = np.meshgrid(xs, ys)
        return np.column_stack([xx.ravel(), yy.ravel()])

    @classmethod
    def around(cls, coords, cell_size, pad=0.0) -> "GridSpec":
        """Grid covering the bounding box of coords inflated by pad on each side."""
        coords = np.asarray(coords, dtype=float)
        lo = coords.min(axis=0) - pad
        hi = coords.max(axis=0) + pad
        nx = max(1, int(np.ceil((hi[0] - lo[0]) / cell_size)) + 1)
        ny = max(1, int(np.ceil((hi[1] - lo[1]) / cell_size)) + 1)
        return cls(float(lo[0]), float(lo[1]), float(cell_size), nx, ny)


@dataclass(frozen=True)
class Surface:
    """Per-cell values over a grid with a semantic label.

    Values must be finite wherever the mask is False; masked cells carry no
    meaning (covariate gaps, failed cells).
    """

    grid: GridSpec
    values: np.ndarray
    label: str
    mask: np.ndarray = None

    _LABELS = ("potential", "conditional", "stddev", "latent")

    def __post_init__(self):
        values = _frozen_array(self.values)
        if values.shape != (self.grid.ny, self.grid.nx):
            raise DimensionMismatch(
                f"values must be (ny, nx) = {(self.grid.ny, self.grid.nx)}")
        mask = self.mask
        if mask is None:
            mask = np.zeros_like(values, dtype=bool)
        mask = _frozen_array(mask, dtype=bool)
        if mask.shape != values.shape:
            raise DimensionMismatch("mask shape must match values")
        if self.label not in self._LABELS:
            raise ValueError(f"unknown surface label {self.label!r}")
        if not np.all(np.isfinite(values[~mask])):
            raise ValueError("unmasked surface values must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    def flat_values(self) -> np.ndarray:
        """Row-major (y-outer) flattened values, NaN at masked cells."""
        out = np.array(self.values)
        out[self.mask] = np.nan
        return out.ravel()

    def relabel(self, label: str) -> "Surface":
        return Surface(self.grid, self.values, label, self.mask)
