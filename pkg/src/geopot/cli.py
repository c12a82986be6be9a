"""Command-line front end: data ingestion, configuration, subcommands.

Subcommands: fit | simulate | predict | bootstrap | total | covar-dist.
Configuration is a flat key=value text file with # comments; unknown keys
are errors.  Every run is deterministic given (config, seed): CSV bodies are
byte-identical across reruns and timestamps live only in the run manifest.
All floats are written with 17 significant digits so values round-trip.

File formats
------------
data CSV   : header ``x,y,value,<cov1>,...``; empty value field = missing.
grid CSV   : header ``x,y,value``; row-major with y as the outer loop.
config     : ``key = value`` lines, ``#`` comments, fail-closed key set.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .core import GridSpec, ParamVector, SiteSet, Surface, cross_distances
from .errors import (DimensionMismatch, ParseError, PotentialModelError,
                     SingularInformation)
from .estimation import EMOptions, FitResult, default_init, e_step, fit_em
from .inference import (BootstrapSample, bootstrap, fisher_information,
                        wald_intervals, wald_vs_bootstrap_table)
from .model import simulate
from .prediction import (conditional_surface, default_grid, potential_surface,
                         total_potential, uncertainty_surfaces)

_EARTH_RADIUS_M = 6371000.0


def _fmt(v) -> str:
    """17-significant-digit float formatting; empty string for NaN."""
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return f"{float(v):.17g}"


# ---------------------------------------------------------------------------
# configuration

_CONFIG_DEFAULTS = {
    "data": None,              # path to the sites CSV
    "covariates": None,        # comma-separated covariate raster paths
    "coords": "meters",        # meters | degrees (local equirectangular)
    "rescale_covariates": True,
    "mu_fixed_zero": False,
    "alpha": 1.0,
    "theta_bounds": None,      # "lo,hi" in meters
    "phi_bounds": None,
    "em_max_iter": 500,
    "em_tol": 1e-6,
    "level": 0.95,             # confidence level for every interval artifact
    "bootstrap_m": 200,
    "bootstrap_filter": "default",  # default | none
    "grid_origin": None,       # "x,y"
    "grid_cell_size": None,
    "grid_nx": None,
    "grid_ny": None,
    "uncertainty_source": "auto",   # auto | wald | bootstrap
    "uncertainty_draws": 200,
    "uncertainty_kind": "conditional",  # conditional | potential
    "sample": None,            # bootstrap sample.csv from a previous run
    "params": None,            # params.csv from a previous fit
    "points": None,            # point list for covar-dist
    "total_max_n": 500,
    "total_min_distance": 0.0,
    "total_rel_tol": 1e-3,
    "threads": 0,              # 0 = auto; env GEOPOT_THREADS overrides
    "seed": 0,
    "out": "out",
}

_BOOL_KEYS = {"rescale_covariates", "mu_fixed_zero"}
_INT_KEYS = {"em_max_iter", "bootstrap_m", "grid_nx", "grid_ny",
             "uncertainty_draws", "total_max_n", "threads", "seed"}
_FLOAT_KEYS = {"alpha", "em_tol", "level", "grid_cell_size",
               "total_min_distance", "total_rel_tol"}
_PAIR_KEYS = {"theta_bounds", "phi_bounds", "grid_origin"}
_CHOICE_KEYS = {"coords": ("meters", "degrees"),
                "bootstrap_filter": ("default", "none"),
                "uncertainty_source": ("auto", "wald", "bootstrap"),
                "uncertainty_kind": ("conditional", "potential")}


class RunConfig:
    """Validated run configuration; one attribute per config key."""

    def __init__(self, **kw):
        merged = dict(_CONFIG_DEFAULTS)
        for k, v in kw.items():
            if k not in merged:
                raise ParseError(f"unknown config key {k!r}")
            merged[k] = v
        for k, v in merged.items():
            setattr(self, k, v)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in _CONFIG_DEFAULTS}


def _parse_value(key, raw, line):
    if key not in _CONFIG_DEFAULTS:
        raise ParseError(f"unknown config key {key!r}", line)
    raw = raw.strip()
    try:
        if key in _BOOL_KEYS:
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError("expected true or false")
            return low == "true"
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _PAIR_KEYS:
            parts = [float(p) for p in raw.split(",")]
            if len(parts) != 2:
                raise ValueError("expected two comma-separated numbers")
            return tuple(parts)
        if key in _CHOICE_KEYS:
            if raw not in _CHOICE_KEYS[key]:
                raise ValueError(f"expected one of {_CHOICE_KEYS[key]}")
            return raw
        return raw  # path / free-form string keys
    except ValueError as exc:
        raise ParseError(f"bad value for {key!r}: {exc}", line)


def parse_config(text: str) -> RunConfig:
    """Parse flat key=value configuration text; unknown keys are errors."""
    values = {}
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        stripped = rawline.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ParseError("expected key = value", lineno)
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key in values:
            raise ParseError(f"duplicate config key {key!r}", lineno)
        values[key] = _parse_value(key, raw, lineno)
    return RunConfig(**values)


def serialize_config(cfg: RunConfig) -> str:
    """Inverse of parse_config up to formatting; round-trips semantically."""
    lines = []
    for key in _CONFIG_DEFAULTS:
        v = getattr(cfg, key)
        if v is None:
            continue
        if key in _BOOL_KEYS:
            lines.append(f"{key} = {'true' if v else 'false'}")
        elif key in _PAIR_KEYS:
            lines.append(f"{key} = {_fmt(v[0])},{_fmt(v[1])}")
        elif key in _FLOAT_KEYS:
            lines.append(f"{key} = {_fmt(v)}")
        else:
            lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    cfg = parse_config(text)
    for key in ("data", "sample", "params", "points"):
        p = getattr(cfg, key)
        if p is not None and not Path(p).exists():
            raise ParseError(f"{key} path does not exist: {p}")
    if cfg.covariates:
        for p in cfg.covariates.split(","):
            if not Path(p.strip()).exists():
                raise ParseError(f"covariate raster does not exist: {p.strip()}")
    return cfg


# ---------------------------------------------------------------------------
# data ingestion

@dataclass(frozen=True)
class CovariateScaling:
    """Affine [0,1] rescaling constants per covariate column.

    Fitted on the observed sites and reused verbatim when covariate rasters
    are evaluated on a prediction grid.
    """

    names: tuple
    offsets: np.ndarray
    scales: np.ndarray

    def apply(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.offsets) / self.scales


def _degrees_to_meters(coords: np.ndarray) -> np.ndarray:
    """Local equirectangular lon/lat -> meters around the centroid."""
    lon, lat = coords[:, 0], coords[:, 1]
    lon0, lat0 = lon.mean(), lat.mean()
    x = np.radians(lon - lon0) * math.cos(math.radians(lat0)) * _EARTH_RADIUS_M
    y = np.radians(lat - lat0) * _EARTH_RADIUS_M
    return np.column_stack([x, y])


def ingest(path, *, coords="meters", rescale=True):
    """Load a sites CSV into a SiteSet.

    Returns (sites, scaling, cov_names).  Covariates are rescaled to [0, 1]
    with constants computed over the observed sites; the constants are kept
    for grid-time reuse.  Empty value fields mark missing observations.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty data file", 1)
        header = [h.strip() for h in header]
        if header[:3] != ["x", "y", "value"]:
            raise ParseError("header must start with x,y,value", 1)
        cov_names = tuple(header[3:])
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != width:
                raise ParseError(f"expected {width} fields, got {len(row)}",
                                 lineno)
            try:
                x = float(row[0])
                y = float(row[1])
                val = row[2].strip()
                value = float(val) if val else float("nan")
                covs = [float(c) for c in row[3:]]
            except ValueError as exc:
                raise ParseError(str(exc), lineno)
            rows.append((x, y, value, covs))
    if not rows:
        raise ParseError("no data rows", 2)
    xy = np.array([[r[0], r[1]] for r in rows])
    if coords == "degrees":
        xy = _degrees_to_meters(xy)
    y = np.array([r[2] for r in rows])
    X = np.array([r[3] for r in rows]).reshape(len(rows), len(cov_names))

    observed = ~np.isnan(y)
    if X.shape[1] and rescale:
        offsets = X[observed].min(axis=0)
        spans = X[observed].max(axis=0) - offsets
        spans = np.where(spans > 0, spans, 1.0)
    else:
        offsets = np.zeros(X.shape[1])
        spans = np.ones(X.shape[1])
    scaling = CovariateScaling(cov_names, offsets, spans)
    sites = SiteSet(xy, y, scaling.apply(X) if X.shape[1] else X)
    return sites, scaling, cov_names


# ---------------------------------------------------------------------------
# grid CSV serialization

def write_surface(path, surface: Surface, written):
    grid = surface.grid
    vals = surface.flat_values()
    cells = grid.cell_centers()
    with _tracked_open(path, written) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "value"])
        for (cx, cy), v in zip(cells, vals):
            w.writerow([_fmt(cx), _fmt(cy), _fmt(v)])


def read_raster(path):
    """Read a grid CSV into (GridSpec, values, mask); empty values are masked."""
    pts, vals = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["x", "y", "value"]:
            raise ParseError("grid header must be x,y,value", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", lineno)
            try:
                x, y = float(row[0]), float(row[1])
                val = row[2].strip()
                v = float(val) if val else float("nan")
            except ValueError as exc:
                raise ParseError(str(exc), lineno)
            pts.append((x, y))
            vals.append(v)
    if not pts:
        raise ParseError("no grid rows", 2)
    pts = np.asarray(pts)
    xs = np.unique(pts[:, 0])
    ys = np.unique(pts[:, 1])
    nx, ny = xs.size, ys.size
    if nx * ny != len(pts):
        raise ParseError("grid rows do not form a full rectangle")
    step_x = np.diff(xs)
    step_y = np.diff(ys)
    if nx > 1 and not np.allclose(step_x, step_x[0], rtol=1e-9):
        raise ParseError("grid x spacing is not uniform")
    if ny > 1 and not np.allclose(step_y, step_y[0], rtol=1e-9):
        raise ParseError("grid y spacing is not uniform")
    cell = float(step_x[0]) if nx > 1 else (float(step_y[0]) if ny > 1 else 1.0)
    if nx > 1 and ny > 1 and not np.isclose(step_x[0], step_y[0], rtol=1e-9):
        raise ParseError("grid cells must be square")
    grid = GridSpec(float(xs[0]), float(ys[0]), cell, nx, ny)
    expect = grid.cell_centers()
    if not np.allclose(pts, expect, rtol=0, atol=1e-6 * cell):
        raise ParseError("grid rows must be row-major with y as the outer loop")
    values = np.asarray(vals).reshape(ny, nx)
    return grid, values, np.isnan(values)


# ---------------------------------------------------------------------------
# artifact helpers

class _tracked_open:
    """Open a file for writing and record it for failure-time cleanup."""

    def __init__(self, path, written):
        self.path = Path(path)
        self.written = written

    def __enter__(self):
        self.fh = open(self.path, "w", newline="", encoding="utf-8")
        self.written.append(self.path)
        return self.fh

    def __exit__(self, *exc):
        self.fh.close()
        return False


def _write_manifest(out_dir, command, seed, config_text, written):
    manifest = {
        "command": command,
        "seed": seed,
        "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
        "versions": {
            "geopot": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    path = Path(out_dir) / "manifest.json"
    written.append(path)
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def _write_table(path, header, rows, written):
    with _tracked_open(path, written) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _write_params_csv(path, labels, estimates, lower, upper, written):
    rows = []
    for j, lab in enumerate(labels):
        lo = lower[j] if lower is not None else float("nan")
        hi = upper[j] if upper is not None else float("nan")
        rows.append([lab, _fmt(estimates[j]), _fmt(lo), _fmt(hi)])
    _write_table(path, ["parameter", "estimate", "lcl", "ucl"], rows, written)


def _load_params_csv(path, template: ParamVector) -> ParamVector:
    est = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "parameter":
            raise ParseError("params file must start with a parameter column", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                est[row[0]] = float(row[1])
            except (IndexError, ValueError) as exc:
                raise ParseError(str(exc), lineno)
    labels = template.free_labels()
    missing = [lab for lab in labels if lab not in est]
    if missing:
        raise ParseError(f"params file lacks entries for {missing}")
    return template.with_free_values([est[lab] for lab in labels])


def _load_sample_csv(path, template: ParamVector, seed) -> BootstrapSample:
    labels = template.free_labels()
    raw, conv, kept = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expect = ["m", "converged", "kept", *labels]
        if header != expect:
            raise ParseError(f"sample file header must be {expect}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                conv.append(row[1] == "1")
                kept.append(row[2] == "1")
                raw.append(template.with_free_values([float(v) for v in row[3:]]))
            except (IndexError, ValueError) as exc:
                raise ParseError(str(exc), lineno)
    if not raw:
        raise ParseError("sample file has no rows", 2)
    return BootstrapSample(tuple(raw), tuple(conv), tuple(kept),
                           f"loaded from {path}", seed)


# ---------------------------------------------------------------------------
# shared run pieces

def _effective_threads(cfg) -> int:
    env = os.environ.get("GEOPOT_THREADS")
    threads = int(env) if env else cfg.threads
    if threads <= 0:
        threads = os.cpu_count() or 1
    return threads


def _em_options(cfg) -> EMOptions:
    return EMOptions(max_iter=cfg.em_max_iter, tol=cfg.em_tol,
                     theta_bounds=cfg.theta_bounds, phi_bounds=cfg.phi_bounds)


def _require(cfg, key):
    if getattr(cfg, key) is None:
        raise ParseError(f"config key {key!r} is required for this command")
    return getattr(cfg, key)


def _load_sites(cfg):
    path = _require(cfg, "data")
    return ingest(path, coords=cfg.coords, rescale=cfg.rescale_covariates)


def _fit_or_load(cfg, sites) -> FitResult:
    """Fit the model, or rebuild a FitResult from a stored params file."""
    if cfg.params is not None:
        template = default_init(sites, mu_fixed_zero=cfg.mu_fixed_zero,
                                alpha=cfg.alpha)
        params = _load_params_csv(cfg.params, template)
        return FitResult(params, np.zeros(1), 0, True, e_step(params, sites))
    init = default_init(sites, mu_fixed_zero=cfg.mu_fixed_zero, alpha=cfg.alpha)
    return fit_em(sites, init, _em_options(cfg))


def _resolve_grid(cfg, sites, fit, rasters):
    """Prediction grid: explicit config keys > covariate raster grid > default."""
    explicit = all(getattr(cfg, k) is not None
                   for k in ("grid_origin", "grid_cell_size", "grid_nx", "grid_ny"))
    if explicit:
        ox, oy = cfg.grid_origin
        return GridSpec(ox, oy, cfg.grid_cell_size, cfg.grid_nx, cfg.grid_ny)
    if rasters:
        return rasters[0][0]
    return default_grid(sites, fit.params.theta)


def _load_rasters(cfg, scaling):
    if not cfg.covariates:
        return []
    rasters = []
    for p in cfg.covariates.split(","):
        rasters.append(read_raster(p.strip()))
    return rasters


def _grid_covariate_stack(rasters, grid, scaling):
    """Stack covariate rasters onto the prediction grid, rescaled."""
    if not rasters:
        return None
    stack = []
    for j, (rgrid, values, mask) in enumerate(rasters):
        if rgrid != grid:
            raise DimensionMismatch(
                "covariate raster grid differs from the prediction grid")
        scaled = (values - scaling.offsets[j]) / scaling.scales[j]
        scaled = np.where(mask, np.nan, scaled)
        stack.append(scaled)
    return np.stack(stack, axis=-1)


# ---------------------------------------------------------------------------
# subcommands

def _cmd_fit(cfg, out_dir, seed, written):
    sites, scaling, cov_names = _load_sites(cfg)
    fit = fit_em(sites, default_init(sites, mu_fixed_zero=cfg.mu_fixed_zero,
                                     alpha=cfg.alpha), _em_options(cfg))
    labels = fit.params.free_labels()
    est = fit.params.free_values()
    lower = upper = None
    try:
        info = fisher_information(fit.params, sites)
        wi = wald_intervals(fit, info, cfg.level,
                            n_observed=sites.n - sites.n_missing)
        lower, upper = wi.lower, wi.upper
    except (SingularInformation, PotentialModelError):
        pass
    _write_params_csv(Path(out_dir) / "params.csv", labels, est, lower, upper,
                      written)
    _write_table(Path(out_dir) / "loglik_trace.csv", ["iteration", "loglik"],
                 [[i, _fmt(v)] for i, v in enumerate(fit.loglik_trace)], written)
    _write_table(Path(out_dir) / "w_hat.csv", ["x", "y", "w_hat"],
                 [[_fmt(x), _fmt(y), _fmt(w)] for (x, y), w
                  in zip(sites.coords, fit.e_step.w_hat)], written)
    if cov_names:
        _write_table(Path(out_dir) / "scaling.csv",
                     ["covariate", "offset", "scale"],
                     [[name, _fmt(o), _fmt(s)] for name, o, s
                      in zip(cov_names, scaling.offsets, scaling.scales)],
                     written)
    if not fit.converged:
        print(f"warning: EM did not converge in {fit.iterations} iterations",
              file=sys.stderr)


def _cmd_simulate(cfg, out_dir, seed, written):
    sites, scaling, cov_names = _load_sites(cfg)
    params = _simulation_params(cfg, sites)
    sim = simulate(params, sites, seed)
    # rewrite the original rows with the simulated value column so covariates
    # and layout survive byte-exactly
    src = Path(_require(cfg, "data")).read_text(encoding="utf-8").splitlines()
    out_rows = [src[0]]
    k = 0
    for line in src[1:]:
        if not line.strip():
            continue
        parts = next(csv.reader([line]))
        parts[2] = _fmt(sim.y[k]) if not math.isnan(sim.y[k]) else ""
        out_rows.append(",".join(parts))
        k += 1
    path = Path(out_dir) / "simulated.csv"
    written.append(path)
    path.write_text("\n".join(out_rows) + "\n", encoding="utf-8")


def _simulation_params(cfg, sites) -> ParamVector:
    if cfg.params is not None:
        template = default_init(sites, mu_fixed_zero=cfg.mu_fixed_zero,
                                alpha=cfg.alpha)
        return _load_params_csv(cfg.params, template)
    raise ParseError("simulate requires a params file (config key 'params')")


def _cmd_bootstrap(cfg, out_dir, seed, written):
    sites, scaling, cov_names = _load_sites(cfg)
    fit = _fit_or_load(cfg, sites)
    labels = fit.params.free_labels()
    rule = None if cfg.bootstrap_filter == "default" else (lambda p: True)
    if rule is not None:
        rule.description = "none (keep every converged run)"
    sample, intervals, emp_cov = bootstrap(
        fit, sites, cfg.bootstrap_m, filter_rule=rule, level=cfg.level,
        seed=seed, n_jobs=_effective_threads(cfg), em_opts=_em_options(cfg))
    rows = []
    for m, (p, conv, kept) in enumerate(zip(sample.raw, sample.raw_converged,
                                            sample.kept_mask)):
        rows.append([m, int(conv), int(kept),
                     *[_fmt(v) for v in p.free_values()]])
    _write_table(Path(out_dir) / "sample.csv",
                 ["m", "converged", "kept", *labels], rows, written)
    _write_table(Path(out_dir) / "empirical_cov.csv", ["parameter", *labels],
                 [[lab, *[_fmt(v) for v in emp_cov[j]]]
                  for j, lab in enumerate(labels)], written)
    info = fisher_information(fit.params, sites)
    _write_table(Path(out_dir) / "info_matrix.csv", ["parameter", *labels],
                 [[lab, *[_fmt(v) for v in info.I_tilde[j]]]
                  for j, lab in enumerate(labels)], written)
    est = fit.params.free_values()
    _write_params_csv(Path(out_dir) / "intervals.csv", labels, est,
                      [intervals[lab][0] for lab in labels],
                      [intervals[lab][1] for lab in labels], written)
    _write_table(Path(out_dir) / "wald_vs_bootstrap.csv",
                 ["parameter", "wald_sd", "bootstrap_sd"],
                 [[lab, _fmt(w), _fmt(b)] for lab, w, b
                  in wald_vs_bootstrap_table(info, emp_cov)], written)
    print(f"bootstrap: kept {len(sample.kept)} of {len(sample.raw)} runs "
          f"({sample.n_nonconverged} not converged, "
          f"{sample.n_filtered} filtered)")


def _cmd_predict(cfg, out_dir, seed, written):
    sites, scaling, cov_names = _load_sites(cfg)
    fit = _fit_or_load(cfg, sites)
    rasters = _load_rasters(cfg, scaling)
    grid = _resolve_grid(cfg, sites, fit, rasters)
    covs = _grid_covariate_stack(rasters, grid, scaling)
    pot = potential_surface(fit, sites, grid, covs, force=True)
    cond = conditional_surface(fit, sites, grid, covs, potential=pot,
                               force=True)
    source = cfg.uncertainty_source
    if source == "auto":
        source = "bootstrap" if cfg.sample else "wald"
    if source == "bootstrap":
        src = _load_sample_csv(_require(cfg, "sample"), fit.params, seed)
    else:
        src = "wald"
    sd, n_redrawn = uncertainty_surfaces(
        fit, sites, grid, covs, source=src, draws=cfg.uncertainty_draws,
        seed=seed, kind=cfg.uncertainty_kind, force=True)
    write_surface(Path(out_dir) / "potential.csv", pot, written)
    write_surface(Path(out_dir) / "conditional.csv", cond, written)
    write_surface(Path(out_dir) / "stddev.csv", sd, written)
    if n_redrawn:
        print(f"uncertainty: redrew {n_redrawn} parameter draws violating "
              "positivity bounds")


def _cmd_total(cfg, out_dir, seed, written):
    sites, scaling, cov_names = _load_sites(cfg)
    fit = _fit_or_load(cfg, sites)
    rasters = _load_rasters(cfg, scaling)
    grid = _resolve_grid(cfg, sites, fit, rasters)
    covs = _grid_covariate_stack(rasters, grid, scaling)
    pot = potential_surface(fit, sites, grid, covs, force=True)
    result = total_potential(fit, pot, max_n=cfg.total_max_n,
                             min_distance=cfg.total_min_distance,
                             rel_tol=cfg.total_rel_tol)
    _write_table(Path(out_dir) / "v_curve.csv", ["n", "v"],
                 [[n + 1, _fmt(v)] for n, v in enumerate(result.v_curve)],
                 written)
    _write_table(Path(out_dir) / "chosen_sites.csv", ["order", "x", "y"],
                 [[n + 1, _fmt(x), _fmt(y)] for n, (x, y)
                  in enumerate(result.chosen_sites)], written)
    print(f"total potential: {len(result.v_curve)} sites, "
          f"stopped on {result.stopped_reason}")


def _cmd_covar_dist(cfg, out_dir, seed, written):
    """1/(d_min + 0.1) street-proximity covariate raster, d_min in km."""
    points_path = _require(cfg, "points")
    pts = []
    with open(points_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header][:2] != ["x", "y"]:
            raise ParseError("points header must start with x,y", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                pts.append((float(row[0]), float(row[1])))
            except ValueError as exc:
                raise ParseError(str(exc), lineno)
    if not pts:
        raise ParseError("no points", 2)
    if not all(getattr(cfg, k) is not None
               for k in ("grid_origin", "grid_cell_size", "grid_nx", "grid_ny")):
        raise ParseError("covar-dist requires explicit grid_* config keys")
    ox, oy = cfg.grid_origin
    grid = GridSpec(ox, oy, cfg.grid_cell_size, cfg.grid_nx, cfg.grid_ny)
    d_min = cross_distances(grid.cell_centers(), np.asarray(pts)).min(axis=1)
    values = 1.0 / (d_min / 1000.0 + 0.1)
    surf = Surface(grid, values.reshape(grid.ny, grid.nx), "latent")
    write_surface(Path(out_dir) / "covar_dist.csv", surf, written)


_COMMANDS = {
    "fit": _cmd_fit,
    "simulate": _cmd_simulate,
    "predict": _cmd_predict,
    "bootstrap": _cmd_bootstrap,
    "total": _cmd_total,
    "covar-dist": _cmd_covar_dist,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="geopot",
        description="Latent spatial potential estimation from concurrent, "
                    "mutually absorbing point measurements.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="key=value config file")
        p.add_argument("--seed", type=int, default=None,
                       help="RNG seed (overrides the config)")
        p.add_argument("--out", default=None,
                       help="output directory (overrides the config)")
    args = parser.parse_args(argv)

    written = []
    try:
        cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else cfg.seed
        out_dir = Path(args.out if args.out is not None else cfg.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        _COMMANDS[args.command](cfg, out_dir, seed, written)
        config_text = Path(args.config).read_text(encoding="utf-8")
        _write_manifest(out_dir, args.command, seed, config_text, written)
        return 0
    except (ParseError, DimensionMismatch, FileNotFoundError) as exc:
        _cleanup(written)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PotentialModelError as exc:
        _cleanup(written)
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # pragma: no cover - defensive
        _cleanup(written)
        print(f"unexpected error: {exc!r}", file=sys.stderr)
        return 1


def _cleanup(written):
    for path in written:
        try:
            Path(path).unlink(missing_ok=True)
        except OSError:
            pass


if __name__ == "__main__":
    sys.exit(main())
