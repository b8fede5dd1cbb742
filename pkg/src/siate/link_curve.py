"""Estimated link-function curve with a multiplier-bootstrap confidence band.

Each bootstrap replicate reweights every observation's likelihood
contribution by an independent unit-exponential draw (mean one, variance
one, nonnegative), refits the coefficient and index stages under those
weights, and re-evaluates the link on a fixed grid; pointwise empirical
quantiles of the replicate curves form the band.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .hermite import eval_basis
from .single_index import (
    FitOptions,
    SingleIndexModel,
    _ascend_theta,
    _newton_coefficients,
    _sign_normalize,
)

__all__ = [
    "LinkCurve",
    "BootstrapInstabilityError",
    "link_curve",
    "quad_fit",
    "default_grid_spec",
    "write_curve_csv",
    "write_curve_svg",
]


class BootstrapInstabilityError(RuntimeError):
    """Too many bootstrap replicates failed to converge."""


@dataclass(frozen=True)
class LinkCurve:
    """Grid, point curve, band, and the quadratic least-squares summary."""

    grid: np.ndarray
    g_hat: np.ndarray
    band_lower: np.ndarray
    band_upper: np.ndarray
    conf_level: float
    replications: int
    quad_coeffs: tuple
    quad_std_errors: tuple


def quad_fit(omega, values, weights=None):
    """OLS fit of ``values`` on (1, omega, omega^2) with classical standard errors.

    Returns ``(coeffs, std_errors)`` as triples (intercept, slope, curvature).
    """
    omega = np.asarray(omega, dtype=float)
    values = np.asarray(values, dtype=float)
    if omega.ndim != 1 or omega.shape != values.shape:
        raise ValueError("omega and values must be equal-length vectors")
    n = omega.shape[0]
    if n < 4:
        raise ValueError("need at least four points for a quadratic fit")
    if np.unique(omega).size < 3:
        raise ValueError("quadratic design is rank deficient: too few distinct points")
    design = np.column_stack([np.ones(n), omega, omega**2])
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (n,) or np.any(weights < 0):
            raise ValueError("weights must be a nonnegative vector matching the points")
        root_w = np.sqrt(weights)
        dw = design * root_w[:, None]
        vw = values * root_w
    else:
        dw, vw = design, values
    gram = dw.T @ dw
    if np.linalg.cond(gram) >= 1e12:
        raise ValueError("quadratic design is rank deficient")
    coeffs = np.linalg.solve(gram, dw.T @ vw)
    resid = vw - dw @ coeffs
    sigma2 = (resid @ resid) / (n - 3)
    cov = sigma2 * np.linalg.inv(gram)
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    return tuple(float(c) for c in coeffs), tuple(float(s) for s in se)


def default_grid_spec(data: Dataset, model: SingleIndexModel, size: int = 101):
    """Grid bounds from the 2% and 98% quantiles of the in-sample index."""
    w = data.covariates @ model.theta
    lo, hi = np.quantile(w, [0.02, 0.98])
    return float(lo), float(hi), int(size)


def _replicate_rng(seed: int, b: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed % (2**63), b]))


def link_curve(
    data: Dataset,
    model: SingleIndexModel,
    grid_spec=None,
    replications: int = 500,
    conf_level: float = 0.95,
    seed: int = 0,
    opts: FitOptions | None = None,
) -> LinkCurve:
    """Link curve on a grid with a multiplier-bootstrap band.

    ``grid_spec`` is ``(min, max, size)``; when omitted the in-sample index
    quantile range with 101 points is used.  Replicate b draws its weights
    from a generator seeded deterministically by ``(seed, b)``, so results
    are reproducible and replicates could be evaluated in any order.
    Replicates that fail to converge are dropped from the band; more than
    20% of them failing raises :class:`BootstrapInstabilityError`.
    """
    opts = opts or FitOptions()
    b_total = int(replications)
    if b_total < 50:
        raise ValueError("need at least 50 bootstrap replications")
    if not 0.0 < conf_level < 1.0:
        raise ValueError("conf_level must lie in (0, 1)")
    if grid_spec is None:
        grid_spec = default_grid_spec(data, model)
    lo, hi, size = float(grid_spec[0]), float(grid_spec[1]), int(grid_spec[2])
    if size < 20:
        raise ValueError("need at least 20 grid points")
    if not lo < hi:
        raise ValueError("grid bounds must satisfy min < max")
    k = model.truncation
    if model.theta.shape[0] != data.n_covariates:
        raise ValueError("model dimension does not match the data")
    grid = np.linspace(lo, hi, size)
    basis_grid = eval_basis(grid, k)
    g_hat = basis_grid @ model.coeffs
    curves = np.full((b_total, size), np.nan)
    failures = 0
    n = data.n_obs
    for b in range(b_total):
        rng = _replicate_rng(seed, b)
        wts = rng.standard_exponential(n)
        coeffs_b, conv_c, _ = _newton_coefficients(data, model.theta, k, opts, wts)
        theta_b, conv_t, _ = _ascend_theta(data, coeffs_b, k, model.theta, opts, wts)
        if not (conv_c and conv_t):
            failures += 1
            continue
        theta_b, coeffs_b, _ = _sign_normalize(theta_b, coeffs_b)
        curves[b] = basis_grid @ coeffs_b
    if failures > 0.2 * b_total:
        raise BootstrapInstabilityError(
            f"{failures / b_total:.1%} of bootstrap replicates failed to converge"
        )
    alpha = 1.0 - conf_level
    lower = np.nanquantile(curves, alpha / 2.0, axis=0)
    upper = np.nanquantile(curves, 1.0 - alpha / 2.0, axis=0)
    # the band must bracket the point curve even if the replicate law is shifted
    lower = np.minimum(lower, g_hat)
    upper = np.maximum(upper, g_hat)
    coeffs, se = quad_fit(grid, g_hat)
    return LinkCurve(
        grid=grid,
        g_hat=g_hat,
        band_lower=lower,
        band_upper=upper,
        conf_level=float(conf_level),
        replications=b_total,
        quad_coeffs=coeffs,
        quad_std_errors=se,
    )


def write_curve_csv(curve: LinkCurve, path) -> None:
    """Write the curve as CSV with columns omega, g_hat, lower, upper."""
    from .reports import format_float

    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("omega,g_hat,lower,upper\r\n")
        for i in range(curve.grid.shape[0]):
            row = (curve.grid[i], curve.g_hat[i], curve.band_lower[i], curve.band_upper[i])
            fh.write(",".join(format_float(v) for v in row) + "\r\n")


def _svg_path(xs, ys, sx, sy) -> str:
    pts = [f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys)]
    return "M " + " L ".join(pts)


def write_curve_svg(curve: LinkCurve, path, width: int = 640, height: int = 480) -> None:
    """Write a self-contained SVG line plot of the curve and its band."""
    margin = 50.0
    x0, x1 = float(curve.grid[0]), float(curve.grid[-1])
    ys = np.concatenate([curve.band_lower, curve.band_upper, curve.g_hat])
    y0, y1 = float(ys.min()), float(ys.max())
    if y1 <= y0:
        y0, y1 = y0 - 1.0, y1 + 1.0
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def sx(x):
        return margin + (x - x0) / (x1 - x0) * (width - 2 * margin)

    def sy(y):
        return height - margin - (y - y0) / (y1 - y0) * (height - 2 * margin)

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{margin}" y="{margin}" width="{width - 2 * margin}" '
        f'height="{height - 2 * margin}" fill="none" stroke="black"/>',
    ]
    band = list(zip(curve.grid, curve.band_upper)) + list(zip(curve.grid[::-1], curve.band_lower[::-1]))
    band_pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in band)
    lines.append(f'<polygon points="{band_pts}" fill="#c6dbef" stroke="none" opacity="0.8"/>')
    lines.append(
        f'<path d="{_svg_path(curve.grid, curve.band_lower, sx, sy)}" fill="none" '
        'stroke="#4292c6" stroke-dasharray="5,4"/>'
    )
    lines.append(
        f'<path d="{_svg_path(curve.grid, curve.band_upper, sx, sy)}" fill="none" '
        'stroke="#4292c6" stroke-dasharray="5,4"/>'
    )
    lines.append(
        f'<path d="{_svg_path(curve.grid, curve.g_hat, sx, sy)}" fill="none" '
        'stroke="#08306b" stroke-width="2"/>'
    )
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        xv = x0 + frac * (x1 - x0)
        yv = y0 + frac * (y1 - y0)
        lines.append(
            f'<text x="{sx(xv):.2f}" y="{height - margin + 18:.2f}" font-size="11" '
            f'text-anchor="middle" font-family="sans-serif">{xv:.2f}</text>'
        )
        lines.append(
            f'<text x="{margin - 8:.2f}" y="{sy(yv) + 4:.2f}" font-size="11" '
            f'text-anchor="end" font-family="sans-serif">{yv:.2f}</text>'
        )
    lines.append(
        f'<text x="{width / 2:.2f}" y="{height - 12:.2f}" font-size="13" '
        'text-anchor="middle" font-family="sans-serif">index value</text>'
    )
    lines.append(
        f'<text x="16" y="{height / 2:.2f}" font-size="13" text-anchor="middle" '
        f'font-family="sans-serif" transform="rotate(-90 16 {height / 2:.2f})">estimated link</text>'
    )
    lines.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
