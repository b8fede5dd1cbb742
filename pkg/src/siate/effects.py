"""Treatment-effect estimators built on fitted propensities.

Both target parameters are slopes of intercept-free least squares fits on
the propensity-centred treatment: the variance-weighted effect regresses
the raw outcome on (D - pi), and the plain average effect regresses the
inverse-variance-weighted versions of the same quantities.  Standard errors
come from the closed-form sample-moment plug-ins, so no resampling is
involved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .data import Dataset
from .single_index import FitOptions, SingleIndexModel, fit_single_index, predict_propensity
from .truncation import default_k, select_k

__all__ = [
    "AteEstimate",
    "DegeneratePropensityError",
    "EmptySampleError",
    "weighted_ate",
    "ate",
    "baseline_estimate",
    "estimate_effects",
    "BASELINE_METHODS",
]

BASELINE_METHODS = ("naive_diff", "ipw_logistic", "regression_adjust")


class DegeneratePropensityError(ValueError):
    """The propensity-centred treatment has zero sum of squares."""


class EmptySampleError(ValueError):
    """No observations remain after trimming."""


@dataclass(frozen=True)
class AteEstimate:
    """Point estimate with analytic normal-theory inference."""

    estimand: str
    point: float
    std_error: float
    z_stat: float
    p_value: float
    ci_level: float
    ci_lower: float
    ci_upper: float
    n_used: int
    trim_count: int

    def covers(self, value: float) -> bool:
        return self.ci_lower <= value <= self.ci_upper


def _make_estimate(estimand, point, sigma2, n_used, ci_level, trim_count) -> AteEstimate:
    if not 0.0 < ci_level < 1.0:
        raise ValueError("ci_level must lie in (0, 1)")
    se = float(np.sqrt(max(sigma2, 0.0) / n_used))
    if se > 0.0:
        z = point / se
    else:
        z = 0.0 if point == 0.0 else np.copysign(np.inf, point)
    p = float(2.0 * norm.sf(abs(z)))
    half = float(norm.ppf(0.5 + ci_level / 2.0)) * se
    return AteEstimate(
        estimand=estimand,
        point=float(point),
        std_error=se,
        z_stat=float(z),
        p_value=p,
        ci_level=float(ci_level),
        ci_lower=float(point - half),
        ci_upper=float(point + half),
        n_used=int(n_used),
        trim_count=int(trim_count),
    )


def _check_pi(pi_hat, n) -> np.ndarray:
    pi = np.asarray(pi_hat, dtype=float)
    if pi.shape != (n,):
        raise ValueError(f"pi_hat must have length {n}, got shape {pi.shape}")
    if not np.all((pi > 0.0) & (pi < 1.0)):
        raise ValueError("propensities must lie strictly inside (0, 1)")
    return pi


def weighted_ate(data: Dataset, pi_hat, ci_level: float = 0.95) -> AteEstimate:
    """Variance-weighted average effect: slope of Y on (D - pi).

    The variance plug-in is the mean squared score over the squared mean of
    pi*(1-pi); no propensity inverse appears, so nothing is trimmed.
    """
    n = data.n_obs
    pi = _check_pi(pi_hat, n)
    resid_d = data.treatments - pi
    denom = resid_d @ resid_d
    if denom <= 0.0:
        raise DegeneratePropensityError("sum of squared centred treatments is zero")
    point = (resid_d @ data.outcomes) / denom
    u = data.outcomes - point * resid_d
    score_ms = np.mean((resid_d * u) ** 2)
    var_mean = np.mean(pi * (1.0 - pi))
    sigma2 = score_ms / var_mean**2
    return _make_estimate("weighted_ate", point, sigma2, n, ci_level, 0)


def ate(data: Dataset, pi_hat, ci_level: float = 0.95, trim: float = 0.0) -> AteEstimate:
    """Average effect: slope of the inverse-variance-weighted regression.

    Units whose estimated treatment variance pi*(1-pi) falls below
    ``trim * (1 - trim)`` are dropped and counted; with ``trim = 0`` every
    unit is kept.
    """
    n = data.n_obs
    pi = _check_pi(pi_hat, n)
    if not 0.0 <= trim < 0.1:
        raise ValueError("trim must lie in [0, 0.1)")
    var_d = pi * (1.0 - pi)
    keep = var_d >= trim * (1.0 - trim)
    trim_count = int(n - keep.sum())
    if not np.any(keep):
        raise EmptySampleError("all units were trimmed")
    y = data.outcomes[keep]
    resid_d = data.treatments[keep] - pi[keep]
    inv_v = 1.0 / var_d[keep]
    denom = inv_v @ resid_d**2
    if denom <= 0.0:
        raise DegeneratePropensityError("weighted sum of squared centred treatments is zero")
    point = (inv_v * resid_d) @ y / denom
    score = inv_v * resid_d * (y - point * resid_d)
    n_used = int(keep.sum())
    sigma2 = np.mean(score**2)
    return _make_estimate("ate", point, sigma2, n_used, ci_level, trim_count)


def _fit_plain_logistic(design, d_vec, max_iter=100, tol=1e-10):
    beta = np.zeros(design.shape[1])
    for _ in range(max_iter):
        prob = expit(design @ beta)
        grad = design.T @ (d_vec - prob)
        if np.max(np.abs(grad)) <= tol * design.shape[0]:
            break
        curv = np.maximum(prob * (1.0 - prob), 1e-10)
        hess = design.T @ (curv[:, None] * design)
        try:
            beta = beta + np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            beta = beta + np.linalg.lstsq(hess, grad, rcond=None)[0]
    return beta


def baseline_estimate(data: Dataset, method: str, ci_level: float = 0.95) -> AteEstimate:
    """Reference estimators for comparison tables.

    ``naive_diff`` is the raw difference of arm means with the two-sample
    variance; ``ipw_logistic`` is the ratio-normalized inverse-probability
    estimate with propensities from a plain logistic fit (intercept plus raw
    covariates, clipped); ``regression_adjust`` is the treatment coefficient
    of OLS on (1, D, X) with heteroskedasticity-robust variance.
    """
    n = data.n_obs
    d_vec = data.treatments
    y = data.outcomes
    treated = d_vec == 1.0
    if treated.all() or not treated.any():
        raise ValueError("both treatment arms are required")
    if method == "naive_diff":
        y1, y0 = y[treated], y[~treated]
        point = y1.mean() - y0.mean()
        var1 = y1.var(ddof=1) if y1.size > 1 else 0.0
        var0 = y0.var(ddof=1) if y0.size > 1 else 0.0
        # sigma2 is scaled so that _make_estimate's 1/n recovers var1/n1 + var0/n0
        sigma2 = n * (var1 / y1.size + var0 / y0.size)
        return _make_estimate("ate", point, sigma2, n, ci_level, 0)
    if method == "ipw_logistic":
        design = np.column_stack([np.ones(n), data.covariates])
        beta = _fit_plain_logistic(design, d_vec)
        pi = np.clip(expit(design @ beta), 1e-6, 1.0 - 1e-6)
        w1 = d_vec / pi
        w0 = (1.0 - d_vec) / (1.0 - pi)
        mu1 = (w1 @ y) / w1.sum()
        mu0 = (w0 @ y) / w0.sum()
        point = mu1 - mu0
        infl = w1 * (y - mu1) - w0 * (y - mu0)
        sigma2 = np.mean(infl**2)
        return _make_estimate("ate", point, sigma2, n, ci_level, 0)
    if method == "regression_adjust":
        design = np.column_stack([np.ones(n), d_vec, data.covariates])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        resid = y - design @ coef
        bread = np.linalg.inv(design.T @ design)
        meat = design.T @ (resid[:, None] ** 2 * design)
        cov = bread @ meat @ bread
        point = coef[1]
        sigma2 = n * cov[1, 1]
        return _make_estimate("ate", point, sigma2, n, ci_level, 0)
    raise ValueError(f"unknown baseline method {method!r}")


def estimate_effects(
    data: Dataset,
    k_policy="default",
    opts: FitOptions | None = None,
    ci_level: float = 0.95,
    trim: float = 0.0,
    cv_mode: str = "treatment_prediction",
    cv_folds: int | None = None,
    seed: int = 0,
):
    """End-to-end pipeline: resolve k, fit the index model, estimate both effects.

    ``k_policy`` is a fixed integer, the string ``"default"`` for the
    N**(1/5) rule, or an iterable of candidate levels to cross-validate.
    Returns ``(model, weighted_estimate, plain_estimate)``.
    """
    opts = opts or FitOptions()
    if isinstance(k_policy, (int, np.integer)):
        k = int(k_policy)
    elif k_policy == "default":
        k = default_k(data.n_obs)
    else:
        result = select_k(data, k_policy, mode=cv_mode, folds=cv_folds, opts=opts, seed=seed)
        k = result.chosen_k
    model = fit_single_index(data, k, opts)
    pi = predict_propensity(model, data.covariates, opts.prop_clip)
    return model, weighted_ate(data, pi, ci_level), ate(data, pi, ci_level, trim)
