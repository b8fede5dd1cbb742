"""Single-index propensity model fitted by sieve maximum likelihood.

The treatment probability is modeled as ``expit(g(x' theta))`` with ``g``
expanded in the orthonormal Hermite basis and ``theta`` constrained to the
unit sphere with a positive leading coordinate.  Fitting follows a
three-stage pass: a least-squares initializer for ``theta``, a damped-Newton
logistic fit of the basis coefficients at that index, and projected-gradient
ascent over the sphere at those coefficients.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space
from scipy.special import expit

from .data import Dataset
from .hermite import eval_basis, eval_basis_deriv

__all__ = [
    "FitOptions",
    "SingleIndexModel",
    "ThetaCovariance",
    "DegenerateDesignError",
    "SeparationWarning",
    "initial_theta",
    "log_likelihood",
    "likelihood_gradients",
    "fit_coefficients",
    "fit_theta",
    "fit_single_index",
    "predict_propensity",
    "estimate_theta_cov",
]

SIGN_EPS = 1e-8
SEPARATION_BOUND = 1e6


class DegenerateDesignError(ValueError):
    """Covariate cross-product matrix is numerically singular."""


class SeparationWarning(UserWarning):
    """The coefficient likelihood appears unbounded (separated data)."""


@dataclass
class FitOptions:
    """Knobs for the likelihood optimizers; defaults suit the stock pipeline."""

    max_newton_iters: int = 100
    max_theta_iters: int = 200
    grad_tol: float = 1e-8
    alternation_rounds: int = 0
    prop_clip: float = 1e-6
    ridge: float = 1e-10

    def __post_init__(self):
        if self.max_newton_iters < 1 or self.max_theta_iters < 1:
            raise ValueError("iteration limits must be positive")
        if self.grad_tol <= 0:
            raise ValueError("grad_tol must be positive")
        if self.alternation_rounds < 0:
            raise ValueError("alternation_rounds must be nonnegative")
        if not 0.0 < self.prop_clip < 0.5:
            raise ValueError("prop_clip must lie in (0, 0.5)")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")


@dataclass(frozen=True)
class SingleIndexModel:
    """Fitted index direction, Hermite coefficients, and fit diagnostics."""

    theta: np.ndarray
    coeffs: np.ndarray
    truncation: int
    loglik: float
    iterations: int
    converged: bool

    def link_values(self, index) -> np.ndarray:
        """Estimated link function evaluated at index value(s)."""
        return eval_basis(index, self.truncation) @ self.coeffs

    def link_slope(self, index) -> np.ndarray:
        """First derivative of the estimated link at index value(s)."""
        return eval_basis_deriv(index, self.truncation) @ self.coeffs


@dataclass(frozen=True)
class ThetaCovariance:
    """Sandwich covariance of the index estimate, reduced to the sphere tangent."""

    reduced_cov: np.ndarray
    basis_V: np.ndarray
    variant: str


def _check_theta(theta, d: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (d,):
        raise ValueError(f"theta must have length {d}, got shape {theta.shape}")
    return theta


def _sign_normalize(theta: np.ndarray, coeffs: np.ndarray | None = None):
    """Flip ``theta`` so its first non-negligible coordinate is positive.

    A flip sends the index w to -w, which the Hermite parity
    h_j(-w) = (-1)^j h_j(w) absorbs into the coefficients, leaving the
    fitted propensities unchanged.
    """
    lead = 0.0
    for t in theta:
        if abs(t) > SIGN_EPS:
            lead = t
            break
    if lead >= 0.0:
        return theta, coeffs, False
    theta = -theta
    if coeffs is not None:
        parity = np.where(np.arange(coeffs.shape[0]) % 2 == 0, 1.0, -1.0)
        coeffs = coeffs * parity
    return theta, coeffs, True


def initial_theta(data: Dataset) -> np.ndarray:
    """Least-squares initializer for the index direction, unit-normalized.

    Regresses the treatment indicator on the raw covariates (no intercept),
    then rescales the coefficient vector to the sphere and applies the
    leading-sign rule.
    """
    x = data.covariates
    gram = x.T @ x
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond >= 1e12:
        raise DegenerateDesignError(
            f"covariate cross-product is numerically singular (condition number {cond:.3e})"
        )
    raw = np.linalg.solve(gram, x.T @ data.treatments)
    norm = np.linalg.norm(raw)
    if norm == 0.0:
        raise DegenerateDesignError("least-squares initializer is the zero vector")
    theta, _, _ = _sign_normalize(raw / norm)
    return theta


def _bernoulli_loglik(d, g, weights=None) -> float:
    # d*g - log(1 + e^g), averaged; log1p via logaddexp for stability
    terms = d * g - np.logaddexp(0.0, g)
    if weights is None:
        return float(np.mean(terms))
    return float(np.sum(weights * terms) / terms.shape[0])


def log_likelihood(data: Dataset, theta, coeffs, k: int | None = None, weights=None) -> float:
    """Average Bernoulli log-likelihood of the model at (theta, coeffs)."""
    coeffs = np.asarray(coeffs, dtype=float)
    if k is None:
        k = coeffs.shape[0]
    if coeffs.shape != (k,):
        raise ValueError(f"coeffs must have length k={k}, got shape {coeffs.shape}")
    theta = _check_theta(theta, data.n_covariates)
    g = eval_basis(data.covariates @ theta, k) @ coeffs
    return _bernoulli_loglik(data.treatments, g, weights)


def likelihood_gradients(data: Dataset, theta, coeffs, k: int | None = None, weights=None):
    """Exact gradients of the log-likelihood in the coefficients and in theta.

    The theta gradient is for the unconstrained objective; sphere handling
    lives in :func:`fit_theta`.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if k is None:
        k = coeffs.shape[0]
    if coeffs.shape != (k,):
        raise ValueError(f"coeffs must have length k={k}, got shape {coeffs.shape}")
    theta = _check_theta(theta, data.n_covariates)
    n = data.n_obs
    w = data.covariates @ theta
    basis = eval_basis(w, k)
    slope = eval_basis_deriv(w, k) @ coeffs
    resid = data.treatments - expit(basis @ coeffs)
    if weights is not None:
        resid = resid * weights
    grad_coeffs = basis.T @ resid / n
    grad_theta = data.covariates.T @ (resid * slope) / n
    return grad_coeffs, grad_theta


def _newton_coefficients(data, theta, k, opts, weights=None):
    """Damped-Newton logistic fit of the basis coefficients at fixed theta."""
    n = data.n_obs
    d_vec = data.treatments
    basis = eval_basis(data.covariates @ theta, k)
    coeffs = np.zeros(k)
    ll = _bernoulli_loglik(d_vec, basis @ coeffs, weights)
    obs_w = np.ones(n) if weights is None else weights
    for it in range(1, opts.max_newton_iters + 1):
        prob = expit(basis @ coeffs)
        resid = (d_vec - prob) * obs_w
        grad = basis.T @ resid / n
        if np.max(np.abs(grad)) <= opts.grad_tol:
            return coeffs, True, it - 1
        curv = prob * (1.0 - prob) * obs_w
        hess = basis.T @ (curv[:, None] * basis) / n
        hess[np.diag_indices(k)] += opts.ridge * max(np.trace(hess) / k, np.finfo(float).tiny)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        t = 1.0
        new_ll = ll
        for _ in range(60):
            cand = coeffs + t * step
            new_ll = _bernoulli_loglik(d_vec, basis @ cand, weights)
            if new_ll >= ll:
                break
            t *= 0.5
        else:
            return coeffs, False, it
        assert new_ll >= ll - 1e-12  # damping keeps the likelihood nondecreasing
        coeffs, ll = cand, new_ll
        if np.linalg.norm(coeffs) > SEPARATION_BOUND:
            warnings.warn(
                "coefficient norm exceeded the trust bound; data look separated",
                SeparationWarning,
                stacklevel=3,
            )
            coeffs *= SEPARATION_BOUND / np.linalg.norm(coeffs)
            return coeffs, False, it
    prob = expit(basis @ coeffs)
    grad = basis.T @ ((d_vec - prob) * obs_w) / n
    return coeffs, bool(np.max(np.abs(grad)) <= opts.grad_tol), opts.max_newton_iters


def fit_coefficients(data: Dataset, theta, k: int, opts: FitOptions | None = None, weights=None) -> np.ndarray:
    """Maximize the likelihood over the Hermite coefficients at fixed theta.

    This is a logistic regression on the k basis features of the index
    values, solved by damped Newton with a ridge-stabilized Hessian.
    """
    opts = opts or FitOptions()
    theta = _check_theta(theta, data.n_covariates)
    coeffs, _, _ = _newton_coefficients(data, theta, int(k), opts, weights)
    return coeffs


def _theta_value(data, coeffs, k, theta, weights):
    g = eval_basis(data.covariates @ theta, k) @ coeffs
    return _bernoulli_loglik(data.treatments, g, weights)


def _theta_value_grad(data, coeffs, k, theta, weights):
    n = data.n_obs
    w = data.covariates @ theta
    basis = eval_basis(w, k)
    g = basis @ coeffs
    slope = eval_basis_deriv(w, k) @ coeffs
    resid = data.treatments - expit(g)
    if weights is not None:
        resid = resid * weights
    grad = data.covariates.T @ (resid * slope) / n
    return _bernoulli_loglik(data.treatments, g, weights), grad


def _ascend_theta(data, coeffs, k, theta_init, opts, weights=None):
    """Projected-gradient ascent over the unit sphere at fixed coefficients.

    Steps move along the tangent-projected gradient, retract by normalizing,
    and backtrack until an Armijo increase holds; step sizes are seeded with
    a Barzilai-Borwein estimate from the previous accepted move.
    """
    d = data.n_covariates
    if d == 1:
        return np.array([1.0]), True, 0
    theta = theta_init / np.linalg.norm(theta_init)
    ll, grad = _theta_value_grad(data, coeffs, k, theta, weights)
    pgrad = grad - theta * (theta @ grad)
    step = 1.0
    prev_theta = prev_pgrad = None
    for it in range(1, opts.max_theta_iters + 1):
        if np.max(np.abs(pgrad)) <= opts.grad_tol:
            return theta, True, it - 1
        if prev_theta is not None:
            s = theta - prev_theta
            y = prev_pgrad - pgrad
            sy = s @ y
            if sy > 1e-300:
                step = min(max((s @ s) / sy, 1e-6), 1e6)
            else:
                step = 1.0
        sq = pgrad @ pgrad
        t = step
        accepted = False
        for _ in range(60):
            cand = theta + t * pgrad
            cand /= np.linalg.norm(cand)
            cand_ll = _theta_value(data, coeffs, k, cand, weights)
            if cand_ll >= ll + 1e-4 * t * sq:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        prev_theta, prev_pgrad = theta, pgrad
        theta = cand
        ll, grad = _theta_value_grad(data, coeffs, k, theta, weights)
        pgrad = grad - theta * (theta @ grad)
    return theta, bool(np.max(np.abs(pgrad)) <= opts.grad_tol), opts.max_theta_iters


def fit_theta(data: Dataset, coeffs, k: int, theta_init, opts: FitOptions | None = None, weights=None) -> np.ndarray:
    """Maximize the likelihood over the unit sphere at fixed coefficients.

    Returns a unit vector at which the sphere-projected gradient is below
    tolerance (or the last iterate if the iteration cap is hit); the caller
    is responsible for the identification sign rule.
    """
    opts = opts or FitOptions()
    coeffs = np.asarray(coeffs, dtype=float)
    theta_init = _check_theta(theta_init, data.n_covariates)
    theta, _, _ = _ascend_theta(data, coeffs, int(k), theta_init, opts, weights)
    return theta


def fit_single_index(data: Dataset, k: int, opts: FitOptions | None = None, weights=None) -> SingleIndexModel:
    """Run the full fitting pass and return the identified model.

    One pass is: least-squares initializer, coefficient fit at the
    initializer, sphere ascent at those coefficients.  With
    ``opts.alternation_rounds > 0`` the coefficient/theta pair of stages is
    repeated that many extra times.  The returned theta satisfies the
    unit-norm and leading-sign constraints; a sign flip is compensated in
    the coefficients so fitted propensities are unchanged.
    """
    opts = opts or FitOptions()
    k = int(k)
    if k < 1:
        raise ValueError("truncation level k must be >= 1")
    theta = initial_theta(data)
    coeffs, conv_c, iters = _newton_coefficients(data, theta, k, opts, weights)
    theta, conv_t, it_t = _ascend_theta(data, coeffs, k, theta, opts, weights)
    iters += it_t
    converged = conv_c and conv_t
    for _ in range(opts.alternation_rounds):
        coeffs, conv_c, it_c = _newton_coefficients(data, theta, k, opts, weights)
        theta, conv_t, it_t = _ascend_theta(data, coeffs, k, theta, opts, weights)
        iters += it_c + it_t
        converged = conv_c and conv_t
    theta, coeffs, _ = _sign_normalize(theta, coeffs)
    ll = log_likelihood(data, theta, coeffs, k, weights)
    return SingleIndexModel(
        theta=theta,
        coeffs=coeffs,
        truncation=k,
        loglik=ll,
        iterations=iters,
        converged=converged,
    )


def predict_propensity(model: SingleIndexModel, covariates, clip: float = 1e-6) -> np.ndarray:
    """Fitted treatment probabilities at new covariate rows, clamped to [clip, 1-clip]."""
    if not 0.0 < clip < 0.5:
        raise ValueError("clip must lie in (0, 0.5)")
    x = np.asarray(covariates, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    d = model.theta.shape[0]
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"covariates must have {d} columns, got shape {x.shape}")
    prob = expit(model.link_values(x @ model.theta))
    return np.clip(prob, clip, 1.0 - clip)


def estimate_theta_cov(data: Dataset, model: SingleIndexModel, variant: str = "stated_lemma") -> ThetaCovariance:
    """Plug-in sandwich covariance of sqrt(N) V'(theta_hat - theta0).

    ``V`` spans the orthogonal complement of the fitted theta.  The outer
    matrix uses squared link slopes times covariate outer products; under
    ``variant="proof_weighted"`` each term also carries the Bernoulli
    variance weight pi*(1-pi).
    """
    if variant not in ("stated_lemma", "proof_weighted"):
        raise ValueError(f"unknown variant {variant!r}")
    n = data.n_obs
    d = data.n_covariates
    if d < 2:
        raise ValueError("theta covariance requires at least two covariates")
    x = data.covariates
    w = x @ model.theta
    slope = model.link_slope(w)
    prob = expit(model.link_values(w))
    mid = slope**2
    if variant == "proof_weighted":
        q_weight = mid * prob * (1.0 - prob)
    else:
        q_weight = mid
    w_weight = mid * (data.treatments - prob) ** 2
    q_mat = x.T @ (q_weight[:, None] * x) / n
    w_mat = x.T @ (w_weight[:, None] * x) / n
    v = null_space(model.theta[None, :])
    a = v.T @ q_mat @ v
    b = v.T @ w_mat @ v
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond >= 1e12:
        raise DegenerateDesignError(
            f"projected information matrix is rank deficient (condition number {cond:.3e})"
        )
    inner = np.linalg.solve(a, b)
    sandwich = np.linalg.solve(a, inner.T).T
    sandwich = 0.5 * (sandwich + sandwich.T)
    return ThetaCovariance(reduced_cov=sandwich, basis_V=v, variant=variant)
