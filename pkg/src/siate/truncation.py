"""Choice of the series truncation level: default rule and cross-validation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .single_index import FitOptions, fit_single_index, predict_propensity

__all__ = ["CvResult", "SelectionFailureError", "default_k", "fold_partition", "select_k", "default_candidates"]


class SelectionFailureError(RuntimeError):
    """Every candidate truncation level failed to produce a converged fit."""


@dataclass(frozen=True)
class CvResult:
    """Chosen truncation level and the per-candidate prediction scores."""

    chosen_k: int
    candidate_scores: dict
    mode: str
    folds: int


def default_k(n_obs: int) -> int:
    """Default truncation level: the integer part of N**(1/5), floored at 1.

    Computed as the largest integer whose fifth power does not exceed N, so
    perfect fifth powers are handled exactly.
    """
    n = int(n_obs)
    if n < 2:
        raise ValueError("need at least two observations")
    k = max(int(round(n ** 0.2)), 1)
    while (k + 1) ** 5 <= n:
        k += 1
    while k > 1 and k**5 > n:
        k -= 1
    return k


def default_candidates(n_obs: int) -> list[int]:
    """Candidate truncation levels 2..max(default rule, 6)."""
    return list(range(2, max(default_k(n_obs), 6) + 1))


def fold_partition(n_obs: int, folds: int, seed: int = 0) -> list[np.ndarray]:
    """Deterministic partition of range(n_obs) into ``folds`` held-out blocks.

    ``folds == n_obs`` gives exact leave-one-out in natural order; otherwise
    indices are shuffled by a generator seeded from ``seed`` and split into
    nearly equal blocks.  Pure function of (n_obs, folds, seed).
    """
    n = int(n_obs)
    folds = int(folds)
    if not 2 <= folds <= n:
        raise ValueError(f"folds must lie in [2, {n}], got {folds}")
    if folds == n:
        return [np.array([i]) for i in range(n)]
    rng = np.random.default_rng(np.random.SeedSequence([seed % (2**63), n, folds]))
    order = rng.permutation(n)
    return [np.sort(block) for block in np.array_split(order, folds)]


def _holdout_score(data, train_idx, test_idx, k, mode, opts):
    from .effects import weighted_ate  # local import: effects depends on this module's sibling

    train = data.subset(train_idx)
    model = fit_single_index(train, k, opts)
    if not model.converged:
        return None
    pi_test = predict_propensity(model, data.covariates[test_idx], opts.prop_clip)
    if mode == "treatment_prediction":
        err = pi_test - data.treatments[test_idx]
    else:
        pi_train = predict_propensity(model, train.covariates, opts.prop_clip)
        beta = weighted_ate(train, pi_train).point
        pred = beta * (data.treatments[test_idx] - pi_test)
        err = data.outcomes[test_idx] - pred
    return float(np.sum(err**2))


def select_k(
    data: Dataset,
    candidates,
    mode: str = "treatment_prediction",
    folds: int | None = None,
    opts: FitOptions | None = None,
    seed: int = 0,
) -> CvResult:
    """Pick the truncation level by cross-validated squared prediction error.

    For every candidate level each held-out block is predicted from a fit on
    the remaining data; scores are raw sums of squared errors over held-out
    units.  In ``treatment_prediction`` mode the fitted propensity is scored
    against the treatment indicator; in ``outcome_prediction`` mode the
    held-in weighted-effect coefficient times the centred treatment is
    scored against the outcome.  Ties break toward the smallest level, and
    a candidate whose held-in fit fails to converge scores infinity.
    """
    cand = sorted({int(k) for k in candidates})
    if not cand:
        raise ValueError("candidates must be nonempty")
    if any(k < 1 for k in cand):
        raise ValueError("candidate truncation levels must be positive")
    if mode not in ("treatment_prediction", "outcome_prediction"):
        raise ValueError(f"unknown mode {mode!r}")
    opts = opts or FitOptions()
    n = data.n_obs
    if folds is None:
        folds = 10 if n > 500 else n
    folds = int(folds)
    blocks = fold_partition(n, folds, seed)
    all_idx = np.arange(n)
    scores: dict[int, float] = {}
    for k in cand:
        total = 0.0
        for test_idx in blocks:
            train_idx = np.setdiff1d(all_idx, test_idx, assume_unique=True)
            try:
                part = _holdout_score(data, train_idx, test_idx, k, mode, opts)
            except (ValueError, np.linalg.LinAlgError):
                part = None
            if part is None:
                total = np.inf
                break
            total += part
        scores[k] = total
    if all(np.isinf(s) for s in scores.values()):
        raise SelectionFailureError(
            f"no candidate in {cand} produced converged fits on all folds"
        )
    chosen = min(cand, key=lambda k: (scores[k], k))
    return CvResult(chosen_k=chosen, candidate_scores=scores, mode=mode, folds=folds)
