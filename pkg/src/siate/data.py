"""Immutable container for an observational sample (outcome, treatment, covariates)."""

from __future__ import annotations

import numpy as np

__all__ = ["Dataset"]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


class Dataset:
    """A validated sample of N units: outcomes, binary treatments, N x d covariates.

    Instances are immutable (backing arrays are read-only) and safe to share
    across threads or processes.
    """

    __slots__ = ("outcomes", "treatments", "covariates")

    def __init__(self, outcomes, treatments, covariates):
        y = np.asarray(outcomes, dtype=float)
        d = np.asarray(treatments, dtype=float)
        x = np.asarray(covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim != 1 or d.ndim != 1 or x.ndim != 2:
            raise ValueError("outcomes and treatments must be vectors, covariates a matrix")
        n = y.shape[0]
        if d.shape[0] != n or x.shape[0] != n:
            raise ValueError(
                f"length mismatch: {n} outcomes, {d.shape[0]} treatments, {x.shape[0]} covariate rows"
            )
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(d)) and np.all(np.isfinite(x))):
            raise ValueError("dataset contains non-finite entries")
        if not np.all((d == 0.0) | (d == 1.0)):
            raise ValueError("treatments must take values in {0, 1}")
        if d.min() == d.max():
            raise ValueError("both treatment arms must be present")
        if n < x.shape[1] + 2:
            raise ValueError(f"need at least d + 2 = {x.shape[1] + 2} observations, got {n}")
        object.__setattr__(self, "outcomes", _frozen(y))
        object.__setattr__(self, "treatments", _frozen(d))
        object.__setattr__(self, "covariates", _frozen(x))

    def __setattr__(self, name, value):
        raise AttributeError("Dataset is immutable")

    def __reduce__(self):
        return (Dataset, (self.outcomes, self.treatments, self.covariates))

    def __repr__(self):
        return f"Dataset(n_obs={self.n_obs}, n_covariates={self.n_covariates})"

    @property
    def n_obs(self) -> int:
        return self.outcomes.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    def subset(self, indices) -> "Dataset":
        """New Dataset restricted to ``indices`` (re-validated)."""
        idx = np.asarray(indices)
        return Dataset(self.outcomes[idx], self.treatments[idx], self.covariates[idx])
