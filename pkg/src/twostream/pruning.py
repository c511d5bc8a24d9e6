"""Outlier pruning for noisily labeled feature collections.

Fits one multivariate Gaussian per class over feature vectors and keeps the
samples whose log-density clears a retention-percentile threshold, dropping
the low-density tail where mislabeled or off-topic samples concentrate.
Everything runs in log space; the raw density underflows once the feature
dimension gets large, and thresholding is order-preserving either way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

DEFAULT_SHRINKAGE = 0.1
DEFAULT_RETENTION = 0.8

# Ridge added to a covariance that fails to factorize, scaled by the mean
# eigenvalue so the nudge is dimensionless.
_RIDGE_FRACTION = 1e-9


@dataclass(frozen=True)
class GaussianModel:
    """Mean, shrunk covariance, and the cached Cholesky factor used to score.

    ``log_normalizer`` is the log-density at the mean; ``factor`` is lower
    triangular with a strictly positive diagonal.
    """

    mean: np.ndarray
    covariance: np.ndarray
    shrinkage: float
    factor: np.ndarray
    log_normalizer: float

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def from_moments(cls, mean, covariance, shrinkage: float = 0.0) -> "GaussianModel":
        """Build a model from an explicit mean and already-shrunk covariance."""
        mean = np.array(mean, dtype=np.float64).reshape(-1)
        cov = np.asarray(covariance, dtype=np.float64)
        k = mean.shape[0]
        if cov.shape != (k, k):
            raise ValueError(f"covariance shape {cov.shape} does not match dim {k}")
        cov = (cov + cov.T) / 2.0
        try:
            factor = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            ridge = _RIDGE_FRACTION * np.trace(cov) / k
            try:
                factor = np.linalg.cholesky(cov + ridge * np.eye(k))
            except np.linalg.LinAlgError:
                raise ValueError(
                    "covariance is not positive definite even after ridge; "
                    "data is degenerate (zero variance?)") from None
        log_norm = -0.5 * k * math.log(2.0 * math.pi) - np.log(np.diag(factor)).sum()
        for arr in (mean, cov, factor):
            arr.flags.writeable = False
        return cls(mean=mean, covariance=cov, shrinkage=float(shrinkage),
                   factor=factor, log_normalizer=float(log_norm))


@dataclass(frozen=True)
class PruneResult:
    """Index partition produced by one prune call.

    ``kept`` and ``removed`` are ascending and disjoint and together cover
    range(n). ``threshold`` is the smallest kept log-density; when several
    samples tie there exactly, the lower-index ones are the kept ones.
    """

    kept: tuple[int, ...]
    removed: tuple[int, ...]
    threshold: float
    log_densities: np.ndarray

    def __post_init__(self):
        ld = np.asarray(self.log_densities, dtype=np.float64)
        ld.flags.writeable = False
        object.__setattr__(self, "log_densities", ld)
        n = len(ld)
        if sorted(self.kept + self.removed) != list(range(n)):
            raise ValueError("kept and removed must partition the sample indices")


def _as_feature_matrix(features) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"features must be a 2-D (n, k) array, got shape {X.shape}")
    n, k = X.shape
    if n < 2:
        raise ValueError(f"need at least 2 samples to fit, got {n}")
    if k < 1:
        raise ValueError("feature dimension must be >= 1")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    return X


def fit_gaussian(features, shrinkage: float = DEFAULT_SHRINKAGE) -> GaussianModel:
    """Fit mean and covariance, shrinking the off-diagonal toward zero.

    The covariance is (1 - shrinkage) * S + shrinkage * diag(S) with S the
    maximum-likelihood estimate. Full S is singular whenever samples are
    scarce relative to the feature dimension, so some shrinkage is usually
    required for the factorization to go through.
    """
    if not 0.0 <= shrinkage <= 1.0:
        raise ValueError(f"shrinkage must be in [0, 1], got {shrinkage}")
    X = _as_feature_matrix(features)
    n = X.shape[0]
    mean = X.mean(axis=0)
    centered = X - mean
    ml_cov = centered.T @ centered / n
    cov = (1.0 - shrinkage) * ml_cov + shrinkage * np.diag(np.diag(ml_cov))
    return GaussianModel.from_moments(mean, cov, shrinkage)


def log_density(model: GaussianModel, x) -> float:
    """Log of the model density at one point, via a triangular solve."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != model.dim:
        raise ValueError(f"point has dim {x.shape[0]}, model has dim {model.dim}")
    y = solve_triangular(model.factor, x - model.mean, lower=True)
    return model.log_normalizer - 0.5 * float(y @ y)


def log_densities(model: GaussianModel, features) -> np.ndarray:
    """Vectorized :func:`log_density` over the rows of an (n, k) array."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise ValueError(f"expected (n, {model.dim}) features, got shape {X.shape}")
    Y = solve_triangular(model.factor, (X - model.mean).T, lower=True)
    return model.log_normalizer - 0.5 * np.einsum("ij,ij->j", Y, Y)


def retained_count(n: int, retention: float) -> int:
    """ceil(retention * n) with a guard against float products like 4.0000...2."""
    if not 0.0 < retention <= 1.0:
        raise ValueError(f"retention must be in (0, 1], got {retention}")
    return min(n, max(1, math.ceil(n * retention - 1e-9)))


def prune(features, shrinkage: float = DEFAULT_SHRINKAGE,
          retention: float = DEFAULT_RETENTION) -> tuple[GaussianModel, PruneResult]:
    """Fit a Gaussian to the features and drop the low-density tail.

    Exactly ceil(retention * n) samples are kept: those with the highest
    log-density under the fitted model, lower index winning ties. The
    threshold reported is the smallest kept log-density.
    """
    X = _as_feature_matrix(features)
    model = fit_gaussian(X, shrinkage)
    ld = log_densities(model, X)
    m = retained_count(X.shape[0], retention)
    order = np.argsort(-ld, kind="stable")
    kept = tuple(sorted(int(i) for i in order[:m]))
    removed = tuple(sorted(int(i) for i in order[m:]))
    threshold = float(ld[order[m - 1]])
    return model, PruneResult(kept=kept, removed=removed, threshold=threshold,
                              log_densities=ld)
