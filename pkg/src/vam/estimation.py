"""Least-squares fitting with rank handling and cluster-robust covariance.

The solver is a pivoted orthogonal (QR) factorization; columns whose pivot
diagonal falls below 1e-10 of the leading diagonal are treated as redundant,
dropped from the solve and recorded. Q is applied to the outcome without
being formed, so memory stays at two copies of the design.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .design import DesignMatrix, ModelSpec
from .errors import EstimationError

log = logging.getLogger("vam.estimation")

RANK_RTOL = 1e-10
_CHUNK_ROWS = 100_000


@dataclass
class FittedModel:
    spec: ModelSpec | None
    coefficients: np.ndarray  # aligned to design columns; rank-dropped -> 0
    residuals: np.ndarray
    fitted_values: np.ndarray
    r_squared: float
    adjusted_r_squared: float
    residual_sd: float
    rank: int
    retained: np.ndarray  # column indices kept by the solver, sorted
    column_names: list[str]
    dropped_columns: list[tuple[str, str]] = field(default_factory=list)
    reference_levels: dict = field(default_factory=dict)
    cluster_robust_cov: np.ndarray | None = None

    @property
    def n_obs(self) -> int:
        return self.residuals.size

    @property
    def residual_variance(self) -> float:
        return self.residual_sd**2

    def standard_errors(self) -> np.ndarray:
        if self.cluster_robust_cov is None:
            raise EstimationError("no cluster-robust covariance on this fit")
        return np.sqrt(np.clip(np.diag(self.cluster_robust_cov), 0.0, None))


def fit_least_squares(
    design: DesignMatrix,
    outcome,
    clusters=None,
    spec: ModelSpec | None = None,
) -> FittedModel:
    """Minimize squared error of outcome on the design columns.

    When ``clusters`` is given the fit also carries the cluster-robust
    coefficient covariance. Output is deterministic for identical inputs.
    """
    y = np.asarray(outcome, dtype=float)
    X = design.values
    n, k = X.shape
    if y.shape != (n,):
        raise EstimationError(f"outcome length {y.size} != design rows {n}")
    if n < k:
        raise EstimationError(f"{n} rows cannot support {k} design columns")

    qty, R, pivots = scipy.linalg.qr_multiply(
        X, y.reshape(1, -1), mode="right", pivoting=True
    )
    qty = qty.ravel()
    diag = np.abs(np.diag(R))
    tol = RANK_RTOL * diag[0] if diag.size else 0.0
    rank = int(np.count_nonzero(diag > tol))
    if rank == 0:
        raise EstimationError("design has no usable columns")

    beta = np.zeros(k)
    z = scipy.linalg.solve_triangular(R[:rank, :rank], qty[:rank], lower=False)
    beta[pivots[:rank]] = z
    retained = np.sort(pivots[:rank])

    dropped = list(design.dropped_columns)
    for idx in sorted(pivots[rank:]):
        dropped.append((design.column_names[idx], "rank deficient"))

    fitted = X @ beta
    residuals = y - fitted
    ssr = float(residuals @ residuals)
    centered = y - y.mean()
    sst = float(centered @ centered)
    if sst == 0.0:
        raise EstimationError("outcome has zero variance")
    r_squared = min(max(1.0 - ssr / sst, 0.0), 1.0)
    p = rank - 1  # retained non-intercept columns
    adj = adjusted_r_squared(r_squared, n, p)
    residual_sd = float(np.std(residuals, ddof=1))

    cov = None
    if clusters is not None:
        # Bread straight from the factorization: columns X[:, pivots[:rank]]
        # satisfy (X_p' X_p) = R11'R11, so no Gram matrix is re-formed.
        codes, n_clusters = _cluster_codes(clusters, n)
        if n_clusters < 2:
            raise EstimationError("cluster-robust covariance needs at least 2 clusters")
        if n <= rank:
            raise EstimationError(f"n={n} leaves no degrees of freedom for p={rank}")
        inv_r = scipy.linalg.solve_triangular(
            R[:rank, :rank], np.eye(rank), lower=False
        )
        bread = inv_r @ inv_r.T
        pivot_cols = pivots[:rank].astype(np.int64)
        scores = _cluster_scores(X, residuals, codes, cols=pivot_cols)
        factor = (n_clusters / (n_clusters - 1)) * ((n - 1) / (n - rank))
        cov_p = factor * bread @ (scores.T @ scores) @ bread
        cov_p = (cov_p + cov_p.T) / 2.0
        cov = np.zeros((k, k))
        cov[np.ix_(pivot_cols, pivot_cols)] = cov_p

    return FittedModel(
        spec=spec,
        coefficients=beta,
        residuals=residuals,
        fitted_values=fitted,
        r_squared=r_squared,
        adjusted_r_squared=adj,
        residual_sd=residual_sd,
        rank=rank,
        retained=retained,
        column_names=list(design.column_names),
        dropped_columns=dropped,
        reference_levels=dict(design.reference_levels),
        cluster_robust_cov=cov,
    )


def adjusted_r_squared(r_squared: float, n: int, p: int) -> float:
    """1 - (1 - R^2)(n - 1)/(n - p - 1) for p non-intercept columns."""
    if n <= p + 1:
        raise EstimationError(f"n={n} too small for p={p} adjusted R-squared")
    return 1.0 - (1.0 - r_squared) * (n - 1) / (n - p - 1)


def cluster_robust_covariance(
    X, residuals, clusters, retained: np.ndarray | None = None
) -> np.ndarray:
    """Sandwich covariance with cluster-summed scores and CR1 correction.

    (X'X)^-1 (sum_g s_g s_g') (X'X)^-1 scaled by [G/(G-1)]*[(n-1)/(n-p)],
    where s_g stacks X'r within cluster g and p counts retained columns.
    Rows/columns for rank-dropped coefficients are zero. Result is symmetric
    PSD up to rounding.
    """
    X = X.values if isinstance(X, DesignMatrix) else np.asarray(X, dtype=float)
    r = np.asarray(residuals, dtype=float)
    n, k = X.shape
    if r.shape != (n,):
        raise EstimationError("residuals misaligned with design rows")
    codes, n_clusters = _cluster_codes(clusters, n)
    if n_clusters < 2:
        raise EstimationError("cluster-robust covariance needs at least 2 clusters")
    if retained is None:
        retained = np.arange(k)
    retained = np.asarray(retained, dtype=np.int64)
    p = retained.size
    if n <= p:
        raise EstimationError(f"n={n} leaves no degrees of freedom for p={p}")

    scores = _cluster_scores(X, r, codes, cols=retained)
    meat = scores.T @ scores

    Xr = X if retained.size == k else X[:, retained]
    xtx = Xr.T @ Xr
    try:
        bread = scipy.linalg.inv(xtx)
    except scipy.linalg.LinAlgError as exc:
        raise EstimationError("X'X singular on retained columns") from exc
    factor = (n_clusters / (n_clusters - 1)) * ((n - 1) / (n - p))
    cov_r = factor * bread @ meat @ bread
    cov_r = (cov_r + cov_r.T) / 2.0

    cov = np.zeros((k, k))
    cov[np.ix_(retained, retained)] = cov_r
    return cov


def _cluster_codes(clusters, n: int) -> tuple[np.ndarray, int]:
    arr = np.asarray(clusters)
    if arr.shape != (n,):
        raise EstimationError("every design row needs a cluster id")
    if np.issubdtype(arr.dtype, np.integer) and arr.size and arr.min() >= 0:
        codes = arr.astype(np.int64)
    else:
        _, codes = np.unique(arr, return_inverse=True)
    return codes, int(np.unique(codes).size)


def _cluster_scores(X, r, codes, cols=None) -> np.ndarray:
    """Per-cluster sums of X'r rows, chunked to bound temporary memory.

    ``cols`` restricts to a column subset without copying the full matrix.
    """
    n = X.shape[0]
    p = X.shape[1] if cols is None else len(cols)
    scores = np.zeros((int(codes.max()) + 1, p))

    def block(a, b):
        sub = X[a:b] if cols is None else X[a:b][:, cols]
        return sub * r[a:b, None]

    if n and np.all(np.diff(codes) >= 0):
        starts = np.flatnonzero(np.r_[True, np.diff(codes) != 0])
        start_codes = codes[starts]
        i = 0
        while i < starts.size:
            j = i
            target = starts[i] + _CHUNK_ROWS
            while j < starts.size and starts[j] < target:
                j += 1
            a = int(starts[i])
            b = int(starts[j]) if j < starts.size else n
            scores[start_codes[i:j]] += np.add.reduceat(block(a, b), starts[i:j] - a, axis=0)
            i = j
    else:
        np.add.at(scores, codes, block(0, n))
    return scores
