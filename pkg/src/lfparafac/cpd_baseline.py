"""Standard CANDECOMP/PARAFAC by alternating least squares.

Serves two purposes: the comparison baseline on gridded data, and the
initializer of the latent functional solver.
"""
from dataclasses import dataclass, field
from typing import List

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .covariance import trapezoid_rule
from .exceptions import ConfigError, NumericalError, SmoothingError
from .smoothing import default_bandwidth, local_linear_1d
from .tensor_core import (
    DenseTensor,
    FactorSet,
    cp_reconstruct,
    flatten_axes,
    full_khatri_rao,
    matricize,
    vec_axis,
)


@dataclass
class CpdFit:
    factors: FactorSet
    weights: np.ndarray
    trace: List[float] = field(default_factory=list)
    converged: bool = False

    @property
    def n_iter(self):
        return len(self.trace)

    def reconstruct(self):
        return cp_reconstruct(self.factors, self.weights).array


def _spd_solve(gram, rhs):
    """Solve ``gram @ x = rhs`` for symmetric ``gram``; ridge jitter once on failure."""
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(gram), rhs)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        pass
    jitter = 1e-10 * max(np.trace(gram), 1e-300) / gram.shape[0]
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(gram + jitter * np.eye(gram.shape[0])), rhs)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        # a rank-deficient but consistent system still has a least-squares answer
        return np.linalg.lstsq(gram, rhs, rcond=None)[0]


def _init_factors(x, rank, init, rng):
    factors = []
    for mode in range(x.ndim):
        p = x.shape[mode]
        if init == "svd":
            u, _, _ = np.linalg.svd(matricize(x, mode), full_matrices=False)
            a = u[:, :rank]
            if a.shape[1] < rank:
                a = np.column_stack([a, rng.standard_normal((p, rank - a.shape[1]))])
        elif init == "random":
            a = rng.standard_normal((p, rank))
        else:
            raise ConfigError(f"unknown init {init!r}")
        factors.append(a)
    return factors


def cpd_als(tensor, rank, max_iter=500, tol=1e-9, seed=None, init="svd"):
    """Rank-``rank`` CP decomposition of a dense tensor by ALS.

    Each sweep solves the mode-wise normal equations in turn; columns are
    rescaled to unit norm with the scale kept in ``weights``.  Stops when the
    relative decrease of ``||X - [[A_0; ...; A_{D-1}]]||_F^2`` drops below
    ``tol``.

    Parameters
    ----------
    tensor : DenseTensor or array_like
    rank : int
    max_iter : int
    tol : float
    seed : int or None
        Used for random initialization and for padding SVD starts when a
        mode is smaller than ``rank``.
    init : {'svd', 'random'} or sequence of arrays

    Returns
    -------
    CpdFit
    """
    x = tensor.array if isinstance(tensor, DenseTensor) else np.asarray(tensor, dtype=np.float64)
    if rank < 1:
        raise ConfigError("rank must be at least 1")
    if not np.all(np.isfinite(x)):
        raise NumericalError("cpd_als needs a fully observed, finite tensor")
    rng = np.random.default_rng(seed)
    if isinstance(init, str):
        factors = _init_factors(x, rank, init, rng)
    else:
        factors = [np.array(a, dtype=np.float64) for a in init]
    weights = np.ones(rank)
    norm_x2 = float(np.sum(x * x))
    unfoldings = [matricize(x, m) for m in range(x.ndim)]

    fit = CpdFit(FactorSet(tuple(factors)), weights)
    prev = np.inf
    for _ in range(max_iter):
        for mode in range(x.ndim):
            grams = [a.T @ a for m, a in enumerate(factors) if m != mode]
            v = np.prod(grams, axis=0) if grams else np.ones((rank, rank))
            mttkrp = unfoldings[mode] @ full_khatri_rao(factors, skip=mode)
            a = _spd_solve(v, mttkrp.T).T
            norms = np.linalg.norm(a, axis=0)
            norms[norms == 0] = 1.0
            factors[mode] = a / norms
            weights = norms
        resid = x - cp_reconstruct(factors, weights).array
        obj = float(np.sum(resid * resid))
        fit.trace.append(obj)
        if not np.isfinite(obj):
            raise NumericalError("ALS objective became non-finite")
        if (np.isfinite(prev) and prev - obj <= tol * prev) or obj <= 1e-28 * max(norm_x2, 1e-300):
            fit.converged = True
            break
        prev = obj
    fit.factors = FactorSet(tuple(factors))
    fit.weights = weights
    return fit


class CPD(BaseEstimator):
    """Scikit-learn style wrapper around :func:`cpd_als`.

    ``fit`` takes a dense array; missing cells (NaN) are imputed with the
    mean over the first (sample) mode when ``impute="mean"``.
    """

    def __init__(self, rank=1, max_iter=500, tol=1e-9, init="svd", impute="mean", random_state=None):
        self.rank = rank
        self.max_iter = max_iter
        self.tol = tol
        self.init = init
        self.impute = impute
        self.random_state = random_state

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if np.isnan(X).any():
            if self.impute != "mean":
                raise NumericalError("tensor has missing cells and imputation is disabled")
            X = mean_impute(X)
        self.fit_ = cpd_als(X, self.rank, self.max_iter, self.tol, self.random_state, self.init)
        self.factors_ = list(self.fit_.factors.factors)
        self.weights_ = self.fit_.weights
        return self

    def reconstruct(self):
        check_is_fitted(self, "fit_")
        return self.fit_.reconstruct()

    def transform(self, X=None):
        """Sample-mode scores (first factor times component weights)."""
        check_is_fitted(self, "fit_")
        return self.factors_[0] * self.weights_


def mean_impute(x):
    """Replace NaN cells by the mean of their fiber along axis 0."""
    x = np.array(x, dtype=np.float64)
    miss = np.isnan(x)
    if not miss.any():
        return x
    counts = (~miss).sum(0)
    if np.any(counts == 0):
        raise NumericalError("mean imputation impossible: some cell is missing in every sample")
    col_mean = np.where(miss, 0.0, x).sum(0) / counts
    return np.where(miss, np.broadcast_to(col_mean, x.shape), x)


@dataclass
class CpdInit:
    phi: np.ndarray
    factors: list
    lam: np.ndarray
    n_fallback: int
    fit: CpdFit


def smooth_samples_on_grid(dataset, mean, grid, bandwidth=None):
    """Per-sample local-linear curves on ``grid``, shape ``(n, G, P)``, centered.

    A sample-entry with fewer than two observations (or whose smoother stays
    degenerate) takes the population mean, i.e. zero after centering.
    Returns the array and the number of such fallbacks.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if mean.grid.shape == grid.shape and np.allclose(mean.grid, grid):
        mean_flat = mean.flat
    else:
        mean_flat = flatten_axes(mean(grid), 1, mean.shape)
    n, G, P = len(dataset), grid.size, dataset.n_entries
    out = np.zeros((n, G, P))
    fallbacks = 0
    for i, s in enumerate(dataset.samples):
        Y = s.flat_values()
        for j in range(P):
            obs = ~np.isnan(Y[:, j])
            if obs.sum() < 2:
                fallbacks += 1
                continue
            t = s.times[obs]
            try:
                h = default_bandwidth(t) if bandwidth is None else bandwidth
                out[i, :, j] = local_linear_1d(t, Y[obs, j], h, grid) - mean_flat[:, j]
            except SmoothingError:
                fallbacks += 1
    return out, fallbacks


def cpd_init_from_dataset(dataset, mean, rank, grid, seed=None, bandwidth=None, max_iter=500, tol=1e-9):
    """Starting values for the latent functional solver from a gridded CPD.

    Every sample is smoothed onto ``grid``, centered, and the resulting
    ``(n, G, p_1, ..., p_D)`` array is decomposed.  The grid-mode factor gives
    ``phi`` (unit quadrature norm), the tabular factors give the feature
    matrices, and ``lam`` is the covariance of the rescaled sample-mode rows.
    """
    grid = np.asarray(grid, dtype=np.float64)
    flat, n_fallback = smooth_samples_on_grid(dataset, mean, grid, bandwidth)
    n, G, _ = flat.shape
    arr = vec_axis(flat, 2, dataset.shape)
    fit = cpd_als(arr, rank, max_iter=max_iter, tol=tol, seed=seed)
    U, T, *feats = fit.factors.factors
    w = trapezoid_rule(grid).weights
    tnorm = np.sqrt(w @ (T * T))
    tnorm[tnorm == 0] = 1.0
    phi = T / tnorm
    scores = U * (fit.weights * tnorm)
    if n < 2:
        lam = np.eye(rank)
    else:
        lam = np.cov(scores, rowvar=False, bias=True).reshape(rank, rank)
    return CpdInit(phi, [np.array(a) for a in feats], lam, n_fallback, fit)
