"""Block relaxation solver for the latent functional PARAFAC model.

The model treats every sample as ``x_i(t) = (A ⊙ Φ(t)) u_i`` with a random
score vector ``u_i ~ N(0, Λ)``, feature functions ``Φ`` sampled on a grid and
tabular factors ``A_0, ..., A_{D-1}`` (``A = A_{D-1} ⊙ ... ⊙ A_0``).  The fit
only needs the smoothed covariance field of the data.

Each sweep fixes the projection ``K(t) = L(t) M^{-1}`` and ``Λ`` computed from
the current parameters, then updates ``Φ`` and each ``A_d`` in closed form.
With a positive semidefinite field this is a majorize-minimize step, so the
objective ``-tr(Λ M)`` never increases.
"""
import hashlib
import json
import time
import warnings
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .covariance import CovarianceField, assemble, model_covariance
from .cpd_baseline import cpd_als, cpd_init_from_dataset
from .data_model import Dataset, LongitudinalSample
from .exceptions import (
    ConfigError,
    DataFormatError,
    DegenerateComponentError,
    NumericalError,
    RankDeficiencyError,
)
from .smoothing import MeanField
from .tensor_core import full_khatri_rao, krank, vec_axis

JITTER = 1e-10


@dataclass
class LfParafacModel:
    """Fitted parameters.  ``phi`` is ``(G, R)``; ``factors[d]`` is ``(p_d, R)``."""

    rank: int
    grid: np.ndarray
    weights: np.ndarray
    phi: np.ndarray
    factors: list
    lam: np.ndarray
    sigma2: float
    mean: MeanField
    domain: tuple
    shape: tuple
    config: dict = field(default_factory=dict)

    @property
    def G(self):
        return self.grid.size

    @property
    def P(self):
        return int(np.prod(self.shape))

    def khatri_rao(self):
        return full_khatri_rao(self.factors)

    def phi_at(self, times):
        """Linear interpolation of every ``φ_r`` at ``times``, shape ``(len(times), R)``."""
        times = np.atleast_1d(np.asarray(times, dtype=np.float64))
        return np.column_stack([np.interp(times, self.grid, self.phi[:, r]) for r in range(self.rank)])

    def covariance(self):
        """Implied covariance on the grid, ``(G, G, P, P)``."""
        return model_covariance(self.phi, self.factors, self.lam)

    def to_dict(self):
        cfg = dict(sorted(self.config.items()))
        digest = hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()
        return {
            "rank": self.rank,
            "shape": list(self.shape),
            "domain": [float(v) for v in self.domain],
            "grid": self.grid.tolist(),
            "weights": self.weights.tolist(),
            "phi": self.phi.tolist(),
            "factors": [a.tolist() for a in self.factors],
            "lambda": self.lam.tolist(),
            "sigma2": float(self.sigma2),
            "mean": self.mean.values.tolist(),
            "mean_bandwidth": _jsonable(self.mean.bandwidth),
            "config": cfg,
            "config_digest": digest,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            grid = np.asarray(d["grid"], dtype=np.float64)
            shape = tuple(int(p) for p in d["shape"])
            mean = MeanField(grid, np.asarray(d["mean"], dtype=np.float64), d.get("mean_bandwidth"))
            return cls(
                rank=int(d["rank"]),
                grid=grid,
                weights=np.asarray(d["weights"], dtype=np.float64),
                phi=np.asarray(d["phi"], dtype=np.float64).reshape(grid.size, -1),
                factors=[np.asarray(a, dtype=np.float64).reshape(p, -1) for a, p in zip(d["factors"], shape)],
                lam=np.asarray(d["lambda"], dtype=np.float64),
                sigma2=float(d["sigma2"]),
                mean=mean,
                domain=tuple(d["domain"]),
                shape=shape,
                config=dict(d.get("config", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"malformed model description: {exc}") from None

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")
        return path

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataFormatError(f"{path}: cannot read model ({exc})") from None
        return cls.from_dict(d)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    return v


@dataclass
class FitReport:
    trace: List[float] = field(default_factory=list)
    objective_init: float = float("nan")
    iterations: int = 0
    converged: bool = False
    wall_time: float = 0.0
    update_norms: List[Dict[str, float]] = field(default_factory=list)
    restart: int = 0

    def to_dict(self):
        return {
            "trace": [float(c) for c in self.trace],
            "objective_init": float(self.objective_init),
            "iterations": self.iterations,
            "converged": self.converged,
            "wall_time": self.wall_time,
            "update_norms": self.update_norms,
            "restart": self.restart,
        }


# ----------------------------------------------------------------------
# linear algebra helpers


def _sym_solve(gram, rhs, what="Gram matrix"):
    """``rhs @ gram^{-1}`` for symmetric positive definite ``gram``.

    One ridge jitter of ``1e-10 * trace / R`` is tried before giving up.
    """
    gram = 0.5 * (gram + gram.T)
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(gram), rhs.T).T
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        pass
    tr = np.trace(gram)
    if not np.isfinite(tr) or tr <= 0:
        raise RankDeficiencyError(f"{what} is zero or non-finite")
    ridge = gram + JITTER * tr / gram.shape[0] * np.eye(gram.shape[0])
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(ridge), rhs.T).T
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        diag = np.diag(gram)
        worst = int(np.argmin(diag))
        raise RankDeficiencyError(f"{what} is singular (weakest component {worst})") from None


def _gram_A(factors, skip=None):
    """``A_(-skip)ᵀ A_(-skip)`` by the Hadamard-Gram identity."""
    R = factors[0].shape[1]
    out = np.ones((R, R))
    for d, a in enumerate(factors):
        if d != skip:
            out = out * (a.T @ a)
    return out


def _gram_phi(phi, weights):
    return phi.T @ (weights[:, None] * phi)


def gram(phi, factors, weights):
    """``M = (A_(D)ᵀA_(D)) * G_Φ`` with ``G_Φ = Σ_g w_g Φ(s_g)ᵀΦ(s_g)``."""
    return _gram_A(factors) * _gram_phi(phi, weights)


def _k_all(phi, factors, weights):
    A = full_khatri_rao(factors)
    L = A[None, :, :] * phi[:, None, :]  # (G, P, R)
    return _sym_solve(gram(phi, factors, weights), L.reshape(-1, L.shape[2]), "K Gram").reshape(L.shape)


def _moments(cov, phi, factors):
    """``K`` on the grid, ``W[g] = Σ_h w_h Σ(s_g, t_h) K(t_h)`` and ``Λ``."""
    w = cov.weights
    K = _k_all(phi, factors, w)
    G, P, R = K.shape
    wK = (w[:, None, None] * K).reshape(G * P, R)
    Wf = cov.operator @ wK
    lam = wK.T @ Wf
    lam = _floor_psd(lam)
    return K, Wf.reshape(G, P, R), lam


def _floor_psd(lam):
    lam = 0.5 * (lam + lam.T)
    vals, vecs = np.linalg.eigh(lam)
    if np.all(vals >= 0):
        return lam
    lam = (vecs * np.clip(vals, 0, None)) @ vecs.T
    return 0.5 * (lam + lam.T)


# ----------------------------------------------------------------------
# model-level operations


def k_matrix(model, g=None):
    """``K(s_g) = (A ⊙ Φ(s_g)) M^{-1}``, ``(P, R)``; all nodes ``(G, P, R)`` when ``g`` is None."""
    K = _k_all(model.phi, model.factors, model.weights)
    return K if g is None else K[g]


def update_lambda(model, cov):
    """``Λ = ∫∫ K(s)ᵀ Σ(s, t) K(t)``, symmetrized with eigenvalues floored at 0."""
    return _moments(cov, model.phi, model.factors)[2]


def _b_matrix(W, A):
    return np.einsum("gjr,jr->gr", W, A)


def update_phi(model, cov, K=None, lam=None, W=None):
    """Closed-form functional-mode update, ``(G, R)``.

    ``K`` and ``lam`` default to values computed from ``model``; passing them
    keeps them fixed across a sweep.
    """
    if W is None:
        K = k_matrix(model) if K is None else K
        G, P, R = K.shape
        W = (cov.operator @ (cov.weights[:, None, None] * K).reshape(G * P, R)).reshape(G, P, R)
    lam = model.lam if lam is None else lam
    A = full_khatri_rao(model.factors)
    M2 = _gram_A(model.factors) * lam
    return _sym_solve(M2, _b_matrix(W, A), "(AᵀA)*Λ")


def _factor_rhs(W, phi, factors, weights, mode, shape):
    """``N[i, r] = Σ_g w_g φ_r(s_g) Σ_m W[g, (i, m), r] A_(-mode)[m, r]``."""
    Wt = vec_axis(W, 1, shape)  # (G, p_0, ..., p_{D-1}, R)
    for d in range(len(shape) - 1, -1, -1):
        if d != mode:
            a = factors[d]
            Wt = np.einsum(_contract_subscripts(Wt.ndim, d + 1), Wt, a)
    # remaining axes: (G, p_mode, R)
    return np.einsum("g,gr,gir->ir", weights, phi, Wt)


def _contract_subscripts(ndim, axis):
    letters = "abcdefghijklmnopq"
    src = letters[:ndim]
    r = src[-1]
    out = src[:axis] + src[axis + 1:]
    return f"{src},{src[axis]}{r}->{out}"


def update_factor(model, cov, mode, K=None, lam=None, W=None, form="main"):
    """Closed-form update of ``A_mode``, ``(p_mode, R)``.

    ``form="main"`` integrates ``Σ_[d](s, t)`` against ``A^Φ_(-d)(s) ⊙ K(t)``;
    ``form="swapped"`` uses ``A^Φ_(-d)(t) ⊙ K(s)`` instead.  On a symmetric
    field both forms agree at a stationary point.
    """
    shape = tuple(model.shape)
    if not 0 <= mode < len(shape):
        raise ConfigError(f"mode {mode} out of range for shape {shape}")
    w = cov.weights
    if K is None:
        K = k_matrix(model)
    lam = model.lam if lam is None else lam
    G, P, R = K.shape
    if form == "main":
        if W is None:
            W = (cov.operator @ (w[:, None, None] * K).reshape(G * P, R)).reshape(G, P, R)
        N = _factor_rhs(W, model.phi, model.factors, w, mode, shape)
    elif form == "swapped":
        # Σ_{(i,m),k}(s_g, t_h) A^Φ_(-d)(t_h)[m] K(s_g)[k]
        opT = cov.full.transpose(1, 2, 0, 3).reshape(G * P, G * P)
        Wswap = (opT @ (w[:, None, None] * K).reshape(G * P, R)).reshape(G, P, R)
        N = _factor_rhs(Wswap, model.phi, model.factors, w, mode, shape)
    else:
        raise ConfigError(f"unknown update form {form!r}")
    H = lam * _gram_phi(model.phi, w) * _gram_A(model.factors, skip=mode)
    return _sym_solve(H, N, f"mode-{mode} Gram")


def objective(model, cov, K=None, lam=None):
    """``C = ∫ Φ (AᵀA * Λ) Φᵀ - 2 ∫∫ Σ_[f](s, t)(A ⊙ K(s)) Φ(t)ᵀ`` by the trapezoid rule.

    ``lam`` defaults to ``model.lam``.  With ``K`` and ``lam`` consistent
    with the model, ``C = -tr(Λ M)``.
    """
    w = cov.weights
    K = k_matrix(model) if K is None else K
    lam = model.lam if lam is None else lam
    G, P, R = K.shape
    A = full_khatri_rao(model.factors)
    M2 = _gram_A(model.factors) * lam
    phi = model.phi
    quad = float(np.sum(w * np.einsum("gr,rq,gq->g", phi, M2, phi)))
    W = (cov.operator @ (w[:, None, None] * K).reshape(G * P, R)).reshape(G, P, R)
    lin = float(np.sum(w[:, None] * _b_matrix(W, A) * phi))
    return quad - 2.0 * lin


def phi_gradient(model, cov, K=None, lam=None):
    """Gâteaux derivative of :func:`objective` in ``Φ`` (``K`` and ``Λ`` held), ``(G, R)``.

    ``dC[V] = ∫ grad(s) · V(s) ds``.
    """
    w = cov.weights
    K = k_matrix(model) if K is None else K
    lam = model.lam if lam is None else lam
    G, P, R = K.shape
    A = full_khatri_rao(model.factors)
    W = (cov.operator @ (w[:, None, None] * K).reshape(G * P, R)).reshape(G, P, R)
    M2 = _gram_A(model.factors) * lam
    return 2.0 * model.phi @ M2 - 2.0 * _b_matrix(W, A)


def quad_norm(values, weights):
    """``sqrt(Σ_g w_g ||values[g]||²)``."""
    values = np.asarray(values)
    return float(np.sqrt(np.sum(weights * np.sum(values.reshape(values.shape[0], -1) ** 2, axis=1))))


def _normalize_state(phi, factors, lam, weights, sort=True):
    phi = np.array(phi, dtype=np.float64)
    factors = [np.array(a, dtype=np.float64) for a in factors]
    lam = np.array(lam, dtype=np.float64)
    R = phi.shape[1]
    scale = np.sqrt(weights @ (phi * phi))
    sign = np.ones(R)
    for r in range(R):
        if not scale[r] > 0 or not np.isfinite(scale[r]):
            raise DegenerateComponentError(f"feature function {r} vanished", component=r)
        nz = np.flatnonzero(np.abs(phi[:, r]) > 1e-14 * np.abs(phi[:, r]).max())
        if phi[nz[0], r] < 0:
            sign[r] = -sign[r]
    phi = phi / scale * sign
    scales = scale.copy()
    for d, a in enumerate(factors):
        n = np.linalg.norm(a, axis=0)
        s = np.ones(R)
        for r in range(R):
            if not n[r] > 0 or not np.isfinite(n[r]):
                raise DegenerateComponentError(f"column {r} of factor {d} vanished", component=r)
            nz = np.flatnonzero(np.abs(a[:, r]) > 1e-14 * np.abs(a[:, r]).max())
            if a[nz[0], r] < 0:
                s[r] = -1.0
        factors[d] = a / n * s
        scales = scales * n
        sign = sign * s
    S = scales * sign
    lam = S[:, None] * lam * S[None, :]
    if sort:
        phi, factors, lam = _sort_state(phi, factors, lam)
    return phi, factors, lam


def _sort_state(phi, factors, lam):
    order = np.argsort(-np.diag(lam), kind="stable")
    return phi[:, order], [a[:, order] for a in factors], lam[np.ix_(order, order)]


def normalize(model):
    """Unit-norm ``φ_r`` and ``a_dr``, sign rules, descending ``diag(Λ)``; scales go into ``Λ``.

    The implied covariance is unchanged.  Returns a new model.
    """
    phi, factors, lam = _normalize_state(model.phi, model.factors, model.lam, model.weights)
    return _replace(model, phi=phi, factors=factors, lam=lam)


def _replace(model, **kw):
    d = dict(model.__dict__)
    d.update(kw)
    return LfParafacModel(**d)


# ----------------------------------------------------------------------
# initialization and the solver loop


def eigen_init(cov, rank):
    """Start from the leading eigenfunctions of the weighted covariance operator.

    Each eigenfunction, a ``(G, P)`` array, is replaced by its best
    separable approximation ``φ(s) a`` and ``a`` by a rank-one CPD over the
    tabular modes.
    """
    G, P = cov.G, cov.P
    sw = np.sqrt(np.repeat(cov.weights, P))
    m = sw[:, None] * cov.operator * sw[None, :]
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    idx = np.argsort(-vals)[:rank]
    phi = np.zeros((G, rank))
    factors = [np.zeros((p, rank)) for p in cov.shape]
    for c, i in enumerate(idx):
        v = (vecs[:, i] / sw).reshape(G, P)
        u, s, vt = np.linalg.svd(v, full_matrices=False)
        phi[:, c] = u[:, 0] * s[0]
        a = vt[0].reshape(cov.shape, order="F")
        if len(cov.shape) == 1:
            factors[0][:, c] = a
        else:
            f = cpd_als(a, 1, max_iter=50, seed=0)
            for d, col in enumerate(f.factors.factors):
                factors[d][:, c] = col[:, 0]
            factors[0][:, c] *= f.weights[0]
    lam = np.diag(np.clip(vals[idx], 1e-12, None))
    return phi, factors, lam


def _kranks_warning(factors):
    D = len(factors) + 1  # order counts the functional mode
    total = sum(krank(a) for a in factors)
    if total < D - 1:
        warnings.warn(
            f"sum of factor k-ranks {total} is below {D - 1}; the decomposition may not be identifiable",
            RuntimeWarning,
            stacklevel=3,
        )


def solve(cov, rank, init, epsilon=1e-8, max_iter=200):
    """Run the block relaxation from ``init = (phi, factors, lam)``.

    Returns ``(phi, factors, lam, report)``.
    """
    if epsilon is None or epsilon < 0:
        raise ConfigError("epsilon must be non-negative")
    if max_iter < 1:
        raise ConfigError("max_iter must be at least 1")
    t0 = time.perf_counter()
    w = cov.weights
    phi, factors, lam = init
    phi, factors, lam = _normalize_state(phi, factors, lam, w)
    report = FitReport()
    K, W, lam = _moments(cov, phi, factors)
    C = -float(np.sum(lam * gram(phi, factors, w)))
    report.objective_init = C
    shape = cov.shape
    for _ in range(max_iter):
        A = full_khatri_rao(factors)
        M2 = _gram_A(factors) * lam
        new_phi = _sym_solve(M2, _b_matrix(W, A), "(AᵀA)*Λ")
        new_factors = list(factors)
        for d in range(len(shape)):
            N = _factor_rhs(W, new_phi, new_factors, w, d, shape)
            H = lam * _gram_phi(new_phi, w) * _gram_A(new_factors, skip=d)
            new_factors[d] = _sym_solve(H, N, f"mode-{d} Gram")
        new_phi, new_factors, _ = _normalize_state(new_phi, new_factors, lam, w, sort=False)
        K, W, lam = _moments(cov, new_phi, new_factors)
        order = np.argsort(-np.diag(lam), kind="stable")
        new_phi, new_factors = new_phi[:, order], [a[:, order] for a in new_factors]
        K, W, lam = K[:, :, order], W[:, :, order], lam[np.ix_(order, order)]
        norms = {"phi": float(np.linalg.norm(new_phi - phi[:, order]))}
        for d in range(len(shape)):
            norms[f"A{d}"] = float(np.linalg.norm(new_factors[d] - factors[d][:, order]))
        phi, factors = new_phi, new_factors
        C_new = -float(np.sum(lam * gram(phi, factors, w)))
        if not np.isfinite(C_new):
            raise NumericalError(f"objective became non-finite at iteration {len(report.trace) + 1}")
        report.trace.append(C_new)
        report.update_norms.append(norms)
        done = abs(C_new - C) < epsilon * (1.0 + abs(C_new))
        C = C_new
        if done:
            report.converged = True
            break
    report.iterations = len(report.trace)
    report.wall_time = time.perf_counter() - t0
    return phi, factors, lam, report


def fit_lf_parafac(cov, rank, dataset=None, init=None, epsilon=1e-8, max_iter=200, n_restarts=0,
                   seed=None, init_max_iter=500, config=None):
    """Fit the model to a covariance field.

    Parameters
    ----------
    cov : CovarianceField
    rank : int
    dataset : Dataset, optional
        Used for the CPD initialization.  Without it the leading
        eigenfunctions of ``cov`` start the iteration.
    init : tuple (phi, factors, lam), optional
        Explicit starting values; overrides ``dataset``.
    epsilon, max_iter
        Stop when ``|ΔC| < epsilon * (1 + |C|)`` or after ``max_iter`` sweeps.
    n_restarts : int
        Extra runs from seeded perturbations of the start; the lowest final
        objective wins.

    Returns
    -------
    model : LfParafacModel
    report : FitReport
    """
    rank = int(rank)
    if rank < 1:
        raise ConfigError("rank must be at least 1")
    if init is None:
        if dataset is not None:
            ci = cpd_init_from_dataset(dataset, cov.mean, rank, cov.grid, seed=seed, max_iter=init_max_iter)
            init = (ci.phi, ci.factors, ci.lam)
        else:
            init = eigen_init(cov, rank)
    phi0, factors0, lam0 = init
    best = None
    rng = np.random.default_rng(seed)
    for attempt in range(n_restarts + 1):
        if attempt == 0:
            start = (phi0, factors0, lam0)
        else:
            start = (
                phi0 + 0.1 * np.std(phi0) * rng.standard_normal(phi0.shape),
                [a + 0.1 * np.std(a) * rng.standard_normal(a.shape) for a in factors0],
                lam0,
            )
        try:
            phi, factors, lam, report = solve(cov, rank, start, epsilon, max_iter)
        except (RankDeficiencyError, DegenerateComponentError):
            if attempt == 0 and n_restarts == 0:
                raise
            continue
        report.restart = attempt
        if best is None or report.trace[-1] < best[3].trace[-1]:
            best = (phi, factors, lam, report)
    if best is None:
        raise RankDeficiencyError("every restart failed")
    phi, factors, lam, report = best
    _kranks_warning(factors)
    model = LfParafacModel(
        rank=rank,
        grid=cov.grid,
        weights=cov.weights,
        phi=phi,
        factors=factors,
        lam=lam,
        sigma2=cov.sigma2,
        mean=cov.mean,
        domain=(float(cov.grid[0]), float(cov.grid[-1])),
        shape=cov.shape,
        config=dict(config or {}),
    )
    return model, report


# ----------------------------------------------------------------------
# estimator


def check_dataset(X):
    """Accept a :class:`Dataset` or a non-empty sequence of samples."""
    if isinstance(X, Dataset):
        return X
    if isinstance(X, LongitudinalSample):
        return Dataset([X], X.shape)
    if isinstance(X, (list, tuple)) and X and all(isinstance(s, LongitudinalSample) for s in X):
        return Dataset(list(X), X[0].shape)
    raise DataFormatError(
        f"expected a Dataset or a sequence of LongitudinalSample, got {type(X).__name__}"
    )


class LFParafac(TransformerMixin, BaseEstimator):
    """Latent functional PARAFAC estimator.

    Parameters
    ----------
    rank : int
    grid_size : int
        Number of quadrature nodes ``G``.
    bandwidth_mean, bandwidth_cov : float, optional
        Smoother bandwidths; default 1.5 times the mean gap between
        distinct observation times.
    epsilon : float
        Relative objective tolerance.
    max_iter : int
    psd : bool
        Clip negative eigenvalues of the estimated covariance operator.
    n_restarts : int
    min_pairs : int
        Minimum raw products per covariance surface.
    random_state : int, optional

    Attributes
    ----------
    model_ : LfParafacModel
    report_ : FitReport
    covariance_ : CovarianceField
    """

    def __init__(self, rank=3, grid_size=51, bandwidth_mean=None, bandwidth_cov=None, epsilon=1e-8,
                 max_iter=200, psd=True, n_restarts=0, min_pairs=10, random_state=None):
        self.rank = rank
        self.grid_size = grid_size
        self.bandwidth_mean = bandwidth_mean
        self.bandwidth_cov = bandwidth_cov
        self.epsilon = epsilon
        self.max_iter = max_iter
        self.psd = psd
        self.n_restarts = n_restarts
        self.min_pairs = min_pairs
        self.random_state = random_state

    def fit(self, X, y=None, covariance=None):
        """Fit on a dataset; a precomputed ``covariance`` skips the smoothing step."""
        X = check_dataset(X)
        if covariance is None:
            covariance = assemble(
                X,
                grid_size=self.grid_size,
                bandwidth_mean=self.bandwidth_mean,
                bandwidth_cov=self.bandwidth_cov,
                min_pairs=self.min_pairs,
                psd=self.psd,
            )
        elif not isinstance(covariance, CovarianceField):
            raise DataFormatError("covariance must be a CovarianceField")
        self.covariance_ = covariance
        self.model_, self.report_ = fit_lf_parafac(
            covariance,
            self.rank,
            dataset=X,
            epsilon=self.epsilon,
            max_iter=self.max_iter,
            n_restarts=self.n_restarts,
            seed=self.random_state,
            config=self.get_params(),
        )
        return self

    def predict_scores(self, X):
        from .inference import predict_scores

        check_is_fitted(self, "model_")
        return [predict_scores(self.model_, s) for s in check_dataset(X)]

    def transform(self, X):
        """Posterior mean scores, ``(n, R)``."""
        return np.array([p.u_hat for p in self.predict_scores(X)]).reshape(-1, self.rank)

    def predict(self, X, times=None):
        """Reconstructed trajectories; one ``(len(times), *shape)`` array per sample.

        ``times`` defaults to each sample's own observation times.
        """
        from .inference import reconstruct

        preds = self.predict_scores(X)
        X = check_dataset(X)
        return [reconstruct(self.model_, p, s.times if times is None else times) for p, s in zip(preds, X)]

    def score(self, X, y=None):
        """Gaussian log-likelihood of ``X`` under the fitted model."""
        from .model_selection import log_likelihood

        check_is_fitted(self, "model_")
        return log_likelihood(self.model_, check_dataset(X))
